//! Amplitude design by minimizing residual motion at a fixed two-spin rotation.
//!
//! The quadratic cost `w^T M w` is minimized on the quadric `w^T gamma w = +-pi/4`
//! through the pencil `M w = lambda gamma w`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::dynamics::{ModeCoupling, PulseSequence, SegmentTables};
use crate::error::{Error, Result};
use crate::fidelity::{avg_fidelity_exact, fidelity_report, FidelityReport, TargetSign};

mod robust;
pub use robust::{refine_robust, RefinedGate, RobustRefinement};

const DEFLATION: f64 = 1e-14;
const RESIDUAL_BOUND: f64 = 1e-8;
/// Samples of the global motional phase used for mean-rotation rescaling.
pub const PHASE_MEAN_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    pub m: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// rad/s
    pub rabi_cap: f64,
    /// `None` accepts either sign.
    pub target: Option<TargetSign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSolution {
    /// rad/s
    pub omegas: Vec<f64>,
    pub lambda: f64,
    pub theta: f64,
    pub target: TargetSign,
    /// `1 - F` in the quadratic approximation, `(4/5) w^T M w`.
    pub design_infidelity: f64,
    pub residual: f64,
    pub exceeds_cap: bool,
}

impl GateSolution {
    pub fn max_amplitude(&self) -> f64 {
        self.omegas.iter().fold(0.0_f64, |a, w| a.max(w.abs()))
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Overall sign fixed so the largest entry is positive.
fn canonical_sign(v: &mut DVector<f64>) {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

/// All normalized eigen-solutions of the pencil, sorted by `|lambda|`.
pub fn solve_pencil(problem: &DesignProblem) -> Result<Vec<GateSolution>> {
    let m = symmetrize(&problem.m);
    let gamma = symmetrize(&problem.gamma);
    let n = m.nrows();
    if n == 0 || gamma.nrows() != n || gamma.ncols() != n || m.ncols() != n {
        return Err(Error::InvalidInput("pencil matrices must be square and equal-sized".into()));
    }
    if m.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
        return Err(Error::IllConditionedPencil("non-finite matrix entries".into()));
    }
    let eig_m = SymmetricEigen::new(m.clone());
    let m_norm = eig_m.eigenvalues.amax();
    if m_norm <= 0.0 {
        return Err(Error::IllConditionedPencil("cost matrix vanishes".into()));
    }
    let floor = DEFLATION * m_norm;
    // whitening W = Q D^{-1/2} turns the pencil into a symmetric problem in W^T gamma W
    let mut whitening = eig_m.eigenvectors.clone();
    for (k, mut col) in whitening.column_iter_mut().enumerate() {
        col /= eig_m.eigenvalues[k].max(floor).sqrt();
    }
    let reduced = symmetrize(&(whitening.transpose() * &gamma * &whitening));
    let eig_c = SymmetricEigen::new(reduced);
    let kappa_max = eig_c.eigenvalues.amax();
    let gamma_norm = gamma.norm();
    if kappa_max == 0.0 || gamma_norm == 0.0 {
        return Err(Error::NoFeasibleSolution("rotation matrix vanishes".into()));
    }

    let mut solutions = Vec::new();
    let mut rejected_residual = 0;
    for (l, &kappa) in eig_c.eigenvalues.iter().enumerate() {
        if kappa.abs() <= DEFLATION * kappa_max {
            continue;
        }
        let mut v = &whitening * eig_c.eigenvectors.column(l);
        let quad = v.dot(&(&gamma * &v));
        if quad.abs() < DEFLATION * gamma_norm * v.norm_squared() {
            continue;
        }
        let sign = TargetSign::of(quad);
        if problem.target.is_some_and(|t| t != sign) {
            continue;
        }
        v *= (std::f64::consts::FRAC_PI_4 / quad.abs()).sqrt();
        canonical_sign(&mut v);
        let mv = &m * &v;
        let gv = &gamma * &v;
        let theta = v.dot(&gv);
        let cost = v.dot(&mv);
        let lambda = cost / theta;
        let residual = (&mv - &gv * lambda).norm();
        if residual > RESIDUAL_BOUND * m_norm * v.norm() {
            rejected_residual += 1;
            continue;
        }
        let omegas: Vec<f64> = v.iter().copied().collect();
        let max_amp = omegas.iter().fold(0.0_f64, |a, w| a.max(w.abs()));
        solutions.push(GateSolution {
            omegas,
            lambda,
            theta,
            target: sign,
            design_infidelity: 0.8 * cost,
            residual,
            exceeds_cap: max_amp > problem.rabi_cap,
        });
    }
    solutions.sort_by(|a, b| a.lambda.abs().total_cmp(&b.lambda.abs()));
    if solutions.is_empty() && rejected_residual > 0 {
        return Err(Error::IllConditionedPencil(format!(
            "{rejected_residual} eigenpairs failed the residual check"
        )));
    }
    if !solutions.iter().any(|s| !s.exceeds_cap) {
        return Err(Error::NoFeasibleSolution(format!(
            "{} candidates of the requested sign, none within the amplitude cap",
            solutions.len()
        )));
    }
    Ok(solutions)
}

/// Gate geometry and cost weights for one ion pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub couplings: Vec<ModeCoupling>,
    /// Thermal weights `2 n_k + 1`.
    pub weights: Vec<f64>,
}

impl GateModel {
    pub fn mode_frequencies(&self) -> Vec<f64> {
        self.couplings.iter().map(|m| m.omega).collect()
    }

    pub fn tables(&self, pulse: &PulseSequence) -> SegmentTables {
        SegmentTables::for_pulse(&self.couplings, pulse)
    }

    pub fn report(&self, pulse: &PulseSequence, target: TargetSign) -> FidelityReport {
        let coeffs = self.tables(pulse).coefficients(&pulse.omegas);
        fidelity_report(&coeffs, &self.mode_frequencies(), &self.weights, target)
    }

    pub fn infidelity(&self, pulse: &PulseSequence, target: TargetSign) -> f64 {
        let coeffs = self.tables(pulse).coefficients(&pulse.omegas);
        1.0 - avg_fidelity_exact(&coeffs, &self.weights, target)
    }

    /// Rotation angle with both motional phases set to `phase`.
    pub fn theta_at_phase(&self, pulse: &PulseSequence, phase: f64) -> f64 {
        self.tables(&pulse.with_motional_phases([phase; 2])).theta(&pulse.omegas)
    }

    /// Mean rotation angle over the global motional phase.
    pub fn mean_theta(&self, pulse: &PulseSequence) -> f64 {
        (0..PHASE_MEAN_SAMPLES)
            .map(|l| self.theta_at_phase(pulse, TWO_PI * l as f64 / PHASE_MEAN_SAMPLES as f64))
            .sum::<f64>()
            / PHASE_MEAN_SAMPLES as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n_seg: usize,
    /// s
    pub tau: f64,
    /// rad/s
    pub mu: f64,
    /// rad/s
    pub rabi_cap: f64,
    pub target: Option<TargetSign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignedGate {
    pub solution: GateSolution,
    pub pulse: PulseSequence,
    pub report: FidelityReport,
    pub candidates: usize,
}

impl DesignedGate {
    pub fn infidelity(&self) -> f64 {
        self.report.infidelity()
    }
}

pub fn design_problem(model: &GateModel, spec: &DesignSpec) -> Result<(DesignProblem, SegmentTables)> {
    if spec.n_seg == 0 || !(spec.tau > 0.0) || !(spec.rabi_cap > 0.0) {
        return Err(Error::InvalidInput(format!("invalid design spec {spec:?}")));
    }
    let tables = SegmentTables::new(&model.couplings, spec.mu, spec.tau, spec.n_seg, [0.0; 2], 0.0);
    let problem = DesignProblem {
        m: tables.residual_matrix(&model.weights),
        gamma: tables.gamma(),
        rabi_cap: spec.rabi_cap,
        target: spec.target,
    };
    Ok((problem, tables))
}

/// Lowest-cost solution within the amplitude cap, with exact fidelity attached.
pub fn design_gate(model: &GateModel, spec: &DesignSpec) -> Result<DesignedGate> {
    let (problem, tables) = design_problem(model, spec)?;
    let solutions = solve_pencil(&problem)?;
    let candidates = solutions.len();
    let best = solutions
        .into_iter()
        .find(|s| !s.exceeds_cap)
        .expect("solve_pencil guarantees a feasible candidate");
    let pulse = PulseSequence::new(spec.tau, spec.mu, best.omegas.clone());
    let coeffs = tables.coefficients(&pulse.omegas);
    let report = fidelity_report(&coeffs, &model.mode_frequencies(), &model.weights, best.target);
    Ok(DesignedGate {
        solution: best,
        pulse,
        report,
        candidates,
    })
}

/// Best quadratic-approximation infidelity at each detuning (`NaN` when infeasible).
pub fn detuning_landscape(
    model: &GateModel,
    n_seg: usize,
    tau: f64,
    mus: &[f64],
    rabi_cap: f64,
    target: Option<TargetSign>,
) -> Vec<f64> {
    mus.par_iter()
        .map(|&mu| {
            let spec = DesignSpec { n_seg, tau, mu, rabi_cap, target };
            design_problem(model, &spec)
                .and_then(|(p, _)| solve_pencil(&p))
                .ok()
                .and_then(|s| s.into_iter().find(|s| !s.exceeds_cap))
                .map_or(f64::NAN, |s| s.design_infidelity)
        })
        .collect()
}

/// Parameter shift applied to a fixed pulse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shift {
    /// rad/s
    pub detuning: f64,
    /// Relative amplitude change applied to every segment.
    pub intensity: f64,
    /// s, spread evenly over the segments
    pub duration: f64,
    /// rad, common to both ions
    pub motional_phase: f64,
}

impl Shift {
    pub fn apply(&self, pulse: &PulseSequence) -> PulseSequence {
        let mut p = pulse
            .with_mu(pulse.mu + self.detuning)
            .with_tau(pulse.tau + self.duration)
            .scaled(1.0 + self.intensity);
        p.phi_m = [pulse.phi_m[0] + self.motional_phase, pulse.phi_m[1] + self.motional_phase];
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    Detuning,
    Intensity,
    Duration,
}

impl ScanParameter {
    pub const ALL: [ScanParameter; 3] = [
        ScanParameter::Detuning,
        ScanParameter::Intensity,
        ScanParameter::Duration,
    ];

    /// Requirement-table key for the parameter.
    pub fn key(self) -> &'static str {
        match self {
            ScanParameter::Detuning => "delta_mu",
            ScanParameter::Intensity => "delta_omega_rel",
            ScanParameter::Duration => "delta_tau",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ScanParameter::Detuning => "rad/s",
            ScanParameter::Intensity => "1",
            ScanParameter::Duration => "s",
        }
    }

    fn shift(self, value: f64, phase: f64) -> Shift {
        let mut s = Shift {
            motional_phase: phase,
            ..Shift::default()
        };
        match self {
            ScanParameter::Detuning => s.detuning = value,
            ScanParameter::Intensity => s.intensity = value,
            ScanParameter::Duration => s.duration = value,
        }
        s
    }
}

/// Control-error box and sampling used for robustness scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBox {
    /// rad/s
    pub detuning: f64,
    pub intensity: f64,
    /// s
    pub duration: f64,
    /// Points per axis, including both ends.
    pub points: usize,
    /// Global motional phases to maximize over; `[0]` disables the phase axis.
    pub phases: Vec<f64>,
}

impl ScanBox {
    /// `|d mu| <= 2 pi x 1 kHz`, `|d Omega/Omega| <= 1%`, `|d tau| <= 0.4 us`.
    pub fn requirement_box(points: usize, phase_samples: usize) -> Self {
        ScanBox {
            detuning: TWO_PI * 1e3,
            intensity: 0.01,
            duration: 0.4e-6,
            points,
            phases: (0..phase_samples.max(1))
                .map(|l| TWO_PI * l as f64 / phase_samples.max(1) as f64)
                .collect(),
        }
    }

    pub fn half_width(&self, p: ScanParameter) -> f64 {
        match p {
            ScanParameter::Detuning => self.detuning,
            ScanParameter::Intensity => self.intensity,
            ScanParameter::Duration => self.duration,
        }
    }

    pub fn grid(&self, p: ScanParameter) -> Vec<f64> {
        let w = self.half_width(p);
        if self.points < 2 || w == 0.0 {
            return vec![0.0];
        }
        (0..self.points)
            .map(|i| -w + 2.0 * w * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub parameter: ScanParameter,
    pub values: Vec<f64>,
    /// `infidelity[value][phase]`
    pub infidelity: Vec<Vec<f64>>,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub phases: Vec<f64>,
    pub nominal: f64,
    pub axes: Vec<ScanAxis>,
    pub worst_case: f64,
}

/// One-parameter-at-a-time sensitivity scan of a fixed pulse.
pub fn scan(model: &GateModel, pulse: &PulseSequence, target: TargetSign, bx: &ScanBox) -> ScanResult {
    let phases = if bx.phases.is_empty() { vec![0.0] } else { bx.phases.clone() };
    let jobs: Vec<(usize, usize, usize, Shift)> = ScanParameter::ALL
        .iter()
        .enumerate()
        .flat_map(|(a, &p)| {
            let phases = &phases;
            bx.grid(p).into_iter().enumerate().flat_map(move |(v, value)| {
                phases
                    .iter()
                    .enumerate()
                    .map(move |(f, &phi)| (a, v, f, p.shift(value, phi)))
            })
        })
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|(_, _, _, s)| model.infidelity(&s.apply(pulse), target))
        .collect();

    let mut axes: Vec<ScanAxis> = ScanParameter::ALL
        .iter()
        .map(|&p| {
            let grid = bx.grid(p);
            ScanAxis {
                parameter: p,
                infidelity: vec![vec![0.0; phases.len()]; grid.len()],
                values: grid,
                worst: f64::NEG_INFINITY,
            }
        })
        .collect();
    for ((a, v, f, _), x) in jobs.iter().zip(values) {
        axes[*a].infidelity[*v][*f] = x;
        axes[*a].worst = axes[*a].worst.max(x);
    }
    let worst_case = axes.iter().map(|a| a.worst).fold(f64::NEG_INFINITY, f64::max);
    ScanResult {
        phases,
        nominal: model.infidelity(pulse, target),
        axes,
        worst_case,
    }
}

/// Worst-case box infidelity only.
pub fn box_worst_case(model: &GateModel, pulse: &PulseSequence, target: TargetSign, bx: &ScanBox) -> f64 {
    scan(model, pulse, target, bx).worst_case
}

/// Amplitude factor bringing the phase-averaged rotation to `target`.
pub fn mean_rescale_factor(model: &GateModel, pulse: &PulseSequence, target: TargetSign) -> Option<f64> {
    let mean = model.mean_theta(pulse);
    let ratio = target.angle() / mean;
    (ratio.is_finite() && ratio > 0.0).then(|| ratio.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingPointSearch {
    /// rad/s, offsets searched in `[-span, span]`
    pub span: f64,
    /// rad/s
    pub step: f64,
    pub scan_box: ScanBox,
}

impl Default for WorkingPointSearch {
    fn default() -> Self {
        WorkingPointSearch {
            span: TWO_PI * 2e3,
            step: TWO_PI * 50.0,
            scan_box: ScanBox::requirement_box(9, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingPoint {
    /// rad/s
    pub mu_prime: f64,
    /// rad/s, `mu_prime - mu`
    pub offset: f64,
    pub scale: f64,
    pub pulse: PulseSequence,
    pub worst_case: f64,
    /// `(offset, worst case)` for every searched detuning.
    pub landscape: Vec<(f64, f64)>,
}

/// Choose the detuning that minimizes the worst-case box infidelity, with
/// amplitudes rescaled so the phase-averaged rotation hits the target.
pub fn select_working_point(
    model: &GateModel,
    design: &PulseSequence,
    target: TargetSign,
    search: &WorkingPointSearch,
) -> Result<WorkingPoint> {
    if !(search.step > 0.0) || search.span < 0.0 {
        return Err(Error::InvalidInput("working point search needs step > 0 and span >= 0".into()));
    }
    let half = (search.span / search.step).round() as i64;
    let evaluated: Vec<Option<(f64, f64, f64)>> = (-half..=half)
        .into_par_iter()
        .map(|i| {
            let offset = i as f64 * search.step;
            let moved = design.with_mu(design.mu + offset);
            let scale = mean_rescale_factor(model, &moved, target)?;
            let pulse = moved.scaled(scale);
            Some((offset, scale, box_worst_case(model, &pulse, target, &search.scan_box)))
        })
        .collect();
    let landscape: Vec<(f64, f64)> = evaluated
        .iter()
        .flatten()
        .map(|&(o, _, w)| (o, w))
        .collect();
    let &(offset, scale, worst_case) = evaluated
        .iter()
        .flatten()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.abs().total_cmp(&b.0.abs())))
        .ok_or_else(|| Error::NoFeasibleSolution("no detuning gives a rotation of the target sign".into()))?;
    let pulse = design.with_mu(design.mu + offset).scaled(scale);
    Ok(WorkingPoint {
        mu_prime: pulse.mu,
        offset,
        scale,
        pulse,
        worst_case,
        landscape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPipeline {
    pub search: WorkingPointSearch,
    /// `None` keeps the rescaled pencil amplitudes at the working point.
    pub refinement: Option<RobustRefinement>,
}

impl Default for DesignPipeline {
    fn default() -> Self {
        DesignPipeline {
            search: WorkingPointSearch::default(),
            refinement: Some(RobustRefinement::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustDesign {
    pub design: DesignedGate,
    pub working_point: WorkingPoint,
    pub refined: Option<RefinedGate>,
    /// Pulse to run at `working_point.mu_prime`.
    pub pulse: PulseSequence,
    /// Worst case over `search.scan_box` for `pulse`.
    pub worst_case: f64,
    pub report: FidelityReport,
}

/// Pencil design, working-point selection, then optional amplitude refinement
/// at the chosen detuning.
pub fn design_robust_gate(model: &GateModel, spec: &DesignSpec, pipeline: &DesignPipeline) -> Result<RobustDesign> {
    let design = design_gate(model, spec)?;
    let target = design.solution.target;
    let working_point = select_working_point(model, &design.pulse, target, &pipeline.search)?;
    let refined = match &pipeline.refinement {
        None => None,
        Some(cfg) => Some(refine_robust(model, &working_point.pulse, target, spec.rabi_cap, cfg)?),
    };
    let pulse = refined.as_ref().map_or_else(|| working_point.pulse.clone(), |r| r.pulse.clone());
    let worst_case = box_worst_case(model, &pulse, target, &pipeline.search.scan_box);
    let report = model.report(&pulse, target);
    Ok(RobustDesign {
        design,
        working_point,
        refined,
        pulse,
        worst_case,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn toy_model() -> GateModel {
        GateModel {
            couplings: vec![
                ModeCoupling { omega: 10.0, coupling: [0.08, 0.08] },
                ModeCoupling { omega: 9.8, coupling: [0.06, -0.05] },
            ],
            weights: vec![2.0, 2.0],
        }
    }

    #[test]
    fn two_by_two_pencil() {
        let problem = DesignProblem {
            m: DMatrix::identity(2, 2),
            gamma: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
            rabi_cap: 10.0,
            target: Some(TargetSign::Positive),
        };
        let s = solve_pencil(&problem).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].lambda - 1.0).abs() < 1e-14);
        assert!((s[0].omegas[0] - FRAC_PI_4.sqrt()).abs() < 1e-14);
        assert!(s[0].omegas[1].abs() < 1e-14);
        assert!((s[0].design_infidelity / 0.8 - FRAC_PI_4).abs() < 1e-14);

        let both = solve_pencil(&DesignProblem { target: None, ..problem.clone() }).unwrap();
        assert_eq!(both.len(), 2);

        let capped = DesignProblem { rabi_cap: 0.1, ..problem };
        assert!(matches!(solve_pencil(&capped), Err(Error::NoFeasibleSolution(_))));
    }

    #[test]
    fn pencil_is_scale_invariant() {
        let model = toy_model();
        let spec = DesignSpec { n_seg: 6, tau: 8.0, mu: 9.5, rabi_cap: 100.0, target: None };
        let (p, _) = design_problem(&model, &spec).unwrap();
        let a = solve_pencil(&p).unwrap();
        let b = solve_pencil(&DesignProblem { m: &p.m * 37.0, ..p.clone() }).unwrap();
        for (x, y) in a[0].omegas.iter().zip(&b[0].omegas) {
            assert!((x - y).abs() < 1e-8 * a[0].max_amplitude());
        }
    }

    #[test]
    fn design_objective_matches_approx_fidelity() {
        let model = toy_model();
        let spec = DesignSpec { n_seg: 8, tau: 9.0, mu: 9.6, rabi_cap: 100.0, target: None };
        let g = design_gate(&model, &spec).unwrap();
        assert!((g.solution.theta.abs() - FRAC_PI_4).abs() < 1e-12);
        assert!((g.report.theta - g.solution.theta).abs() < 1e-12);
        assert!((1.0 - g.report.f_approx - g.solution.design_infidelity).abs() < 1e-12);
    }

    #[test]
    fn single_segment_matches_grid_search() {
        // one mode, one segment: the best detuning closes the phase-space loop
        let model = GateModel {
            couplings: vec![ModeCoupling { omega: 10.0, coupling: [0.1, 0.1] }],
            weights: vec![1.0],
        };
        let tau = 12.0;
        let mus: Vec<f64> = (0..4001).map(|i| 10.2 + 1.0 * i as f64 / 4000.0).collect();
        let land = detuning_landscape(&model, 1, tau, &mus, 1e3, None);
        let (best_i, _) = land
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        // loop closure: (mu - omega) tau = 2 pi, up to counter-rotating corrections
        let expected = 10.0 + TWO_PI / tau;
        assert!((mus[best_i] - expected).abs() < 0.02, "{} vs {expected}", mus[best_i]);
        assert!(land[best_i] < 1e-3);
    }

    #[test]
    fn zero_box_is_nominal() {
        let model = toy_model();
        let g = design_gate(&model, &DesignSpec { n_seg: 6, tau: 8.0, mu: 9.5, rabi_cap: 100.0, target: None }).unwrap();
        let bx = ScanBox { detuning: 0.0, intensity: 0.0, duration: 0.0, points: 5, phases: vec![0.0] };
        let s = scan(&model, &g.pulse, g.solution.target, &bx);
        assert_eq!(s.worst_case, s.nominal);
        assert!((s.nominal - g.infidelity()).abs() < 1e-15);
    }

    #[test]
    fn closed_loop_single_mode_needs_no_rescale() {
        let model = GateModel {
            couplings: vec![ModeCoupling { omega: 10.0, coupling: [0.1, 0.1] }],
            weights: vec![1.0],
        };
        let tau = 12.0;
        let g = design_gate(&model, &DesignSpec { n_seg: 4, tau, mu: 10.0 + TWO_PI / tau, rabi_cap: 1e3, target: None }).unwrap();
        let s = mean_rescale_factor(&model, &g.pulse, g.solution.target).unwrap();
        assert!((s - 1.0).abs() < 1e-2, "scale {s}");
    }

    #[test]
    fn nesting_never_hurts() {
        let model = toy_model();
        for (n, tau, mu) in [(3usize, 8.0, 9.4), (5, 10.0, 9.9), (4, 6.0, 10.3)] {
            let a = design_gate(&model, &DesignSpec { n_seg: n, tau, mu, rabi_cap: 1e3, target: None }).unwrap();
            let b = design_gate(&model, &DesignSpec { n_seg: 2 * n, tau, mu, rabi_cap: 1e3, target: None }).unwrap();
            assert!(b.solution.design_infidelity <= a.solution.design_infidelity + 1e-12);
        }
    }

    #[test]
    fn refinement_never_worsens_the_box() {
        let model = toy_model();
        let spec = DesignSpec { n_seg: 8, tau: 9.0, mu: 9.6, rabi_cap: 100.0, target: None };
        let g = design_gate(&model, &spec).unwrap();
        let cap = 1.2 * g.pulse.max_amplitude();
        let cfg = RobustRefinement {
            scan_box: ScanBox {
                detuning: 0.05,
                intensity: 0.01,
                duration: 0.1,
                points: 5,
                phases: vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2],
            },
            rounds: 4,
            iterations: 20,
        };
        let r = refine_robust(&model, &g.pulse, g.solution.target, cap, &cfg).unwrap();
        assert!(r.worst_case <= r.initial_worst);
        assert!(r.pulse.max_amplitude() < cap);
        assert_eq!(r.pulse.mu, g.pulse.mu);
        assert!((box_worst_case(&model, &r.pulse, g.solution.target, &cfg.scan_box) - r.worst_case).abs() < 1e-15);
    }

    fn random_problem(n: usize, entries: &[f64]) -> DesignProblem {
        let a = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DMatrix::from_fn(n, n, |i, j| entries[n * n + i.min(j) * n + i.max(j)]);
        DesignProblem { m, gamma: g, rabi_cap: 1e6, target: None }
    }

    proptest! {
        #[test]
        fn solutions_are_normalized(entries in proptest::collection::vec(-1.0f64..1.0, 32)) {
            let p = random_problem(4, &entries);
            if let Ok(sols) = solve_pencil(&p) {
                for s in sols {
                    prop_assert!((s.theta.abs() - FRAC_PI_4).abs() < 1e-12);
                    let w = DVector::from_vec(s.omegas.clone());
                    prop_assert!((w.dot(&(&p.m * &w)) - s.lambda * s.theta).abs() < 1e-9 * s.lambda.abs().max(1.0));
                }
            }
        }

        #[test]
        fn pencil_matches_brute_force(entries in proptest::collection::vec(-1.0f64..1.0, 18), target_pos in proptest::bool::ANY) {
            let target = if target_pos { TargetSign::Positive } else { TargetSign::Negative };
            for n in [2usize, 3] {
                let mut p = random_problem(n, &entries);
                p.target = Some(target);
                let Ok(sols) = solve_pencil(&p) else { continue };
                let best = sols[0].design_infidelity / 0.8;
                let brute = brute_force_minimum(&p, target);
                prop_assert!((best - brute).abs() <= 1e-6 * brute, "{} vs {}", best, brute);
            }
        }
    }

    /// Minimum of the cost on the constraint surface by zooming angular grids.
    fn brute_force_minimum(p: &DesignProblem, target: TargetSign) -> f64 {
        let n = p.m.nrows();
        let cost = |angles: &[f64]| -> f64 {
            let d = if n == 2 {
                DVector::from_vec(vec![angles[0].cos(), angles[0].sin()])
            } else {
                let (th, ph) = (angles[0], angles[1]);
                DVector::from_vec(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()])
            };
            let q = d.dot(&(&p.gamma * &d));
            if q * target.value() > 0.0 {
                d.dot(&(&p.m * &d)) * FRAC_PI_4 / q.abs()
            } else {
                f64::INFINITY
            }
        };
        let dims = n - 1;
        let pi = std::f64::consts::PI;
        let mut centre = vec![pi / 2.0; dims];
        let mut width = vec![pi; dims];
        if dims == 2 {
            width[1] = 2.0 * pi;
            centre[1] = pi;
        }
        let mut best = f64::INFINITY;
        let pts = if dims == 1 { 2001 } else { 201 };
        for _ in 0..12 {
            let mut arg = centre.clone();
            let mut local = centre.clone();
            let grid = |c: f64, w: f64, i: usize| c - w / 2.0 + w * i as f64 / (pts - 1) as f64;
            for i in 0..pts {
                arg[0] = grid(centre[0], width[0], i);
                if dims == 1 {
                    let v = cost(&arg);
                    if v < best { best = v; local = arg.clone(); }
                } else {
                    for j in 0..pts {
                        arg[1] = grid(centre[1], width[1], j);
                        let v = cost(&arg);
                        if v < best { best = v; local = arg.clone(); }
                    }
                }
            }
            centre = local;
            width.iter_mut().for_each(|w| *w *= 0.1);
        }
        best
    }
}
