//! Brute-force evolution of two driven ions and a few motional modes in a
//! truncated Fock space, without the Lamb-Dicke expansion.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::dynamics::{magnus_coefficients, ModeCoupling, PulseSequence};
use crate::error::{Error, Result};
use crate::fidelity::{final_density_matrix, hadamard_pair, ideal_xx};
use crate::fit::loglog_fit;

pub const MAX_MODES: usize = 2;
pub const MAX_CUTOFF: usize = 40;
/// Thermal weight that the enumerated initial Fock states must cover.
pub const THERMAL_COVERAGE: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Fock levels kept per mode.
    pub fock_cutoff: usize,
    /// s; `None` uses `2 pi / (200 max(mu, omega_k))`.
    pub dt: Option<f64>,
    /// Relative Rabi-frequency imbalance between the two Raman pairs.
    pub delta_omega_asym: f64,
    /// rad/s
    pub delta_mu_asym: f64,
    pub phi_m: [f64; 2],
    pub phi_s: [f64; 2],
    /// Drop the phonon-independent carrier drive `Omega cos(mu t + phi)`.
    pub compensate_carrier: bool,
    pub max_halvings: usize,
    /// Accepted change in fidelity between successive step halvings.
    pub step_tolerance: f64,
    /// Accepted population of the highest kept Fock level.
    pub population_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            fock_cutoff: 20,
            dt: None,
            delta_omega_asym: 0.0,
            delta_mu_asym: 0.0,
            phi_m: [0.0; 2],
            phi_s: [0.0; 2],
            compensate_carrier: false,
            max_halvings: 5,
            step_tolerance: 1e-8,
            population_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub fidelity: f64,
    /// Largest `1 - |psi|^2` over trajectories.
    pub norm_drift: f64,
    /// Largest population of the top Fock level over modes and trajectories.
    pub top_population: f64,
    /// Fidelity change at the last step halving.
    pub step_change: f64,
    /// s
    pub dt: f64,
    pub halvings: usize,
    pub terms: usize,
    pub covered_weight: f64,
}

/// Final state of one trajectory, spin-major: index `spin * n_phonon + phonon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state: DVector<C>,
    pub dims: Vec<usize>,
}

impl Trajectory {
    pub fn norm_drift(&self) -> f64 {
        (1.0 - self.state.norm_squared()).abs()
    }

    /// Reduced two-qubit density matrix.
    pub fn spin_density(&self) -> Matrix4<C> {
        let n = self.dims.iter().product::<usize>();
        let mut rho = Matrix4::zeros();
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = C::new(0.0, 0.0);
                for p in 0..n {
                    acc += self.state[a * n + p] * self.state[b * n + p].conj();
                }
                rho[(a, b)] = acc;
            }
        }
        rho
    }

    /// Population of the highest Fock level of each mode.
    pub fn top_populations(&self) -> Vec<f64> {
        let n: usize = self.dims.iter().product();
        self.dims
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let stride: usize = self.dims[k + 1..].iter().product();
                (0..4 * n)
                    .filter(|idx| (idx % n / stride) % d == d - 1)
                    .map(|idx| self.state[idx].norm_sqr())
                    .sum()
            })
            .collect()
    }
}

/// `cos(c X)` and `sin(c X)` of one ion and one mode in the truncated basis,
/// row-major.
struct ModeFactor {
    cos_cx: Vec<f64>,
    sin_cx: Vec<f64>,
    omega: f64,
}

fn position_eigenbasis(cutoff: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(cutoff, cutoff, |m, n| {
        if m + 1 == n {
            (n as f64).sqrt()
        } else if n + 1 == m {
            (m as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(x);
    (eig.eigenvectors, eig.eigenvalues)
}

fn mode_factor(vectors: &DMatrix<f64>, values: &DVector<f64>, coupling: f64, omega: f64) -> ModeFactor {
    let n = values.len();
    let build = |f: fn(f64) -> f64| {
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| f(coupling * values[i])));
        let m = vectors * d * vectors.transpose();
        (0..n * n).map(|i| m[(i / n, i % n)]).collect::<Vec<f64>>()
    };
    ModeFactor {
        cos_cx: build(f64::cos),
        sin_cx: build(f64::sin),
        omega,
    }
}

/// How the second ion's phonon factor relates to the first one's.
#[derive(Clone, Copy, PartialEq)]
enum IonRelation {
    Same,
    Mirrored,
    Independent,
}

/// Scratch buffers for one trajectory.
struct Workspace {
    /// `fwd[ion] = exp(-i sum_k c_k X_k(t)) psi_s`, `bwd[ion]` the adjoint.
    fwd: [Vec<C>; 2],
    bwd: [Vec<C>; 2],
    /// `phases[k][m] = e^{i w_k t m}`
    phases: Vec<Vec<C>>,
    cos_part: Vec<C>,
    sin_part: Vec<C>,
}

impl Workspace {
    fn new(system: &System) -> Self {
        let n = system.n_phonon;
        Workspace {
            fwd: [vec![C::new(0.0, 0.0); n], vec![C::new(0.0, 0.0); n]],
            bwd: [vec![C::new(0.0, 0.0); n], vec![C::new(0.0, 0.0); n]],
            phases: system.dims.iter().map(|&d| vec![C::new(0.0, 0.0); d]).collect(),
            cos_part: vec![C::new(0.0, 0.0); n],
            sin_part: vec![C::new(0.0, 0.0); n],
        }
    }
}

struct System {
    dims: Vec<usize>,
    n_phonon: usize,
    /// `factors[ion][mode]`
    factors: Vec<Vec<ModeFactor>>,
    relation: IonRelation,
    pulse: PulseSequence,
    cfg: OracleConfig,
}

fn pauli_x() -> Matrix2<C> {
    Matrix2::new(C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0))
}

fn pauli_y() -> Matrix2<C> {
    Matrix2::new(C::new(0.0, 0.0), C::new(0.0, -1.0), C::new(0.0, 1.0), C::new(0.0, 0.0))
}

/// Real matrix along one tensor axis: `out[.., m, ..] = sum_n a[m][n] x[.., n, ..]`.
fn apply_axis(a: &[f64], d: usize, stride: usize, x: &[C], out: &mut [C]) {
    if stride == 1 {
        for (xs, os) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for (row, o) in a.chunks_exact(d).zip(os.iter_mut()) {
                let (mut re, mut im) = (0.0, 0.0);
                for (&coef, v) in row.iter().zip(xs) {
                    re += coef * v.re;
                    im += coef * v.im;
                }
                *o = C::new(re, im);
            }
        }
        return;
    }
    let outer = x.len() / (d * stride);
    for o in 0..outer {
        for s in 0..stride {
            let base = o * d * stride + s;
            for m in 0..d {
                let row = &a[m * d..(m + 1) * d];
                let mut acc = C::new(0.0, 0.0);
                for (n, &coef) in row.iter().enumerate() {
                    acc += x[base + n * stride] * coef;
                }
                out[base + m * stride] = acc;
            }
        }
    }
}

/// Diagonal phase along one tensor axis, conjugated if asked.
fn scale_axis(phase: &[C], stride: usize, conj: bool, x: &mut [C]) {
    let d = phase.len();
    if stride == 1 {
        for chunk in x.chunks_exact_mut(d) {
            for (v, p) in chunk.iter_mut().zip(phase) {
                *v *= if conj { p.conj() } else { *p };
            }
        }
        return;
    }
    for (i, v) in x.iter_mut().enumerate() {
        let p = phase[(i / stride) % d];
        *v *= if conj { p.conj() } else { p };
    }
}

impl System {
    fn new(modes: &[ModeCoupling], pulse: &PulseSequence, cfg: &OracleConfig) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(Error::ScaleExceeded(format!(
                "oracle handles 1..={MAX_MODES} modes, got {}",
                modes.len()
            )));
        }
        if cfg.fock_cutoff < 2 || cfg.fock_cutoff > MAX_CUTOFF {
            return Err(Error::ScaleExceeded(format!(
                "Fock cutoff must lie in 2..={MAX_CUTOFF}, got {}",
                cfg.fock_cutoff
            )));
        }
        if cfg.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(Error::InvalidInput("oracle dt must be positive".into()));
        }
        pulse.validate()?;
        let (vectors, values) = position_eigenbasis(cfg.fock_cutoff);
        let factors: Vec<Vec<ModeFactor>> = (0..2)
            .map(|ion| {
                modes
                    .iter()
                    .map(|m| mode_factor(&vectors, &values, m.coupling[ion], m.omega))
                    .collect()
            })
            .collect();
        let relation = if modes.iter().all(|m| m.coupling[1] == m.coupling[0]) {
            IonRelation::Same
        } else if modes.iter().all(|m| m.coupling[1] == -m.coupling[0]) {
            IonRelation::Mirrored
        } else {
            IonRelation::Independent
        };
        let dims = vec![cfg.fock_cutoff; modes.len()];
        Ok(System {
            n_phonon: dims.iter().product(),
            dims,
            factors,
            relation,
            pulse: pulse.clone(),
            cfg: cfg.clone(),
        })
    }

    fn default_dt(&self) -> f64 {
        let fastest = self
            .factors[0]
            .iter()
            .map(|f| f.omega)
            .fold(self.pulse.mu.abs(), f64::max);
        TWO_PI / (200.0 * fastest)
    }

    /// `exp(-+i c X(t))` of one ion on one spin block, with
    /// `X(t) = a e^{-i w t} + h.c.`; `W(t) = D (cos cX -+ i sin cX) D^dag`,
    /// `D = diag(e^{i w t m})`.
    fn displace(&self, ion: usize, psi: &[C], ws: &mut Workspace) {
        let Workspace { fwd, bwd, phases, cos_part, sin_part } = ws;
        let (fwd, bwd) = (&mut fwd[ion], &mut bwd[ion]);
        for (k, f) in self.factors[ion].iter().enumerate() {
            let d = self.dims[k];
            let stride: usize = self.dims[k + 1..].iter().product();
            if k == 0 {
                fwd.copy_from_slice(psi);
                scale_axis(&phases[k], stride, true, fwd);
                apply_axis(&f.cos_cx, d, stride, fwd, cos_part);
                apply_axis(&f.sin_cx, d, stride, fwd, sin_part);
                for ((fw, bw), (c, s)) in fwd.iter_mut().zip(bwd.iter_mut()).zip(cos_part.iter().zip(sin_part.iter())) {
                    let is = C::new(-s.im, s.re);
                    *fw = c - is;
                    *bw = c + is;
                }
                scale_axis(&phases[k], stride, false, fwd);
                scale_axis(&phases[k], stride, false, bwd);
            } else {
                for (v, sign) in [(&mut *fwd, -1.0), (&mut *bwd, 1.0)] {
                    scale_axis(&phases[k], stride, true, v);
                    apply_axis(&f.cos_cx, d, stride, v, cos_part);
                    apply_axis(&f.sin_cx, d, stride, v, sin_part);
                    for (x, (c, s)) in v.iter_mut().zip(cos_part.iter().zip(sin_part.iter())) {
                        *x = c + C::new(-s.im, s.re) * sign;
                    }
                    scale_axis(&phases[k], stride, false, v);
                }
            }
        }
    }

    /// `H(t) psi` for the full state vector.
    fn apply_hamiltonian(&self, t: f64, psi: &DVector<C>, out: &mut DVector<C>, ws: &mut Workspace) {
        out.fill(C::new(0.0, 0.0));
        let amp = self.pulse.amplitude_at(t);
        if amp == 0.0 {
            return;
        }
        let n = self.n_phonon;
        let eps = self.cfg.delta_omega_asym;
        for (k, f) in self.factors[0].iter().enumerate() {
            for (m, p) in ws.phases[k].iter_mut().enumerate() {
                *p = C::from_polar(1.0, f.omega * t * m as f64);
            }
        }
        let mut axes = [(Matrix2::zeros(), Matrix2::zeros(), C::new(0.0, 0.0), 0.0); 2];
        for (ion, axis) in axes.iter_mut().enumerate() {
            let theta = self.pulse.mu * t + self.pulse.phi_m[ion] + self.cfg.phi_m[ion];
            let beta = self.cfg.delta_mu_asym * t + self.pulse.phi_s[ion] + self.cfg.phi_s[ion];
            let (sb, cb) = beta.sin_cos();
            let axis_a = pauli_x() * C::new(cb, 0.0) - pauli_y() * C::new(sb, 0.0);
            let axis_b = pauli_x() * C::new(sb, 0.0) + pauli_y() * C::new(cb, 0.0);
            *axis = (axis_a, axis_b, C::from_polar(1.0, theta), theta.cos());
        }
        for s in 0..4 {
            let block = &psi.as_slice()[s * n..(s + 1) * n];
            if block.iter().all(|z| *z == C::new(0.0, 0.0)) {
                continue;
            }
            self.displace(0, block, ws);
            match self.relation {
                IonRelation::Same => {
                    let [f0, f1] = &mut ws.fwd;
                    f1.copy_from_slice(f0);
                    let [b0, b1] = &mut ws.bwd;
                    b1.copy_from_slice(b0);
                }
                IonRelation::Mirrored => {
                    ws.fwd[1].copy_from_slice(&ws.bwd[0]);
                    ws.bwd[1].copy_from_slice(&ws.fwd[0]);
                }
                IonRelation::Independent => self.displace(1, block, ws),
            }
            for ion in 0..2 {
                let (axis_a, axis_b, e_theta, cos_theta) = axes[ion];
                let bit = if ion == 0 { (s >> 1) & 1 } else { s & 1 };
                for target_bit in 0..2 {
                    let ca = axis_a[(target_bit, bit)];
                    let cbx = axis_b[(target_bit, bit)];
                    if ca == C::new(0.0, 0.0) && cbx == C::new(0.0, 0.0) {
                        continue;
                    }
                    let s2 = if ion == 0 { (target_bit << 1) | (s & 1) } else { (s & 2) | target_bit };
                    let dst = &mut out.as_mut_slice()[s2 * n..(s2 + 1) * n];
                    let (fwd, bwd) = (&ws.fwd[ion], &ws.bwd[ion]);
                    for p in 0..n {
                        let pf = e_theta * fwd[p];
                        let pb = e_theta.conj() * bwd[p];
                        // cos[theta - cX] and sin[theta - cX]
                        let mut cos_term = (pf + pb) * 0.5;
                        let sin_term = (pf - pb) * C::new(0.0, -0.5);
                        if self.cfg.compensate_carrier {
                            cos_term -= block[p] * cos_theta;
                        }
                        dst[p] += (ca * cos_term - cbx * sin_term * eps) * amp;
                    }
                }
            }
        }
    }

    fn initial_state(&self, fock: &[usize]) -> DVector<C> {
        let mut psi = DVector::zeros(4 * self.n_phonon);
        let mut idx = 0;
        for (k, &n) in fock.iter().enumerate() {
            idx = idx * self.dims[k] + n;
        }
        psi[idx] = C::new(1.0, 0.0);
        psi
    }

    /// Fixed-step RK4 with `steps` steps per segment.
    fn evolve(&self, fock: &[usize], steps: usize) -> DVector<C> {
        let mut psi = self.initial_state(fock);
        let mut ws = Workspace::new(self);
        let h_seg = self.pulse.segment_duration();
        let dt = h_seg / steps as f64;
        let minus_i = C::new(0.0, -1.0);
        let len = psi.len();
        let (mut k1, mut k2, mut k3, mut k4) =
            (DVector::zeros(len), DVector::zeros(len), DVector::zeros(len), DVector::zeros(len));
        let mut tmp = DVector::zeros(len);
        for seg in 0..self.pulse.n_seg() {
            if self.pulse.omegas[seg] == 0.0 {
                continue;
            }
            for step in 0..steps {
                // sample strictly inside the segment so the amplitude lookup is unambiguous
                let t0 = seg as f64 * h_seg + step as f64 * dt;
                let inside = |t: f64| t.clamp(seg as f64 * h_seg + 1e-12 * h_seg, (seg + 1) as f64 * h_seg * (1.0 - 1e-15));
                self.apply_hamiltonian(inside(t0), &psi, &mut k1, &mut ws);
                k1 *= minus_i;
                tmp.copy_from(&psi);
                tmp.axpy(C::new(0.5 * dt, 0.0), &k1, C::new(1.0, 0.0));
                self.apply_hamiltonian(t0 + 0.5 * dt, &tmp, &mut k2, &mut ws);
                k2 *= minus_i;
                tmp.copy_from(&psi);
                tmp.axpy(C::new(0.5 * dt, 0.0), &k2, C::new(1.0, 0.0));
                self.apply_hamiltonian(t0 + 0.5 * dt, &tmp, &mut k3, &mut ws);
                k3 *= minus_i;
                tmp.copy_from(&psi);
                tmp.axpy(C::new(dt, 0.0), &k3, C::new(1.0, 0.0));
                self.apply_hamiltonian(inside(t0 + dt), &tmp, &mut k4, &mut ws);
                k4 *= minus_i;
                let w = C::new(dt / 6.0, 0.0);
                psi.axpy(w, &k1, C::new(1.0, 0.0));
                psi.axpy(w * 2.0, &k2, C::new(1.0, 0.0));
                psi.axpy(w * 2.0, &k3, C::new(1.0, 0.0));
                psi.axpy(w, &k4, C::new(1.0, 0.0));
            }
        }
        psi
    }

    fn steps_for(&self, dt: f64) -> usize {
        (self.pulse.segment_duration() / dt).ceil().max(1.0) as usize
    }
}

/// Ideal image of `|00>` under `exp(i angle sx sx)`.
fn ideal_image(target_angle: f64) -> Vector4<C> {
    ideal_xx(target_angle).column(0).into_owned()
}

fn state_fidelity(rho: &Matrix4<C>, target_angle: f64) -> f64 {
    let psi = ideal_image(target_angle);
    (psi.adjoint() * rho * psi)[(0, 0)].re
}

/// Evolve one initial Fock configuration `|00> (x) |fock>` at the
/// configured step.
pub fn evolve_exact(
    modes: &[ModeCoupling],
    pulse: &PulseSequence,
    cfg: &OracleConfig,
    fock: &[usize],
) -> Result<Trajectory> {
    let system = System::new(modes, pulse, cfg)?;
    if fock.len() != modes.len() || fock.iter().any(|&n| n >= cfg.fock_cutoff) {
        return Err(Error::InvalidInput(format!("initial Fock state {fock:?} outside the truncated space")));
    }
    let dt = cfg.dt.unwrap_or_else(|| system.default_dt());
    Ok(Trajectory {
        state: system.evolve(fock, system.steps_for(dt)),
        dims: system.dims.clone(),
    })
}

/// Thermal occupation of a single mode, `P(n) = nbar^n / (1 + nbar)^{n+1}`.
pub fn thermal_probability(n_bar: f64, n: usize) -> f64 {
    if n_bar == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * (n_bar / (1.0 + n_bar)).ln()).exp() / (1.0 + n_bar)
}

/// Most probable product Fock states covering `THERMAL_COVERAGE` of the
/// thermal weight, with their probabilities.
pub fn thermal_terms(n_bars: &[f64], cutoff: usize) -> Vec<(Vec<usize>, f64)> {
    let mut all: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for &nb in n_bars {
        all = all
            .into_iter()
            .flat_map(|(state, p)| {
                (0..cutoff).map(move |n| {
                    let mut s = state.clone();
                    s.push(n);
                    (s, p * thermal_probability(nb, n))
                })
            })
            .filter(|(_, p)| *p > 0.0)
            .collect();
    }
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut covered = 0.0;
    let mut out = Vec::new();
    for (s, p) in all {
        if covered >= THERMAL_COVERAGE {
            break;
        }
        covered += p;
        out.push((s, p));
    }
    out
}

/// Compensated (Neumaier) sum, independent of how terms were produced.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

struct ThermalRun {
    fidelity: f64,
    norm_drift: f64,
    top_population: f64,
}

fn run_thermal(system: &System, terms: &[(Vec<usize>, f64)], steps: usize, target_angle: f64) -> ThermalRun {
    let per_term: Vec<(f64, f64, f64)> = terms
        .par_iter()
        .map(|(fock, p)| {
            let traj = Trajectory {
                state: system.evolve(fock, steps),
                dims: system.dims.clone(),
            };
            let f = state_fidelity(&traj.spin_density(), target_angle);
            let top = traj.top_populations().into_iter().fold(0.0, f64::max);
            (p * f, traj.norm_drift(), top)
        })
        .collect();
    let weight = neumaier_sum(terms.iter().map(|t| t.1));
    ThermalRun {
        fidelity: neumaier_sum(per_term.iter().map(|t| t.0)) / weight,
        norm_drift: per_term.iter().map(|t| t.1).fold(0.0, f64::max),
        top_population: per_term.iter().map(|t| t.2).fold(0.0, f64::max),
    }
}

/// Thermal-average fidelity of `|00>` against `exp(i target_angle sx sx)|00>`,
/// halving the step until successive fidelities agree.
pub fn thermal_fidelity(
    modes: &[ModeCoupling],
    pulse: &PulseSequence,
    cfg: &OracleConfig,
    n_bars: &[f64],
    target_angle: f64,
) -> Result<OracleResult> {
    let system = System::new(modes, pulse, cfg)?;
    if n_bars.len() != modes.len() || n_bars.iter().any(|n| !(*n >= 0.0)) {
        return Err(Error::InvalidInput("one non-negative mean phonon number per mode".into()));
    }
    let terms = thermal_terms(n_bars, cfg.fock_cutoff);
    let covered_weight = neumaier_sum(terms.iter().map(|t| t.1));
    let mut steps = system.steps_for(cfg.dt.unwrap_or_else(|| system.default_dt()));
    let mut run = run_thermal(&system, &terms, steps, target_angle);
    let mut change = f64::INFINITY;
    let mut halvings = 0;
    while halvings < cfg.max_halvings {
        let finer = run_thermal(&system, &terms, 2 * steps, target_angle);
        change = (finer.fidelity - run.fidelity).abs();
        steps *= 2;
        halvings += 1;
        run = finer;
        if change < cfg.step_tolerance {
            break;
        }
    }
    if change >= cfg.step_tolerance {
        return Err(Error::StepNotConverged { halvings, change });
    }
    if run.top_population > cfg.population_tolerance {
        return Err(Error::CutoffInsufficient {
            cutoff: cfg.fock_cutoff,
            population: run.top_population,
        });
    }
    Ok(OracleResult {
        fidelity: run.fidelity,
        norm_drift: run.norm_drift,
        top_population: run.top_population,
        step_change: change,
        dt: pulse.segment_duration() / steps as f64,
        halvings,
        terms: terms.len(),
        covered_weight,
    })
}

/// Same figure of merit from the closed-form channel: `|00>` evolved by the
/// Magnus coefficients with thermal weights `2 nbar + 1`.
pub fn analytic_state_fidelity(
    modes: &[ModeCoupling],
    pulse: &PulseSequence,
    n_bars: &[f64],
    target_angle: f64,
) -> f64 {
    let coeffs = magnus_coefficients(pulse, modes);
    let weights: Vec<f64> = n_bars.iter().map(|n| 2.0 * n + 1.0).collect();
    let h = hadamard_pair();
    let mut rho0 = Matrix4::zeros();
    rho0[(0, 0)] = C::new(1.0, 0.0);
    let rho_x = final_density_matrix(&(h * rho0 * h), &coeffs, &weights, true);
    state_fidelity(&(h * rho_x.0 * h), target_angle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierRotation {
    /// rad, `U = cos(dphi) - i sin(dphi) n.sigma`
    pub delta_phi: f64,
    pub infidelity_estimate: f64,
}

/// Substeps per segment for the carrier propagator, per drive period.
const CARRIER_STEPS_PER_PERIOD: f64 = 128.0;

fn su2_exp(w: [f64; 3]) -> Matrix2<C> {
    // exp(-i w.sigma)
    let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let (s, c) = norm.sin_cos();
    let f = if norm > 0.0 { s / norm } else { 1.0 };
    Matrix2::new(
        C::new(c, -f * w[2]),
        C::new(-f * w[1], -f * w[0]),
        C::new(f * w[1], -f * w[0]),
        C::new(c, f * w[2]),
    )
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Net single-qubit rotation from `Omega(t) [sx cos(mu t) - eps sy sin(mu t)]`,
/// propagated with a fourth-order commutator-free Magnus step.
pub fn carrier_rotation(pulse: &PulseSequence, epsilon: f64) -> CarrierRotation {
    let h_seg = pulse.segment_duration();
    let periods = (pulse.mu.abs() * h_seg / TWO_PI).max(1.0);
    let sub = (periods * CARRIER_STEPS_PER_PERIOD).ceil() as usize;
    let dt = h_seg / sub as f64;
    let nodes = [0.5 - 3f64.sqrt() / 6.0, 0.5 + 3f64.sqrt() / 6.0];
    let field = |amp: f64, t: f64| [amp * (pulse.mu * t).cos(), -epsilon * amp * (pulse.mu * t).sin(), 0.0];
    let mut u = Matrix2::identity();
    for (seg, &amp) in pulse.omegas.iter().enumerate() {
        if amp == 0.0 {
            continue;
        }
        for step in 0..sub {
            let t0 = seg as f64 * h_seg + step as f64 * dt;
            let v1 = field(amp, t0 + nodes[0] * dt);
            let v2 = field(amp, t0 + nodes[1] * dt);
            // M = -i v.sigma; Omega4 = dt/2 (M1 + M2) + sqrt(3) dt^2 / 12 [M2, M1]
            let c = cross(v2, v1);
            let k = 3f64.sqrt() * dt * dt / 12.0 * 2.0;
            let w = [0, 1, 2].map(|i| 0.5 * dt * (v1[i] + v2[i]) + k * c[i]);
            u = su2_exp(w) * u;
        }
    }
    let a0 = ((u[(0, 0)] + u[(1, 1)]) * 0.5).norm();
    let ax = ((u[(0, 1)] + u[(1, 0)]) * 0.5).norm();
    let ay = ((u[(1, 0)] - u[(0, 1)]) * 0.5).norm();
    let az = ((u[(0, 0)] - u[(1, 1)]) * 0.5).norm();
    let delta_phi = (ax * ax + ay * ay + az * az).sqrt().atan2(a0);
    CarrierRotation {
        delta_phi,
        infidelity_estimate: delta_phi * delta_phi,
    }
}

/// Smallest relative imbalance whose carrier rotation reaches
/// `delta_phi^2 = infidelity`, searched on `[0, upper]`.
pub fn carrier_threshold(pulse: &PulseSequence, infidelity: f64, upper: f64) -> Option<f64> {
    let f = |eps: f64| carrier_rotation(pulse, eps).infidelity_estimate - infidelity;
    if f(0.0) >= 0.0 {
        return Some(0.0);
    }
    // first bracket on a geometric grid, then bisection
    let mut lo = 0.0;
    let mut hi = upper * 1e-4;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > upper {
            return None;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta_omega_asym: f64,
    /// rad/s
    pub delta_mu_asym: f64,
    pub fidelity: f64,
    pub top_population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetrySweep {
    pub reference: f64,
    pub points: Vec<SweepPoint>,
    /// Log-log slope of the symmetrized fidelity loss along each axis.
    pub omega_exponent: Option<f64>,
    pub mu_exponent: Option<f64>,
}

/// Oracle fidelity on the two asymmetry axes. Each magnitude is evaluated at
/// both signs and the losses averaged, which removes odd terms before the fit.
pub fn asymmetry_sweep(
    modes: &[ModeCoupling],
    pulse: &PulseSequence,
    cfg: &OracleConfig,
    n_bars: &[f64],
    target_angle: f64,
    omega_grid: &[f64],
    mu_grid: &[f64],
) -> Result<AsymmetrySweep> {
    let reference = thermal_fidelity(modes, pulse, cfg, n_bars, target_angle)?.fidelity;
    let mut jobs: Vec<(f64, f64)> = Vec::new();
    for &x in omega_grid {
        jobs.push((x, 0.0));
        jobs.push((-x, 0.0));
    }
    for &x in mu_grid {
        jobs.push((0.0, x));
        jobs.push((0.0, -x));
    }
    let points = jobs
        .iter()
        .map(|&(dw, dm)| {
            let c = OracleConfig {
                delta_omega_asym: dw,
                delta_mu_asym: dm,
                ..cfg.clone()
            };
            thermal_fidelity(modes, pulse, &c, n_bars, target_angle).map(|r| SweepPoint {
                delta_omega_asym: dw,
                delta_mu_asym: dm,
                fidelity: r.fidelity,
                top_population: r.top_population,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let losses = |offset: usize, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let a = &points[offset + 2 * i];
                let b = &points[offset + 2 * i + 1];
                reference - 0.5 * (a.fidelity + b.fidelity)
            })
            .collect()
    };
    let omega_exponent = loglog_fit(omega_grid, &losses(0, omega_grid.len())).map(|f| f.slope);
    let mu_exponent = loglog_fit(mu_grid, &losses(2 * omega_grid.len(), mu_grid.len())).map(|f| f.slope);
    Ok(AsymmetrySweep {
        reference,
        points,
        omega_exponent,
        mu_exponent,
    })
}
