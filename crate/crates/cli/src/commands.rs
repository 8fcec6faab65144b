//! Subcommand bodies. Each returns the paths of the artifacts it wrote.

use std::path::{Path, PathBuf};

use iongate::budget::{evaluate_budget, requirements_check, BudgetInputs, EntryKind, GateDrive, RequirementRow};
use iongate::constants::TWO_PI;
use iongate::crystal::{
    harmonic_with_spacing, solve_equilibrium, spacing_stats, transverse_modes, AxialPotential, Crystal, ModeData,
    SpacingStats, TrapSpec,
};
use iongate::dynamics::{pair_couplings, ModeCoupling, PulseSequence};
use iongate::fidelity::TargetSign;
use iongate::fit::LineFit;
use iongate::optimizer::{
    design_gate, design_robust_gate, detuning_landscape, scan, DesignSpec, GateModel, RobustDesign, ScanResult,
};
use iongate::oracle::{analytic_state_fidelity, asymmetry_sweep, thermal_fidelity, AsymmetrySweep, OracleConfig, OracleResult};
use iongate::sequence::{repeat_infidelity, RepeatPlan, Starts};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig, StartMode};
use crate::error::{CliError, CliResult};
use crate::report::{canonical_json, csv, write_atomic, Cell, Provenance};

/// Command-line overrides of config values.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    /// 1-based
    pub pair: Option<[usize; 2]>,
    pub n_seg: Option<usize>,
    /// s
    pub tau: Option<f64>,
    /// Hz
    pub mu_hz: Option<f64>,
    pub seed: Option<u64>,
}

pub struct Context {
    pub config: RunConfig,
    pub sha256: String,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

fn emit_json<T: Serialize>(dir: &Path, name: &str, prov: &Provenance, result: &T) -> CliResult<PathBuf> {
    write_atomic(dir, name, &canonical_json(&Artifact { provenance: prov, result }))
}

struct Chain {
    trap: TrapSpec,
    crystal: Crystal,
    modes: ModeData,
    n_bars: Vec<f64>,
    weights: Vec<f64>,
}

fn chain(cfg: &RunConfig) -> CliResult<Chain> {
    let trap = cfg.trap_spec();
    let crystal = solve_equilibrium(&trap, None)?;
    let modes = transverse_modes(&trap, &crystal, cfg.delta_k())?;
    let thermal = cfg.thermal_spec();
    let n_bars = thermal.mean_phonons(&modes.omegas)?;
    let weights = thermal.weights(&modes.omegas)?;
    Ok(Chain { trap, crystal, modes, n_bars, weights })
}

impl Chain {
    fn model(&self, pair: (usize, usize)) -> CliResult<GateModel> {
        Ok(GateModel {
            couplings: pair_couplings(&self.modes, pair)?,
            weights: self.weights.clone(),
        })
    }
}

// ---------------------------------------------------------------- crystal

#[derive(Serialize)]
struct ModeReport {
    omega_rad_s: Vec<f64>,
    frequency_hz: Vec<f64>,
    lamb_dicke: Vec<f64>,
    /// Row `j` holds ion `j`'s participation in every mode.
    vectors_row_major: Vec<f64>,
    com_relative_error: f64,
    spread_relative: f64,
}

#[derive(Serialize)]
struct HarmonicReference {
    omega_z_hz: f64,
    spacing: SpacingStats,
}

#[derive(Serialize)]
struct CrystalReport {
    n_ions: usize,
    positions_m: Vec<f64>,
    window: (usize, usize),
    spacing: Option<SpacingStats>,
    spacing_rsd: Option<f64>,
    residual: f64,
    iterations: usize,
    modes: ModeReport,
    harmonic_reference: Option<HarmonicReference>,
}

pub fn crystal(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let c = chain(&ctx.config)?;
    let n = c.modes.n_modes();
    let omega_x = c.trap.omega_x;
    let spread = c.modes.omegas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - c.modes.omegas.iter().cloned().fold(f64::INFINITY, f64::min);
    let harmonic_reference = match (c.trap.axial, c.crystal.spacing) {
        (AxialPotential::Quartic { .. }, Some(s)) => {
            let spec = harmonic_with_spacing(&c.trap, s.mean)?;
            let h = solve_equilibrium(&spec, None)?;
            let spacing = spacing_stats(&h, spec.central_window())?;
            let omega_z = match spec.axial {
                AxialPotential::Harmonic { omega_z } => omega_z,
                AxialPotential::Quartic { .. } => unreachable!("harmonic_with_spacing returns a harmonic trap"),
            };
            Some(HarmonicReference { omega_z_hz: omega_z / TWO_PI, spacing })
        }
        _ => None,
    };
    let report = CrystalReport {
        n_ions: c.crystal.n_ions(),
        positions_m: c.crystal.positions.clone(),
        window: c.crystal.window,
        spacing: c.crystal.spacing,
        spacing_rsd: c.crystal.spacing.map(|s| s.rsd),
        residual: c.crystal.residual,
        iterations: c.crystal.iterations,
        modes: ModeReport {
            frequency_hz: c.modes.omegas.iter().map(|w| w / TWO_PI).collect(),
            omega_rad_s: c.modes.omegas.clone(),
            lamb_dicke: c.modes.etas.clone(),
            vectors_row_major: (0..n * n).map(|i| c.modes.vectors[(i / n, i % n)]).collect(),
            com_relative_error: (c.modes.omegas[0] - omega_x).abs() / omega_x,
            spread_relative: spread / omega_x,
        },
        harmonic_reference,
    };
    let prov = Provenance::new(&ctx.sha256, "crystal");
    println!(
        "crystal: {} ions, spacing rsd {}",
        report.n_ions,
        report.spacing_rsd.map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    Ok(vec![emit_json(&ctx.out, "crystal.json", &prov, &report)?])
}

// ----------------------------------------------------------------- design

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum Selection {
    Fixed,
    Grid,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct DesignChoice {
    n_seg: usize,
    tau_s: f64,
    mu_hz: f64,
    selection: Selection,
    /// Quadratic design infidelity at the chosen grid point.
    grid_infidelity: Option<f64>,
}

/// Explicit values win over the grid; missing values are searched with the
/// shortest gate first, then the fewest segments, best detuning on the grid.
fn choose_design(ctx: &Context, model: &GateModel, ions: [usize; 2], omega_x: f64) -> CliResult<DesignChoice> {
    let cfg = &ctx.config;
    let d = &cfg.design;
    let pinned = cfg.pinned_for(ions);
    let n_seg = ctx.overrides.n_seg.or(pinned.and_then(|p| p.n_seg));
    let tau = ctx.overrides.tau.or(pinned.and_then(|p| p.tau_s));
    let mu_hz = ctx.overrides.mu_hz.or(pinned.and_then(|p| p.mu_hz));
    if let (Some(n_seg), Some(tau_s), Some(mu_hz)) = (n_seg, tau, mu_hz) {
        return Ok(DesignChoice { n_seg, tau_s, mu_hz, selection: Selection::Fixed, grid_infidelity: None });
    }
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for &t in tau.as_ref().map_or(&d.tau_s[..], std::slice::from_ref) {
        for &s in n_seg.as_ref().map_or(&d.n_seg[..], std::slice::from_ref) {
            candidates.push((t, s));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mus_hz: Vec<f64> = match mu_hz {
        Some(m) => vec![m],
        None => {
            let fx = omega_x / TWO_PI;
            let lo = d.mu_min_fraction * fx;
            let count = ((d.mu_max_fraction * fx - lo) / d.mu_step_hz + 1e-9).floor() as usize;
            (0..=count).map(|k| lo + k as f64 * d.mu_step_hz).collect()
        }
    };
    let mus: Vec<f64> = mus_hz.iter().map(|m| TWO_PI * m).collect();
    for (tau_s, n_seg) in candidates {
        let landscape = detuning_landscape(model, n_seg, tau_s, &mus, TWO_PI * d.rabi_cap_hz, d.target);
        let best = landscape
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1));
        if let Some((k, &v)) = best {
            if v <= d.max_design_infidelity {
                return Ok(DesignChoice {
                    n_seg,
                    tau_s,
                    mu_hz: mus_hz[k],
                    selection: Selection::Grid,
                    grid_infidelity: Some(v),
                });
            }
        }
    }
    Err(iongate::Error::NoFeasibleSolution(format!(
        "no grid point for ions {},{} reaches design infidelity {:e}",
        ions[0], ions[1], d.max_design_infidelity
    ))
    .into())
}

#[derive(Serialize)]
struct PulseReport {
    pulse: PulseSequence,
    amplitudes_hz: Vec<f64>,
    max_amplitude_hz: f64,
    infidelity: f64,
    theta: f64,
    worst_case: Option<f64>,
}

impl PulseReport {
    fn new(model: &GateModel, pulse: &PulseSequence, target: TargetSign, worst_case: Option<f64>) -> Self {
        let report = model.report(pulse, target);
        PulseReport {
            amplitudes_hz: pulse.omegas.iter().map(|w| w / TWO_PI).collect(),
            max_amplitude_hz: pulse.max_amplitude() / TWO_PI,
            infidelity: report.infidelity(),
            theta: report.theta,
            worst_case,
            pulse: pulse.clone(),
        }
    }
}

#[derive(Serialize)]
struct WorkingPointReport {
    offset_hz: f64,
    mu_prime_hz: f64,
    scale: f64,
    worst_case: f64,
    /// `(offset in Hz, worst case)`
    landscape: Vec<(f64, f64)>,
}

#[derive(Serialize)]
pub struct PairDesign {
    ions: [usize; 2],
    choice: DesignChoice,
    target: TargetSign,
    candidates: usize,
    quadratic_infidelity: f64,
    design: PulseReport,
    working_point: Option<WorkingPointReport>,
    final_pulse: PulseReport,
    rabi_cap_hz: f64,
    within_cap: bool,
}

struct Designed {
    report: PairDesign,
    model: GateModel,
    pulse: PulseSequence,
    target: TargetSign,
}

fn pair_from(ctx: &Context) -> CliResult<[usize; 2]> {
    ctx.overrides
        .pair
        .or_else(|| ctx.config.pairs.first().map(|p| p.pinned().ions))
        .ok_or_else(|| CliError::Config("--pair: no pair given and config.pairs is empty".into()))
}

fn design_pair(ctx: &Context, c: &Chain, ions: [usize; 2]) -> CliResult<Designed> {
    let pair = ctx.config.check_pair(ions)?;
    let model = c.model(pair)?;
    let choice = choose_design(ctx, &model, ions, c.trap.omega_x)?;
    let d = &ctx.config.design;
    let spec = DesignSpec {
        n_seg: choice.n_seg,
        tau: choice.tau_s,
        mu: TWO_PI * choice.mu_hz,
        rabi_cap: TWO_PI * d.rabi_cap_hz,
        target: d.target,
    };
    let pipeline = ctx.config.pipeline();
    let (gate, working, pulse, worst) = if d.robust || pipeline.search.span > 0.0 {
        let RobustDesign { design, working_point, pulse, worst_case, .. } = design_robust_gate(&model, &spec, &pipeline)?;
        (design, Some(working_point), pulse, Some(worst_case))
    } else {
        let g = design_gate(&model, &spec)?;
        let p = g.pulse.clone();
        (g, None, p, None)
    };
    let target = gate.solution.target;
    let report = PairDesign {
        ions,
        choice,
        target,
        candidates: gate.candidates,
        quadratic_infidelity: gate.solution.design_infidelity,
        design: PulseReport::new(&model, &gate.pulse, target, None),
        working_point: working.map(|w| WorkingPointReport {
            offset_hz: w.offset / TWO_PI,
            mu_prime_hz: w.mu_prime / TWO_PI,
            scale: w.scale,
            worst_case: w.worst_case,
            landscape: w.landscape.iter().map(|&(o, v)| (o / TWO_PI, v)).collect(),
        }),
        final_pulse: PulseReport::new(&model, &pulse, target, worst),
        rabi_cap_hz: d.rabi_cap_hz,
        within_cap: pulse.max_amplitude() < TWO_PI * d.rabi_cap_hz,
    };
    Ok(Designed { report, model, pulse, target })
}

pub fn design(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let c = chain(&ctx.config)?;
    let ions = pair_from(ctx)?;
    let d = design_pair(ctx, &c, ions)?;
    let prov = Provenance::new(&ctx.sha256, "design");
    println!(
        "design {},{}: design infidelity {:.3e}, final {:.3e}, worst case {}",
        ions[0],
        ions[1],
        d.report.design.infidelity,
        d.report.final_pulse.infidelity,
        d.report.final_pulse.worst_case.map_or("n/a".into(), |w| format!("{w:.3e}"))
    );
    let name = format!("design_{}_{}.json", ions[0], ions[1]);
    Ok(vec![emit_json(&ctx.out, &name, &prov, &d.report)?])
}

// ------------------------------------------------------------------ suite

pub fn suite(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    if ctx.config.pairs.is_empty() {
        return Err(CliError::Config("pairs: suite needs at least one ion pair in the config".into()));
    }
    let c = chain(&ctx.config)?;
    let mut designs = Vec::new();
    for entry in &ctx.config.pairs {
        let ions = entry.pinned().ions;
        let sub = Context { overrides: Overrides { pair: Some(ions), n_seg: None, tau: None, mu_hz: None, ..ctx.overrides }, config: ctx.config.clone(), sha256: ctx.sha256.clone(), out: ctx.out.clone() };
        let d = design_pair(&sub, &c, ions)?;
        println!(
            "suite {},{}: final {:.3e}, worst case {}",
            ions[0],
            ions[1],
            d.report.final_pulse.infidelity,
            d.report.final_pulse.worst_case.map_or("n/a".into(), |w| format!("{w:.3e}"))
        );
        designs.push(d.report);
    }
    let rows: Vec<Vec<Cell>> = designs
        .iter()
        .map(|d| {
            vec![
                Cell::from(d.ions[0]),
                Cell::from(d.ions[1]),
                Cell::from(d.choice.n_seg),
                Cell::from(d.choice.tau_s),
                Cell::from(d.choice.mu_hz),
                Cell::from(d.design.infidelity),
                Cell::from(d.final_pulse.infidelity),
                Cell::from(d.final_pulse.worst_case),
                Cell::from(d.working_point.as_ref().map(|w| w.offset_hz)),
                Cell::from(d.final_pulse.max_amplitude_hz),
                Cell::from(d.within_cap),
            ]
        })
        .collect();
    let prov = Provenance::new(&ctx.sha256, "suite");
    let header = [
        "ion_i", "ion_j", "n_seg", "tau_s", "mu_hz", "design_infidelity", "final_infidelity", "worst_case",
        "working_point_offset_hz", "max_amplitude_hz", "within_cap",
    ];
    Ok(vec![
        emit_json(&ctx.out, "suite.json", &prov, &designs)?,
        write_atomic(&ctx.out, "suite.csv", &csv(&prov, &header, &rows))?,
    ])
}

// ------------------------------------------------------------------- scan

#[derive(Serialize)]
struct ScanReport {
    ions: [usize; 2],
    pulse: PulseSequence,
    target: TargetSign,
    scan: ScanResult,
}

pub fn scan_cmd(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let c = chain(&ctx.config)?;
    let ions = pair_from(ctx)?;
    let d = design_pair(ctx, &c, ions)?;
    let result = scan(&d.model, &d.pulse, d.target, &ctx.config.scan_box());
    println!("scan {},{}: nominal {:.3e}, worst case {:.3e}", ions[0], ions[1], result.nominal, result.worst_case);
    let mut rows = Vec::new();
    for axis in &result.axes {
        for (v, row) in axis.values.iter().zip(&axis.infidelity) {
            for (phi, x) in result.phases.iter().zip(row) {
                rows.push(vec![Cell::from(axis.parameter.key()), Cell::from(*v), Cell::from(axis.parameter.unit()), Cell::from(*phi), Cell::from(*x)]);
            }
        }
    }
    let prov = Provenance::new(&ctx.sha256, "scan");
    let stem = format!("scan_{}_{}", ions[0], ions[1]);
    let report = ScanReport { ions, pulse: d.pulse, target: d.target, scan: result };
    Ok(vec![
        emit_json(&ctx.out, &format!("{stem}.json"), &prov, &report)?,
        write_atomic(
            &ctx.out,
            &format!("{stem}.csv"),
            &csv(&prov, &["parameter", "value", "unit", "motional_phase_rad", "infidelity"], &rows),
        )?,
    ])
}

// ----------------------------------------------------------------- budget

#[derive(Serialize)]
struct BudgetReport {
    gate_rabi_hz: f64,
    gate_tau_s: f64,
    n_bar: f64,
    budget: iongate::budget::ErrorBudget,
    requirements: Option<Vec<RequirementRow>>,
}

pub fn budget(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let tau = ctx
        .overrides
        .tau
        .or(cfg.budget.gate_tau_s)
        .ok_or_else(|| CliError::Config("budget.gate_tau_s: required for the budget (or pass --tau)".into()))?;
    let rabi_hz = cfg.budget.gate_rabi_hz.unwrap_or(cfg.design.rabi_cap_hz);
    let beam = cfg.beam_config();
    beam.validate().map_err(|e| CliError::Config(format!("beam: {e}")))?;
    let c = chain(cfg)?;
    let n_bar = c.n_bars.iter().sum::<f64>() / c.n_bars.len() as f64;
    let budget = evaluate_budget(&BudgetInputs {
        trap: &c.trap,
        crystal: &c.crystal,
        modes: &c.modes,
        beam: &beam,
        gate: GateDrive { rabi_eff: TWO_PI * rabi_hz, tau },
        n_bar,
        heating_rate: cfg.thermal.heating_rate_per_s,
        kerr: &cfg.thermal.kerr_hz,
    })?;
    let requirements = cfg
        .budget
        .control_errors
        .map(|e| requirements_check(&e.to_core()))
        .transpose()?;
    for w in &budget.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(rows) = &requirements {
        let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.requirement.key()).collect();
        println!("requirements: {} rows, violated: [{}]", rows.len(), failed.join(", "));
    }
    let rows: Vec<Vec<Cell>> = budget
        .entries
        .iter()
        .map(|e| {
            vec![
                Cell::from(e.source.as_str()),
                Cell::from(e.formula.as_str()),
                Cell::from(match e.kind {
                    EntryKind::Infidelity => "infidelity",
                    EntryKind::Tolerance => "tolerance",
                    EntryKind::Ratio => "ratio",
                }),
                Cell::from(e.value),
                Cell::from(e.reference_order),
                Cell::from(e.table_row),
                Cell::from(e.missing.as_deref().unwrap_or("")),
            ]
        })
        .collect();
    let prov = Provenance::new(&ctx.sha256, "budget");
    let report = BudgetReport { gate_rabi_hz: rabi_hz, gate_tau_s: tau, n_bar, budget, requirements };
    println!("budget: {} entries", report.budget.entries.len());
    Ok(vec![
        emit_json(&ctx.out, "budget.json", &prov, &report)?,
        write_atomic(
            &ctx.out,
            "budget.csv",
            &csv(&prov, &["source", "formula", "kind", "value", "reference_order", "table_row", "missing"], &rows),
        )?,
    ])
}

// ----------------------------------------------------------------- oracle

/// Small instance for the brute-force check. Times and angular frequencies
/// share one arbitrary unit system.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleScenario {
    pub modes: Vec<ModeCoupling>,
    pub n_bar: Vec<f64>,
    pub n_seg: usize,
    pub tau: f64,
    pub mu: f64,
    pub rabi_cap: f64,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Second, larger cutoff for the convergence check.
    pub cutoff_check: Option<usize>,
    pub asymmetry: Option<AsymmetryGrid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymmetryGrid {
    pub omega_rel: Vec<f64>,
    /// Multiples of `1 / tau`.
    pub mu_times_tau: Vec<f64>,
}

#[derive(Serialize)]
struct CutoffCheck {
    cutoff: usize,
    fidelity: f64,
    difference: f64,
}

#[derive(Serialize)]
struct OracleReport {
    pulse: PulseSequence,
    target_angle: f64,
    analytic_fidelity: f64,
    oracle: OracleResult,
    difference: f64,
    bound: f64,
    within_bound: bool,
    cutoff_check: Option<CutoffCheck>,
    asymmetry: Option<AsymmetrySweep>,
}

pub fn oracle(scenario_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let bytes = std::fs::read(scenario_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", scenario_path.display())))?;
    let sc: OracleScenario =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
    if sc.modes.is_empty() || sc.n_bar.len() != sc.modes.len() {
        return Err(CliError::Config("scenario.n_bar: one mean phonon number per mode is required".into()));
    }
    let weights: Vec<f64> = sc.n_bar.iter().map(|n| 2.0 * n + 1.0).collect();
    let model = GateModel { couplings: sc.modes.clone(), weights };
    let gate = design_gate(
        &model,
        &DesignSpec { n_seg: sc.n_seg, tau: sc.tau, mu: sc.mu, rabi_cap: sc.rabi_cap, target: None },
    )?;
    let angle = gate.solution.target.angle();
    let analytic = analytic_state_fidelity(&sc.modes, &gate.pulse, &sc.n_bar, angle);
    let result = thermal_fidelity(&sc.modes, &gate.pulse, &sc.oracle, &sc.n_bar, angle)?;
    let eta = sc.modes.iter().flat_map(|m| m.coupling).fold(0.0_f64, |a, c| a.max(c.abs()));
    let n_max = sc.n_bar.iter().cloned().fold(0.0_f64, f64::max);
    let bound = 5.0 * eta.powi(4) * (2.0 * n_max + 1.0).powi(2);
    let difference = (analytic - result.fidelity).abs();
    let cutoff_check = sc
        .cutoff_check
        .map(|cutoff| -> CliResult<CutoffCheck> {
            let cfg = OracleConfig { fock_cutoff: cutoff, ..sc.oracle.clone() };
            let f = thermal_fidelity(&sc.modes, &gate.pulse, &cfg, &sc.n_bar, angle)?.fidelity;
            Ok(CutoffCheck { cutoff, fidelity: f, difference: (f - result.fidelity).abs() })
        })
        .transpose()?;
    let asymmetry = sc
        .asymmetry
        .as_ref()
        .map(|g| {
            let mu_grid: Vec<f64> = g.mu_times_tau.iter().map(|x| x / sc.tau).collect();
            asymmetry_sweep(&sc.modes, &gate.pulse, &sc.oracle, &sc.n_bar, angle, &g.omega_rel, &mu_grid)
        })
        .transpose()?;
    println!("oracle: analytic {analytic:.10}, oracle {:.10}, |diff| {difference:.3e}, bound {bound:.3e}", result.fidelity);
    let report = OracleReport {
        pulse: gate.pulse,
        target_angle: angle,
        analytic_fidelity: analytic,
        oracle: result,
        difference,
        bound,
        within_bound: difference <= bound,
        cutoff_check,
        asymmetry,
    };
    let prov = Provenance::new(&sha256_hex(&bytes), "oracle");
    Ok(vec![emit_json(out, "oracle.json", &prov, &report)?])
}

// ----------------------------------------------------------------- repeat

#[derive(Serialize)]
struct RepeatReport {
    ions: [usize; 2],
    seed: u64,
    starts: Starts,
    pulse: PulseSequence,
    counts: Vec<usize>,
    infidelity: Vec<f64>,
    first_schedule_starts_s: Vec<f64>,
    max_cross_term: f64,
    fit: Option<LineFit>,
    exponent_interval: Option<(f64, f64)>,
}

pub fn repeat(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let c = chain(&ctx.config)?;
    let ions = pair_from(ctx)?;
    let d = design_pair(ctx, &c, ions)?;
    let r = &ctx.config.repeat;
    let seed = ctx.overrides.seed.unwrap_or(ctx.config.seed);
    let starts = match r.starts {
        StartMode::Contiguous => Starts::Contiguous,
        StartMode::Random => Starts::Random { seed, draws: r.draws },
    };
    let plan = RepeatPlan { count: r.count, starts: starts.clone() };
    let curve = repeat_infidelity(&d.model, &d.pulse, d.target, &plan)?;
    if let Some(f) = &curve.fit {
        println!("repeat {},{}: exponent {:.3} +- {:.3}", ions[0], ions[1], f.slope, 1.96 * f.slope_se);
    }
    let rows: Vec<Vec<Cell>> = curve
        .counts
        .iter()
        .zip(&curve.infidelity)
        .map(|(&m, &x)| vec![Cell::from(m), Cell::from(x)])
        .collect();
    let prov = Provenance::new(&ctx.sha256, "repeat");
    let stem = format!("repeat_{}_{}", ions[0], ions[1]);
    let report = RepeatReport {
        ions,
        seed,
        starts,
        pulse: d.pulse,
        exponent_interval: curve.fit.as_ref().map(LineFit::slope_interval),
        counts: curve.counts,
        infidelity: curve.infidelity,
        first_schedule_starts_s: curve.starts,
        max_cross_term: curve.max_cross_term,
        fit: curve.fit,
    };
    Ok(vec![
        emit_json(&ctx.out, &format!("{stem}.json"), &prov, &report)?,
        write_atomic(&ctx.out, &format!("{stem}.csv"), &csv(&prov, &["m", "infidelity"], &rows))?,
    ])
}
