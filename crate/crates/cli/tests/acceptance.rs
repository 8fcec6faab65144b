//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any criterion fails.

use std::cell::Cell;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use iongate::budget::{requirements_check, ControlErrors, Requirement};
use iongate::constants::TWO_PI;
use iongate::crystal::{
    harmonic_with_spacing, solve_equilibrium, spacing_stats, transverse_modes, AxialPotential, ModeData, TrapSpec,
};
use iongate::dynamics::{
    accumulate_gates, magnus_coefficients, pair_couplings, GateSchedule, ModeCoupling, PulseSequence,
};
use iongate::fidelity::{spin_phase_channel_infidelity, ThermalSpec};
use iongate::optimizer::{box_worst_case, design_robust_gate, DesignPipeline, DesignSpec, GateModel, RobustDesign, ScanBox};
use iongate::oracle::{analytic_state_fidelity, asymmetry_sweep, carrier_threshold, thermal_fidelity, OracleConfig};
use iongate::sequence::{repeat_infidelity, RepeatPlan, Starts};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;

const RABI_CAP: f64 = TWO_PI * 1e6;
const N_BAR: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

fn within_factor(x: f64, target: f64, factor: f64) -> bool {
    x > 0.0 && x / target <= factor && target / x <= factor
}

fn chain_trap() -> TrapSpec {
    TrapSpec::yb171(19, TWO_PI * 3e6, AxialPotential::Quartic { l0: 40e-6, gamma4: 4.3 })
}

fn delta_k() -> f64 {
    2.0 * TWO_PI / 355e-9
}

fn chain_modes() -> ModeData {
    let trap = chain_trap();
    let crystal = solve_equilibrium(&trap, None).unwrap();
    transverse_modes(&trap, &crystal, delta_k()).unwrap()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let trap = chain_trap();
    let crystal = solve_equilibrium(&trap, None).unwrap();
    let quartic = spacing_stats(&crystal, 1..18).unwrap();
    let harmonic_trap = harmonic_with_spacing(&trap, quartic.mean).unwrap();
    let harmonic = solve_equilibrium(&harmonic_trap, None).unwrap();
    let harmonic_stats = spacing_stats(&harmonic, 1..18).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let pass = within(quartic.mean, 8.3e-6, 0.2e-6)
        && within(quartic.rsd, 0.023, 0.004)
        && within(harmonic_stats.rsd, 0.112, 0.01)
        && elapsed < 1.0;
    outcome(
        pass,
        format!(
            "central-17 mean spacing {:.3} um (8.3 +/- 0.2), rsd {:.2}% (2.3 +/- 0.4), matched harmonic rsd {:.2}% (11.2 +/- 1), {elapsed:.3} s (< 1)",
            quartic.mean * 1e6,
            quartic.rsd * 100.0,
            harmonic_stats.rsd * 100.0
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let modes = chain_modes();
    let elapsed = t.elapsed().as_secs_f64();
    let omega_x = TWO_PI * 3e6;
    let com_error = (modes.omegas[0] - omega_x).abs() / omega_x;
    let max = modes.omegas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = modes.omegas.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = (max - min) / omega_x;
    let eta_ok = modes.etas.iter().all(|&e| within(e, 0.111, 0.002));
    let (eta_lo, eta_hi) = modes
        .etas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let pass = com_error <= 1e-9 && spread <= 0.01 && eta_ok && elapsed < 1.0;
    outcome(
        pass,
        format!(
            "COM relative error {com_error:.1e} (<= 1e-9), spread {:.3}% (<= 1.0%), eta in [{eta_lo:.4}, {eta_hi:.4}] (0.111 +/- 0.002), {elapsed:.3} s (< 1)",
            spread * 100.0
        ),
    )
}

struct PairRun {
    label: &'static str,
    model: GateModel,
    robust: RobustDesign,
    verified_worst: f64,
    seconds: f64,
}

fn run_designs() -> Vec<PairRun> {
    let modes = chain_modes();
    let weights = ThermalSpec::uniform(N_BAR).weights(&modes.omegas).unwrap();
    let omega_x = TWO_PI * 3e6;
    let cases: [(&'static str, (usize, usize), usize, f64, f64); 3] = [
        ("5-6", (4, 5), 10, 80.4e-6, 0.995),
        ("1-4", (0, 3), 17, 250e-6, 0.997),
        ("9-14", (8, 13), 24, 482e-6, 0.997),
    ];
    cases
        .iter()
        .map(|&(label, pair, n_seg, tau, frac)| {
            let t = Instant::now();
            let model = GateModel { couplings: pair_couplings(&modes, pair).unwrap(), weights: weights.clone() };
            let spec = DesignSpec { n_seg, tau, mu: frac * omega_x, rabi_cap: RABI_CAP, target: None };
            let robust = design_robust_gate(&model, &spec, &DesignPipeline::default()).unwrap();
            // Denser verification box than the one used while designing.
            let target = robust.design.solution.target;
            let verified_worst = box_worst_case(&model, &robust.pulse, target, &ScanBox::requirement_box(21, 32));
            PairRun { label, model, robust, verified_worst, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}

fn criterion_3(runs: &[PairRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let design = r.robust.design.infidelity();
        let amp = r.robust.pulse.max_amplitude().max(r.robust.design.pulse.max_amplitude());
        let ok = amp < RABI_CAP && design <= 1e-3 && r.verified_worst <= 1e-3 && r.seconds < 60.0;
        pass &= ok;
        parts.push(format!(
            "{} design {:.1e} worst {:.2e} max|Omega| 2pi x {:.3} MHz {:.1} s",
            r.label,
            design,
            r.verified_worst,
            amp / TWO_PI / 1e6,
            r.seconds
        ));
    }
    outcome(pass, format!("{} (design and worst case <= 1e-3, cap 1 MHz, < 60 s)", parts.join("; ")))
}

fn criterion_4(runs: &[PairRun]) -> Outcome {
    let offset = |label: &str| runs.iter().find(|r| r.label == label).unwrap().robust.working_point.offset / TWO_PI;
    let sep3 = offset("1-4");
    let sep5 = offset("9-14");
    let pass = within(sep3, 800.0, 500.0) && within(sep5, -500.0, 500.0);
    outcome(
        pass,
        format!("separation-3 offset {sep3:+.0} Hz (+800 +/- 500), separation-5 offset {sep5:+.0} Hz (-500 +/- 500)"),
    )
}

/// One-mode, two-ion gate from the pencil, `loops` detuning periods long.
fn toy_gate(
    eta: f64,
    sign: f64,
    n_bar: f64,
    mu: f64,
    n_seg: usize,
    loops: f64,
) -> (Vec<ModeCoupling>, PulseSequence, f64) {
    let modes = vec![ModeCoupling { omega: 1.0, coupling: [eta, sign * eta] }];
    let model = GateModel { couplings: modes.clone(), weights: vec![2.0 * n_bar + 1.0] };
    let tau = loops * TWO_PI / (1.0 - mu);
    let g = iongate::optimizer::design_gate(&model, &DesignSpec { n_seg, tau, mu, rabi_cap: 1e3, target: None }).unwrap();
    let angle = g.solution.target.angle();
    (modes, g.pulse, angle)
}

/// Detuning from the mode proportional to `eta`; with 0.5..0.7 per unit
/// `eta` the drive stays near a third of the mode frequency.
fn bounded_drive_gate(eta: f64, sign: f64, n_bar: f64, detuning_per_eta: f64, n_seg: usize) -> (Vec<ModeCoupling>, PulseSequence, f64) {
    toy_gate(eta, sign, n_bar, 1.0 - detuning_per_eta * eta, n_seg, 2.0)
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let cfg = OracleConfig { fock_cutoff: 30, compensate_carrier: true, ..Default::default() };
    let cases = 8;
    let mut runner = TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let worst_ratio = Cell::new(0.0_f64);
    let worst_step = Cell::new(0.0_f64);
    let max_drive = Cell::new(0.0_f64);
    let strategy = (0.02f64..=0.15, prop::bool::ANY, 0.0f64..=1.0, 0.5f64..=0.7, 3usize..=5);
    let property = runner.run(&strategy, |(eta, same_sign, n_bar, detuning_per_eta, n_seg)| {
        let sign = if same_sign { 1.0 } else { -1.0 };
        let (modes, pulse, angle) = bounded_drive_gate(eta, sign, n_bar, detuning_per_eta, n_seg);
        max_drive.set(max_drive.get().max(pulse.max_amplitude()));
        let oracle = thermal_fidelity(&modes, &pulse, &cfg, &[n_bar], angle)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let analytic = analytic_state_fidelity(&modes, &pulse, &[n_bar], angle);
        let bound = 5.0 * eta.powi(4) * (2.0 * n_bar + 1.0).powi(2);
        let diff = (analytic - oracle.fidelity).abs();
        worst_ratio.set(worst_ratio.get().max(diff / bound));
        worst_step.set(worst_step.get().max(oracle.step_change));
        prop_assert!(diff <= bound, "|dF| {diff:e} > bound {bound:e} at eta {eta}, nbar {n_bar}");
        prop_assert!(oracle.step_change < 1e-8);
        Ok(())
    });
    let (modes, pulse, angle) = bounded_drive_gate(0.15, 1.0, 1.0, 0.7, 4);
    let at = |cutoff| {
        thermal_fidelity(&modes, &pulse, &OracleConfig { fock_cutoff: cutoff, ..cfg.clone() }, &[1.0], angle)
            .map(|r| r.fidelity)
    };
    let cutoff_change = match (at(30), at(40)) {
        (Ok(a), Ok(b)) => (a - b).abs(),
        _ => f64::INFINITY,
    };
    let elapsed = t.elapsed().as_secs_f64();
    let (worst_ratio, worst_step) = (worst_ratio.get(), worst_step.get());
    let pass = property.is_ok() && cutoff_change < 1e-6 && elapsed < 120.0;
    outcome(
        pass,
        format!(
            "{cases} sampled instances (eta in [0.02, 0.15], nbar in [0, 1], max drive {:.2} of the mode frequency) {}, max |dF|/bound {worst_ratio:.2} (<= 1), max step-halving change {worst_step:.1e} (< 1e-8), cutoff 30 vs 40 change {cutoff_change:.1e} (< 1e-6), {elapsed:.0} s (< 120)",
            max_drive.get(),
            if property.is_ok() { "hold".to_string() } else { format!("fail: {property:?}") }
        ),
    )
}

fn criterion_6(runs: &[PairRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let target = if r.label == "5-6" { 1e-3 } else { 2e-4 };
        let eps = carrier_threshold(&r.robust.pulse, 1e-3, 1.0);
        let ok = eps.is_some_and(|e| within_factor(e, target, 2.0));
        pass &= ok;
        parts.push(format!(
            "{} eps {} (target {:.2}%)",
            r.label,
            eps.map_or("none".into(), |e| format!("{:.4}%", e * 100.0)),
            target * 100.0
        ));
    }
    let (modes, pulse, angle) = toy_gate(0.1, 1.0, 0.0, 0.85, 4, 4.0);
    let cfg = OracleConfig { fock_cutoff: 14, compensate_carrier: true, ..Default::default() };
    let mu_grid: Vec<f64> = [0.05, 0.1, 0.2].iter().map(|x| x / pulse.tau).collect();
    let sweep = asymmetry_sweep(&modes, &pulse, &cfg, &[0.0], angle, &[0.005, 0.01, 0.02], &mu_grid).unwrap();
    let e_omega = sweep.omega_exponent.unwrap_or(f64::NAN);
    let e_mu = sweep.mu_exponent.unwrap_or(f64::NAN);
    pass &= within(e_omega, 2.0, 0.1) && within(e_mu, 2.0, 0.1);
    outcome(
        pass,
        format!(
            "{} (factor 2); exponents d-Omega {e_omega:.3}, d-mu {e_mu:.3} (2.0 +/- 0.1)",
            parts.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let grid = [-0.05, -0.02, 0.0, 0.01, 0.03, 0.05];
    let mut worst = 0.0_f64;
    for &a in &grid {
        for &b in &grid {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let law = 2.0 * (a * a + b * b) / 5.0;
            worst = worst.max((spin_phase_channel_infidelity(a, b) / law - 1.0).abs());
        }
    }
    let at_tolerance = spin_phase_channel_infidelity(PI / 100.0, PI / 100.0);
    let pass = worst <= 0.05 && at_tolerance < 1e-3;
    outcome(
        pass,
        format!(
            "max relative deviation from 2(phi_i^2+phi_j^2)/5 {:.2}% (<= 5%), phi = pi/100 on both ions {at_tolerance:.2e} (< 1e-3)",
            worst * 100.0
        ),
    )
}

fn criterion_8(runs: &[PairRun]) -> Outcome {
    let r = &runs[0];
    let pulse = &r.robust.pulse;
    let count = 20;
    let contiguous = accumulate_gates(&GateSchedule::contiguous(pulse.clone(), count), &r.model.couplings).unwrap();
    let long = magnus_coefficients(&pulse.concatenated(count), &r.model.couplings);
    let mut diff = (contiguous.theta - long.theta).abs();
    for ion in 0..2 {
        for (a, b) in contiguous.alpha[ion].iter().zip(&long.alpha[ion]) {
            diff = diff.max((a - b).norm());
        }
    }
    let target = r.robust.design.solution.target;
    let plan = RepeatPlan { count, starts: Starts::Random { seed: 2018, draws: 64 } };
    let curve = repeat_infidelity(&r.model, pulse, target, &plan).unwrap();
    let slope = curve.fit.map_or(f64::NAN, |f| f.slope);
    let pass = diff <= 1e-10 && slope <= 1.2;
    outcome(
        pass,
        format!(
            "{} design: contiguous vs long sequence max difference {diff:.1e} (<= 1e-10), random-start exponent {slope:.3} for m <= 20, seed 2018, 64 draws (<= 1.2)",
            r.label
        ),
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iongate"))
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/chain19.toml")
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let o = bin().args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn crafted(values: &[(Requirement, f64)]) -> ControlErrors {
    let mut map = serde_json::Map::new();
    for r in Requirement::ALL {
        map.insert(r.key().into(), Value::from(0.5 * r.limit()));
    }
    for &(r, v) in values {
        map.insert(r.key().into(), Value::from(v));
    }
    serde_json::from_value(Value::Object(map)).unwrap()
}

fn flagged(errors: &ControlErrors) -> Vec<Requirement> {
    requirements_check(errors).unwrap().into_iter().filter(|r| !r.pass).map(|r| r.requirement).collect()
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = std::fs::read_to_string(shipped_config()).unwrap();
    // Three violations in config units (Hz, relative, rad); the rest inside the box.
    let crafted_text = format!(
        "{cfg_text}\n[budget.control_errors]\ndelta_mu_hz = 1500.0\ndelta_omega_rel = 0.005\ndelta_tau_s = 0.1e-6\ndelta_mu_asym_hz = 5.0\n\
         delta_omega_asym_rel = 1e-4\nphi_m_asym_rad = 0.0\nphi_s_rad = 0.05\ndelta_phi_rad = 0.01\ndelta_omega_x_hz = -200.0\ndelta_omega_z_rel = 5e-3\n"
    );
    let cfg = dir.path().join("crafted.toml");
    std::fs::write(&cfg, crafted_text).unwrap();
    if let Err(e) = run_cli(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "budget"]) {
        return outcome(false, format!("budget command failed: {e}"));
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("budget.json")).unwrap()).unwrap();
    let result = &report["result"];
    let mut rows_ok = true;
    let mut parts = Vec::new();
    for e in result["budget"]["entries"].as_array().unwrap().iter().filter(|e| e["table_row"] == true) {
        let value = e["value"].as_f64();
        let reference = e["reference_order"].as_f64().unwrap();
        let ok = value.is_some_and(|v| within_factor(v, reference, 10.0));
        rows_ok &= ok;
        parts.push(format!(
            "{} {}",
            e["formula"].as_str().unwrap(),
            value.map_or("missing".into(), |v| format!("{v:.1e}"))
        ));
    }
    let cli_flagged: Vec<&str> = result["requirements"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["pass"] == false)
        .map(|r| r["requirement"].as_str().unwrap())
        .collect();
    let expected = ["detuning", "spin_phase", "axial_frequency"];
    let mut checker_ok = cli_flagged == expected;
    checker_ok &= flagged(&crafted(&[])).is_empty();
    for r in Requirement::ALL {
        checker_ok &= flagged(&crafted(&[(r, r.limit())])) == [r];
        checker_ok &= flagged(&crafted(&[(r, -1.01 * r.limit())])) == [r];
        checker_ok &= flagged(&crafted(&[(r, 0.999 * r.limit())])).is_empty();
    }
    outcome(
        rows_ok && checker_ok,
        format!(
            "table rows [{}] within a factor of 10 of the reference orders: {}; checker flagged {:?} (expected {:?}) and single-row crafts {}",
            parts.join(", "),
            rows_ok,
            cli_flagged,
            expected,
            if checker_ok { "exact" } else { "wrong" }
        ),
    )
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = shipped_config();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/oracle_toy.json");
    let runs = [("a", "1"), ("b", "4"), ("c", "4")];
    for (name, threads) in runs {
        let out = root.path().join(name);
        let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads];
        let commands: [&[&str]; 5] = [
            &["crystal"],
            &["design", "--pair", "5,6"],
            &["budget"],
            &["repeat", "--pair", "5,6", "--seed", "2018"],
            &["oracle", "--scenario", scenario.to_str().unwrap()],
        ];
        for c in commands {
            let args: Vec<&str> = base.iter().chain(c.iter()).copied().collect();
            if let Err(e) = run_cli(&args) {
                return outcome(false, format!("{c:?} failed: {e}"));
            }
        }
    }
    let a = artifacts(&root.path().join("a"));
    let b = artifacts(&root.path().join("b"));
    let c = artifacts(&root.path().join("c"));
    let pass = !a.is_empty() && a == b && b == c;
    outcome(
        pass,
        format!(
            "{} artifacts byte-identical across runs and across 1 vs 4 threads: {pass}",
            a.len()
        ),
    )
}

/// `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.
fn selected() -> Option<Vec<u32>> {
    let raw = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(raw.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

fn main() {
    let started = Instant::now();
    let only = selected();
    let wanted = |n: u32| only.as_ref().map_or(true, |o| o.contains(&n));
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    if wanted(1) {
        record(1, "crystal reproduction", criterion_1());
    }
    if wanted(2) {
        record(2, "mode spectrum", criterion_2());
    }
    let runs = if [3, 4, 6, 8].iter().any(|&n| wanted(n)) { run_designs() } else { Vec::new() };
    if wanted(3) {
        record(3, "gate designs", criterion_3(&runs));
    }
    if wanted(4) {
        record(4, "working points", criterion_4(&runs));
    }
    if wanted(5) {
        record(5, "oracle equivalence", criterion_5());
    }
    if wanted(6) {
        record(6, "asymmetry thresholds", criterion_6(&runs));
    }
    if wanted(7) {
        record(7, "spin-phase law", criterion_7());
    }
    if wanted(8) {
        record(8, "repeated gates", criterion_8(&runs));
    }
    if wanted(9) {
        record(9, "budget", criterion_9());
    }
    if wanted(10) {
        record(10, "determinism", criterion_10());
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
