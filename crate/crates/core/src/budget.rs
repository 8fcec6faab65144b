//! Order-of-magnitude error budget for neglected terms, and the control
//! tolerance checker.

use serde::{Deserialize, Serialize};

use crate::constants::{SPEED_OF_LIGHT, TWO_PI};
use crate::crystal::{linear_stability_ratio, AxialPotential, Crystal, ModeData, TrapSpec};
use crate::dynamics::PulseSequence;
use crate::error::{Error, Result};
use crate::fidelity::TargetSign;
use crate::fit::loglog_fit;
use crate::optimizer::GateModel;

/// Detuning shift tolerated by the gate designs, rad/s.
pub const DETUNING_TOLERANCE: f64 = TWO_PI * 1e3;
/// Below this `Delta / Omega` ratio the adiabatic elimination is flagged.
pub const ELIMINATION_WARNING_RATIO: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// m
    pub wavelength: f64,
    /// rad/s
    pub single_photon_detuning: f64,
    /// Single-photon Rabi frequencies of one Raman pair, rad/s. Derived from
    /// the effective coupling and `intensity_ratio` when absent.
    pub raw_rabi: Option<[f64; 2]>,
    /// Gaussian intensity width, m.
    pub beam_width: f64,
    /// Strong over weak single-photon Rabi frequency; 1 for balanced beams.
    pub intensity_ratio: f64,
    /// rad/s
    pub gamma_e: Option<f64>,
    /// rad/s
    pub omega_01: Option<f64>,
    /// rad/s
    pub two_photon_detuning: Option<f64>,
    /// Differential light shift as a fraction of the effective coupling.
    pub stark_fraction: Option<f64>,
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("single_photon_detuning", self.single_photon_detuning),
            ("beam_width", self.beam_width),
            ("intensity_ratio", self.intensity_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("beam {name} must be positive and finite")));
            }
        }
        let optional = [
            ("gamma_e", self.gamma_e),
            ("omega_01", self.omega_01),
            ("two_photon_detuning", self.two_photon_detuning),
            ("stark_fraction", self.stark_fraction),
        ];
        for (name, v) in optional {
            if v.is_some_and(|v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(format!("beam {name} must be non-negative and finite")));
            }
        }
        if self.raw_rabi.is_some_and(|r| r.iter().any(|v| !(*v > 0.0) || !v.is_finite())) {
            return Err(Error::InvalidInput("raw Rabi frequencies must be positive".into()));
        }
        Ok(())
    }

    /// rad/s
    pub fn optical_frequency(&self) -> f64 {
        TWO_PI * SPEED_OF_LIGHT / self.wavelength
    }

    /// `[strong, weak]`, with `strong * weak / (2 Delta) = rabi_eff`.
    pub fn raw_rabi_for(&self, rabi_eff: f64) -> [f64; 2] {
        self.raw_rabi.unwrap_or_else(|| {
            let product = 2.0 * self.single_photon_detuning * rabi_eff.abs();
            let r = self.intensity_ratio;
            [(product * r).sqrt(), (product / r).sqrt()]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDrive {
    /// Peak effective Rabi frequency, rad/s.
    pub rabi_eff: f64,
    /// s
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Infidelity,
    /// Tolerated relative parameter change rather than an error.
    Tolerance,
    /// Shift relative to the tolerated detuning error.
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub source: String,
    pub formula: String,
    pub kind: EntryKind,
    pub value: Option<f64>,
    /// Name of the input that was absent when `value` is `None`.
    pub missing: Option<String>,
    /// Reference order of magnitude, when one is published for this row.
    pub reference_order: Option<f64>,
    /// Part of the neglected-terms table rather than a supplementary check.
    pub table_row: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub entries: Vec<BudgetEntry>,
    pub warnings: Vec<String>,
}

impl ErrorBudget {
    pub fn entry(&self, formula: &str) -> Option<&BudgetEntry> {
        self.entries.iter().find(|e| e.formula == formula)
    }
}

pub struct BudgetInputs<'a> {
    pub trap: &'a TrapSpec,
    pub crystal: &'a Crystal,
    pub modes: &'a ModeData,
    pub beam: &'a BeamConfig,
    pub gate: GateDrive,
    pub n_bar: f64,
    /// quanta/s
    pub heating_rate: Option<f64>,
    /// Cross-Kerr coefficients, Hz/phonon.
    pub kerr: &'a [f64],
}

struct Row {
    source: &'static str,
    formula: &'static str,
    kind: EntryKind,
    reference_order: Option<f64>,
    table_row: bool,
}

const ROWS: [Row; 11] = [
    Row { source: "Micro-motion", formula: "micromotion", kind: EntryKind::Infidelity, reference_order: Some(1e-6), table_row: true },
    Row { source: "RWA", formula: "rwa", kind: EntryKind::Infidelity, reference_order: Some(1e-4), table_row: true },
    Row { source: "Adiabatic elimination of the excited state", formula: "adiabatic_elimination", kind: EntryKind::Infidelity, reference_order: Some(1e-7), table_row: true },
    Row { source: "Spontaneous emission of the excited state", formula: "spontaneous_emission", kind: EntryKind::Infidelity, reference_order: Some(1e-3), table_row: true },
    Row { source: "Higher order terms in the Lamb-Dicke parameter", formula: "lamb_dicke_higher_order", kind: EntryKind::Infidelity, reference_order: Some(1e-4), table_row: true },
    Row { source: "Laser beams on adjacent ions", formula: "adjacent_beam", kind: EntryKind::Infidelity, reference_order: Some(1e-4), table_row: true },
    Row { source: "Thermal motion perpendicular to the laser beams", formula: "perpendicular_thermal", kind: EntryKind::Infidelity, reference_order: Some(1e-4), table_row: true },
    Row { source: "Motional heating (bound)", formula: "heating_bound", kind: EntryKind::Infidelity, reference_order: Some(1e-2), table_row: false },
    Row { source: "Tolerated relative axial frequency drift", formula: "axial_drift_tolerance", kind: EntryKind::Tolerance, reference_order: Some(5e-3), table_row: false },
    Row { source: "Cross-Kerr frequency shift over detuning tolerance", formula: "kerr_shift", kind: EntryKind::Ratio, reference_order: None, table_row: false },
    Row { source: "Segment-to-segment light-shift change", formula: "stark_shift_change", kind: EntryKind::Infidelity, reference_order: None, table_row: false },
];

fn require(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::MissingParameter(name.to_string()))
}

/// Effective axial frequency for the perpendicular-motion estimate. Quartic
/// traps have no single axial frequency, so the harmonic linear-chain limit
/// on `omega_x / omega_z` stands in.
fn aspect_ratio(trap: &TrapSpec) -> Result<f64> {
    match trap.axial {
        AxialPotential::Harmonic { omega_z } => Ok(trap.omega_x / omega_z),
        AxialPotential::Quartic { .. } => linear_stability_ratio(trap.n_ions),
    }
}

fn evaluate(formula: &str, inp: &BudgetInputs) -> Result<f64> {
    let beam = inp.beam;
    let eta = inp.modes.etas.iter().cloned().fold(0.0, f64::max);
    let thermal = 2.0 * inp.n_bar + 1.0;
    let raw = beam.raw_rabi_for(inp.gate.rabi_eff);
    let strong = raw[0].max(raw[1]);
    let delta = beam.single_photon_detuning;
    let spacing = || {
        inp.crystal
            .spacing
            .map(|s| s.mean)
            .ok_or_else(|| Error::MissingParameter("mean ion spacing".into()))
    };
    Ok(match formula {
        "micromotion" => {
            let rf = require(inp.trap.omega_rf, "omega_rf")?;
            let q = require(inp.trap.q(), "q_param")?;
            (eta * q * inp.gate.rabi_eff / rf).powi(2)
        }
        "rwa" => {
            let w01 = require(beam.omega_01, "omega_01")?;
            let d = require(beam.two_photon_detuning, "two_photon_detuning")?;
            (d.abs() / w01).max(strong / beam.optical_frequency())
        }
        "adiabatic_elimination" => (strong / delta).powi(2),
        "spontaneous_emission" => {
            let gamma = require(beam.gamma_e, "gamma_e")?;
            gamma * inp.gate.tau * (strong / delta).powi(2)
        }
        "lamb_dicke_higher_order" => eta.powi(4) * thermal * thermal,
        "adjacent_beam" => {
            let d = spacing()?;
            (-d * d / (2.0 * beam.beam_width * beam.beam_width)).exp()
        }
        "perpendicular_thermal" => {
            let ratio = aspect_ratio(inp.trap)?;
            eta * eta * thermal / (32.0 * std::f64::consts::PI.powi(2))
                * (beam.wavelength / beam.beam_width).powi(2)
                * ratio
                * ratio
        }
        "heating_bound" => {
            let rate = require(inp.heating_rate, "heating_rate")?;
            inp.modes.n_modes() as f64 * rate * inp.gate.tau
        }
        "axial_drift_tolerance" => {
            let d = spacing()?;
            0.5 * beam.beam_width / (inp.trap.n_ions as f64 * d)
        }
        "kerr_shift" => {
            if inp.kerr.is_empty() {
                return Err(Error::MissingParameter("kerr coefficients".into()));
            }
            let largest = inp.kerr.iter().map(|k| k.abs()).fold(0.0, f64::max);
            TWO_PI * largest * inp.n_bar / DETUNING_TOLERANCE
        }
        "stark_shift_change" => {
            let fraction = require(beam.stark_fraction, "stark_fraction")?;
            (fraction * inp.gate.rabi_eff * inp.gate.tau / beam.intensity_ratio).powi(2)
        }
        other => unreachable!("unknown budget formula {other}"),
    })
}

/// Every budget row, each evaluated independently. Rows whose inputs are
/// missing carry `value: None` and the missing name.
pub fn evaluate_budget(inp: &BudgetInputs) -> Result<ErrorBudget> {
    inp.beam.validate()?;
    let finite = [inp.gate.rabi_eff, inp.gate.tau, inp.n_bar];
    if finite.iter().any(|v| !v.is_finite()) || inp.n_bar < 0.0 || inp.gate.tau < 0.0 {
        return Err(Error::InvalidInput("gate drive and mean phonon number must be finite".into()));
    }
    if inp.heating_rate.is_some_and(|r| !(r >= 0.0)) || inp.kerr.iter().any(|k| !k.is_finite()) {
        return Err(Error::InvalidInput("heating rate and Kerr coefficients must be finite".into()));
    }
    let mut warnings = Vec::new();
    let raw = inp.beam.raw_rabi_for(inp.gate.rabi_eff);
    let strong = raw[0].max(raw[1]);
    if strong > 0.0 && inp.beam.single_photon_detuning / strong < ELIMINATION_WARNING_RATIO {
        warnings.push(format!(
            "single-photon detuning is only {:.3e} times the Rabi frequency",
            inp.beam.single_photon_detuning / strong
        ));
    }
    let entries = ROWS
        .iter()
        .map(|row| {
            let (value, missing) = match evaluate(row.formula, inp) {
                Ok(v) => (Some(v), None),
                Err(Error::MissingParameter(name)) => (None, Some(name)),
                Err(e) => return Err(e),
            };
            Ok(BudgetEntry {
                source: row.source.to_string(),
                formula: row.formula.to_string(),
                kind: row.kind,
                value,
                missing,
                reference_order: row.reference_order,
                table_row: row.table_row,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorBudget { entries, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requirement {
    Detuning,
    Intensity,
    GateTime,
    DetuningAsymmetry,
    IntensityAsymmetry,
    MotionalPhaseAsymmetry,
    SpinPhase,
    LaserPhase,
    TransverseFrequency,
    AxialFrequency,
}

impl Requirement {
    pub const ALL: [Requirement; 10] = [
        Requirement::Detuning,
        Requirement::Intensity,
        Requirement::GateTime,
        Requirement::DetuningAsymmetry,
        Requirement::IntensityAsymmetry,
        Requirement::MotionalPhaseAsymmetry,
        Requirement::SpinPhase,
        Requirement::LaserPhase,
        Requirement::TransverseFrequency,
        Requirement::AxialFrequency,
    ];

    /// Strict upper bound on the magnitude, in the row's SI unit.
    pub fn limit(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Requirement::Detuning => TWO_PI * 1e3,
            Requirement::Intensity => 0.01,
            Requirement::GateTime => 0.4e-6,
            Requirement::DetuningAsymmetry => TWO_PI * 10.0,
            Requirement::IntensityAsymmetry => 2e-4,
            Requirement::MotionalPhaseAsymmetry | Requirement::SpinPhase | Requirement::LaserPhase => PI / 100.0,
            Requirement::TransverseFrequency => TWO_PI * 1e3,
            Requirement::AxialFrequency => 5e-3,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Requirement::Detuning => "delta_mu",
            Requirement::Intensity => "delta_omega_rel",
            Requirement::GateTime => "delta_tau",
            Requirement::DetuningAsymmetry => "delta_mu_asym",
            Requirement::IntensityAsymmetry => "delta_omega_asym_rel",
            Requirement::MotionalPhaseAsymmetry => "phi_m_asym",
            Requirement::SpinPhase => "phi_s",
            Requirement::LaserPhase => "delta_phi",
            Requirement::TransverseFrequency => "delta_omega_x",
            Requirement::AxialFrequency => "delta_omega_z_rel",
        }
    }
}

/// Measured or assumed control errors; angular frequencies in rad/s,
/// times in s, phases in rad, the rest relative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlErrors {
    pub delta_mu: Option<f64>,
    pub delta_omega_rel: Option<f64>,
    pub delta_tau: Option<f64>,
    pub delta_mu_asym: Option<f64>,
    pub delta_omega_asym_rel: Option<f64>,
    pub phi_m_asym: Option<f64>,
    pub phi_s: Option<f64>,
    pub delta_phi: Option<f64>,
    pub delta_omega_x: Option<f64>,
    pub delta_omega_z_rel: Option<f64>,
}

impl ControlErrors {
    pub fn zeros() -> Self {
        ControlErrors {
            delta_mu: Some(0.0),
            delta_omega_rel: Some(0.0),
            delta_tau: Some(0.0),
            delta_mu_asym: Some(0.0),
            delta_omega_asym_rel: Some(0.0),
            phi_m_asym: Some(0.0),
            phi_s: Some(0.0),
            delta_phi: Some(0.0),
            delta_omega_x: Some(0.0),
            delta_omega_z_rel: Some(0.0),
        }
    }

    pub fn get(&self, r: Requirement) -> Option<f64> {
        match r {
            Requirement::Detuning => self.delta_mu,
            Requirement::Intensity => self.delta_omega_rel,
            Requirement::GateTime => self.delta_tau,
            Requirement::DetuningAsymmetry => self.delta_mu_asym,
            Requirement::IntensityAsymmetry => self.delta_omega_asym_rel,
            Requirement::MotionalPhaseAsymmetry => self.phi_m_asym,
            Requirement::SpinPhase => self.phi_s,
            Requirement::LaserPhase => self.delta_phi,
            Requirement::TransverseFrequency => self.delta_omega_x,
            Requirement::AxialFrequency => self.delta_omega_z_rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequirementRow {
    pub requirement: Requirement,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

pub fn requirements_check(errors: &ControlErrors) -> Result<Vec<RequirementRow>> {
    Requirement::ALL
        .iter()
        .map(|&r| {
            let value = errors
                .get(r)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MissingValue(r.key().to_string()))?;
            Ok(RequirementRow {
                requirement: r,
                value,
                limit: r.limit(),
                pass: value.abs() < r.limit(),
            })
        })
        .collect()
}

/// Infidelity with the motional phases split as `+delta/2` and `-delta/2`
/// around the design values.
pub fn motional_phase_imbalance_infidelity(
    model: &GateModel,
    pulse: &PulseSequence,
    target: TargetSign,
    delta: f64,
) -> f64 {
    let phases = [pulse.phi_m[0] + 0.5 * delta, pulse.phi_m[1] - 0.5 * delta];
    model.infidelity(&pulse.with_motional_phases(phases), target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseImbalanceFit {
    pub baseline: f64,
    pub deltas: Vec<f64>,
    /// Excess over the baseline, averaged over `+delta` and `-delta`.
    pub excess: Vec<f64>,
    /// Least-squares `c` in `excess = c delta^2`.
    pub quadratic_coefficient: f64,
    pub exponent: Option<f64>,
}

pub fn motional_phase_imbalance_fit(
    model: &GateModel,
    pulse: &PulseSequence,
    target: TargetSign,
    deltas: &[f64],
) -> Result<PhaseImbalanceFit> {
    if deltas.iter().any(|d| !(d.abs() <= 0.2)) {
        return Err(Error::InvalidInput("phase imbalance must lie within 0.2 rad".into()));
    }
    let baseline = model.infidelity(pulse, target);
    let excess: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            0.5 * (motional_phase_imbalance_infidelity(model, pulse, target, d)
                + motional_phase_imbalance_infidelity(model, pulse, target, -d))
                - baseline
        })
        .collect();
    let num: f64 = deltas.iter().zip(&excess).map(|(d, e)| d * d * e).sum();
    let den: f64 = deltas.iter().map(|d| d.powi(4)).sum();
    Ok(PhaseImbalanceFit {
        baseline,
        quadratic_coefficient: if den > 0.0 { num / den } else { 0.0 },
        exponent: loglog_fit(deltas, &excess).map(|f| f.slope),
        deltas: deltas.to_vec(),
        excess,
    })
}
