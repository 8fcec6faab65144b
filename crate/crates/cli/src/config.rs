//! Run configuration. Frequencies are ordinary frequencies in Hz and are
//! converted to rad/s here; every unit lives in the key name.

use std::path::{Path, PathBuf};

use iongate::budget::{BeamConfig, ControlErrors};
use iongate::constants::{yb171_ion_mass, ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, TWO_PI};
use iongate::crystal::{AxialPotential, TrapSpec};
use iongate::fidelity::{Occupation, TargetSign, ThermalSpec};
use iongate::optimizer::{DesignPipeline, RobustRefinement, ScanBox, WorkingPointSearch};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub trap: TrapConfig,
    pub beam: BeamSection,
    #[serde(default)]
    pub thermal: ThermalSection,
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub repeat: RepeatSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub n_ions: usize,
    pub omega_x_hz: f64,
    /// Defaults to `omega_x_hz`.
    pub omega_y_hz: Option<f64>,
    /// Defaults to 171Yb+.
    pub mass_amu: Option<f64>,
    #[serde(default = "one")]
    pub charge_e: f64,
    pub omega_rf_hz: Option<f64>,
    pub q_param: Option<f64>,
    #[serde(default = "one_usize")]
    pub window_trim: usize,
    pub axial: AxialConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AxialConfig {
    Quartic { l0_m: f64, gamma4: f64 },
    Harmonic { omega_z_hz: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    pub wavelength_m: f64,
    /// `|delta k|` in units of the optical wavenumber; 2 for counter-propagating beams.
    #[serde(default = "two")]
    pub wavevector_factor: f64,
    pub single_photon_detuning_hz: f64,
    pub raw_rabi_hz: Option<[f64; 2]>,
    pub beam_width_m: f64,
    #[serde(default = "one")]
    pub intensity_ratio: f64,
    pub gamma_e_hz: Option<f64>,
    pub omega_01_hz: Option<f64>,
    pub two_photon_detuning_hz: Option<f64>,
    pub stark_fraction: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSection {
    /// Scalar or one value per mode (descending frequency).
    pub n_bar: Option<Occupation>,
    pub temperature_k: Option<f64>,
    pub heating_rate_per_s: Option<f64>,
    #[serde(default)]
    pub kerr_hz: Vec<f64>,
}

impl Default for ThermalSection {
    fn default() -> Self {
        ThermalSection {
            n_bar: Some(Occupation::Uniform(0.5)),
            temperature_k: None,
            heating_rate_per_s: None,
            kerr_hz: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PairEntry {
    Bare([usize; 2]),
    Pinned(PinnedPair),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedPair {
    /// 1-based ion indices.
    pub ions: [usize; 2],
    pub n_seg: Option<usize>,
    pub tau_s: Option<f64>,
    pub mu_hz: Option<f64>,
}

impl PairEntry {
    pub fn pinned(&self) -> PinnedPair {
        match *self {
            PairEntry::Bare(ions) => PinnedPair { ions, n_seg: None, tau_s: None, mu_hz: None },
            PairEntry::Pinned(p) => p,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default = "default_rabi_cap")]
    pub rabi_cap_hz: f64,
    #[serde(default = "default_n_seg")]
    pub n_seg: Vec<usize>,
    #[serde(default = "default_tau")]
    pub tau_s: Vec<f64>,
    #[serde(default = "default_mu_min")]
    pub mu_min_fraction: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max_fraction: f64,
    #[serde(default = "default_mu_step")]
    pub mu_step_hz: f64,
    /// Grid search accepts the shortest gate, then fewest segments, at or below this.
    #[serde(default = "default_max_infidelity")]
    pub max_design_infidelity: f64,
    pub target: Option<TargetSign>,
    #[serde(default = "yes")]
    pub robust: bool,
    #[serde(default = "default_wp_span")]
    pub working_point_span_hz: f64,
    #[serde(default = "default_wp_step")]
    pub working_point_step_hz: f64,
    #[serde(default = "default_box_points")]
    pub box_points: usize,
    #[serde(default = "default_box_phases")]
    pub box_phase_samples: usize,
    #[serde(default = "default_rounds")]
    pub refine_rounds: usize,
    #[serde(default = "default_iterations")]
    pub refine_iterations: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        toml::from_str("").expect("design defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default = "default_detuning_hz")]
    pub detuning_hz: f64,
    #[serde(default = "default_intensity_rel")]
    pub intensity_rel: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_scan_points")]
    pub points: usize,
    #[serde(default = "default_scan_phases")]
    pub phase_samples: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        toml::from_str("").expect("scan defaults")
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Defaults to `design.rabi_cap_hz`.
    pub gate_rabi_hz: Option<f64>,
    pub gate_tau_s: Option<f64>,
    pub control_errors: Option<ControlErrorsConfig>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlErrorsConfig {
    pub delta_mu_hz: Option<f64>,
    pub delta_omega_rel: Option<f64>,
    pub delta_tau_s: Option<f64>,
    pub delta_mu_asym_hz: Option<f64>,
    pub delta_omega_asym_rel: Option<f64>,
    pub phi_m_asym_rad: Option<f64>,
    pub phi_s_rad: Option<f64>,
    pub delta_phi_rad: Option<f64>,
    pub delta_omega_x_hz: Option<f64>,
    pub delta_omega_z_rel: Option<f64>,
}

impl ControlErrorsConfig {
    pub fn to_core(self) -> ControlErrors {
        let ang = |v: Option<f64>| v.map(|x| TWO_PI * x);
        ControlErrors {
            delta_mu: ang(self.delta_mu_hz),
            delta_omega_rel: self.delta_omega_rel,
            delta_tau: self.delta_tau_s,
            delta_mu_asym: ang(self.delta_mu_asym_hz),
            delta_omega_asym_rel: self.delta_omega_asym_rel,
            phi_m_asym: self.phi_m_asym_rad,
            phi_s: self.phi_s_rad,
            delta_phi: self.delta_phi_rad,
            delta_omega_x: ang(self.delta_omega_x_hz),
            delta_omega_z_rel: self.delta_omega_z_rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Contiguous,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatSection {
    #[serde(default = "default_repeat_count")]
    pub count: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_starts")]
    pub starts: StartMode,
}

impl Default for RepeatSection {
    fn default() -> Self {
        toml::from_str("").expect("repeat defaults")
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_rabi_cap() -> f64 {
    1e6
}
fn default_n_seg() -> Vec<usize> {
    vec![10, 17, 24]
}
fn default_tau() -> Vec<f64> {
    vec![80.4e-6, 250e-6, 482e-6]
}
fn default_mu_min() -> f64 {
    0.99
}
fn default_mu_max() -> f64 {
    1.01
}
fn default_mu_step() -> f64 {
    200.0
}
fn default_max_infidelity() -> f64 {
    1e-3
}
fn default_wp_span() -> f64 {
    2e3
}
fn default_wp_step() -> f64 {
    50.0
}
fn default_box_points() -> usize {
    9
}
fn default_box_phases() -> usize {
    8
}
fn default_rounds() -> usize {
    12
}
fn default_iterations() -> usize {
    40
}
fn default_detuning_hz() -> f64 {
    1e3
}
fn default_intensity_rel() -> f64 {
    0.01
}
fn default_duration() -> f64 {
    0.4e-6
}
fn default_scan_points() -> usize {
    21
}
fn default_scan_phases() -> usize {
    32
}
fn default_repeat_count() -> usize {
    20
}
fn default_draws() -> usize {
    64
}
fn default_starts() -> StartMode {
    StartMode::Random
}

/// Parsed config plus the SHA-256 of the bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// TOML unless the extension is `.json`.
pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
    let config = parse(text, path.extension().is_some_and(|e| e == "json"))?;
    Ok(LoadedConfig {
        config,
        sha256: sha256_hex(&bytes),
    })
}

pub fn parse(text: &str, json: bool) -> CliResult<RunConfig> {
    let config: RunConfig = if json {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
    };
    config.validate()?;
    Ok(config)
}

fn invalid(field: &str, why: &str) -> CliError {
    CliError::Config(format!("{field}: {why}"))
}

fn positive(field: &str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, &format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let t = &self.trap;
        if t.n_ions < 2 {
            return Err(invalid("trap.n_ions", "at least 2 ions are required"));
        }
        positive("trap.omega_x_hz", t.omega_x_hz)?;
        if let Some(v) = t.omega_y_hz {
            positive("trap.omega_y_hz", v)?;
        }
        if let Some(v) = t.mass_amu {
            positive("trap.mass_amu", v)?;
        }
        positive("trap.charge_e", t.charge_e)?;
        if let Some(v) = t.omega_rf_hz {
            positive("trap.omega_rf_hz", v)?;
        }
        match t.axial {
            AxialConfig::Quartic { l0_m, gamma4 } => {
                positive("trap.axial.l0_m", l0_m)?;
                positive("trap.axial.gamma4", gamma4)?;
            }
            AxialConfig::Harmonic { omega_z_hz } => positive("trap.axial.omega_z_hz", omega_z_hz)?,
        }
        let b = &self.beam;
        positive("beam.wavelength_m", b.wavelength_m)?;
        positive("beam.wavevector_factor", b.wavevector_factor)?;
        positive("beam.single_photon_detuning_hz", b.single_photon_detuning_hz)?;
        positive("beam.beam_width_m", b.beam_width_m)?;
        positive("beam.intensity_ratio", b.intensity_ratio)?;
        match (&self.thermal.n_bar, self.thermal.temperature_k) {
            (Some(_), Some(_)) => {
                return Err(invalid("thermal", "give either n_bar or temperature_k, not both"))
            }
            (None, None) => return Err(invalid("thermal", "one of n_bar or temperature_k is required")),
            (None, Some(k)) => positive("thermal.temperature_k", k)?,
            (Some(_), None) => {}
        }
        for (idx, p) in self.pairs.iter().enumerate() {
            let p = p.pinned();
            self.check_pair(p.ions).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("pairs[{idx}]: {m}")),
                other => other,
            })?;
            if p.n_seg == Some(0) {
                return Err(invalid(&format!("pairs[{idx}].n_seg"), "must be at least 1"));
            }
            if let Some(v) = p.tau_s {
                positive(&format!("pairs[{idx}].tau_s"), v)?;
            }
            if let Some(v) = p.mu_hz {
                positive(&format!("pairs[{idx}].mu_hz"), v)?;
            }
        }
        let d = &self.design;
        positive("design.rabi_cap_hz", d.rabi_cap_hz)?;
        if d.n_seg.is_empty() || d.n_seg.contains(&0) {
            return Err(invalid("design.n_seg", "needs at least one positive segment count"));
        }
        if d.tau_s.is_empty() {
            return Err(invalid("design.tau_s", "needs at least one gate time"));
        }
        for &tau in &d.tau_s {
            positive("design.tau_s", tau)?;
        }
        positive("design.mu_min_fraction", d.mu_min_fraction)?;
        if !(d.mu_max_fraction >= d.mu_min_fraction) {
            return Err(invalid("design.mu_max_fraction", "must be >= mu_min_fraction"));
        }
        positive("design.mu_step_hz", d.mu_step_hz)?;
        positive("design.max_design_infidelity", d.max_design_infidelity)?;
        positive("design.working_point_step_hz", d.working_point_step_hz)?;
        if !(d.working_point_span_hz >= 0.0) {
            return Err(invalid("design.working_point_span_hz", "must be >= 0"));
        }
        let s = &self.scan;
        for (f, v) in [("scan.detuning_hz", s.detuning_hz), ("scan.intensity_rel", s.intensity_rel), ("scan.duration_s", s.duration_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(f, "must be finite and >= 0"));
            }
        }
        if let Some(v) = self.budget.gate_rabi_hz {
            positive("budget.gate_rabi_hz", v)?;
        }
        if let Some(v) = self.budget.gate_tau_s {
            positive("budget.gate_tau_s", v)?;
        }
        if self.repeat.count == 0 {
            return Err(invalid("repeat.count", "must be at least 1"));
        }
        if self.repeat.draws == 0 {
            return Err(invalid("repeat.draws", "must be at least 1"));
        }
        Ok(())
    }

    /// 1-based, distinct, within the chain.
    pub fn check_pair(&self, ions: [usize; 2]) -> CliResult<(usize, usize)> {
        let [i, j] = ions;
        let n = self.trap.n_ions;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(CliError::Config(format!("ion indices are 1-based and at most {n}, got {i},{j}")));
        }
        if i == j {
            return Err(CliError::Config(format!("pair needs two distinct ions, got {i},{j}")));
        }
        Ok((i - 1, j - 1))
    }

    pub fn trap_spec(&self) -> TrapSpec {
        let t = &self.trap;
        let axial = match t.axial {
            AxialConfig::Quartic { l0_m, gamma4 } => AxialPotential::Quartic { l0: l0_m, gamma4 },
            AxialConfig::Harmonic { omega_z_hz } => AxialPotential::Harmonic { omega_z: TWO_PI * omega_z_hz },
        };
        let omega_x = TWO_PI * t.omega_x_hz;
        TrapSpec {
            n_ions: t.n_ions,
            mass: t.mass_amu.map_or_else(yb171_ion_mass, |m| m * ATOMIC_MASS_UNIT),
            charge: t.charge_e * ELEMENTARY_CHARGE,
            omega_x,
            omega_y: t.omega_y_hz.map_or(omega_x, |w| TWO_PI * w),
            axial,
            omega_rf: t.omega_rf_hz.map(|w| TWO_PI * w),
            q_param: t.q_param,
            window_trim: t.window_trim,
        }
    }

    /// 1/m
    pub fn delta_k(&self) -> f64 {
        self.beam.wavevector_factor * TWO_PI / self.beam.wavelength_m
    }

    pub fn beam_config(&self) -> BeamConfig {
        let b = &self.beam;
        let ang = |v: Option<f64>| v.map(|x| TWO_PI * x);
        BeamConfig {
            wavelength: b.wavelength_m,
            single_photon_detuning: TWO_PI * b.single_photon_detuning_hz,
            raw_rabi: b.raw_rabi_hz.map(|r| r.map(|x| TWO_PI * x)),
            beam_width: b.beam_width_m,
            intensity_ratio: b.intensity_ratio,
            gamma_e: ang(b.gamma_e_hz),
            omega_01: ang(b.omega_01_hz),
            two_photon_detuning: ang(b.two_photon_detuning_hz),
            stark_fraction: b.stark_fraction,
        }
    }

    pub fn thermal_spec(&self) -> ThermalSpec {
        match (&self.thermal.n_bar, self.thermal.temperature_k) {
            (Some(n), _) => ThermalSpec::MeanPhonon { n_bar: n.clone() },
            (None, Some(kelvin)) => ThermalSpec::Temperature { kelvin },
            (None, None) => ThermalSpec::default(),
        }
    }

    pub fn scan_box(&self) -> ScanBox {
        let s = &self.scan;
        let samples = s.phase_samples.max(1);
        ScanBox {
            detuning: TWO_PI * s.detuning_hz,
            intensity: s.intensity_rel,
            duration: s.duration_s,
            points: s.points,
            phases: (0..samples).map(|l| TWO_PI * l as f64 / samples as f64).collect(),
        }
    }

    pub fn pipeline(&self) -> DesignPipeline {
        let d = &self.design;
        let mut scan_box = ScanBox::requirement_box(d.box_points, d.box_phase_samples);
        scan_box.detuning = TWO_PI * self.scan.detuning_hz;
        scan_box.intensity = self.scan.intensity_rel;
        scan_box.duration = self.scan.duration_s;
        DesignPipeline {
            search: WorkingPointSearch {
                span: TWO_PI * d.working_point_span_hz,
                step: TWO_PI * d.working_point_step_hz,
                scan_box: scan_box.clone(),
            },
            refinement: d.robust.then(|| RobustRefinement {
                scan_box,
                rounds: d.refine_rounds,
                iterations: d.refine_iterations,
            }),
        }
    }

    pub fn pinned_for(&self, ions: [usize; 2]) -> Option<PinnedPair> {
        self.pairs
            .iter()
            .map(PairEntry::pinned)
            .find(|p| p.ions == ions || p.ions == [ions[1], ions[0]])
    }
}
