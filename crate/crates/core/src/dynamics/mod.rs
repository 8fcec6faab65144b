//! Spin-motion coupling coefficients of piecewise-constant pulses.
//!
//! For a pulse acting on an ion pair the propagator is characterised by the
//! residual phase-space displacements `alpha`, the second-order spin-phonon
//! terms `lambda`, the two-spin rotation angle `theta` and the neglected
//! carrier rotation.

pub mod integrals;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::crystal::ModeData;
use crate::error::{Error, Result};
use integrals::{cos_integral, sine_drive_integral, sine_drive_triangle};

/// Piecewise-constant amplitude pulse with equal-length segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PulseRepr", into = "PulseRepr")]
pub struct PulseSequence {
    /// s
    pub tau: f64,
    /// rad/s
    pub mu: f64,
    /// Effective two-photon Rabi frequency per segment, rad/s, signed.
    pub omegas: Vec<f64>,
    /// Motional phases of the two ions, rad.
    pub phi_m: [f64; 2],
    /// Spin phases of the two ions, rad.
    pub phi_s: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PulseRepr {
    n_seg: usize,
    tau_s: f64,
    mu_rad_s: f64,
    omegas_rad_s: Vec<f64>,
    #[serde(default)]
    phi_m: [f64; 2],
    #[serde(default)]
    phi_s: [f64; 2],
}

impl TryFrom<PulseRepr> for PulseSequence {
    type Error = Error;

    fn try_from(r: PulseRepr) -> Result<Self> {
        if r.n_seg != r.omegas_rad_s.len() {
            return Err(Error::InvalidInput(format!(
                "n_seg = {} but {} amplitudes given",
                r.n_seg,
                r.omegas_rad_s.len()
            )));
        }
        let p = PulseSequence {
            tau: r.tau_s,
            mu: r.mu_rad_s,
            omegas: r.omegas_rad_s,
            phi_m: r.phi_m,
            phi_s: r.phi_s,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<PulseSequence> for PulseRepr {
    fn from(p: PulseSequence) -> Self {
        PulseRepr {
            n_seg: p.omegas.len(),
            tau_s: p.tau,
            mu_rad_s: p.mu,
            omegas_rad_s: p.omegas,
            phi_m: p.phi_m,
            phi_s: p.phi_s,
        }
    }
}

impl PulseSequence {
    pub fn new(tau: f64, mu: f64, omegas: Vec<f64>) -> Self {
        PulseSequence {
            tau,
            mu,
            omegas,
            phi_m: [0.0; 2],
            phi_s: [0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omegas.is_empty() {
            return Err(Error::InvalidInput("pulse needs at least one segment".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.mu.is_finite() || self.omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("pulse contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn n_seg(&self) -> usize {
        self.omegas.len()
    }

    pub fn segment_duration(&self) -> f64 {
        self.tau / self.n_seg() as f64
    }

    pub fn max_amplitude(&self) -> f64 {
        self.omegas.iter().fold(0.0_f64, |a, w| a.max(w.abs()))
    }

    /// Amplitude at time `t` (zero outside `[0, tau)`).
    pub fn amplitude_at(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.tau {
            return 0.0;
        }
        let n = ((t / self.segment_duration()) as usize).min(self.n_seg() - 1);
        self.omegas[n]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.omegas.iter_mut().for_each(|w| *w *= factor);
        p
    }

    /// Same amplitudes with every segment stretched to total length `tau`.
    pub fn with_tau(&self, tau: f64) -> Self {
        PulseSequence { tau, ..self.clone() }
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        PulseSequence { mu, ..self.clone() }
    }

    pub fn with_motional_phases(&self, phi_m: [f64; 2]) -> Self {
        PulseSequence { phi_m, ..self.clone() }
    }

    /// The pulse repeated `times` times back to back.
    pub fn concatenated(&self, times: usize) -> Self {
        let mut omegas = Vec::with_capacity(self.n_seg() * times);
        for _ in 0..times {
            omegas.extend_from_slice(&self.omegas);
        }
        PulseSequence {
            tau: self.tau * times as f64,
            omegas,
            ..self.clone()
        }
    }
}

/// One transverse mode as seen by an ion pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoupling {
    /// rad/s
    pub omega: f64,
    /// `eta_k * b^k` for the two ions.
    pub coupling: [f64; 2],
}

/// Couplings of every mode to ions `pair.0` and `pair.1` (0-based chain indices).
pub fn pair_couplings(modes: &ModeData, pair: (usize, usize)) -> Result<Vec<ModeCoupling>> {
    let n = modes.vectors.nrows();
    if pair.0 >= n || pair.1 >= n || pair.0 == pair.1 {
        return Err(Error::InvalidInput(format!(
            "ion pair {pair:?} invalid for a chain of {n} ions"
        )));
    }
    Ok((0..modes.n_modes())
        .map(|k| ModeCoupling {
            omega: modes.omegas[k],
            coupling: [modes.coupling(pair.0, k), modes.coupling(pair.1, k)],
        })
        .collect())
}

/// Magnus-expansion coefficients of a pulse on an ion pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnusCoefficients {
    /// `alpha[ion][k]`, dimensionless displacement.
    pub alpha: [Vec<Complex64>; 2],
    /// `lambda[ion][k]`, rad.
    pub lambda: [Vec<f64>; 2],
    /// Two-spin rotation angle, rad.
    pub theta: f64,
    /// Neglected single-qubit carrier rotation per ion, rad.
    pub carrier_angle: [f64; 2],
}

/// Per-segment integrals for one pulse geometry.
///
/// Reused across amplitude vectors: `alpha` is linear and `theta` quadratic
/// in the amplitudes.
#[derive(Debug, Clone)]
pub struct SegmentTables {
    pub modes: Vec<ModeCoupling>,
    pub mu: f64,
    pub tau: f64,
    pub start: f64,
    pub phi_m: [f64; 2],
    /// `a[ion]` is `n_modes x n_seg`; `alpha = a * omegas`.
    pub a: [DMatrix<Complex64>; 2],
    /// `int cos(mu t + phi_m)` per ion and segment.
    pub cos_moments: [DVector<f64>; 2],
    /// Lower-triangular rotation matrix; `theta = omegas^T gamma_lower omegas`.
    pub gamma_lower: DMatrix<f64>,
}

impl SegmentTables {
    pub fn new(
        modes: &[ModeCoupling],
        mu: f64,
        tau: f64,
        n_seg: usize,
        phi_m: [f64; 2],
        start: f64,
    ) -> Self {
        let h = tau / n_seg as f64;
        let n_modes = modes.len();
        let minus_i = Complex64::new(0.0, -1.0);
        let mut a = [
            DMatrix::zeros(n_modes, n_seg),
            DMatrix::zeros(n_modes, n_seg),
        ];
        for (k, m) in modes.iter().enumerate() {
            for n in 0..n_seg {
                let t0 = start + n as f64 * h;
                for ion in 0..2 {
                    a[ion][(k, n)] = minus_i
                        * m.coupling[ion]
                        * sine_drive_integral(mu, m.omega, phi_m[ion], t0, h);
                }
            }
        }
        let cos_moments = [0, 1].map(|ion| {
            DVector::from_fn(n_seg, |n, _| {
                cos_integral(mu, phi_m[ion], start + n as f64 * h, h)
            })
        });

        let mut gamma_lower = DMatrix::zeros(n_seg, n_seg);
        for p in 0..n_seg {
            for q in 0..p {
                let mut acc = 0.0;
                for k in 0..n_modes {
                    acc += (a[0][(k, p)] * a[1][(k, q)].conj()
                        + a[1][(k, p)] * a[0][(k, q)].conj())
                    .im;
                }
                gamma_lower[(p, q)] = acc;
            }
            let t0 = start + p as f64 * h;
            let mut diag = 0.0;
            for m in modes {
                let weight = m.coupling[0] * m.coupling[1];
                if weight != 0.0 {
                    let k_ij = sine_drive_triangle(mu, m.omega, phi_m[0], phi_m[1], t0, h);
                    let k_ji = sine_drive_triangle(mu, m.omega, phi_m[1], phi_m[0], t0, h);
                    diag += weight * (k_ij.im + k_ji.im);
                }
            }
            gamma_lower[(p, p)] = diag;
        }

        SegmentTables {
            modes: modes.to_vec(),
            mu,
            tau,
            start,
            phi_m,
            a,
            cos_moments,
            gamma_lower,
        }
    }

    pub fn for_pulse(modes: &[ModeCoupling], pulse: &PulseSequence) -> Self {
        Self::new(modes, pulse.mu, pulse.tau, pulse.n_seg(), pulse.phi_m, 0.0)
    }

    pub fn n_seg(&self) -> usize {
        self.gamma_lower.nrows()
    }

    /// Symmetrized rotation matrix.
    pub fn gamma(&self) -> DMatrix<f64> {
        (&self.gamma_lower + self.gamma_lower.transpose()) * 0.5
    }

    pub fn alpha(&self, omegas: &[f64], ion: usize) -> Vec<Complex64> {
        let w = DVector::from_fn(omegas.len(), |n, _| Complex64::new(omegas[n], 0.0));
        (&self.a[ion] * w).iter().copied().collect()
    }

    pub fn theta(&self, omegas: &[f64]) -> f64 {
        let w = DVector::from_column_slice(omegas);
        w.dot(&(&self.gamma_lower * &w))
    }

    pub fn carrier(&self, omegas: &[f64], ion: usize) -> f64 {
        self.cos_moments[ion].as_slice().iter().zip(omegas).map(|(c, w)| c * w).sum()
    }

    pub fn lambda(&self, omegas: &[f64], ion: usize) -> Vec<f64> {
        let carrier = self.carrier(omegas, ion);
        self.modes
            .iter()
            .map(|m| m.coupling[ion] * m.coupling[ion] * carrier)
            .collect()
    }

    pub fn coefficients(&self, omegas: &[f64]) -> MagnusCoefficients {
        MagnusCoefficients {
            alpha: [self.alpha(omegas, 0), self.alpha(omegas, 1)],
            lambda: [self.lambda(omegas, 0), self.lambda(omegas, 1)],
            theta: self.theta(omegas),
            carrier_angle: [self.carrier(omegas, 0), self.carrier(omegas, 1)],
        }
    }

    /// Thermal residual matrix `Re sum_k (A_i^H A_i + A_j^H A_j) * weight_k`.
    pub fn residual_matrix(&self, thermal_weights: &[f64]) -> DMatrix<f64> {
        let n = self.n_seg();
        let mut m = DMatrix::zeros(n, n);
        for ion in 0..2 {
            let a = &self.a[ion];
            for k in 0..a.nrows() {
                let w = thermal_weights[k];
                for p in 0..n {
                    let ap = a[(k, p)].conj();
                    for q in p..n {
                        let v = w * (ap * a[(k, q)]).re;
                        m[(p, q)] += v;
                        if q != p {
                            m[(q, p)] += v;
                        }
                    }
                }
            }
        }
        m
    }
}

/// Row `A^k` for a single coupling `eta_k b^k` with zero motional phase.
pub fn alpha_row(omega: f64, coupling: f64, mu: f64, tau: f64, n_seg: usize) -> Vec<Complex64> {
    let mode = ModeCoupling {
        omega,
        coupling: [coupling, 0.0],
    };
    let h = tau / n_seg as f64;
    (0..n_seg)
        .map(|n| {
            Complex64::new(0.0, -1.0)
                * mode.coupling[0]
                * sine_drive_integral(mu, omega, 0.0, n as f64 * h, h)
        })
        .collect()
}

pub fn lambda_coeffs(pulse: &PulseSequence, modes: &[ModeCoupling], ion: usize) -> Vec<f64> {
    SegmentTables::for_pulse(modes, pulse).lambda(&pulse.omegas, ion)
}

/// Symmetrized rotation matrix for zero motional phases.
pub fn gamma_matrix(modes: &[ModeCoupling], mu: f64, tau: f64, n_seg: usize) -> DMatrix<f64> {
    SegmentTables::new(modes, mu, tau, n_seg, [0.0; 2], 0.0).gamma()
}

/// `int_0^tau Omega(t) cos(mu t + phi_m) dt` for ion `ion` of the pair.
pub fn carrier_angle(pulse: &PulseSequence, ion: usize) -> f64 {
    let h = pulse.segment_duration();
    pulse
        .omegas
        .iter()
        .enumerate()
        .map(|(n, w)| w * cos_integral(pulse.mu, pulse.phi_m[ion], n as f64 * h, h))
        .sum()
}

pub fn magnus_coefficients(pulse: &PulseSequence, modes: &[ModeCoupling]) -> MagnusCoefficients {
    SegmentTables::for_pulse(modes, pulse).coefficients(&pulse.omegas)
}

/// Repeated application of one pulse at the given start times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    /// s, sorted
    pub starts: Vec<f64>,
    pub pulse: PulseSequence,
}

impl GateSchedule {
    pub fn contiguous(pulse: PulseSequence, count: usize) -> Self {
        let starts = (0..count).map(|g| g as f64 * pulse.tau).collect();
        GateSchedule { starts, pulse }
    }

    pub fn validate(&self) -> Result<()> {
        self.pulse.validate()?;
        if self.starts.is_empty() {
            return Err(Error::InvalidInput("schedule has no gates".into()));
        }
        let slack = 1e-12 * self.pulse.tau;
        for (g, pair) in self.starts.windows(2).enumerate() {
            if pair[1] + slack < pair[0] + self.pulse.tau {
                return Err(Error::OverlappingGates {
                    index: g + 1,
                    start: pair[1],
                });
            }
        }
        Ok(())
    }
}

/// Accumulated coefficients together with the cross-gate rotation terms.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedGates {
    pub total: MagnusCoefficients,
    pub per_gate: Vec<MagnusCoefficients>,
    /// `cross[(g1, g2)]` for `g1 > g2`: rotation from gate `g1` acting after gate `g2`.
    pub cross: DMatrix<f64>,
}

pub fn accumulate_gates_detailed(
    schedule: &GateSchedule,
    modes: &[ModeCoupling],
) -> Result<AccumulatedGates> {
    schedule.validate()?;
    let pulse = &schedule.pulse;
    let per_gate: Vec<MagnusCoefficients> = schedule
        .starts
        .iter()
        .map(|&t| {
            SegmentTables::new(modes, pulse.mu, pulse.tau, pulse.n_seg(), pulse.phi_m, t)
                .coefficients(&pulse.omegas)
        })
        .collect();
    let count = per_gate.len();
    let n_modes = modes.len();
    let mut cross = DMatrix::zeros(count, count);
    for g1 in 0..count {
        for g2 in 0..g1 {
            let (a, b) = (&per_gate[g1].alpha, &per_gate[g2].alpha);
            cross[(g1, g2)] = (0..n_modes)
                .map(|k| (a[0][k] * b[1][k].conj() + a[1][k] * b[0][k].conj()).im)
                .sum();
        }
    }
    let mut total = MagnusCoefficients {
        alpha: [vec![Complex64::new(0.0, 0.0); n_modes], vec![Complex64::new(0.0, 0.0); n_modes]],
        lambda: [vec![0.0; n_modes], vec![0.0; n_modes]],
        theta: cross.sum(),
        carrier_angle: [0.0; 2],
    };
    for c in &per_gate {
        for ion in 0..2 {
            for k in 0..n_modes {
                total.alpha[ion][k] += c.alpha[ion][k];
                total.lambda[ion][k] += c.lambda[ion][k];
            }
            total.carrier_angle[ion] += c.carrier_angle[ion];
        }
        total.theta += c.theta;
    }
    Ok(AccumulatedGates {
        total,
        per_gate,
        cross,
    })
}

pub fn accumulate_gates(schedule: &GateSchedule, modes: &[ModeCoupling]) -> Result<MagnusCoefficients> {
    accumulate_gates_detailed(schedule, modes).map(|a| a.total)
}
