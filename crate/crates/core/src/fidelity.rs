//! Average gate fidelity of the XX gate under thermal motion.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, HBAR};
use crate::dynamics::{MagnusCoefficients, SegmentTables};
use crate::error::{Error, Result};

type C = Complex64;

/// Mean phonon occupation, either shared by all modes or given per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Occupation {
    Uniform(f64),
    PerMode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThermalSpec {
    Temperature { kelvin: f64 },
    MeanPhonon { n_bar: Occupation },
}

impl Default for ThermalSpec {
    fn default() -> Self {
        ThermalSpec::MeanPhonon {
            n_bar: Occupation::Uniform(0.5),
        }
    }
}

impl ThermalSpec {
    pub fn uniform(n_bar: f64) -> Self {
        ThermalSpec::MeanPhonon {
            n_bar: Occupation::Uniform(n_bar),
        }
    }

    /// Mean phonon number of each mode.
    pub fn mean_phonons(&self, omegas: &[f64]) -> Result<Vec<f64>> {
        let n: Vec<f64> = match self {
            ThermalSpec::Temperature { kelvin } => {
                if !(*kelvin > 0.0) {
                    return Err(Error::InvalidInput(format!("temperature must be positive, got {kelvin}")));
                }
                omegas
                    .iter()
                    .map(|w| 1.0 / (HBAR * w / (BOLTZMANN * kelvin)).exp_m1())
                    .collect()
            }
            ThermalSpec::MeanPhonon { n_bar: Occupation::Uniform(n) } => vec![*n; omegas.len()],
            ThermalSpec::MeanPhonon { n_bar: Occupation::PerMode(v) } => {
                if v.len() != omegas.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} occupations given for {} modes",
                        v.len(),
                        omegas.len()
                    )));
                }
                v.clone()
            }
        };
        if n.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput("mean phonon numbers must be finite and >= 0".into()));
        }
        Ok(n)
    }

    /// `coth(hbar w / 2 kT) = 2 n + 1` per mode.
    pub fn weights(&self, omegas: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .mean_phonons(omegas)?
            .into_iter()
            .map(|n| 2.0 * n + 1.0)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSign {
    Positive,
    Negative,
}

impl TargetSign {
    pub fn value(self) -> f64 {
        match self {
            TargetSign::Positive => 1.0,
            TargetSign::Negative => -1.0,
        }
    }

    pub fn of(theta: f64) -> Self {
        if theta < 0.0 {
            TargetSign::Negative
        } else {
            TargetSign::Positive
        }
    }

    /// Target rotation angle, `+-pi/4`.
    pub fn angle(self) -> f64 {
        self.value() * std::f64::consts::FRAC_PI_4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFactors {
    pub gamma_i: f64,
    pub gamma_j: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub epsilon: f64,
}

pub fn gamma_factors(coeffs: &MagnusCoefficients, weights: &[f64]) -> GammaFactors {
    let [ai, aj] = &coeffs.alpha;
    let mut s = [0.0_f64; 4];
    let mut epsilon = 0.0;
    for k in 0..ai.len() {
        let w = weights[k];
        s[0] += ai[k].norm_sqr() * w;
        s[1] += aj[k].norm_sqr() * w;
        s[2] += (ai[k] + aj[k]).norm_sqr() * w;
        s[3] += (ai[k] - aj[k]).norm_sqr() * w;
        epsilon += 2.0 * (ai[k] * aj[k].conj()).im;
    }
    let g = s.map(|x| (-2.0 * x).exp());
    GammaFactors {
        gamma_i: g[0],
        gamma_j: g[1],
        gamma_plus: g[2],
        gamma_minus: g[3],
        epsilon,
    }
}

/// Closed-form average fidelity against `exp(+-i pi/4 sx sx)`.
pub fn avg_fidelity_exact(coeffs: &MagnusCoefficients, weights: &[f64], target: TargetSign) -> f64 {
    let g = gamma_factors(coeffs, weights);
    let s = target.value();
    let two_theta = 2.0 * coeffs.theta;
    (4.0 + s * 2.0 * g.gamma_i * (two_theta + g.epsilon).sin()
        + s * 2.0 * g.gamma_j * (two_theta - g.epsilon).sin()
        + g.gamma_plus
        + g.gamma_minus)
        / 10.0
}

/// Quadratic approximation `1 - (4/5) w^T M w` and the matrix `M`.
pub fn avg_fidelity_approx(
    omegas: &[f64],
    tables: &SegmentTables,
    weights: &[f64],
) -> (f64, DMatrix<f64>) {
    let m = tables.residual_matrix(weights);
    let w = nalgebra::DVector::from_column_slice(omegas);
    let cost = w.dot(&(&m * &w));
    (1.0 - 0.8 * cost, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResidual {
    pub mode: usize,
    /// rad/s
    pub omega: f64,
    pub alpha_i_sq: f64,
    pub alpha_j_sq: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub f_exact: f64,
    pub f_approx: f64,
    pub factors: GammaFactors,
    pub theta: f64,
    pub target: TargetSign,
    pub per_mode: Vec<ModeResidual>,
}

impl FidelityReport {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.f_exact
    }
}

pub fn fidelity_report(
    coeffs: &MagnusCoefficients,
    omegas: &[f64],
    weights: &[f64],
    target: TargetSign,
) -> FidelityReport {
    let per_mode: Vec<ModeResidual> = (0..omegas.len())
        .map(|k| ModeResidual {
            mode: k,
            omega: omegas[k],
            alpha_i_sq: coeffs.alpha[0][k].norm_sqr(),
            alpha_j_sq: coeffs.alpha[1][k].norm_sqr(),
            weight: weights[k],
        })
        .collect();
    let cost: f64 = per_mode
        .iter()
        .map(|r| (r.alpha_i_sq + r.alpha_j_sq) * r.weight)
        .sum();
    FidelityReport {
        f_exact: avg_fidelity_exact(coeffs, weights, target),
        f_approx: 1.0 - 0.8 * cost,
        factors: gamma_factors(coeffs, weights),
        theta: coeffs.theta,
        target,
        per_mode,
    }
}

/// Two-qubit density matrix in the `|++>, |+->, |-+>, |-->` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix4(pub Matrix4<C>);

impl DensityMatrix4 {
    pub fn trace(&self) -> C {
        self.0.trace()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (self.0 - self.0.adjoint()).iter().all(|z| z.norm() <= tol)
    }
}

/// Change of basis between computational and `|+-,+->` two-qubit bases (self-inverse).
pub fn hadamard_pair() -> Matrix4<C> {
    let h = Matrix2::new(1.0, 1.0, 1.0, -1.0) * std::f64::consts::FRAC_1_SQRT_2;
    let hh = h.kronecker(&h);
    hh.map(|x| C::new(x, 0.0))
}

/// Multiplicative pattern applied elementwise to `rho0`.
fn damping_pattern(coeffs: &MagnusCoefficients, weights: &[f64], include_lambda: bool) -> Matrix4<C> {
    let g = gamma_factors(coeffs, weights);
    let lam = |si: f64, sj: f64| -> C {
        if !include_lambda {
            return C::new(1.0, 0.0);
        }
        let s: f64 = (0..weights.len())
            .map(|k| (si * coeffs.lambda[0][k] + sj * coeffs.lambda[1][k]) * weights[k])
            .sum();
        C::new(1.0, s)
    };
    let (li, lj, lp, lm) = (lam(1.0, 0.0), lam(0.0, 1.0), lam(1.0, 1.0), lam(1.0, -1.0));
    let ph = |x: f64| C::from_polar(1.0, x);
    let t2 = 2.0 * coeffs.theta;
    let e = g.epsilon;
    let one = C::new(1.0, 0.0);
    let a01 = lj * g.gamma_j * ph(t2 - e);
    let a02 = li * g.gamma_i * ph(t2 + e);
    let a03 = lp * g.gamma_plus;
    let a12 = lm * g.gamma_minus;
    let a13 = li * g.gamma_i * ph(-t2 - e);
    let a23 = lj * g.gamma_j * ph(-t2 + e);
    Matrix4::new(
        one, a01, a02, a03,
        a01.conj(), one, a12, a13,
        a02.conj(), a12.conj(), one, a23,
        a03.conj(), a13.conj(), a23.conj(), one,
    )
}

/// Apply the gate channel to `rho0` (given in the `|+-,+->` basis).
pub fn final_density_matrix(
    rho0: &Matrix4<C>,
    coeffs: &MagnusCoefficients,
    weights: &[f64],
    include_lambda: bool,
) -> DensityMatrix4 {
    DensityMatrix4(rho0.component_mul(&damping_pattern(coeffs, weights, include_lambda)))
}

fn pauli(index: usize) -> Matrix2<C> {
    let z = C::new(0.0, 0.0);
    let o = C::new(1.0, 0.0);
    let i = C::new(0.0, 1.0);
    match index {
        0 => Matrix2::new(o, z, z, o),
        1 => Matrix2::new(z, o, o, z),
        2 => Matrix2::new(z, -i, i, z),
        _ => Matrix2::new(o, z, z, -o),
    }
}

/// Average gate fidelity of a linear map against the unitary `ideal`.
pub fn avg_fidelity_from_channel<F>(channel: F, ideal: &Matrix4<C>) -> f64
where
    F: Fn(&Matrix4<C>) -> Matrix4<C>,
{
    let d = 4.0;
    let mut sum = C::new(0.0, 0.0);
    for a in 0..4 {
        for b in 0..4 {
            let w = pauli(a).kronecker(&pauli(b));
            let mapped = channel(&w);
            sum += (ideal * w.adjoint() * ideal.adjoint() * mapped).trace();
        }
    }
    (sum.re + d * d) / (d * d * (d + 1.0))
}

/// `exp(i angle P)` for an involutory `P`.
pub fn involution_exp(p: &Matrix4<C>, angle: f64) -> Matrix4<C> {
    Matrix4::identity() * C::new(angle.cos(), 0.0) + p * C::new(0.0, angle.sin())
}

/// `sigma_n = cos(phi) sx + sin(phi) sy`.
pub fn rotated_pauli(phi: f64) -> Matrix2<C> {
    pauli(1) * C::new(phi.cos(), 0.0) + pauli(2) * C::new(phi.sin(), 0.0)
}

/// Ideal gate `exp(i angle sx sx)` in the computational basis.
pub fn ideal_xx(angle: f64) -> Matrix4<C> {
    involution_exp(&pauli(1).kronecker(&pauli(1)), angle)
}

/// Average fidelity of the Magnus channel against `exp(i angle sx sx)` for
/// an arbitrary angle, evaluated in the `|+->` basis where both are diagonal.
pub fn avg_fidelity_at_angle(coeffs: &MagnusCoefficients, weights: &[f64], angle: f64, include_lambda: bool) -> f64 {
    let ph = |x: f64| C::from_polar(1.0, x);
    let ideal = Matrix4::from_diagonal(&nalgebra::Vector4::new(ph(angle), ph(-angle), ph(-angle), ph(angle)));
    avg_fidelity_from_channel(|r| final_density_matrix(r, coeffs, weights, include_lambda).0, &ideal)
}

/// Small-angle infidelity from spin-phase offsets.
pub fn spin_phase_infidelity(phi_i: f64, phi_j: f64) -> f64 {
    0.4 * (phi_i * phi_i + phi_j * phi_j)
}

/// Exact channel infidelity of the XX gate with rotated spin axes.
pub fn spin_phase_channel_infidelity(phi_i: f64, phi_j: f64) -> f64 {
    let p = rotated_pauli(phi_i).kronecker(&rotated_pauli(phi_j));
    let u = involution_exp(&p, std::f64::consts::FRAC_PI_4);
    let ideal = ideal_xx(std::f64::consts::FRAC_PI_4);
    1.0 - avg_fidelity_from_channel(|r| u * r * u.adjoint(), &ideal)
}
