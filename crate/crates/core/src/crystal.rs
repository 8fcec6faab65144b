//! Equilibrium configuration of a linear ion chain and its transverse normal modes.
//!
//! Equilibria are solved in scaled units: positions in units of the length scale
//! `l0` and energies in units of `k_e / l0`, where `k_e = q^2 / (4 pi eps0)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constants::{coulomb_strength, yb171_ion_mass, ELEMENTARY_CHARGE, HBAR};
use crate::error::{Error, Result};

const MAX_NEWTON_ITERATIONS: usize = 200;
const GRADIENT_TARGET: f64 = 1e-12;
const GRADIENT_ACCEPT: f64 = 1e-10;
const SEED_JITTER: f64 = 1e-6;
const GOLDEN_TOLERANCE: f64 = 1e-3;
const STABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxialPotential {
    /// Double-well `-a2 z^2/2 + a4 z^4/4`; `gamma4 = a4 l0^2 / a2`, `l0 = (k_e/a2)^(1/3)`.
    Quartic { l0: f64, gamma4: f64 },
    Harmonic { omega_z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    pub n_ions: usize,
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    /// rad/s
    pub omega_x: f64,
    /// rad/s
    pub omega_y: f64,
    pub axial: AxialPotential,
    /// rad/s
    pub omega_rf: Option<f64>,
    pub q_param: Option<f64>,
    /// Ions dropped at each end when computing spacing statistics.
    pub window_trim: usize,
}

impl TrapSpec {
    /// Singly charged 171Yb+ chain.
    pub fn yb171(n_ions: usize, omega_x: f64, axial: AxialPotential) -> Self {
        TrapSpec {
            n_ions,
            mass: yb171_ion_mass(),
            charge: ELEMENTARY_CHARGE,
            omega_x,
            omega_y: omega_x,
            axial,
            omega_rf: None,
            q_param: None,
            window_trim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions == 0 {
            return Err(Error::InvalidCount(0));
        }
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.mass, "mass")?;
        positive(self.charge, "charge")?;
        positive(self.omega_x, "omega_x")?;
        positive(self.omega_y, "omega_y")?;
        match self.axial {
            AxialPotential::Quartic { l0, gamma4 } => {
                positive(l0, "l0")?;
                positive(gamma4, "gamma4")?;
            }
            AxialPotential::Harmonic { omega_z } => positive(omega_z, "omega_z")?,
        }
        if let Some(w) = self.omega_rf {
            positive(w, "omega_rf")?;
        }
        Ok(())
    }

    /// Length unit of the scaled problem in metres.
    pub fn length_scale(&self) -> f64 {
        match self.axial {
            AxialPotential::Quartic { l0, .. } => l0,
            AxialPotential::Harmonic { omega_z } => {
                (coulomb_strength(self.charge) / (self.mass * omega_z * omega_z)).cbrt()
            }
        }
    }

    /// Mathieu q parameter, explicit or estimated from the RF drive.
    pub fn q(&self) -> Option<f64> {
        self.q_param.or_else(|| {
            self.omega_rf
                .map(|rf| 2.0 * std::f64::consts::SQRT_2 * self.omega_x / rf)
        })
    }

    /// Ion index range used for spacing statistics.
    pub fn central_window(&self) -> Range<usize> {
        let n = self.n_ions;
        if n > 2 * self.window_trim + 1 {
            self.window_trim..n - self.window_trim
        } else {
            0..n
        }
    }

    fn scaled_potential(&self) -> ScaledPotential {
        match self.axial {
            AxialPotential::Quartic { gamma4, .. } => ScaledPotential {
                quadratic: -1.0,
                quartic: gamma4,
            },
            AxialPotential::Harmonic { .. } => ScaledPotential {
                quadratic: 1.0,
                quartic: 0.0,
            },
        }
    }
}

/// `V(u) = sum(quadratic u^2/2 + quartic u^4/4) + sum_{i<j} 1/|u_i - u_j|`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaledPotential {
    pub quadratic: f64,
    pub quartic: f64,
}

impl ScaledPotential {
    pub fn value(&self, u: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            let u2 = ui * ui;
            v += 0.5 * self.quadratic * u2 + 0.25 * self.quartic * u2 * u2;
            for &uj in &u[i + 1..] {
                v += 1.0 / (ui - uj).abs();
            }
        }
        v
    }

    pub fn gradient(&self, u: &[f64]) -> DVector<f64> {
        let n = u.len();
        DVector::from_fn(n, |m, _| {
            let um = u[m];
            let mut g = self.quadratic * um + self.quartic * um * um * um;
            for (j, &uj) in u.iter().enumerate() {
                if j != m {
                    let d = um - uj;
                    g -= d.signum() / (d * d);
                }
            }
            g
        })
    }

    pub fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = u.len();
        let mut h = DMatrix::zeros(n, n);
        for m in 0..n {
            let mut diag = self.quadratic + 3.0 * self.quartic * u[m] * u[m];
            for j in 0..n {
                if j != m {
                    let c = 2.0 / (u[m] - u[j]).abs().powi(3);
                    diag += c;
                    h[(m, j)] = -c;
                }
            }
            h[(m, m)] = diag;
        }
        h
    }

    /// Half-width of the seed configuration.
    fn seed_span(&self, n: usize) -> f64 {
        if self.quadratic < 0.0 && self.quartic > 0.0 {
            (-self.quadratic / self.quartic).sqrt()
        } else {
            // rough harmonic-chain extent
            0.8 * (n as f64).powf(0.56)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingStats {
    /// m
    pub mean: f64,
    /// Population standard deviation over the mean.
    pub rsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crystal {
    /// m, ascending
    pub positions: Vec<f64>,
    pub scaled_positions: Vec<f64>,
    /// m
    pub length_scale: f64,
    pub window: (usize, usize),
    pub spacing: Option<SpacingStats>,
    /// Max-norm of the scaled gradient at the solution.
    pub residual: f64,
    pub iterations: usize,
}

impl Crystal {
    pub fn n_ions(&self) -> usize {
        self.positions.len()
    }
}

fn strictly_increasing(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] > w[0])
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Newton direction with eigenvalues replaced by their magnitudes so that
/// the step is a descent direction away from the minimum.
fn newton_direction(hessian: DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(hessian);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let floor = 1e-10 * scale.max(1e-300);
    let q = &eig.eigenvectors;
    let proj = q.transpose() * gradient;
    let scaled = DVector::from_fn(proj.len(), |k, _| {
        proj[k] / eig.eigenvalues[k].abs().max(floor)
    });
    -(q * scaled)
}

/// Solve for the equilibrium positions. `initial_guess` is in metres.
pub fn solve_equilibrium(spec: &TrapSpec, initial_guess: Option<&[f64]>) -> Result<Crystal> {
    spec.validate()?;
    let n = spec.n_ions;
    let potential = spec.scaled_potential();
    let length = spec.length_scale();

    let mut u: Vec<f64> = match initial_guess {
        Some(guess) => {
            if guess.len() != n || !strictly_increasing(guess) {
                return Err(Error::InvalidInput(
                    "initial guess must have n_ions strictly increasing entries".into(),
                ));
            }
            guess.iter().map(|z| z / length).collect()
        }
        None => seed_positions(&potential, n),
    };

    let mut iterations = 0;
    let mut grad = potential.gradient(&u);
    let mut gnorm = max_abs(&grad);
    while gnorm > GRADIENT_TARGET {
        if iterations == MAX_NEWTON_ITERATIONS {
            if gnorm < GRADIENT_ACCEPT {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                gradient: gnorm,
            });
        }
        iterations += 1;
        let dir = newton_direction(potential.hessian(&u), &grad);
        let v0 = potential.value(&u);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-14 {
            let cand: Vec<f64> = u.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            if strictly_increasing(&cand) {
                let g = potential.gradient(&cand);
                let gn = max_abs(&g);
                if potential.value(&cand) < v0 || gn < gnorm {
                    accepted = Some((cand, g, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, g, gn)) => {
                u = cand;
                grad = g;
                gnorm = gn;
            }
            None if gnorm < GRADIENT_ACCEPT => break,
            None => {
                return Err(Error::NonConvergence {
                    iterations,
                    gradient: gnorm,
                })
            }
        }
    }

    if potential.hessian(&u).cholesky().is_none() {
        return Err(Error::UnstableConfiguration);
    }

    let window = spec.central_window();
    let mut crystal = Crystal {
        positions: u.iter().map(|x| x * length).collect(),
        scaled_positions: u,
        length_scale: length,
        window: (window.start, window.end),
        spacing: None,
        residual: gnorm,
        iterations,
    };
    crystal.spacing = spacing_stats(&crystal, window).ok();
    Ok(crystal)
}

fn seed_positions(potential: &ScaledPotential, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![potential.seed_span(1) * if potential.quadratic < 0.0 { 1.0 } else { 0.0 }];
    }
    let span = potential.seed_span(n);
    let centre = 0.5 * (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = (i as f64 - centre) / centre;
            span * x + SEED_JITTER * x * x * x
        })
        .collect()
}

/// Mean and relative standard deviation of consecutive spacings inside `window`.
pub fn spacing_stats(crystal: &Crystal, window: Range<usize>) -> Result<SpacingStats> {
    let empty = Error::EmptyWindow {
        start: window.start,
        end: window.end,
    };
    if window.end > crystal.n_ions() || window.end < window.start + 2 {
        return Err(empty);
    }
    let spacings: Vec<f64> = crystal.positions[window]
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    let count = spacings.len() as f64;
    let mean = spacings.iter().sum::<f64>() / count;
    let var = spacings.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / count;
    Ok(SpacingStats {
        mean,
        rsd: var.sqrt() / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma4Optimum {
    pub gamma4: f64,
    pub rsd: f64,
    /// Set when the window holds a single spacing and RSD is identically zero.
    pub degenerate: bool,
}

fn rsd_for_gamma4(template: &TrapSpec, l0: f64, gamma4: f64) -> Result<f64> {
    let mut spec = template.clone();
    spec.axial = AxialPotential::Quartic { l0, gamma4 };
    let crystal = solve_equilibrium(&spec, None)?;
    Ok(spacing_stats(&crystal, spec.central_window())?.rsd)
}

/// Golden-section search for the quartic strength minimizing the spacing RSD.
pub fn optimize_gamma4(template: &TrapSpec, interval: (f64, f64)) -> Result<Gamma4Optimum> {
    let (mut a, mut b) = interval;
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidInput(format!(
            "gamma4 interval must be positive and ordered, got {interval:?}"
        )));
    }
    let l0 = match template.axial {
        AxialPotential::Quartic { l0, .. } => l0,
        AxialPotential::Harmonic { .. } => {
            return Err(Error::InvalidInput(
                "gamma4 optimization needs a quartic axial potential".into(),
            ))
        }
    };
    let window = template.central_window();
    if window.len() < 3 {
        return Ok(Gamma4Optimum {
            gamma4: 0.5 * (a + b),
            rsd: 0.0,
            degenerate: true,
        });
    }
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rsd_for_gamma4(template, l0, c)?;
    let mut fd = rsd_for_gamma4(template, l0, d)?;
    while b - a > GOLDEN_TOLERANCE {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rsd_for_gamma4(template, l0, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rsd_for_gamma4(template, l0, d)?;
        }
    }
    let gamma4 = 0.5 * (a + b);
    Ok(Gamma4Optimum {
        gamma4,
        rsd: rsd_for_gamma4(template, l0, gamma4)?,
        degenerate: false,
    })
}

/// Transverse (x) normal modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeData {
    /// rad/s, descending; index 0 is the centre-of-mass mode.
    pub omegas: Vec<f64>,
    /// Entry `(j, k)` is the participation of ion `j` in mode `k`.
    pub vectors: DMatrix<f64>,
    pub etas: Vec<f64>,
    /// Transverse Hessian divided by the ion mass, (rad/s)^2.
    pub dynamical_matrix: DMatrix<f64>,
}

impl ModeData {
    pub fn n_modes(&self) -> usize {
        self.omegas.len()
    }

    pub fn b(&self, ion: usize, mode: usize) -> f64 {
        self.vectors[(ion, mode)]
    }

    /// Coupling `eta_k * b_ion^k`.
    pub fn coupling(&self, ion: usize, mode: usize) -> f64 {
        self.etas[mode] * self.vectors[(ion, mode)]
    }
}

/// Lamb-Dicke parameter for wavevector difference `delta_k` (1/m).
pub fn lamb_dicke(delta_k: f64, mass: f64, omega: f64) -> f64 {
    delta_k * (HBAR / (2.0 * mass * omega)).sqrt()
}

/// Diagonalize the transverse dynamical matrix.
pub fn transverse_modes(spec: &TrapSpec, crystal: &Crystal, delta_k: f64) -> Result<ModeData> {
    let n = crystal.n_ions();
    let strength = coulomb_strength(spec.charge) / spec.mass;
    // Coulomb part as a graph Laplacian: exact zero row sums keep the
    // uniform vector an eigenvector at omega_x.
    let mut laplacian = DMatrix::zeros(n, n);
    for m in 0..n {
        for j in 0..n {
            if j != m {
                let k = strength / (crystal.positions[m] - crystal.positions[j]).abs().powi(3);
                laplacian[(m, j)] = -k;
                laplacian[(m, m)] += k;
            }
        }
    }
    let wx2 = spec.omega_x * spec.omega_x;
    let dynamical = DMatrix::from_diagonal_element(n, n, wx2) - &laplacian;

    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut omegas = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        let w2 = wx2 - eig.eigenvalues[idx];
        if w2 <= STABILITY_FLOOR * wx2 {
            return Err(Error::ZigzagInstability {
                mode: k,
                omega_sq: w2,
            });
        }
        omegas.push(w2.sqrt());
        let mut col = eig.eigenvectors.column(idx).into_owned();
        if orientation(col.as_slice()) < 0.0 {
            col = -col;
        }
        vectors.set_column(k, &col);
    }
    let etas = omegas
        .iter()
        .map(|&w| lamb_dicke(delta_k, spec.mass, w))
        .collect();
    Ok(ModeData {
        omegas,
        vectors,
        etas,
        dynamical_matrix: dynamical,
    })
}

/// Sign convention: component sum positive, else first significant entry positive.
fn orientation(v: &[f64]) -> f64 {
    let sum: f64 = v.iter().sum();
    if sum.abs() > 1e-9 {
        return sum;
    }
    v.iter().copied().find(|x| x.abs() > 1e-9).unwrap_or(1.0)
}

/// Axial normal-mode frequencies (rad/s), ascending.
pub fn axial_frequencies(spec: &TrapSpec, crystal: &Crystal) -> Vec<f64> {
    let potential = spec.scaled_potential();
    let scale = coulomb_strength(spec.charge) / (spec.mass * crystal.length_scale.powi(3));
    let mut eig: Vec<f64> = SymmetricEigen::new(potential.hessian(&crystal.scaled_positions))
        .eigenvalues
        .iter()
        .map(|&e| (e.max(0.0) * scale).sqrt())
        .collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Harmonic trap whose central-window mean spacing equals `target_spacing`.
pub fn harmonic_with_spacing(template: &TrapSpec, target_spacing: f64) -> Result<TrapSpec> {
    let mut spec = template.clone();
    spec.axial = AxialPotential::Harmonic { omega_z: 1.0 };
    let unit = solve_equilibrium(&spec, None)?;
    let stats = spacing_stats(&unit, spec.central_window())?;
    // spacing scales as omega_z^(-2/3)
    let omega_z = (stats.mean / target_spacing).powf(1.5);
    spec.axial = AxialPotential::Harmonic { omega_z };
    Ok(spec)
}

/// Harmonic-trap linear-chain threshold `0.77 N / sqrt(ln N)` on omega_x / omega_z.
pub fn linear_stability_ratio(n_ions: usize) -> Result<f64> {
    if n_ions < 2 {
        return Err(Error::InvalidCount(n_ions));
    }
    let n = n_ions as f64;
    Ok(0.77 * n / n.ln().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_spec() -> TrapSpec {
        TrapSpec::yb171(
            19,
            TWO_PI * 3e6,
            AxialPotential::Quartic {
                l0: 40e-6,
                gamma4: 4.3,
            },
        )
    }

    fn quartic(n: usize, gamma4: f64) -> TrapSpec {
        TrapSpec::yb171(n, TWO_PI * 3e6, AxialPotential::Quartic { l0: 40e-6, gamma4 })
    }

    #[test]
    fn single_ion_sits_at_turning_point() {
        let c = solve_equilibrium(&quartic(1, 4.3), None).unwrap();
        assert_relative_eq!(c.scaled_positions[0], 1.0 / 4.3_f64.sqrt(), epsilon = 1e-12);
        assert!(c.spacing.is_none());
    }

    #[test]
    fn two_ions_match_scalar_root() {
        // f(u) = -u + g u^3 - 1/(4u^2), bisection on [0.1, 3]
        let g = 4.3;
        let f = |u: f64| -u + g * u * u * u - 1.0 / (4.0 * u * u);
        let (mut lo, mut hi) = (0.1, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = solve_equilibrium(&quartic(2, g), None).unwrap();
        assert_relative_eq!(c.scaled_positions[1], lo, epsilon = 1e-10);
        assert_relative_eq!(c.scaled_positions[0], -lo, epsilon = 1e-10);
    }

    #[test]
    fn paper_chain_spacing() {
        let c = solve_equilibrium(&paper_spec(), None).unwrap();
        let s = c.spacing.unwrap();
        assert!((s.mean - 8.3e-6).abs() < 0.2e-6, "mean {}", s.mean);
        assert!((s.rsd - 0.023).abs() < 0.004, "rsd {}", s.rsd);
        assert!(c.residual < 1e-10);
    }

    #[test]
    fn harmonic_comparison_rsd() {
        let spec = paper_spec();
        let c = solve_equilibrium(&spec, None).unwrap();
        let target = c.spacing.unwrap().mean;
        let h = harmonic_with_spacing(&spec, target).unwrap();
        let hc = solve_equilibrium(&h, None).unwrap();
        let s = hc.spacing.unwrap();
        assert_relative_eq!(s.mean, target, max_relative = 1e-9);
        assert!((s.rsd - 0.112).abs() < 0.01, "rsd {}", s.rsd);
    }

    #[test]
    fn uniform_spacing_has_zero_rsd() {
        let c = Crystal {
            positions: vec![0.0, 1e-6, 2e-6],
            scaled_positions: vec![0.0, 1.0, 2.0],
            length_scale: 1e-6,
            window: (0, 3),
            spacing: None,
            residual: 0.0,
            iterations: 0,
        };
        let s = spacing_stats(&c, 0..3).unwrap();
        assert_eq!(s.rsd, 0.0);
        assert!(matches!(spacing_stats(&c, 1..2), Err(Error::EmptyWindow { .. })));
        assert!(matches!(spacing_stats(&c, 0..4), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn stability_ratio_values() {
        assert_relative_eq!(linear_stability_ratio(2).unwrap(), 1.849_729, epsilon = 1e-6);
        assert_relative_eq!(linear_stability_ratio(19).unwrap(), 8.525_955, epsilon = 1e-6);
        assert!(matches!(linear_stability_ratio(1), Err(Error::InvalidCount(1))));
    }

    #[test]
    fn gamma4_two_ions_degenerate() {
        let r = optimize_gamma4(&quartic(2, 1.0), (1.0, 10.0)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.gamma4, 5.5);
    }

    #[test]
    fn gamma4_five_ions_matches_grid() {
        let mut spec = quartic(5, 1.0);
        spec.window_trim = 0;
        let opt = optimize_gamma4(&spec, (1.0, 10.0)).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        let mut g = 1.0;
        while g <= 10.0 + 1e-9 {
            let r = rsd_for_gamma4(&spec, 40e-6, g).unwrap();
            if r < best.0 {
                best = (r, g);
            }
            g += 0.01;
        }
        assert!((opt.gamma4 - best.1).abs() < 0.02, "{} vs {}", opt.gamma4, best.1);
        assert!(opt.rsd <= best.0 + 1e-6);
    }

    #[test]
    fn gamma4_paper_chain() {
        let opt = optimize_gamma4(&paper_spec(), (1.0, 10.0)).unwrap();
        assert!((opt.gamma4 - 4.3).abs() < 0.1, "gamma4 {}", opt.gamma4);
    }

    #[test]
    fn paper_modes() {
        let spec = paper_spec();
        let c = solve_equilibrium(&spec, None).unwrap();
        let dk = 2.0 * TWO_PI / 355e-9;
        let m = transverse_modes(&spec, &c, dk).unwrap();
        assert_relative_eq!(m.omegas[0], spec.omega_x, max_relative = 1e-9);
        let uniform = 1.0 / (19.0_f64).sqrt();
        for j in 0..19 {
            assert_relative_eq!(m.b(j, 0), uniform, epsilon = 1e-9);
        }
        let spread = (m.omegas[0] - m.omegas[18]) / spec.omega_x;
        assert!(spread <= 0.009, "spread {spread}");
        for eta in &m.etas {
            assert!((eta - 0.111).abs() < 0.002, "eta {eta}");
        }
        let btb = m.vectors.transpose() * &m.vectors;
        assert!((btb - DMatrix::identity(19, 19)).amax() < 1e-10);
        let scale = m.dynamical_matrix.norm();
        for k in 0..19 {
            let b = m.vectors.column(k);
            let r = &m.dynamical_matrix * b - b * m.omegas[k].powi(2);
            assert!(r.norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zigzag_detected() {
        let mut spec = paper_spec();
        spec.omega_x = TWO_PI * 50e3;
        let c = solve_equilibrium(&spec, None).unwrap();
        assert!(matches!(
            transverse_modes(&spec, &c, 1.0),
            Err(Error::ZigzagInstability { .. })
        ));
    }

    #[test]
    fn rejects_bad_guess() {
        let spec = quartic(3, 4.3);
        assert!(matches!(
            solve_equilibrium(&spec, Some(&[0.0, -1e-6, 1e-6])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn explicit_guess_converges_to_same_state() {
        let spec = quartic(5, 4.3);
        let a = solve_equilibrium(&spec, None).unwrap();
        let guess: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 30e-6).collect();
        let b = solve_equilibrium(&spec, Some(&guess)).unwrap();
        for (x, y) in a.positions.iter().zip(&b.positions) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            n in 2usize..7,
            gamma4 in 0.5f64..8.0,
            seed in proptest::collection::vec(0.2f64..1.0, 7),
        ) {
            let pot = ScaledPotential { quadratic: -1.0, quartic: gamma4 };
            let mut u = Vec::with_capacity(n);
            let mut x = -1.5;
            for s in seed.iter().take(n) {
                x += s;
                u.push(x);
            }
            let g = pot.gradient(&u);
            let h = pot.hessian(&u);
            let step = 1e-6;
            for m in 0..n {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[m] += step;
                dn[m] -= step;
                let fd = (pot.value(&up) - pot.value(&dn)) / (2.0 * step);
                prop_assert!((fd - g[m]).abs() <= 1e-6 * g[m].abs().max(1.0));
                let gd = (pot.gradient(&up) - pot.gradient(&dn)) / (2.0 * step);
                for j in 0..n {
                    prop_assert!((gd[j] - h[(j, m)]).abs() <= 1e-6 * h[(j, m)].abs().max(1.0));
                }
            }
        }

        #[test]
        fn equilibrium_is_reflection_symmetric(n in 1usize..15, gamma4 in 1.0f64..8.0) {
            let c = solve_equilibrium(&quartic(n, gamma4), None).unwrap();
            if n > 1 {
                for i in 0..n {
                    prop_assert!((c.scaled_positions[i] + c.scaled_positions[n - 1 - i]).abs() < 1e-9);
                }
            }
            prop_assert!(c.residual < 1e-10);
        }

        #[test]
        fn scaled_solution_independent_of_l0(n in 2usize..12, l0 in 5e-6f64..1e-4) {
            let a = solve_equilibrium(&quartic(n, 4.3), None).unwrap();
            let mut spec = quartic(n, 4.3);
            spec.axial = AxialPotential::Quartic { l0, gamma4: 4.3 };
            let b = solve_equilibrium(&spec, None).unwrap();
            for (x, y) in a.scaled_positions.iter().zip(&b.scaled_positions) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn com_mode_at_trap_frequency(n in 2usize..20, gamma4 in 2.0f64..8.0) {
            let spec = quartic(n, gamma4);
            let c = solve_equilibrium(&spec, None).unwrap();
            let m = transverse_modes(&spec, &c, 1e7).unwrap();
            prop_assert!(((m.omegas[0] - spec.omega_x) / spec.omega_x).abs() < 1e-9);
        }
    }
}
