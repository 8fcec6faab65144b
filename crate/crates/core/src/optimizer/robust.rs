//! Amplitude refinement against the control-error box.
//!
//! The pencil solution only closes the phase-space loops at the nominal
//! parameters. This pass keeps the detuning fixed and reshapes the amplitudes
//! so the quadratic infidelity estimate stays small over sampled box points,
//! with per-sample weights updated towards the worst point.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{box_worst_case, mean_rescale_factor, GateModel, ScanBox, ScanParameter};
use crate::dynamics::{PulseSequence, SegmentTables};
use crate::error::{Error, Result};
use crate::fidelity::TargetSign;

/// Weight of both residual families in `1 - F ~ 0.8 (sum w |alpha|^2 + dTheta^2)`.
const QUADRATIC_WEIGHT: f64 = 0.8;
/// Fraction of the amplitude cap available to the refinement, leaving room
/// for the final rescale.
const HEADROOM: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRefinement {
    /// Box whose grid points and phases are used as samples.
    pub scan_box: ScanBox,
    /// Minimax reweighting rounds.
    pub rounds: usize,
    /// Damped Gauss-Newton iterations per round.
    pub iterations: usize,
}

impl Default for RobustRefinement {
    fn default() -> Self {
        RobustRefinement {
            scan_box: ScanBox::requirement_box(9, 8),
            rounds: 12,
            iterations: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedGate {
    pub pulse: PulseSequence,
    /// Mean-rotation rescale applied to the refined amplitudes.
    pub scale: f64,
    /// Sampled worst case before and after refinement.
    pub initial_worst: f64,
    pub worst_case: f64,
}

struct Sample {
    tables: SegmentTables,
    scale: f64,
}

fn samples(model: &GateModel, pulse: &PulseSequence, bx: &ScanBox) -> Vec<Sample> {
    let phases = if bx.phases.is_empty() { vec![0.0] } else { bx.phases.clone() };
    let mut specs = Vec::new();
    for &phi in &phases {
        specs.push((0.0, 0.0, 1.0, phi));
        for p in ScanParameter::ALL {
            for v in bx.grid(p).into_iter().filter(|v| *v != 0.0) {
                specs.push(match p {
                    ScanParameter::Detuning => (v, 0.0, 1.0, phi),
                    ScanParameter::Duration => (0.0, v, 1.0, phi),
                    ScanParameter::Intensity => (0.0, 0.0, 1.0 + v, phi),
                });
            }
        }
    }
    specs
        .into_par_iter()
        .map(|(dmu, dtau, scale, phi)| Sample {
            tables: SegmentTables::new(
                &model.couplings,
                pulse.mu + dmu,
                pulse.tau + dtau,
                pulse.n_seg(),
                [pulse.phi_m[0] + phi, pulse.phi_m[1] + phi],
                0.0,
            ),
            scale,
        })
        .collect()
}

/// Residual block of one sample and its Jacobian with respect to the amplitudes.
fn sample_block(
    s: &Sample,
    weights: &[f64],
    omegas: &DVector<f64>,
    target: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = omegas.len();
    let n_modes = weights.len();
    let rows = 4 * n_modes + 1;
    let mut r = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, n);
    let mut row = 0;
    for ion in 0..2 {
        let a = &s.tables.a[ion];
        for k in 0..n_modes {
            let w = (QUADRATIC_WEIGHT * weights[k]).sqrt() * s.scale;
            let mut alpha = num_complex::Complex64::new(0.0, 0.0);
            for q in 0..n {
                alpha += a[(k, q)] * omegas[q];
                jac[(row, q)] = w * a[(k, q)].re;
                jac[(row + 1, q)] = w * a[(k, q)].im;
            }
            r[row] = w * alpha.re;
            r[row + 1] = w * alpha.im;
            row += 2;
        }
    }
    let g = &s.tables.gamma_lower;
    let gs = g + g.transpose();
    let s2 = s.scale * s.scale;
    let c = QUADRATIC_WEIGHT.sqrt();
    r[row] = c * (s2 * omegas.dot(&(g * omegas)) - target);
    let grad = &gs * omegas * (c * s2);
    jac.row_mut(row).copy_from(&grad.transpose());
    (r, jac)
}

/// Weighted normal equations `J^T U J`, `J^T U r` and cost `r^T U r`
/// in the bounded coordinates `omega = cap sin x`.
fn normal_equations(
    samples: &[Sample],
    u: &[f64],
    weights: &[f64],
    x: &DVector<f64>,
    cap: f64,
    target: f64,
) -> (DMatrix<f64>, DVector<f64>, f64, Vec<f64>) {
    let omegas = x.map(|v| cap * v.sin());
    let chain = x.map(|v| cap * v.cos());
    let n = x.len();
    let blocks: Vec<(DMatrix<f64>, DVector<f64>, f64)> = samples
        .par_iter()
        .map(|s| {
            let (r, mut jac) = sample_block(s, weights, &omegas, target);
            for (q, mut col) in jac.column_iter_mut().enumerate() {
                col *= chain[q];
            }
            (jac.tr_mul(&jac), jac.tr_mul(&r), r.norm_squared())
        })
        .collect();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);
    let mut cost = 0.0;
    let mut per_sample = Vec::with_capacity(blocks.len());
    for ((a, b, c), &w) in blocks.iter().zip(u) {
        jtj += a * w;
        jtr += b * w;
        cost += c * w;
        per_sample.push(*c);
    }
    (jtj, jtr, cost, per_sample)
}

fn weighted_cost(samples: &[Sample], u: &[f64], weights: &[f64], x: &DVector<f64>, cap: f64, target: f64) -> f64 {
    let omegas = x.map(|v| cap * v.sin());
    samples
        .par_iter()
        .zip(u)
        .map(|(s, w)| w * sample_block(s, weights, &omegas, target).0.norm_squared())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn levenberg_marquardt(
    samples: &[Sample],
    u: &[f64],
    weights: &[f64],
    mut x: DVector<f64>,
    cap: f64,
    target: f64,
    iterations: usize,
) -> (DVector<f64>, Vec<f64>) {
    let mut damping = 1e-3;
    let (mut jtj, mut jtr, mut cost, mut per_sample) = normal_equations(samples, u, weights, &x, cap, target);
    for _ in 0..iterations {
        let mut step = None;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += damping * jtj[(d, d)].max(1e-30);
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let trial = &x - chol.solve(&jtr);
            let trial_cost = weighted_cost(samples, u, weights, &trial, cap, target);
            if trial_cost < cost {
                damping = (damping / 3.0).max(1e-12);
                step = Some((trial, trial_cost));
                break;
            }
            damping *= 4.0;
        }
        let Some((trial, trial_cost)) = step else { break };
        let gain = (cost - trial_cost) / cost;
        x = trial;
        (jtj, jtr, cost, per_sample) = normal_equations(samples, u, weights, &x, cap, target);
        if gain < 1e-9 {
            break;
        }
    }
    (x, per_sample)
}

/// Reshape the amplitudes of `pulse` at its own detuning and duration to
/// minimize the worst sampled infidelity over `cfg.scan_box`. Each candidate
/// is rescaled so the phase-averaged rotation hits the target; the returned
/// pulse stays strictly below `cap` (rad/s).
pub fn refine_robust(
    model: &GateModel,
    pulse: &PulseSequence,
    target: TargetSign,
    cap: f64,
    cfg: &RobustRefinement,
) -> Result<RefinedGate> {
    if !(cap > 0.0) {
        return Err(Error::InvalidInput("refinement needs a positive amplitude cap".into()));
    }
    let bound = HEADROOM * cap;
    let mut start = pulse.clone();
    if start.max_amplitude() >= bound {
        start = start.scaled(0.99 * bound / start.max_amplitude());
    }
    let samples = samples(model, &start, &cfg.scan_box);
    let angle = target.angle();
    let mut x = DVector::from_iterator(start.n_seg(), start.omegas.iter().map(|w| (w / bound).asin()));
    let mut u = vec![1.0; samples.len()];

    let initial_worst = box_worst_case(model, pulse, target, &cfg.scan_box);
    let mut best = (pulse.max_amplitude() < cap).then(|| (initial_worst, 1.0, pulse.clone()));
    for _ in 0..cfg.rounds.max(1) {
        let (next, per_sample) =
            levenberg_marquardt(&samples, &u, &model.weights, x, bound, angle, cfg.iterations);
        x = next;
        let raw = PulseSequence {
            omegas: x.iter().map(|v| bound * v.sin()).collect(),
            ..start.clone()
        };
        let scale = mean_rescale_factor(model, &raw, target)
            .filter(|f| raw.max_amplitude() * f < cap)
            .unwrap_or(1.0);
        let candidate = raw.scaled(scale);
        let worst = box_worst_case(model, &candidate, target, &cfg.scan_box);
        if best.as_ref().map_or(true, |b| worst < b.0) {
            best = Some((worst, scale, candidate));
        }
        // Lawson update: shift weight towards the samples that are currently worst
        let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        if !(mean > 0.0) {
            break;
        }
        for (w, c) in u.iter_mut().zip(&per_sample) {
            *w *= c / mean;
        }
        let total: f64 = u.iter().sum();
        u.iter_mut().for_each(|w| *w *= samples.len() as f64 / total);
    }
    let (worst_case, scale, pulse) = best.expect("at least one refinement round");
    Ok(RefinedGate {
        pulse,
        scale,
        initial_worst,
        worst_case,
    })
}
