//! Error accumulation over repeated applications of one gate design.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::dynamics::{accumulate_gates_detailed, GateSchedule, PulseSequence};
use crate::error::{Error, Result};
use crate::fidelity::{avg_fidelity_at_angle, avg_fidelity_exact, TargetSign};
use crate::fit::{loglog_fit, LineFit};
use crate::optimizer::GateModel;

pub const DEFAULT_PHASE_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Starts {
    /// Each gate starts when the previous one ends.
    Contiguous,
    /// s
    Explicit { times: Vec<f64> },
    /// Gaps drawn uniformly from `[0, tau)`; curves are averaged over
    /// `draws` schedules, draw `d` using stream `d` of `seed`.
    Random { seed: u64, draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatPlan {
    pub count: usize,
    pub starts: Starts,
}

/// `T_0 = 0`, `T_{g+1} = T_g + tau + U(0, tau)`.
pub fn random_starts(count: usize, tau: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut t = 0.0;
    (0..count)
        .map(|g| {
            if g > 0 {
                t += tau + rng.gen_range(0.0..tau);
            }
            t
        })
        .collect()
}

fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

impl RepeatPlan {
    /// All schedules of the plan: one, or one per random draw.
    pub fn schedules(&self, pulse: &PulseSequence) -> Result<Vec<GateSchedule>> {
        if self.count == 0 {
            return Err(Error::InvalidCount(0));
        }
        let starts = match &self.starts {
            Starts::Contiguous => return Ok(vec![GateSchedule::contiguous(pulse.clone(), self.count)]),
            Starts::Explicit { times } => {
                if times.len() != self.count {
                    return Err(Error::InvalidInput(format!(
                        "{} start times for {} gates",
                        times.len(),
                        self.count
                    )));
                }
                vec![times.clone()]
            }
            Starts::Random { seed, draws } => {
                if *draws == 0 {
                    return Err(Error::InvalidCount(0));
                }
                (0..*draws as u64)
                    .map(|d| random_starts(self.count, pulse.tau, &mut draw_rng(*seed, d)))
                    .collect()
            }
        };
        starts
            .into_iter()
            .map(|starts| {
                let schedule = GateSchedule { starts, pulse: pulse.clone() };
                schedule.validate()?;
                Ok(schedule)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatistics {
    /// rad
    pub phases: Vec<f64>,
    pub theta: Vec<f64>,
    /// Infidelity from the displacements alone, with the rotation angle set
    /// to its target.
    pub residual_infidelity: Vec<f64>,
    pub theta_mean: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub residual_max: f64,
}

/// Rotation angle and residual-coupling infidelity over a uniform grid of
/// the common motional phase.
pub fn phase_statistics(model: &GateModel, pulse: &PulseSequence, target: TargetSign, samples: usize) -> PhaseStatistics {
    let samples = samples.max(1);
    let phases: Vec<f64> = (0..samples).map(|l| TWO_PI * l as f64 / samples as f64).collect();
    let (theta, residual_infidelity): (Vec<f64>, Vec<f64>) = phases
        .par_iter()
        .map(|&phi| {
            let shifted = pulse.with_motional_phases([pulse.phi_m[0] + phi, pulse.phi_m[1] + phi]);
            let mut coeffs = model.tables(&shifted).coefficients(&shifted.omegas);
            let theta = coeffs.theta;
            coeffs.theta = target.angle();
            (theta, 1.0 - avg_fidelity_exact(&coeffs, &model.weights, target))
        })
        .unzip();
    let fold = |f: fn(f64, f64) -> f64, init: f64, v: &[f64]| v.iter().cloned().fold(init, f);
    PhaseStatistics {
        theta_mean: theta.iter().sum::<f64>() / samples as f64,
        theta_min: fold(f64::min, f64::INFINITY, &theta),
        theta_max: fold(f64::max, f64::NEG_INFINITY, &theta),
        residual_max: fold(f64::max, 0.0, &residual_infidelity),
        phases,
        theta,
        residual_infidelity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatCurve {
    pub counts: Vec<usize>,
    /// Start times of the first schedule, s.
    pub starts: Vec<f64>,
    /// Mean over schedules.
    pub infidelity: Vec<f64>,
    /// Largest rotation picked up between two distinct gates, rad.
    pub max_cross_term: f64,
    /// Slope of log infidelity against log count.
    pub fit: Option<LineFit>,
}

/// Infidelity after each prefix of `g` gates against `exp(i g angle sx sx)`.
fn prefix_infidelities(model: &GateModel, schedule: &GateSchedule, angle: f64) -> Result<(Vec<f64>, f64)> {
    let acc = accumulate_gates_detailed(schedule, &model.couplings)?;
    let mut running = acc.per_gate[0].clone();
    let mut out = Vec::with_capacity(acc.per_gate.len());
    for (g, gate) in acc.per_gate.iter().enumerate() {
        if g > 0 {
            for ion in 0..2 {
                for k in 0..model.weights.len() {
                    running.alpha[ion][k] += gate.alpha[ion][k];
                    running.lambda[ion][k] += gate.lambda[ion][k];
                }
                running.carrier_angle[ion] += gate.carrier_angle[ion];
            }
            running.theta += gate.theta + (0..g).map(|h| acc.cross[(g, h)]).sum::<f64>();
        }
        out.push(1.0 - avg_fidelity_at_angle(&running, &model.weights, (g + 1) as f64 * angle, false));
    }
    let max_cross = acc.cross.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok((out, max_cross))
}

pub fn repeat_infidelity(model: &GateModel, pulse: &PulseSequence, target: TargetSign, plan: &RepeatPlan) -> Result<RepeatCurve> {
    let schedules = plan.schedules(pulse)?;
    let runs = schedules
        .par_iter()
        .map(|s| prefix_infidelities(model, s, target.angle()))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<usize> = (1..=plan.count).collect();
    let n = runs.len() as f64;
    let infidelity: Vec<f64> = (0..plan.count)
        .map(|g| runs.iter().map(|r| r.0[g]).sum::<f64>() / n)
        .collect();
    let xs: Vec<f64> = counts.iter().map(|&g| g as f64).collect();
    Ok(RepeatCurve {
        fit: loglog_fit(&xs, &infidelity),
        max_cross_term: runs.iter().map(|r| r.1).fold(0.0, f64::max),
        starts: schedules[0].starts.clone(),
        counts,
        infidelity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSpread {
    pub count: usize,
    /// Ensemble mean of `sum_k w_k |alpha_k|^2` summed over both ions.
    pub mean_weighted_norm: f64,
    /// Ensemble variance of the accumulated complex displacements,
    /// `E sum w |alpha - E alpha|^2`.
    pub variance: f64,
}

/// Spread of the accumulated displacements across `draws` random-start
/// schedules per count. Draw `d` uses stream `d` of the root seed, so the
/// result does not depend on thread scheduling.
pub fn displacement_spread(
    model: &GateModel,
    pulse: &PulseSequence,
    counts: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<DisplacementSpread>> {
    if draws < 2 {
        return Err(Error::InvalidCount(draws));
    }
    counts
        .iter()
        .map(|&count| {
            let totals: Vec<[Vec<Complex64>; 2]> = (0..draws as u64)
                .into_par_iter()
                .map(|d| {
                    let mut rng = draw_rng(seed, d);
                    let schedule = GateSchedule {
                        starts: random_starts(count, pulse.tau, &mut rng),
                        pulse: pulse.clone(),
                    };
                    accumulate_gates_detailed(&schedule, &model.couplings).map(|a| a.total.alpha)
                })
                .collect::<Result<_>>()?;
            let n_modes = model.weights.len();
            let n = draws as f64;
            let mut mean_norm = 0.0;
            let mut variance = 0.0;
            for ion in 0..2 {
                for k in 0..n_modes {
                    let w = model.weights[k];
                    let mean = totals.iter().map(|t| t[ion][k]).sum::<Complex64>() / n;
                    mean_norm += w * totals.iter().map(|t| t[ion][k].norm_sqr()).sum::<f64>() / n;
                    variance += w * totals.iter().map(|t| (t[ion][k] - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
                }
            }
            Ok(DisplacementSpread {
                count,
                mean_weighted_norm: mean_norm,
                variance,
            })
        })
        .collect()
}
