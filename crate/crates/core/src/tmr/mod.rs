//! Temporal motion retargeting: Bayesian optimisation of the time-warp
//! parameters, scoring each candidate by how well a DDP tracker on the
//! single-rigid-body plant reproduces the warped motion.

mod gp;
mod tracking;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{ei_acquire, expected_improvement, gp_fit, matern52, next_alpha, to_log2, GpHyper, GpModel};
pub use tracking::{euler, TrackingProblem, TrackingWeights, WarpedTargets};

use crate::ddp::{solve_ocp, DdpOptions, OcpSolution};
use crate::dynamics::{DynControl, DynState};
use crate::error::{Error, Result};
use crate::kinematics::{motion_from_configs, track_feet, GeneralizedCoord};
use crate::metrics::contact_iou;
use crate::motion::{BasePose, ContactFlags, Motion, TemporalParams, DEFAULT_HEIGHT_TOLERANCE, NUM_FEET};
use crate::robot::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub w_c: f64,
    pub w_reg: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { w_c: 1.0, w_reg: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParts {
    /// Mean per-step L1 base position error (m).
    pub d_b: f64,
    /// Mean per-step L1 roll/pitch/yaw error (rad).
    pub d_e: f64,
    pub iou: f64,
    /// `Σ (log2 α_s)²`.
    pub extremeness: f64,
    pub score: f64,
}

/// Contact schedule realised by a trajectory: feet within the height
/// tolerance of `floor` and slower than 0.1 m/s.
pub fn achieved_contacts(states: &[DynState], dt: f64, floor: f64) -> Vec<ContactFlags> {
    let n = states.len();
    (0..n)
        .map(|k| {
            std::array::from_fn(|leg| {
                let p = states[k].foot_pos[leg];
                let back = (k > 0).then(|| (p - states[k - 1].foot_pos[leg]).norm() / dt);
                let fwd = (k + 1 < n).then(|| (states[k + 1].foot_pos[leg] - p).norm() / dt);
                let speed = match (back, fwd) {
                    (Some(a), Some(b)) => a.min(b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => 0.0,
                };
                p.z - floor < DEFAULT_HEIGHT_TOLERANCE && speed < 0.1
            })
        })
        .collect()
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// `−d_b − d_E + w_c·IoU − w_reg·Σ(log2 α)²` of `states` against `targets`.
pub fn score_states(
    states: &[DynState],
    targets: &WarpedTargets,
    alpha: &TemporalParams,
    w: &ScoreWeights,
) -> ScoreParts {
    let n = states.len() as f64;
    let mut d_b = 0.0;
    let mut d_e = 0.0;
    for (x, t) in states.iter().zip(&targets.states) {
        d_b += (x.base_pos - t.base_pos).abs().sum();
        d_e += (euler(&x.base_quat) - euler(&t.base_quat)).map(wrap).abs().sum();
    }
    d_b /= n;
    d_e /= n;
    let floor = targets
        .states
        .iter()
        .flat_map(|s| s.foot_pos.iter().map(|p| p.z))
        .fold(f64::INFINITY, f64::min);
    let iou = contact_iou(&targets.contacts, &achieved_contacts(states, targets.dt, floor));
    let extremeness: f64 = alpha.alphas.iter().map(|a| a.log2().powi(2)).sum();
    ScoreParts {
        d_b,
        d_e,
        iou,
        extremeness,
        score: -d_b - d_e + w.w_c * iou - w.w_reg * extremeness,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub alphas: Vec<f64>,
    /// `−∞` when the tracker diverged.
    pub score: f64,
    pub parts: Option<ScoreParts>,
    pub cost: f64,
    /// Largest per-step constraint violation norm (N).
    pub max_violation: f64,
    pub converged: bool,
    pub dt: f64,
    #[serde(skip)]
    pub solution: Option<OcpSolution>,
}

impl Evaluation {
    pub fn diverged(&self) -> bool {
        !self.score.is_finite()
    }

    pub fn states(&self) -> Vec<DynState> {
        self.solution
            .as_ref()
            .map(|s| s.states.iter().map(DynState::from_vector).collect())
            .unwrap_or_default()
    }

    pub fn controls(&self) -> Vec<DynControl> {
        self.solution
            .as_ref()
            .map(|s| s.controls.iter().map(DynControl::from_vector).collect())
            .unwrap_or_default()
    }
}

/// Runs the tracker on `motion` warped by `alpha` and scores the result.
pub fn score(
    alpha: &TemporalParams,
    motion: &Motion,
    model: &RobotModel,
    weights: &ScoreWeights,
    tracking: &TrackingWeights,
    ddp: &DdpOptions,
) -> Result<Evaluation> {
    let targets = WarpedTargets::new(model, motion, alpha)?;
    let dt = targets.dt;
    let problem = TrackingProblem::new(model, targets, *tracking);
    let sol = match solve_ocp(&problem, &problem.balance_controls(), ddp) {
        Ok(sol) => sol,
        Err(Error::Diverged(_)) => {
            return Ok(Evaluation {
                alphas: alpha.alphas.clone(),
                score: f64::NEG_INFINITY,
                parts: None,
                cost: f64::INFINITY,
                max_violation: f64::INFINITY,
                converged: false,
                dt,
                solution: None,
            })
        }
        Err(e) => return Err(e),
    };
    let states: Vec<DynState> = sol.states.iter().map(DynState::from_vector).collect();
    let parts = score_states(&states, &problem.targets, alpha, weights);
    let max_violation = sol
        .controls
        .iter()
        .enumerate()
        .map(|(k, u)| problem.penalty(k, u).sqrt())
        .fold(0.0, f64::max);
    Ok(Evaluation {
        alphas: alpha.alphas.clone(),
        score: parts.score,
        parts: Some(parts),
        cost: sol.cost(),
        max_violation,
        converged: sol.converged,
        dt,
        solution: Some(sol),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TmrOptions {
    pub segments: usize,
    pub bounds: (f64, f64),
    /// Warm-start evaluations, including the identity warp.
    pub n_warm: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub score: ScoreWeights,
    pub tracking: TrackingWeights,
    pub ddp: DdpOptions,
    pub gp: GpHyper,
    pub xi: f64,
    pub n_restarts: usize,
}

impl Default for TmrOptions {
    fn default() -> Self {
        Self {
            segments: 1,
            bounds: TemporalParams::DEFAULT_BOUNDS,
            n_warm: 8,
            n_iter: 12,
            seed: 0,
            score: ScoreWeights::default(),
            tracking: TrackingWeights::default(),
            ddp: DdpOptions::default(),
            gp: GpHyper::default(),
            xi: 0.01,
            n_restarts: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub warm: bool,
    pub alphas: Vec<f64>,
    pub score: f64,
    pub cost: f64,
    /// The tracker produced a finite result.
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TmrResult {
    pub best_alpha: TemporalParams,
    pub best: Evaluation,
    pub history: Vec<HistoryEntry>,
    /// Largest EI of the last acquisition; below 1e-6 the loop stopped early.
    pub last_ei: Option<f64>,
}

impl TmrResult {
    /// Best score seen after each evaluation.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::NEG_INFINITY, |best, h| {
                *best = best.max(h.score);
                Some(*best)
            })
            .collect()
    }
}

/// Nested temporal retargeting of an SMR result: identity warp plus random
/// warm-start samples, then GP/EI proposals, keeping the best score.
pub fn tmr(motion: &Motion, model: &RobotModel, opts: &TmrOptions) -> Result<TmrResult> {
    let (lo, hi) = opts.bounds;
    TemporalParams::new(vec![1.0f64.clamp(lo, hi); opts.segments.max(1)], opts.bounds)?;
    let (llo, lhi) = (lo.log2(), hi.log2());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut warm = vec![TemporalParams::new(
        vec![1.0f64.clamp(lo, hi); opts.segments],
        opts.bounds,
    )?];
    for _ in 1..opts.n_warm {
        let alphas = (0..opts.segments)
            .map(|_| if lhi > llo { rng.gen_range(llo..=lhi).exp2() } else { lo }.clamp(lo, hi))
            .collect();
        warm.push(TemporalParams::new(alphas, opts.bounds)?);
    }
    let evals: Vec<Evaluation> = warm
        .par_iter()
        .map(|a| score(a, motion, model, &opts.score, &opts.tracking, &opts.ddp))
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut best: Option<Evaluation> = None;
    let record = |e: Evaluation, warm: bool, history: &mut Vec<HistoryEntry>, best: &mut Option<Evaluation>| {
        history.push(HistoryEntry {
            iteration: history.len(),
            warm,
            alphas: e.alphas.clone(),
            score: e.score,
            cost: e.cost,
            accepted: !e.diverged(),
        });
        if !e.diverged() && best.as_ref().is_none_or(|b| e.score > b.score) {
            *best = Some(e);
        }
    };
    for e in evals {
        record(e, true, &mut history, &mut best);
    }

    let mut last_ei = None;
    for it in 0..opts.n_iter {
        let finite: Vec<f64> = history.iter().filter(|h| h.accepted).map(|h| h.score).collect();
        let Some(worst) = finite.iter().copied().reduce(f64::min) else {
            break;
        };
        let obs: Vec<(Vec<f64>, f64)> = history
            .iter()
            .map(|h| (h.alphas.clone(), if h.accepted { h.score } else { worst - 1.0 }))
            .collect();
        let gp = gp_fit(&obs, &opts.gp)?;
        let incumbent = best.as_ref().expect("a finite score exists");
        let (mu_best, _) = gp.predict(&incumbent.alphas);
        let (cand, ei) = next_alpha(
            &gp,
            opts.bounds,
            opts.segments,
            mu_best,
            opts.xi,
            opts.seed.wrapping_add(1 + it as u64),
            opts.n_restarts,
        )?;
        last_ei = Some(ei);
        if ei < 1e-6 {
            break;
        }
        let e = score(&cand, motion, model, &opts.score, &opts.tracking, &opts.ddp)?;
        record(e, false, &mut history, &mut best);
    }
    let best = best.ok_or_else(|| Error::Diverged("every temporal-parameter evaluation diverged".into()))?;
    Ok(TmrResult {
        best_alpha: TemporalParams::new(best.alphas.clone(), opts.bounds)?,
        best,
        history,
        last_ei,
    })
}

/// CSV of the evaluation history: iteration, phase, α components, score,
/// tracker cost, accepted flag.
pub fn history_csv(history: &[HistoryEntry]) -> String {
    let segments = history.first().map_or(0, |h| h.alphas.len());
    let mut out = String::from("iteration,phase");
    for s in 0..segments {
        out.push_str(&format!(",alpha_{s}"));
    }
    out.push_str(",score,ddp_cost,accepted\n");
    for h in history {
        out.push_str(&format!("{},{}", h.iteration, if h.warm { "warm" } else { "bo" }));
        for a in &h.alphas {
            out.push_str(&format!(",{a}"));
        }
        out.push_str(&format!(",{},{},{}\n", h.score, h.cost, h.accepted));
    }
    out
}

/// Whole-body motion from a tracked trajectory: base from the state, legs
/// by IK onto the tracked feet. Also returns the worst foot IK error.
pub fn solution_motion(
    model: &RobotModel,
    states: &[DynState],
    contacts: &[ContactFlags],
    dt: f64,
    q_init: &GeneralizedCoord,
) -> (Motion, f64) {
    let base: Vec<BasePose> = states
        .iter()
        .map(|s| BasePose {
            position: s.base_pos,
            orientation: s.base_quat,
        })
        .collect();
    let feet: Vec<[nalgebra::Vector3<f64>; NUM_FEET]> = states.iter().map(|s| s.foot_pos).collect();
    let (configs, residual) = track_feet(model, &base, &feet, q_init, 1e-6);
    let mut motion = motion_from_configs(model, 1.0 / dt, &configs);
    motion.contacts = Some(contacts.to_vec());
    (motion, residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{standing_motion, QuadrupedDims};

    #[test]
    fn standing_still_scores_contact_weight() {
        let model = QuadrupedDims::default().model();
        let m = standing_motion(&model, 0.3, 30.0, 16).unwrap();
        let w = ScoreWeights::default();
        let e = score(
            &TemporalParams::identity(1),
            &m,
            &model,
            &w,
            &TrackingWeights::default(),
            &DdpOptions::default(),
        )
        .unwrap();
        assert!(
            (e.score - w.w_c).abs() < 1e-9,
            "{:?} {} {}",
            e.parts,
            e.converged,
            e.cost
        );
        assert_eq!(e.max_violation, 0.0);
    }

    #[test]
    fn displaced_base_lowers_score_by_offset() {
        let model = QuadrupedDims::default().model();
        let m = standing_motion(&model, 0.3, 30.0, 10).unwrap();
        let alpha = TemporalParams::identity(1);
        let targets = WarpedTargets::new(&model, &m, &alpha).unwrap();
        let w = ScoreWeights::default();
        let exact = score_states(&targets.states, &targets, &alpha, &w);
        let shifted: Vec<DynState> = targets
            .states
            .iter()
            .map(|s| DynState {
                base_pos: s.base_pos + nalgebra::Vector3::new(0.1, 0.0, 0.0),
                ..s.clone()
            })
            .collect();
        let moved = score_states(&shifted, &targets, &alpha, &w);
        assert!((exact.score - moved.score - 0.1).abs() < 1e-12);
    }

    #[test]
    fn history_csv_layout() {
        let h = vec![HistoryEntry {
            iteration: 0,
            warm: true,
            alphas: vec![1.0, 1.5],
            score: 0.5,
            cost: 2.0,
            accepted: true,
        }];
        let csv = history_csv(&h);
        assert_eq!(
            csv,
            "iteration,phase,alpha_0,alpha_1,score,ddp_cost,accepted\n0,warm,1,1.5,0.5,2,true\n"
        );
    }
}
