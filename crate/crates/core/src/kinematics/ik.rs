use nalgebra::{DMatrix, DVector, Vector3};

use super::{integrate, GeneralizedCoord, KinematicState};
use crate::motion::{BasePose, Keypoints, NUM_FEET, NUM_KEYPOINTS};
use crate::robot::RobotModel;

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    pub damping: f64,
    /// Stop once every weighted keypoint is within this distance (m).
    pub tolerance: f64,
    pub max_iter: usize,
    /// Largest tangent-space step per iteration (rad or m, infinity norm).
    pub max_step: f64,
    pub lock_base: bool,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 1e-4,
            tolerance: 1e-4,
            max_iter: 200,
            max_step: 0.3,
            lock_base: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IkResult {
    pub q: GeneralizedCoord,
    /// Largest error over keypoints with positive weight (m).
    pub residual: f64,
    pub iterations: usize,
}

fn errors(state: &KinematicState, targets: &Keypoints, weights: &[f64; NUM_KEYPOINTS]) -> (f64, f64) {
    let mut cost = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..NUM_KEYPOINTS {
        if weights[k] > 0.0 {
            let e = (targets[k] - state.keypoints[k]).norm();
            cost += weights[k] * e * e;
            worst = worst.max(e);
        }
    }
    (cost, worst)
}

pub fn ik(
    model: &RobotModel,
    targets: &Keypoints,
    weights: &[f64; NUM_KEYPOINTS],
    q_init: &GeneralizedCoord,
    lock_base: bool,
) -> IkResult {
    ik_with(
        model,
        targets,
        weights,
        q_init,
        &IkOptions {
            lock_base,
            ..Default::default()
        },
    )
}

/// Damped least squares on the weighted keypoint error with joint clamping
/// and step halving. Returns the lowest-cost iterate seen.
pub fn ik_with(
    model: &RobotModel,
    targets: &Keypoints,
    weights: &[f64; NUM_KEYPOINTS],
    q_init: &GeneralizedCoord,
    opts: &IkOptions,
) -> IkResult {
    let n = q_init.tangent_dim();
    let first = if opts.lock_base { 6 } else { 0 };
    let cols = n - first;
    let mut q = q_init.clone();
    let mut state = KinematicState::new(model, &q);
    let (mut cost, mut residual) = errors(&state, targets, weights);
    let mut iterations = 0;
    while residual >= opts.tolerance && iterations < opts.max_iter {
        iterations += 1;
        let mut h = DMatrix::<f64>::identity(cols, cols) * opts.damping;
        let mut g = DVector::<f64>::zeros(cols);
        for k in 0..NUM_KEYPOINTS {
            let w = weights[k];
            if w <= 0.0 {
                continue;
            }
            let jac = state.jacobian(model, k);
            let jk = jac.columns(first, cols);
            let e = targets[k] - state.keypoints[k];
            h += jk.transpose() * jk * w;
            g += jk.transpose() * e * w;
        }
        let Some(chol) = h.cholesky() else { break };
        let mut step = chol.solve(&g);
        let biggest = step.amax();
        if biggest > opts.max_step {
            step *= opts.max_step / biggest;
        }
        let mut full = DVector::zeros(n);
        full.rows_mut(first, cols).copy_from(&step);
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = integrate(&q, &full, 1.0);
            trial.clamp_to_limits(model);
            let trial_state = KinematicState::new(model, &trial);
            let (c, r) = errors(&trial_state, targets, weights);
            if c < cost {
                q = trial;
                state = trial_state;
                cost = c;
                residual = r;
                improved = true;
                break;
            }
            full *= 0.5;
        }
        if !improved {
            break;
        }
    }
    IkResult {
        q,
        residual,
        iterations,
    }
}

/// Joint configurations putting the base at each pose and the feet on the
/// given points, warm-started frame to frame from `q_init`. Returns the
/// configurations and the worst foot error.
pub fn track_feet(
    model: &RobotModel,
    base: &[BasePose],
    feet: &[[Vector3<f64>; NUM_FEET]],
    q_init: &GeneralizedCoord,
    tolerance: f64,
) -> (Vec<GeneralizedCoord>, f64) {
    let mut weights = [0.0; NUM_KEYPOINTS];
    for &k in &model.foot_index {
        weights[k] = 1.0;
    }
    let opts = IkOptions {
        tolerance,
        max_iter: 500,
        lock_base: true,
        ..Default::default()
    };
    let mut q = q_init.clone();
    let mut worst: f64 = 0.0;
    let mut out = Vec::with_capacity(base.len());
    for (pose, f) in base.iter().zip(feet) {
        q.base_pos = pose.position;
        q.base_quat = pose.orientation;
        let mut targets = super::fk(model, &q);
        for leg in 0..NUM_FEET {
            targets[model.foot_index[leg]] = f[leg];
        }
        let res = ik_with(model, &targets, &weights, &q, &opts);
        worst = worst.max(res.residual);
        q = res.q;
        out.push(q.clone());
    }
    (out, worst)
}
