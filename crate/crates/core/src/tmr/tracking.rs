//! Optimal-control problem tracking a time-warped motion with the
//! single-rigid-body plant.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::ddp::{CostDerivs, OcpProblem};
use crate::dynamics::{self, DynControl, DynState, CONTROL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::motion::{deform_time, interp_base_pose, interp_keypoints, ContactFlags, Motion, TemporalParams, NUM_FEET};
use crate::robot::RobotModel;
use crate::smr::GRAVITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingWeights {
    pub base_pos: f64,
    pub base_rot: f64,
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub feet: f64,
    pub control: f64,
    /// Weight of the friction / unilateral / force-cap penalty.
    pub penalty: f64,
    pub friction: f64,
}

impl Default for TrackingWeights {
    fn default() -> Self {
        Self {
            base_pos: 100.0,
            base_rot: 10.0,
            lin_vel: 0.1,
            ang_vel: 0.1,
            feet: 100.0,
            control: 1e-6,
            penalty: 1e-3,
            friction: 0.7,
        }
    }
}

impl TrackingWeights {
    fn sqrt_state(&self) -> DVector<f64> {
        DVector::from_fn(STATE_DIM, |i, _| {
            match i {
                0..=2 => self.base_pos,
                3..=5 => self.base_rot,
                6..=8 => self.lin_vel,
                9..=11 => self.ang_vel,
                _ => self.feet,
            }
            .sqrt()
        })
    }
}

/// Targets sampled on the control grid of a warped motion.
#[derive(Debug, Clone)]
pub struct WarpedTargets {
    pub dt: f64,
    pub states: Vec<DynState>,
    pub contacts: Vec<ContactFlags>,
    /// Per control interval: a foot is in stance only if it is at both ends.
    pub interval_contacts: Vec<ContactFlags>,
    /// Source time of every control step.
    pub source_times: Vec<f64>,
}

impl WarpedTargets {
    /// Resamples `motion` (which needs base poses) under `alpha` on a grid
    /// of `round(T_α·fps)` steps.
    pub fn new(model: &RobotModel, motion: &Motion, alpha: &TemporalParams) -> Result<Self> {
        alpha.validate()?;
        let schedule = motion
            .contacts
            .as_ref()
            .ok_or_else(|| Error::invalid("contacts", None, "tracking needs a contact schedule"))?;
        let duration = motion.duration();
        let total = alpha.warped_duration(duration);
        let h = ((total * motion.fps).round() as usize).max(1);
        let dt = total / h as f64;
        let mut poses = Vec::with_capacity(h + 1);
        let mut feet = Vec::with_capacity(h + 1);
        let mut contacts = Vec::with_capacity(h + 1);
        let mut source_times = Vec::with_capacity(h + 1);
        let last = motion.num_frames() - 1;
        for k in 0..=h {
            let s = deform_time((k as f64 * dt).min(total), alpha, duration)?;
            poses.push(interp_base_pose(s, motion)?);
            let kp = interp_keypoints(s, motion)?;
            feet.push(std::array::from_fn::<_, NUM_FEET, _>(|leg| kp[model.foot_index[leg]]));
            contacts.push(schedule[((s * motion.fps).round() as usize).min(last)]);
            source_times.push(s);
        }
        let states = (0..=h)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(h));
                let span = (b - a) as f64 * dt;
                let (pa, pb) = (&poses[a], &poses[b]);
                DynState {
                    base_pos: poses[k].position,
                    base_quat: poses[k].orientation,
                    lin_vel: (pb.position - pa.position) / span,
                    ang_vel: (pa.orientation.inverse() * pb.orientation).scaled_axis() / span,
                    foot_pos: feet[k],
                }
            })
            .collect();
        let interval_contacts = contacts
            .windows(2)
            .map(|w| std::array::from_fn(|l| w[0][l] && w[1][l]))
            .collect();
        Ok(Self {
            dt,
            states,
            contacts,
            interval_contacts,
            source_times,
        })
    }

    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

pub struct TrackingProblem<'a> {
    pub model: &'a RobotModel,
    pub targets: WarpedTargets,
    pub weights: TrackingWeights,
    sqrt_w: DVector<f64>,
    /// Nominal controls the control effort is measured against.
    u_ref: Vec<DVector<f64>>,
}

impl<'a> TrackingProblem<'a> {
    pub fn new(model: &'a RobotModel, targets: WarpedTargets, weights: TrackingWeights) -> Self {
        let sqrt_w = weights.sqrt_state();
        let mut p = Self {
            model,
            targets,
            weights,
            sqrt_w,
            u_ref: Vec::new(),
        };
        p.u_ref = p.initial_controls();
        p
    }

    fn state_residual(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        self.targets.states[k]
            .difference(&DynState::from_vector(x))
            .component_mul(&self.sqrt_w)
    }

    /// Residual and tangent Jacobian of the weighted state error.
    fn state_terms(&self, k: usize, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let r = self.state_residual(k, x);
        let mut jac = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let h = 1e-6;
        for i in 0..STATE_DIM {
            let mut d = DVector::zeros(STATE_DIM);
            d[i] = h;
            let plus = self.state_residual(k, &self.retract(x, &d));
            d[i] = -h;
            let minus = self.state_residual(k, &self.retract(x, &d));
            jac.set_column(i, &((plus - minus) / (2.0 * h)));
        }
        (r, jac)
    }

    fn constraint_terms(&self, k: usize, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let res = |u: &DVector<f64>| {
            let c = dynamics::constraint_residuals(
                self.model,
                &DynControl::from_vector(u),
                &self.targets.interval_contacts[k],
                self.weights.friction,
            );
            DVector::from_row_slice(&c)
        };
        let r = res(u);
        let mut jac = DMatrix::zeros(r.len(), CONTROL_DIM);
        // Only the stance forces enter the constraints.
        for i in 0..12 {
            if !self.targets.interval_contacts[k][i / 3] {
                continue;
            }
            let h = 1e-6 * (1.0 + u[i].abs());
            let mut up = u.clone();
            up[i] += h;
            let plus = res(&up);
            up[i] = u[i] - h;
            let minus = res(&up);
            jac.set_column(i, &((plus - minus) / (2.0 * h)));
        }
        (r, jac)
    }

    pub fn penalty(&self, k: usize, u: &DVector<f64>) -> f64 {
        dynamics::soft_constraints(
            self.model,
            &DynControl::from_vector(u),
            &self.targets.interval_contacts[k],
            self.weights.friction,
        )
    }

    /// Gravity-compensating forces following the target acceleration, and
    /// swing velocities following the target feet. Also the reference for
    /// the control-effort term.
    pub fn initial_controls(&self) -> Vec<DVector<f64>> {
        let t = &self.targets;
        let dt = t.dt;
        (0..self.horizon())
            .map(|k| {
                let mut u = DynControl::zero();
                let stance: Vec<usize> = (0..NUM_FEET).filter(|&l| t.interval_contacts[k][l]).collect();
                if !stance.is_empty() {
                    let acc = (t.states[k + 1].lin_vel - t.states[k].lin_vel) / dt;
                    let mut f = (acc - GRAVITY) * self.model.mass / stance.len() as f64;
                    f.z = f.z.max(0.0);
                    for &l in &stance {
                        u.contact_forces[l] = f;
                    }
                }
                for l in 0..NUM_FEET {
                    if !t.interval_contacts[k][l] {
                        u.swing_foot_vel[l] = (t.states[k + 1].foot_pos[l] - t.states[k].foot_pos[l]) / dt;
                    }
                }
                u.to_vector()
            })
            .collect()
    }

    /// Controls of a closed-loop rollout: PD on the base pose, stance forces
    /// from a damped least-squares fit of the wanted wrench, clipped to the
    /// friction cone. A much better DDP warm start than `initial_controls`
    /// when the support polygon degenerates (diagonal stance in a trot),
    /// where open-loop gravity compensation tips the trunk over.
    pub fn balance_controls(&self) -> Vec<DVector<f64>> {
        const POS_GAINS: (f64, f64) = (100.0, 20.0);
        const ROT_GAINS: (f64, f64) = (400.0, 40.0);
        const TORQUE_WEIGHT: f64 = 10.0;
        const DAMPING: f64 = 1e-4;
        let t = &self.targets;
        let dt = t.dt;
        let inertia = self.model.body_inertia;
        let mut x = t.states[0].clone();
        let mut out = Vec::with_capacity(self.horizon());
        for k in 0..self.horizon() {
            let (now, next) = (&t.states[k], &t.states[k + 1]);
            let contacts = &t.interval_contacts[k];
            let mut u = DynControl::zero();
            let stance: Vec<usize> = (0..NUM_FEET).filter(|&l| contacts[l]).collect();
            if !stance.is_empty() {
                let acc = (next.lin_vel - now.lin_vel) / dt
                    + POS_GAINS.0 * (now.base_pos - x.base_pos)
                    + POS_GAINS.1 * (now.lin_vel - x.lin_vel);
                let rot_err = (x.base_quat.inverse() * now.base_quat).scaled_axis();
                let ang_acc =
                    (next.ang_vel - now.ang_vel) / dt + ROT_GAINS.0 * rot_err + ROT_GAINS.1 * (now.ang_vel - x.ang_vel);
                let torque = x.base_quat * (inertia * ang_acc + x.ang_vel.cross(&(inertia * x.ang_vel)));
                let force = self.model.mass * (acc - GRAVITY);
                let n = 3 * stance.len();
                let mut a = DMatrix::zeros(6, n);
                for (j, &l) in stance.iter().enumerate() {
                    let r = x.foot_pos[l] - x.base_pos;
                    a.fixed_view_mut::<3, 3>(0, 3 * j).fill_with_identity();
                    a.fixed_view_mut::<3, 3>(3, 3 * j)
                        .copy_from(&(r.cross_matrix() * TORQUE_WEIGHT));
                }
                let mut b = DVector::zeros(6);
                b.fixed_rows_mut::<3>(0).copy_from(&force);
                b.fixed_rows_mut::<3>(3).copy_from(&(torque * TORQUE_WEIGHT));
                let normal = a.transpose() * &a + DMatrix::identity(n, n) * DAMPING;
                let f = normal
                    .cholesky()
                    .map(|c| c.solve(&(a.transpose() * b)))
                    .unwrap_or_else(|| DVector::zeros(n));
                for (j, &l) in stance.iter().enumerate() {
                    let mut fl: Vector3<f64> = f.fixed_rows::<3>(3 * j).into();
                    fl.z = fl.z.max(0.0);
                    let tangential = fl.xy().norm();
                    let limit = self.weights.friction * fl.z;
                    if tangential > limit {
                        let s = limit / tangential;
                        fl.x *= s;
                        fl.y *= s;
                    }
                    u.contact_forces[l] = fl;
                }
            }
            for l in 0..NUM_FEET {
                if !contacts[l] {
                    u.swing_foot_vel[l] = (next.foot_pos[l] - x.foot_pos[l]) / dt;
                }
            }
            x = dynamics::step(self.model, &x, &u, contacts, dt);
            out.push(u.to_vector());
        }
        out
    }
}

impl OcpProblem for TrackingProblem<'_> {
    fn horizon(&self) -> usize {
        self.targets.horizon()
    }
    fn state_dim(&self) -> usize {
        STATE_DIM
    }
    fn control_dim(&self) -> usize {
        CONTROL_DIM
    }
    fn initial_state(&self) -> DVector<f64> {
        self.targets.states[0].to_vector()
    }
    fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        dynamics::step(
            self.model,
            &DynState::from_vector(x),
            &DynControl::from_vector(u),
            &self.targets.interval_contacts[k],
            self.targets.dt,
        )
        .to_vector()
    }
    fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_residual(k, x).norm_squared()
            + self.weights.control * (u - &self.u_ref[k]).norm_squared()
            + self.weights.penalty * self.penalty(k, u)
    }
    fn final_cost(&self, x: &DVector<f64>) -> f64 {
        self.state_residual(self.horizon(), x).norm_squared()
    }
    fn running_derivs(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> CostDerivs {
        let (r, j) = self.state_terms(k, x);
        let (c, jc) = self.constraint_terms(k, u);
        let (wu, wp) = (self.weights.control, self.weights.penalty);
        CostDerivs {
            lx: 2.0 * j.transpose() * r,
            lxx: 2.0 * j.transpose() * &j,
            lu: 2.0 * wu * (u - &self.u_ref[k]) + 2.0 * wp * jc.transpose() * c,
            luu: DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * (2.0 * wu) + 2.0 * wp * jc.transpose() * &jc,
            lux: DMatrix::zeros(CONTROL_DIM, STATE_DIM),
        }
    }
    fn final_derivs(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (r, j) = self.state_terms(self.horizon(), x);
        (2.0 * j.transpose() * r, 2.0 * j.transpose() * &j)
    }
    fn retract(&self, x: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
        DynState::from_vector(x).retract(dx).to_vector()
    }
    fn difference(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DynState::from_vector(a).difference(&DynState::from_vector(b))
    }
}

/// Roll, pitch, yaw.
pub fn euler(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (r, p, y) = q.euler_angles();
    Vector3::new(r, p, y)
}
