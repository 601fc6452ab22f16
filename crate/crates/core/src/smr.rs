//! Spatial motion retargeting: sequential velocity-level QPs that track a
//! per-frame IK reference while locking stance feet to ground anchors.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{difference, ik, integrate, GeneralizedCoord, GeneralizedVelocity, KinematicState};
use crate::motion::{ContactFlags, Heightmap, Motion, NUM_FEET, NUM_KEYPOINTS};
use crate::qp::{QpProblem, QpSettings, QpSolver, QpStatus};
use crate::robot::RobotModel;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// How the joint part of the per-frame reference is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointReference {
    /// Previous solved joints plus the IK joint increment.
    Incremental,
    /// The IK joints of the current frame.
    Absolute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SmrConfig {
    pub k_q: f64,
    pub k_p: f64,
    pub eta: f64,
    pub qdot_thres: f64,
    /// Diagonal tracking weights over `[p_b, ω, θ]`; `None` uses 10 / 5 / 1.
    pub q_weights: Option<DVector<f64>>,
    pub polyfit_horizon: usize,
    pub max_inner_iters: usize,
    /// Swing feet deeper than this below the terrain are switched to contact.
    pub penetration_tol: f64,
    pub joint_reference: JointReference,
    pub gravity: Vector3<f64>,
    pub qp: QpSettings,
}

impl Default for SmrConfig {
    fn default() -> Self {
        Self {
            k_q: 1.0,
            k_p: 1.0,
            eta: 0.5,
            qdot_thres: 1e-4,
            q_weights: None,
            polyfit_horizon: 10,
            max_inner_iters: 50,
            penetration_tol: 1e-3,
            joint_reference: JointReference::Absolute,
            gravity: GRAVITY,
            qp: QpSettings::default(),
        }
    }
}

impl SmrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_q", self.k_q),
            ("k_p", self.k_p),
            ("eta", self.eta),
            ("qdot_thres", self.qdot_thres),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, None, format!("must be positive, got {v}")));
            }
        }
        if self.polyfit_horizon < 2 {
            return Err(Error::invalid("polyfit_horizon", None, "must be at least 2"));
        }
        if let Some(w) = &self.q_weights {
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("q_weights", None, "weights must be positive"));
            }
        }
        Ok(())
    }

    fn weights(&self, model: &RobotModel) -> Result<DVector<f64>> {
        let n = 6 + model.num_dofs();
        match &self.q_weights {
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(Error::Dimension(format!(
                "q_weights has {} entries, expected {n}",
                w.len()
            ))),
            None => Ok(DVector::from_fn(n, |i, _| match i {
                0..=2 => 10.0,
                3..=5 => 5.0,
                _ => 1.0,
            })),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootAnchors {
    pub anchors: [Vector3<f64>; NUM_FEET],
    pub active: [bool; NUM_FEET],
}

pub fn project_ground(p: &Vector3<f64>, terrain: &Heightmap) -> Vector3<f64> {
    Vector3::new(p.x, p.y, terrain.height(p.x, p.y))
}

/// Per-axis least-squares polynomial through the samples (spaced `dt`,
/// degree `min(n − 1, 3)`); returns its derivative at the last sample.
pub fn fit_exit_velocity(history: &[Vector3<f64>], dt: f64) -> Result<Vector3<f64>> {
    let n = history.len();
    if n < 2 {
        return Err(Error::invalid("base_history", None, "need at least 2 samples"));
    }
    let degree = (n - 1).min(3);
    // Time measured from the last sample so the derivative there is the linear coefficient.
    let vander = DMatrix::from_fn(n, degree + 1, |r, c| ((r as f64 - (n - 1) as f64) * dt).powi(c as i32));
    let svd = vander.svd(true, true);
    let mut out = Vector3::zeros();
    for axis in 0..3 {
        let rhs = DVector::from_fn(n, |r, _| history[r][axis]);
        let coef = svd.solve(&rhs, 1e-14).map_err(|e| Error::Other(e.to_string()))?;
        out[axis] = coef[1];
    }
    Ok(out)
}

fn inner_loop(
    model: &RobotModel,
    q_start: &GeneralizedCoord,
    q_ref: &GeneralizedCoord,
    anchors: &FootAnchors,
    terrain: &Heightmap,
    cfg: &SmrConfig,
    solver: &mut QpSolver,
    frame: usize,
) -> Result<(GeneralizedCoord, usize)> {
    let weights = cfg.weights(model)?;
    let mut q = q_start.clone();
    for it in 0..cfg.max_inner_iters {
        let qdot = frame_velocity(model, &q, q_ref, anchors, terrain, cfg, &weights, solver, frame)?;
        if qdot.norm() < cfg.qdot_thres {
            return Ok((q, it));
        }
        q = integrate(&q, &qdot, cfg.eta);
    }
    Ok((q, cfg.max_inner_iters))
}

/// One QP of the inner loop: `min ½‖q̇ − K_q(q_ref ⊖ q)‖²_Q` subject to the
/// linearised anchor equalities for active feet and a one-sided height
/// bound for swing feet below the terrain.
#[allow(clippy::too_many_arguments)]
fn frame_velocity(
    model: &RobotModel,
    q: &GeneralizedCoord,
    q_ref: &GeneralizedCoord,
    anchors: &FootAnchors,
    terrain: &Heightmap,
    cfg: &SmrConfig,
    weights: &DVector<f64>,
    solver: &mut QpSolver,
    frame: usize,
) -> Result<DVector<f64>> {
    let n = q.tangent_dim();
    let state = KinematicState::new(model, q);
    let target = difference(q, q_ref) * cfg.k_q;
    let p = DMatrix::from_diagonal(weights);
    let lin = -weights.component_mul(&target);

    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for leg in 0..NUM_FEET {
        let k = model.foot_index[leg];
        let foot = state.keypoints[k];
        let jac = state.jacobian(model, k);
        if anchors.active[leg] {
            let err = (anchors.anchors[leg] - foot) * cfg.k_p;
            for axis in 0..3 {
                rows.push((jac.row(axis).iter().copied().collect(), err[axis], err[axis]));
            }
        } else {
            let ground = terrain.height(foot.x, foot.y);
            if foot.z < ground {
                rows.push((
                    jac.row(2).iter().copied().collect(),
                    cfg.k_p * (ground - foot.z),
                    f64::INFINITY,
                ));
            }
        }
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, n, |r, c| rows[r].0[c]);
    let lower = DVector::from_fn(m, |r, _| rows[r].1);
    let upper = DVector::from_fn(m, |r, _| rows[r].2);
    let prob = QpProblem::new(p, lin, a, lower, upper)?;
    let sol = solver.solve(&prob, Some(&target))?;
    if sol.status == QpStatus::PrimalInfeasible {
        return Err(Error::QpInfeasible { frame });
    }
    Ok(sol.x)
}

/// Single-frame solve: reference `q_prev ⊕ q̇_ref·dt`, inner loop started
/// at the reference.
#[allow(clippy::too_many_arguments)]
pub fn smr_frame(
    model: &RobotModel,
    q_prev: &GeneralizedCoord,
    q_ref_dot: &GeneralizedVelocity,
    dt: f64,
    anchors: &FootAnchors,
    terrain: &Heightmap,
    cfg: &SmrConfig,
) -> Result<GeneralizedCoord> {
    cfg.validate()?;
    let q_ref = integrate(q_prev, &q_ref_dot.to_vector(), dt);
    let mut solver = QpSolver::new(cfg.qp);
    Ok(inner_loop(model, &q_ref, &q_ref, anchors, terrain, cfg, &mut solver, 0)?.0)
}

#[derive(Debug, Clone)]
pub struct SmrOutput {
    pub motion: Motion,
    pub configs: Vec<GeneralizedCoord>,
    /// Input schedule plus feet switched to contact on penetration.
    pub contacts: Vec<ContactFlags>,
    /// Base position of the per-frame reference.
    pub reference_base: Vec<Vector3<f64>>,
    pub flight: Vec<bool>,
    /// Joint values pulled back inside their limits after the inner loop.
    pub joint_clamps: usize,
    /// Frames whose inner loop stopped on the iteration cap.
    pub capped_frames: usize,
    pub ik_residual_frame0: f64,
}

impl SmrOutput {
    /// Deviation of the reference base's second difference from `g·dt²`
    /// over each flight segment. The frame before take-off anchors the arc;
    /// the last airborne frame has no ballistic successor and is skipped.
    pub fn ballistic_residuals(&self, gravity: &Vector3<f64>, dt: f64) -> Vec<(usize, f64)> {
        let n = self.flight.len();
        let mut out = Vec::new();
        for i in 1..n.saturating_sub(1) {
            if !self.flight[i] || !self.flight[i + 1] {
                continue;
            }
            let prev = if self.flight[i - 1] {
                self.reference_base[i - 1]
            } else {
                self.configs[i - 1].base_pos
            };
            let second = self.reference_base[i + 1] - 2.0 * self.reference_base[i] + prev;
            out.push((i, (second - gravity * dt * dt).norm()));
        }
        out
    }
}

/// Retargets `src` frame by frame. With `use_source_base` the source base
/// pose seeds the reference; otherwise keypoints are taken in the base
/// frame and the base is rebuilt from foot anchoring alone.
pub fn smr(
    model: &RobotModel,
    src: &Motion,
    contacts: &[ContactFlags],
    terrain: &Heightmap,
    cfg: &SmrConfig,
    use_source_base: bool,
) -> Result<SmrOutput> {
    cfg.validate()?;
    src.validate()?;
    terrain.validate()?;
    let frames = src.num_frames();
    if contacts.len() != frames {
        return Err(Error::invalid(
            "contacts",
            None,
            format!("schedule has {} frames, motion has {frames}", contacts.len()),
        ));
    }
    let source = if use_source_base {
        if src.base_pose.is_none() {
            return Err(Error::invalid(
                "base_pose",
                None,
                "use_source_base needs a motion with base pose",
            ));
        }
        src.clone()
    } else if src.base_pose.is_some() {
        src.without_base()
    } else {
        src.clone()
    };
    let dt = src.dt();

    // Warm-started IK reference for every frame.
    let weights = [1.0; NUM_KEYPOINTS];
    let mut q_ik = Vec::with_capacity(frames);
    let mut q = GeneralizedCoord::zero(model);
    for d in 0..model.num_dofs() {
        let lim = model.dof_limits(d);
        q.joints[d] = 0.0f64.clamp(lim.lower, lim.upper);
    }
    if let Some(poses) = &source.base_pose {
        q.base_pos = poses[0].position;
        q.base_quat = poses[0].orientation;
    }
    let first = ik(model, &source.keypoints[0], &weights, &q, !use_source_base);
    let ik_residual_frame0 = first.residual;
    let frame0_limit = 0.05 * model.leg_length(0);
    if !first.residual.is_finite() || first.residual > frame0_limit {
        return Err(Error::IkFailure {
            frame: 0,
            residual: first.residual,
        });
    }
    q_ik.push(first.q);
    for i in 1..frames {
        let prev = q_ik[i - 1].clone();
        q_ik.push(ik(model, &source.keypoints[i], &weights, &prev, false).q);
    }

    if !use_source_base {
        // Drop the reconstructed body so its lowest stance foot meets the ground.
        let kp = crate::kinematics::fk(model, &q_ik[0]);
        let any_stance = contacts[0].iter().any(|&c| c);
        let lift = (0..NUM_FEET)
            .filter(|&leg| !any_stance || contacts[0][leg])
            .map(|leg| {
                let f = kp[model.foot_index[leg]];
                terrain.height(f.x, f.y) - f.z
            })
            .fold(f64::NEG_INFINITY, f64::max);
        for qi in q_ik.iter_mut() {
            qi.base_pos.z += lift;
        }
    }

    let mut solver = QpSolver::new(cfg.qp);
    let mut out_contacts = contacts.to_vec();
    let mut configs: Vec<GeneralizedCoord> = Vec::with_capacity(frames);
    let mut reference_base = Vec::with_capacity(frames);
    let mut flight = vec![false; frames];
    let mut joint_clamps = 0;
    let mut capped_frames = 0;

    let clamp = |q: &mut GeneralizedCoord, counter: &mut usize| {
        for d in 0..q.joints.len() {
            let lim = model.dof_limits(d);
            let v = q.joints[d].clamp(lim.lower, lim.upper);
            if v != q.joints[d] {
                *counter += 1;
                q.joints[d] = v;
            }
        }
    };

    // Frame 0: anchor projected feet and settle the stance feet onto them.
    let kp0 = crate::kinematics::fk(model, &q_ik[0]);
    let mut anchors = FootAnchors {
        anchors: std::array::from_fn(|leg| project_ground(&kp0[model.foot_index[leg]], terrain)),
        active: contacts[0],
    };
    let (mut q0, iters) = inner_loop(model, &q_ik[0], &q_ik[0], &anchors, terrain, cfg, &mut solver, 0)?;
    capped_frames += usize::from(iters == cfg.max_inner_iters);
    clamp(&mut q0, &mut joint_clamps);
    reference_base.push(q_ik[0].base_pos);
    flight[0] = !contacts[0].iter().any(|&c| c);
    configs.push(q0);

    let mut v_exit = Vector3::zeros();
    for i in 1..frames {
        let mut qdot_ik = difference(&q_ik[i - 1], &q_ik[i]) / dt;
        let airborne = !contacts[i].iter().any(|&c| c);
        flight[i] = airborne;
        if airborne && !flight[i - 1] {
            let start = i.saturating_sub(cfg.polyfit_horizon);
            let history: Vec<_> = configs[start..i].iter().map(|c| c.base_pos).collect();
            v_exit = if history.len() >= 2 {
                fit_exit_velocity(&history, dt)?
            } else {
                qdot_ik.fixed_rows::<3>(0).into()
            };
        }
        let mut q_ref = integrate(&configs[i - 1], &qdot_ik, dt);
        if airborne {
            qdot_ik.fixed_rows_mut::<3>(0).copy_from(&v_exit);
            // The reference base coasts on its own ballistic state.
            let prev = if flight[i - 1] {
                reference_base[i - 1]
            } else {
                configs[i - 1].base_pos
            };
            q_ref.base_pos = prev + v_exit * dt;
            v_exit += cfg.gravity * dt;
        }
        if cfg.joint_reference == JointReference::Absolute {
            q_ref.joints = q_ik[i].joints.clone();
        }
        reference_base.push(q_ref.base_pos);

        // Feet touching down this frame are solved as swing feet first and
        // anchored where they land.
        let onset: [bool; NUM_FEET] = std::array::from_fn(|leg| contacts[i][leg] && !out_contacts[i - 1][leg]);
        for leg in 0..NUM_FEET {
            anchors.active[leg] = contacts[i][leg] && !onset[leg];
        }
        let (mut qi, mut iters) = inner_loop(model, &q_ref, &q_ref, &anchors, terrain, cfg, &mut solver, i)?;
        let mut state = KinematicState::new(model, &qi);
        let mut reanchor = false;
        for leg in 0..NUM_FEET {
            let foot = state.keypoints[model.foot_index[leg]];
            if !contacts[i][leg] && foot.z < terrain.height(foot.x, foot.y) - cfg.penetration_tol {
                out_contacts[i][leg] = true;
            }
            if out_contacts[i][leg] && !out_contacts[i - 1][leg] {
                anchors.anchors[leg] = project_ground(&foot, terrain);
                anchors.active[leg] = true;
                reanchor = true;
            }
            if !out_contacts[i][leg] {
                anchors.active[leg] = false;
            }
        }
        if reanchor {
            (qi, iters) = inner_loop(model, &qi, &q_ref, &anchors, terrain, cfg, &mut solver, i)?;
            state = KinematicState::new(model, &qi);
        }
        let _ = state;
        capped_frames += usize::from(iters == cfg.max_inner_iters);
        clamp(&mut qi, &mut joint_clamps);
        configs.push(qi);
    }

    let mut motion = Motion::new(
        src.fps,
        configs.iter().map(|q| crate::kinematics::fk(model, q)).collect(),
    );
    motion.base_pose = Some(configs.iter().map(GeneralizedCoord::base).collect());
    motion.joint_angles = Some(configs.iter().map(|q| q.joints.iter().copied().collect()).collect());
    motion.contacts = Some(out_contacts.clone());
    Ok(SmrOutput {
        motion,
        configs,
        contacts: out_contacts,
        reference_base,
        flight,
        joint_clamps,
        capped_frames,
        ik_residual_frame0,
    })
}
