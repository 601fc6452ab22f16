//! Floating-base forward kinematics, keypoint Jacobians, inverse kinematics
//! and unit-vector retargeting.
//!
//! Tangent coordinates are `[v, ω, θ̇]`: base linear velocity in the world
//! frame, base angular velocity in the body frame, then joint rates.

mod ik;
mod uvm;

use nalgebra::{DVector, Isometry3, Matrix3, Matrix3xX, Point3, Translation3, UnitQuaternion, Vector3};

pub use ik::{ik, ik_with, track_feet, IkOptions, IkResult};
pub use uvm::{motion_from_configs, uvm_retarget, uvm_retarget_with, UvmOptions};

use crate::motion::{BasePose, Keypoints, NUM_KEYPOINTS};
use crate::robot::RobotModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedCoord {
    pub base_pos: Vector3<f64>,
    pub base_quat: UnitQuaternion<f64>,
    pub joints: DVector<f64>,
}

impl GeneralizedCoord {
    pub fn new(base: BasePose, joints: DVector<f64>) -> Self {
        Self {
            base_pos: base.position,
            base_quat: base.orientation,
            joints,
        }
    }

    /// Identity base at the origin with all joints at zero.
    pub fn zero(model: &RobotModel) -> Self {
        Self::new(BasePose::identity(), DVector::zeros(model.num_dofs()))
    }

    pub fn base(&self) -> BasePose {
        BasePose {
            position: self.base_pos,
            orientation: self.base_quat,
        }
    }

    pub fn tangent_dim(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn clamp_to_limits(&mut self, model: &RobotModel) {
        for d in 0..self.joints.len() {
            let lim = model.dof_limits(d);
            self.joints[d] = self.joints[d].clamp(lim.lower, lim.upper);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedVelocity {
    pub lin_vel: Vector3<f64>,
    /// Body frame.
    pub ang_vel: Vector3<f64>,
    pub joint_vel: DVector<f64>,
}

impl GeneralizedVelocity {
    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            lin_vel: v.fixed_rows::<3>(0).into(),
            ang_vel: v.fixed_rows::<3>(3).into(),
            joint_vel: v.rows(6, v.len() - 6).into(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(6 + self.joint_vel.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.lin_vel);
        v.fixed_rows_mut::<3>(3).copy_from(&self.ang_vel);
        v.rows_mut(6, self.joint_vel.len()).copy_from(&self.joint_vel);
        v
    }
}

/// `q ⊕ v·dt`: translation and joints advance linearly, orientation by the
/// body-frame exponential map (renormalised).
pub fn integrate(q: &GeneralizedCoord, v: &DVector<f64>, dt: f64) -> GeneralizedCoord {
    let lin: Vector3<f64> = v.fixed_rows::<3>(0).into();
    let ang: Vector3<f64> = v.fixed_rows::<3>(3).into();
    let mut quat = q.base_quat * UnitQuaternion::from_scaled_axis(ang * dt);
    quat.renormalize();
    GeneralizedCoord {
        base_pos: q.base_pos + lin * dt,
        base_quat: quat,
        joints: &q.joints + v.rows(6, q.joints.len()) * dt,
    }
}

/// Tangent vector `v` with `integrate(a, v, 1) = b`.
pub fn difference(a: &GeneralizedCoord, b: &GeneralizedCoord) -> DVector<f64> {
    let mut v = DVector::zeros(a.tangent_dim());
    v.fixed_rows_mut::<3>(0).copy_from(&(b.base_pos - a.base_pos));
    v.fixed_rows_mut::<3>(3)
        .copy_from(&(a.base_quat.inverse() * b.base_quat).scaled_axis());
    v.rows_mut(6, a.joints.len()).copy_from(&(&b.joints - &a.joints));
    v
}

/// World-frame link poses plus joint axes and anchor points for one configuration.
#[derive(Debug, Clone)]
pub struct KinematicState {
    pub link_poses: Vec<Isometry3<f64>>,
    joint_axis: Vec<Vector3<f64>>,
    joint_point: Vec<Vector3<f64>>,
    pub keypoints: Keypoints,
    base_rot: Matrix3<f64>,
    base_pos: Vector3<f64>,
}

impl KinematicState {
    pub fn new(model: &RobotModel, q: &GeneralizedCoord) -> Self {
        let base = Isometry3::from_parts(Translation3::from(q.base_pos), q.base_quat);
        let mut link_poses = vec![Isometry3::identity(); model.links.len()];
        let base_idx = model
            .links
            .iter()
            .position(|l| *l == model.base_link)
            .expect("base link present");
        link_poses[base_idx] = base;
        let mut joint_axis = Vec::with_capacity(model.joints.len());
        let mut joint_point = Vec::with_capacity(model.joints.len());
        for (j, joint) in model.joints.iter().enumerate() {
            let frame = link_poses[model.joint_parent_link[j]] * joint.origin;
            let axis = frame.rotation * joint.axis.into_inner();
            joint_axis.push(axis);
            joint_point.push(frame.translation.vector);
            let motion = match model.joint_dof[j] {
                Some(d) => UnitQuaternion::from_axis_angle(&joint.axis, q.joints[d]),
                None => UnitQuaternion::identity(),
            };
            link_poses[model.joint_child_link[j]] = frame * motion;
        }
        let keypoints = std::array::from_fn(|k| {
            (link_poses[model.keypoint_link[k]] * Point3::from(model.keypoints[k].offset)).coords
        });
        Self {
            link_poses,
            joint_axis,
            joint_point,
            keypoints,
            base_rot: q.base_quat.to_rotation_matrix().into_inner(),
            base_pos: q.base_pos,
        }
    }

    /// 3×(6+M) Jacobian of keypoint `k` in tangent coordinates.
    pub fn jacobian(&self, model: &RobotModel, k: usize) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(6 + model.num_dofs());
        let p = self.keypoints[k];
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        let r_body = self.base_rot.transpose() * (p - self.base_pos);
        jac.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(-self.base_rot * r_body.cross_matrix()));
        for &j in &model.keypoint_chain[k] {
            let d = model.joint_dof[j].expect("chains hold revolute joints only");
            let col = self.joint_axis[j].cross(&(p - self.joint_point[j]));
            jac.fixed_view_mut::<3, 1>(0, 6 + d).copy_from(&col);
        }
        jac
    }
}

pub fn fk(model: &RobotModel, q: &GeneralizedCoord) -> Keypoints {
    KinematicState::new(model, q).keypoints
}

pub fn jacobian(model: &RobotModel, q: &GeneralizedCoord, k: usize) -> Matrix3xX<f64> {
    assert!(k < NUM_KEYPOINTS, "keypoint index {k} out of range");
    KinematicState::new(model, q).jacobian(model, k)
}
