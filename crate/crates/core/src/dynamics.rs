//! Single-rigid-body plant: a floating trunk with massless legs, driven by
//! contact forces at scheduled stance feet.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::motion::{ContactFlags, NUM_FEET};
use crate::robot::RobotModel;
use crate::smr::GRAVITY;

/// Coordinates in the flat vector form: position, quaternion (w, x, y, z),
/// linear velocity, body angular velocity, four feet.
pub const STATE_COORDS: usize = 25;
/// Tangent size: the quaternion contributes a 3-vector.
pub const STATE_DIM: usize = 24;
/// Stance forces then swing-foot velocities, three per foot each.
pub const CONTROL_DIM: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynState {
    pub base_pos: Vector3<f64>,
    pub base_quat: UnitQuaternion<f64>,
    pub lin_vel: Vector3<f64>,
    /// Body frame.
    pub ang_vel: Vector3<f64>,
    pub foot_pos: [Vector3<f64>; NUM_FEET],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynControl {
    pub contact_forces: [Vector3<f64>; NUM_FEET],
    pub swing_foot_vel: [Vector3<f64>; NUM_FEET],
}

impl DynControl {
    pub fn zero() -> Self {
        Self {
            contact_forces: [Vector3::zeros(); NUM_FEET],
            swing_foot_vel: [Vector3::zeros(); NUM_FEET],
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(CONTROL_DIM);
        for leg in 0..NUM_FEET {
            v.fixed_rows_mut::<3>(3 * leg).copy_from(&self.contact_forces[leg]);
            v.fixed_rows_mut::<3>(12 + 3 * leg).copy_from(&self.swing_foot_vel[leg]);
        }
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            contact_forces: std::array::from_fn(|leg| v.fixed_rows::<3>(3 * leg).into()),
            swing_foot_vel: std::array::from_fn(|leg| v.fixed_rows::<3>(12 + 3 * leg).into()),
        }
    }
}

impl DynState {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(STATE_COORDS);
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_pos);
        let q = self.base_quat.quaternion();
        v[3] = q.w;
        v[4] = q.i;
        v[5] = q.j;
        v[6] = q.k;
        v.fixed_rows_mut::<3>(7).copy_from(&self.lin_vel);
        v.fixed_rows_mut::<3>(10).copy_from(&self.ang_vel);
        for leg in 0..NUM_FEET {
            v.fixed_rows_mut::<3>(13 + 3 * leg).copy_from(&self.foot_pos[leg]);
        }
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            base_pos: v.fixed_rows::<3>(0).into(),
            base_quat: UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(v[3], v[4], v[5], v[6])),
            lin_vel: v.fixed_rows::<3>(7).into(),
            ang_vel: v.fixed_rows::<3>(10).into(),
            foot_pos: std::array::from_fn(|leg| v.fixed_rows::<3>(13 + 3 * leg).into()),
        }
    }

    /// `self ⊕ dx` with the rotation perturbed on the right (body frame).
    pub fn retract(&self, dx: &DVector<f64>) -> Self {
        Self {
            base_pos: self.base_pos + dx.fixed_rows::<3>(0),
            base_quat: renormalize(
                self.base_quat * UnitQuaternion::from_scaled_axis(dx.fixed_rows::<3>(3).into_owned()),
            ),
            lin_vel: self.lin_vel + dx.fixed_rows::<3>(6),
            ang_vel: self.ang_vel + dx.fixed_rows::<3>(9),
            foot_pos: std::array::from_fn(|leg| self.foot_pos[leg] + dx.fixed_rows::<3>(12 + 3 * leg)),
        }
    }

    /// Tangent vector taking `self` to `other`.
    pub fn difference(&self, other: &Self) -> DVector<f64> {
        let mut d = DVector::zeros(STATE_DIM);
        d.fixed_rows_mut::<3>(0).copy_from(&(other.base_pos - self.base_pos));
        d.fixed_rows_mut::<3>(3)
            .copy_from(&(self.base_quat.inverse() * other.base_quat).scaled_axis());
        d.fixed_rows_mut::<3>(6).copy_from(&(other.lin_vel - self.lin_vel));
        d.fixed_rows_mut::<3>(9).copy_from(&(other.ang_vel - self.ang_vel));
        for leg in 0..NUM_FEET {
            d.fixed_rows_mut::<3>(12 + 3 * leg)
                .copy_from(&(other.foot_pos[leg] - self.foot_pos[leg]));
        }
        d
    }

    /// Kinetic plus gravitational potential energy of the trunk.
    pub fn energy(&self, model: &RobotModel) -> f64 {
        let w = self.ang_vel;
        0.5 * model.mass * self.lin_vel.norm_squared() + 0.5 * w.dot(&(model.body_inertia * w))
            - model.mass * GRAVITY.dot(&self.base_pos)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Net force and world-frame torque about the base from the stance feet.
pub fn wrench(x: &DynState, u: &DynControl, contacts: &ContactFlags) -> (Vector3<f64>, Vector3<f64>) {
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for leg in 0..NUM_FEET {
        if contacts[leg] {
            let f = u.contact_forces[leg];
            force += f;
            torque += (x.foot_pos[leg] - x.base_pos).cross(&f);
        }
    }
    (force, torque)
}

/// One step of the trunk dynamics. Velocities are updated first; the pose
/// then advances with the mean of old and new velocities, which makes
/// force-free flight an exact parabola. Swing forces and stance foot
/// velocities are ignored.
pub fn step(model: &RobotModel, x: &DynState, u: &DynControl, contacts: &ContactFlags, dt: f64) -> DynState {
    let (force, torque) = wrench(x, u, contacts);
    let lin_vel = x.lin_vel + dt * (force / model.mass + GRAVITY);
    let inertia: Matrix3<f64> = model.body_inertia;
    let tau_body = x.base_quat.inverse() * torque;
    let w = x.ang_vel;
    let inv = inertia.try_inverse().expect("body inertia is positive definite");
    let ang_vel = w + dt * inv * (tau_body - w.cross(&(inertia * w)));
    let base_pos = x.base_pos + 0.5 * dt * (x.lin_vel + lin_vel);
    let base_quat = renormalize(x.base_quat * UnitQuaternion::from_scaled_axis(0.5 * dt * (w + ang_vel)));
    let foot_pos = std::array::from_fn(|leg| {
        if contacts[leg] {
            x.foot_pos[leg]
        } else {
            x.foot_pos[leg] + dt * u.swing_foot_vel[leg]
        }
    });
    DynState {
        base_pos,
        base_quat,
        lin_vel,
        ang_vel,
        foot_pos,
    }
}

/// Per stance foot: friction-cone excess `‖f_xy‖ − μ f_z`, negative normal
/// force, and normal force above the actuator cap. Zero entries mean the
/// constraint holds.
pub fn constraint_residuals(
    model: &RobotModel,
    u: &DynControl,
    contacts: &ContactFlags,
    mu: f64,
) -> [f64; 3 * NUM_FEET] {
    let mut r = [0.0; 3 * NUM_FEET];
    for leg in 0..NUM_FEET {
        if !contacts[leg] {
            continue;
        }
        let f = u.contact_forces[leg];
        r[3 * leg] = (f.xy().norm() - mu * f.z).max(0.0);
        r[3 * leg + 1] = (-f.z).max(0.0);
        r[3 * leg + 2] = (f.z - model.foot_force_cap(leg)).max(0.0);
    }
    r
}

/// Sum of squared constraint violations; zero iff every stance force is
/// inside its friction cone, pushes, and respects the force cap.
pub fn soft_constraints(model: &RobotModel, u: &DynControl, contacts: &ContactFlags, mu: f64) -> f64 {
    constraint_residuals(model, u, contacts, mu).iter().map(|r| r * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::QuadrupedDims;

    fn rest(model: &RobotModel) -> DynState {
        DynState {
            base_pos: Vector3::new(0.0, 0.0, 0.3),
            base_quat: UnitQuaternion::identity(),
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
            foot_pos: std::array::from_fn(|leg| {
                let h = model.hip_offsets[leg];
                Vector3::new(h.x, h.y, 0.0)
            }),
        }
    }

    #[test]
    fn free_fall() {
        let model = QuadrupedDims::default().model();
        let x = rest(&model);
        let dt = 0.01;
        let y = step(&model, &x, &DynControl::zero(), &[false; 4], dt);
        assert!((y.lin_vel - GRAVITY * dt).norm() < 1e-15);
        assert!((y.base_pos.z - (0.3 - 0.5 * 9.81 * dt * dt)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_support_is_static() {
        let model = QuadrupedDims::default().model();
        let x = rest(&model);
        let mut u = DynControl::zero();
        for f in u.contact_forces.iter_mut() {
            *f = Vector3::new(0.0, 0.0, model.mass * 9.81 / 4.0);
        }
        let y = step(&model, &x, &u, &[true; 4], 0.02);
        assert!(y.lin_vel.norm() < 1e-9);
        assert!(y.ang_vel.norm() < 1e-9);
    }

    #[test]
    fn off_centre_force_changes_angular_momentum() {
        let model = QuadrupedDims::default().model();
        let mut x = rest(&model);
        x.base_quat = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3);
        let mut u = DynControl::zero();
        u.contact_forces[1] = Vector3::new(5.0, -3.0, 80.0);
        let dt = 0.01;
        let y = step(&model, &x, &u, &[false, true, false, false], dt);
        let r = x.foot_pos[1] - x.base_pos;
        let momentum = x.base_quat * (model.body_inertia * y.ang_vel);
        assert!((momentum - r.cross(&u.contact_forces[1]) * dt).norm() < 1e-9);
    }

    #[test]
    fn flight_energy_conserved() {
        let model = QuadrupedDims::default().model();
        let mut x = rest(&model);
        x.lin_vel = Vector3::new(0.5, 0.0, 2.0);
        let e0 = x.energy(&model);
        for _ in 0..200 {
            let y = step(&model, &x, &DynControl::zero(), &[false; 4], 1e-3);
            assert!((y.energy(&model) - x.energy(&model)).abs() < 1e-6);
            x = y;
        }
        assert!((x.energy(&model) - e0).abs() < 1e-9);
        // Matches the exact parabola.
        let t: f64 = 0.2;
        assert!((x.base_pos.z - (0.3 + 2.0 * t - 0.5 * 9.81 * t * t)).abs() < 1e-12);
    }

    #[test]
    fn first_order_consistency() {
        let model = QuadrupedDims::default().model();
        let mut x = rest(&model);
        x.ang_vel = Vector3::new(0.3, -0.5, 0.8);
        x.lin_vel = Vector3::new(0.2, 0.1, -0.3);
        let mut u = DynControl::zero();
        u.contact_forces[0] = Vector3::new(3.0, 1.0, 40.0);
        u.swing_foot_vel[2] = Vector3::new(0.5, 0.0, 0.4);
        let contacts = [true, true, false, true];
        let rate = |dt: f64| x.difference(&step(&model, &x, &u, &contacts, dt)) / dt;
        let e1 = (rate(1e-3) - rate(5e-4)).norm();
        let e2 = (rate(5e-4) - rate(2.5e-4)).norm();
        assert!(e1 > 0.0 && (e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn vector_round_trip() {
        let model = QuadrupedDims::default().model();
        let mut x = rest(&model);
        x.base_quat = UnitQuaternion::from_euler_angles(0.3, 0.1, -0.7);
        x.ang_vel = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(DynState::from_vector(&x.to_vector()).to_vector(), x.to_vector());
        let dx = DVector::from_fn(STATE_DIM, |i, _| 0.01 * (i as f64).sin());
        assert!((x.difference(&x.retract(&dx)) - dx).amax() < 1e-12);
        let mut u = DynControl::zero();
        u.swing_foot_vel[3] = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(DynControl::from_vector(&u.to_vector()), u);
    }

    #[test]
    fn penalty_cases() {
        let model = QuadrupedDims::default().model();
        let one = |f: Vector3<f64>| {
            let mut u = DynControl::zero();
            u.contact_forces[0] = f;
            soft_constraints(&model, &u, &[true, false, false, false], 0.7)
        };
        assert_eq!(one(Vector3::new(0.0, 0.0, 50.0)), 0.0);
        assert!((one(Vector3::new(100.0, 0.0, 50.0)) - 65.0f64.powi(2)).abs() < 1e-9);
        assert_eq!(one(Vector3::zeros()), 0.0);
        let cap = model.foot_force_cap(0);
        assert!((one(Vector3::new(0.0, 0.0, cap + 2.0)) - 4.0).abs() < 1e-9);
        // Forces commanded on swing feet are not penalised; they do nothing.
        let mut u = DynControl::zero();
        u.contact_forces[2] = Vector3::new(100.0, 0.0, -50.0);
        assert_eq!(soft_constraints(&model, &u, &[true, true, false, true], 0.7), 0.0);
    }
}
