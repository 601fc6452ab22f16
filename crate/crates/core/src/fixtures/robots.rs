use std::collections::HashMap;

use nalgebra::{DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};

use crate::kinematics::{fk, GeneralizedCoord};
use crate::motion::Leg;
use crate::robot::{
    conventional_keypoints, Joint, JointKind, JointLimits, KinematicTree, LinkInertial, ModelOverrides, RobotModel,
};

/// Parametric 12-joint quadruped: hip roll (x), thigh pitch (y), knee pitch
/// (y) per leg. Defaults approximate a small commercial robot.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupedDims {
    pub name: String,
    pub hip_x: f64,
    pub hip_y: f64,
    pub hip_lateral: f64,
    pub thigh: f64,
    pub calf: f64,
    pub mass: f64,
    /// Principal moments of the trunk (kg·m²).
    pub inertia: [f64; 3],
    pub hip_effort: f64,
    pub thigh_effort: f64,
    pub calf_effort: f64,
    pub velocity_limit: f64,
    pub hip_range: (f64, f64),
    pub thigh_range: (f64, f64),
    pub calf_range: (f64, f64),
    /// Nominal thigh and knee angles for standing.
    pub stance_angles: (f64, f64),
}

impl Default for QuadrupedDims {
    fn default() -> Self {
        let mass = 12.0;
        let (a, b, c) = (0.38, 0.19, 0.11);
        Self {
            name: "quad".into(),
            hip_x: 0.1881,
            hip_y: 0.04675,
            hip_lateral: 0.08,
            thigh: 0.213,
            calf: 0.213,
            mass,
            inertia: [
                mass / 12.0 * (b * b + c * c),
                mass / 12.0 * (a * a + c * c),
                mass / 12.0 * (a * a + b * b),
            ],
            hip_effort: 23.7,
            thigh_effort: 23.7,
            calf_effort: 35.55,
            velocity_limit: 30.0,
            hip_range: (-0.8, 0.8),
            thigh_range: (-1.5, 3.5),
            calf_range: (-2.7, -0.05),
            stance_angles: (0.8, -1.5),
        }
    }
}

impl QuadrupedDims {
    /// Geometrically similar robot: lengths × s, mass × s³, inertia × s⁵,
    /// torques × s⁴.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            name: format!("{}_x{s}", self.name),
            hip_x: self.hip_x * s,
            hip_y: self.hip_y * s,
            hip_lateral: self.hip_lateral * s,
            thigh: self.thigh * s,
            calf: self.calf * s,
            mass: self.mass * s.powi(3),
            inertia: self.inertia.map(|i| i * s.powi(5)),
            hip_effort: self.hip_effort * s.powi(4),
            thigh_effort: self.thigh_effort * s.powi(4),
            calf_effort: self.calf_effort * s.powi(4),
            ..self.clone()
        }
    }

    /// Same geometry and actuators with mass and inertia multiplied by `factor`.
    pub fn heavier(&self, factor: f64) -> Self {
        Self {
            name: format!("{}_m{factor}", self.name),
            mass: self.mass * factor,
            inertia: self.inertia.map(|i| i * factor),
            ..self.clone()
        }
    }

    /// Same robot with every joint effort limit multiplied by `factor`.
    pub fn weaker(&self, factor: f64) -> Self {
        Self {
            name: format!("{}_e{factor}", self.name),
            hip_effort: self.hip_effort * factor,
            thigh_effort: self.thigh_effort * factor,
            calf_effort: self.calf_effort * factor,
            ..self.clone()
        }
    }

    pub fn tree(&self) -> KinematicTree {
        let mut links = vec!["base".to_string()];
        let mut joints = Vec::new();
        let mut inertials = HashMap::new();
        inertials.insert(
            "base".to_string(),
            LinkInertial {
                mass: self.mass,
                com: Vector3::zeros(),
                inertia: Matrix3::from_diagonal(&Vector3::from(self.inertia)),
            },
        );
        let limits = |range: (f64, f64), effort: f64| {
            Some(JointLimits {
                lower: range.0,
                upper: range.1,
                effort,
                velocity: self.velocity_limit,
            })
        };
        let at = |x: f64, y: f64, z: f64| Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::identity());
        for leg in Leg::ALL {
            let p = leg.prefix();
            let sx = if leg.is_front() { 1.0 } else { -1.0 };
            let sy = if leg.is_left() { 1.0 } else { -1.0 };
            for l in ["hip", "thigh", "calf", "foot"] {
                links.push(format!("{p}_{l}"));
            }
            let joint = |name: &str, parent: &str, child: &str, origin, axis, kind, limits| Joint {
                name: format!("{p}_{name}"),
                kind,
                parent: parent.to_string(),
                child: format!("{p}_{child}"),
                origin,
                axis: Unit::new_normalize(Vector3::from(axis)),
                limits,
            };
            joints.push(joint(
                "hip_joint",
                "base",
                "hip",
                at(sx * self.hip_x, sy * self.hip_y, 0.0),
                [1.0, 0.0, 0.0],
                JointKind::Revolute,
                limits(self.hip_range, self.hip_effort),
            ));
            joints.push(joint(
                "thigh_joint",
                &format!("{p}_hip"),
                "thigh",
                at(0.0, sy * self.hip_lateral, 0.0),
                [0.0, 1.0, 0.0],
                JointKind::Revolute,
                limits(self.thigh_range, self.thigh_effort),
            ));
            joints.push(joint(
                "calf_joint",
                &format!("{p}_thigh"),
                "calf",
                at(0.0, 0.0, -self.thigh),
                [0.0, 1.0, 0.0],
                JointKind::Revolute,
                limits(self.calf_range, self.calf_effort),
            ));
            joints.push(joint(
                "foot_fixed",
                &format!("{p}_calf"),
                "foot",
                at(0.0, 0.0, -self.calf),
                [1.0, 0.0, 0.0],
                JointKind::Fixed,
                None,
            ));
        }
        KinematicTree {
            name: self.name.clone(),
            links,
            joints,
            inertials,
        }
    }

    pub fn model(&self) -> RobotModel {
        let tree = self.tree();
        let keypoints = conventional_keypoints(&tree.links).expect("fixture links follow the naming convention");
        RobotModel::from_tree(&tree, keypoints, &ModelOverrides::default()).expect("fixture robot is valid")
    }

    /// Standing joint angles on every leg, base level and raised so the feet
    /// touch z = 0.
    pub fn standing_pose(&self, model: &RobotModel) -> GeneralizedCoord {
        let (thigh, calf) = self.stance_angles;
        let joints = DVector::from_fn(model.num_dofs(), |d, _| match d % 3 {
            0 => 0.0,
            1 => thigh,
            _ => calf,
        });
        let mut q = GeneralizedCoord {
            base_pos: Vector3::zeros(),
            base_quat: UnitQuaternion::identity(),
            joints,
        };
        let kp = fk(model, &q);
        q.base_pos.z = -(0..4).map(|leg| kp[12 + leg].z).fold(f64::INFINITY, f64::min);
        q
    }
}
