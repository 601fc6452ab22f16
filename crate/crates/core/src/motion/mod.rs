//! Keypoint motion data model.
//!
//! A [`Motion`] holds 16 keypoints per frame, grouped as four hips, four
//! thighs, four knees and four feet. Within each group legs are ordered
//! front-left, front-right, rear-left, rear-right.

mod contacts;
mod filter;
mod io;
mod terrain;
mod warp;

use nalgebra::{UnitQuaternion, Vector3};

pub use contacts::{detect_contacts, ContactDetection, DEFAULT_HEIGHT_TOLERANCE};
pub use filter::{lowpass, lowpass_vec3};
pub use io::{load_motion, motion_from_json, motion_to_json, save_motion};
pub use terrain::{load_heightmap, Heightmap};
pub use warp::{deform_time, interp_base_pose, interp_keypoints, TemporalParams};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 16;
pub const NUM_FEET: usize = 4;

pub type Keypoints = [Vector3<f64>; NUM_KEYPOINTS];
pub type ContactFlags = [bool; NUM_FEET];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    FrontLeft = 0,
    FrontRight = 1,
    RearLeft = 2,
    RearRight = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FrontLeft, Leg::FrontRight, Leg::RearLeft, Leg::RearRight];

    pub fn prefix(self) -> &'static str {
        match self {
            Leg::FrontLeft => "FL",
            Leg::FrontRight => "FR",
            Leg::RearLeft => "RL",
            Leg::RearRight => "RR",
        }
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::RearLeft)
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::FrontRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointKind {
    Hip = 0,
    Thigh = 1,
    Knee = 2,
    Foot = 3,
}

impl KeypointKind {
    pub const ALL: [KeypointKind; 4] = [
        KeypointKind::Hip,
        KeypointKind::Thigh,
        KeypointKind::Knee,
        KeypointKind::Foot,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            KeypointKind::Hip => "hip",
            KeypointKind::Thigh => "thigh",
            KeypointKind::Knee => "knee",
            KeypointKind::Foot => "foot",
        }
    }
}

/// Index of a keypoint in the canonical 16-keypoint layout.
pub const fn keypoint_index(kind: KeypointKind, leg: Leg) -> usize {
    kind as usize * 4 + leg as usize
}

/// Keypoint index of foot `leg` (0..4).
pub const fn foot_index(leg: usize) -> usize {
    12 + leg
}

/// Canonical keypoint parent: hips hang off the base (`None`), every other
/// keypoint hangs off the previous keypoint of the same leg.
pub const fn keypoint_parent(j: usize) -> Option<usize> {
    if j < 4 {
        None
    } else {
        Some(j - 4)
    }
}

pub fn keypoint_names() -> Vec<String> {
    KeypointKind::ALL
        .iter()
        .flat_map(|k| Leg::ALL.iter().map(move |l| format!("{}_{}", l.prefix(), k.suffix())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl BasePose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub fps: f64,
    pub keypoints: Vec<Keypoints>,
    pub contacts: Option<Vec<ContactFlags>>,
    pub base_pose: Option<Vec<BasePose>>,
    pub joint_angles: Option<Vec<Vec<f64>>>,
}

impl Motion {
    pub fn new(fps: f64, keypoints: Vec<Keypoints>) -> Self {
        Self {
            fps,
            keypoints,
            contacts: None,
            base_pose: None,
            joint_angles: None,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.keypoints.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    /// Duration in seconds between the first and last frame.
    pub fn duration(&self) -> f64 {
        (self.num_frames().saturating_sub(1)) as f64 / self.fps
    }

    pub fn foot(&self, frame: usize, leg: usize) -> Vector3<f64> {
        self.keypoints[frame][foot_index(leg)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid(
                "fps",
                None,
                format!("must be positive, got {}", self.fps),
            ));
        }
        let n = self.num_frames();
        if n < 2 {
            return Err(Error::invalid(
                "frames",
                None,
                format!("need at least 2 frames, got {n}"),
            ));
        }
        for (i, kp) in self.keypoints.iter().enumerate() {
            if kp.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(Error::invalid("keypoints", Some(i), "non-finite coordinate"));
            }
        }
        if let Some(c) = &self.contacts {
            if c.len() != n {
                return Err(Error::invalid(
                    "contacts",
                    None,
                    format!("{} entries for {n} frames", c.len()),
                ));
            }
        }
        if let Some(poses) = &self.base_pose {
            if poses.len() != n {
                return Err(Error::invalid(
                    "base_pose",
                    None,
                    format!("{} entries for {n} frames", poses.len()),
                ));
            }
            for (i, pose) in poses.iter().enumerate() {
                let norm = pose.orientation.quaternion().norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "base_quat",
                        Some(i),
                        format!("quaternion norm {norm} is not unit"),
                    ));
                }
                if !pose.position.iter().all(|v| v.is_finite()) {
                    return Err(Error::invalid("base_pos", Some(i), "non-finite coordinate"));
                }
            }
        }
        if let Some(joints) = &self.joint_angles {
            if joints.len() != n {
                return Err(Error::invalid(
                    "joints",
                    None,
                    format!("{} entries for {n} frames", joints.len()),
                ));
            }
            let m = joints[0].len();
            for (i, q) in joints.iter().enumerate() {
                if q.len() != m {
                    return Err(Error::invalid(
                        "joints",
                        Some(i),
                        format!("expected {m} values, got {}", q.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Expresses every keypoint in the base frame and drops the base pose,
    /// producing a baseless motion. Motions without a base pose are returned
    /// unchanged apart from clearing joint angles.
    pub fn without_base(&self) -> Motion {
        let keypoints = match &self.base_pose {
            Some(poses) => self
                .keypoints
                .iter()
                .zip(poses)
                .map(|(kp, pose)| {
                    let inv = pose.orientation.inverse();
                    let mut local = *kp;
                    for p in local.iter_mut() {
                        *p = inv * (*p - pose.position);
                    }
                    local
                })
                .collect(),
            None => self.keypoints.clone(),
        };
        Motion {
            fps: self.fps,
            keypoints,
            contacts: self.contacts.clone(),
            base_pose: None,
            joint_angles: None,
        }
    }
}
