use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{lowpass_vec3, ContactFlags, Heightmap, Motion, NUM_FEET};
use crate::error::{Error, Result};

/// Feet higher than this above the ground reference never count as in contact.
pub const DEFAULT_HEIGHT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactDetection {
    /// Foot speed (m/s) below which a foot may be in contact.
    pub vel_threshold: f64,
    /// Low-pass cutoff applied to foot positions; `None` disables filtering.
    pub cutoff_hz: Option<f64>,
    pub height_tolerance: f64,
}

impl Default for ContactDetection {
    fn default() -> Self {
        Self {
            vel_threshold: 0.1,
            cutoff_hz: None,
            height_tolerance: DEFAULT_HEIGHT_TOLERANCE,
        }
    }
}

/// Per-foot contact schedule from foot kinematics.
///
/// A foot is in contact when its filtered speed is below the threshold and
/// its filtered height is within `height_tolerance` of the ground. The speed
/// is the smaller of the backward and forward one-sided differences, so the
/// first and last frames of a stationary stance both register. With a
/// `terrain` the ground is the terrain height under the foot; without one it
/// is the lowest filtered foot height in the motion, which keeps detection
/// independent of the motion's absolute placement.
pub fn detect_contacts(
    motion: &Motion,
    params: &ContactDetection,
    terrain: Option<&Heightmap>,
) -> Result<Vec<ContactFlags>> {
    let n = motion.num_frames();
    if n < 2 {
        return Err(Error::invalid(
            "frames",
            None,
            "contact detection needs at least 2 frames",
        ));
    }
    let feet: Vec<Vec<Vector3<f64>>> = (0..NUM_FEET)
        .map(|leg| {
            let raw: Vec<_> = (0..n).map(|i| motion.foot(i, leg)).collect();
            match params.cutoff_hz {
                Some(fc) => lowpass_vec3(&raw, fc, motion.fps),
                None => Ok(raw),
            }
        })
        .collect::<Result<_>>()?;

    let floor = feet.iter().flatten().map(|p| p.z).fold(f64::INFINITY, f64::min);

    let mut schedule = vec![[false; NUM_FEET]; n];
    for (leg, traj) in feet.iter().enumerate() {
        for i in 0..n {
            let back = (i > 0).then(|| (traj[i] - traj[i - 1]).norm());
            let fwd = (i + 1 < n).then(|| (traj[i + 1] - traj[i]).norm());
            let step = match (back, fwd) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!(),
            };
            let speed = step * motion.fps;
            let ground = match terrain {
                Some(map) => map.height(traj[i].x, traj[i].y),
                None => floor,
            };
            let height = traj[i].z - ground;
            schedule[i][leg] = speed < params.vel_threshold && height <= params.height_tolerance;
        }
    }
    Ok(schedule)
}
