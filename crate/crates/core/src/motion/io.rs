use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{keypoint_names, BasePose, Keypoints, Motion, NUM_KEYPOINTS};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    keypoint_names: Vec<String>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contacts: Option<[bool; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_pos: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_quat: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints: Option<Vec<f64>>,
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<Motion> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    motion_from_json(&text)
}

pub fn save_motion(motion: &Motion, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, motion_to_json(motion)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn motion_from_json(text: &str) -> Result<Motion> {
    let file: MotionFile = serde_json::from_str(text).map_err(Error::from_json)?;
    let canonical = keypoint_names();
    if file.keypoint_names.len() != NUM_KEYPOINTS {
        return Err(Error::invalid(
            "keypoint_names",
            None,
            format!("expected {NUM_KEYPOINTS} names, got {}", file.keypoint_names.len()),
        ));
    }
    // Files may list keypoints in any order; map them onto the canonical layout.
    let mut order = [0usize; NUM_KEYPOINTS];
    for (slot, name) in canonical.iter().enumerate() {
        order[slot] = file
            .keypoint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid("keypoint_names", None, format!("missing keypoint {name}")))?;
    }

    let n = file.frames.len();
    let first = file.frames.first();
    let has_contacts = first.is_some_and(|f| f.contacts.is_some());
    let has_base = first.is_some_and(|f| f.base_pos.is_some() || f.base_quat.is_some());
    let has_joints = first.is_some_and(|f| f.joints.is_some());

    let mut keypoints = Vec::with_capacity(n);
    let mut contacts = Vec::new();
    let mut poses = Vec::new();
    let mut joints = Vec::new();
    for (i, frame) in file.frames.into_iter().enumerate() {
        if frame.keypoints.len() != NUM_KEYPOINTS {
            return Err(Error::invalid(
                "keypoints",
                Some(i),
                format!("expected {NUM_KEYPOINTS} keypoints, got {}", frame.keypoints.len()),
            ));
        }
        let mut kp: Keypoints = [Vector3::zeros(); NUM_KEYPOINTS];
        for (slot, &src) in order.iter().enumerate() {
            kp[slot] = Vector3::from(frame.keypoints[src]);
        }
        keypoints.push(kp);

        if frame.contacts.is_some() != has_contacts {
            return Err(Error::invalid(
                "contacts",
                Some(i),
                "present on some frames but not others",
            ));
        }
        if let Some(c) = frame.contacts {
            contacts.push(c);
        }

        match (has_base, frame.base_pos, frame.base_quat) {
            (true, Some(p), Some(q)) => {
                let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
                let norm = quat.norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "base_quat",
                        Some(i),
                        format!("quaternion norm {norm} is not unit"),
                    ));
                }
                poses.push(BasePose {
                    position: Vector3::from(p),
                    orientation: UnitQuaternion::new_unchecked(quat),
                });
            }
            (false, None, None) => {}
            _ => {
                return Err(Error::invalid(
                    "base_pos/base_quat",
                    Some(i),
                    "base position and orientation must be given together on every frame",
                ))
            }
        }

        if frame.joints.is_some() != has_joints {
            return Err(Error::invalid(
                "joints",
                Some(i),
                "present on some frames but not others",
            ));
        }
        if let Some(q) = frame.joints {
            joints.push(q);
        }
    }

    let motion = Motion {
        fps: file.fps,
        keypoints,
        contacts: has_contacts.then_some(contacts),
        base_pose: has_base.then_some(poses),
        joint_angles: has_joints.then_some(joints),
    };
    motion.validate()?;
    Ok(motion)
}

pub fn motion_to_json(motion: &Motion) -> Result<String> {
    motion.validate()?;
    let frames = (0..motion.num_frames())
        .map(|i| {
            let pose = motion.base_pose.as_ref().map(|p| p[i]);
            FrameRecord {
                keypoints: motion.keypoints[i].iter().map(|p| [p.x, p.y, p.z]).collect(),
                contacts: motion.contacts.as_ref().map(|c| c[i]),
                base_pos: pose.map(|p| [p.position.x, p.position.y, p.position.z]),
                base_quat: pose.map(|p| {
                    let q = p.orientation.quaternion();
                    [q.w, q.i, q.j, q.k]
                }),
                joints: motion.joint_angles.as_ref().map(|j| j[i].clone()),
            }
        })
        .collect();
    let file = MotionFile {
        fps: motion.fps,
        keypoint_names: keypoint_names(),
        frames,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_json(extra: &str) -> String {
        let kps: Vec<String> = (0..16).map(|i| format!("[{i}.0, 0.5, -0.25]")).collect();
        format!(r#"{{"keypoints": [{}]{extra}}}"#, kps.join(","))
    }

    fn names_json() -> String {
        let names: Vec<String> = keypoint_names().iter().map(|n| format!("\"{n}\"")).collect();
        format!("[{}]", names.join(","))
    }

    #[test]
    fn minimal_two_frame_file() {
        let text = format!(
            r#"{{"fps": 30, "keypoint_names": {}, "frames": [{}, {}]}}"#,
            names_json(),
            frame_json(""),
            frame_json("")
        );
        let m = motion_from_json(&text).unwrap();
        assert_eq!(m.num_frames(), 2);
        assert!(m.contacts.is_none());
        assert!(m.base_pose.is_none());
        assert_eq!(m.keypoints[1][3], Vector3::new(3.0, 0.5, -0.25));
    }

    #[test]
    fn non_unit_quaternion_names_frame() {
        let good = frame_json(r#", "base_pos": [0,0,0.3], "base_quat": [1,0,0,0]"#);
        let bad = frame_json(r#", "base_pos": [0,0,0.3], "base_quat": [1.1,0,0,0]"#);
        let text = format!(
            r#"{{"fps": 30, "keypoint_names": {}, "frames": [{good}, {bad}]}}"#,
            names_json()
        );
        let err = motion_from_json(&text).unwrap_err();
        match err {
            Error::Invalid { field, frame, .. } => {
                assert_eq!(field, "base_quat");
                assert_eq!(frame, Some(1));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = motion_from_json("{\n  \"fps\": 30,\n  oops\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn reorders_keypoints_by_name() {
        let mut names = keypoint_names();
        names.swap(0, 15);
        let names_json: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
        let text = format!(
            r#"{{"fps": 30, "keypoint_names": [{}], "frames": [{}, {}]}}"#,
            names_json.join(","),
            frame_json(""),
            frame_json("")
        );
        let m = motion_from_json(&text).unwrap();
        // FL_hip was written in slot 15, RR_foot in slot 0.
        assert_eq!(m.keypoints[0][0].x, 15.0);
        assert_eq!(m.keypoints[0][15].x, 0.0);
    }

    #[test]
    fn single_frame_rejected() {
        let text = format!(
            r#"{{"fps": 30, "keypoint_names": {}, "frames": [{}]}}"#,
            names_json(),
            frame_json("")
        );
        assert!(motion_from_json(&text).is_err());
    }
}
