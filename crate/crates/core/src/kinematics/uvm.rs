use super::{ik, GeneralizedCoord};
use crate::error::{Error, Result};
use crate::motion::{keypoint_names, BasePose, Keypoints, Motion, NUM_KEYPOINTS};
use crate::robot::RobotModel;

#[derive(Debug, Clone, Copy, Default)]
pub struct UvmOptions {
    /// Also solve per-frame IK on the target robot and emit joint angles.
    pub solve_ik: bool,
}

pub fn uvm_retarget(src: &Motion, src_model: &RobotModel, trg_model: &RobotModel) -> Result<Motion> {
    uvm_retarget_with(src, src_model, trg_model, &UvmOptions::default())
}

/// Rebuilds every keypoint root-outward as its target parent plus the
/// source segment direction scaled to the target segment length. The base
/// pose is copied unchanged; motions without a base use the world origin.
pub fn uvm_retarget_with(
    src: &Motion,
    src_model: &RobotModel,
    trg_model: &RobotModel,
    opts: &UvmOptions,
) -> Result<Motion> {
    src.validate()?;
    if src_model.parent_index != trg_model.parent_index {
        return Err(Error::Model("source and target keypoint topologies differ".into()));
    }
    let names = keypoint_names();
    let mut out_frames = Vec::with_capacity(src.num_frames());
    for (i, kp) in src.keypoints.iter().enumerate() {
        let base = src.base_pose.as_ref().map(|b| b[i]).unwrap_or_else(BasePose::identity);
        let mut trg: Keypoints = *kp;
        for j in 0..NUM_KEYPOINTS {
            let (src_parent, trg_parent) = match trg_model.parent_index[j] {
                Some(p) => (kp[p], trg[p]),
                None => (base.position, base.position),
            };
            let seg = kp[j] - src_parent;
            let len = seg.norm();
            if len < 1e-12 {
                return Err(Error::invalid(
                    "keypoints",
                    Some(i),
                    format!("zero-length source segment ending at {}", names[j]),
                ));
            }
            trg[j] = trg_parent + seg * (trg_model.link_lengths[j] / len);
        }
        out_frames.push(trg);
    }
    let mut out = Motion::new(src.fps, out_frames);
    out.contacts = src.contacts.clone();
    out.base_pose = src.base_pose.clone();
    if opts.solve_ik {
        let weights = [1.0; NUM_KEYPOINTS];
        let lock_base = out.base_pose.is_some();
        let mut q = GeneralizedCoord::zero(trg_model);
        let mut joints = Vec::with_capacity(out.num_frames());
        for i in 0..out.num_frames() {
            if let Some(poses) = &out.base_pose {
                q.base_pos = poses[i].position;
                q.base_quat = poses[i].orientation;
            }
            q = ik(trg_model, &out.keypoints[i], &weights, &q, lock_base).q;
            joints.push(q.joints.iter().copied().collect());
        }
        out.joint_angles = Some(joints);
    }
    Ok(out)
}

/// Motion whose keypoints, base pose and joint angles come from per-frame configurations.
pub fn motion_from_configs(model: &RobotModel, fps: f64, qs: &[GeneralizedCoord]) -> Motion {
    let mut m = Motion::new(fps, qs.iter().map(|q| super::fk(model, q)).collect());
    m.base_pose = Some(qs.iter().map(GeneralizedCoord::base).collect());
    m.joint_angles = Some(
        qs.iter()
            .map(|q| q.joints.iter().copied().collect::<Vec<_>>())
            .collect(),
    );
    m
}
