//! Synthetic robots and motions with known ground truth, shared by tests,
//! the CLI `fixture` command and the acceptance suite.

mod gaits;
mod robots;

pub use gaits::{
    bounce_motion, gait_motion, hop_motion, motion_from_feet, standing_motion, BounceParams, Gait, GaitParams,
    HopParams, G,
};
pub use robots::QuadrupedDims;
