//! Robot morphology: kinematic tree, joint limits, keypoint map and the
//! lumped inertial parameters used by the single-rigid-body plant.

mod json;
mod urdf;

use std::collections::HashMap;

use nalgebra::{Isometry3, Matrix3, Unit, Vector3};

pub use json::{load_robot_json, robot_from_json, robot_to_json};
pub use urdf::{parse_urdf_subset, parse_urdf_tree, parse_urdf_with_keypoints, robot_to_urdf};

use crate::error::{Error, Result};
use crate::motion::{keypoint_names, keypoint_parent, KeypointKind, Leg, NUM_FEET, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    /// Torque limit (N·m).
    pub effort: f64,
    /// Velocity limit (rad/s).
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    /// Child frame relative to the parent link frame at zero joint angle.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub limits: Option<JointLimits>,
}

/// Mass properties of one link, in the link frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkInertial {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

/// Links and joints as read from a description file, before any
/// quadruped-specific interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    pub name: String,
    pub links: Vec<String>,
    pub joints: Vec<Joint>,
    pub inertials: HashMap<String, LinkInertial>,
}

impl KinematicTree {
    /// Translation length of the joint whose child is `link`.
    pub fn segment_length(&self, link: &str) -> Option<f64> {
        self.joints
            .iter()
            .find(|j| j.child == link)
            .map(|j| j.origin.translation.vector.norm())
    }

    pub fn root(&self) -> Result<&str> {
        let roots: Vec<&String> = self
            .links
            .iter()
            .filter(|l| !self.joints.iter().any(|j| &j.child == *l))
            .collect();
        match roots.as_slice() {
            [root] => Ok(root.as_str()),
            [] => Err(Error::Model("kinematic graph has no root link (loop)".into())),
            many => Err(Error::Model(format!("kinematic graph has {} root links", many.len()))),
        }
    }

    /// Joints ordered so every joint comes after the joint producing its
    /// parent link. Fails on loops, multiple parents and dangling links.
    pub fn topological_joints(&self) -> Result<Vec<usize>> {
        for link in &self.links {
            let parents = self.joints.iter().filter(|j| &j.child == link).count();
            if parents > 1 {
                return Err(Error::Model(format!(
                    "link {link} has {parents} parent joints (kinematic loop)"
                )));
            }
        }
        for j in &self.joints {
            for l in [&j.parent, &j.child] {
                if !self.links.contains(l) {
                    return Err(Error::Model(format!("joint {} references unknown link {l}", j.name)));
                }
            }
        }
        let root = self.root()?;
        // Depth-first so each leg's joints stay contiguous.
        let children_of = |link: &str| -> Vec<usize> {
            (0..self.joints.len())
                .rev()
                .filter(|&i| self.joints[i].parent == link)
                .collect()
        };
        let mut order = Vec::with_capacity(self.joints.len());
        let mut stack = children_of(root);
        while let Some(j) = stack.pop() {
            order.push(j);
            if order.len() > self.joints.len() {
                break;
            }
            stack.extend(children_of(&self.joints[j].child));
        }
        if order.len() != self.joints.len() {
            return Err(Error::Model(
                "kinematic graph is not a tree rooted at the base (loop detected)".into(),
            ));
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSpec {
    pub name: String,
    pub link: String,
    pub offset: Vector3<f64>,
}

/// Optional replacements for derived quantities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelOverrides {
    pub mass: Option<f64>,
    pub inertia: Option<Matrix3<f64>>,
    pub link_lengths: Option<[f64; NUM_KEYPOINTS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub base_link: String,
    pub links: Vec<String>,
    /// All joints (revolute and fixed) in topological order.
    pub joints: Vec<Joint>,
    pub keypoints: Vec<KeypointSpec>,
    pub link_lengths: [f64; NUM_KEYPOINTS],
    pub parent_index: [Option<usize>; NUM_KEYPOINTS],
    pub foot_index: [usize; NUM_FEET],
    pub mass: f64,
    pub body_inertia: Matrix3<f64>,
    /// Foot positions in the base frame at zero joint angles.
    pub hip_offsets: [Vector3<f64>; NUM_FEET],

    // Derived indexing, rebuilt by `from_tree`.
    pub(crate) joint_parent_link: Vec<usize>,
    pub(crate) joint_child_link: Vec<usize>,
    pub(crate) joint_dof: Vec<Option<usize>>,
    pub(crate) keypoint_link: [usize; NUM_KEYPOINTS],
    /// Revolute joint indices (into `joints`) between the base and each keypoint.
    pub(crate) keypoint_chain: Vec<Vec<usize>>,
    pub(crate) dof_joint: Vec<usize>,
}

fn is_spd(m: &Matrix3<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-10 * m.abs().max().max(1.0) && m.cholesky().is_some()
}

/// Default keypoint map from link-name suffixes: `<LEG>_hip`, `<LEG>_thigh`,
/// `<LEG>_calf` and `<LEG>_foot` carry the hip, thigh, knee and foot
/// keypoints at their frame origins.
pub fn conventional_keypoints(links: &[String]) -> Result<Vec<KeypointSpec>> {
    let mut out = Vec::with_capacity(NUM_KEYPOINTS);
    for kind in KeypointKind::ALL {
        for leg in Leg::ALL {
            let suffix = match kind {
                KeypointKind::Hip => "hip",
                KeypointKind::Thigh => "thigh",
                KeypointKind::Knee => "calf",
                KeypointKind::Foot => "foot",
            };
            let wanted = format!("{}_{suffix}", leg.prefix());
            let link = links
                .iter()
                .find(|l| *l == &wanted || l.ends_with(&format!("_{wanted}")))
                .ok_or_else(|| Error::Model(format!("no link named like {wanted} for keypoint mapping")))?;
            out.push(KeypointSpec {
                name: format!("{}_{}", leg.prefix(), kind.suffix()),
                link: link.clone(),
                offset: Vector3::zeros(),
            });
        }
    }
    Ok(out)
}

impl RobotModel {
    pub fn from_tree(tree: &KinematicTree, keypoints: Vec<KeypointSpec>, overrides: &ModelOverrides) -> Result<Self> {
        let order = tree.topological_joints()?;
        let base_link = tree.root()?.to_string();
        let joints: Vec<Joint> = order.iter().map(|&i| tree.joints[i].clone()).collect();
        let link_idx: HashMap<&str, usize> = tree.links.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

        let mut joint_dof = Vec::with_capacity(joints.len());
        let mut dof_joint = Vec::new();
        for (i, j) in joints.iter().enumerate() {
            match j.kind {
                JointKind::Revolute => {
                    let lim = j
                        .limits
                        .ok_or_else(|| Error::Model(format!("revolute joint {} has no limit element", j.name)))?;
                    if !(lim.lower <= lim.upper) {
                        return Err(Error::Model(format!("joint {} has lower limit above upper", j.name)));
                    }
                    if !(lim.effort > 0.0 && lim.velocity > 0.0) {
                        return Err(Error::Model(format!(
                            "joint {} needs positive torque and velocity limits",
                            j.name
                        )));
                    }
                    joint_dof.push(Some(dof_joint.len()));
                    dof_joint.push(i);
                }
                JointKind::Fixed => joint_dof.push(None),
            }
        }
        let joint_parent_link: Vec<usize> = joints.iter().map(|j| link_idx[j.parent.as_str()]).collect();
        let joint_child_link: Vec<usize> = joints.iter().map(|j| link_idx[j.child.as_str()]).collect();

        // Reorder keypoints into the canonical layout.
        let names = keypoint_names();
        if keypoints.len() != NUM_KEYPOINTS {
            return Err(Error::Model(format!(
                "expected {NUM_KEYPOINTS} keypoints, got {}",
                keypoints.len()
            )));
        }
        let mut ordered = Vec::with_capacity(NUM_KEYPOINTS);
        for name in &names {
            let spec = keypoints
                .iter()
                .find(|k| &k.name == name)
                .ok_or_else(|| Error::Model(format!("keypoint {name} is not mapped to a link")))?;
            if !link_idx.contains_key(spec.link.as_str()) {
                return Err(Error::Model(format!(
                    "keypoint {name} refers to unknown link {}",
                    spec.link
                )));
            }
            ordered.push(spec.clone());
        }
        let keypoint_link: [usize; NUM_KEYPOINTS] = std::array::from_fn(|k| link_idx[ordered[k].link.as_str()]);

        // Chain of joints from the base down to each keypoint link.
        let parent_joint_of_link: HashMap<usize, usize> =
            joint_child_link.iter().enumerate().map(|(j, &l)| (l, j)).collect();
        let chain_to = |link: usize| -> Vec<usize> {
            let mut chain = Vec::new();
            let mut cur = link;
            while let Some(&j) = parent_joint_of_link.get(&cur) {
                chain.push(j);
                cur = joint_parent_link[j];
            }
            chain.reverse();
            chain
        };
        let keypoint_chain: Vec<Vec<usize>> = keypoint_link
            .iter()
            .map(|&l| chain_to(l).into_iter().filter(|&j| joint_dof[j].is_some()).collect())
            .collect();

        // Feet must be leaves.
        let foot_index: [usize; NUM_FEET] = std::array::from_fn(|leg| 12 + leg);
        for &f in &foot_index {
            let link = keypoint_link[f];
            if joint_parent_link.contains(&link) {
                return Err(Error::Model(format!(
                    "foot keypoint {} sits on link {} which has child links",
                    ordered[f].name, ordered[f].link
                )));
            }
        }
        // Each keypoint's link must lie below its parent keypoint's link.
        for k in 0..NUM_KEYPOINTS {
            if let Some(p) = keypoint_parent(k) {
                let full_chain = chain_to(keypoint_link[k]);
                let parent_link = keypoint_link[p];
                let below =
                    keypoint_link[k] == parent_link || full_chain.iter().any(|&j| joint_parent_link[j] == parent_link);
                if !below {
                    return Err(Error::Model(format!(
                        "keypoint {} is not below its parent keypoint {} in the tree",
                        ordered[k].name, ordered[p].name
                    )));
                }
            }
        }

        let (mass, inertia) = lump_inertia(tree, &joints, &joint_parent_link, &joint_child_link, &link_idx)?;
        let mut model = RobotModel {
            name: tree.name.clone(),
            base_link,
            links: tree.links.clone(),
            joints,
            keypoints: ordered,
            link_lengths: [0.0; NUM_KEYPOINTS],
            parent_index: std::array::from_fn(keypoint_parent),
            foot_index,
            mass: overrides.mass.unwrap_or(mass),
            body_inertia: overrides.inertia.unwrap_or(inertia),
            hip_offsets: [Vector3::zeros(); NUM_FEET],
            joint_parent_link,
            joint_child_link,
            joint_dof,
            keypoint_link,
            keypoint_chain,
            dof_joint,
        };

        let zero = crate::kinematics::GeneralizedCoord::zero(&model);
        let kp = crate::kinematics::fk(&model, &zero);
        for k in 0..NUM_KEYPOINTS {
            let parent = model.parent_index[k].map(|p| kp[p]).unwrap_or_else(Vector3::zeros);
            model.link_lengths[k] = (kp[k] - parent).norm();
        }
        if let Some(lengths) = overrides.link_lengths {
            model.link_lengths = lengths;
        }
        for (leg, &f) in model.foot_index.iter().enumerate() {
            model.hip_offsets[leg] = kp[f];
        }
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, &d) in self.link_lengths.iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(
                    "link_lengths",
                    None,
                    format!("keypoint {} has non-positive link length {d}", self.keypoints[k].name),
                ));
            }
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::invalid(
                "mass",
                None,
                format!("must be positive, got {}", self.mass),
            ));
        }
        if !is_spd(&self.body_inertia) {
            return Err(Error::invalid("inertia", None, "must be symmetric positive-definite"));
        }
        Ok(())
    }

    /// Number of actuated joints.
    pub fn num_dofs(&self) -> usize {
        self.dof_joint.len()
    }

    pub fn dof_joint(&self, dof: usize) -> &Joint {
        &self.joints[self.dof_joint[dof]]
    }

    pub fn dof_limits(&self, dof: usize) -> JointLimits {
        self.dof_joint(dof).limits.expect("revolute joints always carry limits")
    }

    pub fn joint_names(&self) -> Vec<String> {
        (0..self.num_dofs()).map(|d| self.dof_joint(d).name.clone()).collect()
    }

    /// Actuated joint indices (dof numbers) on the chain to keypoint `k`.
    pub fn keypoint_dofs(&self, k: usize) -> Vec<usize> {
        self.keypoint_chain[k]
            .iter()
            .map(|&j| self.joint_dof[j].unwrap())
            .collect()
    }

    /// Sum of link lengths from the hip keypoint down to the foot of `leg`.
    pub fn leg_length(&self, leg: usize) -> f64 {
        let mut k = self.foot_index[leg];
        let mut total = 0.0;
        while let Some(p) = self.parent_index[k] {
            total += self.link_lengths[k];
            k = p;
        }
        total
    }

    /// Largest per-foot force (N) the weakest joint of `leg` can hold with a
    /// lever arm equal to the knee-to-thigh segment length.
    pub fn foot_force_cap(&self, leg: usize) -> f64 {
        let foot = self.foot_index[leg];
        let lever = self.link_lengths[foot - 4];
        self.keypoint_dofs(foot)
            .into_iter()
            .map(|d| self.dof_limits(d).effort)
            .fold(f64::INFINITY, f64::min)
            / lever
    }

    pub fn tree(&self) -> KinematicTree {
        KinematicTree {
            name: self.name.clone(),
            links: self.links.clone(),
            joints: self.joints.clone(),
            inertials: HashMap::new(),
        }
    }
}

/// Total mass and inertia about the combined centre of mass, expressed in
/// the base frame at zero joint angles.
fn lump_inertia(
    tree: &KinematicTree,
    joints: &[Joint],
    joint_parent_link: &[usize],
    joint_child_link: &[usize],
    link_idx: &HashMap<&str, usize>,
) -> Result<(f64, Matrix3<f64>)> {
    let mut link_pose = vec![Isometry3::identity(); tree.links.len()];
    for (j, joint) in joints.iter().enumerate() {
        link_pose[joint_child_link[j]] = link_pose[joint_parent_link[j]] * joint.origin;
    }
    let mut mass = 0.0;
    let mut first_moment = Vector3::zeros();
    for (name, inertial) in &tree.inertials {
        let pose = link_pose[link_idx[name.as_str()]];
        mass += inertial.mass;
        first_moment += inertial.mass * (pose * nalgebra::Point3::from(inertial.com)).coords;
    }
    if mass <= 0.0 {
        // Callers may still supply mass and inertia overrides.
        return Ok((0.0, Matrix3::zeros()));
    }
    let com = first_moment / mass;
    let mut inertia = Matrix3::zeros();
    for (name, inertial) in &tree.inertials {
        let pose = link_pose[link_idx[name.as_str()]];
        let rot = pose.rotation.to_rotation_matrix();
        let r = (pose * nalgebra::Point3::from(inertial.com)).coords - com;
        inertia += rot.matrix() * inertial.inertia * rot.matrix().transpose()
            + inertial.mass * (Matrix3::identity() * r.norm_squared() - r * r.transpose());
    }
    Ok((mass, inertia))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::QuadrupedDims;

    #[test]
    fn reference_quadruped_structure() {
        let model = QuadrupedDims::default().model();
        assert_eq!(model.num_dofs(), 12);
        assert_eq!(model.keypoints.len(), 16);
        assert_eq!(model.keypoints[0].name, "FL_hip");
        assert_eq!(model.keypoints[15].name, "RR_foot");
        let dims = QuadrupedDims::default();
        assert!((model.link_lengths[12] - dims.calf).abs() < 1e-12);
        assert!((model.link_lengths[8] - dims.thigh).abs() < 1e-12);
        assert!((model.link_lengths[4] - dims.hip_lateral).abs() < 1e-12);
        for (k, p) in model.parent_index.iter().enumerate() {
            if let Some(p) = p {
                assert!(*p < k);
            }
        }
        // Foot chains hold exactly their own leg's three joints.
        assert_eq!(model.keypoint_dofs(12), vec![0, 1, 2]);
        assert_eq!(model.keypoint_dofs(15), vec![9, 10, 11]);
        assert_eq!(model.keypoint_dofs(0), vec![0]);
        assert_eq!(
            &model.joint_names()[..3],
            &["FL_hip_joint", "FL_thigh_joint", "FL_calf_joint"]
        );
    }

    #[test]
    fn parsing_is_deterministic() {
        let text = super::robot_to_urdf(&QuadrupedDims::default().model());
        assert_eq!(parse_urdf_subset(&text).unwrap(), parse_urdf_subset(&text).unwrap());
    }

    #[test]
    fn non_leaf_foot_rejected() {
        let mut tree = QuadrupedDims::default().tree();
        tree.links.push("toe".into());
        let mut extra = tree.joints.iter().find(|j| j.child == "FL_foot").unwrap().clone();
        extra.name = "toe_fixed".into();
        extra.parent = "FL_foot".into();
        extra.child = "toe".into();
        tree.joints.push(extra);
        let kp = conventional_keypoints(&tree.links).unwrap();
        assert!(RobotModel::from_tree(&tree, kp, &ModelOverrides::default()).is_err());
    }

    #[test]
    fn inertia_lumped_about_combined_com() {
        let mut tree = QuadrupedDims::default().tree();
        let point = LinkInertial {
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::zeros(),
        };
        tree.inertials.insert("FL_foot".into(), point);
        tree.inertials.insert("RR_foot".into(), point);
        let kp = conventional_keypoints(&tree.links).unwrap();
        let model = RobotModel::from_tree(&tree, kp, &ModelOverrides::default()).unwrap();
        let dims = QuadrupedDims::default();
        assert!((model.mass - dims.mass - 2.0).abs() < 1e-12);
        // Two point masses symmetric about the trunk centre; the combined COM
        // stays at the trunk origin, so each contributes m(|r|²I − rrᵀ).
        let r = model.hip_offsets[0];
        let expected_zz = dims.inertia[2] + 2.0 * (r.x * r.x + r.y * r.y);
        assert!((model.body_inertia[(2, 2)] - expected_zz).abs() < 1e-12);
    }

    #[test]
    fn force_cap_from_torque_limits() {
        let dims = QuadrupedDims::default();
        let model = dims.model();
        let expected = dims.hip_effort.min(dims.thigh_effort).min(dims.calf_effort) / dims.thigh;
        assert!((model.foot_force_cap(0) - expected).abs() < 1e-9);
    }
}
