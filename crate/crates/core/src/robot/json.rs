use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    conventional_keypoints, parse_urdf_tree, Joint, JointKind, JointLimits, KeypointSpec, KinematicTree, LinkInertial,
    ModelOverrides, RobotModel,
};
use crate::error::{Error, Result};
use crate::motion::{Leg, NUM_KEYPOINTS};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    com: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inertia: Option<[[f64; 3]; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitDoc {
    lower: f64,
    upper: f64,
    effort: f64,
    velocity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    parent: String,
    child: String,
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit: Option<LimitDoc>,
}

fn default_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointDoc {
    name: String,
    link: String,
    #[serde(default)]
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotDoc {
    name: String,
    /// Path to a URDF providing links and joints, relative to the JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    urdf: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    links: Vec<LinkDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    joints: Vec<JointDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoints: Option<Vec<KeypointDoc>>,
    /// Foot keypoint names, FL FR RL RR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feet: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inertia: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    link_lengths: Option<Vec<f64>>,
}

fn mat(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn build(doc: RobotDoc, base_dir: Option<&Path>) -> Result<RobotModel> {
    if let Some(feet) = &doc.feet {
        let expected: Vec<String> = Leg::ALL.iter().map(|l| format!("{}_foot", l.prefix())).collect();
        if *feet != expected {
            return Err(Error::invalid(
                "feet",
                None,
                format!("expected exactly the four foot keypoints {expected:?}, got {feet:?}"),
            ));
        }
    }
    let tree = match &doc.urdf {
        Some(rel) => {
            let path = base_dir.map(|d| d.join(rel)).unwrap_or_else(|| rel.into());
            let xml = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let mut tree = parse_urdf_tree(&xml)?;
            tree.name = doc.name.clone();
            tree
        }
        None => {
            let mut inertials = HashMap::new();
            for l in &doc.links {
                if let Some(m) = l.mass {
                    if m < 0.0 {
                        return Err(Error::invalid(
                            "links.mass",
                            None,
                            format!("link {} has negative mass", l.name),
                        ));
                    }
                    inertials.insert(
                        l.name.clone(),
                        LinkInertial {
                            mass: m,
                            com: Vector3::from(l.com.unwrap_or_default()),
                            inertia: l.inertia.map(mat).unwrap_or_else(Matrix3::zeros),
                        },
                    );
                }
            }
            let joints = doc
                .joints
                .iter()
                .map(|j| {
                    let kind = match j.kind.as_str() {
                        "revolute" => JointKind::Revolute,
                        "fixed" => JointKind::Fixed,
                        other => {
                            return Err(Error::invalid(
                                "joints.type",
                                None,
                                format!("joint {}: unsupported type {other}", j.name),
                            ))
                        }
                    };
                    let axis = Vector3::from(j.axis);
                    if axis.norm() < 1e-12 {
                        return Err(Error::invalid(
                            "joints.axis",
                            None,
                            format!("joint {} has a zero axis", j.name),
                        ));
                    }
                    Ok(Joint {
                        name: j.name.clone(),
                        kind,
                        parent: j.parent.clone(),
                        child: j.child.clone(),
                        origin: Isometry3::from_parts(
                            Translation3::from(Vector3::from(j.xyz)),
                            UnitQuaternion::from_euler_angles(j.rpy[0], j.rpy[1], j.rpy[2]),
                        ),
                        axis: Unit::new_normalize(axis),
                        limits: j.limit.as_ref().map(|l| JointLimits {
                            lower: l.lower,
                            upper: l.upper,
                            effort: l.effort,
                            velocity: l.velocity,
                        }),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            KinematicTree {
                name: doc.name.clone(),
                links: doc.links.iter().map(|l| l.name.clone()).collect(),
                joints,
                inertials,
            }
        }
    };
    let keypoints = match &doc.keypoints {
        Some(list) => list
            .iter()
            .map(|k| KeypointSpec {
                name: k.name.clone(),
                link: k.link.clone(),
                offset: Vector3::from(k.offset),
            })
            .collect(),
        None => conventional_keypoints(&tree.links)?,
    };
    let link_lengths = match &doc.link_lengths {
        Some(v) => {
            let arr: [f64; NUM_KEYPOINTS] = v.clone().try_into().map_err(|v: Vec<f64>| {
                Error::invalid(
                    "link_lengths",
                    None,
                    format!("expected {NUM_KEYPOINTS} values, got {}", v.len()),
                )
            })?;
            Some(arr)
        }
        None => None,
    };
    let overrides = ModelOverrides {
        mass: doc.mass,
        inertia: doc.inertia.map(mat),
        link_lengths,
    };
    RobotModel::from_tree(&tree, keypoints, &overrides)
}

pub fn robot_from_json(text: &str) -> Result<RobotModel> {
    let doc: RobotDoc = serde_json::from_str(text).map_err(Error::from_json)?;
    build(doc, None)
}

/// Loads a native JSON robot description. A `urdf` field is resolved
/// relative to the JSON file.
pub fn load_robot_json(path: &Path) -> Result<RobotModel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: RobotDoc = serde_json::from_str(&text).map_err(Error::from_json)?;
    build(doc, path.parent())
}

/// Serialises a model with its lumped mass and inertia as overrides.
pub fn robot_to_json(model: &RobotModel) -> String {
    let doc = RobotDoc {
        name: model.name.clone(),
        urdf: None,
        links: model
            .links
            .iter()
            .map(|l| LinkDoc {
                name: l.clone(),
                mass: None,
                com: None,
                inertia: None,
            })
            .collect(),
        joints: model
            .joints
            .iter()
            .map(|j| {
                let t = j.origin.translation.vector;
                let (r, p, y) = j.origin.rotation.euler_angles();
                let a = j.axis.into_inner();
                JointDoc {
                    name: j.name.clone(),
                    kind: match j.kind {
                        JointKind::Revolute => "revolute",
                        JointKind::Fixed => "fixed",
                    }
                    .into(),
                    parent: j.parent.clone(),
                    child: j.child.clone(),
                    xyz: [t.x, t.y, t.z],
                    rpy: [r, p, y],
                    axis: [a.x, a.y, a.z],
                    limit: j.limits.map(|l| LimitDoc {
                        lower: l.lower,
                        upper: l.upper,
                        effort: l.effort,
                        velocity: l.velocity,
                    }),
                }
            })
            .collect(),
        keypoints: Some(
            model
                .keypoints
                .iter()
                .map(|k| KeypointDoc {
                    name: k.name.clone(),
                    link: k.link.clone(),
                    offset: [k.offset.x, k.offset.y, k.offset.z],
                })
                .collect(),
        ),
        feet: Some(
            model
                .foot_index
                .iter()
                .map(|&f| model.keypoints[f].name.clone())
                .collect(),
        ),
        mass: Some(model.mass),
        inertia: Some(rows(&model.body_inertia)),
        link_lengths: None,
    };
    serde_json::to_string_pretty(&doc).expect("robot document always serialises")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::QuadrupedDims;
    use crate::kinematics::{fk, GeneralizedCoord};
    use crate::robot::{parse_urdf_subset, robot_to_urdf};

    #[test]
    fn json_and_urdf_agree_on_forward_kinematics() {
        let model = QuadrupedDims::default().model();
        let from_json = robot_from_json(&robot_to_json(&model)).unwrap();
        let from_urdf = parse_urdf_subset(&robot_to_urdf(&model)).unwrap();
        let mut q = GeneralizedCoord::zero(&model);
        for (d, v) in q.joints.iter_mut().enumerate() {
            *v = 0.1 * (d as f64 + 1.0).sin();
        }
        let (a, b) = (fk(&from_json, &q), fk(&from_urdf, &q));
        for k in 0..NUM_KEYPOINTS {
            assert!((a[k] - b[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn negative_link_length_rejected() {
        let model = QuadrupedDims::default().model();
        let mut v: serde_json::Value = serde_json::from_str(&robot_to_json(&model)).unwrap();
        let mut lengths = model.link_lengths.to_vec();
        lengths[9] = -0.2;
        v["link_lengths"] = serde_json::json!(lengths);
        match robot_from_json(&v.to_string()) {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "link_lengths"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_feet_list_rejected() {
        let model = QuadrupedDims::default().model();
        let mut v: serde_json::Value = serde_json::from_str(&robot_to_json(&model)).unwrap();
        v["feet"] = serde_json::json!(["FL_foot", "FR_foot", "RL_foot"]);
        assert!(matches!(robot_from_json(&v.to_string()), Err(Error::Invalid { .. })));
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(robot_from_json(r#"{"name":"x","wheels":4}"#).is_err());
    }

    #[test]
    fn json_can_reference_urdf() {
        let dir = tempfile::tempdir().unwrap();
        let model = QuadrupedDims::default().model();
        std::fs::write(dir.path().join("r.urdf"), robot_to_urdf(&model)).unwrap();
        std::fs::write(
            dir.path().join("r.json"),
            r#"{"name":"wrapped","urdf":"r.urdf","mass":20.0}"#,
        )
        .unwrap();
        let loaded = load_robot_json(&dir.path().join("r.json")).unwrap();
        assert_eq!(loaded.name, "wrapped");
        assert_eq!(loaded.mass, 20.0);
        assert_eq!(loaded.num_dofs(), 12);
    }
}
