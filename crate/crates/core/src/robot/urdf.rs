use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};

use super::{
    conventional_keypoints, Joint, JointKind, JointLimits, KeypointSpec, KinematicTree, LinkInertial, ModelOverrides,
    RobotModel,
};
use crate::error::{Error, Result};

fn parse_error(doc: &roxmltree::Document, node: roxmltree::Node, message: impl Into<String>) -> Error {
    let pos = doc.text_pos_at(node.range().start);
    Error::Parse {
        line: pos.row as usize,
        column: pos.col as usize,
        message: message.into(),
    }
}

fn floats<const N: usize>(
    doc: &roxmltree::Document,
    node: roxmltree::Node,
    attr: &str,
    default: Option<[f64; N]>,
) -> Result<[f64; N]> {
    let Some(text) = node.attribute(attr) else {
        return default.ok_or_else(|| parse_error(doc, node, format!("missing attribute {attr}")));
    };
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_error(doc, node, format!("attribute {attr}: {e}")))?;
    values.try_into().map_err(|v: Vec<f64>| {
        parse_error(
            doc,
            node,
            format!("attribute {attr} needs {N} numbers, got {}", v.len()),
        )
    })
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(tag))
}

fn origin_of(doc: &roxmltree::Document, node: roxmltree::Node) -> Result<Isometry3<f64>> {
    match child(node, "origin") {
        None => Ok(Isometry3::identity()),
        Some(o) => {
            let [x, y, z] = floats(doc, o, "xyz", Some([0.0; 3]))?;
            let [r, p, yaw] = floats(doc, o, "rpy", Some([0.0; 3]))?;
            Ok(Isometry3::from_parts(
                Translation3::new(x, y, z),
                UnitQuaternion::from_euler_angles(r, p, yaw),
            ))
        }
    }
}

/// Reads links, revolute/fixed joints, limits and inertials. Other joint
/// types are rejected; visual and collision elements are ignored.
pub fn parse_urdf_tree(xml: &str) -> Result<KinematicTree> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::Parse {
            line: pos.row as usize,
            column: pos.col as usize,
            message: e.to_string(),
        }
    })?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(parse_error(&doc, robot, "root element must be <robot>"));
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();
    let mut links = Vec::new();
    let mut inertials = HashMap::new();
    let mut joints = Vec::new();
    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let lname = node
                    .attribute("name")
                    .ok_or_else(|| parse_error(&doc, node, "link without name"))?
                    .to_string();
                if links.contains(&lname) {
                    return Err(parse_error(&doc, node, format!("duplicate link {lname}")));
                }
                if let Some(inertial) = child(node, "inertial") {
                    let origin = origin_of(&doc, inertial)?;
                    let mass =
                        child(inertial, "mass").ok_or_else(|| parse_error(&doc, inertial, "inertial without mass"))?;
                    let [m] = floats(&doc, mass, "value", None)?;
                    let inertia = match child(inertial, "inertia") {
                        Some(i) => {
                            let g = |a: &str| floats::<1>(&doc, i, a, Some([0.0])).map(|v| v[0]);
                            let (xx, xy, xz, yy, yz, zz) =
                                (g("ixx")?, g("ixy")?, g("ixz")?, g("iyy")?, g("iyz")?, g("izz")?);
                            let local = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
                            let r = origin.rotation.to_rotation_matrix();
                            r.matrix() * local * r.matrix().transpose()
                        }
                        None => Matrix3::zeros(),
                    };
                    if m < 0.0 {
                        return Err(parse_error(&doc, mass, "negative link mass"));
                    }
                    inertials.insert(
                        lname.clone(),
                        LinkInertial {
                            mass: m,
                            com: origin.translation.vector,
                            inertia,
                        },
                    );
                }
                links.push(lname);
            }
            "joint" => {
                let jname = node
                    .attribute("name")
                    .ok_or_else(|| parse_error(&doc, node, "joint without name"))?
                    .to_string();
                let kind = match node.attribute("type") {
                    Some("revolute") => JointKind::Revolute,
                    Some("fixed") => JointKind::Fixed,
                    other => {
                        return Err(parse_error(
                            &doc,
                            node,
                            format!("joint {jname}: unsupported type {}", other.unwrap_or("<none>")),
                        ))
                    }
                };
                let link_attr = |tag: &str| -> Result<String> {
                    child(node, tag)
                        .and_then(|c| c.attribute("link"))
                        .map(str::to_string)
                        .ok_or_else(|| parse_error(&doc, node, format!("joint {jname} lacks <{tag} link=...>")))
                };
                let (parent, childl) = (link_attr("parent")?, link_attr("child")?);
                let origin = origin_of(&doc, node)?;
                let axis_v = match child(node, "axis") {
                    Some(a) => Vector3::from(floats(&doc, a, "xyz", None)?),
                    None => Vector3::x(),
                };
                if axis_v.norm() < 1e-12 {
                    return Err(parse_error(&doc, node, format!("joint {jname} has a zero axis")));
                }
                let limits = match child(node, "limit") {
                    Some(l) => {
                        let g = |a: &str, d: Option<[f64; 1]>| floats::<1>(&doc, l, a, d).map(|v| v[0]);
                        Some(JointLimits {
                            lower: g("lower", Some([0.0]))?,
                            upper: g("upper", Some([0.0]))?,
                            effort: g("effort", None)?,
                            velocity: g("velocity", None)?,
                        })
                    }
                    None => None,
                };
                joints.push(Joint {
                    name: jname,
                    kind,
                    parent,
                    child: childl,
                    origin,
                    axis: Unit::new_normalize(axis_v),
                    limits,
                });
            }
            _ => {}
        }
    }
    let tree = KinematicTree {
        name,
        links,
        joints,
        inertials,
    };
    tree.topological_joints()?;
    Ok(tree)
}

/// Parses a URDF and maps keypoints by link-name convention.
pub fn parse_urdf_subset(xml: &str) -> Result<RobotModel> {
    let tree = parse_urdf_tree(xml)?;
    let keypoints = conventional_keypoints(&tree.links)?;
    RobotModel::from_tree(&tree, keypoints, &ModelOverrides::default())
}

/// Parses a URDF with an explicit keypoint table.
pub fn parse_urdf_with_keypoints(
    xml: &str,
    keypoints: Vec<KeypointSpec>,
    overrides: &ModelOverrides,
) -> Result<RobotModel> {
    let tree = parse_urdf_tree(xml)?;
    RobotModel::from_tree(&tree, keypoints, overrides)
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{:?} {:?} {:?}", v[0], v[1], v[2])
}

/// Writes a URDF for `model`. The whole mass and inertia go on the base link.
pub fn robot_to_urdf(model: &RobotModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>\n<robot name=\"{}\">", model.name);
    for link in &model.links {
        if *link == model.base_link {
            let i = model.body_inertia;
            let _ = writeln!(
                out,
                "  <link name=\"{link}\">\n    <inertial>\n      <origin xyz=\"0 0 0\" rpy=\"0 0 0\"/>\n      <mass value=\"{:?}\"/>\n      <inertia ixx=\"{:?}\" ixy=\"{:?}\" ixz=\"{:?}\" iyy=\"{:?}\" iyz=\"{:?}\" izz=\"{:?}\"/>\n    </inertial>\n  </link>",
                model.mass, i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]
            );
        } else {
            let _ = writeln!(out, "  <link name=\"{link}\"/>");
        }
    }
    for j in &model.joints {
        let kind = match j.kind {
            JointKind::Revolute => "revolute",
            JointKind::Fixed => "fixed",
        };
        let t = j.origin.translation.vector;
        let (r, p, y) = j.origin.rotation.euler_angles();
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{kind}\">", j.name);
        let _ = writeln!(
            out,
            "    <parent link=\"{}\"/>\n    <child link=\"{}\"/>",
            j.parent, j.child
        );
        let _ = writeln!(
            out,
            "    <origin xyz=\"{}\" rpy=\"{}\"/>",
            fmt3([t.x, t.y, t.z]),
            fmt3([r, p, y])
        );
        let a = j.axis.into_inner();
        let _ = writeln!(out, "    <axis xyz=\"{}\"/>", fmt3([a.x, a.y, a.z]));
        if let Some(l) = j.limits {
            let _ = writeln!(
                out,
                "    <limit lower=\"{:?}\" upper=\"{:?}\" effort=\"{:?}\" velocity=\"{:?}\"/>",
                l.lower, l.upper, l.effort, l.velocity
            );
        }
        let _ = writeln!(out, "  </joint>");
    }
    out.push_str("</robot>\n");
    out
}
