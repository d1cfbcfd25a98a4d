//! URDF subset reader/writer. See `docs/urdf_subset.md` for the grammar.
//!
//! Every part frame coincides with the root frame at joint value 0, so the
//! writer emits joints with `rpy="0 0 0"` and offsets each link's visual
//! origin by the accumulated joint origin. The reader accepts arbitrary
//! joint `rpy` and visual origins and folds them into that convention.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use roxmltree::{Document, Node};
use thiserror::Error;

use super::mesh::{read_off, write_off};
use super::{ArticulatedModel, ConvexPiece, Joint, JointKind, ModelError, Part};
use crate::geometry::{Point3, RigidTransform, Vector3};

/// Name of the optional world link whose fixed joint carries `base_pose`.
pub const WORLD_LINK: &str = "world";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UrdfError {
    #[error("malformed XML at {line}:{col}: {msg}")]
    Xml { line: u32, col: u32, msg: String },
    #[error("line {line}: <{element}> {msg}")]
    Element { line: u32, element: String, msg: String },
    #[error("line {line}: joint '{name}' has unsupported type '{kind}'")]
    UnsupportedJoint { line: u32, name: String, kind: String },
    #[error("line {line}: link '{link}' closes a cycle or has several parents")]
    Cycle { line: u32, link: String },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("mesh '{file}': {msg}")]
    Mesh { file: String, msg: String },
}

fn fmt3(v: &Vector3) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

/// Mesh path for piece `k` of a part, relative to the URDF file.
pub fn mesh_filename(part: &Part, k: usize) -> String {
    format!("meshes/{}_{}.off", part.name, k)
}

pub fn to_urdf(model: &ArticulatedModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<?xml version=\"1.0\"?>");
    let _ = writeln!(s, "<robot name=\"{}\">", escape(&model.name));
    let _ = writeln!(s, "  <link name=\"{WORLD_LINK}\"/>");
    let (r, p, y) = model.base_pose.rpy();
    let root = &model.parts[0];
    let _ = writeln!(s, "  <joint name=\"{WORLD_LINK}_to_{}\" type=\"fixed\">", escape(&root.name));
    let _ = writeln!(s, "    <parent link=\"{WORLD_LINK}\"/>");
    let _ = writeln!(s, "    <child link=\"{}\"/>", escape(&root.name));
    let _ = writeln!(s, "    <origin xyz=\"{}\" rpy=\"{} {} {}\"/>", fmt3(&model.base_pose.translation), r, p, y);
    let _ = writeln!(s, "  </joint>");

    // URDF link frame of each part = root frame translated by its joint origin
    let link_offset = |part: &Part| part.joint.map_or(Vector3::zeros(), |j| j.origin.coords);
    for part in &model.parts {
        let _ = writeln!(s, "  <link name=\"{}\">", escape(&part.name));
        let off = -link_offset(part);
        for k in 0..part.geometry.len() {
            for tag in ["visual", "collision"] {
                let _ = writeln!(s, "    <{tag}>");
                let _ = writeln!(s, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", fmt3(&off));
                let _ = writeln!(s, "      <geometry><mesh filename=\"{}\"/></geometry>", escape(&mesh_filename(part, k)));
                let _ = writeln!(s, "    </{tag}>");
            }
        }
        let _ = writeln!(s, "  </link>");
    }
    for part in &model.parts[1..] {
        let j = part.joint.expect("validated");
        let parent = &model.parts[part.parent.expect("validated")];
        let xyz = j.origin.coords - link_offset(parent);
        let _ = writeln!(s, "  <joint name=\"joint_{}\" type=\"{}\">", part.id, j.kind.as_str());
        let _ = writeln!(s, "    <parent link=\"{}\"/>", escape(&parent.name));
        let _ = writeln!(s, "    <child link=\"{}\"/>", escape(&part.name));
        let _ = writeln!(s, "    <origin xyz=\"{}\" rpy=\"0 0 0\"/>", fmt3(&xyz));
        let _ = writeln!(s, "    <axis xyz=\"{}\"/>", fmt3(&j.axis));
        let _ = writeln!(s, "    <limit lower=\"{}\" upper=\"{}\" effort=\"0\" velocity=\"0\"/>", j.lower, j.upper);
        let _ = writeln!(s, "  </joint>");
    }
    let _ = writeln!(s, "</robot>");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<dir>/<file_name>` plus one OFF file per convex piece.
pub fn write_package(model: &ArticulatedModel, dir: &Path, file_name: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("meshes"))?;
    for part in &model.parts {
        for (k, piece) in part.geometry.iter().enumerate() {
            std::fs::write(dir.join(mesh_filename(part, k)), write_off(piece))?;
        }
    }
    std::fs::write(dir.join(file_name), to_urdf(model))
}

/// Reads a URDF file, resolving mesh references relative to its directory.
pub fn load_urdf(path: &Path) -> Result<ArticulatedModel, UrdfError> {
    let text = std::fs::read_to_string(path).map_err(|e| UrdfError::Mesh {
        file: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_urdf_with(&text, |file| {
        let t = std::fs::read_to_string(dir.join(file)).map_err(|e| e.to_string())?;
        read_off(&t).map_err(|e| e.to_string())
    })
}

/// Parses URDF text; mesh references are not resolved, parts have no geometry.
pub fn from_urdf(text: &str) -> Result<ArticulatedModel, UrdfError> {
    from_urdf_with(text, |_| Ok(ConvexPiece::new(vec![])))
        .map(|mut m| {
            for p in &mut m.parts {
                p.geometry.retain(|g| !g.triangles.is_empty());
            }
            m
        })
}

struct RawJoint<'a> {
    node: Node<'a, 'a>,
    name: String,
    kind: String,
    parent: String,
    child: String,
    origin: RigidTransform,
    axis: Vector3,
    limits: Option<(f64, f64)>,
}

fn line_of(doc: &Document, node: &Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

pub fn from_urdf_with<F>(text: &str, mut resolve: F) -> Result<ArticulatedModel, UrdfError>
where
    F: FnMut(&str) -> Result<ConvexPiece, String>,
{
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        UrdfError::Xml { line: pos.row, col: pos.col, msg: e.to_string() }
    })?;
    let robot = doc.root_element();
    let elem_err = |node: &Node, msg: String| UrdfError::Element {
        line: line_of(&doc, node),
        element: node.tag_name().name().to_string(),
        msg,
    };
    if robot.tag_name().name() != "robot" {
        return Err(elem_err(&robot, "root element must be <robot>".into()));
    }
    let name = robot.attribute("name").unwrap_or("model").to_string();

    let mut links: Vec<Node> = Vec::new();
    let mut joints: Vec<RawJoint> = Vec::new();
    for child in robot.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "link" => links.push(child),
            "joint" => joints.push(parse_joint(&child, &elem_err)?),
            _ => {}
        }
    }
    let mut link_index: HashMap<String, Node> = HashMap::new();
    for l in &links {
        let n = l.attribute("name").ok_or_else(|| elem_err(l, "missing 'name'".into()))?;
        if link_index.insert(n.to_string(), *l).is_some() {
            return Err(elem_err(l, format!("duplicate link '{n}'")));
        }
    }
    for j in &joints {
        for l in [&j.parent, &j.child] {
            if !link_index.contains_key(l) {
                return Err(elem_err(&j.node, format!("references unknown link '{l}'")));
            }
        }
    }

    // base pose from an optional fixed world joint
    let mut base_pose = RigidTransform::identity();
    let mut body_joints = Vec::new();
    for j in joints {
        match j.kind.as_str() {
            "fixed" if j.parent == WORLD_LINK => base_pose = j.origin,
            "prismatic" | "revolute" => body_joints.push(j),
            _ => {
                return Err(UrdfError::UnsupportedJoint { line: line_of(&doc, &j.node), name: j.name, kind: j.kind })
            }
        }
    }

    let mut parent_of: HashMap<&str, usize> = HashMap::new();
    for (ji, j) in body_joints.iter().enumerate() {
        if j.child == WORLD_LINK || parent_of.insert(j.child.as_str(), ji).is_some() {
            return Err(UrdfError::Cycle { line: line_of(&doc, &j.node), link: j.child.clone() });
        }
    }
    let roots: Vec<&Node> = links
        .iter()
        .filter(|l| {
            let n = l.attribute("name").unwrap_or_default();
            n != WORLD_LINK && !parent_of.contains_key(n)
        })
        .collect();
    let root = match roots.as_slice() {
        [r] => **r,
        [] => {
            let j = body_joints.first().map(|j| j.node).unwrap_or(robot);
            return Err(UrdfError::Cycle { line: line_of(&doc, &j), link: "<none>".into() });
        }
        [_, second, ..] => return Err(elem_err(second, "second root link; the part graph must be a single tree".into())),
    };
    let root_name = root.attribute("name").unwrap_or_default().to_string();

    // ids: root 0, joint j's child j + 1
    let mut id_of: HashMap<String, usize> = HashMap::new();
    id_of.insert(root_name.clone(), 0);
    for (ji, j) in body_joints.iter().enumerate() {
        id_of.insert(j.child.clone(), ji + 1);
    }
    // cycle check: every chain must reach the root
    for j in &body_joints {
        let mut cur = j.child.as_str();
        let mut steps = 0;
        while cur != root_name {
            match parent_of.get(cur) {
                Some(&pj) => cur = body_joints[pj].parent.as_str(),
                None => return Err(UrdfError::Cycle { line: line_of(&doc, &j.node), link: cur.to_string() }),
            }
            steps += 1;
            if steps > body_joints.len() {
                return Err(UrdfError::Cycle { line: line_of(&doc, &j.node), link: j.child.clone() });
            }
        }
    }

    // accumulated URDF link frame relative to the root frame, at rest
    let mut link_frame: HashMap<String, RigidTransform> = HashMap::new();
    link_frame.insert(root_name.clone(), RigidTransform::identity());
    fn frame_of(
        link: &str,
        joints: &[RawJoint],
        parent_of: &HashMap<&str, usize>,
        cache: &mut HashMap<String, RigidTransform>,
    ) -> RigidTransform {
        if let Some(t) = cache.get(link) {
            return *t;
        }
        let j = &joints[parent_of[link]];
        let t = frame_of(&j.parent, joints, parent_of, cache).compose(&j.origin);
        cache.insert(link.to_string(), t);
        t
    }

    let mut parts: Vec<Option<Part>> = vec![None; body_joints.len() + 1];
    for (link_name, id) in &id_of {
        let node = link_index[link_name];
        let frame = frame_of(link_name, &body_joints, &parent_of, &mut link_frame);
        let mut geometry = Vec::new();
        for vis in node.children().filter(|c| c.is_element() && c.tag_name().name() == "collision") {
            let vorigin = match vis.children().find(|c| c.tag_name().name() == "origin") {
                Some(o) => parse_origin(&o, &elem_err)?,
                None => RigidTransform::identity(),
            };
            let geom = vis
                .children()
                .find(|c| c.tag_name().name() == "geometry")
                .ok_or_else(|| elem_err(&vis, "missing <geometry>".into()))?;
            let mesh = geom
                .children()
                .find(|c| c.tag_name().name() == "mesh")
                .ok_or_else(|| elem_err(&geom, "only <mesh> geometry is supported".into()))?;
            let file = mesh.attribute("filename").ok_or_else(|| elem_err(&mesh, "missing 'filename'".into()))?;
            let piece = resolve(file).map_err(|msg| UrdfError::Mesh { file: file.to_string(), msg })?;
            geometry.push(piece.transformed(&frame.compose(&vorigin)));
        }
        let (parent, joint) = if *id == 0 {
            (None, None)
        } else {
            let j = &body_joints[id - 1];
            let kind = if j.kind == "prismatic" { JointKind::Prismatic } else { JointKind::Revolute };
            let axis_n = j.axis.norm();
            if !(axis_n > 0.0) || !axis_n.is_finite() {
                return Err(elem_err(&j.node, "axis must be a non-zero vector".into()));
            }
            let (lower, upper) = j.limits.ok_or_else(|| elem_err(&j.node, "missing <limit>".into()))?;
            let axis = frame.apply_vector(&j.axis) / axis_n;
            let origin = Point3::from(frame.translation);
            let joint = Joint { kind, axis, origin, lower, upper, state: 0f64.clamp(lower, upper) };
            (Some(id_of[&j.parent]), Some(joint))
        };
        parts[*id] = Some(Part { id: *id, name: link_name.clone(), parent, joint, geometry });
    }
    let parts = parts.into_iter().map(|p| p.expect("every id assigned")).collect();
    Ok(ArticulatedModel::new(name, parts, base_pose)?)
}

fn parse_joint<'a, E>(node: &Node<'a, 'a>, elem_err: &E) -> Result<RawJoint<'a>, UrdfError>
where
    E: Fn(&Node, String) -> UrdfError,
{
    let attr = |n: &Node, a: &str| -> Result<String, UrdfError> {
        n.attribute(a).map(str::to_string).ok_or_else(|| elem_err(n, format!("missing '{a}'")))
    };
    let child_el = |tag: &str| node.children().find(|c| c.is_element() && c.tag_name().name() == tag);
    let name = attr(node, "name")?;
    let kind = attr(node, "type")?;
    let parent = attr(&child_el("parent").ok_or_else(|| elem_err(node, "missing <parent>".into()))?, "link")?;
    let child = attr(&child_el("child").ok_or_else(|| elem_err(node, "missing <child>".into()))?, "link")?;
    let origin = match child_el("origin") {
        Some(o) => parse_origin(&o, elem_err)?,
        None => RigidTransform::identity(),
    };
    let axis = match child_el("axis") {
        Some(a) => parse_vec3(&a, "xyz", elem_err)?.unwrap_or_else(Vector3::x),
        None => Vector3::x(),
    };
    let limits = match child_el("limit") {
        Some(l) => {
            let lo = parse_f64(&l, "lower", elem_err)?.unwrap_or(0.0);
            let hi = parse_f64(&l, "upper", elem_err)?.unwrap_or(0.0);
            if !(lo <= hi) {
                return Err(elem_err(&l, format!("lower {lo} exceeds upper {hi}")));
            }
            Some((lo, hi))
        }
        None => None,
    };
    Ok(RawJoint { node: *node, name, kind, parent, child, origin, axis, limits })
}

fn parse_origin<E>(node: &Node, elem_err: &E) -> Result<RigidTransform, UrdfError>
where
    E: Fn(&Node, String) -> UrdfError,
{
    let xyz = parse_vec3(node, "xyz", elem_err)?.unwrap_or_else(Vector3::zeros);
    let rpy = parse_vec3(node, "rpy", elem_err)?.unwrap_or_else(Vector3::zeros);
    Ok(RigidTransform::from_rpy(xyz, rpy.x, rpy.y, rpy.z))
}

fn parse_vec3<E>(node: &Node, attr: &str, elem_err: &E) -> Result<Option<Vector3>, UrdfError>
where
    E: Fn(&Node, String) -> UrdfError,
{
    let Some(text) = node.attribute(attr) else { return Ok(None) };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| elem_err(node, format!("'{attr}' is not numeric: '{text}'")))?;
    if vals.len() != 3 {
        return Err(elem_err(node, format!("'{attr}' needs three numbers")));
    }
    Ok(Some(Vector3::new(vals[0], vals[1], vals[2])))
}

fn parse_f64<E>(node: &Node, attr: &str, elem_err: &E) -> Result<Option<f64>, UrdfError>
where
    E: Fn(&Node, String) -> UrdfError,
{
    node.attribute(attr)
        .map(|t| t.trim().parse::<f64>().map_err(|_| elem_err(node, format!("'{attr}' is not numeric: '{t}'"))))
        .transpose()
}

/// Strict structural check against the documented subset: only the listed
/// elements and attributes, joint types fixed/prismatic/revolute, and `fixed`
/// only from the world link.
pub fn validate_subset(text: &str) -> Result<(), UrdfError> {
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        UrdfError::Xml { line: pos.row, col: pos.col, msg: e.to_string() }
    })?;
    let bad = |node: &Node, msg: String| UrdfError::Element {
        line: line_of(&doc, node),
        element: node.tag_name().name().to_string(),
        msg,
    };
    let allowed: &[(&str, &[&str], &[&str])] = &[
        ("robot", &["name"], &["link", "joint"]),
        ("link", &["name"], &["visual", "collision"]),
        ("visual", &[], &["origin", "geometry"]),
        ("collision", &[], &["origin", "geometry"]),
        ("geometry", &[], &["mesh"]),
        ("mesh", &["filename"], &[]),
        ("joint", &["name", "type"], &["parent", "child", "origin", "axis", "limit"]),
        ("parent", &["link"], &[]),
        ("child", &["link"], &[]),
        ("origin", &["xyz", "rpy"], &[]),
        ("axis", &["xyz"], &[]),
        ("limit", &["lower", "upper", "effort", "velocity"], &[]),
    ];
    fn walk<'a>(
        node: Node<'a, 'a>,
        allowed: &[(&str, &[&str], &[&str])],
        bad: &dyn Fn(&Node, String) -> UrdfError,
    ) -> Result<(), UrdfError> {
        let tag = node.tag_name().name();
        let Some((_, attrs, children)) = allowed.iter().find(|(t, _, _)| *t == tag) else {
            return Err(bad(&node, "element not in the supported subset".into()));
        };
        for a in node.attributes() {
            if !attrs.contains(&a.name()) {
                return Err(bad(&node, format!("attribute '{}' not in the supported subset", a.name())));
            }
        }
        for c in node.children().filter(Node::is_element) {
            if !children.contains(&c.tag_name().name()) {
                return Err(bad(&c, format!("not allowed inside <{tag}>")));
            }
            walk(c, allowed, bad)?;
        }
        if tag == "joint" {
            let kind = node.attribute("type").unwrap_or_default();
            let parent = node
                .children()
                .find(|c| c.tag_name().name() == "parent")
                .and_then(|p| p.attribute("link"))
                .unwrap_or_default();
            let ok = matches!(kind, "prismatic" | "revolute") || (kind == "fixed" && parent == WORLD_LINK);
            if !ok {
                return Err(bad(&node, format!("joint type '{kind}' not in the supported subset")));
            }
            if kind != "fixed" && !node.children().any(|c| c.tag_name().name() == "limit") {
                return Err(bad(&node, "movable joints need <limit>".into()));
            }
        }
        Ok(())
    }
    walk(doc.root_element(), allowed, &bad)?;
    // structural checks (tree, references) are shared with the parser
    from_urdf(text).map(|_| ())
}
