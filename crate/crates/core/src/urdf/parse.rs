use std::collections::HashMap;

use log::warn;
use roxmltree::{Document, Node};

use super::UrdfDocument;
use crate::embodiment::{
    validate, Embodiment, JointKind, JointSpec, Kinematics, LinkSpec, MorphologyClass, Shape, Violation,
};
use crate::error::{Error, Result};
use crate::procgen::VariationSpec;

/// Radius of the sphere stand-in for links without a primitive geometry.
const FALLBACK_RADIUS: f64 = 0.01;
/// Mass assigned to links without a positive mass.
const FALLBACK_MASS: f64 = 1e-3;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| parse_err(format!("{what}: `{s}` is not a number")))
}

fn attr_f64(n: Node, name: &str) -> Result<Option<f64>> {
    n.attribute(name).map(|s| num(s, name)).transpose()
}

fn vec3(s: &str, what: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(format!("{what}: expected 3 numbers, got `{s}`")));
    }
    Ok([num(parts[0], what)?, num(parts[1], what)?, num(parts[2], what)?])
}

fn child<'a, 'i>(n: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    n.children().find(|c| c.is_element() && c.has_tag_name(tag))
}

fn origin(n: Node) -> Result<([f64; 3], [f64; 3])> {
    match child(n, "origin") {
        None => Ok(([0.0; 3], [0.0; 3])),
        Some(o) => Ok((
            o.attribute("xyz").map(|s| vec3(s, "origin xyz")).transpose()?.unwrap_or([0.0; 3]),
            o.attribute("rpy").map(|s| vec3(s, "origin rpy")).transpose()?.unwrap_or([0.0; 3]),
        )),
    }
}

fn shape_of(geom: Node, link: &str) -> Result<Option<Shape>> {
    for g in geom.children().filter(|c| c.is_element()) {
        let need = |a: &str| -> Result<f64> {
            attr_f64(g, a)?.ok_or_else(|| parse_err(format!("link `{link}`: {} without {a}", g.tag_name().name())))
        };
        match g.tag_name().name() {
            "sphere" => return Ok(Some(Shape::Sphere { radius: need("radius")? })),
            "cylinder" => return Ok(Some(Shape::Cylinder { length: need("length")?, radius: need("radius")? })),
            "box" => {
                let s = g.attribute("size").ok_or_else(|| parse_err(format!("link `{link}`: box without size")))?;
                let [length, width, height] = vec3(s, "box size")?;
                return Ok(Some(Shape::Box { length, width, height }));
            }
            other => warn!("link `{link}`: unsupported geometry `{other}` ignored"),
        }
    }
    Ok(None)
}

fn parse_link(n: Node) -> Result<LinkSpec> {
    let name = n.attribute("name").ok_or_else(|| parse_err("link without name"))?.to_string();
    let mut found = None;
    for tag in ["collision", "visual"] {
        for el in n.children().filter(|c| c.is_element() && c.has_tag_name(tag)) {
            if let Some(g) = child(el, "geometry") {
                if let Some(shape) = shape_of(g, &name)? {
                    found = Some((shape, origin(el)?));
                    break;
                }
            }
        }
        if found.is_some() {
            break;
        }
    }
    let (shape, (offset, rpy)) = found.unwrap_or_else(|| {
        warn!("link `{name}`: no primitive geometry, using a {FALLBACK_RADIUS} m sphere");
        (Shape::Sphere { radius: FALLBACK_RADIUS }, ([0.0; 3], [0.0; 3]))
    });
    let mass = child(n, "inertial").and_then(|i| child(i, "mass")).map(|m| attr_f64(m, "value")).transpose()?.flatten();
    let mass = match mass {
        Some(m) if m > 0.0 => m,
        _ => {
            warn!("link `{name}`: missing or non-positive mass, using {FALLBACK_MASS} kg");
            FALLBACK_MASS
        }
    };
    Ok(LinkSpec { name, shape, mass, parent_frame_offset: offset, geometry_rpy: rpy })
}

fn parse_joint(n: Node) -> Result<(JointSpec, bool)> {
    let name = n.attribute("name").ok_or_else(|| parse_err("joint without name"))?.to_string();
    let ty = n.attribute("type").ok_or_else(|| parse_err(format!("joint `{name}` without type")))?;
    let link_of = |tag: &str| -> Result<String> {
        child(n, tag)
            .and_then(|c| c.attribute("link"))
            .map(str::to_string)
            .ok_or_else(|| parse_err(format!("joint `{name}` without {tag} link")))
    };
    let parent_link = link_of("parent")?;
    let child_link = link_of("child")?;
    let (origin, origin_rpy) = origin(n)?;
    if ty == "fixed" {
        let j = JointSpec {
            name,
            kind: JointKind::Fixed,
            parent_link,
            child_link,
            axis: [1.0, 0.0, 0.0],
            limits: (0.0, 0.0),
            max_torque: 0.0,
            max_velocity: 0.0,
            nominal_angle: 0.0,
            origin,
            origin_rpy,
        };
        return Ok((j, true));
    }
    if ty != "revolute" && ty != "continuous" {
        return Err(parse_err(format!("joint `{name}`: unsupported type `{ty}`")));
    }
    let mut axis = child(n, "axis")
        .and_then(|a| a.attribute("xyz"))
        .map(|s| vec3(s, "axis"))
        .transpose()?
        .unwrap_or([1.0, 0.0, 0.0]);
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(parse_err(format!("joint `{name}`: zero axis")));
    }
    if (norm - 1.0).abs() > 1e-9 {
        axis = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
    }
    let limit = child(n, "limit");
    let get = |a: &str| -> Result<Option<f64>> { limit.map(|l| attr_f64(l, a)).transpose().map(Option::flatten) };
    let limits = if ty == "continuous" {
        (-std::f64::consts::PI, std::f64::consts::PI)
    } else {
        let lo = get("lower")?.unwrap_or(0.0);
        let hi = get("upper")?.unwrap_or(0.0);
        (lo, hi)
    };
    let rating = |a: &str, dflt: f64| -> Result<f64> {
        match get(a)? {
            Some(v) if v > 0.0 => Ok(v),
            _ => {
                warn!("joint `{name}`: missing {a}, using {dflt}");
                Ok(dflt)
            }
        }
    };
    let max_torque = rating("effort", 1.0)?;
    let max_velocity = rating("velocity", 1.0)?;
    let nominal = child(n, "nominal").map(|c| attr_f64(c, "angle")).transpose()?.flatten();
    let j = JointSpec {
        name,
        kind: JointKind::Revolute,
        parent_link,
        child_link,
        axis,
        limits,
        max_torque,
        max_velocity,
        nominal_angle: nominal.unwrap_or(0.0),
        origin,
        origin_rpy,
    };
    Ok((j, nominal.is_some()))
}

fn parse_variation(n: Node) -> Result<VariationSpec> {
    let need = |a: &str| -> Result<f64> {
        attr_f64(n, a)?.ok_or_else(|| parse_err(format!("variation without {a}")))
    };
    let k = need("knee_joint_count")?;
    if k.fract() != 0.0 || k < 0.0 {
        return Err(parse_err(format!("knee_joint_count `{k}` is not a count")));
    }
    Ok(VariationSpec {
        knee_joint_count: k as u32,
        all_link_scale: need("all_link_scale")?,
        thigh_length_scale: need("thigh_length_scale")?,
        calf_length_scale: need("calf_length_scale")?,
        foot_size_scale: need("foot_size_scale")?,
        torso_size_scale: attr_f64(n, "torso_size_scale")?,
        knee_limit_scale: need("knee_limit_scale")?,
    })
}

fn topology_error(report: &[Violation]) -> Option<Error> {
    report.iter().find_map(|v| match v {
        Violation::NonTreeTopology(_) | Violation::RootCount(_) | Violation::Cycle => {
            Some(Error::UnsupportedTopology(v.to_string()))
        }
        _ => None,
    })
}

/// Nominal angle guessed from the joint's role when the file carries none.
/// `front` and `left` come from the joint position at the zero pose.
fn inferred_nominal(class: MorphologyClass, name: &str, front: bool, left: bool) -> f64 {
    let n = name.to_ascii_lowercase();
    match class {
        MorphologyClass::Quadruped => {
            if n.contains("thigh") {
                if front { 0.8 } else { 1.0 }
            } else if n.contains("knee") || n.contains("calf") {
                -1.5
            } else if n.contains("hip") {
                if left { 0.1 } else { -0.1 }
            } else {
                0.0
            }
        }
        MorphologyClass::Hexapod => {
            if n.contains("thigh") || n.contains("knee") || n.contains("calf") {
                0.79
            } else {
                0.0
            }
        }
        MorphologyClass::Humanoid => {
            if n.contains("hip_pitch") || n.contains("ankle") {
                -0.4
            } else if n.contains("knee") {
                0.8
            } else {
                0.0
            }
        }
    }
}

fn infer_class(e: &Embodiment) -> Result<MorphologyClass> {
    if e.root().name == "pelvis" {
        return Ok(MorphologyClass::Humanoid);
    }
    match e.feet().len() {
        4 => Ok(MorphologyClass::Quadruped),
        6 => Ok(MorphologyClass::Hexapod),
        n => Err(parse_err(format!("cannot infer class from {n} feet; pass the class explicitly"))),
    }
}

/// Parses URDF text into an embodiment. Unsupported elements are skipped
/// with a warning. The class is read from the `xembody` extension, taken
/// from `class`, or inferred (root `pelvis` → humanoid, else 4 or 6 feet).
pub fn from_urdf(doc: &UrdfDocument, class: Option<MorphologyClass>) -> Result<Embodiment> {
    let xml = Document::parse(&doc.xml).map_err(|e| parse_err(e.to_string()))?;
    let robot = xml.root_element();
    if !robot.has_tag_name("robot") {
        return Err(parse_err(format!("root element is `{}`, expected `robot`", robot.tag_name().name())));
    }
    let id = robot.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut has_nominal = Vec::new();
    let mut tagged_class = None;
    let mut variation = None;
    for n in robot.children().filter(|c| c.is_element()) {
        match n.tag_name().name() {
            "link" => links.push(parse_link(n)?),
            "joint" => {
                let (j, nom) = parse_joint(n)?;
                joints.push(j);
                has_nominal.push(nom);
            }
            "xembody" => {
                if let Some(c) = n.attribute("class") {
                    tagged_class = Some(c.parse::<MorphologyClass>()?);
                }
                if let Some(v) = child(n, "variation") {
                    variation = Some(parse_variation(v)?);
                }
            }
            other => warn!("robot `{id}`: unsupported element `{other}` ignored"),
        }
    }
    if links.is_empty() {
        return Err(parse_err("robot has no links"));
    }
    let names: HashMap<&str, ()> = links.iter().map(|l| (l.name.as_str(), ())).collect();
    for j in &joints {
        for l in [&j.parent_link, &j.child_link] {
            if !names.contains_key(l.as_str()) {
                return Err(parse_err(format!("joint `{}` references unknown link `{l}`", j.name)));
            }
        }
    }

    // Provisional embodiment with nominal angles clamped into range, used for
    // topology checks, class inference and side/front detection.
    for (j, &has) in joints.iter_mut().zip(&has_nominal) {
        if !has {
            j.nominal_angle = 0.0f64.clamp(j.limits.0.min(j.limits.1), j.limits.1.max(j.limits.0));
        }
    }
    let mut e = Embodiment {
        id,
        class: class.or(tagged_class).unwrap_or(MorphologyClass::Quadruped),
        links,
        joints,
        variation,
        total_mass: 0.0,
        bounding_dims: [0.0; 3],
        nominal_height: 0.0,
    };
    let report = validate(&e);
    if let Some(err) = topology_error(&report) {
        return Err(err);
    }
    if let Some(v) = report.first() {
        return Err(Error::InvalidEmbodiment(v.to_string()));
    }
    e.class = match class.or(tagged_class) {
        Some(c) => c,
        None => infer_class(&e)?,
    };

    if has_nominal.iter().zip(&e.joints).any(|(&h, j)| !h && j.is_actuated()) {
        let kin = Kinematics::new(&e)?;
        let zeros = vec![0.0; e.actuated_count()];
        let frames = kin.joint_frames(&kin.link_poses(&zeros), &e);
        for (ji, j) in e.joints.iter_mut().enumerate() {
            if has_nominal[ji] || !j.is_actuated() {
                continue;
            }
            let [x, y, _] = frames[ji].0;
            let guess = inferred_nominal(e.class, &j.name, x > 0.0, y > 0.0);
            j.nominal_angle = guess.clamp(j.limits.0, j.limits.1);
        }
    }
    e.refresh_derived()?;
    Ok(e)
}
