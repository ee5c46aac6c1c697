use std::f64::consts::FRAC_PI_2;

use super::{BaseUnitTable, JointUnit, LinkUnit, VariationSpec};
use crate::embodiment::{Embodiment, JointKind, JointSpec, LinkSpec, MorphologyClass, Shape};
use crate::error::{Error, Result};

/// Geometry orientation that lays a cylinder (z-aligned) along the y axis.
const ALONG_Y: [f64; 3] = [FRAC_PI_2, 0.0, 0.0];
/// Geometry orientation that lays a box length (x-aligned) along z.
const ALONG_Z: [f64; 3] = [0.0, FRAC_PI_2, 0.0];

struct Builder {
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
}

impl Builder {
    fn link(&mut self, name: String, shape: Shape, mass: f64, offset: [f64; 3], rpy: [f64; 3]) {
        self.links.push(LinkSpec { name, shape, mass, parent_frame_offset: offset, geometry_rpy: rpy });
    }

    #[allow(clippy::too_many_arguments)]
    fn revolute(
        &mut self,
        name: String,
        parent: &str,
        child: &str,
        origin: [f64; 3],
        axis: [f64; 3],
        unit: JointUnit,
        nominal: f64,
    ) {
        self.joints.push(JointSpec {
            name,
            kind: JointKind::Revolute,
            parent_link: parent.into(),
            child_link: child.into(),
            axis,
            limits: unit.limits,
            max_torque: unit.max_torque,
            max_velocity: unit.max_velocity,
            nominal_angle: nominal,
            origin,
            origin_rpy: [0.0; 3],
        });
    }

    fn fixed(&mut self, name: String, parent: &str, child: &str, origin: [f64; 3]) {
        self.joints.push(JointSpec {
            name,
            kind: JointKind::Fixed,
            parent_link: parent.into(),
            child_link: child.into(),
            axis: [1.0, 0.0, 0.0],
            limits: (0.0, 0.0),
            max_torque: 0.0,
            max_velocity: 0.0,
            nominal_angle: 0.0,
            origin,
            origin_rpy: [0.0; 3],
        });
    }
}

/// Uniformly scales every dimension of a unit; mass follows the volume.
fn uniform(u: LinkUnit, s: f64) -> LinkUnit {
    let shape = match u.shape {
        Shape::Sphere { radius } => Shape::Sphere { radius: radius * s },
        Shape::Cylinder { length, radius } => Shape::Cylinder { length: length * s, radius: radius * s },
        Shape::Box { length, width, height } => {
            Shape::Box { length: length * s, width: width * s, height: height * s }
        }
    };
    LinkUnit { shape, mass: u.mass * s * s * s }
}

/// Scales only the length of a cylinder or box; mass scales linearly.
fn lengthwise(u: LinkUnit, f: f64) -> LinkUnit {
    let shape = match u.shape {
        Shape::Sphere { radius } => Shape::Sphere { radius: radius * f },
        Shape::Cylinder { length, radius } => Shape::Cylinder { length: length * f, radius },
        Shape::Box { length, width, height } => Shape::Box { length: length * f, width, height },
    };
    LinkUnit { shape, mass: u.mass * f }
}

/// Splits a segment into `k` equal sub-segments, mass shared equally.
fn split(u: LinkUnit, k: u32) -> LinkUnit {
    let k = f64::from(k);
    let shape = match u.shape {
        Shape::Cylinder { length, radius } => Shape::Cylinder { length: length / k, radius },
        Shape::Box { length, width, height } => Shape::Box { length: length / k, width, height },
        s => s,
    };
    LinkUnit { shape, mass: u.mass / k }
}

fn length_of(u: LinkUnit) -> f64 {
    u.shape.characteristic_length()
}

/// Knee limits for the first knee and for any additional knees. Extra knees
/// sit at nominal 0 with the base range shifted so 0 occupies the same place
/// in it that the base nominal does.
fn knee_units(base: JointUnit, scale: f64) -> (JointUnit, JointUnit) {
    let n = base.nominal;
    let shifted = JointUnit { limits: (base.limits.0 - n, base.limits.1 - n), nominal: 0.0, ..base };
    (scale_about_nominal(base, scale), scale_about_nominal(shifted, scale))
}

fn scale_about_nominal(u: JointUnit, scale: f64) -> JointUnit {
    let (lo, hi) = scale_limits(u.limits, u.nominal, scale);
    JointUnit { limits: (lo, hi), ..u }
}

fn scale_limits(limits: (f64, f64), nominal: f64, scale: f64) -> (f64, f64) {
    if scale == 1.0 {
        return limits;
    }
    (nominal + scale * (limits.0 - nominal), nominal + scale * (limits.1 - nominal))
}

fn knee_name(leg: &str, i: u32) -> String {
    if i == 0 {
        format!("{leg}_knee_joint")
    } else {
        format!("{leg}_knee_{}_joint", i + 1)
    }
}

fn calf_name(leg: &str, i: u32) -> String {
    if i == 0 {
        format!("{leg}_calf")
    } else {
        format!("{leg}_calf_{}", i + 1)
    }
}

/// Builds the embodiment for one variation point of a class. Joints are
/// created stage-wise across limbs, which fixes the canonical joint order.
pub fn build_embodiment(class: MorphologyClass, v: &VariationSpec, base: &BaseUnitTable) -> Result<Embodiment> {
    v.check(class)?;
    if base.class != class {
        return Err(Error::UnsupportedVariation(format!(
            "base table is for {}, not {class}",
            base.class
        )));
    }
    let mut b = Builder { links: Vec::new(), joints: Vec::new() };
    match class {
        MorphologyClass::Quadruped => quadruped(&mut b, v, base),
        MorphologyClass::Hexapod => hexapod(&mut b, v, base),
        MorphologyClass::Humanoid => humanoid(&mut b, v, base),
    }
    Embodiment::new(class.as_str(), class, b.links, b.joints, Some(*v))
}

/// Per-leg lower chain: calf segments with knee joints, then the foot.
/// `down` maps a segment length to the offset along the segment direction.
#[allow(clippy::too_many_arguments)]
fn lower_leg(
    b: &mut Builder,
    legs: &[(String, String, [f64; 3], [f64; 3])],
    v: &VariationSpec,
    calf: LinkUnit,
    calf_rpy: [f64; 3],
    knee: JointUnit,
    down: impl Fn(f64, f64) -> [f64; 3],
) {
    let (first, extra) = knee_units(knee, v.knee_limit_scale);
    let k = v.knee_joint_count;
    let seg = if k > 0 { split(calf, k) } else { calf };
    let seg_len = length_of(seg);
    for i in 0..k {
        for (leg, parent_of_first, first_origin, axis) in legs {
            let parent = if i == 0 { parent_of_first.clone() } else { calf_name(leg, i - 1) };
            let origin = if i == 0 { *first_origin } else { down(seg_len, side(leg)) };
            let child = calf_name(leg, i);
            let half = down(seg_len / 2.0, side(leg));
            b.link(child.clone(), seg.shape, seg.mass, half, calf_rpy);
            let unit = if i == 0 { first } else { extra };
            b.revolute(knee_name(leg, i), &parent, &child, origin, *axis, unit, unit.nominal);
        }
    }
}

fn side(leg: &str) -> f64 {
    if leg.ends_with('l') || leg.starts_with("left") {
        1.0
    } else {
        -1.0
    }
}

fn quadruped(b: &mut Builder, v: &VariationSpec, base: &BaseUnitTable) {
    let s = v.all_link_scale;
    let trunk = uniform(base.link("trunk"), s);
    let hip = uniform(base.link("hip"), s);
    let thigh = lengthwise(uniform(base.link("thigh"), s), v.thigh_length_scale);
    let calf = lengthwise(uniform(base.link("calf"), s), v.calf_length_scale);
    let foot = uniform(uniform(base.link("foot"), s), v.foot_size_scale);
    let Shape::Box { length: lt, width: wt, .. } = trunk.shape else { unreachable!() };

    b.link("trunk".into(), trunk.shape, trunk.mass, [0.0; 3], [0.0; 3]);
    let legs = [("fl", 1.0, 1.0), ("fr", 1.0, -1.0), ("rl", -1.0, 1.0), ("rr", -1.0, -1.0)];

    let hip_unit = base.joint("hip");
    let hip_len = length_of(hip);
    for (leg, sx, sy) in legs {
        let name = format!("{leg}_hip");
        b.link(name.clone(), hip.shape, hip.mass, [0.0, sy * hip_len / 2.0, 0.0], ALONG_Y);
        b.revolute(
            format!("{leg}_hip_joint"),
            "trunk",
            &name,
            [sx * lt / 2.0, sy * wt / 2.0, 0.0],
            [1.0, 0.0, 0.0],
            hip_unit,
            sy * hip_unit.nominal,
        );
    }

    let thigh_len = length_of(thigh);
    for (leg, sx, sy) in legs {
        let unit = if sx > 0.0 { base.joint("front_thigh") } else { base.joint("rear_thigh") };
        let name = format!("{leg}_thigh");
        b.link(name.clone(), thigh.shape, thigh.mass, [0.0, 0.0, -thigh_len / 2.0], ALONG_Z);
        b.revolute(
            format!("{leg}_thigh_joint"),
            &format!("{leg}_hip"),
            &name,
            [0.0, sy * hip_len, 0.0],
            [0.0, 1.0, 0.0],
            unit,
            unit.nominal,
        );
    }

    let chain: Vec<_> = legs
        .iter()
        .map(|(leg, _, _)| (leg.to_string(), format!("{leg}_thigh"), [0.0, 0.0, -thigh_len], [0.0, 1.0, 0.0]))
        .collect();
    lower_leg(b, &chain, v, calf, [0.0; 3], base.joint("knee"), |d, _| [0.0, 0.0, -d]);

    let end = end_of_leg(v, thigh_len, calf, |d, _| [0.0, 0.0, -d]);
    for (leg, _, _) in legs {
        let name = format!("{leg}_foot");
        b.link(name.clone(), foot.shape, foot.mass, [0.0; 3], [0.0; 3]);
        b.fixed(format!("{leg}_foot_joint"), &last_link(leg, v), &name, end(side(leg)));
    }
}

fn last_link(leg: &str, v: &VariationSpec) -> String {
    match v.knee_joint_count {
        0 => format!("{leg}_thigh"),
        k => calf_name(leg, k - 1),
    }
}

/// Offset of the foot joint in the last link of the leg.
fn end_of_leg(
    v: &VariationSpec,
    thigh_len: f64,
    calf: LinkUnit,
    down: impl Fn(f64, f64) -> [f64; 3] + Copy,
) -> impl Fn(f64) -> [f64; 3] {
    let len = match v.knee_joint_count {
        0 => thigh_len,
        k => length_of(split(calf, k)),
    };
    move |sy| down(len, sy)
}

fn hexapod(b: &mut Builder, v: &VariationSpec, base: &BaseUnitTable) {
    let s = v.all_link_scale;
    let trunk = uniform(base.link("trunk"), s);
    let hip = uniform(base.link("hip"), s);
    let thigh = lengthwise(uniform(base.link("thigh"), s), v.thigh_length_scale);
    let calf = lengthwise(uniform(base.link("calf"), s), v.calf_length_scale);
    let foot = uniform(uniform(base.link("foot"), s), v.foot_size_scale);
    let Shape::Box { length: lt, width: wt, .. } = trunk.shape else { unreachable!() };
    let Shape::Sphere { radius: hr } = hip.shape else { unreachable!() };

    b.link("trunk".into(), trunk.shape, trunk.mass, [0.0; 3], [0.0; 3]);
    let legs = [
        ("fl", 0.375, 1.0),
        ("fr", 0.375, -1.0),
        ("ml", 0.0, 1.0),
        ("mr", 0.0, -1.0),
        ("rl", -0.375, 1.0),
        ("rr", -0.375, -1.0),
    ];
    let outward = |d: f64, sy: f64| [0.0, sy * d, 0.0];

    let hip_unit = base.joint("hip");
    for (leg, fx, sy) in legs {
        let name = format!("{leg}_hip");
        b.link(name.clone(), hip.shape, hip.mass, [0.0, sy * hr, 0.0], [0.0; 3]);
        b.revolute(
            format!("{leg}_hip_joint"),
            "trunk",
            &name,
            [fx * lt, sy * wt / 2.0, 0.0],
            [0.0, 0.0, 1.0],
            hip_unit,
            hip_unit.nominal,
        );
    }

    let thigh_unit = base.joint("thigh");
    let thigh_len = length_of(thigh);
    for (leg, _, sy) in legs {
        let name = format!("{leg}_thigh");
        b.link(name.clone(), thigh.shape, thigh.mass, outward(thigh_len / 2.0, sy), ALONG_Y);
        b.revolute(
            format!("{leg}_thigh_joint"),
            &format!("{leg}_hip"),
            &name,
            [0.0, sy * 2.0 * hr, 0.0],
            [-sy, 0.0, 0.0],
            thigh_unit,
            thigh_unit.nominal,
        );
    }

    let chain: Vec<_> = legs
        .iter()
        .map(|&(leg, _, sy)| (leg.to_string(), format!("{leg}_thigh"), outward(thigh_len, sy), [-sy, 0.0, 0.0]))
        .collect();
    lower_leg(b, &chain, v, calf, ALONG_Y, base.joint("knee"), outward);

    let end = end_of_leg(v, thigh_len, calf, outward);
    for (leg, _, sy) in legs {
        let name = format!("{leg}_foot");
        b.link(name.clone(), foot.shape, foot.mass, [0.0; 3], [0.0; 3]);
        b.fixed(format!("{leg}_foot_joint"), &last_link(leg, v), &name, end(sy));
    }
}

fn humanoid(b: &mut Builder, v: &VariationSpec, base: &BaseUnitTable) {
    let s = v.all_link_scale;
    let t = v.torso_size_scale.unwrap_or(1.0);
    let pelvis = uniform(base.link("pelvis"), s);
    let torso = uniform(uniform(base.link("torso"), s), t);
    let hip_yaw = uniform(base.link("hip_yaw"), s);
    let hip_roll = uniform(base.link("hip_roll"), s);
    let thigh = lengthwise(uniform(base.link("thigh"), s), v.thigh_length_scale);
    let calf = lengthwise(uniform(base.link("calf"), s), v.calf_length_scale);
    let foot = lengthwise(uniform(base.link("foot"), s), v.foot_size_scale);
    let Shape::Sphere { radius: rp } = pelvis.shape else { unreachable!() };
    let Shape::Box { width: tw, height: th, .. } = torso.shape else { unreachable!() };
    let Shape::Box { height: fh, .. } = foot.shape else { unreachable!() };
    let down = |d: f64, _: f64| [0.0, 0.0, -d];
    let sides = [("left", 1.0), ("right", -1.0)];

    b.link("pelvis".into(), pelvis.shape, pelvis.mass, [0.0; 3], [0.0; 3]);

    // torso and hips
    b.link("torso".into(), torso.shape, torso.mass, [0.0, 0.0, th / 2.0], [0.0; 3]);
    let u = base.joint("torso");
    b.revolute("torso_joint".into(), "pelvis", "torso", [0.0, 0.0, rp], [0.0, 0.0, 1.0], u, u.nominal);
    let hip_y = 0.0875 * s;
    let yaw_len = length_of(hip_yaw);
    let roll_len = length_of(hip_roll);
    for (leg, sy) in sides {
        let name = format!("{leg}_hip_yaw_link");
        b.link(name.clone(), hip_yaw.shape, hip_yaw.mass, down(yaw_len / 2.0, sy), [0.0; 3]);
        let u = base.joint("hip_yaw");
        b.revolute(format!("{leg}_hip_yaw_joint"), "pelvis", &name, [0.0, sy * hip_y, -rp], [0.0, 0.0, 1.0], u, u.nominal);
    }
    for (leg, sy) in sides {
        let name = format!("{leg}_hip_roll_link");
        b.link(name.clone(), hip_roll.shape, hip_roll.mass, down(roll_len / 2.0, sy), [0.0; 3]);
        let u = base.joint("hip_roll");
        b.revolute(
            format!("{leg}_hip_roll_joint"),
            &format!("{leg}_hip_yaw_link"),
            &name,
            down(yaw_len, sy),
            [sy, 0.0, 0.0],
            u,
            u.nominal,
        );
    }

    // shoulders and arms
    let sp = uniform(base.link("shoulder_pitch"), s);
    let sr = uniform(base.link("shoulder_roll"), s);
    let ua = uniform(base.link("upper_arm"), s);
    let fa = uniform(base.link("forearm"), s);
    let arm: [(&str, &str, LinkUnit, [f64; 3]); 4] = [
        ("shoulder_pitch", "shoulder_pitch_link", sp, [0.0, 1.0, 0.0]),
        ("shoulder_roll", "shoulder_roll_link", sr, [1.0, 0.0, 0.0]),
        ("shoulder_yaw", "upper_arm_link", ua, [0.0, 0.0, 1.0]),
        ("elbow", "forearm_link", fa, [0.0, 1.0, 0.0]),
    ];
    for (stage, &(joint, link, unit, axis)) in arm.iter().enumerate() {
        for (side_name, sy) in sides {
            let name = format!("{side_name}_{link}");
            let len = length_of(unit);
            let (offset, rpy) = if stage == 0 { ([0.0, sy * len / 2.0, 0.0], ALONG_Y) } else { (down(len / 2.0, sy), [0.0; 3]) };
            b.link(name.clone(), unit.shape, unit.mass, offset, rpy);
            let (parent, origin) = if stage == 0 {
                ("torso".to_string(), [0.0, sy * tw / 2.0, th])
            } else {
                let (_, prev_link, prev_unit, _) = arm[stage - 1];
                let prev_len = length_of(prev_unit);
                let origin = if stage == 1 { [0.0, sy * prev_len, 0.0] } else { down(prev_len, sy) };
                (format!("{side_name}_{prev_link}"), origin)
            };
            let axis = if joint == "shoulder_roll" { [sy * axis[0], 0.0, 0.0] } else { axis };
            let u = base.joint(joint);
            b.revolute(format!("{side_name}_{joint}_joint"), &parent, &name, origin, axis, u, u.nominal);
        }
    }

    // thighs
    let thigh_len = length_of(thigh);
    for (leg, sy) in sides {
        let name = format!("{leg}_thigh");
        b.link(name.clone(), thigh.shape, thigh.mass, down(thigh_len / 2.0, sy), [0.0; 3]);
        let u = base.joint("hip_pitch");
        b.revolute(
            format!("{leg}_hip_pitch_joint"),
            &format!("{leg}_hip_roll_link"),
            &name,
            down(roll_len, sy),
            [0.0, 1.0, 0.0],
            u,
            u.nominal,
        );
    }

    // calves
    let chain: Vec<_> = sides
        .iter()
        .map(|&(leg, _)| (leg.to_string(), format!("{leg}_thigh"), down(thigh_len, 0.0), [0.0, 1.0, 0.0]))
        .collect();
    lower_leg(b, &chain, v, calf, [0.0; 3], base.joint("knee"), down);

    // feet
    let end = end_of_leg(v, thigh_len, calf, down);
    for (leg, sy) in sides {
        let name = format!("{leg}_foot");
        b.link(name.clone(), foot.shape, foot.mass, down(fh / 2.0, sy), [0.0; 3]);
        let u = base.joint("ankle");
        b.revolute(format!("{leg}_ankle_joint"), &last_link(leg, v), &name, end(sy), [0.0, 1.0, 0.0], u, u.nominal);
    }
}

/// Copy of `e` with every knee range rescaled about its nominal angle.
pub fn apply_knee_limit_scale(e: &Embodiment, scale: f64) -> Embodiment {
    let mut out = e.clone();
    for j in out.joints.iter_mut().filter(|j| j.is_knee() && j.is_actuated()) {
        j.limits = scale_limits(j.limits, j.nominal_angle, scale);
    }
    out
}
