use std::fmt::Write;

use super::UrdfDocument;
use crate::embodiment::{validate, Embodiment, JointKind, LinkSpec, Shape};
use crate::error::{Error, Result};
use crate::numfmt::{fmt_f64 as f, fmt_vec3};

pub(super) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Solid-body inertia of the primitive about its own center and axes.
fn inertia(shape: &Shape, m: f64) -> [f64; 3] {
    match *shape {
        Shape::Sphere { radius } => [0.4 * m * radius * radius; 3],
        Shape::Cylinder { length, radius } => {
            let t = m * (3.0 * radius * radius + length * length) / 12.0;
            [t, t, 0.5 * m * radius * radius]
        }
        Shape::Box { length, width, height } => [
            m * (width * width + height * height) / 12.0,
            m * (length * length + height * height) / 12.0,
            m * (length * length + width * width) / 12.0,
        ],
    }
}

fn geometry(shape: &Shape) -> String {
    match *shape {
        Shape::Sphere { radius } => format!("<sphere radius=\"{}\"/>", f(radius)),
        Shape::Cylinder { length, radius } => {
            format!("<cylinder length=\"{}\" radius=\"{}\"/>", f(length), f(radius))
        }
        Shape::Box { length, width, height } => {
            format!("<box size=\"{}\"/>", fmt_vec3([length, width, height]))
        }
    }
}

fn write_link(out: &mut String, l: &LinkSpec) {
    let origin = format!(
        "<origin xyz=\"{}\" rpy=\"{}\"/>",
        fmt_vec3(l.parent_frame_offset),
        fmt_vec3(l.geometry_rpy)
    );
    let i = inertia(&l.shape, l.mass);
    let g = geometry(&l.shape);
    let _ = writeln!(out, "  <link name=\"{}\">", escape(&l.name));
    let _ = writeln!(out, "    <inertial>");
    let _ = writeln!(out, "      {origin}");
    let _ = writeln!(out, "      <mass value=\"{}\"/>", f(l.mass));
    let _ = writeln!(
        out,
        "      <inertia ixx=\"{}\" ixy=\"0\" ixz=\"0\" iyy=\"{}\" iyz=\"0\" izz=\"{}\"/>",
        f(i[0]),
        f(i[1]),
        f(i[2])
    );
    let _ = writeln!(out, "    </inertial>");
    for tag in ["visual", "collision"] {
        let _ = writeln!(out, "    <{tag}>");
        let _ = writeln!(out, "      {origin}");
        let _ = writeln!(out, "      <geometry>{g}</geometry>");
        let _ = writeln!(out, "    </{tag}>");
    }
    let _ = writeln!(out, "  </link>");
}

/// Serializes `e` to canonical URDF text.
pub fn to_urdf(e: &Embodiment) -> Result<UrdfDocument> {
    if let Some(v) = validate(e).first() {
        return Err(Error::InvalidEmbodiment(v.to_string()));
    }
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(&e.id));
    let _ = writeln!(out, "  <xembody class=\"{}\">", e.class);
    if let Some(v) = &e.variation {
        let _ = write!(
            out,
            "    <variation knee_joint_count=\"{}\" all_link_scale=\"{}\" thigh_length_scale=\"{}\" calf_length_scale=\"{}\" foot_size_scale=\"{}\"",
            v.knee_joint_count,
            f(v.all_link_scale),
            f(v.thigh_length_scale),
            f(v.calf_length_scale),
            f(v.foot_size_scale)
        );
        if let Some(t) = v.torso_size_scale {
            let _ = write!(out, " torso_size_scale=\"{}\"", f(t));
        }
        let _ = writeln!(out, " knee_limit_scale=\"{}\"/>", f(v.knee_limit_scale));
    }
    let _ = writeln!(out, "  </xembody>");
    for l in &e.links {
        write_link(&mut out, l);
    }
    for j in &e.joints {
        let kind = match j.kind {
            JointKind::Revolute => "revolute",
            JointKind::Fixed => "fixed",
        };
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{kind}\">", escape(&j.name));
        let _ = writeln!(out, "    <origin xyz=\"{}\" rpy=\"{}\"/>", fmt_vec3(j.origin), fmt_vec3(j.origin_rpy));
        let _ = writeln!(out, "    <parent link=\"{}\"/>", escape(&j.parent_link));
        let _ = writeln!(out, "    <child link=\"{}\"/>", escape(&j.child_link));
        if j.kind == JointKind::Revolute {
            let _ = writeln!(out, "    <axis xyz=\"{}\"/>", fmt_vec3(j.axis));
            let _ = writeln!(
                out,
                "    <limit lower=\"{}\" upper=\"{}\" effort=\"{}\" velocity=\"{}\"/>",
                f(j.limits.0),
                f(j.limits.1),
                f(j.max_torque),
                f(j.max_velocity)
            );
            let _ = writeln!(out, "    <nominal angle=\"{}\"/>", f(j.nominal_angle));
        }
        let _ = writeln!(out, "  </joint>");
    }
    out.push_str("</robot>\n");
    Ok(UrdfDocument { xml: out })
}
