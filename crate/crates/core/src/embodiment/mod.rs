//! In-memory embodiment model: links, joints, morphology class, and the
//! quantities derived from them (mass, bounding box, nominal height).
//!
//! Links and joints are stored in construction order. That order is the
//! canonical index space shared by descriptors, observations and actions;
//! only revolute joints are actuated and receive an index there.

mod descriptor;
mod kinematics;
mod validate;

pub use descriptor::{
    descriptor_of, ClassControlConstants, EmbodimentDescriptor, GeneralDescriptor,
    JointDescriptor, GENERAL_DESCRIPTOR_LEN, JOINT_DESCRIPTOR_LEN,
};
pub use kinematics::{Aabb, Kinematics};
pub use validate::{validate, Violation};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procgen::VariationSpec;

/// Template family an embodiment is generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphologyClass {
    Humanoid,
    Quadruped,
    Hexapod,
}

impl MorphologyClass {
    pub const ALL: [MorphologyClass; 3] = [
        MorphologyClass::Humanoid,
        MorphologyClass::Quadruped,
        MorphologyClass::Hexapod,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MorphologyClass::Humanoid => "humanoid",
            MorphologyClass::Quadruped => "quadruped",
            MorphologyClass::Hexapod => "hexapod",
        }
    }

    /// Name of the root link for generated embodiments of this class.
    pub fn root_link(self) -> &'static str {
        match self {
            MorphologyClass::Humanoid => "pelvis",
            _ => "trunk",
        }
    }

    pub fn leg_count(self) -> usize {
        match self {
            MorphologyClass::Humanoid => 2,
            MorphologyClass::Quadruped => 4,
            MorphologyClass::Hexapod => 6,
        }
    }
}

impl fmt::Display for MorphologyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MorphologyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "humanoid" => Ok(MorphologyClass::Humanoid),
            "quadruped" => Ok(MorphologyClass::Quadruped),
            "hexapod" => Ok(MorphologyClass::Hexapod),
            other => Err(Error::Config(format!("unknown morphology class `{other}`"))),
        }
    }
}

/// Collision/visual primitive of a link. All dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { radius: f64 },
    Cylinder { length: f64, radius: f64 },
    Box { length: f64, width: f64, height: f64 },
}

impl Shape {
    pub fn dims(&self) -> Vec<f64> {
        match *self {
            Shape::Sphere { radius } => vec![radius],
            Shape::Cylinder { length, radius } => vec![length, radius],
            Shape::Box { length, width, height } => vec![length, width, height],
        }
    }

    /// Characteristic length: sphere radius, cylinder or box length.
    pub fn characteristic_length(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { length, .. } => length,
            Shape::Box { length, .. } => length,
        }
    }

    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Cylinder { length, radius } => PI * radius * radius * length,
            Shape::Box { length, width, height } => length * width * height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub shape: Shape,
    /// Mass in kg, treated as a point mass at the geometry center.
    pub mass: f64,
    /// Geometry (and mass) center relative to the link frame origin.
    pub parent_frame_offset: [f64; 3],
    /// Orientation of the geometry in the link frame (roll, pitch, yaw).
    /// Cylinders run along the geometry z axis; box `length` along x.
    pub geometry_rpy: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub parent_link: String,
    pub child_link: String,
    /// Rotation axis in the joint frame, unit length.
    pub axis: [f64; 3],
    /// Position limits (lo, hi) in rad.
    pub limits: (f64, f64),
    /// N·m
    pub max_torque: f64,
    /// rad/s
    pub max_velocity: f64,
    pub nominal_angle: f64,
    /// Joint frame origin relative to the parent link frame.
    pub origin: [f64; 3],
    pub origin_rpy: [f64; 3],
}

impl JointSpec {
    pub fn is_actuated(&self) -> bool {
        self.kind == JointKind::Revolute
    }

    pub fn is_knee(&self) -> bool {
        self.name.contains("knee")
    }

    pub fn range(&self) -> f64 {
        self.limits.1 - self.limits.0
    }
}

/// A robot embodiment: geometry, topology and kinematics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embodiment {
    pub id: String,
    pub class: MorphologyClass,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    /// The variation that produced this embodiment; `None` for imported robots.
    pub variation: Option<VariationSpec>,
    pub total_mass: f64,
    /// Axis-aligned bounding box extents (x, y, z) at the nominal configuration.
    pub bounding_dims: [f64; 3],
    /// Distance from the root link origin down to the lowest geometry point
    /// at the nominal configuration.
    pub nominal_height: f64,
}

impl Embodiment {
    /// Assembles an embodiment and derives mass, bounding box and height.
    /// Fails if any structural invariant is violated.
    pub fn new(
        id: impl Into<String>,
        class: MorphologyClass,
        links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
        variation: Option<VariationSpec>,
    ) -> Result<Self> {
        let mut e = Embodiment {
            id: id.into(),
            class,
            links,
            joints,
            variation,
            total_mass: 0.0,
            bounding_dims: [0.0; 3],
            nominal_height: 0.0,
        };
        let report = validate(&e);
        if !report.is_empty() {
            let msg = report.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(Error::InvalidEmbodiment(msg));
        }
        e.refresh_derived()?;
        Ok(e)
    }

    /// Recomputes total mass, bounding box and nominal height.
    pub fn refresh_derived(&mut self) -> Result<()> {
        self.total_mass = self.links.iter().map(|l| l.mass).sum();
        let kin = Kinematics::new(self)?;
        let poses = kin.link_poses(&self.nominal_angles());
        let aabb = kin.geometry_aabb(&poses);
        self.bounding_dims = aabb.extents();
        self.nominal_height = -aabb.min[2];
        Ok(())
    }

    pub fn root(&self) -> &LinkSpec {
        let children: std::collections::HashSet<&str> =
            self.joints.iter().map(|j| j.child_link.as_str()).collect();
        self.links
            .iter()
            .find(|l| !children.contains(l.name.as_str()))
            .unwrap_or(&self.links[0])
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Indices into `joints` of the actuated (revolute) joints, in order.
    pub fn actuated_joints(&self) -> Vec<usize> {
        (0..self.joints.len()).filter(|&i| self.joints[i].is_actuated()).collect()
    }

    pub fn actuated_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_actuated()).count()
    }

    /// Nominal angles of the actuated joints, in actuated order.
    pub fn nominal_angles(&self) -> Vec<f64> {
        self.joints.iter().filter(|j| j.is_actuated()).map(|j| j.nominal_angle).collect()
    }

    /// Foot links: links named `*foot*`, otherwise every leaf link.
    pub fn feet(&self) -> Vec<usize> {
        let named: Vec<usize> = (0..self.links.len())
            .filter(|&i| self.links[i].name.to_ascii_lowercase().contains("foot"))
            .collect();
        if !named.is_empty() {
            return named;
        }
        let parents: std::collections::HashSet<&str> =
            self.joints.iter().map(|j| j.parent_link.as_str()).collect();
        (0..self.links.len())
            .filter(|&i| !parents.contains(self.links[i].name.as_str()))
            .collect()
    }

    /// Mean characteristic length of the foot geometries.
    pub fn feet_size(&self) -> f64 {
        let feet = self.feet();
        if feet.is_empty() {
            return 0.0;
        }
        feet.iter().map(|&i| self.links[i].shape.characteristic_length()).sum::<f64>()
            / feet.len() as f64
    }

    /// Number of knee joints on each leg, keyed by the foot link name.
    pub fn knee_counts_per_leg(&self) -> BTreeMap<String, usize> {
        let parent_joint: BTreeMap<&str, &JointSpec> =
            self.joints.iter().map(|j| (j.child_link.as_str(), j)).collect();
        let mut out = BTreeMap::new();
        for f in self.feet() {
            let mut count = 0;
            let mut link = self.links[f].name.as_str();
            while let Some(j) = parent_joint.get(link) {
                if j.is_knee() && j.is_actuated() {
                    count += 1;
                }
                link = j.parent_link.as_str();
            }
            out.insert(self.links[f].name.clone(), count);
        }
        out
    }

    /// Indices (into `joints`) of all knee joints.
    pub fn knee_joints(&self) -> Vec<usize> {
        (0..self.joints.len()).filter(|&i| self.joints[i].is_knee()).collect()
    }
}

/// Joint-name → nominal angle map for every actuated joint.
///
/// Generated embodiments carry the class table angles (additional knees at
/// 0.0); imported ones carry whatever was read or inferred at import.
pub fn nominal_configuration(e: &Embodiment) -> BTreeMap<String, f64> {
    e.joints
        .iter()
        .filter(|j| j.is_actuated())
        .map(|j| (j.name.clone(), j.nominal_angle))
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn link(name: &str, shape: Shape, mass: f64, offset: [f64; 3]) -> LinkSpec {
        LinkSpec {
            name: name.into(),
            shape,
            mass,
            parent_frame_offset: offset,
            geometry_rpy: [0.0; 3],
        }
    }

    pub fn revolute(name: &str, parent: &str, child: &str, origin: [f64; 3], axis: [f64; 3]) -> JointSpec {
        JointSpec {
            name: name.into(),
            kind: JointKind::Revolute,
            parent_link: parent.into(),
            child_link: child.into(),
            axis,
            limits: (-1.0, 1.0),
            max_torque: 10.0,
            max_velocity: 10.0,
            nominal_angle: 0.0,
            origin,
            origin_rpy: [0.0; 3],
        }
    }

    /// A two-link chain: root box, thigh (hip joint at root origin), calf
    /// (knee joint at the thigh end), foot (ankle at the calf end).
    pub fn chain(calf_length: f64) -> Embodiment {
        let links = vec![
            link("trunk", Shape::Box { length: 0.4, width: 0.2, height: 0.1 }, 5.0, [0.0; 3]),
            link("thigh", Shape::Cylinder { length: 0.2, radius: 0.02 }, 1.0, [0.0, 0.0, -0.1]),
            link("calf", Shape::Cylinder { length: calf_length, radius: 0.02 }, 0.5, [0.0, 0.0, -calf_length / 2.0]),
            link("foot", Shape::Sphere { radius: 0.02 }, 0.1, [0.0; 3]),
        ];
        let joints = vec![
            revolute("hip_joint", "trunk", "thigh", [0.0; 3], [0.0, 1.0, 0.0]),
            revolute("knee_joint", "thigh", "calf", [0.0, 0.0, -0.2], [0.0, 1.0, 0.0]),
            revolute("ankle_joint", "calf", "foot", [0.0, 0.0, -calf_length], [0.0, 1.0, 0.0]),
        ];
        Embodiment::new("chain", MorphologyClass::Quadruped, links, joints, None).unwrap()
    }
}
