use std::collections::BTreeMap;

use crate::embodiment::{MorphologyClass, Shape};

/// Geometry and mass of one base link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkUnit {
    pub shape: Shape,
    pub mass: f64,
}

/// Limits, motor ratings and nominal angle of one base joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointUnit {
    pub limits: (f64, f64),
    pub max_torque: f64,
    pub max_velocity: f64,
    pub nominal: f64,
}

/// Base geometry, mass, motor and nominal values for one morphology class.
/// Robots built from these with every variation factor at 1.0 are the class
/// reference robots.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseUnitTable {
    pub class: MorphologyClass,
    pub links: BTreeMap<&'static str, LinkUnit>,
    pub joints: BTreeMap<&'static str, JointUnit>,
}

fn sphere(radius: f64, mass: f64) -> LinkUnit {
    LinkUnit { shape: Shape::Sphere { radius }, mass }
}

fn cylinder(length: f64, radius: f64, mass: f64) -> LinkUnit {
    LinkUnit { shape: Shape::Cylinder { length, radius }, mass }
}

fn cuboid(length: f64, width: f64, height: f64, mass: f64) -> LinkUnit {
    LinkUnit { shape: Shape::Box { length, width, height }, mass }
}

fn joint(lo: f64, hi: f64, max_torque: f64, max_velocity: f64, nominal: f64) -> JointUnit {
    JointUnit { limits: (lo, hi), max_torque, max_velocity, nominal }
}

impl BaseUnitTable {
    pub fn reference(class: MorphologyClass) -> Self {
        let (links, joints) = match class {
            MorphologyClass::Humanoid => (
                BTreeMap::from([
                    ("pelvis", sphere(0.05, 5.390)),
                    ("torso", cuboid(0.08, 0.26, 0.18, 17.789)),
                    ("hip_yaw", cylinder(0.02, 0.01, 2.244)),
                    ("hip_roll", cylinder(0.01, 0.02, 2.232)),
                    ("thigh", cylinder(0.2, 0.05, 4.152)),
                    ("calf", cylinder(0.2, 0.05, 1.721)),
                    ("foot", cuboid(0.28, 0.03, 0.024, 0.474)),
                    // Arm units are not part of the locomotion base table;
                    // these are fixed placeholders sized like a small humanoid arm.
                    ("shoulder_pitch", cylinder(0.03, 0.02, 0.5)),
                    ("shoulder_roll", cylinder(0.03, 0.02, 0.5)),
                    ("upper_arm", cylinder(0.2, 0.03, 1.0)),
                    ("forearm", cylinder(0.2, 0.025, 0.5)),
                ]),
                BTreeMap::from([
                    ("torso", joint(-2.35, 2.35, 200.0, 23.0, 0.0)),
                    ("shoulder_pitch", joint(-2.87, 2.87, 40.0, 9.0, 0.0)),
                    ("shoulder_roll", joint(-0.34, 3.11, 40.0, 9.0, 0.0)),
                    ("shoulder_yaw", joint(-1.30, 4.45, 18.0, 20.0, 0.0)),
                    ("elbow", joint(-1.25, 2.61, 18.0, 20.0, 0.0)),
                    ("hip_yaw", joint(-0.43, 0.43, 200.0, 23.0, 0.0)),
                    ("hip_roll", joint(-0.43, 0.43, 200.0, 23.0, 0.0)),
                    ("hip_pitch", joint(-3.10, 2.50, 200.0, 23.0, -0.4)),
                    ("knee", joint(-0.26, 2.00, 300.0, 14.0, 0.8)),
                    ("ankle", joint(-0.87, 0.52, 40.0, 9.0, -0.4)),
                ]),
            ),
            MorphologyClass::Quadruped => (
                BTreeMap::from([
                    ("trunk", cuboid(0.38, 0.09, 0.11, 6.921)),
                    ("hip", cylinder(0.04, 0.046, 1.152)),
                    ("thigh", cuboid(0.21, 0.025, 0.034, 1.152)),
                    ("calf", cylinder(0.12, 0.013, 0.154)),
                    ("foot", sphere(0.022, 0.040)),
                ]),
                BTreeMap::from([
                    // nominal is +0.1 on the left side, -0.1 on the right
                    ("hip", joint(-1.05, 1.05, 23.7, 30.1, 0.1)),
                    ("front_thigh", joint(-1.57, 3.49, 23.7, 30.1, 0.8)),
                    ("rear_thigh", joint(-0.52, 4.53, 23.7, 30.1, 1.0)),
                    ("knee", joint(-2.72, -0.84, 45.43, 15.7, -1.5)),
                ]),
            ),
            MorphologyClass::Hexapod => (
                BTreeMap::from([
                    ("trunk", cuboid(0.8, 0.5, 0.1, 6.921)),
                    ("hip", sphere(0.05, 0.678)),
                    ("thigh", cylinder(0.22, 0.03, 1.152)),
                    ("calf", cylinder(0.22, 0.025, 0.154)),
                    ("foot", sphere(0.03, 0.040)),
                ]),
                BTreeMap::from([
                    ("hip", joint(-1.57, 1.57, 100.0, 30.0, 0.0)),
                    ("thigh", joint(-1.57, 1.57, 100.0, 30.0, 0.79)),
                    ("knee", joint(-1.57, 1.57, 100.0, 30.0, 0.79)),
                ]),
            ),
        };
        BaseUnitTable { class, links, joints }
    }

    pub fn link(&self, name: &str) -> LinkUnit {
        self.links[name]
    }

    pub fn joint(&self, name: &str) -> JointUnit {
        self.joints[name]
    }
}
