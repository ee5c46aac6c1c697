//! Embodiment descriptors: the per-joint description vectors and the static
//! part of the general observation.
//!
//! Joint descriptor layout (18 components):
//!
//! | idx   | component                                         |
//! |-------|---------------------------------------------------|
//! | 0..3  | joint position in the root frame, nominal pose    |
//! | 3..6  | rotation axis in the root frame, nominal pose     |
//! | 6     | nominal angle                                     |
//! | 7     | max torque                                        |
//! | 8     | max velocity                                      |
//! | 9..11 | position limits (lo, hi)                          |
//! | 11    | p-gain                                            |
//! | 12    | d-gain                                            |
//! | 13    | action scaling factor                             |
//! | 14    | robot mass                                        |
//! | 15..18| robot dimensions (x, y, z)                        |
//!
//! General descriptor layout (9 components): p-gain, d-gain, action scale,
//! mass, dimensions (3), joint count, feet size.

use serde::{Deserialize, Serialize};

use super::{Embodiment, Kinematics, MorphologyClass};
use crate::error::{Error, Result};

pub const JOINT_DESCRIPTOR_LEN: usize = 18;
pub const GENERAL_DESCRIPTOR_LEN: usize = 9;

/// PD gains and action scale shared by every robot of a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassControlConstants {
    pub kp: f64,
    pub kd: f64,
    pub action_scale: f64,
}

impl ClassControlConstants {
    pub fn for_class(class: MorphologyClass) -> Self {
        match class {
            MorphologyClass::Quadruped => ClassControlConstants { kp: 20.0, kd: 0.5, action_scale: 0.3 },
            MorphologyClass::Hexapod => ClassControlConstants { kp: 25.0, kd: 0.5, action_scale: 0.3 },
            MorphologyClass::Humanoid => ClassControlConstants { kp: 60.0, kd: 2.0, action_scale: 0.75 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDescriptor(pub [f64; JOINT_DESCRIPTOR_LEN]);

impl JointDescriptor {
    pub fn position(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn limits(&self) -> (f64, f64) {
        (self.0[9], self.0[10])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralDescriptor(pub [f64; GENERAL_DESCRIPTOR_LEN]);

impl GeneralDescriptor {
    pub fn kp(&self) -> f64 {
        self.0[0]
    }
    pub fn kd(&self) -> f64 {
        self.0[1]
    }
    pub fn action_scale(&self) -> f64 {
        self.0[2]
    }
    pub fn mass(&self) -> f64 {
        self.0[3]
    }
    pub fn dims(&self) -> [f64; 3] {
        [self.0[4], self.0[5], self.0[6]]
    }
    pub fn joint_count(&self) -> f64 {
        self.0[7]
    }
    pub fn feet_size(&self) -> f64 {
        self.0[8]
    }
}

/// φ(e): one descriptor row per actuated joint plus the general part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbodimentDescriptor {
    pub joints: Vec<JointDescriptor>,
    pub general: GeneralDescriptor,
}

impl EmbodimentDescriptor {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Row-major (J, 18) matrix.
    pub fn joint_matrix(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|d| d.0).collect()
    }
}

/// Computes the descriptor of `e` under the given class control constants.
pub fn descriptor_of(e: &Embodiment, ctrl: &ClassControlConstants) -> Result<EmbodimentDescriptor> {
    let report = super::validate(e);
    if !report.is_empty() {
        return Err(Error::InvalidEmbodiment(report[0].to_string()));
    }
    let kin = Kinematics::new(e)?;
    let poses = kin.link_poses(&e.nominal_angles());
    let frames = kin.joint_frames(&poses, e);
    let dims = e.bounding_dims;
    let mut joints = Vec::new();
    for (ji, j) in e.joints.iter().enumerate() {
        if !j.is_actuated() {
            continue;
        }
        let (p, a) = frames[ji];
        joints.push(JointDescriptor([
            p[0],
            p[1],
            p[2],
            a[0],
            a[1],
            a[2],
            j.nominal_angle,
            j.max_torque,
            j.max_velocity,
            j.limits.0,
            j.limits.1,
            ctrl.kp,
            ctrl.kd,
            ctrl.action_scale,
            e.total_mass,
            dims[0],
            dims[1],
            dims[2],
        ]));
    }
    let general = GeneralDescriptor([
        ctrl.kp,
        ctrl.kd,
        ctrl.action_scale,
        e.total_mass,
        dims[0],
        dims[1],
        dims[2],
        joints.len() as f64,
        e.feet_size(),
    ]);
    Ok(EmbodimentDescriptor { joints, general })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    fn ctrl() -> ClassControlConstants {
        ClassControlConstants::for_class(MorphologyClass::Quadruped)
    }

    #[test]
    fn quadruped_constants() {
        let c = ctrl();
        assert_eq!((c.kp, c.kd, c.action_scale), (20.0, 0.5, 0.3));
        let h = ClassControlConstants::for_class(MorphologyClass::Humanoid);
        assert_eq!((h.kp, h.kd, h.action_scale), (60.0, 2.0, 0.75));
        let x = ClassControlConstants::for_class(MorphologyClass::Hexapod);
        assert_eq!((x.kp, x.kd, x.action_scale), (25.0, 0.5, 0.3));
    }

    #[test]
    fn joint_at_root_origin_has_zero_position() {
        let e = fixtures::chain(0.3);
        let d = descriptor_of(&e, &ctrl()).unwrap();
        assert_eq!(d.joints[0].position(), [0.0, 0.0, 0.0]);
        assert_eq!(d.joints.len(), 3);
        for j in &d.joints {
            assert_eq!((j.0[11], j.0[12], j.0[13]), (20.0, 0.5, 0.3));
        }
    }

    #[test]
    fn calf_length_changes_only_positions_and_dimensions() {
        // Hand forward kinematics of the straight chain: hip at 0, knee at
        // -0.2, ankle at -(0.2 + calf). Dimensions z: 0.05 + 0.2 + calf + 0.02.
        let short = descriptor_of(&fixtures::chain(0.4 * 0.3), &ctrl()).unwrap();
        let long = descriptor_of(&fixtures::chain(1.6 * 0.3), &ctrl()).unwrap();
        assert!((short.joints[2].0[2] + 0.32).abs() < 1e-12);
        assert!((long.joints[2].0[2] + 0.68).abs() < 1e-12);
        assert!((short.joints[0].0[17] - 0.39).abs() < 1e-12);
        assert!((long.joints[0].0[17] - 0.75).abs() < 1e-12);
        let position_or_dims = |i: usize| i < 3 || (15..18).contains(&i);
        for (a, b) in short.joints.iter().zip(&long.joints) {
            for i in 0..JOINT_DESCRIPTOR_LEN {
                if !position_or_dims(i) {
                    assert_eq!(a.0[i], b.0[i], "component {i}");
                }
            }
        }
    }

    #[test]
    fn permuting_joint_list_permutes_descriptors() {
        let e = fixtures::chain(0.3);
        let mut p = e.clone();
        p.joints.swap(0, 2);
        let a = descriptor_of(&e, &ctrl()).unwrap();
        let b = descriptor_of(&p, &ctrl()).unwrap();
        assert_eq!(a.joints[0], b.joints[2]);
        assert_eq!(a.joints[2], b.joints[0]);
        assert_eq!(a.joints[1], b.joints[1]);
        assert_eq!(a.general, b.general);
    }

    #[test]
    fn invalid_embodiment_rejected() {
        let mut e = fixtures::chain(0.3);
        e.joints[1].limits = (1.0, -1.0);
        assert!(matches!(descriptor_of(&e, &ctrl()), Err(Error::InvalidEmbodiment(_))));
    }
}
