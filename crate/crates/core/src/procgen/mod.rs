//! Procedural embodiment generation: variation grid, construction from base
//! units, the seeded dataset, train/test splits, and summary statistics.

mod base;
mod build;
mod dataset;
mod reference;
mod stats;

pub use base::{BaseUnitTable, JointUnit, LinkUnit};
pub use build::{apply_knee_limit_scale, build_embodiment};
pub use dataset::{
    generate_dataset, split_dataset, ClassEntries, DatasetEntry, DatasetManifest, Split,
    CLASS_COUNTS, REFERENCE_SEED, TOOL_VERSION,
};
pub use reference::{reference_test_indices, HUMANOID_TEST, QUADRUPED_HEXAPOD_TEST};
pub use stats::{dataset_statistics, Histogram, StatisticsReport};

use serde::{Deserialize, Serialize};

use crate::embodiment::MorphologyClass;
use crate::error::{Error, Result};

/// The class's reference robot built from the reference base units.
pub fn reference_embodiment(class: MorphologyClass) -> crate::embodiment::Embodiment {
    build_embodiment(class, &VariationSpec::reference(class), &BaseUnitTable::reference(class))
        .expect("reference variation is always valid")
}

pub const KNEE_COUNTS: [u32; 4] = [0, 1, 2, 3];
pub const ALL_LINK_SCALES: [f64; 3] = [0.8, 1.0, 1.2];
pub const THIGH_LENGTH_SCALES: [f64; 5] = [0.4, 0.8, 1.0, 1.2, 1.6];
pub const CALF_LENGTH_SCALES: [f64; 5] = [0.4, 0.8, 1.0, 1.2, 1.6];
pub const FOOT_SIZE_SCALES: [f64; 2] = [1.0, 2.0];
pub const TORSO_SIZE_SCALES: [f64; 5] = [0.4, 0.8, 1.0, 1.2, 1.6];
pub const KNEE_LIMIT_SCALES: [f64; 3] = [0.2, 0.6, 1.0];

/// One point of the geometry/topology/kinematics variation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    pub knee_joint_count: u32,
    pub all_link_scale: f64,
    pub thigh_length_scale: f64,
    pub calf_length_scale: f64,
    pub foot_size_scale: f64,
    /// Present iff the class is humanoid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torso_size_scale: Option<f64>,
    pub knee_limit_scale: f64,
}

impl VariationSpec {
    /// The unscaled reference robot of a class (every factor 1.0, one knee).
    pub fn reference(class: MorphologyClass) -> Self {
        VariationSpec {
            knee_joint_count: 1,
            all_link_scale: 1.0,
            thigh_length_scale: 1.0,
            calf_length_scale: 1.0,
            foot_size_scale: 1.0,
            torso_size_scale: (class == MorphologyClass::Humanoid).then_some(1.0),
            knee_limit_scale: 1.0,
        }
    }

    pub fn is_reference(&self, class: MorphologyClass) -> bool {
        *self == Self::reference(class)
    }

    /// Checks every field against its candidate set.
    pub fn check(&self, class: MorphologyClass) -> Result<()> {
        fn member(name: &str, v: f64, set: &[f64]) -> Result<()> {
            if set.contains(&v) {
                Ok(())
            } else {
                Err(Error::UnsupportedVariation(format!("{name} = {v} not in {set:?}")))
            }
        }
        if !KNEE_COUNTS.contains(&self.knee_joint_count) {
            return Err(Error::UnsupportedVariation(format!(
                "knee_joint_count = {} not in {KNEE_COUNTS:?}",
                self.knee_joint_count
            )));
        }
        member("all_link_scale", self.all_link_scale, &ALL_LINK_SCALES)?;
        member("thigh_length_scale", self.thigh_length_scale, &THIGH_LENGTH_SCALES)?;
        member("calf_length_scale", self.calf_length_scale, &CALF_LENGTH_SCALES)?;
        member("foot_size_scale", self.foot_size_scale, &FOOT_SIZE_SCALES)?;
        member("knee_limit_scale", self.knee_limit_scale, &KNEE_LIMIT_SCALES)?;
        match (class, self.torso_size_scale) {
            (MorphologyClass::Humanoid, Some(t)) => member("torso_size_scale", t, &TORSO_SIZE_SCALES),
            (MorphologyClass::Humanoid, None) => {
                Err(Error::UnsupportedVariation("humanoid requires torso_size_scale".into()))
            }
            (_, Some(_)) => Err(Error::UnsupportedVariation(format!(
                "torso_size_scale only applies to humanoids, not {class}"
            ))),
            (_, None) => Ok(()),
        }
    }

    /// Every grid point for a class, in a fixed nested order.
    pub fn grid(class: MorphologyClass) -> Vec<VariationSpec> {
        let torso: Vec<Option<f64>> = if class == MorphologyClass::Humanoid {
            TORSO_SIZE_SCALES.iter().map(|&t| Some(t)).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &knee_joint_count in &KNEE_COUNTS {
            for &all_link_scale in &ALL_LINK_SCALES {
                for &thigh_length_scale in &THIGH_LENGTH_SCALES {
                    for &calf_length_scale in &CALF_LENGTH_SCALES {
                        for &foot_size_scale in &FOOT_SIZE_SCALES {
                            for &torso_size_scale in &torso {
                                for &knee_limit_scale in &KNEE_LIMIT_SCALES {
                                    out.push(VariationSpec {
                                        knee_joint_count,
                                        all_link_scale,
                                        thigh_length_scale,
                                        calf_length_scale,
                                        foot_size_scale,
                                        torso_size_scale,
                                        knee_limit_scale,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
