use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_embodiment, reference_test_indices, BaseUnitTable, VariationSpec};
use crate::embodiment::{Embodiment, MorphologyClass};
use crate::error::{Error, Result};

/// Seed whose split reproduces the published test lists.
pub const REFERENCE_SEED: u64 = 0;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CLASS_COUNTS: [(MorphologyClass, usize); 3] = [
    (MorphologyClass::Humanoid, 348),
    (MorphologyClass::Quadruped, 332),
    (MorphologyClass::Hexapod, 332),
];
const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub variation: VariationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntries {
    pub class: MorphologyClass,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub entries: Vec<DatasetEntry>,
}

/// Everything needed to rebuild a dataset: seed, per-class variations and
/// the train/test split. Persisted as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub tool_version: String,
    pub classes: Vec<ClassEntries>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub class: MorphologyClass,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_seed(seed: u64, class: MorphologyClass) -> u64 {
    let salt = match class {
        MorphologyClass::Humanoid => 1,
        MorphologyClass::Quadruped => 2,
        MorphologyClass::Hexapod => 3,
    };
    seed ^ (salt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffles the class grid (reference robot removed) and keeps the first
/// `n` points, so variations within a class never repeat.
fn sample_variations(class: MorphologyClass, n: usize, seed: u64) -> Vec<VariationSpec> {
    let mut grid: Vec<VariationSpec> =
        VariationSpec::grid(class).into_iter().filter(|v| !v.is_reference(class)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class));
    grid.shuffle(&mut rng);
    grid.truncate(n);
    grid
}

impl DatasetManifest {
    pub fn class(&self, class: MorphologyClass) -> Option<&ClassEntries> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds every embodiment listed in the manifest, in manifest order.
    pub fn build_all(&self) -> Result<Vec<Embodiment>> {
        let mut out = Vec::with_capacity(self.len());
        for c in &self.classes {
            let base = BaseUnitTable::reference(c.class);
            for entry in &c.entries {
                let mut e = build_embodiment(c.class, &entry.variation, &base)?;
                e.id = entry.id.clone();
                out.push(e);
            }
        }
        Ok(out)
    }

    /// Builds a single embodiment by id.
    pub fn build(&self, id: &str) -> Result<Embodiment> {
        for c in &self.classes {
            if let Some(entry) = c.entries.iter().find(|e| e.id == id) {
                let mut e = build_embodiment(c.class, &entry.variation, &BaseUnitTable::reference(c.class))?;
                e.id = entry.id.clone();
                return Ok(e);
            }
        }
        Err(Error::Config(format!("no embodiment `{id}` in manifest")))
    }
}

/// Generates the full dataset for `seed`: 348 humanoids, 332 quadrupeds and
/// 332 hexapods, with the split for the same seed recorded in the manifest.
pub fn generate_dataset(seed: u64) -> Result<(Vec<Embodiment>, DatasetManifest)> {
    let mut classes = Vec::new();
    for (class, n) in CLASS_COUNTS {
        let entries = sample_variations(class, n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, variation)| DatasetEntry { id: format!("{class}-{i:04}"), variation })
            .collect();
        classes.push(ClassEntries { class, train: Vec::new(), test: Vec::new(), entries });
    }
    let mut manifest = DatasetManifest { seed, tool_version: TOOL_VERSION.into(), classes };
    for split in split_dataset(&manifest, seed)? {
        let c = manifest.classes.iter_mut().find(|c| c.class == split.class).expect("class present");
        c.train = split.train;
        c.test = split.test;
    }
    let embodiments = manifest.build_all()?;
    Ok((embodiments, manifest))
}

/// 80/20 split per class. The reference seed yields the published test
/// lists; other seeds draw `ceil(0.2 n)` test indices with a sampler keyed
/// only on (seed, n), so equally sized classes share a split.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64) -> Result<Vec<Split>> {
    let mut out = Vec::new();
    for (class, expected) in CLASS_COUNTS {
        let n = manifest.class(class).map_or(0, |c| c.entries.len());
        if n != expected {
            return Err(Error::SizeMismatch(format!("{class}: manifest has {n} embodiments, expected {expected}")));
        }
        let test: Vec<usize> = if seed == REFERENCE_SEED {
            reference_test_indices(class).to_vec()
        } else {
            let k = (TEST_FRACTION * n as f64).ceil() as usize;
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        };
        let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        out.push(Split { class, train, test });
    }
    Ok(out)
}
