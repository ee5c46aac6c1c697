use std::collections::BTreeMap;

use crate::embodiment::{Embodiment, Kinematics};
use crate::error::{Error, Result};

/// Leg-length bin width in meters.
const LEG_BIN: f64 = 0.05;

/// Counts per bin label, for one parameter over one class (or `all`).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub class: String,
    pub parameter: String,
    pub bins: BTreeMap<String, usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatisticsReport {
    pub histograms: Vec<Histogram>,
}

impl StatisticsReport {
    pub fn get(&self, class: &str, parameter: &str) -> Option<&Histogram> {
        self.histograms.iter().find(|h| h.class == class && h.parameter == parameter)
    }

    /// One row per bin: class, parameter, bin, count.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "parameter", "bin", "count"]).map_err(csv_err)?;
        for h in &self.histograms {
            for (bin, count) in &h.bins {
                w.write_record([&h.class, &h.parameter, bin, &count.to_string()]).map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Mean over legs of the distance from the hip joint (the joint attaching
/// the leg to the root) to the lowest point of the foot, at the nominal pose.
pub fn leg_length(e: &Embodiment) -> Result<f64> {
    let kin = Kinematics::new(e)?;
    let poses = kin.link_poses(&e.nominal_angles());
    let frames = kin.joint_frames(&poses, e);
    let root = kin.root();
    let feet = e.feet();
    if feet.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &f in &feet {
        let mut link = f;
        while let Some(p) = kin.parent_link(link) {
            if p == root {
                break;
            }
            link = p;
        }
        let hip = e
            .joints
            .iter()
            .position(|j| j.child_link == e.links[link].name)
            .ok_or_else(|| Error::InvalidEmbodiment("foot is the root link".into()))?;
        let (h, _) = frames[hip];
        let b = kin.geometry_bottom(&poses, f);
        total += ((h[0] - b.x).powi(2) + (h[1] - b.y).powi(2) + (h[2] - b.z).powi(2)).sqrt();
    }
    Ok(total / feet.len() as f64)
}

fn leg_bin(x: f64) -> String {
    format!("{:.2}", (x / LEG_BIN).floor() * LEG_BIN)
}

/// Histograms of leg length, joint count, knee count and knee-limit scale,
/// per class and over the whole list (`all`).
pub fn dataset_statistics(embodiments: &[Embodiment]) -> Result<StatisticsReport> {
    if embodiments.is_empty() {
        return Err(Error::DegenerateInput("no embodiments".into()));
    }
    const PARAMS: [&str; 4] = ["leg_length_m", "joint_count", "knee_count", "knee_limit_scale"];
    let mut hists: BTreeMap<(String, &str), BTreeMap<String, usize>> = BTreeMap::new();
    for e in embodiments {
        let knees = e.knee_counts_per_leg().values().copied().max().unwrap_or(0);
        let scale = e.variation.map_or("unknown".to_string(), |v| v.knee_limit_scale.to_string());
        let values = [leg_bin(leg_length(e)?), e.actuated_count().to_string(), knees.to_string(), scale];
        for group in [e.class.as_str(), "all"] {
            for (p, v) in PARAMS.iter().zip(&values) {
                *hists.entry((group.to_string(), p)).or_default().entry(v.clone()).or_default() += 1;
            }
        }
    }
    let histograms = hists
        .into_iter()
        .map(|((class, parameter), bins)| Histogram { class, parameter: parameter.into(), bins })
        .collect();
    Ok(StatisticsReport { histograms })
}
