//! Latent extraction from trained policies, PCA projection, and CSV
//! export for external embedding tools.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::embodiment::{descriptor_of, ClassControlConstants, Embodiment, MorphologyClass};
use crate::env::{CommandMode, EnvConfig, Model, SurrogateEnv};
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::randomization::CurriculumState;
use crate::urma::{Batch, PolicyParams};

pub const LATENT_STEPS: usize = 100;

/// One labelled latent vector: an embodiment's averaged action latent or
/// one joint's description latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub id: String,
    pub class: MorphologyClass,
    /// Knee joints on the embodiment's longest leg chain.
    pub knee_count: usize,
    /// Variation factors, `key=value` pairs joined by `;`.
    pub tags: String,
    pub values: Vec<f64>,
}

/// `key=value;...` summary of the variation behind `e`; "imported" when
/// the embodiment was not generated.
pub fn variation_tags(e: &Embodiment) -> String {
    let Some(v) = &e.variation else { return "imported".into() };
    let mut tags = vec![
        format!("knees={}", v.knee_joint_count),
        format!("links={}", fmt_f64(v.all_link_scale)),
        format!("thigh={}", fmt_f64(v.thigh_length_scale)),
        format!("calf={}", fmt_f64(v.calf_length_scale)),
        format!("foot={}", fmt_f64(v.foot_size_scale)),
    ];
    if let Some(t) = v.torso_size_scale {
        tags.push(format!("torso={}", fmt_f64(t)));
    }
    tags.push(format!("knee_limits={}", fmt_f64(v.knee_limit_scale)));
    tags.join(";")
}

fn knee_count(e: &Embodiment) -> usize {
    e.knee_counts_per_leg().values().copied().max().unwrap_or(0)
}

/// Mean of z̄_action over a `steps`-step zero-command rollout of the policy
/// at curriculum coefficient 0 (no randomization noise).
pub fn extract_latent(policy: &PolicyParams, e: &Embodiment, steps: usize, seed: u64) -> Result<LatentRow> {
    if steps == 0 {
        return Err(Error::Config("latent extraction needs at least one step".into()));
    }
    let net = policy.network()?;
    let cfg = EnvConfig { commands: CommandMode::fixed([0.0; 3]), curriculum: false, ..Default::default() };
    let model = Arc::new(Model::new(e, None)?);
    let mut env = SurrogateEnv::with_model(model.clone(), cfg, seed)?;
    env.curriculum = CurriculumState::with_coefficient(0.0);
    env.reset();
    let mut sum = vec![0.0; net.config.action_latent_dim];
    let mut n = 0;
    for _ in 0..steps {
        let mut batch = Batch::new(&model.descriptor);
        batch.push(env.observation(), None)?;
        let f = net.forward(&policy.values, &batch)?;
        for (s, z) in sum.iter_mut().zip(f.z_action()) {
            *s += z;
        }
        n += 1;
        if env.step(f.actions())?.done {
            break;
        }
    }
    let values: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    Ok(LatentRow { id: e.id.clone(), class: e.class, knee_count: knee_count(e), tags: variation_tags(e), values })
}

/// One averaged action latent per embodiment, all rolled out with `seed`.
pub fn action_latents(policy: &PolicyParams, embodiments: &[Embodiment], steps: usize, seed: u64) -> Result<Vec<LatentRow>> {
    embodiments.iter().map(|e| extract_latent(policy, e, steps, seed)).collect()
}

/// Description latents f_φ(d_j) of attention head `head`, one row per
/// actuated joint, labelled `<embodiment>/<joint>`.
pub fn joint_latents(policy: &PolicyParams, e: &Embodiment, head: usize) -> Result<Vec<LatentRow>> {
    let net = policy.network()?;
    if head >= net.config.heads {
        return Err(Error::Config(format!("head {head} out of range ({} heads)", net.config.heads)));
    }
    let desc = descriptor_of(e, &ClassControlConstants::for_class(e.class))?;
    let flat = net.description_latents(&policy.values, &desc, head);
    let joints = e.actuated_joints();
    let width = flat.len() / joints.len().max(1);
    let (knees, tags) = (knee_count(e), variation_tags(e));
    Ok(joints
        .iter()
        .zip(flat.chunks_exact(width.max(1)))
        .map(|(&j, z)| LatentRow {
            id: format!("{}/{}", e.id, e.joints[j].name),
            class: e.class,
            knee_count: knees,
            tags: tags.clone(),
            values: z.to_vec(),
        })
        .collect())
}

/// Principal components of row-major data, sorted by decreasing variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// (d, d); row i is component i.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n < 2 || d == 0 {
            return Err(Error::DegenerateInput(format!("PCA needs at least two rows of equal width, got {n}")));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("PCA rows differ in width".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean: DVector<f64> = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
        let mut components = DMatrix::zeros(d, d);
        for (r, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            // sign convention: largest-magnitude entry positive
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.neg_mut();
            }
            components.row_mut(r).copy_from(&v.transpose());
        }
        let explained_variance: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        if explained_variance.iter().sum::<f64>() <= 0.0 {
            return Err(Error::DegenerateInput("rows have zero variance after centering".into()));
        }
        Ok(Pca { mean: mean.iter().copied().collect(), components, explained_variance })
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.explained_variance.iter().sum();
        self.explained_variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect()
    }

    /// Coordinates on the first `k` components.
    pub fn transform(&self, row: &[f64], k: usize) -> Vec<f64> {
        let k = k.min(self.components.nrows());
        (0..k).map(|c| self.components.row(c).iter().zip(row.iter().zip(&self.mean)).map(|(w, (x, m))| w * (x - m)).sum()).collect()
    }

    pub fn inverse_transform(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, z) in coords.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.components.row(c).iter()) {
                *o += z * w;
            }
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Header `id,class,knee_count,variation,z_1..z_D`.
pub fn write_latents_csv(w: &mut impl Write, rows: &[LatentRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut head: Vec<String> = ["id", "class", "knee_count", "variation"].map(String::from).to_vec();
    head.extend((1..=d).map(|i| format!("z_{i}")));
    out.write_record(&head).map_err(csv_err)?;
    for r in rows {
        if r.values.len() != d {
            return Err(Error::ShapeMismatch("latent rows differ in width".into()));
        }
        let mut rec = vec![r.id.clone(), r.class.as_str().to_string(), r.knee_count.to_string(), r.tags.clone()];
        rec.extend(r.values.iter().map(|v| fmt_f64(*v)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_latents_csv(r: &mut impl Read) -> Result<Vec<LatentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    let parse = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(&e))?;
        if rec.len() < 4 {
            return Err(Error::Parse("latent row needs id, class, knee_count and variation".into()));
        }
        let values = rec.iter().skip(4).map(|v| v.parse::<f64>().map_err(|e| parse(&e))).collect::<Result<_>>()?;
        rows.push(LatentRow {
            id: rec[0].to_string(),
            class: rec[1].parse()?,
            knee_count: rec[2].parse().map_err(|e| parse(&e))?,
            tags: rec[3].to_string(),
            values,
        });
    }
    Ok(rows)
}

/// Header `id,pc1..pck`.
pub fn write_projection_csv(w: &mut impl Write, rows: &[LatentRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let k = rows.first().map_or(0, |r| r.values.len());
    let mut head = vec!["id".to_string()];
    head.extend((1..=k).map(|i| format!("pc{i}")));
    out.write_record(&head).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.id.clone()];
        rec.extend(r.values.iter().map(|v| fmt_f64(*v)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// PCA coordinates on the top `k` components of each row, keeping labels.
pub fn project_latents(rows: &[LatentRow], k: usize) -> Result<(Pca, Vec<LatentRow>)> {
    let data: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let pca = Pca::fit(&data)?;
    let width = rows[0].values.len();
    if k == 0 || k > width.min(rows.len() - 1) {
        return Err(Error::Config(format!("cannot project {} rows of width {width} onto {k} components", rows.len())));
    }
    let out = rows.iter().map(|r| LatentRow { values: pca.transform(&r.values, k), ..r.clone() }).collect();
    Ok((pca, out))
}
