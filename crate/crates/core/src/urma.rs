//! Multi-head joint-attention policy.
//!
//! Per head, descriptors d_j are encoded to attention scores and joint
//! observations o_j to values; softmax-normalized weights gate the values and
//! the gated rows are summed into a pooled joint latent. The pooled heads and
//! the projected general observation feed the core network, whose output is
//! the action latent. A shared decoder maps (g(d_j), action latent, z_j) to
//! one action per joint, so the same parameters drive any joint count.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_table, Checkpoint};
use crate::embodiment::{EmbodimentDescriptor, GeneralDescriptor, JOINT_DESCRIPTOR_LEN};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layout, Mlp, MlpCache};

pub const GENERAL_OBS_LEN: usize = 20;
pub const JOINT_OBS_LEN: usize = 3;
pub const MIN_TEMPERATURE: f64 = 1e-3;

/// Fixed per-component input scaling of descriptor rows.
pub const DESC_SCALE: [f64; JOINT_DESCRIPTOR_LEN] = [
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.01, 0.05, 1.0, 1.0, 0.02, 0.5, 1.0, 0.02, 1.0, 1.0, 1.0,
];
/// Fixed per-component input scaling of the general observation.
pub const GENERAL_SCALE: [f64; GENERAL_OBS_LEN] = [
    0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.02, 0.5, 1.0, 0.02, 1.0, 1.0, 1.0, 0.05, 5.0, 0.0,
    0.0,
];
/// Fixed scaling of (angle, velocity, previous action).
pub const JOINT_OBS_SCALE: [f64; JOINT_OBS_LEN] = [1.0, 0.1, 1.0];

/// Policy input for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBundle {
    /// Trunk linear velocity (3), gravity vector (3), command (3), p-gain,
    /// d-gain, action scale, total mass, dimensions (3), joint count, feet
    /// size, two reserved zeros.
    pub general: [f64; GENERAL_OBS_LEN],
    /// Joint angle, joint velocity and previous raw action per joint.
    pub per_joint: Vec<[f64; JOINT_OBS_LEN]>,
}

/// Assembles the 20-wide general observation.
pub fn general_observation(
    lin_vel: [f64; 3],
    gravity: [f64; 3],
    command: [f64; 3],
    g: &GeneralDescriptor,
) -> [f64; GENERAL_OBS_LEN] {
    let mut o = [0.0; GENERAL_OBS_LEN];
    o[0..3].copy_from_slice(&lin_vel);
    o[3..6].copy_from_slice(&gravity);
    o[6..9].copy_from_slice(&command);
    o[9..18].copy_from_slice(&g.0);
    o
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Joints compete per latent channel (default).
    Joints,
    /// Channels compete per joint.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrmaConfig {
    pub heads: usize,
    pub latent_dim: usize,
    pub desc_hidden: Vec<usize>,
    pub obs_hidden: Vec<usize>,
    pub general_dim: usize,
    pub core_hidden: Vec<usize>,
    pub action_latent_dim: usize,
    pub action_desc_hidden: Vec<usize>,
    pub action_desc_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub softmax_axis: SoftmaxAxis,
}

impl UrmaConfig {
    /// Three heads with doubled hidden widths, about 2.05 M parameters.
    pub fn reference() -> Self {
        UrmaConfig {
            heads: 3,
            latent_dim: 64,
            desc_hidden: vec![256, 256],
            obs_hidden: vec![256, 256],
            general_dim: 128,
            core_hidden: vec![1024, 512],
            action_latent_dim: 256,
            action_desc_hidden: vec![256],
            action_desc_dim: 64,
            decoder_hidden: vec![512, 512],
            softmax_axis: SoftmaxAxis::Joints,
        }
    }

    /// Small network for desk-scale training.
    pub fn desk() -> Self {
        UrmaConfig {
            heads: 3,
            latent_dim: 16,
            desc_hidden: vec![32],
            obs_hidden: vec![32],
            general_dim: 32,
            core_hidden: vec![64],
            action_latent_dim: 32,
            action_desc_hidden: vec![32],
            action_desc_dim: 16,
            decoder_hidden: vec![64],
            softmax_axis: SoftmaxAxis::Joints,
        }
    }

    /// Tiny network for gradient checks.
    pub fn tiny() -> Self {
        UrmaConfig {
            heads: 2,
            latent_dim: 3,
            desc_hidden: vec![4],
            obs_hidden: vec![4],
            general_dim: 3,
            core_hidden: vec![5],
            action_latent_dim: 3,
            action_desc_hidden: vec![3],
            action_desc_dim: 2,
            decoder_hidden: vec![4],
            softmax_axis: SoftmaxAxis::Joints,
        }
    }

    fn check(&self) -> Result<()> {
        let widths = [self.heads, self.latent_dim, self.general_dim, self.action_latent_dim, self.action_desc_dim];
        let hidden = [&self.desc_hidden, &self.obs_hidden, &self.core_hidden, &self.action_desc_hidden, &self.decoder_hidden];
        if widths.contains(&0) || hidden.iter().any(|h| h.contains(&0)) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Network structure over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Urma {
    pub config: UrmaConfig,
    pub layout: Layout,
    phi: Vec<Mlp>,
    psi: Vec<Mlp>,
    tau: Range<usize>,
    general: Mlp,
    core: Mlp,
    action_desc: Mlp,
    decoder: Mlp,
}

/// Trained or initialized parameters with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: UrmaConfig,
    pub values: Vec<f64>,
}

/// Latents of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// `[head][joint]` rows of width latent_dim.
    pub z_joints: Vec<Vec<Vec<f64>>>,
    /// `[head]` pooled sums.
    pub pooled: Vec<Vec<f64>>,
    pub z_action: Vec<f64>,
}

/// A batch of samples from a single embodiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub joints: usize,
    /// Raw descriptor rows, (J, 18).
    pub desc: Vec<f64>,
    /// (B, 20).
    pub general: Vec<f64>,
    /// (B, J, 3).
    pub joint_obs: Vec<f64>,
    /// Expert actions (B, J); empty when only acting.
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new(desc: &EmbodimentDescriptor) -> Self {
        Batch {
            joints: desc.joint_count(),
            desc: desc.joint_matrix(),
            general: Vec::new(),
            joint_obs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.general.len() / GENERAL_OBS_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.general.is_empty()
    }

    pub fn push(&mut self, obs: &ObservationBundle, target: Option<&[f64]>) -> Result<()> {
        if obs.per_joint.len() != self.joints {
            return Err(Error::ShapeMismatch(format!(
                "observation has {} joints, descriptor has {}",
                obs.per_joint.len(),
                self.joints
            )));
        }
        self.general.extend_from_slice(&obs.general);
        for r in &obs.per_joint {
            self.joint_obs.extend_from_slice(r);
        }
        if let Some(t) = target {
            if t.len() != self.joints {
                return Err(Error::ShapeMismatch(format!("{} targets for {} joints", t.len(), self.joints)));
            }
            self.targets.extend_from_slice(t);
        }
        Ok(())
    }

    fn check(&self, need_targets: bool) -> Result<()> {
        let j = self.joints;
        let b = self.len();
        if j == 0 {
            return Err(Error::ShapeMismatch("no joints".into()));
        }
        if self.desc.len() != j * JOINT_DESCRIPTOR_LEN
            || self.general.len() != b * GENERAL_OBS_LEN
            || self.joint_obs.len() != b * j * JOINT_OBS_LEN
        {
            return Err(Error::ShapeMismatch("batch arrays disagree with (B, J)".into()));
        }
        if need_targets && self.targets.len() != b * j {
            return Err(Error::ShapeMismatch(format!("{} targets for a ({b}, {j}) batch", self.targets.len())));
        }
        Ok(())
    }
}

struct HeadCache {
    phi: MlpCache,
    psi: MlpCache,
    /// Scores and weights, (J, L).
    s: Vec<f64>,
    w: Vec<f64>,
    /// Gated values, (B, J, L).
    z: Vec<f64>,
}

/// Forward intermediates needed by `backward`.
pub struct Forward {
    b: usize,
    j: usize,
    heads: Vec<HeadCache>,
    pooled: Vec<f64>,
    general: MlpCache,
    core: MlpCache,
    action_desc: MlpCache,
    decoder: MlpCache,
}

impl Forward {
    /// Actions, (B, J).
    pub fn actions(&self) -> &[f64] {
        self.decoder.output()
    }

    /// Action latents, (B, A).
    pub fn z_action(&self) -> &[f64] {
        self.core.output()
    }

    /// Latents of sample `i`.
    pub fn latent(&self, i: usize) -> LatentState {
        let l = self.heads.first().map_or(0, |h| h.s.len() / self.j);
        let nh = self.heads.len();
        let z_joints = self
            .heads
            .iter()
            .map(|h| (0..self.j).map(|j| h.z[(i * self.j + j) * l..(i * self.j + j + 1) * l].to_vec()).collect())
            .collect();
        let pooled = (0..nh).map(|h| self.pooled[(i * nh + h) * l..(i * nh + h + 1) * l].to_vec()).collect();
        let a = self.core.output().len() / self.b;
        LatentState { z_joints, pooled, z_action: self.core.output()[i * a..(i + 1) * a].to_vec() }
    }
}

fn softmax_rows(s: &[f64], rows: usize, cols: usize, over_rows: bool) -> Vec<f64> {
    let mut w = vec![0.0; s.len()];
    let (outer, inner) = if over_rows { (cols, rows) } else { (rows, cols) };
    let idx = |o: usize, i: usize| if over_rows { i * cols + o } else { o * cols + i };
    for o in 0..outer {
        let m = (0..inner).map(|i| s[idx(o, i)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..inner {
            let e = (s[idx(o, i)] - m).exp();
            w[idx(o, i)] = e;
            sum += e;
        }
        for i in 0..inner {
            w[idx(o, i)] /= sum;
        }
    }
    w
}

fn softmax_backward(w: &[f64], dw: &[f64], rows: usize, cols: usize, over_rows: bool) -> Vec<f64> {
    let mut ds = vec![0.0; w.len()];
    let (outer, inner) = if over_rows { (cols, rows) } else { (rows, cols) };
    let idx = |o: usize, i: usize| if over_rows { i * cols + o } else { o * cols + i };
    for o in 0..outer {
        let dot: f64 = (0..inner).map(|i| w[idx(o, i)] * dw[idx(o, i)]).sum();
        for i in 0..inner {
            let k = idx(o, i);
            ds[k] = w[k] * (dw[k] - dot);
        }
    }
    ds
}

impl Urma {
    pub fn new(config: UrmaConfig) -> Result<Self> {
        config.check()?;
        let c = &config;
        let mut layout = Layout::default();
        let mut phi = Vec::new();
        let mut psi = Vec::new();
        for h in 0..c.heads {
            phi.push(layout.mlp(
                &format!("head{h}.desc"),
                &sizes(JOINT_DESCRIPTOR_LEN, &c.desc_hidden, c.latent_dim),
                Activation::Elu,
                Activation::Identity,
            ));
            psi.push(layout.mlp(
                &format!("head{h}.obs"),
                &sizes(JOINT_OBS_LEN, &c.obs_hidden, c.latent_dim),
                Activation::Elu,
                Activation::Elu,
            ));
        }
        let tau = layout.tensor("temperature", vec![c.heads]);
        let general = layout.mlp("general", &[GENERAL_OBS_LEN, c.general_dim], Activation::Elu, Activation::Elu);
        let core = layout.mlp(
            "core",
            &sizes(c.heads * c.latent_dim + c.general_dim, &c.core_hidden, c.action_latent_dim),
            Activation::Elu,
            Activation::Elu,
        );
        let action_desc = layout.mlp(
            "action_desc",
            &sizes(JOINT_DESCRIPTOR_LEN, &c.action_desc_hidden, c.action_desc_dim),
            Activation::Elu,
            Activation::Elu,
        );
        let decoder = layout.mlp(
            "decoder",
            &sizes(c.action_desc_dim + c.action_latent_dim + c.heads * c.latent_dim, &c.decoder_hidden, 1),
            Activation::Elu,
            Activation::Identity,
        );
        Ok(Urma { config, layout, phi, psi, tau, general, core, action_desc, decoder })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    /// Fan-in uniform weights, temperatures at 1.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.layout.len];
        for (a, b) in self.phi.iter().zip(&self.psi) {
            a.init(&mut p, &mut rng);
            b.init(&mut p, &mut rng);
        }
        p[self.tau.clone()].fill(1.0);
        for m in [&self.general, &self.core, &self.action_desc, &self.decoder] {
            m.init(&mut p, &mut rng);
        }
        p
    }

    /// Temperatures of every head.
    pub fn temperatures<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.tau.clone()]
    }

    /// Keeps temperatures above the positive floor after an update.
    pub fn clamp_temperatures(&self, p: &mut [f64]) {
        for t in &mut p[self.tau.clone()] {
            *t = t.max(MIN_TEMPERATURE);
        }
    }

    pub fn forward(&self, p: &[f64], batch: &Batch) -> Result<Forward> {
        batch.check(false)?;
        if p.len() != self.layout.len {
            return Err(Error::ShapeMismatch(format!("{} parameters, expected {}", p.len(), self.layout.len)));
        }
        let c = &self.config;
        let (b, j, l, nh) = (batch.len(), batch.joints, c.latent_dim, c.heads);
        let desc: Vec<f64> = batch
            .desc
            .chunks_exact(JOINT_DESCRIPTOR_LEN)
            .flat_map(|r| r.iter().zip(&DESC_SCALE).map(|(v, s)| v * s))
            .collect();
        let jobs: Vec<f64> = batch
            .joint_obs
            .chunks_exact(JOINT_OBS_LEN)
            .flat_map(|r| r.iter().zip(&JOINT_OBS_SCALE).map(|(v, s)| v * s))
            .collect();
        let gen_in: Vec<f64> = batch
            .general
            .chunks_exact(GENERAL_OBS_LEN)
            .flat_map(|r| r.iter().zip(&GENERAL_SCALE).map(|(v, s)| v * s))
            .collect();
        let over_joints = c.softmax_axis == SoftmaxAxis::Joints;

        let mut heads = Vec::with_capacity(nh);
        let mut pooled = vec![0.0; b * nh * l];
        for h in 0..nh {
            let tau = p[self.tau.start + h];
            let phi = self.phi[h].forward(p, &desc, j);
            let s: Vec<f64> = phi.output().iter().map(|v| v / tau).collect();
            let w = softmax_rows(&s, j, l, over_joints);
            let psi = self.psi[h].forward(p, &jobs, b * j);
            let vals = psi.output();
            let mut z = vec![0.0; b * j * l];
            for bi in 0..b {
                let pool = &mut pooled[(bi * nh + h) * l..(bi * nh + h + 1) * l];
                for ji in 0..j {
                    let row = (bi * j + ji) * l;
                    for ch in 0..l {
                        let v = w[ji * l + ch] * vals[row + ch];
                        z[row + ch] = v;
                        pool[ch] += v;
                    }
                }
            }
            heads.push(HeadCache { phi, psi, s, w, z });
        }

        let general = self.general.forward(p, &gen_in, b);
        let gd = c.general_dim;
        let core_w = nh * l + gd;
        let mut core_in = vec![0.0; b * core_w];
        for bi in 0..b {
            core_in[bi * core_w..bi * core_w + nh * l].copy_from_slice(&pooled[bi * nh * l..(bi + 1) * nh * l]);
            core_in[bi * core_w + nh * l..(bi + 1) * core_w].copy_from_slice(&general.output()[bi * gd..(bi + 1) * gd]);
        }
        let core = self.core.forward(p, &core_in, b);

        let action_desc = self.action_desc.forward(p, &desc, j);
        let (ad, a) = (c.action_desc_dim, c.action_latent_dim);
        let dec_w = ad + a + nh * l;
        let mut dec_in = vec![0.0; b * j * dec_w];
        for bi in 0..b {
            for ji in 0..j {
                let row = &mut dec_in[(bi * j + ji) * dec_w..(bi * j + ji + 1) * dec_w];
                row[..ad].copy_from_slice(&action_desc.output()[ji * ad..(ji + 1) * ad]);
                row[ad..ad + a].copy_from_slice(&core.output()[bi * a..(bi + 1) * a]);
                for (h, hc) in heads.iter().enumerate() {
                    let off = ad + a + h * l;
                    row[off..off + l].copy_from_slice(&hc.z[(bi * j + ji) * l..(bi * j + ji + 1) * l]);
                }
            }
        }
        let decoder = self.decoder.forward(p, &dec_in, b * j);
        let out = Forward { b, j, heads, pooled, general, core, action_desc, decoder };
        if out.actions().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(out)
    }

    /// Deterministic actions and latents for one observation.
    pub fn act(&self, p: &[f64], obs: &ObservationBundle, desc: &EmbodimentDescriptor) -> Result<(Vec<f64>, LatentState)> {
        let mut batch = Batch::new(desc);
        batch.push(obs, None)?;
        let f = self.forward(p, &batch)?;
        Ok((f.actions().to_vec(), f.latent(0)))
    }

    /// Mean squared error over every joint and sample.
    pub fn bc_loss(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        batch.check(true)?;
        let f = self.forward(p, batch)?;
        Ok(mse(f.actions(), &batch.targets))
    }

    /// Loss and its exact gradient.
    pub fn loss_and_grad(&self, p: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        batch.check(true)?;
        let f = self.forward(p, batch)?;
        let loss = mse(f.actions(), &batch.targets);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let n = batch.targets.len() as f64;
        let d: Vec<f64> = f.actions().iter().zip(&batch.targets).map(|(a, t)| 2.0 * (a - t) / n).collect();
        Ok((loss, self.backward(p, &f, &d)))
    }

    /// Parameter gradient given d(loss)/d(actions), (B, J).
    pub fn backward(&self, p: &[f64], f: &Forward, d_actions: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let (b, j, l, nh) = (f.b, f.j, c.latent_dim, c.heads);
        let (ad, a, gd) = (c.action_desc_dim, c.action_latent_dim, c.general_dim);
        let mut g = vec![0.0; self.layout.len];

        let d_dec = self.decoder.backward(p, &f.decoder, d_actions, &mut g);
        let dec_w = ad + a + nh * l;
        let mut d_ad = vec![0.0; j * ad];
        let mut d_zact = vec![0.0; b * a];
        let mut d_z: Vec<Vec<f64>> = vec![vec![0.0; b * j * l]; nh];
        for bi in 0..b {
            for ji in 0..j {
                let row = &d_dec[(bi * j + ji) * dec_w..(bi * j + ji + 1) * dec_w];
                for (x, y) in d_ad[ji * ad..(ji + 1) * ad].iter_mut().zip(&row[..ad]) {
                    *x += y;
                }
                for (x, y) in d_zact[bi * a..(bi + 1) * a].iter_mut().zip(&row[ad..ad + a]) {
                    *x += y;
                }
                for (h, dz) in d_z.iter_mut().enumerate() {
                    let off = ad + a + h * l;
                    dz[(bi * j + ji) * l..(bi * j + ji + 1) * l].copy_from_slice(&row[off..off + l]);
                }
            }
        }
        self.action_desc.backward_params(p, &f.action_desc, &d_ad, &mut g);

        let d_core = self.core.backward(p, &f.core, &d_zact, &mut g);
        let core_w = nh * l + gd;
        let mut d_gen = vec![0.0; b * gd];
        for bi in 0..b {
            d_gen[bi * gd..(bi + 1) * gd].copy_from_slice(&d_core[bi * core_w + nh * l..(bi + 1) * core_w]);
        }
        self.general.backward_params(p, &f.general, &d_gen, &mut g);

        let over_joints = c.softmax_axis == SoftmaxAxis::Joints;
        for (h, hc) in f.heads.iter().enumerate() {
            let tau = p[self.tau.start + h];
            let dz = &mut d_z[h];
            for bi in 0..b {
                let dpool = &d_core[bi * core_w + h * l..bi * core_w + (h + 1) * l];
                for ji in 0..j {
                    for (x, y) in dz[(bi * j + ji) * l..(bi * j + ji + 1) * l].iter_mut().zip(dpool) {
                        *x += y;
                    }
                }
            }
            let vals = hc.psi.output();
            let mut d_vals = vec![0.0; b * j * l];
            let mut d_w = vec![0.0; j * l];
            for bi in 0..b {
                for ji in 0..j {
                    let row = (bi * j + ji) * l;
                    for ch in 0..l {
                        d_vals[row + ch] = dz[row + ch] * hc.w[ji * l + ch];
                        d_w[ji * l + ch] += dz[row + ch] * vals[row + ch];
                    }
                }
            }
            self.psi[h].backward_params(p, &hc.psi, &d_vals, &mut g);
            let d_s = softmax_backward(&hc.w, &d_w, j, l, over_joints);
            let d_phi: Vec<f64> = d_s.iter().map(|v| v / tau).collect();
            g[self.tau.start + h] = -d_s.iter().zip(&hc.s).map(|(ds, s)| ds * s).sum::<f64>() / tau;
            self.phi[h].backward_params(p, &hc.phi, &d_phi, &mut g);
        }
        g
    }

    /// Descriptor latents f_φ(d_j) of head `h`, (J, L).
    pub fn description_latents(&self, p: &[f64], desc: &EmbodimentDescriptor, h: usize) -> Vec<f64> {
        let d: Vec<f64> = desc
            .joint_matrix()
            .chunks_exact(JOINT_DESCRIPTOR_LEN)
            .flat_map(|r| r.iter().zip(&DESC_SCALE).map(|(v, s)| v * s))
            .collect();
        self.phi[h].eval(p, &d, desc.joint_count())
    }
}

fn mse(a: &[f64], t: &[f64]) -> f64 {
    a.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Deterministic initialization of `arch`.
pub fn init_params(arch: &UrmaConfig, seed: u64) -> Result<PolicyParams> {
    let net = Urma::new(arch.clone())?;
    let values = net.init(seed);
    log::debug!("initialized URMA with {} parameters", values.len());
    Ok(PolicyParams { config: arch.clone(), values })
}

impl PolicyParams {
    pub fn network(&self) -> Result<Urma> {
        Urma::new(self.config.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let net = self.network()?;
        Checkpoint::from_params("urma", config_table(&self.config)?, &net.layout, &self.values).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "urma" {
            return Err(Error::Format(format!("checkpoint kind {} is not urma", ck.kind)));
        }
        let config: UrmaConfig =
            toml::Value::Table(ck.config.clone()).try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        let net = Urma::new(config.clone())?;
        let values = ck.to_params(&net.layout)?;
        Ok(PolicyParams { config, values })
    }
}
