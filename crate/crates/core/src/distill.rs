//! Expert demonstration collection, the slice/buffer data pipeline and
//! behavior cloning of the URMA student.
//!
//! Demonstrations are stored as slices of up to `trajectories × steps`
//! samples. Each environment's stream is split into a training prefix and
//! a validation suffix; the concatenated streams are cut into 128-step
//! trajectories which are grouped into slices.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embodiment::{Embodiment, JOINT_DESCRIPTOR_LEN};
use crate::env::{EnvConfig, Model, SurrogateEnv, COLLECTION_STEPS};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW};
use crate::numfmt::fmt_f64;
use crate::ppo::ExpertPolicy;
use crate::randomization::CurriculumState;
use crate::urma::{Batch, ObservationBundle, PolicyParams, Urma, UrmaConfig, GENERAL_OBS_LEN, JOINT_OBS_LEN};

pub const SLICE_MAGIC: &[u8; 8] = b"XEMBSLCE";
pub const SLICE_TRAJECTORIES: usize = 100;
pub const TRAJECTORY_STEPS: usize = 128;

/// Up to `trajectories × steps` samples of one embodiment, stored in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySlice {
    pub embodiment: String,
    pub joints: usize,
    pub trajectories: usize,
    pub steps: usize,
    /// (N, 20).
    pub general: Vec<f32>,
    /// (N, J, 3).
    pub joint_obs: Vec<f32>,
    /// (N, J).
    pub actions: Vec<f32>,
}

impl TrajectorySlice {
    pub fn new(embodiment: impl Into<String>, joints: usize, trajectories: usize, steps: usize) -> Self {
        TrajectorySlice {
            embodiment: embodiment.into(),
            joints,
            trajectories,
            steps,
            general: Vec::new(),
            joint_obs: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.trajectories * self.steps
    }

    pub fn len(&self) -> usize {
        self.general.len() / GENERAL_OBS_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.general.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity()
    }

    pub fn push(&mut self, obs: &ObservationBundle, action: &[f64]) -> Result<()> {
        if obs.per_joint.len() != self.joints || action.len() != self.joints {
            return Err(Error::ShapeMismatch(format!("sample does not match {} joints", self.joints)));
        }
        if self.is_full() {
            return Err(Error::ShapeMismatch("slice is full".into()));
        }
        self.general.extend(obs.general.iter().map(|&v| v as f32));
        self.joint_obs.extend(obs.per_joint.iter().flatten().map(|&v| v as f32));
        self.actions.extend(action.iter().map(|&v| v as f32));
        Ok(())
    }

    /// Appends samples `idx` to a batch of this slice's embodiment.
    pub fn fill_batch(&self, batch: &mut Batch, idx: &[usize]) {
        let j = self.joints;
        let w = j * JOINT_OBS_LEN;
        for &i in idx {
            batch.general.extend(self.general[i * GENERAL_OBS_LEN..(i + 1) * GENERAL_OBS_LEN].iter().map(|&v| v as f64));
            batch.joint_obs.extend(self.joint_obs[i * w..(i + 1) * w].iter().map(|&v| v as f64));
            batch.targets.extend(self.actions[i * j..(i + 1) * j].iter().map(|&v| v as f64));
        }
    }

    /// ```text
    /// magic "XEMBSLCE", version u32, id length u32, id bytes (UTF-8),
    /// u32 joints, trajectories, steps, samples; then per sample f32 LE:
    /// general[20], joint_obs[J*3], action[J]
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SLICE_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.embodiment.len() as u32).to_le_bytes())?;
        w.write_all(self.embodiment.as_bytes())?;
        for v in [self.joints, self.trajectories, self.steps, self.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let (j, w3) = (self.joints, self.joints * JOINT_OBS_LEN);
        let mut buf = Vec::with_capacity(4 * (GENERAL_OBS_LEN + w3 + j));
        for i in 0..self.len() {
            buf.clear();
            for v in self.general[i * GENERAL_OBS_LEN..(i + 1) * GENERAL_OBS_LEN]
                .iter()
                .chain(&self.joint_obs[i * w3..(i + 1) * w3])
                .chain(&self.actions[i * j..(i + 1) * j])
            {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SLICE_MAGIC {
            return Err(Error::Format("not a slice file".into()));
        }
        let mut u = || -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported slice version {version}")));
        }
        let id_len = u()?;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let embodiment = String::from_utf8(id).map_err(|e| Error::Format(e.to_string()))?;
        let mut u = || -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let (joints, trajectories, steps, n) = (u()?, u()?, u()?, u()?);
        if n > trajectories * steps || joints == 0 {
            return Err(Error::Format("slice header is inconsistent".into()));
        }
        let w3 = joints * JOINT_OBS_LEN;
        let width = GENERAL_OBS_LEN + w3 + joints;
        let mut bytes = vec![0u8; 4 * width * n];
        r.read_exact(&mut bytes)?;
        let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut s = TrajectorySlice::new(embodiment, joints, trajectories, steps);
        for row in vals.chunks_exact(width) {
            s.general.extend_from_slice(&row[..GENERAL_OBS_LEN]);
            s.joint_obs.extend_from_slice(&row[GENERAL_OBS_LEN..GENERAL_OBS_LEN + w3]);
            s.actions.extend_from_slice(&row[GENERAL_OBS_LEN + w3..]);
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// A slice held in memory or on disk.
#[derive(Debug, Clone)]
pub enum SliceRef {
    Memory(Arc<TrajectorySlice>),
    File(PathBuf),
}

impl SliceRef {
    pub fn load(&self) -> Result<Arc<TrajectorySlice>> {
        match self {
            SliceRef::Memory(s) => Ok(s.clone()),
            SliceRef::File(p) => Ok(Arc::new(TrajectorySlice::load(p)?)),
        }
    }
}

/// Demonstrations of one embodiment together with its descriptor rows.
#[derive(Debug, Clone)]
pub struct DemoSource {
    pub embodiment: String,
    /// Raw (J, 18) descriptor rows.
    pub desc: Vec<f64>,
    pub slices: Vec<SliceRef>,
}

impl DemoSource {
    pub fn joints(&self) -> usize {
        self.desc.len() / JOINT_DESCRIPTOR_LEN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub max_slices: usize,
    pub repeat: usize,
    pub batch_size: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig { max_slices: 1024, repeat: 3, batch_size: 64 }
    }
}

struct Resident {
    source: usize,
    slice: Arc<TrajectorySlice>,
    /// Remaining sample visits: `repeat` shuffled passes, consumed from the front.
    queue: VecDeque<usize>,
}

/// Single-embodiment minibatch drawn from the buffer.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub source: usize,
    pub batch: Batch,
}

/// In-memory slice buffer. Slices are admitted round-robin over
/// embodiments; each resident slice yields every sample exactly `repeat`
/// times (one shuffled pass per repeat) before it is evicted.
pub struct SliceBuffer<'a> {
    sources: &'a [DemoSource],
    cfg: BufferConfig,
    pending: VecDeque<(usize, usize)>,
    resident: Vec<Resident>,
    rng: ChaCha8Rng,
}

impl<'a> SliceBuffer<'a> {
    pub fn new(sources: &'a [DemoSource], cfg: BufferConfig, seed: u64) -> Result<Self> {
        if cfg.max_slices == 0 || cfg.repeat == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("buffer sizes must be positive".into()));
        }
        let mut pending = VecDeque::new();
        let rounds = sources.iter().map(|s| s.slices.len()).max().unwrap_or(0);
        for r in 0..rounds {
            for (i, s) in sources.iter().enumerate() {
                if r < s.slices.len() {
                    pending.push_back((i, r));
                }
            }
        }
        let mut b = SliceBuffer { sources, cfg, pending, resident: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        b.fill()?;
        Ok(b)
    }

    fn fill(&mut self) -> Result<()> {
        while self.resident.len() < self.cfg.max_slices {
            let Some((src, k)) = self.pending.pop_front() else { break };
            let slice = self.sources[src].slices[k].load()?;
            if slice.joints != self.sources[src].joints() {
                return Err(Error::ShapeMismatch(format!(
                    "slice of {} has {} joints, descriptor has {}",
                    slice.embodiment,
                    slice.joints,
                    self.sources[src].joints()
                )));
            }
            let mut queue = VecDeque::with_capacity(slice.len() * self.cfg.repeat);
            for _ in 0..self.cfg.repeat {
                let mut pass: Vec<usize> = (0..slice.len()).collect();
                pass.shuffle(&mut self.rng);
                queue.extend(pass);
            }
            if !queue.is_empty() {
                self.resident.push(Resident { source: src, slice, queue });
            }
        }
        Ok(())
    }

    pub fn resident(&self) -> usize {
        self.resident.len()
    }

    /// Next minibatch from a uniformly chosen resident slice;
    /// `BufferExhausted` once every slice has been drained.
    pub fn sample(&mut self) -> Result<Minibatch> {
        if self.resident.is_empty() {
            return Err(Error::BufferExhausted);
        }
        let r = self.rng.random_range(0..self.resident.len());
        let res = &mut self.resident[r];
        let n = self.cfg.batch_size.min(res.queue.len());
        let idx: Vec<usize> = res.queue.drain(..n).collect();
        let src = &self.sources[res.source];
        let mut batch = Batch {
            joints: src.joints(),
            desc: src.desc.clone(),
            general: Vec::with_capacity(n * GENERAL_OBS_LEN),
            joint_obs: Vec::with_capacity(n * src.joints() * JOINT_OBS_LEN),
            targets: Vec::with_capacity(n * src.joints()),
        };
        res.slice.fill_batch(&mut batch, &idx);
        let source = res.source;
        if res.queue.is_empty() {
            self.resident.swap_remove(r);
            self.fill()?;
        }
        Ok(Minibatch { source, batch })
    }
}

/// Total minibatches one full drain yields.
pub fn batches_per_epoch(sources: &[DemoSource], cfg: &BufferConfig) -> Result<usize> {
    let mut total = 0;
    for s in sources {
        for r in &s.slices {
            let n = match r {
                SliceRef::Memory(m) => m.len(),
                SliceRef::File(_) => r.load()?.len(),
            };
            total += (n * cfg.repeat).div_ceil(cfg.batch_size);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub envs: usize,
    /// Steps per environment; the last `validation_steps` go to validation.
    pub steps: usize,
    pub validation_steps: usize,
    pub trajectories_per_slice: usize,
    pub trajectory_steps: usize,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            envs: 64,
            steps: COLLECTION_STEPS,
            validation_steps: 100,
            trajectories_per_slice: SLICE_TRAJECTORIES,
            trajectory_steps: TRAJECTORY_STEPS,
            seed: 0,
        }
    }
}

/// Per-embodiment demonstrations in memory.
#[derive(Debug, Clone)]
pub struct Demonstrations {
    pub embodiment: String,
    pub desc: Vec<f64>,
    pub train: Vec<TrajectorySlice>,
    pub validation: Vec<TrajectorySlice>,
}

impl Demonstrations {
    pub fn train_samples(&self) -> usize {
        self.train.iter().map(|s| s.len()).sum()
    }

    pub fn validation_samples(&self) -> usize {
        self.validation.iter().map(|s| s.len()).sum()
    }

    pub fn train_source(&self) -> DemoSource {
        DemoSource {
            embodiment: self.embodiment.clone(),
            desc: self.desc.clone(),
            slices: self.train.iter().map(|s| SliceRef::Memory(Arc::new(s.clone()))).collect(),
        }
    }

    pub fn validation_source(&self) -> DemoSource {
        DemoSource {
            embodiment: self.embodiment.clone(),
            desc: self.desc.clone(),
            slices: self.validation.iter().map(|s| SliceRef::Memory(Arc::new(s.clone()))).collect(),
        }
    }
}

fn pack(id: &str, joints: usize, cfg: &CollectConfig, streams: &[Vec<(ObservationBundle, Vec<f64>)>]) -> Result<Vec<TrajectorySlice>> {
    let mut out = Vec::new();
    let mut cur = TrajectorySlice::new(id, joints, cfg.trajectories_per_slice, cfg.trajectory_steps);
    for (obs, a) in streams.iter().flatten() {
        if cur.is_full() {
            out.push(std::mem::replace(
                &mut cur,
                TrajectorySlice::new(id, joints, cfg.trajectories_per_slice, cfg.trajectory_steps),
            ));
        }
        cur.push(obs, a)?;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Rolls the expert's deterministic action out in `cfg.envs` environments
/// at full randomization and records student observations with expert
/// actions. Environments that terminate are reset and keep recording.
pub fn collect_embodiment(
    id: &str,
    e: &Embodiment,
    expert: &ExpertPolicy,
    env_cfg: &EnvConfig,
    cfg: &CollectConfig,
) -> Result<Demonstrations> {
    if cfg.envs == 0 || cfg.validation_steps > cfg.steps || cfg.trajectories_per_slice == 0 || cfg.trajectory_steps == 0 {
        return Err(Error::Config("invalid collection sizes".into()));
    }
    let model = Arc::new(Model::new(e, env_cfg.control)?);
    if expert.joints() != model.joints || expert.net.shape.obs_dim != model.expert_obs_len() {
        return Err(Error::ShapeMismatch(format!("expert does not fit embodiment {id}")));
    }
    let env_cfg = EnvConfig { curriculum: false, ..env_cfg.clone() };
    let mut envs: Vec<SurrogateEnv> = (0..cfg.envs)
        .map(|i| {
            let mut env = SurrogateEnv::with_model(model.clone(), env_cfg.clone(), cfg.seed.wrapping_mul(7919).wrapping_add(i as u64))?;
            env.curriculum = CurriculumState::with_coefficient(1.0);
            env.reset();
            Ok(env)
        })
        .collect::<Result<_>>()?;
    let j = model.joints;
    let mut streams: Vec<Vec<(ObservationBundle, Vec<f64>)>> = vec![Vec::with_capacity(cfg.steps); cfg.envs];
    for _ in 0..cfg.steps {
        let obs: Vec<f64> = envs.iter().flat_map(|e| e.expert_observation()).collect();
        let actions = expert.act_mean(&obs, cfg.envs);
        for (i, env) in envs.iter_mut().enumerate() {
            let a = &actions[i * j..(i + 1) * j];
            streams[i].push((env.observation().clone(), a.to_vec()));
            if env.step(a)?.done {
                env.reset();
            }
        }
    }
    let split = cfg.steps - cfg.validation_steps;
    let train: Vec<_> = streams.iter().map(|s| s[..split].to_vec()).collect();
    let val: Vec<_> = streams.iter().map(|s| s[split..].to_vec()).collect();
    Ok(Demonstrations {
        embodiment: id.to_string(),
        desc: model.descriptor.joint_matrix(),
        train: pack(id, j, cfg, &train)?,
        validation: pack(id, j, cfg, &val)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub joints: usize,
    /// Raw (J, 18) descriptor rows.
    pub descriptor: Vec<Vec<f64>>,
    pub train_slices: Vec<String>,
    pub validation_slices: Vec<String>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// Dataset manifest written next to the slice files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemoManifest {
    pub embodiment: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "demonstrations.toml";

impl DemoManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.embodiment.iter().find(|e| e.id == id)
    }

    /// Training and validation sources for `ids` (all when `None`), with
    /// slice paths resolved against `dir`.
    pub fn sources(&self, dir: &Path, ids: Option<&[String]>) -> Result<(Vec<DemoSource>, Vec<DemoSource>)> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        let chosen: Vec<&ManifestEntry> = match ids {
            None => self.embodiment.iter().collect(),
            Some(ids) => ids
                .iter()
                .map(|id| self.entry(id).ok_or_else(|| Error::MissingExpert(id.clone())))
                .collect::<Result<_>>()?,
        };
        for e in chosen {
            let desc: Vec<f64> = e.descriptor.iter().flatten().copied().collect();
            let refs = |files: &[String]| files.iter().map(|f| SliceRef::File(dir.join(f))).collect();
            train.push(DemoSource { embodiment: e.id.clone(), desc: desc.clone(), slices: refs(&e.train_slices) });
            val.push(DemoSource { embodiment: e.id.clone(), desc, slices: refs(&e.validation_slices) });
        }
        Ok((train, val))
    }
}

/// Writes one embodiment's slices into `dir` and returns its manifest entry.
pub fn write_demonstrations(dir: &Path, d: &Demonstrations) -> Result<ManifestEntry> {
    std::fs::create_dir_all(dir)?;
    let names = |slices: &[TrajectorySlice], tag: &str| -> Result<Vec<String>> {
        slices
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name = format!("{}.{tag}.{i:04}.slice", d.embodiment);
                s.save(&dir.join(&name))?;
                Ok(name)
            })
            .collect()
    };
    let train_slices = names(&d.train, "train")?;
    let validation_slices = names(&d.validation, "val")?;
    Ok(ManifestEntry {
        id: d.embodiment.clone(),
        joints: d.desc.len() / JOINT_DESCRIPTOR_LEN,
        descriptor: d.desc.chunks(JOINT_DESCRIPTOR_LEN).map(|c| c.to_vec()).collect(),
        train_slices,
        validation_slices,
        train_samples: d.train_samples(),
        validation_samples: d.validation_samples(),
    })
}

/// Collects every listed embodiment into `dir` and writes the manifest.
/// `experts` must hold one policy per embodiment id.
pub fn collect_demonstrations(
    embodiments: &[(String, Embodiment)],
    experts: &std::collections::BTreeMap<String, ExpertPolicy>,
    env_cfg: &EnvConfig,
    cfg: &CollectConfig,
    dir: &Path,
) -> Result<DemoManifest> {
    let mut manifest = DemoManifest::default();
    for (i, (id, e)) in embodiments.iter().enumerate() {
        let expert = experts.get(id).ok_or_else(|| Error::MissingExpert(id.clone()))?;
        let c = CollectConfig { seed: cfg.seed.wrapping_add(1_000_003 * i as u64), ..cfg.clone() };
        let d = collect_embodiment(id, e, expert, env_cfg, &c)?;
        manifest.embodiment.push(write_demonstrations(dir, &d)?);
    }
    manifest.save(dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub batch_size: usize,
    pub accumulation: usize,
    pub grad_clip: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub max_slices: usize,
    pub repeat: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            batch_size: 64,
            accumulation: 8,
            grad_clip: 5.0,
            learning_rate: 1e-3,
            weight_decay: 3e-4,
            epochs: 80,
            max_slices: 1024,
            repeat: 3,
        }
    }
}

impl DistillConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation == 0 || self.epochs == 0 || self.max_slices == 0 || self.repeat == 0 {
            return Err(Error::Config("distillation sizes must be positive".into()));
        }
        if !(self.grad_clip > 0.0) || self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("invalid clip, learning rate or weight decay".into()));
        }
        Ok(())
    }

    fn buffer(&self) -> BufferConfig {
        BufferConfig { max_slices: self.max_slices, repeat: self.repeat, batch_size: self.batch_size }
    }
}

/// `start · ½(1 + cos(π t / total))`.
pub fn cosine(start: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return start;
    }
    start * 0.5 * (1.0 + (std::f64::consts::PI * t.min(total) as f64 / total as f64).cos())
}

/// Mean loss and mean gradient over minibatches.
pub fn accumulate_gradients(net: &Urma, p: &[f64], batches: &[&Batch]) -> Result<(f64, Vec<f64>)> {
    let (losses, g) = batch_losses_and_mean_gradient(net, p, batches)?;
    Ok((losses.iter().sum::<f64>() / losses.len() as f64, g))
}

fn batch_losses_and_mean_gradient(net: &Urma, p: &[f64], batches: &[&Batch]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = vec![0.0; p.len()];
    let mut losses = Vec::with_capacity(batches.len());
    for b in batches {
        let (l, gi) = net.loss_and_grad(p, b)?;
        losses.push(l);
        for (a, v) in g.iter_mut().zip(&gi) {
            *a += v;
        }
    }
    let n = batches.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok((losses, g))
}

/// One optimizer step from accumulated minibatches; returns each
/// minibatch's loss before the step.
pub fn accumulated_step(
    net: &Urma,
    p: &mut [f64],
    opt: &mut AdamW,
    batches: &[&Batch],
    lr: f64,
    wd: f64,
    clip: f64,
) -> Result<Vec<f64>> {
    let (losses, mut g) = batch_losses_and_mean_gradient(net, p, batches)?;
    clip_grad_norm(&mut g, clip);
    opt.step(p, &g, lr, wd);
    net.clamp_temperatures(p);
    Ok(losses)
}

/// Sample-weighted mean squared error over every validation sample.
pub fn validation_loss(net: &Urma, p: &[f64], sources: &[DemoSource], chunk: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in sources {
        for r in &s.slices {
            let slice = r.load()?;
            let idx: Vec<usize> = (0..slice.len()).collect();
            for part in idx.chunks(chunk.max(1)) {
                let mut b = Batch { joints: s.joints(), desc: s.desc.clone(), general: vec![], joint_obs: vec![], targets: vec![] };
                slice.fill_batch(&mut b, part);
                sum += net.bc_loss(p, &b)? * b.targets.len() as f64;
                count += b.targets.len();
            }
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("no validation samples".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses over the epoch.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct BcResult {
    /// Parameters after the epoch with the lowest validation loss.
    pub params: PolicyParams,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
    /// Set when a non-finite loss stopped training early.
    pub aborted: bool,
}

impl BcResult {
    pub fn best(&self) -> &EpochStats {
        &self.curve[self.best_epoch - 1]
    }
}

pub fn write_loss_csv(w: &mut impl Write, curve: &[EpochStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(["epoch", "train_loss", "validation_loss", "lr", "weight_decay"]).map_err(err)?;
    for s in curve {
        out.write_record([
            s.epoch.to_string(),
            fmt_f64(s.train_loss),
            fmt_f64(s.validation_loss),
            fmt_f64(s.learning_rate),
            fmt_f64(s.weight_decay),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Behavior cloning with accumulated AdamW steps, cosine learning-rate and
/// weight-decay schedules and best-validation selection. Validation falls
/// back to the training sources when `validation` holds no samples.
pub fn train_bc(
    train: &[DemoSource],
    validation: &[DemoSource],
    cfg: &DistillConfig,
    arch: &UrmaConfig,
    seed: u64,
) -> Result<BcResult> {
    cfg.check()?;
    let net = Urma::new(arch.clone())?;
    let mut p = net.init(seed);
    let mut opt = AdamW::new(p.len());
    let buf_cfg = cfg.buffer();
    let per_epoch = batches_per_epoch(train, &buf_cfg)?.div_ceil(cfg.accumulation);
    if per_epoch == 0 {
        return Err(Error::DegenerateInput("no training samples".into()));
    }
    let total = per_epoch * cfg.epochs;
    let has_val = validation.iter().any(|s| !s.slices.is_empty());
    let val_sources = if has_val { validation } else { train };
    let mut step = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, p.clone());
    let mut aborted = false;
    'epochs: for epoch in 1..=cfg.epochs {
        let mut buffer = SliceBuffer::new(train, buf_cfg, seed.wrapping_mul(31).wrapping_add(epoch as u64))?;
        let (mut loss_sum, mut samples) = (0.0, 0usize);
        let (mut lr, mut wd) = (cosine(cfg.learning_rate, step, total), cosine(cfg.weight_decay, step, total));
        loop {
            let mut group = Vec::with_capacity(cfg.accumulation);
            while group.len() < cfg.accumulation {
                match buffer.sample() {
                    Ok(mb) => group.push(mb.batch),
                    Err(Error::BufferExhausted) => break,
                    Err(e) => return Err(e),
                }
            }
            if group.is_empty() {
                break;
            }
            lr = cosine(cfg.learning_rate, step, total);
            wd = cosine(cfg.weight_decay, step, total);
            let refs: Vec<&Batch> = group.iter().collect();
            match accumulated_step(&net, &mut p, &mut opt, &refs, lr, wd, cfg.grad_clip) {
                Ok(losses) => {
                    for (l, b) in losses.iter().zip(&group) {
                        loss_sum += l * b.len() as f64;
                        samples += b.len();
                    }
                }
                Err(Error::NonFiniteLoss) => {
                    log::warn!("non-finite loss at epoch {epoch}; keeping the last good checkpoint");
                    aborted = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        let val = validation_loss(&net, &p, val_sources, 1024)?;
        if !val.is_finite() {
            aborted = true;
            break;
        }
        if val < best.0 {
            best = (val, epoch, p.clone());
        }
        log::info!("epoch {epoch}: train {:.6} validation {val:.6}", loss_sum / samples.max(1) as f64);
        curve.push(EpochStats {
            epoch,
            train_loss: loss_sum / samples.max(1) as f64,
            validation_loss: val,
            learning_rate: lr,
            weight_decay: wd,
        });
    }
    if curve.is_empty() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(BcResult { params: PolicyParams { config: arch.clone(), values: best.2 }, best_epoch: best.1, curve, aborted })
}
