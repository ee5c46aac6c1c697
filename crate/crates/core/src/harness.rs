//! Embodiment-scaling study: nested training subsets, policy evaluation on
//! held-out embodiments, the data-scaling baseline, resumable grids and
//! the out-of-distribution knee-limit evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{train_bc, write_loss_csv, DemoManifest, DemoSource, DistillConfig};
use crate::embodiment::{Embodiment, MorphologyClass};
use crate::env::{CommandMode, EnvConfig, Model, SurrogateEnv, CONTROL_DT, HORIZON};
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::procgen::apply_knee_limit_scale;
use crate::randomization::CurriculumState;
use crate::urma::{Batch, PolicyParams, Urma, UrmaConfig};

pub const REFERENCE_PROPORTIONS: [f64; 6] = [0.05, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const OOD_SCALES: [f64; 5] = [1.0, 0.6, 0.2, 0.1, 0.001];

/// Per-class sample counts for proportion `p` of a pool with `sizes`
/// members per class: `ceil(p · total)` distributed by largest remainder,
/// at least one per non-empty class. Class order breaks remainder ties.
pub fn stratified_counts(sizes: &[usize], p: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let want = ((p * total as f64) - 1e-9).ceil().max(0.0) as usize;
    let exact: Vec<f64> = sizes.iter().map(|&n| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().zip(sizes).map(|(x, &n)| ((x + 1e-9).floor() as usize).min(n)).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = want.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[c] < sizes[c] {
            counts[c] += 1;
            left -= 1;
        }
    }
    for (c, &n) in counts.iter_mut().zip(sizes) {
        if n > 0 && *c == 0 && p > 0.0 {
            *c = 1;
        }
    }
    counts
}

/// Nested class-stratified subsets of `pool` (indices into it), one per
/// proportion in the given order. Each class is shuffled once per seed and
/// every subset takes a prefix of it, so smaller proportions are subsets of
/// larger ones.
pub fn make_subsets(pool: &[MorphologyClass], proportions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some(p) = proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Config(format!("proportion {p} is outside (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = MorphologyClass::ALL
        .iter()
        .map(|c| (0..pool.len()).filter(|&i| pool[i] == *c).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = by_class.iter().map(|m| m.len()).collect();
    let mut sorted: Vec<f64> = proportions.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // counts never shrink with the proportion, which keeps prefixes nested
    let mut running = vec![0usize; sizes.len()];
    let mut counts_for: Vec<(f64, Vec<usize>)> = Vec::new();
    for &p in &sorted {
        let c = stratified_counts(&sizes, p);
        for (r, v) in running.iter_mut().zip(&c) {
            *r = (*r).max(*v);
        }
        counts_for.push((p, running.clone()));
    }
    Ok(proportions
        .iter()
        .map(|p| {
            let counts = &counts_for.iter().find(|(q, _)| q == p).unwrap().1;
            let mut s: Vec<usize> = by_class.iter().zip(counts).flat_map(|(m, &n)| m[..n].iter().copied()).collect();
            s.sort_unstable();
            s
        })
        .collect())
}

/// Evaluation command schedule: forward, backward, lateral, turn, each for
/// a quarter of the horizon.
pub fn evaluation_commands(horizon: usize) -> CommandMode {
    let q = (horizon / 4).max(1);
    CommandMode::Schedule(vec![
        (0, [0.5, 0.0, 0.0]),
        (q, [-0.5, 0.0, 0.0]),
        (2 * q, [0.0, 0.3, 0.0]),
        (3 * q, [0.0, 0.0, 0.5]),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
    /// Fixed curriculum coefficient of the evaluation environments.
    pub k: f64,
    pub commands: CommandMode,
    pub env: EnvConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 4,
            horizon: HORIZON,
            k: 1.0,
            commands: evaluation_commands(HORIZON),
            env: EnvConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub class: MorphologyClass,
    /// Mean over episodes of the dt-weighted cumulative reward.
    pub mean_reward: f64,
    pub falls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub mean: f64,
    pub std: f64,
    pub provenance: String,
}

impl EvalResult {
    pub fn from_rows(rows: Vec<EvalRow>, provenance: String) -> Self {
        let (mean, std) = mean_std(rows.iter().map(|r| r.mean_reward));
        EvalResult { rows, mean, std, provenance }
    }

    pub fn class_mean(&self, class: MorphologyClass) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.class == class).map(|r| r.mean_reward).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        out.write_record(["id", "class", "mean_reward", "falls"]).map_err(err)?;
        for r in &self.rows {
            out.write_record([r.id.clone(), r.class.as_str().to_string(), fmt_f64(r.mean_reward), r.falls.to_string()])
                .map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Any per-embodiment controller the harness can evaluate.
pub trait Controller {
    /// Actions for `obs.len()` environments of one embodiment, row-major.
    fn act(&self, model: &Model, obs: &[crate::urma::ObservationBundle]) -> Result<Vec<f64>>;
}

pub struct UrmaController {
    net: Urma,
    params: Vec<f64>,
}

impl UrmaController {
    pub fn new(p: &PolicyParams) -> Result<Self> {
        Ok(UrmaController { net: p.network()?, params: p.values.clone() })
    }
}

impl Controller for UrmaController {
    fn act(&self, model: &Model, obs: &[crate::urma::ObservationBundle]) -> Result<Vec<f64>> {
        let mut batch = Batch::new(&model.descriptor);
        for o in obs {
            batch.push(o, None)?;
        }
        Ok(self.net.forward(&self.params, &batch)?.actions().to_vec())
    }
}

/// Always outputs zero actions.
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&self, model: &Model, obs: &[crate::urma::ObservationBundle]) -> Result<Vec<f64>> {
        Ok(vec![0.0; model.joints * obs.len()])
    }
}

/// Runs `cfg.episodes` seeded episodes per embodiment in lockstep and
/// averages their dt-weighted cumulative rewards.
pub fn evaluate_policy(policy: &dyn Controller, embodiments: &[Embodiment], cfg: &EvalConfig) -> Result<EvalResult> {
    if cfg.episodes == 0 {
        return Err(Error::Config("at least one evaluation episode".into()));
    }
    let env_cfg = EnvConfig { horizon: cfg.horizon, commands: cfg.commands.clone(), curriculum: false, ..cfg.env.clone() };
    let mut rows = Vec::with_capacity(embodiments.len());
    for (ei, e) in embodiments.iter().enumerate() {
        let model = Arc::new(Model::new(e, env_cfg.control)?);
        let mut envs: Vec<SurrogateEnv> = (0..cfg.episodes)
            .map(|k| {
                let seed = cfg.seed.wrapping_mul(0x100_0000_01b3).wrapping_add((ei * 1000 + k) as u64);
                let mut env = SurrogateEnv::with_model(model.clone(), env_cfg.clone(), seed)?;
                env.curriculum = CurriculumState::with_coefficient(cfg.k);
                env.reset();
                Ok(env)
            })
            .collect::<Result<_>>()?;
        let j = model.joints;
        let mut live = vec![true; envs.len()];
        let mut total = vec![0.0; envs.len()];
        let mut falls = 0;
        for _ in 0..cfg.horizon {
            let idx: Vec<usize> = (0..envs.len()).filter(|&i| live[i]).collect();
            if idx.is_empty() {
                break;
            }
            let obs: Vec<_> = idx.iter().map(|&i| envs[i].observation().clone()).collect();
            let actions = policy.act(&model, &obs)?;
            for (k, &i) in idx.iter().enumerate() {
                let r = envs[i].step(&actions[k * j..(k + 1) * j])?;
                total[i] += r.reward.total * CONTROL_DT;
                if r.done {
                    live[i] = false;
                    falls += r.fell as usize;
                }
            }
        }
        rows.push(EvalRow {
            id: e.id.clone(),
            class: e.class,
            mean_reward: total.iter().sum::<f64>() / total.len() as f64,
            falls,
        });
    }
    let provenance = format!("episodes={} horizon={} k={} seed={}", cfg.episodes, cfg.horizon, cfg.k, cfg.seed);
    Ok(EvalResult::from_rows(rows, provenance))
}

/// One evaluation per knee-limit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct OodTable {
    pub scales: Vec<f64>,
    pub results: Vec<EvalResult>,
}

impl OodTable {
    /// Class × scale mean rewards.
    pub fn class_table(&self) -> Vec<(MorphologyClass, Vec<Option<f64>>)> {
        MorphologyClass::ALL
            .iter()
            .map(|&c| (c, self.results.iter().map(|r| r.class_mean(c)).collect()))
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut head = vec!["class".to_string()];
        head.extend(self.scales.iter().map(|s| fmt_f64(*s)));
        out.write_record(&head).map_err(err)?;
        for (c, vals) in self.class_table() {
            let mut row = vec![c.as_str().to_string()];
            row.extend(vals.iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            out.write_record(&row).map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Re-evaluates the test set with every knee joint's range scaled about
/// its nominal angle.
pub fn ood_eval(policy: &dyn Controller, test: &[Embodiment], scales: &[f64], cfg: &EvalConfig) -> Result<OodTable> {
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config(format!("knee scale {s} must be positive")));
    }
    let mut results = Vec::with_capacity(scales.len());
    for &s in scales {
        let scaled: Vec<Embodiment> = test.iter().map(|e| apply_knee_limit_scale(e, s)).collect();
        results.push(evaluate_policy(policy, &scaled, cfg)?);
    }
    Ok(OodTable { scales: scales.to_vec(), results })
}

/// Which classes a cell trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassSelection {
    Combined,
    Humanoid,
    Quadruped,
    Hexapod,
}

impl ClassSelection {
    pub fn admits(self, c: MorphologyClass) -> bool {
        match self {
            ClassSelection::Combined => true,
            ClassSelection::Humanoid => c == MorphologyClass::Humanoid,
            ClassSelection::Quadruped => c == MorphologyClass::Quadruped,
            ClassSelection::Hexapod => c == MorphologyClass::Hexapod,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassSelection::Combined => "combined",
            ClassSelection::Humanoid => "humanoid",
            ClassSelection::Quadruped => "quadruped",
            ClassSelection::Hexapod => "hexapod",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "combined" | "all" => Ok(ClassSelection::Combined),
            "humanoid" => Ok(ClassSelection::Humanoid),
            "quadruped" => Ok(ClassSelection::Quadruped),
            "hexapod" => Ok(ClassSelection::Hexapod),
            other => Err(Error::Config(format!("unknown class selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataScaling {
    /// Embodiment proportion of the baseline cells.
    pub proportion: f64,
    pub multipliers: Vec<usize>,
}

/// Study grid. Every cell trains on `slices_per_embodiment` training slices
/// of each selected embodiment; data-scaling cells use that many times
/// their multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub proportions: Vec<f64>,
    pub classes: Vec<ClassSelection>,
    pub seeds: Vec<u64>,
    pub subset_seed: u64,
    pub slices_per_embodiment: usize,
    #[serde(default)]
    pub data_scaling: Option<DataScaling>,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub eval_seed: u64,
    /// Cells trained concurrently.
    #[serde(default = "one")]
    pub jobs: usize,
    pub distill: DistillConfig,
    pub arch: UrmaConfig,
}

fn one() -> usize {
    1
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            proportions: REFERENCE_PROPORTIONS.to_vec(),
            classes: vec![ClassSelection::Combined],
            seeds: vec![0],
            subset_seed: 0,
            slices_per_embodiment: 1,
            data_scaling: Some(DataScaling { proportion: 0.05, multipliers: vec![1, 2] }),
            eval_episodes: 4,
            eval_horizon: HORIZON,
            eval_seed: 0,
            jobs: 1,
            distill: DistillConfig::default(),
            arch: UrmaConfig::desk(),
        }
    }
}

impl ScalingConfig {
    pub fn check(&self) -> Result<()> {
        if self.proportions.is_empty() || self.proportions.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Config("proportions must lie in (0, 1]".into()));
        }
        if self.eval_episodes == 0 || self.eval_horizon == 0 || self.slices_per_embodiment == 0 || self.jobs == 0 {
            return Err(Error::Config("eval episodes, horizon, slices and jobs must be positive".into()));
        }
        if self.classes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("at least one class selection and one seed".into()));
        }
        if let Some(d) = &self.data_scaling {
            if !(d.proportion > 0.0 && d.proportion <= 1.0) || d.multipliers.iter().any(|&m| m == 0) {
                return Err(Error::Config("invalid data-scaling settings".into()));
            }
        }
        self.distill.check()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ScalingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub proportion: f64,
    pub classes: ClassSelection,
    /// Data multiplier; 0 for ordinary cells.
    pub multiplier: usize,
    pub seed: u64,
}

pub fn study_cells(cfg: &ScalingConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &classes in &cfg.classes {
        for &p in &cfg.proportions {
            for &seed in &cfg.seeds {
                cells.push(Cell { id: format!("{}-p{}-s{seed}", classes.name(), fmt_f64(p)), proportion: p, classes, multiplier: 0, seed });
            }
        }
    }
    if let Some(d) = &cfg.data_scaling {
        for &m in &d.multipliers {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    id: format!("data-p{}-x{m}-s{seed}", fmt_f64(d.proportion)),
                    proportion: d.proportion,
                    classes: ClassSelection::Combined,
                    multiplier: m,
                    seed,
                });
            }
        }
    }
    cells
}

/// Everything the study needs besides its config.
pub struct StudyInputs<'a> {
    /// Training pool: ids and classes, in a fixed order.
    pub pool: Vec<(String, MorphologyClass)>,
    pub test: &'a [Embodiment],
    pub demos: &'a DemoManifest,
    pub demo_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub embodiments: Vec<String>,
    pub samples: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Test-set mean per class (humanoid, quadruped, hexapod); NaN-free
    /// entries only for classes present in the test set.
    pub class_means: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub fingerprint: String,
}

const DONE_FILE: &str = "result.toml";
pub const RESULTS_FILE: &str = "results.csv";

fn fingerprint(cfg: &ScalingConfig, cell: &Cell, ids: &[String]) -> Result<String> {
    let text = format!("{}|{:?}|{:?}", cfg.to_toml()?, cell, ids);
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

fn cell_sources(inputs: &StudyInputs, ids: &[String], slices: usize) -> Result<(Vec<DemoSource>, Vec<DemoSource>)> {
    let (mut train, val) = inputs.demos.sources(&inputs.demo_dir, Some(ids))?;
    for s in &mut train {
        if s.slices.len() < slices {
            return Err(Error::Config(format!("{} has {} training slices, cell needs {slices}", s.embodiment, s.slices.len())));
        }
        s.slices.truncate(slices);
    }
    Ok((train, val))
}

fn run_cell(cfg: &ScalingConfig, inputs: &StudyInputs, cell: &Cell, subset: &[usize], dir: &Path) -> Result<CellResult> {
    let ids: Vec<String> = subset.iter().map(|&i| inputs.pool[i].0.clone()).collect();
    let fp = fingerprint(cfg, cell, &ids)?;
    let done = dir.join(DONE_FILE);
    if done.exists() {
        let r: CellResult = toml::from_str(&std::fs::read_to_string(&done)?).map_err(|e| Error::Format(e.to_string()))?;
        if r.fingerprint == fp {
            log::info!("cell {} already complete", cell.id);
            return Ok(r);
        }
    }
    std::fs::create_dir_all(dir)?;
    let slices = cfg.slices_per_embodiment * cell.multiplier.max(1);
    let (train, val) = cell_sources(inputs, &ids, slices)?;
    let mut samples = 0;
    for s in &train {
        for r in &s.slices {
            samples += r.load()?.len();
        }
    }
    let bc = train_bc(&train, &val, &cfg.distill, &cfg.arch, cell.seed)?;
    bc.params.save(&dir.join("policy.ckpt"))?;
    write_loss_csv(&mut std::fs::File::create(dir.join("loss.csv"))?, &bc.curve)?;
    let eval_cfg = EvalConfig {
        episodes: cfg.eval_episodes,
        horizon: cfg.eval_horizon,
        commands: evaluation_commands(cfg.eval_horizon),
        seed: cfg.eval_seed,
        ..Default::default()
    };
    let ev = evaluate_policy(&UrmaController::new(&bc.params)?, inputs.test, &eval_cfg)?;
    ev.write_csv(&mut std::fs::File::create(dir.join("eval.csv"))?)?;
    let class_means = MorphologyClass::ALL
        .iter()
        .filter_map(|&c| ev.class_mean(c).map(|m| (c.as_str().to_string(), m)))
        .collect();
    let r = CellResult {
        cell: cell.clone(),
        embodiments: ids,
        samples,
        mean_reward: ev.mean,
        std_reward: ev.std,
        class_means,
        best_epoch: bc.best_epoch,
        best_validation_loss: bc.best().validation_loss,
        fingerprint: fp,
    };
    std::fs::write(&done, toml::to_string(&r).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(r)
}

pub fn write_results_csv(w: &mut impl Write, results: &[CellResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record([
        "cell",
        "proportion",
        "classes",
        "multiplier",
        "seed",
        "embodiments",
        "samples",
        "mean_reward",
        "std_reward",
        "humanoid",
        "quadruped",
        "hexapod",
    ])
    .map_err(err)?;
    for r in results {
        let cm = |c: &str| r.class_means.get(c).map(|v| fmt_f64(*v)).unwrap_or_default();
        out.write_record([
            r.cell.id.clone(),
            fmt_f64(r.cell.proportion),
            r.cell.classes.name().to_string(),
            r.cell.multiplier.to_string(),
            r.cell.seed.to_string(),
            r.embodiments.len().to_string(),
            r.samples.to_string(),
            fmt_f64(r.mean_reward),
            fmt_f64(r.std_reward),
            cm("humanoid"),
            cm("quadruped"),
            cm("hexapod"),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of a study run: completed cells in grid order and per-cell
/// failures (the grid continues past them).
#[derive(Debug, Default)]
pub struct StudyReport {
    pub results: Vec<CellResult>,
    pub failures: Vec<(String, String)>,
    /// Cells left for a later run because of `max_cells`.
    pub pending: usize,
}

/// Runs (or resumes) the grid in `workdir`. Completed cells are detected by
/// their on-disk result and fingerprint and are not retrained. At most
/// `max_cells` new cells are trained when given.
pub fn run_scaling_study(cfg: &ScalingConfig, inputs: &StudyInputs, workdir: &Path, max_cells: Option<usize>) -> Result<StudyReport> {
    cfg.check()?;
    std::fs::create_dir_all(workdir.join("cells"))?;
    std::fs::write(workdir.join("study.toml"), cfg.to_toml()?)?;
    std::fs::write(
        workdir.join("provenance.txt"),
        format!(
            "subsets: nested class-stratified prefixes, subset_seed={}\n\
             evaluation: k=1, forward/backward/lateral/turn command quarters, episodes={} horizon={} seed={}\n\
             latents: zero command, k=0, mean over {} steps\n",
            cfg.subset_seed, cfg.eval_episodes, cfg.eval_horizon, cfg.eval_seed, crate::latent::LATENT_STEPS
        ),
    )?;
    let classes: Vec<MorphologyClass> = inputs.pool.iter().map(|p| p.1).collect();
    let cells = study_cells(cfg);
    // subsets per class selection, over the admitted part of the pool
    let mut subsets: BTreeMap<(ClassSelection, u64), Vec<usize>> = BTreeMap::new();
    let mut props: Vec<f64> = cfg.proportions.clone();
    if let Some(d) = &cfg.data_scaling {
        props.push(d.proportion);
    }
    props.sort_by(|a, b| a.partial_cmp(b).unwrap());
    props.dedup();
    for &sel in cfg.classes.iter().chain(std::iter::once(&ClassSelection::Combined)) {
        let admitted: Vec<usize> = (0..classes.len()).filter(|&i| sel.admits(classes[i])).collect();
        let sub_pool: Vec<MorphologyClass> = admitted.iter().map(|&i| classes[i]).collect();
        let sets = make_subsets(&sub_pool, &props, cfg.subset_seed)?;
        for (p, s) in props.iter().zip(sets) {
            subsets.insert((sel, p.to_bits()), s.iter().map(|&k| admitted[k]).collect());
        }
    }
    let budget = AtomicUsize::new(max_cells.unwrap_or(usize::MAX));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<CellResult, String>>>> = Mutex::new(vec![None; cells.len()]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cells.len() {
            break;
        }
        let cell = &cells[i];
        let dir = workdir.join("cells").join(&cell.id);
        let subset = &subsets[&(cell.classes, cell.proportion.to_bits())];
        let complete = dir.join(DONE_FILE).exists();
        if !complete {
            let ok = budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1)).is_ok();
            if !ok {
                continue;
            }
        }
        let r = run_cell(cfg, inputs, cell, subset, &dir).map_err(|e| e.to_string());
        if let Err(e) = &r {
            log::warn!("cell {} failed: {e}", cell.id);
        }
        slots.lock().unwrap()[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..cfg.jobs {
            s.spawn(work);
        }
        work();
    });
    let mut report = StudyReport::default();
    for (cell, slot) in cells.iter().zip(slots.into_inner().unwrap()) {
        match slot {
            Some(Ok(r)) => report.results.push(r),
            Some(Err(e)) => report.failures.push((cell.id.clone(), e)),
            None => report.pending += 1,
        }
    }
    write_results_csv(&mut std::fs::File::create(workdir.join(RESULTS_FILE))?, &report.results)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::reference_embodiment;

    fn pool(h: usize, q: usize, x: usize) -> Vec<MorphologyClass> {
        let mut v = vec![MorphologyClass::Humanoid; h];
        v.extend(vec![MorphologyClass::Quadruped; q]);
        v.extend(vec![MorphologyClass::Hexapod; x]);
        v
    }

    #[test]
    fn reference_pool_counts() {
        let p = pool(278, 265, 265);
        let s = make_subsets(&p, &[0.05, 1.0], 3).unwrap();
        assert_eq!(s[0].len(), 41);
        assert_eq!(s[1].len(), 808);
        assert_eq!(stratified_counts(&[278, 265, 265], 0.05), vec![14, 14, 13]);
    }

    #[test]
    fn subsets_are_nested_and_stratified() {
        let p = pool(30, 20, 7);
        for seed in 0..20 {
            let s = make_subsets(&p, &REFERENCE_PROPORTIONS, seed).unwrap();
            for w in s.windows(2) {
                assert!(w[0].iter().all(|i| w[1].contains(i)));
            }
            for c in MorphologyClass::ALL {
                assert!(s[0].iter().any(|&i| p[i] == c));
            }
        }
        assert_eq!(make_subsets(&p, &[0.4], 5).unwrap(), make_subsets(&p, &[0.4], 5).unwrap());
        assert!(make_subsets(&p, &[0.0], 5).is_err());
    }

    #[test]
    fn zero_policy_standing_scores_tracking_maximum() {
        let e = reference_embodiment(MorphologyClass::Quadruped);
        let cfg = EvalConfig { episodes: 2, horizon: 100, k: 0.0, commands: CommandMode::fixed([0.0; 3]), ..Default::default() };
        let r = evaluate_policy(&ZeroController, &[e], &cfg).unwrap();
        assert!((r.mean - 3.0 * 100.0 * CONTROL_DT).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_row_mean() {
        let rows = vec![
            EvalRow { id: "a".into(), class: MorphologyClass::Hexapod, mean_reward: 1.0, falls: 0 },
            EvalRow { id: "b".into(), class: MorphologyClass::Hexapod, mean_reward: 4.0, falls: 1 },
        ];
        let r = EvalResult::from_rows(rows, String::new());
        assert_eq!(r.mean, 2.5);
        assert_eq!(r.std, 1.5);
    }

    #[test]
    fn grid_has_data_scaling_cells() {
        let cfg = ScalingConfig { proportions: vec![0.5, 1.0], seeds: vec![0, 1], ..Default::default() };
        let cells = study_cells(&cfg);
        assert_eq!(cells.len(), 4 + 4);
        assert_eq!(cells.iter().filter(|c| c.multiplier == 2).count(), 2);
        let back = ScalingConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
