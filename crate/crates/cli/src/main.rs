use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use xembody::distill::{collect_demonstrations, train_bc, write_loss_csv, CollectConfig, DemoManifest, DistillConfig};
use xembody::embodiment::{descriptor_of, ClassControlConstants, Embodiment, MorphologyClass};
use xembody::env::EnvConfig;
use xembody::harness::{
    evaluate_policy, make_subsets, ood_eval, run_scaling_study, ClassSelection, EvalConfig, ScalingConfig,
    StudyInputs, UrmaController, OOD_SCALES,
};
use xembody::latent::{action_latents, joint_latents, project_latents, write_latents_csv, write_projection_csv, LATENT_STEPS};
use xembody::ppo::{train_expert, write_curve_csv, ExpertPolicy, PpoConfig};
use xembody::procgen::{dataset_statistics, generate_dataset, split_dataset, DatasetManifest, REFERENCE_SEED};
use xembody::urdf::{from_urdf, to_urdf, UrdfDocument};
use xembody::urma::{PolicyParams, UrmaConfig};
use xembody::RandomizationRanges;

#[derive(Parser)]
#[command(name = "xembody", version, about = "Cross-embodiment legged locomotion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArg {
    /// Dataset manifest written by `generate`.
    #[arg(long, default_value = "dataset.toml")]
    dataset: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the embodiment dataset and write its manifest.
    Generate {
        #[arg(long, default_value_t = REFERENCE_SEED)]
        seed: u64,
        #[arg(long, default_value = "dataset.toml")]
        out: PathBuf,
    },
    /// Print per-class train/test sizes and test indices for a split seed.
    Split {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write per-class parameter histograms as CSV.
    Stats {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write URDF files for the given ids (all when none are given).
    ExportUrdf {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, default_value = "urdf")]
        out: PathBuf,
    },
    /// Parse a URDF file and print its joint descriptors as CSV.
    ImportUrdf {
        file: PathBuf,
        #[arg(long)]
        class: Option<MorphologyClass>,
    },
    /// Train a PPO expert for one embodiment.
    TrainExpert {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "experts")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 64)]
        envs: usize,
        #[arg(long, default_value_t = 128)]
        steps: usize,
        /// Hidden widths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "512,256,128")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Randomization table override (TOML).
        #[arg(long)]
        randomization: Option<PathBuf>,
    },
    /// Roll out experts and write demonstration slices with a manifest.
    Collect {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, default_value = "experts")]
        experts: PathBuf,
        /// Ids to collect; every expert found when none are given.
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, default_value = "demos")]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        envs: usize,
        #[arg(long, default_value_t = 600)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        validation_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distill demonstrations of a training subset into one policy.
    Distill {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, default_value = "demos")]
        demos: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        proportion: f64,
        /// combined, humanoid, quadruped or hexapod.
        #[arg(long, default_value = "combined")]
        classes: String,
        #[arg(long, default_value = "policy")]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Use the reference-size network instead of the desk one.
        #[arg(long)]
        reference_arch: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a distilled policy on the test set, optionally with reduced knee ranges.
    Eval {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        policy: PathBuf,
        /// Evaluate on the dataset's test split.
        #[arg(long)]
        test_set: bool,
        /// Ids to evaluate instead of the test set.
        #[arg(long = "id")]
        ids: Vec<String>,
        /// Knee-limit scale sweep.
        #[arg(long)]
        ood: bool,
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run or resume a scaling study described by a TOML config.
    Study {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "demos")]
        demos: PathBuf,
        #[arg(long, default_value = "study")]
        workdir: PathBuf,
        /// Stop after training this many new cells.
        #[arg(long)]
        max_cells: Option<usize>,
    },
    /// Export averaged action latents and their PCA coordinates.
    Latent {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Also export per-joint description latents of this attention head.
        #[arg(long)]
        joint_head: Option<usize>,
        #[arg(long, default_value = "latents")]
        out: PathBuf,
    },
}

fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("reading dataset manifest {}", path.display()))
}

fn test_ids(m: &DatasetManifest) -> Vec<String> {
    m.classes.iter().flat_map(|c| c.test.iter().map(move |&i| c.entries[i].id.clone())).collect()
}

fn train_pool(m: &DatasetManifest) -> Vec<(String, MorphologyClass)> {
    m.classes.iter().flat_map(|c| c.train.iter().map(move |&i| (c.entries[i].id.clone(), c.class))).collect()
}

fn build(m: &DatasetManifest, ids: &[String]) -> Result<Vec<Embodiment>> {
    ids.iter().map(|id| m.build(id).map_err(Into::into)).collect()
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { seed, out } => {
            let (embodiments, manifest) = generate_dataset(seed)?;
            manifest.save(&out)?;
            for c in &manifest.classes {
                println!("{}: {} embodiments ({} train, {} test)", c.class, c.entries.len(), c.train.len(), c.test.len());
            }
            println!("{} embodiments written to {}", embodiments.len(), out.display());
        }
        Command::Split { data, seed } => {
            let m = load_dataset(&data.dataset)?;
            for s in split_dataset(&m, seed.unwrap_or(m.seed))? {
                let idx: Vec<String> = s.test.iter().map(|i| i.to_string()).collect();
                println!("{}: train {} test {} [{}]", s.class, s.train.len(), s.test.len(), idx.join(","));
            }
        }
        Command::Stats { data, out } => {
            let m = load_dataset(&data.dataset)?;
            let report = dataset_statistics(&m.build_all()?)?;
            output(&out)?.write_all(report.to_csv()?.as_bytes())?;
        }
        Command::ExportUrdf { data, ids, out } => {
            let m = load_dataset(&data.dataset)?;
            fs::create_dir_all(&out)?;
            let all = if ids.is_empty() { m.build_all()? } else { build(&m, &ids)? };
            for e in &all {
                fs::write(out.join(format!("{}.urdf", e.id)), to_urdf(e)?.xml)?;
            }
            println!("wrote {} URDF files to {}", all.len(), out.display());
        }
        Command::ImportUrdf { file, class } => {
            let doc = UrdfDocument::new(fs::read_to_string(&file)?);
            let e = from_urdf(&doc, class)?;
            let d = descriptor_of(&e, &ClassControlConstants::for_class(e.class))?;
            let mut out = io::stdout().lock();
            writeln!(out, "# {} ({}, {} actuated joints)", e.id, e.class, d.joint_count())?;
            let rows = d.joint_matrix();
            for row in rows.chunks(xembody::embodiment::JOINT_DESCRIPTOR_LEN) {
                let cells: Vec<String> = row.iter().map(|v| xembody::numfmt::fmt_f64(*v)).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Command::TrainExpert { data, id, out, iterations, envs, steps, hidden, seed, randomization } => {
            let m = load_dataset(&data.dataset)?;
            let e = m.build(&id)?;
            let mut env = EnvConfig::default();
            if let Some(p) = randomization {
                env.ranges = RandomizationRanges::load(&p)?;
            }
            let cfg = PpoConfig {
                iterations,
                envs,
                steps_per_env: steps,
                minibatch: (envs * steps / 4).max(1),
                hidden,
                seed,
                ..Default::default()
            };
            let t = train_expert(&e, &env, &cfg)?;
            fs::create_dir_all(&out)?;
            t.policy.save(&out.join(format!("{id}.ckpt")))?;
            write_curve_csv(&mut File::create(out.join(format!("{id}.curve.csv")))?, &t.curve)?;
            let (first, best) = (t.initial(), t.best());
            println!(
                "{id}: best iteration {} reward {:.5} tracking {:.5} (iteration 1 tracking {:.5})",
                t.best_iteration, best.mean_reward, best.mean_tracking, first.mean_tracking
            );
        }
        Command::Collect { data, experts, ids, out, envs, steps, validation_steps, seed } => {
            let m = load_dataset(&data.dataset)?;
            let ids = if ids.is_empty() {
                let mut found: Vec<String> = fs::read_dir(&experts)?
                    .filter_map(|e| e.ok())
                    .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".ckpt")).map(String::from))
                    .collect();
                found.sort();
                found
            } else {
                ids
            };
            let mut pols = BTreeMap::new();
            let mut list = Vec::new();
            for id in &ids {
                let path = experts.join(format!("{id}.ckpt"));
                if path.exists() {
                    pols.insert(id.clone(), ExpertPolicy::load(&path)?);
                }
                list.push((id.clone(), m.build(id)?));
            }
            let cfg = CollectConfig { envs, steps, validation_steps, seed, ..Default::default() };
            let manifest = collect_demonstrations(&list, &pols, &EnvConfig::default(), &cfg, &out)?;
            for e in &manifest.embodiment {
                println!("{}: {} train / {} validation samples", e.id, e.train_samples, e.validation_samples);
            }
        }
        Command::Distill { data, demos, proportion, classes, out, epochs, lr, reference_arch, seed } => {
            let m = load_dataset(&data.dataset)?;
            let dm = DemoManifest::load(&demos)?;
            let sel = ClassSelection::parse(&classes)?;
            let pool: Vec<(String, MorphologyClass)> =
                train_pool(&m).into_iter().filter(|(id, c)| sel.admits(*c) && dm.entry(id).is_some()).collect();
            if pool.is_empty() {
                bail!("no demonstrations for the selected classes in {}", demos.display());
            }
            let classes_of: Vec<MorphologyClass> = pool.iter().map(|p| p.1).collect();
            let subset = &make_subsets(&classes_of, &[proportion], seed)?[0];
            let ids: Vec<String> = subset.iter().map(|&i| pool[i].0.clone()).collect();
            let (train, val) = dm.sources(&demos, Some(&ids))?;
            let arch = if reference_arch { UrmaConfig::reference() } else { UrmaConfig::desk() };
            let cfg = DistillConfig { epochs, learning_rate: lr, ..Default::default() };
            let r = train_bc(&train, &val, &cfg, &arch, seed)?;
            fs::create_dir_all(&out)?;
            r.params.save(&out.join("policy.ckpt"))?;
            write_loss_csv(&mut File::create(out.join("loss.csv"))?, &r.curve)?;
            println!(
                "{} embodiments, best epoch {} validation loss {:.6}{}",
                ids.len(),
                r.best_epoch,
                r.best().validation_loss,
                if r.aborted { " (stopped on a non-finite loss)" } else { "" }
            );
        }
        Command::Eval { data, policy, test_set, ids, ood, scales, episodes, seed, out } => {
            let m = load_dataset(&data.dataset)?;
            let ids = if test_set || ids.is_empty() { test_ids(&m) } else { ids };
            let embodiments = build(&m, &ids)?;
            let ctl = UrmaController::new(&PolicyParams::load(&policy)?)?;
            let cfg = EvalConfig { episodes, seed, ..Default::default() };
            if ood {
                let scales = if scales.is_empty() { OOD_SCALES.to_vec() } else { scales };
                ood_eval(&ctl, &embodiments, &scales, &cfg)?.write_csv(&mut output(&out)?)?;
            } else {
                let r = evaluate_policy(&ctl, &embodiments, &cfg)?;
                r.write_csv(&mut output(&out)?)?;
                eprintln!("mean {:.5} std {:.5} over {} embodiments", r.mean, r.std, r.rows.len());
            }
        }
        Command::Study { data, config, demos, workdir, max_cells } => {
            let m = load_dataset(&data.dataset)?;
            let cfg = ScalingConfig::load(&config)?;
            let dm = DemoManifest::load(&demos)?;
            let pool: Vec<_> = train_pool(&m).into_iter().filter(|(id, _)| dm.entry(id).is_some()).collect();
            let test = build(&m, &test_ids(&m))?;
            let inputs = StudyInputs { pool, test: &test, demos: &dm, demo_dir: demos.clone() };
            let report = run_scaling_study(&cfg, &inputs, &workdir, max_cells)?;
            for r in &report.results {
                println!("{}: mean {:.5} std {:.5} ({} embodiments)", r.cell.id, r.mean_reward, r.std_reward, r.embodiments.len());
            }
            for (cell, e) in &report.failures {
                eprintln!("{cell} failed: {e}");
            }
            if report.pending > 0 {
                println!("{} cells pending; rerun to resume", report.pending);
            }
            if !report.failures.is_empty() {
                bail!("{} cells failed", report.failures.len());
            }
        }
        Command::Latent { data, policy, ids, components, joint_head, out } => {
            let m = load_dataset(&data.dataset)?;
            let ids = if ids.is_empty() { test_ids(&m) } else { ids };
            let p = PolicyParams::load(&policy)?;
            let embodiments = build(&m, &ids)?;
            let rows = action_latents(&p, &embodiments, LATENT_STEPS, 0)?;
            fs::create_dir_all(&out)?;
            write_latents_csv(&mut File::create(out.join("latents.csv"))?, &rows)?;
            if let Some(h) = joint_head {
                let mut joints = Vec::new();
                for e in &embodiments {
                    joints.extend(joint_latents(&p, e, h)?);
                }
                write_latents_csv(&mut File::create(out.join("joint_latents.csv"))?, &joints)?;
            }
            let (pca, coords) = project_latents(&rows, components)?;
            write_projection_csv(&mut File::create(out.join("pca.csv"))?, &coords)?;
            let ratio = pca.explained_variance_ratio();
            println!("explained variance ratio: {:?}", &ratio[..components.min(ratio.len())]);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
