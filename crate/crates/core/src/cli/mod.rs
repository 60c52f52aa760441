//! The `rangediff` command line.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;

use crate::data::{self, export, DatasetSplit};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::eval::{self, DiffusionUpsampler, Interpolation, Upsampler};
use crate::geometry::{unproject, RangeImage};
use crate::mask::upsampling_mask;
use crate::net::{load_checkpoint, save_checkpoint, Trainer, UNet};

#[derive(Debug, Parser)]
#[command(name = "rangediff", version, about = "Conditional-diffusion upsampling of LiDAR range images")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base seed (overrides the `seed` key).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a denoiser on one or more scan directories.
    Train {
        /// Scan directories (.bin or .rimg files); several for multi-source training.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optimizer updates (overrides `train.steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Upsample one scan.
    Upsample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Required unless --method names a baseline.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// model, nearest, bilinear or bicubic.
        #[arg(long, default_value = "model")]
        method: String,
        #[arg(long)]
        rate: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score a method on the test split of one or more scan directories.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        method: String,
        #[arg(long)]
        rate: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Time the sampler at several step counts.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated step counts (overrides `bench.steps`).
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// default, urban or ground.
        #[arg(long)]
        scene: Option<String>,
        /// rimg or bin.
        #[arg(long)]
        format: Option<String>,
    },
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        let mut flag = |key: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(key, &v));
        match &self.command {
            Command::Train { steps, .. } => flag("train.steps", steps.map(|s| s.to_string()))?,
            Command::Upsample { rate, steps, .. } | Command::Eval { rate, steps, .. } => {
                flag("eval.rate", rate.map(|s| s.to_string()))?;
                flag("sample.steps", steps.map(|s| s.to_string()))?;
            }
            Command::Bench { steps, runs, .. } => {
                flag("bench.steps", steps.clone())?;
                flag("bench.runs", runs.map(|s| s.to_string()))?;
            }
            Command::Synth { count, scene, format, .. } => {
                flag("synth.count", count.map(|s| s.to_string()))?;
                flag("synth.scene", scene.clone())?;
                flag("synth.format", format.clone())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), cfg.render())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// The split used by both `train` and `eval`: id-list files when given,
/// otherwise a seeded shuffle.
fn dataset_split(cfg: &RunConfig, ids: &[String], source: &str) -> Result<DatasetSplit> {
    let (train_list, test_list) = (cfg.get("data.train_list"), cfg.get("data.test_list"));
    if train_list.is_empty() && test_list.is_empty() {
        return data::make_split(ids, cfg.split_ratios()?, cfg.derived_seed("split")?, source);
    }
    let read = |p: &str| if p.is_empty() { Ok(Vec::new()) } else { data::read_id_list(Path::new(p)) };
    let split = DatasetSplit::from_lists(read(train_list)?, Vec::new(), read(test_list)?, source)?;
    for id in split.train.iter().chain(&split.test) {
        if !ids.contains(id) {
            return Err(Error::config(format!("listed id {id:?} is not in {source}")));
        }
    }
    Ok(split)
}

fn select<'a>(all: &'a [(String, RangeImage)], ids: &[String]) -> Vec<(String, RangeImage)> {
    ids.iter()
        .filter_map(|id| all.iter().find(|(i, _)| i == id).cloned())
        .collect()
}

fn source_label(dirs: &[PathBuf]) -> String {
    dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(",")
}

fn load_model(path: Option<&PathBuf>, method: &str) -> Result<Option<(UNet<f32>, NoiseSchedule)>> {
    if method != "model" {
        Interpolation::parse(method)?;
        return Ok(None);
    }
    let path = path.ok_or_else(|| Error::config("--checkpoint is required for --method model"))?;
    let ckpt = load_checkpoint(path)?;
    Ok(Some((ckpt.net()?, ckpt.schedule()?)))
}

fn upsampler<'a>(model: &'a Option<(UNet<f32>, NoiseSchedule)>, method: &str, cfg: &RunConfig) -> Result<Box<dyn Upsampler + 'a>> {
    Ok(match model {
        Some((net, sched)) => Box::new(DiffusionUpsampler {
            denoiser: net,
            schedule: sched,
            steps: cfg.usize("sample.steps")?,
            eta: cfg.f64("sample.eta")?,
        }),
        None => Box::new(Interpolation::parse(method)?),
    })
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Train { data, out, resume, .. } => cmd_train(&cfg, data, out, resume.as_deref()),
        Command::Upsample {
            input,
            out,
            checkpoint,
            method,
            ..
        } => cmd_upsample(&cfg, input, out, checkpoint.as_ref(), method),
        Command::Eval {
            data,
            out,
            checkpoint,
            method,
            ..
        } => cmd_eval(&cfg, data, out, checkpoint.as_ref(), method),
        Command::Bench { checkpoint, out, .. } => cmd_bench(&cfg, checkpoint, out),
        Command::Synth { out, .. } => cmd_synth(&cfg, out),
    }
}

pub fn cmd_train(cfg: &RunConfig, dirs: &[PathBuf], out: &Path, resume: Option<&Path>) -> Result<String> {
    let proj = cfg.projection()?;
    let sched = cfg.schedule()?;
    let task = cfg.task()?;
    let hyper = cfg.hyper()?;
    let net_cfg = cfg.net()?;
    net_cfg.check_size(proj.height, proj.width)?;
    let all = data::load_sources(dirs, &proj)?;
    let ids: Vec<String> = all.iter().map(|(id, _)| id.clone()).collect();
    let split = dataset_split(cfg, &ids, &source_label(dirs))?;
    let train: Vec<RangeImage> = select(&all, &split.train).into_iter().map(|(_, img)| img).collect();
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    prepare_out(out, cfg)?;
    data::write_id_list(&out.join("train.txt"), &split.train)?;
    data::write_id_list(&out.join("val.txt"), &split.val)?;
    data::write_id_list(&out.join("test.txt"), &split.test)?;

    let mut trainer = match resume {
        Some(p) => Trainer::resume(&load_checkpoint(p)?, &sched, hyper.clone())?,
        None => Trainer::new(net_cfg, hyper.clone(), &sched)?,
    };
    let remaining = (hyper.steps as u64).saturating_sub(trainer.step_count()) as usize;
    let every = cfg.usize("train.checkpoint_every")? as u64;
    let ckpt_path = out.join("model.ckpt");
    trainer.run(&train, &task, &sched, remaining, &mut |t, step, _| {
        if every > 0 && step % every == 0 {
            save_checkpoint(&t.checkpoint(&sched), &ckpt_path)?;
        }
        Ok(())
    })?;
    save_checkpoint(&trainer.checkpoint(&sched), &ckpt_path)?;
    let first = trainer.step_count() as usize - trainer.losses().len();
    let mut log = String::from("step\tloss\n");
    for (i, l) in trainer.losses().iter().enumerate() {
        let _ = writeln!(log, "{}\t{l}", first + i + 1);
    }
    write_file(&out.join("loss.tsv"), log)?;
    let last = trainer.losses().last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained {} steps on {} scans ({}), final loss {last:.6}\ncheckpoint {}\n",
        trainer.step_count(),
        train.len(),
        task.label(),
        ckpt_path.display()
    ))
}

pub fn cmd_upsample(cfg: &RunConfig, input: &Path, out: &Path, checkpoint: Option<&PathBuf>, method: &str) -> Result<String> {
    let proj = cfg.projection()?;
    let rate = cfg.usize("eval.rate")?;
    let img = data::load_any(input, &proj)?;
    let mask = upsampling_mask(img.height(), img.width(), rate)?;
    let model = load_model(checkpoint, method)?;
    let up = upsampler(&model, method, cfg)?;
    let sparse = eval::sparsify(&img, &mask)?;
    let dense = up.run(&sparse, &mask, cfg.derived_seed("sample")?)?;
    prepare_out(out, cfg)?;
    data::save_range_image(&dense, &out.join("upsampled.rimg"))?;
    export::export_depth_png(&dense, &out.join("depth.png"))?;
    export::export_reflectance_png(&dense, &out.join("reflectance.png"))?;
    export::export_depth_png(&sparse, &out.join("input_depth.png"))?;
    export::export_mask_png(&mask, &out.join("mask.png"))?;
    data::write_scan(&out.join("points.bin"), &unproject(&dense))?;
    Ok(format!(
        "{} upsampled {} x{rate}: {} of {} pixels valid\n",
        up.name(),
        input.display(),
        dense.valid_count(),
        proj.pixels()
    ))
}

pub fn cmd_eval(cfg: &RunConfig, dirs: &[PathBuf], out: &Path, checkpoint: Option<&PathBuf>, method: &str) -> Result<String> {
    let proj = cfg.projection()?;
    let rate = cfg.usize("eval.rate")?;
    let model = load_model(checkpoint, method)?;
    let up = upsampler(&model, method, cfg)?;
    let all = data::load_sources(dirs, &proj)?;
    let ids: Vec<String> = all.iter().map(|(id, _)| id.clone()).collect();
    let split = dataset_split(cfg, &ids, &source_label(dirs))?;
    let test = select(&all, &split.test);
    let report = eval::evaluate(
        up.as_ref(),
        &test,
        |_, gt| upsampling_mask(gt.height(), gt.width(), rate),
        cfg.derived_seed("sample")?,
    )?;
    prepare_out(out, cfg)?;
    let text = report.to_text();
    write_file(&out.join("report.txt"), &text)?;
    write_file(&out.join("records.tsv"), report.to_records())?;
    write_file(&out.join("timing.tsv"), report.to_timing())?;
    Ok(text)
}

pub fn cmd_bench(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<String> {
    let proj = cfg.projection()?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (net, sched) = (ckpt.net()?, ckpt.schedule()?);
    let scan = data::synth_scan(&cfg.scene()?, &proj)?;
    let mask = upsampling_mask(proj.height, proj.width, cfg.usize("eval.rate")?)?;
    let table = eval::bench_sampler(
        &net,
        &sched,
        &eval::sparsify(&scan, &mask)?,
        &mask,
        &cfg.bench_steps()?,
        cfg.usize("bench.warmup")?,
        cfg.usize("bench.runs")?,
    )?;
    prepare_out(out, cfg)?;
    let text = table.to_text();
    write_file(&out.join("bench.txt"), &text)?;
    Ok(text)
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let proj = cfg.projection()?;
    let scene = cfg.scene()?;
    let count = cfg.usize("synth.count")?;
    let format = cfg.get("synth.format").to_string();
    prepare_out(out, cfg)?;
    for (id, img) in data::synth_dataset(&scene, &proj, count, "scan")? {
        match format.as_str() {
            "bin" => data::write_scan(&out.join(format!("{id}.bin")), &unproject(&img))?,
            _ => data::save_range_image(&img, &out.join(format!("{id}.rimg")))?,
        }
    }
    Ok(format!("wrote {count} {format} scans to {}\n", out.display()))
}
