//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::SceneConfig;
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::geometry::ProjectionConfig;
use crate::mask::TaskConfig;
use crate::net::{NetConfig, TrainHyper};

/// Every key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed; per-module seeds are derived from it"),
    ("projection.height", "32", "range image rows"),
    ("projection.width", "256", "range image columns"),
    ("projection.fov_up", "3", "upper vertical field of view, degrees"),
    ("projection.fov_down", "-25", "lower vertical field of view, degrees"),
    ("projection.d_max", "80", "maximum range, meters"),
    ("projection.reflectance_min", "0", "raw reflectance mapped to 0"),
    ("projection.reflectance_max", "1", "raw reflectance mapped to 1"),
    ("projection.return_threshold", "0.5", "generated ranges below this many meters are no return"),
    ("schedule.kind", "cosine", "noise schedule: cosine or linear"),
    ("schedule.t_train", "1024", "training diffusion steps"),
    ("net.base_channels", "16", "channels at full resolution"),
    ("net.channel_mults", "1,2,4", "channel multiplier per level"),
    ("net.blocks", "1,2,2", "residual blocks per level"),
    ("net.temb_dim", "64", "timestep embedding width"),
    ("task.preset", "C", "mask mix A..J, or 'custom' to use task.kinds"),
    ("task.kinds", "upsample", "custom mask kinds: upsample,straight,jitter,pepper"),
    ("task.upsample_rates", "4", "custom upsampling rates"),
    ("train.steps", "2000", "optimizer updates"),
    ("train.batch_size", "2", "examples per update"),
    ("train.lr", "0.001", "Adam learning rate"),
    ("train.grad_clip", "1", "global gradient-norm clip"),
    ("train.ema_decay", "0.995", "decay of the averaged weights used for sampling (0 disables)"),
    ("train.checkpoint_every", "500", "write a checkpoint every N steps (0 = only at the end)"),
    ("sample.steps", "8", "denoising steps at inference"),
    ("sample.eta", "0", "sampler stochasticity in [0, 1]"),
    ("eval.rate", "4", "upsampling rate for upsample/eval/bench"),
    ("data.split", "0.8,0.1,0.1", "train,val,test fractions"),
    ("data.train_list", "", "optional file of training ids, one per line"),
    ("data.test_list", "", "optional file of test ids, one per line"),
    ("synth.count", "100", "scans written by the synth command"),
    ("synth.scene", "default", "scene family: default, urban or ground"),
    ("synth.noise_sigma", "0.02", "range noise, meters"),
    ("synth.format", "rimg", "synthetic scan file format: rimg or bin"),
    ("bench.steps", "8,320", "step counts to time"),
    ("bench.warmup", "1", "discarded runs per step count"),
    ("bench.runs", "5", "timed runs per step count"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

fn known_key(key: &str) -> Result<&'static str> {
    KEYS.iter()
        .map(|(k, _, _)| *k)
        .find(|k| *k == key)
        .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = known_key(key)?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Parses `key = value` lines over the current values. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::config(format!("{key} = {v:?} is not a valid {}", std::any::type_name::<T>())))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::config(format!("{key}: bad item {s:?}"))))
            .collect()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    /// Seed for one module: a hash of the base seed and the module name.
    pub fn derived_seed(&self, module: &str) -> Result<u64> {
        Ok(derive_seed(self.seed()?, module))
    }

    pub fn projection(&self) -> Result<ProjectionConfig> {
        let p = ProjectionConfig {
            height: self.usize("projection.height")?,
            width: self.usize("projection.width")?,
            fov_up: self.f64("projection.fov_up")?,
            fov_down: self.f64("projection.fov_down")?,
            d_max: self.f64("projection.d_max")?,
            reflectance_min: self.f64("projection.reflectance_min")?,
            reflectance_max: self.f64("projection.reflectance_max")?,
            return_threshold: self.f64("projection.return_threshold")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.usize("schedule.t_train")?, ScheduleKind::parse(self.get("schedule.kind"))?)
    }

    pub fn net(&self) -> Result<NetConfig> {
        let n = NetConfig {
            base_channels: self.usize("net.base_channels")?,
            channel_mults: self.list("net.channel_mults")?,
            blocks: self.list("net.blocks")?,
            temb_dim: self.usize("net.temb_dim")?,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn task(&self) -> Result<TaskConfig> {
        let preset = self.get("task.preset");
        let task = if preset.eq_ignore_ascii_case("custom") {
            let kinds = self
                .list::<String>("task.kinds")?
                .iter()
                .map(|k| crate::mask::MaskKind::parse(k))
                .collect::<Result<Vec<_>>>()?;
            TaskConfig {
                kinds,
                upsample_rates: self.list("task.upsample_rates")?,
                ..TaskConfig::upsample_only(&[])
            }
        } else {
            let mut chars = preset.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => TaskConfig::preset(c)?,
                _ => return Err(Error::config(format!("task.preset = {preset:?} is not a single letter or 'custom'"))),
            }
        };
        task.validate()?;
        Ok(task)
    }

    pub fn hyper(&self) -> Result<TrainHyper> {
        let h = TrainHyper {
            steps: self.usize("train.steps")?,
            batch_size: self.usize("train.batch_size")?,
            lr: self.f64("train.lr")?,
            grad_clip: self.f64("train.grad_clip")?,
            ema_decay: self.f64("train.ema_decay")?,
            seed: self.derived_seed("train")?,
            ..TrainHyper::default()
        };
        if h.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&h.ema_decay) {
            return Err(Error::config("train.ema_decay must lie in [0, 1)"));
        }
        if !(h.lr.is_finite() && h.lr > 0.0) {
            return Err(Error::config("train.lr must be positive"));
        }
        Ok(h)
    }

    pub fn split_ratios(&self) -> Result<[f64; 3]> {
        let v: Vec<f64> = self.list("data.split")?;
        v.try_into().map_err(|_| Error::config("data.split needs three fractions"))
    }

    pub fn scene(&self) -> Result<SceneConfig> {
        let base = match self.get("synth.scene") {
            "default" => SceneConfig::default(),
            "urban" => SceneConfig::urban(),
            "ground" => SceneConfig::ground_only(),
            other => return Err(Error::config(format!("synth.scene {other:?}: use default, urban or ground"))),
        };
        let cfg = SceneConfig {
            noise_sigma: self.f64("synth.noise_sigma")?,
            seed: self.derived_seed("synth")?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bench_steps(&self) -> Result<Vec<usize>> {
        self.list("bench.steps")
    }

    /// Checks every typed accessor so that bad values fail before any work.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.projection()?;
        self.schedule()?;
        self.net()?;
        self.task()?;
        self.hyper()?;
        self.split_ratios()?;
        self.scene()?;
        self.bench_steps()?;
        for k in ["train.checkpoint_every", "sample.steps", "eval.rate", "synth.count", "bench.warmup", "bench.runs"] {
            self.usize(k)?;
        }
        self.f64("sample.eta")?;
        if !matches!(self.get("synth.format"), "rimg" | "bin") {
            return Err(Error::config("synth.format must be rimg or bin"));
        }
        Ok(())
    }

    /// Every key in table order with its resolved value.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            s.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k)));
        }
        s
    }
}

pub fn derive_seed(base: u64, module: &str) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(module.as_bytes());
    crate::fnv1a(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_render_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let mut back = RunConfig::default();
        back.set("seed", "99").unwrap();
        back.merge_text(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.projection().unwrap(), ProjectionConfig::desk());
        assert_eq!(c.net().unwrap(), NetConfig::desk());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        let err = c.merge_text("seed = 1\nnet.width = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(c.set_pair("noequals").is_err());
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = RunConfig::default();
        c.set("projection.height", "abc").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("task.preset", "Z").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("data.split", "0.5,0.5").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn custom_tasks_and_comments() {
        let mut c = RunConfig::default();
        c.merge_text("# all masks\ntask.preset = custom\ntask.kinds = pepper, upsample # trailing\ntask.upsample_rates = 2,8").unwrap();
        let t = c.task().unwrap();
        assert_eq!(t.upsample_rates, vec![2, 8]);
        assert_eq!(t.kinds.len(), 2);
    }

    #[test]
    fn derived_seeds_differ_per_module() {
        let c = RunConfig::default();
        assert_ne!(c.derived_seed("train").unwrap(), c.derived_seed("synth").unwrap());
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }
}
