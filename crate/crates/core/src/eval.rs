//! Interpolation baselines, masked error metrics, split evaluation and the
//! sampler speed benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use crate::diffusion::{conditional_sample, Denoiser, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::geometry::RangeImage;
use crate::mask::{Mask, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Interpolation {
    pub const ALL: [Interpolation; 3] = [Self::Nearest, Self::Bilinear, Self::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; valid: nearest, bilinear, bicubic, model")))
    }
}

/// Copy of `img` with every pixel that `mask` hides set to the invalid sentinel.
pub fn sparsify(img: &RangeImage, mask: &Mask) -> Result<RangeImage> {
    check_mask(img, mask)?;
    let mut out = img.clone();
    for i in (0..mask.bits.len()).filter(|&i| !mask.is_known(i)) {
        out.depth[i] = 0.0;
        out.reflectance[i] = 0.0;
        out.valid[i] = false;
    }
    Ok(out)
}

fn check_mask(img: &RangeImage, mask: &Mask) -> Result<()> {
    if mask.height != img.height() || mask.width != img.width() {
        return Err(Error::shape(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height,
            mask.width,
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn catmull_rom(p: [f64; 4], s: f64) -> f64 {
    let [a, b, c, d] = p;
    0.5 * (2.0 * b + (c - a) * s + (2.0 * a - 5.0 * b + 4.0 * c - d) * s * s + (3.0 * b - a - 3.0 * c + d) * s * s * s)
}

/// Fills the rows of an upsampling layout (known rows at `r % rate == 0`)
/// by vertical interpolation of metric depth and raw reflectance in each
/// column. Invalid known pixels count as 0 m. Rows below the last known row
/// have no bracketing pair and replicate it. Interpolated depths below the
/// return threshold become invalid pixels. Known rows are copied verbatim.
pub fn interpolate_baseline(sparse: &RangeImage, method: Interpolation, rate: usize) -> Result<RangeImage> {
    let (h, w) = (sparse.height(), sparse.width());
    if rate == 0 || rate > h {
        return Err(Error::config(format!("upsampling rate must lie in [1, {h}], got {rate}")));
    }
    for r in (0..h).filter(|r| r % rate != 0) {
        let row = r * w..(r + 1) * w;
        if sparse.valid[row.clone()].iter().any(|&v| v)
            || sparse.depth[row.clone()].iter().chain(&sparse.reflectance[row]).any(|&v| v != 0.0)
        {
            return Err(Error::shape(format!(
                "row {r} holds data but is not a known row for rate {rate}"
            )));
        }
    }
    let cfg = sparse.config;
    let known: Vec<usize> = (0..h).step_by(rate).collect();
    let last = known.len() - 1;
    let metric = |i: usize| -> [f64; 2] {
        if sparse.valid[i] {
            [sparse.range_at(i), cfg.denormalize_reflectance(sparse.reflectance[i] as f64)]
        } else {
            [0.0, 0.0]
        }
    };
    let mut out = sparse.clone();
    for r in (0..h).filter(|r| r % rate != 0) {
        let j = r / rate;
        let offset = r - known[j];
        for col in 0..w {
            let at = |k: usize| metric(known[k.min(last)] * w + col);
            let value = if j == last {
                at(j)
            } else {
                match method {
                    Interpolation::Nearest => at(if 2 * offset <= rate { j } else { j + 1 }),
                    Interpolation::Bilinear => {
                        let s = offset as f64 / rate as f64;
                        let (a, b) = (at(j), at(j + 1));
                        [0, 1].map(|c| (1.0 - s) * a[c] + s * b[c])
                    }
                    Interpolation::Bicubic => {
                        let s = offset as f64 / rate as f64;
                        let p = [at(j.saturating_sub(1)), at(j), at(j + 1), at(j + 2)];
                        [0, 1].map(|c| catmull_rom([p[0][c], p[1][c], p[2][c], p[3][c]], s))
                    }
                }
            };
            let i = r * w + col;
            let depth = value[0].min(cfg.d_max);
            if depth >= cfg.return_threshold {
                let refl = value[1].clamp(cfg.reflectance_min, cfg.reflectance_max);
                out.set_return(i, depth, refl)?;
            }
        }
    }
    Ok(out)
}

/// Per-channel error: depth in meters, reflectance unitless.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelError {
    pub depth: f64,
    pub reflectance: f64,
}

impl ChannelError {
    fn add(&mut self, other: ChannelError) {
        self.depth += other.depth;
        self.reflectance += other.reflectance;
    }

    fn scale(self, k: f64) -> Self {
        Self {
            depth: self.depth * k,
            reflectance: self.reflectance * k,
        }
    }
}

fn raw_reflectance(img: &RangeImage, i: usize) -> f64 {
    if img.valid[i] {
        img.config.denormalize_reflectance(img.reflectance[i] as f64)
    } else {
        0.0
    }
}

/// Mean of `f(|error|)` over the unknown pixels.
fn masked_mean(pred: &RangeImage, gt: &RangeImage, mask: &Mask, f: impl Fn(f64) -> f64) -> Result<ChannelError> {
    check_mask(gt, mask)?;
    check_mask(pred, mask)?;
    mask.require_unknown()?;
    let mut sum = ChannelError::default();
    for i in (0..mask.bits.len()).filter(|&i| !mask.is_known(i)) {
        sum.add(ChannelError {
            depth: f((pred.range_at(i) - gt.range_at(i)).abs()),
            reflectance: f((raw_reflectance(pred, i) - raw_reflectance(gt, i)).abs()),
        });
    }
    Ok(sum.scale(1.0 / mask.unknown_count() as f64))
}

pub fn masked_mae(pred: &RangeImage, gt: &RangeImage, mask: &Mask) -> Result<ChannelError> {
    masked_mean(pred, gt, mask, |e| e)
}

pub fn masked_rmse(pred: &RangeImage, gt: &RangeImage, mask: &Mask) -> Result<ChannelError> {
    let ms = masked_mean(pred, gt, mask, |e| e * e)?;
    Ok(ChannelError {
        depth: ms.depth.sqrt(),
        reflectance: ms.reflectance.sqrt(),
    })
}

/// Something that fills the hidden pixels of a masked scan.
pub trait Upsampler {
    fn name(&self) -> String;
    fn run(&self, sparse: &RangeImage, mask: &Mask, seed: u64) -> Result<RangeImage>;
}

impl Upsampler for Interpolation {
    fn name(&self) -> String {
        Interpolation::name(*self).to_string()
    }

    fn run(&self, sparse: &RangeImage, mask: &Mask, _seed: u64) -> Result<RangeImage> {
        match mask.provenance {
            Provenance::Upsample { rate } => interpolate_baseline(sparse, *self, rate),
            _ => Err(Error::config(format!(
                "{} interpolation needs an upsampling mask, got {}",
                self.name(),
                mask.provenance
            ))),
        }
    }
}

/// Conditional diffusion sampling with a trained denoiser.
pub struct DiffusionUpsampler<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub steps: usize,
    pub eta: f64,
}

impl Upsampler for DiffusionUpsampler<'_> {
    fn name(&self) -> String {
        format!("model({} steps)", self.steps)
    }

    fn run(&self, sparse: &RangeImage, mask: &Mask, seed: u64) -> Result<RangeImage> {
        let cfg = SamplerConfig {
            steps: self.steps,
            eta: self.eta,
            seed,
        };
        conditional_sample(sparse, mask, self.denoiser, self.schedule, &cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub mae: ChannelError,
    pub rmse: ChannelError,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub mask: String,
    pub samples: Vec<SampleRecord>,
    /// Samples the method failed on, with the reason. They are excluded
    /// from the aggregates.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    fn mean(&self, f: impl Fn(&SampleRecord) -> ChannelError) -> ChannelError {
        let mut sum = ChannelError::default();
        for s in &self.samples {
            sum.add(f(s));
        }
        if self.samples.is_empty() {
            return ChannelError {
                depth: f64::NAN,
                reflectance: f64::NAN,
            };
        }
        sum.scale(1.0 / self.samples.len() as f64)
    }

    pub fn mean_mae(&self) -> ChannelError {
        self.mean(|s| s.mae)
    }

    pub fn mean_rmse(&self) -> ChannelError {
        self.mean(|s| s.rmse)
    }

    pub fn mean_seconds(&self) -> f64 {
        self.samples.iter().map(|s| s.seconds).sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Human-readable summary. Contains no timing, so it is reproducible.
    pub fn to_text(&self) -> String {
        let (mae, rmse) = (self.mean_mae(), self.mean_rmse());
        let mut s = String::new();
        let _ = writeln!(s, "method       {}", self.method);
        let _ = writeln!(s, "mask         {}", self.mask);
        let _ = writeln!(s, "samples      {} (failed {})", self.samples.len(), self.failures.len());
        let _ = writeln!(s, "channel      {:>12} {:>12}", "MAE", "RMSE");
        let _ = writeln!(s, "depth [m]    {:>12.6} {:>12.6}", mae.depth, rmse.depth);
        let _ = writeln!(s, "reflectance  {:>12.6} {:>12.6}", mae.reflectance, rmse.reflectance);
        for (id, why) in &self.failures {
            let _ = writeln!(s, "failed {id}: {why}");
        }
        s
    }

    /// One tab-separated record per sample, full precision, no timing.
    pub fn to_records(&self) -> String {
        let mut s = String::from("id\tdepth_mae_m\tdepth_rmse_m\treflectance_mae\treflectance_rmse\n");
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.id, r.mae.depth, r.rmse.depth, r.mae.reflectance, r.rmse.reflectance
            );
        }
        s
    }

    /// Per-sample wall-clock seconds.
    pub fn to_timing(&self) -> String {
        let mut s = String::from("id\tseconds\n");
        for r in &self.samples {
            let _ = writeln!(s, "{}\t{:.6}", r.id, r.seconds);
        }
        s
    }
}

/// Per-sample seed derived from a base seed and the sample id.
pub fn sample_seed(base: u64, id: &str) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(id.as_bytes());
    crate::fnv1a(&bytes)
}

/// Hides pixels of each ground-truth scan with `mask_for(index)`, runs the
/// method and scores the hidden pixels.
pub fn evaluate(
    method: &dyn Upsampler,
    split: &[(String, RangeImage)],
    mut mask_for: impl FnMut(usize, &RangeImage) -> Result<Mask>,
    seed: u64,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    let mut report = EvalReport {
        method: method.name(),
        mask: String::new(),
        samples: Vec::new(),
        failures: Vec::new(),
    };
    let mut labels: Vec<String> = Vec::new();
    for (idx, (id, gt)) in split.iter().enumerate() {
        let mask = mask_for(idx, gt)?;
        // random masks are summarized by kind, not by per-sample seed
        let label = match &mask.provenance {
            Provenance::Straight { .. } => "straight".to_string(),
            Provenance::Jitter { .. } => "jitter".to_string(),
            Provenance::Pepper { .. } => "pepper".to_string(),
            p => p.to_string(),
        };
        if !labels.contains(&label) {
            labels.push(label);
        }
        let outcome = (|| {
            let sparse = sparsify(gt, &mask)?;
            let start = Instant::now();
            let pred = method.run(&sparse, &mask, sample_seed(seed, id))?;
            let seconds = start.elapsed().as_secs_f64();
            Ok::<_, Error>(SampleRecord {
                id: id.clone(),
                mae: masked_mae(&pred, gt, &mask)?,
                rmse: masked_rmse(&pred, gt, &mask)?,
                seconds,
            })
        })();
        match outcome {
            Ok(rec) => report.samples.push(rec),
            Err(e) => report.failures.push((id.clone(), e.to_string())),
        }
    }
    report.mask = labels.join(",");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub steps: usize,
    pub median_s: f64,
    pub mean_s: f64,
    pub std_s: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, steps: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }

    /// Ratio of median times.
    pub fn ratio(&self, slow: usize, fast: usize) -> Option<f64> {
        Some(self.row(slow)?.median_s / self.row(fast)?.median_s)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:>6} {:>12} {:>12} {:>12} {:>10}\n", "steps", "median_s", "mean_s", "std_s", "fps");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6} {:>12.6} {:>12.6} {:>12.6} {:>10.3}",
                r.steps, r.median_s, r.mean_s, r.std_s, r.fps
            );
        }
        s
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall-clock time of one conditional sample per step count. `warmup`
/// runs are discarded; FPS is the reciprocal of the median.
pub fn bench_sampler(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    sparse: &RangeImage,
    mask: &Mask,
    steps_list: &[usize],
    warmup: usize,
    runs: usize,
) -> Result<BenchTable> {
    if steps_list.is_empty() {
        return Err(Error::config("steps list is empty"));
    }
    if runs == 0 {
        return Err(Error::config("bench needs at least one timed run"));
    }
    let mut rows = Vec::new();
    for &steps in steps_list {
        let cfg = SamplerConfig {
            steps,
            eta: 0.0,
            seed: 0,
        };
        let mut times = Vec::with_capacity(runs);
        for i in 0..warmup + runs {
            let start = Instant::now();
            std::hint::black_box(conditional_sample(sparse, mask, denoiser, schedule, &cfg)?);
            if i >= warmup {
                times.push(start.elapsed().as_secs_f64());
            }
        }
        let mean = times.iter().sum::<f64>() / runs as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64;
        let med = median(&mut times);
        rows.push(BenchRow {
            steps,
            median_s: med,
            mean_s: mean,
            std_s: var.sqrt(),
            fps: 1.0 / med,
        });
    }
    Ok(BenchTable { rows })
}
