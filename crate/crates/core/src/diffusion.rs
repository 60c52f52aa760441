//! Noise schedules, the forward process, masked blending and the
//! few-step conditional sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::RangeImage;
use crate::mask::{sample_training_mask, Mask, TaskConfig};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
/// Bounds applied to the predicted clean sample. Data lives in `[0, 1]`.
pub const X0_CLIP: (f64, f64) = (-1.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::config(format!("unknown schedule '{other}' (cosine, linear)"))),
        }
    }
}

/// Cumulative signal fractions `alpha_bar[0..=T]`, `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha_bar: Vec<f64>,
}

fn cosine_f(t: f64, t_train: f64) -> f64 {
    let phase = (t / t_train + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
    phase.cos().powi(2)
}

impl NoiseSchedule {
    pub fn new(t_train: usize, kind: ScheduleKind) -> Result<Self> {
        if t_train < 2 {
            return Err(Error::config(format!("T_train must be at least 2, got {t_train}")));
        }
        let mut alpha_bar = Vec::with_capacity(t_train + 1);
        alpha_bar.push(1.0);
        match kind {
            ScheduleKind::Cosine => {
                let f0 = cosine_f(0.0, t_train as f64);
                for t in 1..=t_train {
                    let prev = alpha_bar[t - 1];
                    let closed = cosine_f(t as f64, t_train as f64) / f0;
                    // beta_t = 1 - closed / prev is capped so alpha_bar stays positive
                    alpha_bar.push(if 1.0 - closed / prev > MAX_BETA {
                        prev * (1.0 - MAX_BETA)
                    } else {
                        closed
                    });
                }
            }
            ScheduleKind::Linear => {
                let (lo, hi) = (1e-4, 2e-2);
                for i in 1..=t_train {
                    let beta = lo + (hi - lo) * (i - 1) as f64 / (t_train - 1) as f64;
                    let prev = alpha_bar[i - 1];
                    alpha_bar.push(prev * (1.0 - beta));
                }
            }
        }
        let last = *alpha_bar.last().unwrap();
        if last >= 0.01 {
            return Err(Error::config(format!(
                "{} schedule with T_train={t_train} ends at alpha_bar={last:.4}, not below 0.01",
                kind.name()
            )));
        }
        Ok(Self { kind, alpha_bar })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_train(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Index whose alpha_bar is closest to `target`.
    pub fn nearest_index(&self, target: f64) -> usize {
        (1..self.alpha_bar.len())
            .min_by(|&a, &b| {
                (self.alpha_bar[a] - target)
                    .abs()
                    .total_cmp(&(self.alpha_bar[b] - target).abs())
            })
            .unwrap()
    }

    /// Stable identifier stored alongside checkpoints.
    pub fn fingerprint(&self) -> u64 {
        crate::fnv1a(format!("{}:{}", self.kind.name(), self.t_train()).as_bytes())
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_train() {
            return Err(Error::range(format!("timestep {t} outside [1, {}]", self.t_train())));
        }
        Ok(())
    }
}

/// `z_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps`.
pub fn q_sample(x0: &[f32], t: usize, eps: &[f32], sched: &NoiseSchedule) -> Result<Vec<f32>> {
    sched.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(Error::shape("x0 and eps differ in length"));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32)
        .collect())
}

/// `m * observed + (1 - m) * latent` over `C` channel planes sharing one
/// mask plane.
pub fn blend(observed: &[f32], latent: &[f32], mask: &Mask) -> Result<Vec<f32>> {
    let n = mask.bits.len();
    if observed.len() != latent.len() || observed.len() % n != 0 {
        return Err(Error::shape(format!(
            "blend inputs {} / {} do not tile a {n}-pixel mask",
            observed.len(),
            latent.len()
        )));
    }
    Ok(observed
        .iter()
        .zip(latent)
        .enumerate()
        .map(|(i, (&o, &z))| if mask.bits[i % n] == 1 { o } else { z })
        .collect())
}

/// Mean squared error over unknown pixels, all channels.
pub fn masked_loss(pred: &[f32], target: &[f32], mask: &Mask) -> Result<f64> {
    let n = mask.bits.len();
    if pred.len() != target.len() || pred.len() % n != 0 {
        return Err(Error::shape("loss inputs do not tile the mask"));
    }
    mask.require_unknown()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        if mask.bits[i % n] == 0 {
            let d = p as f64 - t as f64;
            sum += d * d;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Scalar view of one reverse update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub alpha_bar_t: f64,
    pub alpha_bar_prev: f64,
    pub sigma: f64,
}

impl StepCoefficients {
    pub fn new(alpha_bar_t: f64, alpha_bar_prev: f64, eta: f64) -> Self {
        let sigma = eta
            * ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)).sqrt()
            * (1.0 - alpha_bar_t / alpha_bar_prev).max(0.0).sqrt();
        Self {
            alpha_bar_t,
            alpha_bar_prev,
            sigma,
        }
    }

    /// Clean-sample estimate implied by `eps_pred`, before clipping.
    pub fn predict_x0(&self, z: f64, eps_pred: f64) -> f64 {
        (z - (1.0 - self.alpha_bar_t).sqrt() * eps_pred) / self.alpha_bar_t.sqrt()
    }

    pub fn update(&self, z: f64, eps_pred: f64, noise: f64) -> f64 {
        let x0 = self.predict_x0(z, eps_pred).clamp(X0_CLIP.0, X0_CLIP.1);
        if self.alpha_bar_prev >= 1.0 {
            return x0;
        }
        let dir = (1.0 - self.alpha_bar_prev - self.sigma * self.sigma).max(0.0).sqrt();
        self.alpha_bar_prev.sqrt() * x0 + dir * eps_pred + self.sigma * noise
    }
}

/// One DDIM-family update from `t` to `t_prev`. At `t_prev = 0` the result
/// is the clipped clean-sample estimate.
pub fn reverse_step(
    z_t: &[f32],
    eps_pred: &[f32],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    eta: f64,
    noise: &[f32],
) -> Result<Vec<f32>> {
    if t_prev >= t {
        return Err(Error::range(format!("t_prev ({t_prev}) must be below t ({t})")));
    }
    sched.check_t(t)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::range(format!("eta {eta} outside [0, 1]")));
    }
    let c = StepCoefficients::new(sched.alpha_bar(t), sched.alpha_bar(t_prev), eta);
    if z_t.len() != eps_pred.len() || (c.sigma > 0.0 && noise.len() != z_t.len()) {
        return Err(Error::shape("reverse step inputs differ in length"));
    }
    Ok(z_t
        .iter()
        .zip(eps_pred)
        .enumerate()
        .map(|(i, (&z, &e))| {
            let n = if c.sigma > 0.0 { noise[i] as f64 } else { 0.0 };
            c.update(z as f64, e as f64, n) as f32
        })
        .collect())
}

/// Equally spaced, strictly decreasing timesteps from `T` down to 0
/// (`steps + 1` entries).
pub fn timestep_subsequence(t_train: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_train {
        return Err(Error::config(format!("sampling steps must lie in [1, {t_train}], got {steps}")));
    }
    Ok((0..=steps)
        .rev()
        .map(|i| ((t_train * i) as f64 / steps as f64).round() as usize)
        .collect())
}

/// Noise-prediction network as seen by the sampler. All tensors are CHW
/// planes of one image: `input` and the result hold two channels, `mask`
/// one.
pub trait Denoiser {
    fn predict(&self, input: &[f32], mask: &[f32], t: usize, height: usize, width: usize) -> Result<Vec<f32>>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f32], &[f32], usize) -> Vec<f32>,
{
    fn predict(&self, input: &[f32], mask: &[f32], t: usize, _: usize, _: usize) -> Result<Vec<f32>> {
        Ok(self(input, mask, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            eta: 0.0,
            seed: 0,
        }
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Generates the unknown pixels of `observed`. Known pixels are copied
/// through unchanged, validity flags included.
pub fn conditional_sample(
    observed: &RangeImage,
    mask: &Mask,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<RangeImage> {
    let (h, w) = (observed.height(), observed.width());
    if mask.height != h || mask.width != w {
        return Err(Error::shape(format!(
            "mask is {}x{}, image is {h}x{w}",
            mask.height, mask.width
        )));
    }
    mask.require_unknown()?;
    let known = observed.to_channels();
    if known.iter().any(|v| !v.is_finite()) {
        return Err(Error::range("observed channels must be finite"));
    }
    let mask_plane = mask.to_f32();
    let times = timestep_subsequence(sched.t_train(), cfg.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = standard_normal(&mut rng, known.len());
    for pair in times.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let input = blend(&known, &z, mask)?;
        let eps = denoiser.predict(&input, &mask_plane, t, h, w)?;
        if eps.len() != z.len() {
            return Err(Error::shape("denoiser returned the wrong number of values"));
        }
        let noise = if cfg.eta > 0.0 && t_prev > 0 {
            standard_normal(&mut rng, z.len())
        } else {
            Vec::new()
        };
        z = reverse_step(&z, &eps, t, t_prev, sched, cfg.eta, &noise)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("sampler produced non-finite values at t={t}")));
        }
    }
    compose_output(observed, mask, &z)
}

/// Known pixels from `observed`, the rest decoded from `generated`.
pub(crate) fn compose_output(observed: &RangeImage, mask: &Mask, generated: &[f32]) -> Result<RangeImage> {
    let mut out = RangeImage::from_channels(observed.config, generated)?;
    for i in (0..mask.bits.len()).filter(|&i| mask.is_known(i)) {
        out.depth[i] = observed.depth[i];
        out.reflectance[i] = observed.reflectance[i];
        out.valid[i] = observed.valid[i];
    }
    Ok(out)
}

/// One supervised example for the masked denoising objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Blended network input `m * x0 + (1 - m) * z_t`.
    pub input: Vec<f32>,
    pub mask: Mask,
    pub t: usize,
    pub eps: Vec<f32>,
}

pub fn training_example(
    x0: &RangeImage,
    task: &TaskConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = sample_training_mask(task, x0.height(), x0.width(), rng.gen())?;
    let t = rng.gen_range(1..=sched.t_train());
    let clean = x0.to_channels();
    let eps = standard_normal(&mut rng, clean.len());
    let z = q_sample(&clean, t, &eps, sched)?;
    let input = blend(&clean, &z, &mask)?;
    Ok(TrainingExample { input, mask, t, eps })
}
