use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{AdamState, Checkpoint, RngState};
use super::graph::Graph;
use super::tensor::Tensor;
use super::unet::{coordinate_planes, NetConfig, ParamSet, UNet, IN_CHANNELS};
use crate::diffusion::{training_example, NoiseSchedule, TrainingExample};
use crate::error::{Error, Result};
use crate::geometry::RangeImage;
use crate::mask::TaskConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Decay of the parameter moving average used for inference; 0 turns it off.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            ema_decay: 0.995,
            seed: 0,
        }
    }
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(net: &UNet<f32>) -> Self {
        let zeros = || net.params().tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros(), v: zeros() }
    }
}

/// Owns the network during optimization; the only writer of its parameters.
pub struct Trainer {
    net: UNet<f32>,
    adam: Adam,
    step: u64,
    rng: ChaCha8Rng,
    hyper: TrainHyper,
    losses: Vec<f64>,
    ema: Option<Vec<Vec<f32>>>,
}

fn check_hyper(hyper: &TrainHyper) -> Result<()> {
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(Error::config("batch_size and lr must be positive"));
    }
    if !(0.0..1.0).contains(&hyper.ema_decay) {
        return Err(Error::config(format!("ema_decay must lie in [0, 1), got {}", hyper.ema_decay)));
    }
    Ok(())
}

fn copy_params(net: &UNet<f32>) -> Vec<Vec<f32>> {
    net.params().tensors.iter().map(|t| t.data.clone()).collect()
}

impl Trainer {
    /// A freshly initialized network paired with `sched`.
    pub fn new(config: NetConfig, hyper: TrainHyper, sched: &NoiseSchedule) -> Result<Self> {
        check_hyper(&hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let net = UNet::new(config, rng.gen())?.with_noise_skip(sched);
        let adam = Adam::new(&net);
        let ema = (hyper.ema_decay > 0.0).then(|| copy_params(&net));
        Ok(Self {
            net,
            adam,
            step: 0,
            rng,
            hyper,
            losses: Vec::new(),
            ema,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, sched: &NoiseSchedule, hyper: TrainHyper) -> Result<Self> {
        if ckpt.schedule_fingerprint != sched.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "schedule fingerprint {:016x} does not match {:016x}",
                ckpt.schedule_fingerprint,
                sched.fingerprint()
            )));
        }
        check_hyper(&hyper)?;
        let net = UNet::from_params(ckpt.net_config.clone(), ckpt.params.clone())?.with_noise_skip(sched);
        let ema = match (&ckpt.ema, hyper.ema_decay > 0.0) {
            (_, false) => None,
            (Some(e), true) => Some(e.tensors.iter().map(|t| t.data.clone()).collect()),
            (None, true) => Some(copy_params(&net)),
        };
        let adam = match &ckpt.adam {
            Some(state) => Adam {
                m: state.m.iter().map(|t| t.data.clone()).collect(),
                v: state.v.iter().map(|t| t.data.clone()).collect(),
            },
            None => Adam::new(&net),
        };
        Ok(Self {
            net,
            adam,
            step: ckpt.step,
            rng: ckpt.rng.restore(),
            hyper,
            losses: Vec::new(),
            ema,
        })
    }

    pub fn enable_noise_skip(&mut self, sched: &NoiseSchedule) {
        self.net = self.net.clone().with_noise_skip(sched);
    }

    /// The network being optimized.
    pub fn net(&self) -> &UNet<f32> {
        &self.net
    }

    fn averaged_params(&self) -> Option<ParamSet<f32>> {
        let ema = self.ema.as_ref()?;
        let p = self.net.params();
        Some(ParamSet {
            names: p.names.clone(),
            tensors: ema.iter().zip(&p.tensors).map(|(e, t)| Tensor::from_vec(t.shape, e.clone())).collect(),
        })
    }

    /// The network to sample with: moving-average weights when enabled.
    pub fn inference_net(&self) -> UNet<f32> {
        let mut net = self.net.clone();
        if let Some(p) = self.averaged_params() {
            *net.params_mut() = p;
        }
        net
    }

    pub fn into_net(self) -> UNet<f32> {
        self.inference_net()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn checkpoint(&self, sched: &NoiseSchedule) -> Checkpoint {
        let as_tensors = |bufs: &[Vec<f32>]| {
            bufs.iter()
                .zip(&self.net.params().tensors)
                .map(|(b, t)| Tensor::from_vec(t.shape, b.clone()))
                .collect()
        };
        Checkpoint {
            net_config: self.net.config().clone(),
            params: self.net.params().clone(),
            schedule_kind: sched.kind(),
            schedule_t_train: sched.t_train(),
            schedule_fingerprint: sched.fingerprint(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            adam: Some(AdamState {
                m: as_tensors(&self.adam.m),
                v: as_tensors(&self.adam.v),
            }),
            ema: self.averaged_params(),
        }
    }

    /// Draws a batch of training examples from `dataset`.
    pub fn draw_batch(&mut self, dataset: &[RangeImage], task: &TaskConfig, sched: &NoiseSchedule) -> Result<Vec<TrainingExample>> {
        let mut batch = Vec::with_capacity(self.hyper.batch_size);
        while batch.len() < self.hyper.batch_size {
            let idx = self.rng.gen_range(0..dataset.len());
            let ex = training_example(&dataset[idx], task, sched, self.rng.gen())?;
            // masks without unknown pixels carry no loss; draw again
            if ex.mask.unknown_count() > 0 {
                batch.push(ex);
            }
        }
        Ok(batch)
    }

    /// One optimizer update on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[TrainingExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        for ex in batch {
            ex.mask.require_unknown()?;
        }
        let (h, w) = (batch[0].mask.height, batch[0].mask.width);
        let hw = h * w;
        let n = batch.len();
        let coords = coordinate_planes(h, w);
        let mut input = Vec::with_capacity(n * IN_CHANNELS * hw);
        let mut target = Vec::with_capacity(n * 2 * hw);
        let mut weight = Vec::with_capacity(n * 2 * hw);
        for ex in batch {
            if ex.mask.height != h || ex.mask.width != w || ex.input.len() != 2 * hw {
                return Err(Error::shape("batch examples differ in size"));
            }
            input.extend_from_slice(&ex.input);
            input.extend(ex.mask.to_f32());
            input.extend_from_slice(&coords);
            target.extend_from_slice(&ex.eps);
            let wt = 1.0 / (n * 2 * ex.mask.unknown_count()) as f32;
            for _ in 0..2 {
                weight.extend(ex.mask.bits.iter().map(|&b| if b == 0 { wt } else { 0.0 }));
            }
        }
        let timesteps: Vec<usize> = batch.iter().map(|e| e.t).collect();

        let mut g = Graph::<f32>::new();
        let params = self.net.bind(&mut g);
        let x = g.leaf(Tensor::from_vec([n, IN_CHANNELS, h, w], input));
        let pred = self.net.forward(&mut g, &params, x, &timesteps)?;
        let loss_var = g.weighted_sse(pred, target, weight);
        let loss = g.value(loss_var).data[0] as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss became {loss} at step {}",
                self.step + 1
            )));
        }
        let grads = g.backward(loss_var);
        let grads: Vec<&[f32]> = params
            .iter()
            .map(|&p| grads.get(p).expect("every parameter feeds the loss"))
            .collect();

        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm {norm} at step {}", self.step + 1)));
        }
        let clip = if norm > self.hyper.grad_clip { self.hyper.grad_clip / norm } else { 1.0 };

        self.step += 1;
        let hp = &self.hyper;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        let step_size = (hp.lr / bc1) as f32;
        let (b1, b2) = (hp.beta1 as f32, hp.beta2 as f32);
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = hp.adam_eps as f32;
        let clip = clip as f32;
        for (pi, grad) in grads.iter().enumerate() {
            let p = &mut self.net.params_mut().tensors[pi].data;
            let m = &mut self.adam.m[pi];
            let v = &mut self.adam.v[pi];
            for j in 0..p.len() {
                let gj = grad[j] * clip;
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        if let Some(ema) = &mut self.ema {
            let d = hp.ema_decay as f32;
            for (e, t) in ema.iter_mut().zip(&self.net.params().tensors) {
                for (a, &b) in e.iter_mut().zip(&t.data) {
                    *a = d * *a + (1.0 - d) * b;
                }
            }
        }
        self.losses.push(loss);
        Ok(loss)
    }

    /// Runs `steps` updates, calling `observer` after each with the step
    /// number and loss.
    pub fn run(
        &mut self,
        dataset: &[RangeImage],
        task: &TaskConfig,
        sched: &NoiseSchedule,
        steps: usize,
        observer: &mut dyn FnMut(&Trainer, u64, f64) -> Result<()>,
    ) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::config("training dataset is empty"));
        }
        task.validate()?;
        for _ in 0..steps {
            let batch = self.draw_batch(dataset, task, sched)?;
            let loss = self.step(&batch)?;
            observer(self, self.step, loss)?;
        }
        Ok(())
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// Trains a fresh network for `hyper.steps` updates.
pub fn train(
    dataset: &[RangeImage],
    task: &TaskConfig,
    sched: &NoiseSchedule,
    config: NetConfig,
    hyper: TrainHyper,
) -> Result<TrainOutcome> {
    let steps = hyper.steps;
    let mut trainer = Trainer::new(config, hyper, sched)?;
    trainer.run(dataset, task, sched, steps, &mut |_, _, _| Ok(()))?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(sched),
        losses: trainer.losses.clone(),
    })
}
