//! Finite-difference verification of the analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::unet::{NetConfig, UNet, IN_CHANNELS, OUT_CHANNELS};
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::Result;

/// Network under test.
#[derive(Debug, Clone)]
pub enum Probe {
    /// One 3x3 convolution from the input channels to the output channels.
    SingleConv,
    UNet(NetConfig),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Largest |d loss / d prediction| over pixels excluded from the loss.
    pub excluded_pixel_grad: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol && self.excluded_pixel_grad == 0.0
    }
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
fn rel_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-7;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

struct Setup {
    input: Tensor<f64>,
    timesteps: Vec<usize>,
    target: Vec<f64>,
    weight: Vec<f64>,
}

enum Model {
    Conv(Vec<Tensor<f64>>),
    Net(UNet<f64>),
}

impl Model {
    fn tensors(&self) -> &[Tensor<f64>] {
        match self {
            Model::Conv(t) => t,
            Model::Net(n) => &n.params().tensors,
        }
    }

    fn tensors_mut(&mut self) -> &mut [Tensor<f64>] {
        match self {
            Model::Conv(t) => t,
            Model::Net(n) => &mut n.params_mut().tensors,
        }
    }

    fn name(&self, i: usize) -> String {
        match self {
            Model::Conv(_) => ["conv.w", "conv.b"][i].to_string(),
            Model::Net(n) => n.params().names[i].clone(),
        }
    }

    /// Builds the loss; returns (loss, parameter vars, prediction var).
    fn loss(&self, g: &mut Graph<f64>, s: &Setup) -> Result<(Var, Vec<Var>, Var)> {
        let params: Vec<Var> = self.tensors().iter().map(|t| g.leaf(t.clone())).collect();
        let x = g.leaf(s.input.clone());
        let pred = match self {
            Model::Conv(_) => g.conv(x, params[0], params[1]),
            Model::Net(n) => n.forward(g, &params, x, &s.timesteps)?,
        };
        let loss = g.weighted_sse(pred, s.target.clone(), s.weight.clone());
        Ok((loss, params, pred))
    }

    fn eval(&self, s: &Setup) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _, _) = self.loss(&mut g, s)?;
        Ok(g.value(loss).data[0])
    }
}

/// Compares analytic gradients of a masked squared-error loss against
/// central differences with step `1e-4`, all in 64-bit arithmetic.
pub fn grad_check(probe: &Probe, tol: f64, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = match probe {
        Probe::SingleConv => (3, 4),
        Probe::UNet(cfg) => (2 * cfg.size_multiple(), 4 * cfg.size_multiple()),
    };
    let mut model = match probe {
        Probe::SingleConv => {
            let mut r = |n: usize| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>();
            Model::Conv(vec![
                Tensor::from_vec([OUT_CHANNELS, IN_CHANNELS, 3, 3], r(OUT_CHANNELS * IN_CHANNELS * 9)),
                Tensor::from_vec([OUT_CHANNELS, 1, 1, 1], r(OUT_CHANNELS)),
            ])
        }
        Probe::UNet(cfg) => {
            let sched = NoiseSchedule::new(1024, ScheduleKind::Cosine)?;
            let mut net = UNet::<f64>::new(cfg.clone(), rng.gen())?.with_noise_skip(&sched);
            net.randomize(rng.gen(), 0.5);
            Model::Net(net)
        }
    };
    let hw = h * w;
    let input = Tensor::from_vec(
        [1, IN_CHANNELS, h, w],
        (0..IN_CHANNELS * hw).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    // half the pixels take part in the loss; pixel 0 never does
    let mut mask: Vec<bool> = (0..hw).map(|_| rng.gen_bool(0.5)).collect();
    mask[0] = false;
    mask[1] = true;
    let unknown = mask.iter().filter(|&&m| m).count();
    let weight: Vec<f64> = (0..OUT_CHANNELS)
        .flat_map(|_| mask.iter().map(|&m| if m { 1.0 / (OUT_CHANNELS * unknown) as f64 } else { 0.0 }))
        .collect();
    let target = (0..OUT_CHANNELS * hw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let setup = Setup {
        input,
        timesteps: vec![rng.gen_range(1..1000)],
        target,
        weight,
    };

    let mut g = Graph::new();
    let (loss, params, pred) = model.loss(&mut g, &setup)?;
    let grads = g.backward(loss);
    let analytic: Vec<Vec<f64>> = params.iter().map(|&p| grads.get(p).unwrap().to_vec()).collect();
    let dpred = grads.get(pred).unwrap();
    let excluded_pixel_grad = (0..OUT_CHANNELS * hw)
        .filter(|&i| !mask[i % hw])
        .map(|i| dpred[i].abs())
        .fold(0.0, f64::max);

    const STEP: f64 = 1e-4;
    let mut report = GradCheckReport {
        params_checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        excluded_pixel_grad,
        tol,
    };
    for pi in 0..analytic.len() {
        for j in 0..analytic[pi].len() {
            let orig = model.tensors()[pi].data[j];
            model.tensors_mut()[pi].data[j] = orig + STEP;
            let plus = model.eval(&setup)?;
            model.tensors_mut()[pi].data[j] = orig - STEP;
            let minus = model.eval(&setup)?;
            model.tensors_mut()[pi].data[j] = orig;
            let fd = (plus - minus) / (2.0 * STEP);
            let err = rel_error(analytic[pi][j], fd);
            report.params_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{j}]", model.name(pi));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_gradients_match() {
        let r = grad_check(&Probe::SingleConv, 1e-7, 1).unwrap();
        assert_eq!(r.params_checked, 2 * 5 * 9 + 2);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn tiny_unet_gradients_match() {
        let r = grad_check(&Probe::UNet(NetConfig::tiny()), 1e-4, 2).unwrap();
        assert_eq!(r.params_checked, NetConfig::tiny().param_count());
        assert!(r.params_checked <= 2000);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn excluded_pixels_get_exactly_zero_gradient() {
        let r = grad_check(&Probe::SingleConv, 1.0, 3).unwrap();
        assert_eq!(r.excluded_pixel_grad, 0.0);
    }
}
