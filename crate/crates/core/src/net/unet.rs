//! Efficient-U-Net style noise predictor.
//!
//! Downsampling levels pool first and convolve afterwards; upsampling
//! levels convolve first and then upsample. Lower resolutions carry more
//! residual blocks. The timestep enters every residual block as a learned
//! per-channel shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

/// Blended depth + reflectance, mask, row and column coordinates.
pub const IN_CHANNELS: usize = 5;
pub const OUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub blocks: Vec<usize>,
    pub temb_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            blocks: vec![1, 2, 4],
            temb_dim: 128,
        }
    }
}

impl NetConfig {
    /// Small enough for CPU training in minutes.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            channel_mults: vec![1, 2, 4],
            blocks: vec![1, 2, 2],
            temb_dim: 64,
        }
    }

    /// A few hundred parameters, for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            base_channels: 2,
            channel_mults: vec![1, 2],
            blocks: vec![1, 1],
            temb_dim: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.temb_dim == 0 {
            return Err(Error::config("base_channels and temb_dim must be positive"));
        }
        if self.temb_dim % 2 != 0 {
            return Err(Error::config(format!("temb_dim must be even, got {}", self.temb_dim)));
        }
        if self.channel_mults.is_empty() || self.channel_mults.len() != self.blocks.len() {
            return Err(Error::config("channel_mults and blocks need one entry per resolution"));
        }
        if self.channel_mults.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::config("channel multipliers and block counts must be positive"));
        }
        if self.channel_mults.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("channel multipliers must be nondecreasing"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    /// Height and width must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height % m != 0 || width % m != 0 {
            return Err(Error::config(format!(
                "image {height}x{width} not divisible by {m} for {} levels",
                self.levels()
            )));
        }
        Ok(())
    }

    /// Canonical text used for fingerprints and checkpoints.
    pub fn describe(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "unet in={IN_CHANNELS} out={OUT_CHANNELS} base={} mults={} blocks={} temb={}",
            self.base_channels,
            join(&self.channel_mults),
            join(&self.blocks),
            self.temb_dim
        )
    }

    pub fn fingerprint(&self) -> u64 {
        crate::fnv1a(self.describe().as_bytes())
    }

    /// Closed-form parameter count.
    ///
    /// With `conv(i, o, k) = i*o*k*k + o`, `lin(i, o) = i*o + o`,
    /// `gn(c) = 2c` and `res(i, o) = gn(i) + conv(i, o, 3) + lin(E, o) +
    /// gn(o) + conv(o, o, 3) + [i != o] conv(i, o, 1)`, the total is
    /// `2 lin(E, E) + conv(5, C0, 3)`
    /// `+ sum_l ([l > 0] conv(C_{l-1}, C_l, 3) + B_l res(C_l, C_l))`
    /// `+ sum_{l < L-1} (conv(C_{l+1}, C_l, 3) + res(2 C_l, C_l) + (B_l - 1) res(C_l, C_l))`
    /// `+ gn(C0) + conv(C0, 2, 3)`.
    pub fn param_count(&self) -> usize {
        let e = self.temb_dim;
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let lin = |i: usize, o: usize| i * o + o;
        let gn = |c: usize| 2 * c;
        let res = |i: usize, o: usize| {
            gn(i) + conv(i, o, 3) + lin(e, o) + gn(o) + conv(o, o, 3) + if i != o { conv(i, o, 1) } else { 0 }
        };
        let l = self.levels();
        let c = |k: usize| self.channels(k);
        let mut total = 2 * lin(e, e) + conv(IN_CHANNELS, c(0), 3);
        for k in 0..l {
            if k > 0 {
                total += conv(c(k - 1), c(k), 3);
            }
            total += self.blocks[k] * res(c(k), c(k));
        }
        for k in 0..l - 1 {
            total += conv(c(k + 1), c(k), 3) + res(2 * c(k), c(k)) + (self.blocks[k] - 1) * res(c(k), c(k));
        }
        total + gn(c(0)) + conv(c(0), OUT_CHANNELS, 3)
    }
}

/// Sinusoidal embedding `[sin(t w_k) .., cos(t w_k) ..]`,
/// `w_k = 10000^(-2k/dim)`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(format!("embedding dimension must be even, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| 10000f64.powf(-2.0 * k as f64 / dim as f64))
        .collect();
    Ok(freqs
        .iter()
        .map(|w| (t * w).sin())
        .chain(freqs.iter().map(|w| (t * w).cos()))
        .collect())
}

/// Row coordinate (linear in elevation, top row 0) and azimuth phase
/// `0.5 + 0.5 cos(azimuth)` of each column center, as two planes.
pub fn coordinate_planes(height: usize, width: usize) -> Vec<f32> {
    let hw = height * width;
    let mut out = vec![0.0f32; 2 * hw];
    let denom = (height.max(2) - 1) as f64;
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = (y as f64 / denom) as f32;
            let az = (0.5 - (x as f64 + 0.5) / width as f64) * std::f64::consts::TAU;
            out[hw + y * width + x] = (0.5 + 0.5 * az.cos()) as f32;
        }
    }
    out
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn groups_for(channels: usize) -> usize {
    let mut g = 8.min(channels);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

struct Builder<'a, T> {
    params: ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: [usize; 4], bound: f64) {
        let n = shape.iter().product();
        let data = if bound == 0.0 {
            vec![T::zero(); n]
        } else {
            (0..n).map(|_| T::of(self.rng.gen_range(-bound..bound))).collect()
        };
        self.params.names.push(name);
        self.params.tensors.push(Tensor::from_vec(shape, data));
    }

    fn constant(&mut self, name: String, shape: [usize; 4], value: f64) {
        let n = shape.iter().product();
        self.params.names.push(name);
        self.params.tensors.push(Tensor::from_vec(shape, vec![T::of(value); n]));
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let bound = if zero { 0.0 } else { (1.0 / (cin * k * k) as f64).sqrt() * 3f64.sqrt() };
        self.add(format!("{name}.w"), [cout, cin, k, k], bound);
        self.constant(format!("{name}.b"), [cout, 1, 1, 1], 0.0);
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        self.add(format!("{name}.w"), [fout, fin, 1, 1], (3.0 / fin as f64).sqrt());
        self.constant(format!("{name}.b"), [fout, 1, 1, 1], 0.0);
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.constant(format!("{name}.g"), [c, 1, 1, 1], 1.0);
        self.constant(format!("{name}.b"), [c, 1, 1, 1], 0.0);
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, temb: usize) {
        self.norm(&format!("{name}.gn1"), cin);
        self.conv(&format!("{name}.conv1"), cin, cout, 3, false);
        self.linear(&format!("{name}.temb"), temb, cout);
        self.norm(&format!("{name}.gn2"), cout);
        self.conv(&format!("{name}.conv2"), cout, cout, 3, false);
        if cin != cout {
            self.conv(&format!("{name}.skip"), cin, cout, 1, false);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: NetConfig,
    params: ParamSet<T>,
    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))` per timestep.
    noise_skip: Option<Vec<(f64, f64)>>,
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamSet {
                names: Vec::new(),
                tensors: Vec::new(),
            },
            rng: &mut rng,
        };
        let e = config.temb_dim;
        b.linear("temb.fc1", e, e);
        b.linear("temb.fc2", e, e);
        b.conv("in", IN_CHANNELS, config.channels(0), 3, false);
        for l in 0..config.levels() {
            let c = config.channels(l);
            if l > 0 {
                b.conv(&format!("down{l}.conv"), config.channels(l - 1), c, 3, false);
            }
            for i in 0..config.blocks[l] {
                b.res(&format!("down{l}.res{i}"), c, c, e);
            }
        }
        for l in (0..config.levels() - 1).rev() {
            let c = config.channels(l);
            b.conv(&format!("up{l}.conv"), config.channels(l + 1), c, 3, false);
            for i in 0..config.blocks[l] {
                let cin = if i == 0 { 2 * c } else { c };
                b.res(&format!("up{l}.res{i}"), cin, c, e);
            }
        }
        b.norm("out.gn", config.channels(0));
        b.conv("out.conv", config.channels(0), OUT_CHANNELS, 3, true);
        let params = b.params;
        Ok(Self { config, params, noise_skip: None })
    }

    pub fn from_params(config: NetConfig, params: ParamSet<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.names != params.names {
            return Err(Error::Checkpoint("parameter names do not match the architecture".into()));
        }
        for (name, (a, b)) in params.names.iter().zip(reference.params.tensors.iter().zip(&params.tensors)) {
            if a.shape != b.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape, a.shape
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("parameters contain non-finite values".into()));
        }
        Ok(Self { config, params, noise_skip: None })
    }

    /// Makes the prediction `sqrt(ab) * net + sqrt(1 - ab) * z`, where `z`
    /// is the noisy input. The raw network output then plays the role of a
    /// velocity and the implied clean sample stays bounded at high noise.
    pub fn with_noise_skip(mut self, sched: &NoiseSchedule) -> Self {
        self.noise_skip = Some(
            sched
                .alpha_bars()
                .iter()
                .map(|&ab| (ab.sqrt(), (1.0 - ab).max(0.0).sqrt()))
                .collect(),
        );
        self
    }

    pub fn has_noise_skip(&self) -> bool {
        self.noise_skip.is_some()
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Re-draws every parameter, the zero-initialized output layer included.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut self.params.tensors {
            for v in &mut t.data {
                *v = T::of(rng.gen_range(-scale..scale));
            }
        }
    }

    /// Places parameters on the tape; returns their variables in order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    /// Records the forward pass for a `[N, 5, H, W]` input and one timestep
    /// per sample; returns the `[N, 2, H, W]` prediction.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], input: Var, timesteps: &[usize]) -> Result<Var> {
        let [n, c, h, w] = g.shape(input);
        if c != IN_CHANNELS {
            return Err(Error::shape(format!("network expects {IN_CHANNELS} input channels, got {c}")));
        }
        if timesteps.len() != n {
            return Err(Error::shape("one timestep per batch sample required"));
        }
        self.config.check_size(h, w)?;
        let e = self.config.temb_dim;
        let mut emb = Vec::with_capacity(n * e);
        for &t in timesteps {
            emb.extend(timestep_embedding(t as f64, e)?.into_iter().map(T::of));
        }
        let mut f = Forward {
            g,
            params,
            names: &self.params.names,
            cursor: 0,
        };
        let emb = f.g.leaf(Tensor::from_vec([n, e, 1, 1], emb));
        let emb = f.linear(emb);
        let emb = f.g.silu(emb);
        let emb = f.linear(emb);
        let emb = f.g.silu(emb);

        let mut hcur = f.conv(input);
        let mut skips = Vec::new();
        for l in 0..self.config.levels() {
            if l > 0 {
                hcur = f.g.avg_pool2(hcur);
                hcur = f.conv(hcur);
            }
            for _ in 0..self.config.blocks[l] {
                hcur = f.res(hcur, emb);
            }
            skips.push(hcur);
        }
        for l in (0..self.config.levels() - 1).rev() {
            hcur = f.conv(hcur);
            hcur = f.g.upsample2(hcur);
            hcur = f.g.concat(hcur, skips[l]);
            for _ in 0..self.config.blocks[l] {
                hcur = f.res(hcur, emb);
            }
        }
        let hcur = f.norm(hcur);
        let hcur = f.g.silu(hcur);
        let out = f.conv(hcur);
        debug_assert_eq!(f.cursor, params.len());
        let Some(table) = &self.noise_skip else { return Ok(out) };
        let mut scale = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n * OUT_CHANNELS * h * w);
        let xin = &f.g.value(input).data;
        for (bi, &t) in timesteps.iter().enumerate() {
            let &(a, b) = table
                .get(t)
                .ok_or_else(|| Error::range(format!("timestep {t} outside the noise schedule")))?;
            scale.push(T::of(a));
            let start = bi * IN_CHANNELS * h * w;
            offset.extend(xin[start..start + OUT_CHANNELS * h * w].iter().map(|&v| T::of(b) * v));
        }
        Ok(f.g.scale_offset(out, scale, &offset))
    }

    /// Pure inference for a batch; `input` is `[N, 5, H, W]`.
    pub fn predict_batch(&self, input: Tensor<T>, timesteps: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g);
        let x = g.leaf(input);
        let out = self.forward(&mut g, &params, x, timesteps)?;
        Ok(g.value(out).clone())
    }
}

/// Assembles the five-channel network input for one image.
pub fn network_input<T: Scalar>(blended: &[f32], mask: &[f32], height: usize, width: usize) -> Result<Tensor<T>> {
    network_input_with_coords(blended, mask, &coordinate_planes(height, width), height, width)
}

pub fn network_input_with_coords<T: Scalar>(
    blended: &[f32],
    mask: &[f32],
    coords: &[f32],
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let hw = height * width;
    if blended.len() != 2 * hw || mask.len() != hw || coords.len() != 2 * hw {
        return Err(Error::shape(format!("network input planes do not match {height}x{width}")));
    }
    let data = blended
        .iter()
        .chain(mask)
        .chain(coords)
        .map(|&v| T::of(v as f64))
        .collect();
    Ok(Tensor::from_vec([1, IN_CHANNELS, height, width], data))
}

struct Forward<'a, T> {
    g: &'a mut Graph<T>,
    params: &'a [Var],
    names: &'a [String],
    cursor: usize,
}

impl<T: Scalar> Forward<'_, T> {
    fn next(&mut self, suffix: &str) -> Var {
        debug_assert!(self.names[self.cursor].ends_with(suffix), "{}", self.names[self.cursor]);
        self.cursor += 1;
        self.params[self.cursor - 1]
    }

    fn conv(&mut self, x: Var) -> Var {
        let w = self.next(".w");
        let b = self.next(".b");
        self.g.conv(x, w, b)
    }

    fn linear(&mut self, x: Var) -> Var {
        let w = self.next(".w");
        let b = self.next(".b");
        self.g.linear(x, w, b)
    }

    fn norm(&mut self, x: Var) -> Var {
        let gamma = self.next(".g");
        let beta = self.next(".b");
        let c = self.g.shape(x)[1];
        self.g.group_norm(x, gamma, beta, groups_for(c))
    }

    fn res(&mut self, x: Var, emb: Var) -> Var {
        let cin = self.g.shape(x)[1];
        let h = self.norm(x);
        let h = self.g.silu(h);
        let h = self.conv(h);
        let cout = self.g.shape(h)[1];
        let shift = self.linear(emb);
        let h = self.g.channel_shift(h, shift);
        let h = self.norm(h);
        let h = self.g.silu(h);
        let h = self.conv(h);
        let skip = if cin != cout { self.conv(x) } else { x };
        self.g.add(h, skip)
    }
}

impl Denoiser for UNet<f32> {
    fn predict(&self, input: &[f32], mask: &[f32], t: usize, height: usize, width: usize) -> Result<Vec<f32>> {
        let x = network_input::<f32>(input, mask, height, width)?;
        Ok(self.predict_batch(x, &[t])?.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_examples() {
        let e = timestep_embedding(0.0, 8).unwrap();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        let e = timestep_embedding(1.0, 4).unwrap();
        let expected = [1f64.sin(), 0.01f64.sin(), 1f64.cos(), 0.01f64.cos()];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = timestep_embedding(917.0, 128).unwrap();
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(timestep_embedding(3.0, 7).is_err());
    }

    #[test]
    fn noise_skip_mixes_raw_output_with_noisy_input() {
        let sched = NoiseSchedule::new(64, crate::diffusion::ScheduleKind::Cosine).unwrap();
        let mut raw = UNet::<f64>::new(NetConfig::tiny(), 3).unwrap();
        raw.randomize(4, 0.2);
        let skip = raw.clone().with_noise_skip(&sched);
        let (h, w) = (8, 16);
        let input: Vec<f32> = (0..2 * h * w).map(|i| (i as f32 * 0.37).sin()).collect();
        let mask = vec![0.0f32; h * w];
        for t in [1, 20, 64] {
            let x = network_input::<f64>(&input, &mask, h, w).unwrap();
            let a = raw.predict_batch(x.clone(), &[t]).unwrap();
            let b = skip.predict_batch(x, &[t]).unwrap();
            let ab = sched.alpha_bar(t);
            for i in 0..a.len() {
                let expect = ab.sqrt() * a.data[i] + (1.0 - ab).sqrt() * input[i] as f64;
                assert!((b.data[i] - expect).abs() < 1e-12);
            }
        }
        assert!(skip.predict_batch(Tensor::zeros([1, IN_CHANNELS, h, w]), &[65]).is_err());
    }

    #[test]
    fn param_count_matches_closed_form() {
        for cfg in [NetConfig::default(), NetConfig::desk(), NetConfig::tiny()] {
            let net = UNet::<f32>::new(cfg.clone(), 1).unwrap();
            assert_eq!(net.params().scalar_count(), cfg.param_count(), "{}", cfg.describe());
        }
        // hand count for the tiny net (C0 = 2, C1 = 4, E = 4)
        // temb 2*(16+4)=40, in 5*2*9+2=92, down0 res(2,2)=4+38+10+4+38=94,
        // down1 conv(2,4)=76 + res(4,4)=8+148+20+8+148=332,
        // up0 conv(4,2)=74 + res(4,2)=8+74+10+4+38+10=144, out 4+38=42
        assert_eq!(NetConfig::tiny().param_count(), 894);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetConfig::desk();
        cfg.channel_mults = vec![2, 1, 4];
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::desk();
        cfg.temb_dim = 63;
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::desk();
        cfg.blocks.pop();
        assert!(cfg.validate().is_err());
        assert!(NetConfig::desk().check_size(32, 256).is_ok());
        assert!(NetConfig::desk().check_size(30, 256).is_err());
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let net = UNet::<f32>::new(NetConfig::tiny(), 3).unwrap();
        let (h, w) = (4, 8);
        let blended: Vec<f32> = (0..2 * h * w).map(|i| (i as f32 * 0.37).sin() * 5.0).collect();
        let mask = vec![1.0; h * w];
        let out = net.predict(&blended, &mask, 10, h, w).unwrap();
        assert_eq!(out.len(), 2 * h * w);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_for_wide_inputs() {
        let mut net = UNet::<f32>::new(NetConfig::tiny(), 3).unwrap();
        net.randomize(5, 0.5);
        let (h, w) = (4, 8);
        let blended: Vec<f32> = (0..2 * h * w).map(|i| ((i * 7919) % 101) as f32 / 10.0 - 5.0).collect();
        let out = net.predict(&blended, &vec![0.0; h * w], 1024, h, w).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = UNet::<f32>::new(NetConfig::desk(), 0).unwrap();
        let r = net.predict(&vec![0.0; 2 * 30 * 8], &vec![0.0; 30 * 8], 1, 30, 8);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(net.predict(&[0.0; 3], &[0.0; 2], 1, 1, 2).is_err());
    }

    #[test]
    fn coordinates_span_unit_interval() {
        let c = coordinate_planes(4, 8);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[3 * 8], 1.0);
        assert!(c[32..].iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
