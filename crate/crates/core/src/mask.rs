//! Inpainting masks. A value of 1 marks a known (observed) pixel, 0 a pixel
//! the model has to generate.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Straight,
    Jitter,
    Pepper,
    Upsample,
}

impl MaskKind {
    pub const ALL: [MaskKind; 4] = [Self::Straight, Self::Jitter, Self::Pepper, Self::Upsample];

    pub fn letter(self) -> char {
        match self {
            Self::Straight => 'S',
            Self::Jitter => 'J',
            Self::Pepper => 'P',
            Self::Upsample => 'U',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Jitter => "jitter",
            Self::Pepper => "pepper",
            Self::Upsample => "upsample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mask kind {s:?}; valid: straight, jitter, pepper, upsample")))
    }
}

/// How a mask was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Straight { ratio: f64, rows: Vec<usize>, seed: u64 },
    Jitter { ratio: f64, rows: Vec<usize>, seed: u64 },
    Pepper { p: f64, seed: u64 },
    Upsample { rate: usize },
    Custom,
}

impl Provenance {
    pub fn kind(&self) -> Option<MaskKind> {
        match self {
            Self::Straight { .. } => Some(MaskKind::Straight),
            Self::Jitter { .. } => Some(MaskKind::Jitter),
            Self::Pepper { .. } => Some(MaskKind::Pepper),
            Self::Upsample { .. } => Some(MaskKind::Upsample),
            Self::Custom => None,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Straight { ratio, seed, .. } => write!(f, "straight(ratio={ratio:.4},seed={seed})"),
            Self::Jitter { ratio, seed, .. } => write!(f, "jitter(ratio={ratio:.4},seed={seed})"),
            Self::Pepper { p, seed } => write!(f, "pepper(p={p:.4},seed={seed})"),
            Self::Upsample { rate } => write!(f, "upsample(rate={rate})"),
            Self::Custom => f.write_str("custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
    pub provenance: Provenance,
}

impl Mask {
    fn filled(height: usize, width: usize, value: u8, provenance: Provenance) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
            provenance,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::range("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            bits,
            provenance: Provenance::Custom,
        })
    }

    pub fn is_known(&self, idx: usize) -> bool {
        self.bits[idx] == 1
    }

    pub fn known_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn unknown_count(&self) -> usize {
        self.bits.len() - self.known_count()
    }

    pub fn known_fraction(&self) -> f64 {
        self.known_count() as f64 / self.bits.len() as f64
    }

    /// Mask as 0/1 floats, for blending.
    pub fn to_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }

    /// Errors unless at least one pixel is left to generate.
    pub fn require_unknown(&self) -> Result<()> {
        if self.unknown_count() == 0 {
            Err(Error::NoUnknownPixels)
        } else {
            Ok(())
        }
    }

    pub fn row_is_uniform(&self, row: usize) -> bool {
        let r = &self.bits[row * self.width..(row + 1) * self.width];
        r.iter().all(|&b| b == r[0])
    }

    /// 8-bit grayscale view (255 = known).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b * 255).collect()
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::range(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Keeps rows `r` with `r % rate == 0`.
pub fn upsampling_mask(height: usize, width: usize, rate: usize) -> Result<Mask> {
    if rate == 0 || rate > height {
        return Err(Error::config(format!(
            "upsampling rate must lie in [1, {height}], got {rate}"
        )));
    }
    let mut m = Mask::filled(height, width, 0, Provenance::Upsample { rate });
    for row in (0..height).step_by(rate) {
        m.bits[row * width..(row + 1) * width].fill(1);
    }
    Ok(m)
}

fn pick_rows(height: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = ((ratio * height as f64).round() as usize).min(height);
    let mut rows = sample(rng, height, count).into_vec();
    rows.sort_unstable();
    rows
}

/// Masks `round(ratio * H)` distinct random rows.
pub fn straight_lines_mask(height: usize, width: usize, ratio: f64, seed: u64) -> Result<Mask> {
    check_fraction("ratio", ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = pick_rows(height, ratio, &mut rng);
    let mut m = Mask::filled(height, width, 1, Provenance::Custom);
    for &row in &rows {
        m.bits[row * width..(row + 1) * width].fill(0);
    }
    m.provenance = Provenance::Straight { ratio, rows, seed };
    Ok(m)
}

/// Like [`straight_lines_mask`], but each masked pixel of a selected row is
/// displaced vertically by -1, 0 or +1 independently per column.
pub fn jitter_lines_mask(height: usize, width: usize, ratio: f64, seed: u64) -> Result<Mask> {
    check_fraction("ratio", ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = pick_rows(height, ratio, &mut rng);
    let mut m = Mask::filled(height, width, 1, Provenance::Custom);
    for &row in &rows {
        for col in 0..width {
            let offset: i64 = rng.gen_range(-1..=1);
            let r = (row as i64 + offset).clamp(0, height as i64 - 1) as usize;
            m.bits[r * width + col] = 0;
        }
    }
    m.provenance = Provenance::Jitter { ratio, rows, seed };
    Ok(m)
}

/// Masks each pixel independently with probability `p`.
pub fn pepper_mask(height: usize, width: usize, p: f64, seed: u64) -> Result<Mask> {
    check_fraction("p", p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..height * width)
        .map(|_| u8::from(!rng.gen_bool(p)))
        .collect();
    Ok(Mask {
        height,
        width,
        bits,
        provenance: Provenance::Pepper { p, seed },
    })
}

/// Which masks a model trains on, and with which parameter ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub kinds: Vec<MaskKind>,
    pub upsample_rates: Vec<usize>,
    pub line_ratio: (f64, f64),
    pub pepper_rate: (f64, f64),
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self::preset('C').unwrap()
    }
}

impl TaskConfig {
    pub fn upsample_only(rates: &[usize]) -> Self {
        Self {
            kinds: vec![MaskKind::Upsample],
            upsample_rates: rates.to_vec(),
            line_ratio: (0.5, 0.9),
            pepper_rate: (0.1, 0.9),
        }
    }

    /// Mask mixes of the training-configuration table (A through J; J
    /// shares C's mask and differs only in its data sources).
    pub fn preset(name: char) -> Result<Self> {
        use MaskKind::*;
        let (kinds, rates): (&[MaskKind], &[usize]) = match name.to_ascii_uppercase() {
            'A' => (&[Upsample], &[2, 4, 8]),
            'B' => (&[Upsample], &[2]),
            'C' | 'J' => (&[Upsample], &[4]),
            'D' => (&[Upsample], &[8]),
            'E' => (&[Straight, Jitter, Pepper, Upsample], &[4]),
            'F' => (&[Straight, Jitter, Pepper, Upsample], &[2, 4, 8]),
            'G' => (&[Straight, Pepper, Upsample], &[4]),
            'H' => (&[Straight, Jitter, Upsample], &[4]),
            'I' => (&[Jitter, Upsample], &[4]),
            other => return Err(Error::config(format!("unknown task preset '{other}'"))),
        };
        Ok(Self {
            kinds: kinds.to_vec(),
            upsample_rates: rates.to_vec(),
            ..Self::upsample_only(&[])
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::config("task enables no mask kinds"));
        }
        if self.kinds.contains(&MaskKind::Upsample)
            && (self.upsample_rates.is_empty() || self.upsample_rates.contains(&0))
        {
            return Err(Error::config("upsampling task needs positive rates"));
        }
        for (name, (lo, hi)) in [("line ratio", self.line_ratio), ("pepper rate", self.pepper_rate)] {
            if !(0.0 < lo && lo <= hi && hi < 1.0) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] not inside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Compact label such as `SJP+U4` or `U2,4,8`.
    pub fn label(&self) -> String {
        let mut s: String = self
            .kinds
            .iter()
            .filter(|k| **k != MaskKind::Upsample)
            .map(|k| k.letter())
            .collect();
        if self.kinds.contains(&MaskKind::Upsample) {
            if !s.is_empty() {
                s.push('+');
            }
            let rates: Vec<String> = self.upsample_rates.iter().map(|r| r.to_string()).collect();
            s.push('U');
            s.push_str(&rates.join(","));
        }
        s
    }
}

/// Draws one training mask: a uniformly chosen enabled kind with its
/// parameter drawn uniformly from the configured range.
pub fn sample_training_mask(cfg: &TaskConfig, height: usize, width: usize, seed: u64) -> Result<Mask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
    let sub_seed: u64 = rng.gen();
    match kind {
        MaskKind::Upsample => {
            let rate = cfg.upsample_rates[rng.gen_range(0..cfg.upsample_rates.len())];
            upsampling_mask(height, width, rate)
        }
        MaskKind::Straight => {
            let ratio = rng.gen_range(cfg.line_ratio.0..=cfg.line_ratio.1);
            straight_lines_mask(height, width, ratio, sub_seed)
        }
        MaskKind::Jitter => {
            let ratio = rng.gen_range(cfg.line_ratio.0..=cfg.line_ratio.1);
            jitter_lines_mask(height, width, ratio, sub_seed)
        }
        MaskKind::Pepper => {
            let p = rng.gen_range(cfg.pepper_rate.0..=cfg.pepper_rate.1);
            pepper_mask(height, width, p, sub_seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn upsampling_examples() {
        let m = upsampling_mask(8, 4, 4).unwrap();
        let known_rows: Vec<usize> = (0..8).filter(|&r| m.bits[r * 4] == 1).collect();
        assert_eq!(known_rows, vec![0, 4]);
        assert_eq!(m.unknown_count(), 24);
        assert_eq!(m.unknown_count() as f64 / 32.0, 0.75);

        assert_eq!(upsampling_mask(8, 4, 1).unwrap().unknown_count(), 0);
        let m = upsampling_mask(64, 16, 4).unwrap();
        assert_eq!(m.known_count() / 16, 16);
        assert!(matches!(upsampling_mask(8, 4, 9), Err(Error::Config(_))));
    }

    #[test]
    fn straight_lines_examples() {
        assert_eq!(straight_lines_mask(64, 32, 0.0, 1).unwrap().unknown_count(), 0);
        assert_eq!(straight_lines_mask(64, 32, 1.0, 1).unwrap().known_count(), 0);
        let m = straight_lines_mask(64, 32, 0.75, 9).unwrap();
        let masked_rows = (0..64).filter(|&r| m.bits[r * 32] == 0).count();
        assert_eq!(masked_rows, 48);
        assert!((0..64).all(|r| m.row_is_uniform(r)));
        assert!(straight_lines_mask(8, 8, 1.5, 0).is_err());
    }

    #[test]
    fn jitter_stays_near_selected_rows() {
        let (h, w) = (64, 1024);
        for seed in 0..3 {
            let m = jitter_lines_mask(h, w, 0.5, seed).unwrap();
            let Provenance::Jitter { rows, .. } = &m.provenance else {
                panic!("wrong provenance");
            };
            assert_eq!(rows.len(), 32);
            for idx in (0..h * w).filter(|&i| m.bits[i] == 0) {
                let r = idx / w;
                assert!(rows.iter().any(|&s| s.abs_diff(r) <= 1));
            }
            let expected = 32 * w;
            assert!(m.unknown_count().abs_diff(expected) <= h * w / 2);
            assert_eq!(m, jitter_lines_mask(h, w, 0.5, seed).unwrap());
        }
        assert_eq!(jitter_lines_mask(16, 16, 0.0, 3).unwrap().unknown_count(), 0);
    }

    #[test]
    fn jitter_masks_at_most_one_pixel_per_selected_row_and_column() {
        let m = jitter_lines_mask(32, 256, 0.6, 11).unwrap();
        let rows = match &m.provenance {
            Provenance::Jitter { rows, .. } => rows.len(),
            _ => unreachable!(),
        };
        for col in 0..256 {
            let hidden = (0..32).filter(|&r| !m.is_known(r * 256 + col)).count();
            assert!(hidden >= 1 && hidden <= rows, "column {col}: {hidden}");
        }
    }

    #[test]
    fn pepper_examples() {
        assert_eq!(pepper_mask(64, 64, 0.0, 5).unwrap().unknown_count(), 0);
        assert_eq!(pepper_mask(64, 64, 1.0, 5).unwrap().known_count(), 0);
        let m = pepper_mask(64, 1024, 0.5, 5).unwrap();
        assert!((31744..=33792).contains(&m.unknown_count()));
    }

    #[test]
    fn single_option_task_always_gives_rate_four() {
        let cfg = TaskConfig::upsample_only(&[4]);
        let reference = upsampling_mask(32, 64, 4).unwrap();
        for seed in 0..20 {
            assert_eq!(sample_training_mask(&cfg, 32, 64, seed).unwrap(), reference);
        }
    }

    #[test]
    fn mixed_rates_are_uniform() {
        let cfg = TaskConfig::upsample_only(&[2, 4, 8]);
        let mut counts = [0usize; 3];
        for seed in 0..3000 {
            match sample_training_mask(&cfg, 32, 8, seed).unwrap().provenance {
                Provenance::Upsample { rate: 2 } => counts[0] += 1,
                Provenance::Upsample { rate: 4 } => counts[1] += 1,
                Provenance::Upsample { rate: 8 } => counts[2] += 1,
                p => panic!("unexpected {p}"),
            }
        }
        for c in counts {
            assert!(c.abs_diff(1000) <= 120, "{counts:?}");
        }
    }

    #[test]
    fn mixed_kinds_respect_parameter_ranges() {
        let cfg = TaskConfig::preset('E').unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            let m = sample_training_mask(&cfg, 32, 64, seed).unwrap();
            assert_eq!(m, sample_training_mask(&cfg, 32, 64, seed).unwrap());
            match &m.provenance {
                Provenance::Straight { ratio, .. } | Provenance::Jitter { ratio, .. } => {
                    assert!((0.5..=0.9).contains(ratio))
                }
                Provenance::Pepper { p, .. } => assert!((0.1..=0.9).contains(p)),
                Provenance::Upsample { rate } => assert_eq!(*rate, 4),
                Provenance::Custom => unreachable!(),
            }
            seen.insert(m.provenance.kind().unwrap());
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn presets_and_labels() {
        assert_eq!(TaskConfig::preset('A').unwrap().label(), "U2,4,8");
        assert_eq!(TaskConfig::preset('C').unwrap().label(), "U4");
        assert_eq!(TaskConfig::preset('F').unwrap().label(), "SJP+U2,4,8");
        assert_eq!(TaskConfig::preset('G').unwrap().label(), "SP+U4");
        assert!(TaskConfig::preset('Z').is_err());
        let mut bad = TaskConfig::default();
        bad.kinds.clear();
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn upsampling_known_fraction(h in 2usize..80, w in 1usize..8, rate in 1usize..10) {
            prop_assume!(rate <= h);
            let m = upsampling_mask(h, w, rate).unwrap();
            prop_assert_eq!(m.known_count(), h.div_ceil(rate) * w);
            prop_assert!((0..h).all(|r| m.row_is_uniform(r)));
        }

        #[test]
        fn stochastic_masks_are_binary_and_seeded(seed in any::<u64>(), ratio in 0.0f64..=1.0) {
            for m in [
                straight_lines_mask(16, 8, ratio, seed).unwrap(),
                jitter_lines_mask(16, 8, ratio, seed).unwrap(),
                pepper_mask(16, 8, ratio, seed).unwrap(),
            ] {
                prop_assert!(m.bits.iter().all(|&b| b <= 1));
            }
            prop_assert_eq!(pepper_mask(16, 8, ratio, seed).unwrap(), pepper_mask(16, 8, ratio, seed).unwrap());
            prop_assert_eq!(straight_lines_mask(16, 8, ratio, seed).unwrap(), straight_lines_mask(16, 8, ratio, seed).unwrap());
        }
    }
}
