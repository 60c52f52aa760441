//! Point clouds, equirectangular range images and the per-channel
//! normalizations that map them into the unit interval.
//!
//! Column convention: azimuth 0 (sensor +x) sits at column `W/2` and azimuth
//! increases towards smaller column indices. Row 0 is the top beam
//! (`fov_up`).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Log-scales a metric range into `[0, 1]`: `log(d + 1) / log(d_max + 1)`.
pub fn normalize_depth(d: f64, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(Error::config(format!("d_max must be positive, got {d_max}")));
    }
    if !(0.0..=d_max).contains(&d) {
        return Err(Error::range(format!("depth {d} outside [0, {d_max}]")));
    }
    Ok(d.ln_1p() / d_max.ln_1p())
}

/// Inverse of [`normalize_depth`]: `(d_max + 1)^v - 1`.
pub fn denormalize_depth(v: f64, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(Error::config(format!("d_max must be positive, got {d_max}")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::range(format!("normalized depth {v} outside [0, 1]")));
    }
    Ok((v * d_max.ln_1p()).exp_m1())
}

/// Raw LiDAR scan in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub reflectance: Vec<f32>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, reflectance: Vec<f32>) -> Result<Self> {
        if points.len() != reflectance.len() {
            return Err(Error::shape(format!(
                "{} points but {} reflectance values",
                points.len(),
                reflectance.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::range(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            reflectance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub height: usize,
    pub width: usize,
    /// Upper edge of the vertical field of view, degrees.
    pub fov_up: f64,
    /// Lower edge of the vertical field of view, degrees.
    pub fov_down: f64,
    /// Largest representable range, meters.
    pub d_max: f64,
    /// Raw reflectance mapped to 0.
    pub reflectance_min: f64,
    /// Raw reflectance mapped to 1.
    pub reflectance_max: f64,
    /// Generated pixels closer than this (meters) decode as "no return".
    pub return_threshold: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 1024,
            fov_up: 3.0,
            fov_down: -25.0,
            d_max: 80.0,
            reflectance_min: 0.0,
            reflectance_max: 1.0,
            return_threshold: 0.5,
        }
    }
}

impl ProjectionConfig {
    /// 32x256 grid used for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 256,
            ..Self::default()
        }
    }

    pub fn with_size(self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::config(format!(
                "projection grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.d_max > 0.0) || !self.d_max.is_finite() {
            return Err(Error::config(format!("d_max must be positive, got {}", self.d_max)));
        }
        if !(self.fov_up > self.fov_down) {
            return Err(Error::config(format!(
                "fov_up ({}) must exceed fov_down ({})",
                self.fov_up, self.fov_down
            )));
        }
        if !(self.reflectance_max > self.reflectance_min) {
            return Err(Error::config("reflectance_max must exceed reflectance_min"));
        }
        if !(0.0..self.d_max).contains(&self.return_threshold) {
            return Err(Error::config("return_threshold must lie in [0, d_max)"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn fov_span(&self) -> f64 {
        self.fov_up - self.fov_down
    }

    /// Row index for an elevation in degrees, clamped to the grid.
    pub fn row_of(&self, elevation_deg: f64) -> usize {
        let r = ((self.fov_up - elevation_deg) / self.fov_span() * self.height as f64).floor();
        r.clamp(0.0, (self.height - 1) as f64) as usize
    }

    /// Column index for an azimuth in radians.
    pub fn col_of(&self, azimuth: f64) -> usize {
        let w = self.width as i64;
        let c = ((0.5 - azimuth / (2.0 * PI)) * self.width as f64).floor() as i64;
        c.rem_euclid(w) as usize
    }

    /// Elevation (degrees) through the center of `row`.
    pub fn row_center_elevation(&self, row: usize) -> f64 {
        self.fov_up - (row as f64 + 0.5) / self.height as f64 * self.fov_span()
    }

    /// Azimuth (radians) through the center of `col`.
    pub fn col_center_azimuth(&self, col: usize) -> f64 {
        (0.5 - (col as f64 + 0.5) / self.width as f64) * 2.0 * PI
    }

    /// Unit ray direction through the center of pixel `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let el = self.row_center_elevation(row).to_radians();
        let az = self.col_center_azimuth(col);
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    pub fn normalize_reflectance(&self, r: f64) -> f64 {
        ((r - self.reflectance_min) / (self.reflectance_max - self.reflectance_min)).clamp(0.0, 1.0)
    }

    pub fn denormalize_reflectance(&self, v: f64) -> f64 {
        self.reflectance_min + v * (self.reflectance_max - self.reflectance_min)
    }

    fn normalized_threshold(&self) -> f64 {
        self.return_threshold.ln_1p() / self.d_max.ln_1p()
    }
}

/// Two-channel (depth, reflectance) equirectangular image, both channels
/// normalized to `[0, 1]`. Invalid pixels hold 0 in both channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub config: ProjectionConfig,
    pub depth: Vec<f32>,
    pub reflectance: Vec<f32>,
    pub valid: Vec<bool>,
}

impl RangeImage {
    /// An image with no returns.
    pub fn empty(config: ProjectionConfig) -> Self {
        let n = config.pixels();
        Self {
            config,
            depth: vec![0.0; n],
            reflectance: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Stores a return at `idx` given metric range and raw reflectance.
    pub fn set_return(&mut self, idx: usize, range: f64, reflectance: f64) -> Result<()> {
        self.depth[idx] = normalize_depth(range, self.config.d_max)? as f32;
        self.reflectance[idx] = self.config.normalize_reflectance(reflectance) as f32;
        self.valid[idx] = true;
        Ok(())
    }

    /// Metric range of pixel `idx` (0 for invalid pixels).
    pub fn range_at(&self, idx: usize) -> f64 {
        if !self.valid[idx] {
            return 0.0;
        }
        denorm_clamped(self.depth[idx] as f64, self.config.d_max)
    }

    /// Depth plane followed by reflectance plane (CHW order).
    pub fn to_channels(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(2 * self.depth.len());
        out.extend_from_slice(&self.depth);
        out.extend_from_slice(&self.reflectance);
        out
    }

    /// Builds an image from generated CHW channels. Values are clamped to
    /// `[0, 1]`; pixels below the return threshold become invalid.
    pub fn from_channels(config: ProjectionConfig, channels: &[f32]) -> Result<Self> {
        let n = config.pixels();
        if channels.len() != 2 * n {
            return Err(Error::shape(format!(
                "expected {} channel values, got {}",
                2 * n,
                channels.len()
            )));
        }
        let threshold = config.normalized_threshold();
        let mut img = Self::empty(config);
        for i in 0..n {
            let d = channels[i].clamp(0.0, 1.0);
            if (d as f64) > threshold {
                img.depth[i] = d;
                img.reflectance[i] = channels[n + i].clamp(0.0, 1.0);
                img.valid[i] = true;
            }
        }
        Ok(img)
    }

    /// Checks shapes, value ranges and the invalid-pixel sentinel.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = self.config.pixels();
        if self.depth.len() != n || self.reflectance.len() != n || self.valid.len() != n {
            return Err(Error::shape("range image planes do not match the config size"));
        }
        for i in 0..n {
            let (d, r) = (self.depth[i], self.reflectance[i]);
            if !(0.0..=1.0).contains(&d) || !(0.0..=1.0).contains(&r) {
                return Err(Error::range(format!("pixel {i} has channel values outside [0, 1]")));
            }
            if !self.valid[i] && (d != 0.0 || r != 0.0) {
                return Err(Error::range(format!("invalid pixel {i} does not hold the 0 sentinel")));
            }
        }
        Ok(())
    }
}

pub(crate) fn denorm_clamped(v: f64, d_max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * d_max.ln_1p()).exp_m1()
}

/// What [`project`] discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub beyond_range: usize,
    pub zero_range: usize,
    /// Points that lost their bin to a nearer point.
    pub occluded: usize,
}

/// Bins a point cloud onto the angular grid; the nearest return wins.
pub fn project(cloud: &PointCloud, config: &ProjectionConfig) -> Result<(RangeImage, ProjectionStats)> {
    config.validate()?;
    if cloud.points.len() != cloud.reflectance.len() {
        return Err(Error::shape("points and reflectance lengths differ"));
    }
    let mut img = RangeImage::empty(*config);
    let mut best = vec![f64::INFINITY; config.pixels()];
    let mut stats = ProjectionStats::default();
    for (p, &refl) in cloud.points.iter().zip(&cloud.reflectance) {
        let [x, y, z] = p.map(f64::from);
        let d = (x * x + y * y + z * z).sqrt();
        if d == 0.0 {
            stats.zero_range += 1;
            continue;
        }
        if d > config.d_max {
            stats.beyond_range += 1;
            continue;
        }
        let elevation = (z / d).clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth = y.atan2(x);
        let idx = config.row_of(elevation) * config.width + config.col_of(azimuth);
        if d < best[idx] {
            if best[idx].is_finite() {
                stats.occluded += 1;
            }
            best[idx] = d;
            img.set_return(idx, d, refl as f64)?;
        } else {
            stats.occluded += 1;
        }
    }
    Ok((img, stats))
}

/// One point per valid pixel, placed along the pixel's center ray.
pub fn unproject(img: &RangeImage) -> PointCloud {
    let cfg = &img.config;
    let mut cloud = PointCloud::default();
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let idx = row * cfg.width + col;
            if !img.valid[idx] {
                continue;
            }
            let range = img.range_at(idx);
            let dir = cfg.ray_direction(row, col);
            cloud
                .points
                .push(dir.map(|c| (c * range) as f32));
            cloud
                .reflectance
                .push(cfg.denormalize_reflectance(img.reflectance[idx] as f64) as f32);
        }
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_depth(0.0, 80.0).unwrap(), 0.0);
        assert_eq!(normalize_depth(80.0, 80.0).unwrap(), 1.0);
        assert!((normalize_depth(8.0, 80.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(denormalize_depth(0.0, 80.0).unwrap(), 0.0);
        assert!((denormalize_depth(1.0, 80.0).unwrap() - 80.0).abs() < 1e-12);
        assert!((denormalize_depth(0.5, 80.0).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_errors() {
        assert!(matches!(normalize_depth(-0.1, 80.0), Err(Error::Range(_))));
        assert!(matches!(normalize_depth(80.5, 80.0), Err(Error::Range(_))));
        assert!(matches!(normalize_depth(1.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(denormalize_depth(1.5, 80.0), Err(Error::Range(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ProjectionConfig::default().validate().is_ok());
        assert!(ProjectionConfig::default().with_size(1, 8).validate().is_err());
        let flipped = ProjectionConfig {
            fov_up: -25.0,
            fov_down: 3.0,
            ..Default::default()
        };
        assert!(flipped.validate().is_err());
    }

    #[test]
    fn empty_cloud_projects_to_all_invalid() {
        let (img, stats) = project(&PointCloud::default(), &ProjectionConfig::default()).unwrap();
        assert_eq!(img.valid_count(), 0);
        assert_eq!(stats, ProjectionStats::default());
        assert!(unproject(&img).is_empty());
    }

    #[test]
    fn single_point_lands_in_expected_bin() {
        let cfg = ProjectionConfig::default();
        let cloud = PointCloud::new(vec![[10.0, 0.0, 0.0]], vec![0.3]).unwrap();
        let (img, _) = project(&cloud, &cfg).unwrap();
        assert_eq!(img.valid_count(), 1);
        // floor(3 / 28 * 64) = 6, floor(0.5 * 1024) = 512
        let idx = 6 * 1024 + 512;
        assert!(img.valid[idx]);
        assert_eq!(img.depth[idx], normalize_depth(10.0, 80.0).unwrap() as f32);

        let back = unproject(&img);
        assert_eq!(back.len(), 1);
        let [x, y, z] = back.points[0].map(f64::from);
        let range = (x * x + y * y + z * z).sqrt();
        assert!((range - 10.0).abs() < 1e-4, "range {range}");
        let el = (z / range).asin().to_degrees();
        let az = y.atan2(x);
        let half_row = 28.0 / 64.0 / 2.0;
        let half_col = 2.0 * PI / 1024.0 / 2.0;
        assert!(el.abs() <= half_row + 1e-9);
        assert!(az.abs() <= half_col + 1e-9);
    }

    #[test]
    fn nearest_point_wins_a_bin() {
        let cfg = ProjectionConfig::default();
        let cloud = PointCloud::new(vec![[9.0, 0.0, 0.0], [5.0, 0.0, 0.0]], vec![0.1, 0.9]).unwrap();
        let (img, stats) = project(&cloud, &cfg).unwrap();
        assert_eq!(img.valid_count(), 1);
        let idx = 6 * 1024 + 512;
        assert!((img.range_at(idx) - 5.0).abs() < 1e-4);
        assert!((img.reflectance[idx] - 0.9).abs() < 1e-6);
        assert_eq!(stats.occluded, 1);
    }

    #[test]
    fn out_of_range_and_origin_points_are_counted() {
        let cfg = ProjectionConfig::default();
        let cloud = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
            vec![0.5; 3],
        )
        .unwrap();
        let (img, stats) = project(&cloud, &cfg).unwrap();
        assert_eq!(stats.zero_range, 1);
        assert_eq!(stats.beyond_range, 1);
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn mismatched_cloud_rejected() {
        assert!(PointCloud::new(vec![[0.0; 3]], vec![]).is_err());
        assert!(PointCloud::new(vec![[f32::NAN, 0.0, 0.0]], vec![0.0]).is_err());
    }

    #[test]
    fn generated_channels_below_threshold_decode_invalid() {
        let cfg = ProjectionConfig::default().with_size(2, 2);
        let ch = [0.0, 0.01, 0.5, 1.5, 0.9, 0.9, 0.9, -0.2];
        let img = RangeImage::from_channels(cfg, &ch).unwrap();
        assert_eq!(img.valid, vec![false, false, true, true]);
        assert_eq!(img.reflectance, vec![0.0, 0.0, 0.9, 0.0]);
        assert_eq!(img.depth[3], 1.0);
        img.validate().unwrap();
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = PointCloud::default();
        for _ in 0..n {
            let d: f64 = rng.gen_range(1.0..79.0);
            let el: f64 = rng.gen_range(-24.9_f64..2.9).to_radians();
            let az: f64 = rng.gen_range(-PI..PI);
            cloud.points.push([
                (d * el.cos() * az.cos()) as f32,
                (d * el.cos() * az.sin()) as f32,
                (d * el.sin()) as f32,
            ]);
            cloud.reflectance.push(rng.gen_range(0.0..1.0));
        }
        cloud
    }

    #[test]
    fn reprojection_is_idempotent() {
        let cfg = ProjectionConfig::desk();
        for seed in 0..5 {
            let cloud = random_cloud(seed, 4000);
            let (img, _) = project(&cloud, &cfg).unwrap();
            assert!(img.valid_count() <= cloud.len());
            let (again, stats) = project(&unproject(&img), &cfg).unwrap();
            assert_eq!(stats.occluded, 0);
            assert_eq!(again.valid, img.valid);
            for (a, b) in again.depth.iter().zip(&img.depth) {
                assert!((a - b).abs() <= 1e-5);
            }
            // second round-trip is a fixed point
            let (third, _) = project(&unproject(&again), &cfg).unwrap();
            assert_eq!(third.valid, again.valid);
            for (a, b) in third.depth.iter().zip(&again.depth) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn depth_roundtrip(d in 0.0f64..=80.0) {
            let v = normalize_depth(d, 80.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let back = denormalize_depth(v, 80.0).unwrap();
            prop_assert!((back - d).abs() <= 1e-5 * 80.0);
        }

        #[test]
        fn depth_is_monotone(a in 0.0f64..80.0, b in 0.0f64..80.0) {
            prop_assume!(a < b);
            prop_assert!(normalize_depth(a, 80.0).unwrap() < normalize_depth(b, 80.0).unwrap());
        }
    }
}
