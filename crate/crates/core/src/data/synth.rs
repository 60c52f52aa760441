//! Procedural raycast LiDAR: a ground plane plus boxes, cylinders and walls,
//! rendered one ray per range-image bin center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionConfig, RangeImage};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Sensor height above the ground plane in meters.
    pub sensor_height: f64,
    pub ground: bool,
    /// Inclusive object count ranges.
    pub boxes: (usize, usize),
    pub cylinders: (usize, usize),
    pub walls: (usize, usize),
    /// Box footprint side length and height in meters.
    pub box_size: (f64, f64),
    pub box_height: (f64, f64),
    pub cylinder_radius: (f64, f64),
    pub cylinder_height: (f64, f64),
    pub wall_length: (f64, f64),
    pub wall_height: (f64, f64),
    /// Horizontal distance of object centers from the sensor.
    pub placement_radius: (f64, f64),
    pub object_reflectance: (f64, f64),
    pub ground_reflectance: (f64, f64),
    /// Standard deviation of the additive range noise in meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sensor_height: 1.8,
            ground: true,
            boxes: (3, 8),
            cylinders: (2, 6),
            walls: (0, 2),
            box_size: (1.5, 5.0),
            box_height: (1.0, 3.5),
            cylinder_radius: (0.2, 1.0),
            cylinder_height: (1.0, 6.0),
            wall_length: (5.0, 20.0),
            wall_height: (1.5, 5.0),
            placement_radius: (4.0, 40.0),
            object_reflectance: (0.05, 0.9),
            ground_reflectance: (0.1, 0.35),
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Dense street canyon: many walls and boxes close to the sensor.
    pub fn urban() -> Self {
        Self {
            boxes: (6, 12),
            cylinders: (4, 10),
            walls: (2, 5),
            placement_radius: (3.0, 25.0),
            wall_height: (3.0, 10.0),
            ..Self::default()
        }
    }

    /// Only the ground plane.
    pub fn ground_only() -> Self {
        Self {
            boxes: (0, 0),
            cylinders: (0, 0),
            walls: (0, 0),
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sensor_height", self.sensor_height),
            ("box_size", self.box_size.0),
            ("box_height", self.box_height.0),
            ("cylinder_radius", self.cylinder_radius.0),
            ("cylinder_height", self.cylinder_height.0),
            ("wall_length", self.wall_length.0),
            ("wall_height", self.wall_height.0),
            ("placement_radius", self.placement_radius.0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let ranges = [
            ("box_size", self.box_size),
            ("box_height", self.box_height),
            ("cylinder_radius", self.cylinder_radius),
            ("cylinder_height", self.cylinder_height),
            ("wall_length", self.wall_length),
            ("wall_height", self.wall_height),
            ("placement_radius", self.placement_radius),
            ("object_reflectance", self.object_reflectance),
            ("ground_reflectance", self.ground_reflectance),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("{name} range ({lo}, {hi}) is not ordered")));
            }
        }
        for (name, (lo, hi)) in [("boxes", self.boxes), ("cylinders", self.cylinders), ("walls", self.walls)] {
            if lo > hi {
                return Err(Error::config(format!("{name} count range ({lo}, {hi}) is not ordered")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Yawed box standing on the ground.
    Box {
        center: [f64; 2],
        half: [f64; 2],
        yaw: f64,
        top: f64,
        reflectance: f64,
    },
    /// Vertical cylinder standing on the ground, capped.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        top: f64,
        reflectance: f64,
    },
    /// Zero-thickness vertical rectangle over the segment `a`..`b`.
    Wall {
        a: [f64; 2],
        b: [f64; 2],
        top: f64,
        reflectance: f64,
    },
}

/// Objects in the sensor frame; the ground plane sits at `z = -sensor_height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sensor_height: f64,
    pub ground_reflectance: Option<f64>,
    pub objects: Vec<Primitive>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn placement(rng: &mut ChaCha8Rng, radius: (f64, f64)) -> [f64; 2] {
    let r = uniform(rng, radius);
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    [r * theta.cos(), r * theta.sin()]
}

impl Scene {
    pub fn sample(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let ground_z = -cfg.sensor_height;
        let mut objects = Vec::new();
        for _ in 0..rng.gen_range(cfg.boxes.0..=cfg.boxes.1) {
            objects.push(Primitive::Box {
                center: placement(rng, cfg.placement_radius),
                half: [0.5 * uniform(rng, cfg.box_size), 0.5 * uniform(rng, cfg.box_size)],
                yaw: rng.gen_range(0.0..std::f64::consts::PI),
                top: ground_z + uniform(rng, cfg.box_height),
                reflectance: uniform(rng, cfg.object_reflectance),
            });
        }
        for _ in 0..rng.gen_range(cfg.cylinders.0..=cfg.cylinders.1) {
            objects.push(Primitive::Cylinder {
                center: placement(rng, cfg.placement_radius),
                radius: uniform(rng, cfg.cylinder_radius),
                top: ground_z + uniform(rng, cfg.cylinder_height),
                reflectance: uniform(rng, cfg.object_reflectance),
            });
        }
        for _ in 0..rng.gen_range(cfg.walls.0..=cfg.walls.1) {
            let mid = placement(rng, cfg.placement_radius);
            let half = 0.5 * uniform(rng, cfg.wall_length);
            let dir = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = dir.sin_cos();
            objects.push(Primitive::Wall {
                a: [mid[0] - half * c, mid[1] - half * s],
                b: [mid[0] + half * c, mid[1] + half * s],
                top: ground_z + uniform(rng, cfg.wall_height),
                reflectance: uniform(rng, cfg.object_reflectance),
            });
        }
        let ground_reflectance = cfg.ground.then(|| uniform(rng, cfg.ground_reflectance));
        Ok(Self {
            sensor_height: cfg.sensor_height,
            ground_reflectance,
            objects,
        })
    }

    /// Nearest hit along the ray `t * dir` for `t > 0`: `(t, reflectance)`.
    pub fn cast(&self, dir: [f64; 3]) -> Option<(f64, f64)> {
        let ground_z = -self.sensor_height;
        let mut best: Option<(f64, f64)> = None;
        let mut offer = |t: f64, refl: f64| {
            if t > 0.0 && best.map_or(true, |(b, _)| t < b) {
                best = Some((t, refl));
            }
        };
        if let Some(refl) = self.ground_reflectance {
            if dir[2] < 0.0 {
                offer(ground_z / dir[2], refl);
            }
        }
        let in_height = |t: f64, top: f64| {
            let z = t * dir[2];
            z >= ground_z && z <= top
        };
        for obj in &self.objects {
            match *obj {
                Primitive::Box {
                    center,
                    half,
                    yaw,
                    top,
                    reflectance,
                } => {
                    // ray in the box frame
                    let (s, c) = yaw.sin_cos();
                    let o = [-center[0] * c - center[1] * s, center[0] * s - center[1] * c, 0.0];
                    let d = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c, dir[2]];
                    let lo = [-half[0], -half[1], ground_z];
                    let hi = [half[0], half[1], top];
                    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                    let mut hit = true;
                    for k in 0..3 {
                        if d[k].abs() < 1e-15 {
                            if o[k] < lo[k] || o[k] > hi[k] {
                                hit = false;
                            }
                            continue;
                        }
                        let (a, b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                    if hit && t0 <= t1 {
                        offer(if t0 > 0.0 { t0 } else { t1 }, reflectance);
                    }
                }
                Primitive::Cylinder {
                    center,
                    radius,
                    top,
                    reflectance,
                } => {
                    let a = dir[0] * dir[0] + dir[1] * dir[1];
                    let b = -2.0 * (dir[0] * center[0] + dir[1] * center[1]);
                    let c = center[0] * center[0] + center[1] * center[1] - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if a > 0.0 && disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        if in_height(t, top) {
                            offer(t, reflectance);
                        }
                    }
                    if dir[2] < 0.0 && top < 0.0 {
                        let t = top / dir[2];
                        let (x, y) = (t * dir[0] - center[0], t * dir[1] - center[1]);
                        if x * x + y * y <= radius * radius {
                            offer(t, reflectance);
                        }
                    }
                }
                Primitive::Wall { a, b, top, reflectance } => {
                    // solve t * dir_xy = a + u * (b - a)
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let det = dir[0] * -e[1] + e[0] * dir[1];
                    if det.abs() < 1e-15 {
                        continue;
                    }
                    let t = (a[0] * -e[1] + e[0] * a[1]) / det;
                    let u = (dir[0] * a[1] - dir[1] * a[0]) / det;
                    if (0.0..=1.0).contains(&u) && in_height(t, top) {
                        offer(t, reflectance);
                    }
                }
            }
        }
        best
    }

    /// Casts one ray per bin center. Hits beyond `d_max` (after noise) are misses.
    pub fn render(&self, proj: &ProjectionConfig, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Result<RangeImage> {
        proj.validate()?;
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        let mut img = RangeImage::empty(*proj);
        for row in 0..proj.height {
            for col in 0..proj.width {
                let Some((t, refl)) = self.cast(proj.ray_direction(row, col)) else {
                    continue;
                };
                let range = if noise_sigma > 0.0 { t + noise.sample(rng) } else { t };
                if range > 0.0 && range <= proj.d_max {
                    img.set_return(row * proj.width + col, range, refl)?;
                }
            }
        }
        Ok(img)
    }
}

/// Samples a scene from `cfg.seed` and renders it.
pub fn synth_scan(cfg: &SceneConfig, proj: &ProjectionConfig) -> Result<RangeImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = Scene::sample(cfg, &mut rng)?;
    scene.render(proj, cfg.noise_sigma, &mut rng)
}

/// `count` scans with seeds derived from `base_seed`, ids `prefix-NNNNN`.
pub fn synth_dataset(cfg: &SceneConfig, proj: &ProjectionConfig, count: usize, prefix: &str) -> Result<Vec<(String, RangeImage)>> {
    (0..count)
        .map(|i| {
            let seed = crate::fnv1a(&[cfg.seed.to_le_bytes(), (i as u64).to_le_bytes()].concat());
            Ok((format!("{prefix}-{i:05}"), synth_scan(&cfg.clone().with_seed(seed), proj)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_ground() -> SceneConfig {
        SceneConfig {
            noise_sigma: 0.0,
            ..SceneConfig::ground_only()
        }
    }

    #[test]
    fn ground_rows_match_closed_form() {
        let proj = ProjectionConfig::desk();
        let img = synth_scan(&quiet_ground(), &proj).unwrap();
        let scene = Scene::sample(&quiet_ground(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for row in 0..proj.height {
            let el = proj.row_center_elevation(row);
            for col in 0..proj.width {
                let i = row * proj.width + col;
                let expect = 1.8 / (-el.to_radians()).sin();
                if el >= 0.0 || expect > proj.d_max {
                    assert!(!img.valid[i], "row {row} should miss");
                } else {
                    let (t, _) = scene.cast(proj.ray_direction(row, col)).unwrap();
                    assert!((t - expect).abs() < 1e-6, "row {row}: {t} vs {expect}");
                    // the image stores f32 log depth
                    let got = img.range_at(i);
                    assert!((got - expect).abs() < 1e-6 * expect, "row {row}: {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn elevation_minus_25_hits_at_4_259() {
        let scene = Scene {
            sensor_height: 1.8,
            ground_reflectance: Some(0.2),
            objects: vec![],
        };
        let el = (-25.0_f64).to_radians();
        for az in [0.0, 1.0, -2.5] {
            let (t, _) = scene.cast([el.cos() * f64::cos(az), el.cos() * f64::sin(az), el.sin()]).unwrap();
            assert!((t - 4.259).abs() < 1e-3);
            assert!((t - 1.8 / 25f64.to_radians().sin()).abs() < 1e-12);
        }
        assert!(scene.cast([1.0, 0.0, 0.0]).is_none());
        assert!(scene.cast([0.0, 0.6, 0.8]).is_none());
    }

    #[test]
    fn unit_wall_spans_predicted_columns() {
        let proj = ProjectionConfig::desk();
        let scene = Scene {
            sensor_height: 1.8,
            ground_reflectance: None,
            objects: vec![Primitive::Wall {
                a: [10.0, -0.5],
                b: [10.0, 0.5],
                top: 5.0,
                reflectance: 0.5,
            }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = scene.render(&proj, 0.0, &mut rng).unwrap();
        // the corners at azimuth +-atan(0.05) through the column formula
        let half = 0.05_f64.atan();
        let (c_lo, c_hi) = (proj.col_of(half), proj.col_of(-half));
        let row = proj.row_of(0.0);
        for col in 0..proj.width {
            let az = proj.col_center_azimuth(col);
            let expect = az.abs() <= half;
            assert_eq!(img.valid[row * proj.width + col], expect, "col {col}");
            if expect {
                assert!((c_lo..=c_hi).contains(&col));
            }
        }
        assert!(c_hi >= c_lo);
    }

    #[test]
    fn deterministic_given_seed() {
        let proj = ProjectionConfig::desk();
        let cfg = SceneConfig::default().with_seed(42);
        let a = synth_scan(&cfg, &proj).unwrap();
        assert_eq!(a, synth_scan(&cfg, &proj).unwrap());
        assert_ne!(a, synth_scan(&cfg.clone().with_seed(43), &proj).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn boxes_and_cylinders_occlude_the_ground() {
        let proj = ProjectionConfig::desk();
        let scene = Scene {
            sensor_height: 1.8,
            ground_reflectance: Some(0.2),
            objects: vec![
                Primitive::Box {
                    center: [6.0, 0.0],
                    half: [1.0, 1.0],
                    yaw: 0.3,
                    top: 0.5,
                    reflectance: 0.8,
                },
                Primitive::Cylinder {
                    center: [0.0, 8.0],
                    radius: 0.5,
                    top: -0.5,
                    reflectance: 0.6,
                },
            ],
        };
        let (t, r) = scene.cast([1.0, 0.0, -0.1]).unwrap();
        assert_eq!(r, 0.8);
        assert!(t < 6.0 && t > 4.5);
        let (t, r) = scene.cast([0.0, 1.0, -0.1]).unwrap();
        assert_eq!(r, 0.6);
        assert!((t - 7.5).abs() < 1e-12);
        // down onto the center of the cylinder cap
        let d = [0.0, 8.0, -0.5];
        let n = (64.0f64 + 0.25).sqrt();
        let (t, r) = scene.cast(d.map(|c| c / n)).unwrap();
        assert_eq!(r, 0.6);
        assert!((t - n).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        scene.render(&proj, 0.02, &mut rng).unwrap().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SceneConfig { noise_sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(SceneConfig { boxes: (3, 1), ..Default::default() }.validate().is_err());
        assert!(SceneConfig { sensor_height: 0.0, ..Default::default() }.validate().is_err());
    }
}
