//! WebAssembly bindings for the browser demo. Every view is returned as an
//! RGBA byte buffer of `width * height * 4` bytes, ready for `ImageData`.

use wasm_bindgen::prelude::*;

use rangediff::data::{synth_scan, SceneConfig};
use rangediff::eval::{interpolate_baseline, masked_mae, sparsify, Interpolation};
use rangediff::geometry::{ProjectionConfig, RangeImage};
use rangediff::mask::{jitter_lines_mask, pepper_mask, straight_lines_mask, upsampling_mask, Mask};

fn js_err(e: rangediff::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Piecewise-linear approximation of the turbo colormap.
fn colormap(v: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 6] = [
        [0.19, 0.07, 0.23],
        [0.16, 0.47, 0.93],
        [0.10, 0.85, 0.65],
        [0.64, 0.99, 0.24],
        [0.98, 0.62, 0.13],
        [0.64, 0.09, 0.01],
    ];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let t = x - i as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| (255.0 * (a[c] + t * (b[c] - a[c]))).round() as u8)
}

/// Depth (with inverted colors, near is warm) as RGBA; no return is black.
pub fn depth_rgba(img: &RangeImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.depth.len() * 4);
    for (d, &valid) in img.depth.iter().zip(&img.valid) {
        let [r, g, b] = if valid { colormap(1.0 - d) } else { [0, 0, 0] };
        out.extend_from_slice(&[r, g, b, 255]);
    }
    out
}

/// Known pixels show the scan, hidden pixels are magenta.
pub fn mask_rgba(img: &RangeImage, mask: &Mask) -> Vec<u8> {
    let mut out = depth_rgba(img);
    for (i, px) in out.chunks_exact_mut(4).enumerate() {
        if mask.is_known(i) {
            continue;
        }
        px.copy_from_slice(&[200, 0, 160, 255]);
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    scan: RangeImage,
    mask: Mask,
    rate: Option<usize>,
}

#[wasm_bindgen]
impl Demo {
    /// A synthetic 32x256 scan. `scene` is `default`, `urban` or `ground`.
    #[wasm_bindgen(constructor)]
    pub fn new(scene: &str, seed: u32) -> Result<Demo, JsValue> {
        let cfg = match scene {
            "urban" => SceneConfig::urban(),
            "ground" => SceneConfig::ground_only(),
            _ => SceneConfig::default(),
        };
        let proj = ProjectionConfig::desk();
        let scan = synth_scan(&cfg.with_seed(seed as u64), &proj).map_err(js_err)?;
        let mask = upsampling_mask(proj.height, proj.width, 4).map_err(js_err)?;
        Ok(Demo {
            scan,
            mask,
            rate: Some(4),
        })
    }

    pub fn width(&self) -> usize {
        self.scan.width()
    }

    pub fn height(&self) -> usize {
        self.scan.height()
    }

    pub fn scan_rgba(&self) -> Vec<u8> {
        depth_rgba(&self.scan)
    }

    /// Replaces the mask. `param` is the rate for `upsample`, the row ratio
    /// for `straight` and `jitter`, the drop probability for `pepper`.
    pub fn set_mask(&mut self, kind: &str, param: f64, seed: u32) -> Result<(), JsValue> {
        let (h, w, s) = (self.height(), self.width(), seed as u64);
        let mask = match kind {
            "upsample" => upsampling_mask(h, w, param.round().max(1.0) as usize),
            "straight" => straight_lines_mask(h, w, param, s),
            "jitter" => jitter_lines_mask(h, w, param, s),
            "pepper" => pepper_mask(h, w, param, s),
            other => return Err(JsValue::from_str(&format!("unknown mask kind {other}"))),
        }
        .map_err(js_err)?;
        self.rate = (kind == "upsample").then(|| param.round().max(1.0) as usize);
        self.mask = mask;
        Ok(())
    }

    pub fn known_fraction(&self) -> f64 {
        self.mask.known_fraction()
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        mask_rgba(&self.scan, &self.mask)
    }

    /// Fills the hidden rows with `nearest`, `bilinear` or `bicubic`.
    /// Needs an upsampling mask.
    pub fn baseline_rgba(&self, method: &str) -> Result<Vec<u8>, JsValue> {
        Ok(depth_rgba(&self.baseline(method)?))
    }

    /// Masked depth MAE of a baseline against the full scan, in meters.
    pub fn baseline_mae(&self, method: &str) -> Result<f64, JsValue> {
        let out = self.baseline(method)?;
        Ok(masked_mae(&out, &self.scan, &self.mask).map_err(js_err)?.depth)
    }
}

impl Demo {
    fn baseline(&self, method: &str) -> Result<RangeImage, JsValue> {
        let rate = self
            .rate
            .ok_or_else(|| JsValue::from_str("interpolation baselines need an upsampling mask"))?;
        let m = Interpolation::parse(method).map_err(js_err)?;
        let sparse = sparsify(&self.scan, &self.mask).map_err(js_err)?;
        interpolate_baseline(&sparse, m, rate).map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_have_rgba_size() {
        let mut d = Demo::new("default", 3).unwrap();
        let n = d.width() * d.height() * 4;
        assert_eq!(d.scan_rgba().len(), n);
        assert_eq!(d.mask_rgba().len(), n);
        assert_eq!(d.baseline_rgba("bilinear").unwrap().len(), n);
        d.set_mask("pepper", 0.3, 1).unwrap();
        assert_eq!(d.mask_rgba().len(), n);
    }

    #[test]
    fn upsample_mask_known_fraction() {
        let mut d = Demo::new("urban", 1).unwrap();
        d.set_mask("upsample", 8.0, 0).unwrap();
        assert_eq!(d.known_fraction(), 4.0 / 32.0);
    }

    #[test]
    fn baseline_errors_are_finite() {
        let d = Demo::new("default", 9).unwrap();
        for m in ["nearest", "bilinear", "bicubic"] {
            let mae = d.baseline_mae(m).unwrap();
            assert!(mae.is_finite() && mae >= 0.0);
        }
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [48, 18, 59]);
        assert_eq!(colormap(1.0), [163, 23, 3]);
        assert_eq!(colormap(-3.0), colormap(0.0));
    }
}
