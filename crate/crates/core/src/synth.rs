//! Geometry of the synthetic-data pipeline.
//!
//! Pixel `(x, y)` samples the image plane at integer coordinates, so a
//! keypoint at `(12.0, 40.0)` sits exactly on the center of pixel `(12, 40)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::{Error, Result};

const HEATMAP_MAGIC: &[u8; 7] = b"AMPHM01";

/// SSIM threshold below which a synthesized background is discarded.
pub const SSIM_GATE: f64 = 0.5;
pub const SSIM_WINDOW: usize = 7;
pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCamera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl WeakPerspectiveCamera {
    pub fn new(s: f64, tx: f64, ty: f64) -> Result<Self> {
        let cam = WeakPerspectiveCamera { s, tx, ty };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) || !self.s.is_finite() || !self.tx.is_finite() || !self.ty.is_finite() {
            return Err(Error::invalid("camera scale must be positive and all terms finite"));
        }
        Ok(())
    }
}

/// Orthographic projection scaled by `s` after shifting by `(tx, ty)`;
/// normalized `[-1, 1]` coordinates are mapped onto a `width × height` image.
pub fn project_weak_perspective(
    points: &[Vector3<f64>],
    cam: &WeakPerspectiveCamera,
    (width, height): (u32, u32),
) -> Vec<[f64; 2]> {
    let (w, h) = (width as f64, height as f64);
    points
        .iter()
        .map(|p| {
            let u = cam.s * (p.x + cam.tx);
            let v = cam.s * (p.y + cam.ty);
            [(u + 1.0) / 2.0 * w, (v + 1.0) / 2.0 * h]
        })
        .collect()
}

/// `H × W × J` Gaussian heatmaps, stored with the joint index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub width: u32,
    pub height: u32,
    pub joints: usize,
    pub sigma: f64,
    pub data: Vec<f64>,
}

impl HeatmapStack {
    pub fn get(&self, x: u32, y: u32, j: usize) -> f64 {
        self.data[((y * self.width + x) as usize) * self.joints + j]
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.joints).copied().collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(HEATMAP_MAGIC)?;
        binio::write_u32(w, self.height)?;
        binio::write_u32(w, self.width)?;
        binio::write_u32(w, self.joints as u32)?;
        binio::write_f64s(w, &[self.sigma])?;
        binio::write_f64s(w, &self.data)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(HEATMAP_MAGIC)?;
        let height = r.u32()?;
        let width = r.u32()?;
        let joints = r.u32()? as usize;
        let sigma = r.f64s(1)?[0];
        let data = r.f64s(height as usize * width as usize * joints)?;
        r.finish()?;
        Ok(HeatmapStack {
            width,
            height,
            joints,
            sigma,
            data,
        })
    }
}

/// One unnormalized Gaussian per keypoint (peak 1); zero-confidence keypoints
/// get an all-zero channel.
pub fn rasterize_heatmaps(
    kps: &[[f64; 3]],
    (width, height): (u32, u32),
    sigma: f64,
) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("heatmap sigma must be positive"));
    }
    let j_count = kps.len();
    let mut data = vec![0.0; width as usize * height as usize * j_count];
    let denom = 2.0 * sigma * sigma;
    for (j, kp) in kps.iter().enumerate() {
        if kp[2] <= 0.0 {
            continue;
        }
        // separable: exp(-(dx² + dy²)/2σ²) = gx(x) · gy(y)
        let gx: Vec<f64> = (0..width)
            .map(|x| (-(x as f64 - kp[0]).powi(2) / denom).exp())
            .collect();
        for y in 0..height {
            let gy = (-(y as f64 - kp[1]).powi(2) / denom).exp();
            let row = (y * width) as usize;
            for (x, g) in gx.iter().enumerate() {
                data[(row + x) * j_count + j] = g * gy;
            }
        }
    }
    Ok(HeatmapStack {
        width,
        height,
        joints: j_count,
        sigma,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Perturb `floor(ratio * visible)` keypoints with the full noise level.
    #[default]
    Subset,
    /// Perturb every visible keypoint with noise scaled by `ratio`.
    Magnitude,
}

/// Default 2D noise level: 5% of the bounding-box diagonal.
pub fn default_noise_sigma(bbox: &[f64; 4]) -> f64 {
    0.05 * (bbox[2] * bbox[2] + bbox[3] * bbox[3]).sqrt()
}

/// Isotropic Gaussian keypoint noise; zero-confidence keypoints are never
/// touched.
pub fn inject_keypoint_noise(
    kps: &[[f64; 3]],
    ratio: f64,
    sigma_px: f64,
    model: NoiseModel,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("noise ratio {ratio} outside [0, 1]")));
    }
    if !(sigma_px >= 0.0) || !sigma_px.is_finite() {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    let visible: Vec<usize> = (0..kps.len()).filter(|&j| kps[j][2] > 0.0).collect();
    let (chosen, std) = match model {
        NoiseModel::Subset => {
            let k = (ratio * visible.len() as f64).floor() as usize;
            (k, sigma_px)
        }
        NoiseModel::Magnitude => (visible.len(), sigma_px * ratio),
    };
    let mut out = kps.to_vec();
    if chosen == 0 || std == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut picks: Vec<usize> = sample(&mut rng, visible.len(), chosen).into_iter().collect();
    picks.sort_unstable();
    for p in picks {
        let j = visible[p];
        out[j][0] += normal.sample(&mut rng);
        out[j][1] += normal.sample(&mut rng);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Row-major pixels, clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dims(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| p.is_nan()) {
            return Err(Error::invalid("NaN pixel"));
        }
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y).clamp(0.0, 1.0))
            .collect();
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    /// Rec. 601 luma of an RGB image.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        GrayImage::from_fn(w as usize, h as usize, |x, y| {
            let Rgb([r, g, b]) = *img.get_pixel(x as u32, y as u32);
            (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Mean SSIM over every fully contained `window × window` uniform window,
/// with `C1 = 0.01²` and `C2 = 0.03²` for unit dynamic range.
pub fn ssim(a: &GrayImage, b: &GrayImage, window: usize) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dims(format!(
            "image sizes {}x{} and {}x{} differ",
            a.width, a.height, b.width, b.height
        )));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!("SSIM window {window} must be odd and >= 3")));
    }
    if a.width < window || a.height < window {
        return Err(Error::invalid("image is smaller than the SSIM window"));
    }
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = (window * window) as f64;
    let (w, h) = (a.width, a.height);

    // per-column sums over `window` rows, updated as the window slides down
    let mut col = vec![[0.0f64; 5]; w];
    let px = |img: &GrayImage, x: usize, y: usize| img.pixels[y * w + x];
    let add = |acc: &mut [f64; 5], x: f64, y: f64, sign: f64| {
        acc[0] += sign * x;
        acc[1] += sign * y;
        acc[2] += sign * x * x;
        acc[3] += sign * y * y;
        acc[4] += sign * x * y;
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - window {
        // recompute column sums from scratch to avoid drift
        for (x, c) in col.iter_mut().enumerate() {
            *c = [0.0; 5];
            for y in y0..y0 + window {
                add(c, px(a, x, y), px(b, x, y), 1.0);
            }
        }
        for x0 in 0..=w - window {
            let mut s = [0.0f64; 5];
            for c in &col[x0..x0 + window] {
                for k in 0..5 {
                    s[k] += c[k];
                }
            }
            let mu_a = s[0] / n;
            let mu_b = s[1] / n;
            let var_a = s[2] / n - mu_a * mu_a;
            let var_b = s[3] / n - mu_b * mu_b;
            let cov = s[4] / n - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2);
            let den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Quality gate: scores below `threshold` are rejected.
pub fn passes_quality_gate(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// Flat-shaded, z-buffered splat of a projected mesh over `background`.
///
/// Triangles are filled with their color where a pixel sample lies inside all
/// three edges; with no faces, each vertex is splatted as a single pixel and
/// `colors` is per vertex. Smaller depth wins.
pub fn composite_overlay(
    background: &RgbImage,
    projected: &[[f64; 2]],
    depths: &[f64],
    faces: &[[usize; 3]],
    colors: &[[u8; 3]],
) -> Result<RgbImage> {
    if projected.len() != depths.len() {
        return Err(Error::dims("projected points and depths differ in length"));
    }
    let expected = if faces.is_empty() { projected.len() } else { faces.len() };
    if colors.len() != expected {
        return Err(Error::dims(format!("{} colors for {expected} primitives", colors.len())));
    }
    if faces.iter().flatten().any(|&i| i >= projected.len()) {
        return Err(Error::invalid("face references a missing vertex"));
    }
    let mut out = background.clone();
    let (w, h) = out.dimensions();
    let mut zbuf = vec![f64::INFINITY; w as usize * h as usize];
    let mut plot = |x: i64, y: i64, z: f64, color: [u8; 3], out: &mut RgbImage| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return;
        }
        let idx = y as usize * w as usize + x as usize;
        if z < zbuf[idx] {
            zbuf[idx] = z;
            out.put_pixel(x as u32, y as u32, Rgb(color));
        }
    };

    if faces.is_empty() {
        for ((p, z), color) in projected.iter().zip(depths).zip(colors) {
            plot(p[0].round() as i64, p[1].round() as i64, *z, *color, &mut out);
        }
        return Ok(out);
    }

    for (f, color) in faces.iter().zip(colors) {
        let [a, b, c] = f.map(|i| projected[i]);
        let area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xmin = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let xmax = a[0].max(b[0]).max(c[0]).floor().min(w as f64 - 1.0);
        let ymin = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let ymax = a[1].max(b[1]).max(c[1]).floor().min(h as f64 - 1.0);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        let [za, zb, zc] = f.map(|i| depths[i]);
        for y in ymin as i64..=ymax as i64 {
            for x in xmin as i64..=xmax as i64 {
                let p = [x as f64, y as f64];
                let w0 = edge(b, c, p) / area;
                let w1 = edge(c, a, p) / area;
                let w2 = edge(a, b, p) / area;
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    plot(x, y, w0 * za + w1 * zb + w2 * zc, *color, &mut out);
                }
            }
        }
    }
    Ok(out)
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}
