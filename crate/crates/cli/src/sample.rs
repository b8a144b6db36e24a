//! Seeded draws of poses, shapes, labels, cameras and backgrounds for batch
//! synthesis.

use std::f64::consts::PI;

use ampkin::amputation::{AmputationLabel, Limb};
use ampkin::body_model::{PoseParams, ShapeParams};
use ampkin::rotations::{axis_angle_to_matrix, AxisAngle, RotationMatrix};
use ampkin::synth::{ssim, GrayImage, WeakPerspectiveCamera};
use ampkin::{Error, Result, NUM_BETAS, NUM_JOINTS};
use image::{Rgb, RgbImage};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of each local axis-angle component, radians.
const JOINT_SPREAD: f64 = 0.25;
const MAX_BACKGROUND_ATTEMPTS: u64 = 64;

fn rotation(x: f64, y: f64, z: f64) -> RotationMatrix {
    axis_angle_to_matrix(&AxisAngle::new(x, y, z)).expect("finite axis-angle")
}

/// Root flipped upright for image coordinates (y down) with a small yaw,
/// every other joint jittered around rest.
pub fn random_pose<R: Rng>(rng: &mut R) -> PoseParams {
    let normal = Normal::new(0.0, JOINT_SPREAD).unwrap();
    let mut pose = PoseParams::identity();
    let flip = rotation(PI, 0.0, 0.0);
    let yaw = rotation(0.0, rng.random_range(-0.6..0.6), 0.0);
    pose.rotations[0] = RotationMatrix::new(flip.matrix() * yaw.matrix()).unwrap();
    for j in 1..NUM_JOINTS {
        pose.rotations[j] = rotation(
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        );
    }
    pose
}

pub fn random_shape<R: Rng>(rng: &mut R) -> ShapeParams {
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let mut betas = [0.0; NUM_BETAS];
    for b in &mut betas {
        *b = normal.sample(rng).clamp(-3.0, 3.0);
    }
    ShapeParams { betas }
}

/// With probability `amputee_fraction`, one or two limbs get a random level.
pub fn random_label<R: Rng>(rng: &mut R, amputee_fraction: f64) -> AmputationLabel {
    if !rng.random_bool(amputee_fraction) {
        return AmputationLabel::intact();
    }
    let count = rng.random_range(1..=2);
    let mut levels = [0u8; 4];
    for limb in sample(rng, Limb::ALL.len(), count) {
        levels[limb] = rng.random_range(1..=3);
    }
    AmputationLabel::new(levels).expect("levels drawn in range")
}

pub fn random_camera<R: Rng>(rng: &mut R) -> WeakPerspectiveCamera {
    WeakPerspectiveCamera::new(
        rng.random_range(0.8..1.0),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.25..-0.05),
    )
    .unwrap()
}

/// Procedural scene: a colour gradient with a few soft blobs plus pixel noise
/// of random strength.
pub fn procedural_background(seed: u64, width: u32, height: u32) -> RgbImage {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [
        rng.random_range(40.0..200.0),
        rng.random_range(40.0..200.0),
        rng.random_range(40.0..200.0),
    ];
    let tilt: [f64; 2] = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
    let blobs: Vec<([f64; 2], f64, f64)> = (0..4)
        .map(|_| {
            (
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                rng.random_range(0.05..0.3),
                rng.random_range(-70.0..70.0),
            )
        })
        .collect();
    let noise = Normal::new(0.0, rng.random_range(2.0..25.0)).unwrap();
    let (w, h) = (width as f64, height as f64);
    RgbImage::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let mut shade = tilt[0] * (u - 0.5) + tilt[1] * (v - 0.5);
        for (c, r, amp) in &blobs {
            let d2 = (u - c[0]).powi(2) + (v - c[1]).powi(2);
            shade += amp * (-d2 / (2.0 * r * r)).exp();
        }
        let mut px = [0u8; 3];
        for (k, p) in px.iter_mut().enumerate() {
            *p = (base[k] + shade + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// 3x3 box filter, edges clamped; stands in for person removal.
pub fn clear_background(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0u32; 3];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
                let p = img.get_pixel(sx, sy);
                for k in 0..3 {
                    acc[k] += p[k] as u32;
                }
            }
        }
        Rgb(acc.map(|a| ((a + 4) / 9) as u8))
    })
}

/// First background whose cleared version keeps an SSIM of at least
/// `threshold` with the original. Attempt seeds come from a stream keyed on
/// `seed`, so neighbouring samples do not converge on the same retry.
pub fn gated_background(
    seed: u64,
    (width, height): (u32, u32),
    window: usize,
    threshold: f64,
) -> Result<(RgbImage, f64)> {
    use rand::SeedableRng;
    let mut seeds = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_BACKGROUND_ATTEMPTS {
        let raw = procedural_background(seeds.random(), width, height);
        let cleared = clear_background(&raw);
        let score = ssim(&GrayImage::from_rgb(&raw), &GrayImage::from_rgb(&cleared), window)?;
        if ampkin::synth::passes_quality_gate(score, threshold) {
            return Ok((cleared, score));
        }
    }
    Err(Error::InvalidInput(format!(
        "no background passed the SSIM gate in {MAX_BACKGROUND_ATTEMPTS} attempts"
    )))
}

/// Flat colour per joint, used to paint faces by their dominant joint.
pub fn joint_color(j: usize) -> [u8; 3] {
    let hue = (j as f64 * 0.61803398875).fract();
    let sector = hue * 6.0;
    let f = sector.fract();
    let (r, g, b) = match sector as usize {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    [r, g, b].map(|c| (60.0 + 180.0 * c) as u8)
}
