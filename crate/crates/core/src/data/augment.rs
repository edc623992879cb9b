//! Random affine plus elastic deformation, with bilinear sampling and zero fill.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ranges the random parameters are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    /// Largest shift per axis as a fraction of the image extent.
    pub max_translate: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_shear_deg: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 20.0,
            max_translate: 0.1,
            min_scale: 0.8,
            max_scale: 1.2,
            max_shear_deg: 20.0,
            elastic_alpha: 10.0,
            elastic_sigma: 5.0,
        }
    }
}

/// One concrete draw; logged so ranges can be audited.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub scale: f64,
    pub shear_deg: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub elastic_seed: u64,
}

impl AugmentParams {
    /// Parameters that leave every image unchanged.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            scale: 1.0,
            shear_deg: 0.0,
            elastic_alpha: 0.0,
            elastic_sigma: 5.0,
            elastic_seed: 0,
        }
    }

    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let sym = |rng: &mut dyn rand::RngCore, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        Self {
            rotation_deg: sym(rng, cfg.max_rotation_deg),
            translate_x: sym(rng, cfg.max_translate),
            translate_y: sym(rng, cfg.max_translate),
            scale: if cfg.max_scale > cfg.min_scale { rng.gen_range(cfg.min_scale..=cfg.max_scale) } else { cfg.min_scale },
            shear_deg: sym(rng, cfg.max_shear_deg),
            elastic_alpha: cfg.elastic_alpha,
            elastic_sigma: cfg.elastic_sigma,
            elastic_seed: rng.gen(),
        }
    }
}

fn sample_bilinear(img: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            img[yy as usize * w + xx as usize] as f64
        }
    };
    let mut v = at(y0, x0) * (1.0 - fy) * (1.0 - fx);
    if fx != 0.0 {
        v += at(y0, x0 + 1.0) * (1.0 - fy) * fx;
    }
    if fy != 0.0 {
        v += at(y0 + 1.0, x0) * fy * (1.0 - fx);
        if fx != 0.0 {
            v += at(y0 + 1.0, x0 + 1.0) * fy * fx;
        }
    }
    v
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * field[y * w + clamp(x as isize + j as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Applies a fixed parameter draw to an `h×w` image.
pub fn augment_with(img: &[f32], h: usize, w: usize, p: &AugmentParams) -> Vec<f32> {
    assert_eq!(img.len(), h * w, "image buffer does not match {h}×{w}");
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // Forward map: scale, then shear along x, then rotate, then translate.
    let (th, sh) = (p.rotation_deg.to_radians(), p.shear_deg.to_radians().tan());
    let (c, s) = (th.cos(), th.sin());
    let a = [[c * p.scale, (c * sh - s) * p.scale], [s * p.scale, (s * sh + c) * p.scale]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (tx, ty) = (p.translate_x * w as f64, p.translate_y * h as f64);

    let (mut dx, mut dy) = (vec![0.0; h * w], vec![0.0; h * w]);
    if p.elastic_alpha != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(p.elastic_seed);
        let ux: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let uy: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        dx = gaussian_blur(&ux, h, w, p.elastic_sigma).into_iter().map(|v| v * p.elastic_alpha).collect();
        dy = gaussian_blur(&uy, h, w, p.elastic_sigma).into_iter().map(|v| v * p.elastic_alpha).collect();
    }

    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // Elastic displacement at the output pixel, then the inverse affine.
            let (ex, ey) = (x as f64 + dx[i] - cx - tx, y as f64 + dy[i] - cy - ty);
            let sx = inv[0][0] * ex + inv[0][1] * ey + cx;
            let sy = inv[1][0] * ex + inv[1][1] * ey + cy;
            out[i] = sample_bilinear(img, h, w, sy, sx).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Draws parameters from `seed` and applies them; returns the image and the draw.
pub fn augment(img: &[f32], h: usize, w: usize, cfg: &AugmentConfig, seed: u64) -> (Vec<f32>, AugmentParams) {
    let params = AugmentParams::draw(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    (augment_with(img, h, w, &params), params)
}
