//! Image preprocessing and augmentation primitives.
//!
//! All functions operate on 2-D H×W tensors of f32 values. Interpolation
//! weights and accumulations run in f64 and cast to f32 once at the end,
//! so grid-aligned sampling (identity resize, multiples of 90 degrees,
//! unit scale, zero elastic amplitude) reproduces the input bitwise and
//! constant images stay constant through every resampling op.
//!
//! Geometric ops come in bilinear (image) and nearest-neighbor (mask)
//! flavors that share one coordinate mapping, so a mask warped alongside
//! its image lands on the same geometry; masks are re-binarized afterward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-image standardization statistics.
#[derive(Debug, Clone, Copy)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub epsilon: f64,
}

/// Epsilon guard added to the standard deviation during normalization.
pub const NORM_EPS: f64 = 1e-7;

/// Standardize to zero mean and unit variance using population statistics:
/// x' = (x − μ)/(σ + ε). A constant image maps to all zeros.
pub fn normalize(x: &Tensor<f32>) -> Result<(Tensor<f32>, NormStats)> {
    if x.is_empty() {
        return Err(Error::Data("normalize: empty image".into()));
    }
    let n = x.len() as f64;
    let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let inv = 1.0 / (std + NORM_EPS);
    let out = x.map(|v| (((v as f64) - mean) * inv) as f32);
    Ok((out, NormStats { mean, std, epsilon: NORM_EPS }))
}

fn dims2(x: &Tensor<f32>, op: &'static str) -> Result<(usize, usize)> {
    x.dims2(op)
}

#[inline]
fn lerp_weights(c: f64) -> (isize, f64, f64) {
    let c0 = c.floor();
    let f = c - c0;
    (c0 as isize, 1.0 - f, f)
}

/// Bilinear sample with zero fill outside the image.
fn sample_bilinear_zero(d: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, wy0, wy1) = lerp_weights(y);
    let (x0, wx0, wx1) = lerp_weights(x);
    let mut acc = 0.0f64;
    for (dy, wy) in [(0isize, wy0), (1, wy1)] {
        let yi = y0 + dy;
        if yi < 0 || yi >= h as isize {
            continue;
        }
        for (dx, wx) in [(0isize, wx0), (1, wx1)] {
            let xi = x0 + dx;
            if xi < 0 || xi >= w as isize {
                continue;
            }
            acc += wy * wx * d[yi as usize * w + xi as usize] as f64;
        }
    }
    acc
}

/// Bilinear sample with coordinates clamped to the image border.
fn sample_bilinear_clamp(d: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, wy0, wy1) = lerp_weights(y);
    let (x0, wx0, wx1) = lerp_weights(x);
    let cl = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut acc = 0.0f64;
    for (dy, wy) in [(0isize, wy0), (1, wy1)] {
        let yi = cl(y0 + dy, h);
        for (dx, wx) in [(0isize, wx0), (1, wx1)] {
            let xi = cl(x0 + dx, w);
            acc += wy * wx * d[yi * w + xi] as f64;
        }
    }
    acc
}

/// Nearest-neighbor sample with zero fill outside the image.
fn sample_nearest_zero(d: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let yi = y.round() as isize;
    let xi = x.round() as isize;
    if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
        0.0
    } else {
        d[yi as usize * w + xi as usize]
    }
}

fn sample_nearest_clamp(d: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let yi = (y.round() as isize).clamp(0, h as isize - 1) as usize;
    let xi = (x.round() as isize).clamp(0, w as isize - 1) as usize;
    d[yi * w + xi]
}

// ── Resize ──────────────────────────────────────────────────────────────

fn resize_src(dest: usize, out_n: usize, in_n: usize) -> f64 {
    if out_n == 1 {
        (in_n - 1) as f64 / 2.0
    } else {
        dest as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
    }
}

fn resize_with(
    x: &Tensor<f32>,
    out_h: usize,
    out_w: usize,
    sampler: impl Fn(&[f32], usize, usize, f64, f64) -> f32,
) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize: target extents must be >= 1".into()));
    }
    let d = x.data();
    let mut out = vec![0.0f32; out_h * out_w];
    for i in 0..out_h {
        let sy = resize_src(i, out_h, h);
        for j in 0..out_w {
            let sx = resize_src(j, out_w, w);
            out[i * out_w + j] = sampler(d, h, w, sy, sx);
        }
    }
    Tensor::from_vec(vec![out_h, out_w], out)
}

/// Corner-aligned bilinear resize. Same-size resize is a bitwise identity.
pub fn resize_bilinear(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    resize_with(x, out_h, out_w, |d, h, w, y, xx| sample_bilinear_clamp(d, h, w, y, xx) as f32)
}

/// Corner-aligned nearest-neighbor resize (for masks).
pub fn resize_nearest(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    resize_with(x, out_h, out_w, sample_nearest_clamp)
}

// ── Crop ────────────────────────────────────────────────────────────────

/// Copy the sub-rectangle starting at (top, left) with extent h×w.
pub fn crop_roi(x: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (ih, iw) = dims2(x, "crop_roi")?;
    if h == 0 || w == 0 {
        return Err(Error::Bounds("crop_roi: extents must be >= 1".into()));
    }
    if top + h > ih || left + w > iw {
        return Err(Error::Bounds(format!(
            "crop_roi: region ({},{})+{}x{} exceeds image {}x{}",
            top, left, h, w, ih, iw
        )));
    }
    let d = x.data();
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        out[i * w..(i + 1) * w]
            .copy_from_slice(&d[(top + i) * iw + left..(top + i) * iw + left + w]);
    }
    Tensor::from_vec(vec![h, w], out)
}

// ── Rotation ────────────────────────────────────────────────────────────

enum Exact {
    Zero,
    Ninety,
    OneEighty,
    TwoSeventy,
    No { cos: f64, sin: f64 },
}

fn classify_angle(deg: f64) -> Exact {
    let a = deg.rem_euclid(360.0);
    if a == 0.0 {
        Exact::Zero
    } else if a == 90.0 {
        Exact::Ninety
    } else if a == 180.0 {
        Exact::OneEighty
    } else if a == 270.0 {
        Exact::TwoSeventy
    } else {
        let r = a.to_radians();
        Exact::No { cos: r.cos(), sin: r.sin() }
    }
}

fn rotate_with(
    x: &Tensor<f32>,
    deg: f64,
    sampler: impl Fn(&[f32], usize, usize, f64, f64) -> f32,
) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "rotate")?;
    let d = x.data();
    let exact = classify_angle(deg);

    // Quarter-turn angles are exact index permutations; 90/270 keep that
    // guarantee for square images (for non-square canvases they fall back
    // to resampling about the center, with snapped trig terms).
    match exact {
        Exact::Zero => return Ok(x.clone()),
        Exact::OneEighty => {
            let mut out = vec![0.0f32; h * w];
            for i in 0..h {
                for j in 0..w {
                    out[i * w + j] = d[(h - 1 - i) * w + (w - 1 - j)];
                }
            }
            return Tensor::from_vec(vec![h, w], out);
        }
        Exact::Ninety if h == w => {
            let n = h;
            let mut out = vec![0.0f32; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = d[j * n + (n - 1 - i)];
                }
            }
            return Tensor::from_vec(vec![n, n], out);
        }
        Exact::TwoSeventy if h == w => {
            let n = h;
            let mut out = vec![0.0f32; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = d[(n - 1 - j) * n + i];
                }
            }
            return Tensor::from_vec(vec![n, n], out);
        }
        _ => {}
    }

    let (cos, sin) = match exact {
        Exact::Ninety => (0.0, 1.0),
        Exact::TwoSeventy => (0.0, -1.0),
        Exact::No { cos, sin } => (cos, sin),
        _ => unreachable!(),
    };
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        let yd = i as f64 - cy;
        for j in 0..w {
            let xd = j as f64 - cx;
            let xs = xd * cos - yd * sin + cx;
            let ys = xd * sin + yd * cos + cy;
            out[i * w + j] = sampler(d, h, w, ys, xs);
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

/// Counter-clockwise rotation about the image center with zero fill.
pub fn rotate_bilinear(x: &Tensor<f32>, deg: f64) -> Result<Tensor<f32>> {
    rotate_with(x, deg, |d, h, w, y, xx| sample_bilinear_zero(d, h, w, y, xx) as f32)
}

/// Nearest-neighbor rotation (for masks); same mapping as `rotate_bilinear`.
pub fn rotate_nearest(x: &Tensor<f32>, deg: f64) -> Result<Tensor<f32>> {
    rotate_with(x, deg, sample_nearest_zero)
}

// ── Scaling ─────────────────────────────────────────────────────────────

fn scale_with(
    x: &Tensor<f32>,
    s: f64,
    sampler: impl Fn(&[f32], usize, usize, f64, f64) -> f32,
) -> Result<Tensor<f32>> {
    if !(s > 0.0) {
        return Err(Error::Config(format!("scale: factor must be > 0, got {}", s)));
    }
    let (h, w) = dims2(x, "scale")?;
    let d = x.data();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let inv = 1.0 / s;
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        let sy = cy + (i as f64 - cy) * inv;
        for j in 0..w {
            let sx = cx + (j as f64 - cx) * inv;
            out[i * w + j] = sampler(d, h, w, sy, sx);
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

/// Zoom about the center by factor `s`, extents preserved: s > 1 magnifies
/// (crops), s < 1 shrinks (zero padding enters at the border).
pub fn scale_bilinear(x: &Tensor<f32>, s: f64) -> Result<Tensor<f32>> {
    if s == 1.0 {
        return Ok(x.clone());
    }
    scale_with(x, s, |d, h, w, y, xx| sample_bilinear_zero(d, h, w, y, xx) as f32)
}

/// Nearest-neighbor zoom (for masks); same mapping as `scale_bilinear`.
pub fn scale_nearest(x: &Tensor<f32>, s: f64) -> Result<Tensor<f32>> {
    if s == 1.0 {
        return Ok(x.clone());
    }
    scale_with(x, s, sample_nearest_zero)
}

// ── Elastic deformation ─────────────────────────────────────────────────

/// Smoothed random per-pixel displacements, shared between an image and
/// its mask so both warp through identical geometry.
pub struct DisplacementField {
    h: usize,
    w: usize,
    dy: Vec<f64>,
    dx: Vec<f64>,
}

/// Draw U(−1,1) displacements per pixel, smooth each component with a
/// Gaussian of width `sigma`, and scale by `alpha` (pixels). `alpha = 0`
/// yields the zero field.
pub fn elastic_field(h: usize, w: usize, alpha: f64, sigma: f64, seed: u64) -> Result<DisplacementField> {
    if alpha != 0.0 && !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "elastic: smoothing sigma must be > 0, got {}",
            sigma
        )));
    }
    if alpha == 0.0 {
        return Ok(DisplacementField { h, w, dy: vec![0.0; h * w], dx: vec![0.0; h * w] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let draw_smooth = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let sm = gaussian_blur_f64(&raw, h, w, sigma, radius);
        sm.into_iter().map(|v| v * alpha).collect()
    };
    let dy = draw_smooth(&mut rng);
    let dx = draw_smooth(&mut rng);
    Ok(DisplacementField { h, w, dy, dx })
}

fn warp_with(
    x: &Tensor<f32>,
    field: &DisplacementField,
    sampler: impl Fn(&[f32], usize, usize, f64, f64) -> f32,
) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "warp")?;
    if (h, w) != (field.h, field.w) {
        return Err(Error::shape(
            "warp",
            format!("field {}x{} vs image {}x{}", field.h, field.w, h, w),
        ));
    }
    let d = x.data();
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            out[k] = sampler(d, h, w, i as f64 + field.dy[k], j as f64 + field.dx[k]);
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

/// Warp by a displacement field with border-clamped bilinear sampling, so
/// constant images stay constant under any field.
pub fn warp_bilinear(x: &Tensor<f32>, field: &DisplacementField) -> Result<Tensor<f32>> {
    warp_with(x, field, |d, h, w, y, xx| sample_bilinear_clamp(d, h, w, y, xx) as f32)
}

/// Nearest-neighbor warp (for masks); same mapping as `warp_bilinear`.
pub fn warp_nearest(x: &Tensor<f32>, field: &DisplacementField) -> Result<Tensor<f32>> {
    warp_with(x, field, sample_nearest_clamp)
}

/// Convenience single-image elastic deformation; deterministic per seed.
pub fn elastic_deform(x: &Tensor<f32>, alpha: f64, sigma: f64, seed: u64) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "elastic_deform")?;
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    let field = elastic_field(h, w, alpha, sigma, seed)?;
    warp_bilinear(x, &field)
}

// ── Gaussian smoothing ──────────────────────────────────────────────────

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut k = i;
    if k < 0 {
        k = -k - 1;
    }
    if k >= n {
        k = 2 * n - 1 - k;
    }
    k.clamp(0, n - 1) as usize
}

fn gaussian_blur_f64(d: &[f64], h: usize, w: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let k = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let mut tmp = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let jj = reflect(j as isize + t as isize - r, w);
                acc += kv * d[i * w + jj];
            }
            tmp[i * w + j] = acc;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let ii = reflect(i as isize + t as isize - r, h);
                acc += kv * tmp[ii * w + j];
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with a normalized kernel (sum 1) and reflect
/// padding. Constant images pass through bitwise.
pub fn smooth_filter(x: &Tensor<f32>, sigma: f64, radius: usize) -> Result<Tensor<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("smooth: sigma must be > 0, got {}", sigma)));
    }
    if radius == 0 {
        return Err(Error::Config("smooth: kernel radius must be >= 1".into()));
    }
    let (h, w) = dims2(x, "smooth_filter")?;
    let df: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let out = gaussian_blur_f64(&df, h, w, sigma, radius);
    Tensor::from_vec(vec![h, w], out.into_iter().map(|v| v as f32).collect())
}

// ── Mask utilities and flips ────────────────────────────────────────────

/// Threshold to {0,1}, boundary inclusive: 1 where value >= t.
pub fn binarize_mask(x: &Tensor<f32>, t: f64) -> Tensor<f32> {
    x.map(|v| if (v as f64) >= t { 1.0 } else { 0.0 })
}

/// Mirror left-right (columns reversed).
pub fn hflip(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "hflip")?;
    let d = x.data();
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = d[i * w + (w - 1 - j)];
        }
    }
    Tensor::from_vec(vec![h, w], out)
}

/// Mirror top-bottom (rows reversed).
pub fn vflip(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = dims2(x, "vflip")?;
    let d = x.data();
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        out[i * w..(i + 1) * w].copy_from_slice(&d[(h - 1 - i) * w..(h - i) * w]);
    }
    Tensor::from_vec(vec![h, w], out)
}

// ── Augmentation policy ─────────────────────────────────────────────────

/// Which augmentations to apply and their parameter ranges.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub rotate: bool,
    pub rotation_min: f64,
    pub rotation_max: f64,
    pub scale: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub elastic: bool,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub smooth: bool,
    pub smooth_sigma: f64,
    pub smooth_radius: usize,
    pub hflip: bool,
    pub vflip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            rotate: true,
            rotation_min: -15.0,
            rotation_max: 15.0,
            scale: true,
            scale_min: 0.9,
            scale_max: 1.1,
            elastic: false,
            elastic_alpha: 8.0,
            elastic_sigma: 4.0,
            smooth: false,
            smooth_sigma: 1.0,
            smooth_radius: 2,
            hflip: true,
            vflip: false,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A config with every augmentation disabled.
    pub fn off() -> Self {
        AugmentConfig { enabled: false, ..AugmentConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotate && self.rotation_min > self.rotation_max {
            return Err(Error::Config("augment: rotation_min exceeds rotation_max".into()));
        }
        if self.scale && (!(self.scale_min > 0.0) || self.scale_min > self.scale_max) {
            return Err(Error::Config(
                "augment: scale range must satisfy 0 < scale_min <= scale_max".into(),
            ));
        }
        if self.elastic && self.elastic_alpha != 0.0 && !(self.elastic_sigma > 0.0) {
            return Err(Error::Config("augment: elastic_sigma must be > 0".into()));
        }
        if self.smooth {
            if !(self.smooth_sigma > 0.0) {
                return Err(Error::Config("augment: smooth_sigma must be > 0".into()));
            }
            if self.smooth_radius == 0 {
                return Err(Error::Config("augment: smooth_radius must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Apply one random draw of the configured augmentations to an image/mask
/// pair (2-D tensors). Geometric transforms use one shared parameter draw
/// for both; the mask goes through nearest-neighbor resampling and is
/// re-binarized; smoothing touches only the image. Masks are never
/// normalized here.
pub fn augment_pair(
    image: &Tensor<f32>,
    mask: &Tensor<f32>,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    cfg.validate()?;
    let mut img = image.clone();
    let mut msk = mask.clone();
    if !cfg.enabled {
        return Ok((img, msk));
    }
    if cfg.rotate {
        let theta = rng.random_range(cfg.rotation_min..=cfg.rotation_max);
        img = rotate_bilinear(&img, theta)?;
        msk = rotate_nearest(&msk, theta)?;
    }
    if cfg.scale {
        let s = rng.random_range(cfg.scale_min..=cfg.scale_max);
        img = scale_bilinear(&img, s)?;
        msk = scale_nearest(&msk, s)?;
    }
    if cfg.elastic && cfg.elastic_alpha != 0.0 {
        let (h, w) = img.dims2("augment")?;
        let field_seed: u64 = rng.random();
        let field = elastic_field(h, w, cfg.elastic_alpha, cfg.elastic_sigma, field_seed)?;
        img = warp_bilinear(&img, &field)?;
        msk = warp_nearest(&msk, &field)?;
    }
    if cfg.smooth {
        img = smooth_filter(&img, cfg.smooth_sigma, cfg.smooth_radius)?;
    }
    if cfg.hflip && rng.random::<f64>() < 0.5 {
        img = hflip(&img)?;
        msk = hflip(&msk)?;
    }
    if cfg.vflip && rng.random::<f64>() < 0.5 {
        img = vflip(&img)?;
        msk = vflip(&msk)?;
    }
    msk = binarize_mask(&msk, 0.5);
    Ok((img, msk))
}
