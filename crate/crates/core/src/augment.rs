//! Paired augmentation: flips, perspective warp, colour jitter and Gaussian
//! blur, each applied with the same parameters to both images of a pair.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::reflect_index;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Probability of the colour-jitter stage (brightness, contrast, saturation, hue).
    pub p_jitter: f64,
    /// Brightness factor drawn from `[1 − s, 1 + s]`.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift drawn from `[−s, s]`, in turns.
    pub hue: f64,
    pub p_blur: f64,
    pub blur_sigma: (f64, f64),
    pub blur_kernel: usize,
    pub p_perspective: f64,
    /// Maximum corner displacement as a fraction of the image extent.
    pub perspective_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_jitter: 0.3,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
            p_blur: 0.3,
            blur_sigma: (0.1, 1.0),
            blur_kernel: 5,
            p_perspective: 0.3,
            perspective_scale: 0.1,
        }
    }
}

impl AugmentConfig {
    /// Flips only.
    pub fn flips_only() -> Self {
        AugmentConfig {
            p_jitter: 0.0,
            p_blur: 0.0,
            p_perspective: 0.0,
            ..Self::default()
        }
    }

    /// Nothing applied.
    pub fn disabled() -> Self {
        AugmentConfig {
            p_hflip: 0.0,
            p_vflip: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            blur_sigma: (0.0, 0.0),
            perspective_scale: 0.0,
            ..Self::flips_only()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_jitter", self.p_jitter),
            ("p_blur", self.p_blur),
            ("p_perspective", self.p_perspective),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        for (name, s, max) in [
            ("brightness", self.brightness, 1.0),
            ("contrast", self.contrast, 1.0),
            ("saturation", self.saturation, 1.0),
            ("hue", self.hue, 0.5),
            ("perspective_scale", self.perspective_scale, 0.25),
        ] {
            if !(0.0..=max).contains(&s) {
                return bad(format!("{name} must be in [0, {max}], got {s}"));
            }
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("blur_sigma must satisfy 0 ≤ min ≤ max, got ({lo}, {hi})"));
        }
        if self.blur_kernel % 2 == 0 {
            return bad(format!("blur_kernel must be odd, got {}", self.blur_kernel));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian of odd length; `sigma == 0` gives a delta.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be ≥ 0, got {sigma}")));
    }
    let mid = size / 2;
    if sigma == 0.0 {
        let mut k = alloc::vec![0.0; size];
        k[mid] = 1.0;
        return Ok(k);
    }
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid as f64;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

/// Separable blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64, size: usize) -> Result<Image> {
    let k = gaussian_kernel(sigma, size)?;
    let r = (size / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let horizontal = Image::from_fn(h, w, |c, y, x| {
        let acc: f64 = k
            .iter()
            .enumerate()
            .map(|(i, t)| t * img.get(c, y, reflect_index(x as isize + i as isize - r, w)) as f64)
            .sum();
        acc as f32
    });
    Ok(Image::from_fn(h, w, |c, y, x| {
        let acc: f64 = k
            .iter()
            .enumerate()
            .map(|(i, t)| t * horizontal.get(c, reflect_index(y as isize + i as isize - r, h), x) as f64)
            .sum();
        acc as f32
    }))
}

/// Projective map `p ↦ (h·[p,1])` with `h[8] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography([f64; 9]);

impl Homography {
    /// Maps the four `src` points onto `dst` (order: TL, TR, BR, BL).
    pub fn from_points(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Result<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let ([x, y], [u, v]) = (src[i], dst[i]);
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gauss–Jordan elimination with partial pivoting.
        for col in 0..8 {
            let pivot = (col..8)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if a[pivot][col].abs() < 1e-12 {
                return Err(Error::InvalidArgument("degenerate homography".into()));
            }
            a.swap(col, pivot);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            for row in 0..8 {
                if row != col {
                    let f = a[row][col];
                    if f != 0.0 {
                        for k in 0..9 {
                            a[row][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        let mut h = [1.0; 9];
        for i in 0..8 {
            h[i] = a[i][8];
        }
        Ok(Homography(h))
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let h = &self.0;
        let d = h[6] * x + h[7] * y + h[8];
        if d.abs() < 1e-12 {
            return Err(Error::InvalidArgument("point maps to infinity".into()));
        }
        Ok(((h[0] * x + h[1] * y + h[2]) / d, (h[3] * x + h[4] * y + h[5]) / d))
    }
}

fn is_convex(q: &[[f64; 2]; 4]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() < 1e-12 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(img: &Image, c: usize, x: f64, y: f64) -> f32 {
    let (h, w) = (img.height(), img.width());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (libm::floor(x) as usize, libm::floor(y) as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(c, y0, x0) as f64 * (1.0 - fx) + img.get(c, y0, x1) as f64 * fx;
    let bottom = img.get(c, y1, x0) as f64 * (1.0 - fx) + img.get(c, y1, x1) as f64 * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Corner positions of an image, TL, TR, BR, BL, in pixel-centre coordinates.
fn corners(h: usize, w: usize) -> [[f64; 2]; 4] {
    let (r, b) = ((w - 1) as f64, (h - 1) as f64);
    [[0.0, 0.0], [r, 0.0], [r, b], [0.0, b]]
}

/// Warps `img` so that output corner `i` samples the source at
/// `corner_i + offsets[i]` (pixels, `[dx, dy]`), with bilinear interpolation
/// and edge replication outside the source.
pub fn perspective(img: &Image, offsets: [[f64; 2]; 4]) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!("perspective needs at least 2x2 pixels, got {h}x{w}")));
    }
    let dst = corners(h, w);
    let mut src = dst;
    for (s, o) in src.iter_mut().zip(offsets) {
        s[0] += o[0];
        s[1] += o[1];
    }
    if !is_convex(&src) {
        return Err(Error::InvalidArgument("perspective offsets fold the quad".into()));
    }
    let hom = Homography::from_points(dst, src)?;
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = hom.apply(x as f64, y as f64)?;
            coords.push((snap(sx), snap(sy)));
        }
    }
    Ok(Image::from_fn(h, w, |c, y, x| {
        let (sx, sy) = coords[y * w + x];
        bilinear(img, c, sx, sy)
    }))
}

/// Parameters of one colour-jitter draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// In turns.
    pub hue: f64,
}

fn luma(rgb: [f64; 3]) -> f64 {
    crate::metrics::LUMA[0] * rgb[0] + crate::metrics::LUMA[1] * rgb[1] + crate::metrics::LUMA[2] * rgb[2]
}

fn wrap(v: f64, m: f64) -> f64 {
    v - m * libm::floor(v / m)
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        wrap((g - b) / d, 6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = wrap(h, 1.0) * 6.0;
    let i = libm::floor(h6);
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Applies brightness, contrast (around `mean_luma`), saturation and hue in
/// that order, clamping to [0, 1] after each step.
pub fn color_jitter(img: &Image, j: &Jitter, mean_luma: f64) -> Image {
    let mut out = img.clone();
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut p = img.pixel(y, x).map(|v| v as f64);
            p = p.map(|v| clamp(v * j.brightness));
            p = p.map(|v| clamp((v - mean_luma) * j.contrast + mean_luma));
            let grey = luma(p);
            p = p.map(|v| clamp(grey + (v - grey) * j.saturation));
            if j.hue != 0.0 {
                let [h, s, v] = rgb_to_hsv(p);
                p = hsv_to_rgb([h + j.hue, s, v]).map(clamp);
            }
            for (c, v) in p.iter().enumerate() {
                out.set(c, y, x, *v as f32);
            }
        }
    }
    out
}

pub fn mean_luma(img: &Image) -> f64 {
    let n = (img.height() * img.width()) as f64;
    crate::metrics::rgb_to_y(img).iter().sum::<f64>() / n
}

fn factor<R: Rng + ?Sized>(rng: &mut R, strength: f64) -> f64 {
    if strength == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - strength..=1.0 + strength)
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, strength: f64) -> f64 {
    if strength == 0.0 {
        0.0
    } else {
        rng.gen_range(-strength..=strength)
    }
}

/// Blurred/sharp training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub blur: Image,
    pub sharp: Image,
}

/// Runs the pipeline: flips, perspective, colour jitter, Gaussian blur.
/// Every random draw is shared by both images.
pub fn apply<R: Rng + ?Sized>(pair: &Pair, cfg: &AugmentConfig, rng: &mut R) -> Result<Pair> {
    if !pair.blur.same_size(&pair.sharp) {
        return Err(Error::Shape {
            op: "augment",
            lhs: alloc::vec![pair.blur.height(), pair.blur.width()],
            rhs: alloc::vec![pair.sharp.height(), pair.sharp.width()],
        });
    }
    let mut out = pair.clone();
    let both = |p: &mut Pair, f: &dyn Fn(&Image) -> Result<Image>| -> Result<()> {
        p.blur = f(&p.blur)?;
        p.sharp = f(&p.sharp)?;
        Ok(())
    };
    if rng.gen_bool(cfg.p_hflip) {
        both(&mut out, &|i| Ok(i.hflip()))?;
    }
    if rng.gen_bool(cfg.p_vflip) {
        both(&mut out, &|i| Ok(i.vflip()))?;
    }
    if rng.gen_bool(cfg.p_perspective) {
        let (h, w) = (pair.sharp.height() as f64, pair.sharp.width() as f64);
        let mut offsets = [[0.0; 2]; 4];
        for o in &mut offsets {
            *o = [
                symmetric(rng, cfg.perspective_scale) * w,
                symmetric(rng, cfg.perspective_scale) * h,
            ];
        }
        both(&mut out, &|i| perspective(i, offsets))?;
    }
    if rng.gen_bool(cfg.p_jitter) {
        let j = Jitter {
            brightness: factor(rng, cfg.brightness),
            contrast: factor(rng, cfg.contrast),
            saturation: factor(rng, cfg.saturation),
            hue: symmetric(rng, cfg.hue),
        };
        let m = mean_luma(&out.sharp);
        both(&mut out, &|i| Ok(color_jitter(i, &j, m)))?;
    }
    if rng.gen_bool(cfg.p_blur) {
        let (lo, hi) = cfg.blur_sigma;
        let sigma = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        both(&mut out, &|i| gaussian_blur(i, sigma, cfg.blur_kernel))?;
    }
    Ok(out)
}

/// Aligned random crop of `size × size` from both images. Images smaller
/// than `size` are first reflect-padded around their centre.
pub fn sample_patch<R: Rng + ?Sized>(pair: &Pair, size: usize, rng: &mut R) -> Result<Pair> {
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if !pair.blur.same_size(&pair.sharp) {
        return Err(Error::Shape {
            op: "sample_patch",
            lhs: alloc::vec![pair.blur.height(), pair.blur.width()],
            rhs: alloc::vec![pair.sharp.height(), pair.sharp.width()],
        });
    }
    let blur = pair.blur.reflect_pad_center(size, size);
    let sharp = pair.sharp.reflect_pad_center(size, size);
    let top = rng.gen_range(0..=blur.height() - size);
    let left = rng.gen_range(0..=blur.width() - size);
    Ok(Pair {
        blur: blur.crop(top, left, size, size)?,
        sharp: sharp.crop(top, left, size, size)?,
    })
}
