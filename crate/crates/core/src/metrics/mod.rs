//! Full-reference image quality metrics and hard-example mining.

mod color;
mod mining;
mod ssim;

use alloc::vec::Vec;

pub use color::{ciede2000, delta_e2000, srgb_to_lab, Lab};
pub use mining::{evaluate_pair, mine_hard, Aggregates, Label, MetricRecord, MetricReport, DEFAULT_HI_DB, DEFAULT_LO_DB};
pub use ssim::{gaussian_window, ssim, ssim_plane, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::image::Image;

/// BT.601 luma weights (full range).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_same(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: alloc::vec![a.height(), a.width()],
            rhs: alloc::vec![b.height(), b.width()],
        })
    }
}

/// Luma plane of an RGB image (values clamped to [0, 1] first).
pub fn rgb_to_y(img: &Image) -> Vec<f64> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let c = |v: f32| (v as f64).clamp(0.0, 1.0);
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| LUMA[0] * c(r) + LUMA[1] * c(g) + LUMA[2] * c(b))
        .collect()
}

/// `10·log10(max²/MSE)`; `+inf` when the inputs are identical.
pub fn psnr_values(a: &[f64], b: &[f64], max_val: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            op: "psnr",
            lhs: alloc::vec![a.len()],
            rhs: alloc::vec![b.len()],
        });
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(max_val * max_val / mse))
}

/// PSNR on the luma channel with MAX = 1.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    check_same("psnr", reference, test)?;
    psnr_values(&rgb_to_y(reference), &rgb_to_y(test), 1.0)
}

/// Mean absolute difference over every channel and pixel.
pub fn mae(reference: &Image, test: &Image) -> Result<f64> {
    check_same("mae", reference, test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / reference.data().len() as f64)
}
