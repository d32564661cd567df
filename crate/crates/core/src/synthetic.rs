//! Deterministic synthetic blurred/sharp pairs for smoke runs and tests.

use alloc::vec::Vec;

use rand::Rng;

use crate::augment::Pair;
use crate::image::Image;
use crate::model::reflect_index;
use crate::rng;

/// Sharp image: a smooth colour gradient with a few axis-aligned rectangles.
pub fn sharp_image(size: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, 0);
    let base: [f32; 3] = core::array::from_fn(|_| r.gen_range(0.2..0.8));
    let slope: [(f32, f32); 3] = core::array::from_fn(|_| (r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3)));
    let rects: Vec<(usize, usize, usize, usize, [f32; 3])> = (0..4)
        .map(|_| {
            let (y0, x0) = (r.gen_range(0..size), r.gen_range(0..size));
            let (h, w) = (r.gen_range(2..=size / 2), r.gen_range(2..=size / 2));
            (y0, x0, h, w, core::array::from_fn(|_| r.gen_range(0.05..0.95)))
        })
        .collect();
    let s = size as f32;
    let mut img = Image::from_fn(size, size, |c, y, x| {
        base[c] + slope[c].0 * (y as f32 / s - 0.5) + slope[c].1 * (x as f32 / s - 0.5)
    });
    for (y0, x0, h, w, colour) in rects {
        for y in y0..(y0 + h).min(size) {
            for x in x0..(x0 + w).min(size) {
                for (c, v) in colour.iter().enumerate() {
                    img.set(c, y, x, *v);
                }
            }
        }
    }
    img.clamp01();
    img
}

/// Horizontal box motion blur of odd length with reflected borders.
pub fn motion_blur(img: &Image, length: usize) -> Image {
    let r = (length / 2) as isize;
    let w = img.width();
    Image::from_fn(img.height(), w, |c, y, x| {
        let sum: f32 = (-r..=r).map(|d| img.get(c, y, reflect_index(x as isize + d, w))).sum();
        sum / (2 * r + 1) as f32
    })
}

/// `n` pairs of `size × size` images; the blur length is 5.
pub fn pairs(n: usize, size: usize, seed: u64) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            let sharp = sharp_image(size, rng::derive_seed(seed, i as u64));
            Pair {
                blur: motion_blur(&sharp, 5),
                sharp,
            }
        })
        .collect()
}
