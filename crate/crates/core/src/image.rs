//! Planar RGB images with values in [0, 1].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::reflect_index;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Three-channel image stored channel-major (C×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("empty image {height}x{width}")));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Shape {
                op: "Image::new",
                lhs: alloc::vec![3, height, width],
                rhs: alloc::vec![data.len()],
            });
        }
        Ok(Image { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// RGB triple at a pixel.
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn hflip(&self) -> Self {
        Image::from_fn(self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    pub fn vflip(&self) -> Self {
        Image::from_fn(self.height, self.width, |c, y, x| self.get(c, self.height - 1 - y, x))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |c, y, x| self.get(c, top + y, left + x)))
    }

    /// Grows the image to at least `min_h × min_w` by reflecting around a
    /// centered placement; larger extents are left unchanged.
    pub fn reflect_pad_center(&self, min_h: usize, min_w: usize) -> Self {
        let (h, w) = (self.height.max(min_h), self.width.max(min_w));
        let top = (h - self.height) / 2;
        let left = (w - self.width) / 2;
        Image::from_fn(h, w, |c, y, x| {
            let sy = reflect_index(y as isize - top as isize, self.height);
            let sx = reflect_index(x as isize - left as isize, self.width);
            self.get(c, sy, sx)
        })
    }

    /// Stacks images into an N×3×H×W tensor.
    pub fn batch<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if !img.same_size(first) {
                return Err(Error::Shape {
                    op: "Image::batch",
                    lhs: alloc::vec![first.height, first.width],
                    rhs: alloc::vec![img.height, img.width],
                });
            }
            data.extend(img.data.iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(&[images.len(), 3, first.height, first.width], data)
    }

    /// Image `index` of an N×3×H×W tensor, clamped to [0, 1].
    pub fn from_batch<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if c != 3 || index >= n {
            return Err(Error::InvalidArgument(format!("cannot take image {index} of {:?}", t.shape())));
        }
        let per = 3 * h * w;
        let data = t.data()[index * per..(index + 1) * per]
            .iter()
            .map(|v| (v.to_f64() as f32).clamp(0.0, 1.0))
            .collect();
        Image::new(h, w, data)
    }
}
