use vimagine::tensor::{Real, Tensor};

use crate::error::{QualityError, Result};

/// Row-major grayscale image with intensities in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height * width != data.len() || height == 0 || width == 0 {
            return Err(QualityError::config(format!(
                "{height}x{width} image needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        GrayImage { height, width, data }
    }

    /// `[C,H,W]` with one or three channels; RGB is reduced to luminance.
    pub fn from_chw<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || !matches!(s[0], 1 | 3) {
            return Err(QualityError::config(format!("expected a [1|3,H,W] image, got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let d = t.data();
        let data = if s[0] == 1 {
            d.iter().map(|v| v.as_f64()).collect()
        } else {
            (0..h * w)
                .map(|i| (0..3).map(|c| LUMA[c] * d[c * h * w + i].as_f64()).sum())
                .collect()
        };
        GrayImage::new(h, w, data)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 2x2 block means; an odd trailing row or column is dropped.
    pub fn downsample(&self) -> GrayImage {
        let (h, w) = (self.height / 2, self.width / 2);
        GrayImage::from_fn(h, w, |y, x| {
            (self.at(2 * y, 2 * x) + self.at(2 * y, 2 * x + 1) + self.at(2 * y + 1, 2 * x) + self.at(2 * y + 1, 2 * x + 1))
                / 4.0
        })
    }
}
