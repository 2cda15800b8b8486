use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel image of reals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty(format!("image of size {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0);
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::filled(width, height, 0.0);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Batch of images as an `[n, 1, h, w]` tensor.
    pub fn batch(images: &[&GrayImage]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("empty image batch".into()))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if img.width != w || img.height != h {
                return Err(Error::shape("images in a batch must share one size"));
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new(vec![images.len(), 1, h, w], data)
    }

    /// Splits an `[n, 1, h, w]` tensor back into images.
    pub fn unbatch(t: &Tensor) -> Result<Vec<GrayImage>> {
        let [_, c, h, w] = t.dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("expected one channel, got {c}")));
        }
        t.data()
            .chunks(h * w)
            .map(|c| GrayImage::new(w, h, c.to_vec()))
            .collect()
    }
}
