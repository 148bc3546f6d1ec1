//! Dense image containers on the sensor grid.

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};

/// Row-major single-channel `f64` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Image {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn matches(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Separable Gaussian blur with clamped borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = Image::new(self.width, self.height, 0.0);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let xx = (x + i as isize - radius).clamp(0, w - 1);
                    acc += k * self.get(xx as usize, y as usize);
                }
                tmp.set(x as usize, y as usize, acc);
            }
        }
        let mut out = Image::new(self.width, self.height, 0.0);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let yy = (y + i as isize - radius).clamp(0, h - 1);
                    acc += k * tmp.get(x as usize, yy as usize);
                }
                out.set(x as usize, y as usize, acc);
            }
        }
        out
    }

    /// Blur then decimate by two (next pyramid level).
    pub fn downsample(&self) -> Image {
        let blurred = self.gaussian_blur(0.85);
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        Image::from_fn(w, h, |x, y| blurred.get((2 * x).min(self.width - 1), (2 * y).min(self.height - 1)))
    }

    /// Bilinear upsampling to the given size, matching `downsample`'s grid.
    pub fn upsample_to(&self, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| {
            let u = (x as f64 * 0.5).min((self.width - 1) as f64);
            let v = (y as f64 * 0.5).min((self.height - 1) as f64);
            let x0 = u.floor() as usize;
            let y0 = v.floor() as usize;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fx = u - x0 as f64;
            let fy = v - y0 as f64;
            let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
            let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }
}

/// Grayscale intensity frame, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub image: Image,
    pub timestamp: f64,
}

impl IntensityFrame {
    /// Validates that every pixel is finite and inside `[0, 1]`.
    pub fn new(image: Image, timestamp: f64) -> Result<Self> {
        if let Some((i, v)) = image
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::invalid(format!(
                "intensity {v} at pixel {i} outside [0, 1]"
            )));
        }
        if !timestamp.is_finite() {
            return Err(Error::invalid("non-finite frame timestamp"));
        }
        Ok(IntensityFrame { image, timestamp })
    }

    /// Clamps into `[0, 1]`, mapping non-finite values to 0.
    pub fn from_clamped(image: Image, timestamp: f64) -> Self {
        let image = image.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        IntensityFrame { image, timestamp }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// Per-pixel inverse depth with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub inv_depth: Image,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Pixels with non-positive or non-finite inverse depth are marked invalid.
    pub fn new(inv_depth: Image) -> Self {
        let valid = inv_depth.data().iter().map(|&q| q > 0.0 && q.is_finite()).collect();
        DepthMap { inv_depth, valid }
    }

    pub fn with_mask(inv_depth: Image, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != inv_depth.len() {
            return Err(Error::invalid("validity mask size mismatch"));
        }
        let valid = valid
            .into_iter()
            .zip(inv_depth.data())
            .map(|(m, &q)| m && q > 0.0 && q.is_finite())
            .collect();
        Ok(DepthMap { inv_depth, valid })
    }

    pub fn constant(width: usize, height: usize, inv_depth: f64) -> Self {
        DepthMap::new(Image::new(width, height, inv_depth))
    }

    pub fn width(&self) -> usize {
        self.inv_depth.width()
    }

    pub fn height(&self) -> usize {
        self.inv_depth.height()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.inv_depth.width() + x]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.inv_depth.width() + x;
        self.valid[i].then(|| self.inv_depth.data()[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn mean_valid(&self) -> Option<f64> {
        let (sum, n) = self
            .inv_depth
            .data()
            .iter()
            .zip(&self.valid)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (&q, _)| (s + q, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Multiply every valid inverse depth by `s`.
    pub fn scaled(&self, s: f64) -> DepthMap {
        let inv_depth = self.inv_depth.map(|q| q * s);
        DepthMap {
            inv_depth,
            valid: self.valid.clone(),
        }
    }

    /// Rescale so the mean valid inverse depth is 1; returns the map and the
    /// factor applied.
    pub fn normalized(&self) -> Option<(DepthMap, f64)> {
        let mean = self.mean_valid()?;
        (mean > 0.0).then(|| (self.scaled(1.0 / mean), 1.0 / mean))
    }

    /// Next pyramid level; a coarse pixel averages its valid fine children.
    pub fn downsample(&self) -> DepthMap {
        let (w, h) = (self.width(), self.height());
        let cw = w.div_ceil(2);
        let ch = h.div_ceil(2);
        let mut inv = Image::new(cw, ch, 0.0);
        let mut valid = vec![false; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let mut sum = 0.0;
                let mut n = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (fx, fy) = (2 * x + dx, 2 * y + dy);
                        if fx < w && fy < h {
                            if let Some(q) = self.get(fx, fy) {
                                sum += q;
                                n += 1;
                            }
                        }
                    }
                }
                if n > 0 {
                    inv.set(x, y, sum / n as f64);
                    valid[y * cw + x] = true;
                }
            }
        }
        DepthMap {
            inv_depth: inv,
            valid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_validation() {
        assert!(IntensityFrame::new(Image::new(2, 2, 0.5), 0.0).is_ok());
        assert!(IntensityFrame::new(Image::new(2, 2, 1.5), 0.0).is_err());
        assert!(IntensityFrame::new(Image::new(2, 2, f64::NAN), 0.0).is_err());
    }

    #[test]
    fn depth_mask_excludes_non_positive() {
        let d = DepthMap::new(Image::from_vec(3, 1, vec![1.0, 0.0, -1.0]).unwrap());
        assert_eq!(d.valid, vec![true, false, false]);
        assert_eq!(d.mean_valid(), Some(1.0));
    }

    #[test]
    fn normalization_sets_mean_to_one() {
        let d = DepthMap::new(Image::from_vec(2, 1, vec![2.0, 6.0]).unwrap());
        let (n, s) = d.normalized().unwrap();
        assert_eq!(s, 0.25);
        assert_eq!(n.inv_depth.data(), &[0.5, 1.5]);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Image::new(7, 5, 0.3);
        assert!(img.gaussian_blur(1.5).data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
