//! Pinhole camera model.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Calibrated pinhole intrinsics, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a camera-frame point to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// False when the point is behind the camera or lands outside
    /// `[0, width-1] x [0, height-1]`.
    pub in_bounds: bool,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("sensor size must be non-zero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!("cx={} outside [0, {})", self.cx, self.width)));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!("cy={} outside [0, {})", self.cy, self.height)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn project(&self, point: &Vector3<f64>) -> Projection {
        let z = point.z;
        if !(z > 0.0) {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                in_bounds: false,
            };
        }
        let u = self.fx * point.x / z + self.cx;
        let v = self.fy * point.y / z + self.cy;
        let in_bounds = u >= 0.0
            && v >= 0.0
            && u <= (self.width - 1) as f64
            && v <= (self.height - 1) as f64;
        Projection { u, v, in_bounds }
    }

    /// Lift a pixel to the camera frame at the given inverse depth.
    pub fn backproject(&self, u: f64, v: f64, inv_depth: f64) -> Result<Vector3<f64>> {
        if !(inv_depth > 0.0 && inv_depth.is_finite()) {
            return Err(Error::invalid(format!(
                "inverse depth must be positive and finite, got {inv_depth}"
            )));
        }
        Ok(self.backproject_unchecked(u, v, inv_depth))
    }

    #[inline]
    pub(crate) fn backproject_unchecked(&self, u: f64, v: f64, inv_depth: f64) -> Vector3<f64> {
        self.ray(u, v) / inv_depth
    }

    /// Ray through the pixel with unit z component.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Jacobian of `project` with respect to the camera-frame point.
    #[inline]
    pub(crate) fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        [
            [self.fx * iz, 0.0, -self.fx * p.x * iz2],
            [0.0, self.fy * iz, -self.fy * p.y * iz2],
        ]
    }

    /// Intrinsics of the next pyramid level (half resolution, pixel centers
    /// kept consistent).
    pub fn half(&self) -> CameraIntrinsics {
        let width = self.width.div_ceil(2);
        let height = self.height.div_ceil(2);
        CameraIntrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: ((self.cx + 0.5) * 0.5 - 0.5).clamp(0.0, width as f64 - 1.0),
            cy: ((self.cy + 0.5) * 0.5 - 0.5).clamp(0.0, height as f64 - 1.0),
            width,
            height,
        }
    }

    /// Parse the one-line calibration format `fx fy cx cy width height`.
    pub fn parse(text: &str) -> Result<Self> {
        let (line_no, line) = text
            .lines()
            .enumerate()
            .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .ok_or(Error::Parse {
                line: 1,
                reason: "empty calibration file".into(),
            })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |reason: String| Error::Parse {
            line: line_no + 1,
            reason,
        };
        if fields.len() != 6 {
            return Err(parse_err(format!(
                "expected `fx fy cx cy width height`, got {} fields",
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("field {}: {e}", i + 1)))
        };
        let n = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| parse_err(format!("field {}: {e}", i + 1)))
        };
        CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, n(4)?, n(5)?)
    }

    pub fn to_calibration_string(&self) -> String {
        format!(
            "{} {} {} {} {} {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
