//! Inverse warping (gather), forward splatting (scatter) and blending.

use nalgebra::{Vector3, Vector6};

use crate::camera::CameraIntrinsics;
use crate::image::{DepthMap, Image, IntensityFrame};
use crate::se3::Pose;

/// Bilinear lookup with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub valid: bool,
    pub d_du: f64,
    pub d_dv: f64,
}

const INVALID_SAMPLE: Sample = Sample {
    value: 0.0,
    valid: false,
    d_du: 0.0,
    d_dv: 0.0,
};

/// Bilinear interpolation of the four neighbours of `(u, v)`. Invalid when
/// any neighbour falls outside the image.
pub fn bilinear_sample(image: &Image, u: f64, v: f64) -> Sample {
    let (w, h) = (image.width(), image.height());
    if w < 2 || h < 2 || !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return INVALID_SAMPLE;
    }
    let x0 = (u.floor() as usize).min(w - 2);
    let y0 = (v.floor() as usize).min(h - 2);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let i = image.index(x0, y0);
    let d = image.data();
    let (p00, p10, p01, p11) = (d[i], d[i + 1], d[i + w], d[i + w + 1]);
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    Sample {
        value: top + (bot - top) * fy,
        valid: true,
        d_du: (p10 - p00) * (1.0 - fy) + (p11 - p01) * fy,
        d_dv: bot - top,
    }
}

/// Result of sampling an image at a camera-frame 3-D point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointSample {
    pub value: f64,
    /// Derivative of the sampled value with respect to the 3-D point.
    pub grad_point: Vector3<f64>,
}

/// Project `p` with `k` and sample `source` there.
#[inline]
pub(crate) fn sample_at_point(source: &Image, k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<PointSample> {
    if !(p.z > 0.0) {
        return None;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    let s = bilinear_sample(source, u, v);
    if !s.valid {
        return None;
    }
    let jp = k.projection_jacobian(p);
    let grad_point = Vector3::new(
        s.d_du * jp[0][0],
        s.d_dv * jp[1][1],
        s.d_du * jp[0][2] + s.d_dv * jp[1][2],
    );
    Some(PointSample {
        value: s.value,
        grad_point,
    })
}

/// Warped image plus a per-pixel validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: Image,
    pub valid: Vec<bool>,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_count() == 0
    }
}

/// Per-pixel derivatives of an inverse warp.
#[derive(Debug, Clone)]
pub struct WarpJacobian {
    /// d(warped value)/d(twist), zero on invalid pixels.
    pub d_twist: Vec<Vector6<f64>>,
    /// d(warped value)/d(target inverse depth), zero on invalid pixels.
    pub d_inv_depth: Vec<f64>,
}

/// Gather `source` into the target view: each valid target pixel is lifted
/// with its inverse depth, moved by `pose_target_to_source` and sampled.
pub fn inverse_warp(
    source: &IntensityFrame,
    depth_at_target: &DepthMap,
    pose_target_to_source: &Pose,
    k: &CameraIntrinsics,
) -> WarpResult {
    inverse_warp_image(&source.image, depth_at_target, pose_target_to_source, k).0
}

/// [`inverse_warp`] together with its analytic Jacobians.
pub fn inverse_warp_with_jacobian(
    source: &IntensityFrame,
    depth_at_target: &DepthMap,
    pose_target_to_source: &Pose,
    k: &CameraIntrinsics,
) -> (WarpResult, WarpJacobian) {
    let (res, jac) = inverse_warp_image(&source.image, depth_at_target, pose_target_to_source, k);
    (res, jac)
}

pub(crate) fn inverse_warp_image(
    source: &Image,
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> (WarpResult, WarpJacobian) {
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    let mut image = Image::new(w, h, 0.0);
    let mut valid = vec![false; n];
    let mut d_twist = vec![Vector6::zeros(); n];
    let mut d_inv_depth = vec![0.0; n];
    let r = pose.rotation();
    let dtw = pose.twist_derivative();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(q) = depth.get(x, y) else { continue };
            let ray = k.ray(x as f64, y as f64);
            let p = ray / q;
            let pt = pose.transform(&p);
            let Some(s) = sample_at_point(source, k, &pt) else { continue };
            image.data_mut()[i] = s.value;
            valid[i] = true;
            d_twist[i] = dtw.transpose_mul(&p, &s.grad_point);
            d_inv_depth[i] = s.grad_point.dot(&(r * (-ray / (q * q))));
        }
    }
    (
        WarpResult { image, valid },
        WarpJacobian {
            d_twist,
            d_inv_depth,
        },
    )
}

/// Scatter accumulators of a forward warp.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatBuffer {
    pub accum: Image,
    pub weight: Image,
    /// Pixels that are the nearest target pixel of at least one source
    /// sample. Pixels with weight but no coverage only receive the bilinear
    /// spill of samples landing next to them.
    pub covered: Vec<bool>,
}

impl SplatBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        SplatBuffer {
            accum: Image::new(width, height, 0.0),
            weight: Image::new(width, height, 0.0),
            covered: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.accum.width()
    }

    pub fn height(&self) -> usize {
        self.accum.height()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.data().iter().all(|&w| w <= 0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.data().iter().sum()
    }

    /// Normalized value at pixel index `i`, `None` where nothing landed.
    #[inline]
    pub fn value(&self, i: usize) -> Option<f64> {
        let w = self.weight.data()[i];
        (w > 0.0).then(|| self.accum.data()[i] / w)
    }

    /// `accum / weight`, 0 where the weight is zero.
    pub fn normalized(&self) -> Image {
        Image::from_fn(self.width(), self.height(), |x, y| {
            self.value(self.accum.index(x, y)).unwrap_or(0.0)
        })
    }
}

struct Splat {
    target: [usize; 4],
    bilinear: [f64; 4],
    inv_depth: f64,
    value: f64,
}

/// Scatter `source` into the target view. Each valid source pixel lands on
/// the four enclosing target pixels with bilinear weights times an occlusion
/// weight `exp(gamma * inv_depth')`.
///
/// The occlusion weight is taken relative to the nearest surface whose
/// footprint covers the target pixel centre (the nearest-pixel contribution
/// with the largest inverse depth) and never exceeds 1, so surfaces that
/// only graze a pixel cannot outweigh the surface that covers it.
pub fn forward_splat(
    source: &IntensityFrame,
    depth_at_source: &DepthMap,
    pose_source_to_target: &Pose,
    k: &CameraIntrinsics,
    gamma: f64,
) -> SplatBuffer {
    let (w, h) = (k.width, k.height);
    let mut splats = Vec::with_capacity(w * h);
    let mut cover = vec![f64::NEG_INFINITY; w * h];
    let mut reach = vec![f64::NEG_INFINITY; w * h];
    for y in 0..depth_at_source.height() {
        for x in 0..depth_at_source.width() {
            let Some(q) = depth_at_source.get(x, y) else { continue };
            let p = pose_source_to_target.transform(&(k.ray(x as f64, y as f64) / q));
            let proj = k.project(&p);
            if !proj.in_bounds {
                continue;
            }
            let qt = 1.0 / p.z;
            let x0 = (proj.u.floor() as usize).min(w.saturating_sub(2));
            let y0 = (proj.v.floor() as usize).min(h.saturating_sub(2));
            let fx = proj.u - x0 as f64;
            let fy = proj.v - y0 as f64;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let target = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1];
            let bilinear = [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ];
            let nearest = (proj.v.round() as usize).min(h - 1) * w + (proj.u.round() as usize).min(w - 1);
            cover[nearest] = cover[nearest].max(qt);
            for (t, b) in target.iter().zip(bilinear) {
                if b > 0.0 {
                    reach[*t] = reach[*t].max(qt);
                }
            }
            splats.push(Splat {
                target,
                bilinear,
                inv_depth: qt,
                value: source.image.data()[y * source.width() + x],
            });
        }
    }
    let mut buf = SplatBuffer::empty(w, h);
    for s in &splats {
        for (t, b) in s.target.iter().zip(s.bilinear) {
            if b <= 0.0 {
                continue;
            }
            let reference = if cover[*t].is_finite() { cover[*t] } else { reach[*t] };
            let occlusion = if gamma == 0.0 {
                1.0
            } else {
                (gamma * (s.inv_depth - reference).min(0.0)).exp()
            };
            let wgt = b * occlusion;
            buf.accum.data_mut()[*t] += wgt * s.value;
            buf.weight.data_mut()[*t] += wgt;
        }
    }
    for (c, z) in buf.covered.iter_mut().zip(&cover) {
        *c = z.is_finite();
    }
    buf
}

/// Alpha-blend two splat buffers.
///
/// Where both have weight, the normalized values are combined with weights
/// `alpha * w_a` and `(1 - alpha) * w_b`; where only one has weight it
/// supplies the pixel; holes are filled by iterated 3x3 averaging.
///
/// Coverage takes precedence over spill: if exactly one buffer covers a
/// pixel, it supplies the pixel alone. Otherwise the rule above applies.
pub fn blend(a: &SplatBuffer, b: &SplatBuffer, alpha: f64) -> Image {
    let (w, h) = (a.width(), a.height());
    assert!(
        a.accum.same_shape(&b.accum),
        "blend: buffer shapes differ ({}x{} vs {}x{})",
        w,
        h,
        b.width(),
        b.height()
    );
    let alpha = alpha.clamp(0.0, 1.0);
    let mut out = Image::new(w, h, 0.0);
    let mut filled = vec![false; w * h];
    for i in 0..w * h {
        let (ca, cb) = (a.covered[i] && a.value(i).is_some(), b.covered[i] && b.value(i).is_some());
        let (va, vb) = match (ca, cb) {
            (true, false) => (a.value(i), None),
            (false, true) => (None, b.value(i)),
            _ => (a.value(i), b.value(i)),
        };
        let value = match (va, vb) {
            (Some(va), Some(vb)) => {
                let wa = alpha * a.weight.data()[i];
                let wb = (1.0 - alpha) * b.weight.data()[i];
                if wa + wb > 0.0 {
                    Some((wa * va + wb * vb) / (wa + wb))
                } else if alpha >= 0.5 {
                    Some(va)
                } else {
                    Some(vb)
                }
            }
            (Some(va), None) => Some(va),
            (None, Some(vb)) => Some(vb),
            (None, None) => None,
        };
        if let Some(v) = value {
            out.data_mut()[i] = v;
            filled[i] = true;
        }
    }
    fill_holes(&mut out, &mut filled);
    out
}

/// Iterated 3x3 averaging over filled neighbours until every pixel is
/// filled (or nothing is filled at all).
pub fn fill_holes(image: &mut Image, filled: &mut [bool]) {
    let (w, h) = (image.width(), image.height());
    if !filled.iter().any(|&f| f) {
        return;
    }
    loop {
        let holes: Vec<usize> = (0..w * h).filter(|&i| !filled[i]).collect();
        if holes.is_empty() {
            return;
        }
        let mut updates = Vec::new();
        for &i in &holes {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut sum = 0.0;
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if filled[j] {
                        sum += image.data()[j];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                updates.push((i, sum / n as f64));
            }
        }
        for (i, v) in updates {
            image.data_mut()[i] = v;
            filled[i] = true;
        }
    }
}
