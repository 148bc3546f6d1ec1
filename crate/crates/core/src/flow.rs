//! Optical flow and the flow-based inverse depth initializer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::warp::bilinear_sample;

/// Middlebury `.flo` magic number ("PIEH" as little-endian bytes).
pub const FLO_MAGIC: f32 = 202021.25;
/// Middlebury convention: components above this magnitude are unknown.
const FLO_UNKNOWN: f32 = 1e10;

/// Dense flow from a first image to a second, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub du: Image,
    pub dv: Image,
    pub valid: Vec<bool>,
    /// Set when the inputs carried no usable gradient information.
    pub low_confidence: bool,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            du: Image::new(width, height, 0.0),
            dv: Image::new(width, height, 0.0),
            valid: vec![true; width * height],
            low_confidence: false,
        }
    }

    pub fn width(&self) -> usize {
        self.du.width()
    }

    pub fn height(&self) -> usize {
        self.du.height()
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        self.du.data()[i].hypot(self.dv.data()[i])
    }
}

/// Coarse-to-fine Horn–Schunck parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub levels: usize,
    pub iterations: usize,
    /// Regularization weight as a fraction of the mean squared intensity
    /// gradient of the level.
    pub smoothness: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            levels: 4,
            iterations: 100,
            smoothness: 0.5,
        }
    }
}

fn central_gradients(img: &Image) -> (Image, Image) {
    let (w, h) = (img.width(), img.height());
    let gx = Image::from_fn(w, h, |x, y| {
        let l = img.get(x.saturating_sub(1), y);
        let r = img.get((x + 1).min(w - 1), y);
        let span = ((x + 1).min(w - 1) - x.saturating_sub(1)).max(1) as f64;
        (r - l) / span
    });
    let gy = Image::from_fn(w, h, |x, y| {
        let t = img.get(x, y.saturating_sub(1));
        let b = img.get(x, (y + 1).min(h - 1));
        let span = ((y + 1).min(h - 1) - y.saturating_sub(1)).max(1) as f64;
        (b - t) / span
    });
    (gx, gy)
}

/// Sample with border clamping.
fn sample_clamped(img: &Image, u: f64, v: f64) -> f64 {
    let u = u.clamp(0.0, (img.width() - 1) as f64);
    let v = v.clamp(0.0, (img.height() - 1) as f64);
    bilinear_sample(img, u, v).value
}

/// 4-neighbour average (HS "ū") with replicated borders, weights 1/6 for
/// edge neighbours and 1/12 for diagonals.
fn neighbour_mean(img: &Image) -> Image {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let at = |x: isize, y: isize| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    Image::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) / 6.0
            + (at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1)) / 12.0
    })
}

fn pyramid(img: &Image, levels: usize) -> Vec<Image> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.width() < 8 || last.height() < 8 {
            break;
        }
        out.push(last.downsample());
    }
    out
}

const WARPS_PER_LEVEL: usize = 5;

/// Horn–Schunck iterations on the total flow, linearized around its value on
/// entry.
fn hs_iterations(a: &Image, b: &Image, u: &mut Image, v: &mut Image, smoothness: f64, iterations: usize) {
    let warped = Image::from_fn(a.width(), a.height(), |x, y| {
        sample_clamped(b, x as f64 + u.get(x, y), y as f64 + v.get(x, y))
    });
    let (g1x, g1y) = central_gradients(a);
    let (g2x, g2y) = central_gradients(&warped);
    let ix = Image::from_fn(a.width(), a.height(), |x, y| 0.5 * (g1x.get(x, y) + g2x.get(x, y)));
    let iy = Image::from_fn(a.width(), a.height(), |x, y| 0.5 * (g1y.get(x, y) + g2y.get(x, y)));
    let it = Image::from_fn(a.width(), a.height(), |x, y| warped.get(x, y) - a.get(x, y));
    let grad_energy = ix.data().iter().zip(iy.data()).map(|(a, b)| a * a + b * b).sum::<f64>() / ix.len() as f64;
    let alpha2 = smoothness * grad_energy.max(1e-300);
    let (u0, v0) = (u.clone(), v.clone());
    for _ in 0..iterations {
        let ub = neighbour_mean(u);
        let vb = neighbour_mean(v);
        for i in 0..u.len() {
            let (gx, gy) = (ix.data()[i], iy.data()[i]);
            let r = it.data()[i] + gx * (ub.data()[i] - u0.data()[i]) + gy * (vb.data()[i] - v0.data()[i]);
            let k = r / (alpha2 + gx * gx + gy * gy);
            u.data_mut()[i] = ub.data()[i] - gx * k;
            v.data_mut()[i] = vb.data()[i] - gy * k;
        }
    }
}

/// Pyramidal Horn–Schunck flow from `i1` to `i2` with re-warping between
/// levels: `i2(x + flow(x)) ≈ i1(x)`.
pub fn estimate_flow(i1: &Image, i2: &Image, settings: &FlowSettings) -> Result<FlowField> {
    if !i1.same_shape(i2) {
        return Err(Error::invalid("estimate_flow: image shapes differ"));
    }
    if settings.levels == 0 {
        return Err(Error::invalid("estimate_flow: levels must be >= 1"));
    }
    if !(settings.smoothness > 0.0) {
        return Err(Error::invalid("estimate_flow: smoothness must be positive"));
    }
    let (w, h) = (i1.width(), i1.height());
    if w < 2 || h < 2 {
        return Err(Error::invalid("estimate_flow: images must be at least 2x2"));
    }
    let p1 = pyramid(i1, settings.levels);
    let p2 = pyramid(i2, settings.levels);

    let energy = |img: &Image| {
        let (gx, gy) = central_gradients(img);
        gx.data().iter().zip(gy.data()).map(|(a, b)| a * a + b * b).sum::<f64>() / img.len() as f64
    };
    if energy(i1) < 1e-14 || energy(i2) < 1e-14 {
        let mut f = FlowField::zeros(w, h);
        f.low_confidence = true;
        return Ok(f);
    }

    let coarsest = p1.last().unwrap();
    let mut u = Image::new(coarsest.width(), coarsest.height(), 0.0);
    let mut v = u.clone();
    for level in (0..p1.len()).rev() {
        let (a, b) = (&p1[level], &p2[level]);
        if u.width() != a.width() || u.height() != a.height() {
            u = u.upsample_to(a.width(), a.height()).map(|x| x * 2.0);
            v = v.upsample_to(a.width(), a.height()).map(|x| x * 2.0);
        }
        // Re-linearize a few times per level; one linearization from a
        // coarse estimate leaves a sub-pixel bias.
        let per_warp = settings.iterations.div_ceil(WARPS_PER_LEVEL).max(1);
        let mut remaining = settings.iterations;
        while remaining > 0 {
            let n = per_warp.min(remaining);
            remaining -= n;
            hs_iterations(a, b, &mut u, &mut v, settings.smoothness, n);
        }
    }
    let valid = u
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| a.is_finite() && b.is_finite())
        .collect();
    Ok(FlowField {
        du: u,
        dv: v,
        valid,
        low_confidence: false,
    })
}

/// Encode a flow field in the Middlebury `.flo` layout. Invalid pixels are
/// written with the "unknown" marker.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for i in 0..w * h {
        let (du, dv) = if flow.valid[i] {
            (flow.du.data()[i] as f32, flow.dv.data()[i] as f32)
        } else {
            (FLO_UNKNOWN, FLO_UNKNOWN)
        };
        out.extend_from_slice(&du.to_le_bytes());
        out.extend_from_slice(&dv.to_le_bytes());
    }
    out
}

fn read_f32(bytes: &[u8], offset: usize) -> Result<f32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Format {
            offset: bytes.len(),
            reason: format!("file truncated, expected 4 more bytes at offset {offset}"),
        })
}

fn read_i32(bytes: &[u8], offset: usize) -> Result<i32> {
    read_f32(bytes, offset).map(|f| f.to_bits() as i32)
}

/// Decode a Middlebury `.flo` buffer.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let magic = read_f32(bytes, 0)?;
    if magic != FLO_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic}, expected {FLO_MAGIC}"),
        });
    }
    let w = read_i32(bytes, 4)?;
    let h = read_i32(bytes, 8)?;
    if w <= 0 || h <= 0 {
        return Err(Error::Format {
            offset: if w <= 0 { 4 } else { 8 },
            reason: format!("invalid dimensions {w}x{h}"),
        });
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("file truncated, {w}x{h} field needs {expected} bytes"),
        });
    }
    let mut du = Vec::with_capacity(w * h);
    let mut dv = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let a = read_f32(bytes, 12 + 8 * i)?;
        let b = read_f32(bytes, 16 + 8 * i)?;
        let ok = a.is_finite() && b.is_finite() && a.abs() < 1e9 && b.abs() < 1e9;
        valid.push(ok);
        du.push(if ok { a as f64 } else { 0.0 });
        dv.push(if ok { b as f64 } else { 0.0 });
    }
    Ok(FlowField {
        du: Image::from_vec(w, h, du)?,
        dv: Image::from_vec(w, h, dv)?,
        valid,
        low_confidence: false,
    })
}

pub fn import_flow(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

pub fn export_flow(flow: &FlowField, path: &Path) -> Result<()> {
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

/// Inverse depth proportional to flow magnitude (floored at `epsilon`),
/// normalized to mean 1 over valid pixels.
pub fn depth_from_flow(flow: &FlowField, epsilon: f64) -> Result<DepthMap> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("depth_from_flow: epsilon must be positive"));
    }
    if !flow.valid.iter().any(|&v| v) {
        return Err(Error::EmptyFlow);
    }
    let inv = Image::from_fn(flow.width(), flow.height(), |x, y| {
        let i = y * flow.width() + x;
        if flow.valid[i] {
            flow.magnitude(i).max(epsilon)
        } else {
            0.0
        }
    });
    let depth = DepthMap::with_mask(inv, flow.valid.clone())?;
    Ok(depth.normalized().ok_or(Error::EmptyFlow)?.0)
}

/// Iterated joint bilateral filtering of the inverse depth, guided by the
/// intensity image. Invalid pixels neither change nor contribute.
pub fn edge_aware_refine(
    depth: &DepthMap,
    guide: &Image,
    spatial_sigma: f64,
    range_sigma: f64,
    iterations: usize,
) -> Result<DepthMap> {
    if depth.width() != guide.width() || depth.height() != guide.height() {
        return Err(Error::invalid("edge_aware_refine: depth and guide shapes differ"));
    }
    if !(spatial_sigma > 0.0 && range_sigma > 0.0) {
        return Err(Error::invalid("edge_aware_refine: sigmas must be positive"));
    }
    let (w, h) = (depth.width() as isize, depth.height() as isize);
    let radius = (2.0 * spatial_sigma).ceil() as isize;
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| {
            (-radius..=radius).map(move |dx| (-((dx * dx + dy * dy) as f64) / (2.0 * spatial_sigma * spatial_sigma)).exp())
        })
        .collect();
    let side = (2 * radius + 1) as usize;
    let inv_2r2 = 1.0 / (2.0 * range_sigma * range_sigma);
    let mut current = depth.inv_depth.clone();
    for _ in 0..iterations {
        let mut next = current.clone();
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if !depth.valid[i] {
                    continue;
                }
                let g0 = guide.data()[i];
                let mut num = 0.0;
                let mut den = 0.0;
                for dy in -radius..=radius {
                    let ny = y + dy;
                    if ny < 0 || ny >= h {
                        continue;
                    }
                    for dx in -radius..=radius {
                        let nx = x + dx;
                        if nx < 0 || nx >= w {
                            continue;
                        }
                        let j = (ny * w + nx) as usize;
                        if !depth.valid[j] {
                            continue;
                        }
                        let dg = guide.data()[j] - g0;
                        let wgt = spatial[(dy + radius) as usize * side + (dx + radius) as usize]
                            * (-dg * dg * inv_2r2).exp();
                        num += wgt * current.data()[j];
                        den += wgt;
                    }
                }
                next.data_mut()[i] = num / den;
            }
        }
        current = next;
    }
    DepthMap::with_mask(current, depth.valid.clone())
}
