//! Joint estimation of two dense inverse depth maps and the relative pose
//! between two successive intensity frames.
//!
//! The objective is the symmetric photometric error of warping each frame
//! into the other plus an edge-aware smoothness prior on both depth maps,
//! minimized with Adam over every valid inverse depth and the six twist
//! coordinates.

use std::path::Path;

use nalgebra::Vector6;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, IntensityFrame};
use crate::optim::{charbonnier, charbonnier_grad, Adam, AdamParams};
use crate::se3::{Pose, Twist};
use crate::warp::sample_at_point;

/// Minimum fraction of interior pixels that must survive a warp.
pub const MIN_OVERLAP: f64 = 0.01;
/// Floor applied to inverse depths after every optimizer step.
const MIN_INV_DEPTH: f64 = 1e-3;
const RENORMALIZE_EVERY: usize = 50;
const CONVERGENCE_WINDOW: usize = 10;
const DIVERGENCE_PATIENCE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Adam step for inverse depth entries.
    pub step_size: f64,
    /// Adam step for the twist coordinates.
    pub twist_step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iterations: usize,
    /// Stop once the relative loss change over 10 iterations drops below this.
    pub convergence_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            step_size: 1e-3,
            twist_step_size: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iterations: 2000,
            convergence_tol: 1e-5,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Config {
            field: format!("{name}.{field}"),
            reason: reason.into(),
        };
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(bad("step_size", "must be positive"));
        }
        if !(self.twist_step_size > 0.0 && self.twist_step_size.is_finite()) {
            return Err(bad("twist_step_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(bad("beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta2", "must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(bad("max_iterations", "must be >= 1"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(bad("convergence_tol", "must be non-negative"));
        }
        Ok(())
    }

    pub(crate) fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Weights of the depth/pose objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthObjective {
    /// Edge-awareness of the smoothness prior.
    pub beta: f64,
    /// Weight of the smoothness prior.
    pub lambda_sm: f64,
}

impl Default for DepthObjective {
    fn default() -> Self {
        DepthObjective {
            beta: 10.0,
            lambda_sm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPoseEstimate {
    pub d_k: DepthMap,
    pub d_k1: DepthMap,
    /// Maps points from frame k's camera into frame k+1's camera.
    pub xi: Pose,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub iterations_run: usize,
}

/// Photometric loss value and gradients.
#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    pub value: f64,
    pub grad_d_k: Vec<f64>,
    pub grad_d_k1: Vec<f64>,
    pub grad_xi: Vector6<f64>,
    /// Smallest valid fraction of interior pixels over the two warps.
    pub overlap: f64,
}

/// One direction of a photometric warp term, unnormalized.
pub(crate) struct WarpTerm {
    pub sum: f64,
    pub count: usize,
    pub interior: usize,
    /// d(sum)/d(inverse depth) per target pixel.
    pub grad_q: Vec<f64>,
    /// d(sum)/d(twist of `pose`).
    pub grad_twist: Vector6<f64>,
}

impl WarpTerm {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn overlap(&self) -> f64 {
        self.count as f64 / self.interior.max(1) as f64
    }
}

/// Σ ρ(source(warp(p)) - reference(p)) over interior target pixels with
/// valid depth and an in-bounds sample.
pub(crate) fn warp_term(
    reference: &Image,
    source: &Image,
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    with_depth_grad: bool,
) -> WarpTerm {
    let (w, h) = (reference.width(), reference.height());
    let dtw = pose.twist_derivative();
    let r = pose.rotation();
    let mut term = WarpTerm {
        sum: 0.0,
        count: 0,
        interior: w.saturating_sub(2) * h.saturating_sub(2),
        grad_q: if with_depth_grad { vec![0.0; w * h] } else { Vec::new() },
        grad_twist: Vector6::zeros(),
    };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let Some(q) = depth.get(x, y) else { continue };
            let ray = k.ray(x as f64, y as f64);
            let p = ray / q;
            let pt = pose.transform(&p);
            let Some(s) = sample_at_point(source, k, &pt) else { continue };
            let res = s.value - reference.data()[i];
            term.sum += charbonnier(res);
            term.count += 1;
            let g = charbonnier_grad(res);
            term.grad_twist += dtw.transpose_mul(&p, &s.grad_point) * g;
            if with_depth_grad {
                term.grad_q[i] = g * s.grad_point.dot(&(r * (-ray / (q * q))));
            }
        }
    }
    term
}

fn check_shapes(
    i_k: &IntensityFrame,
    i_k1: &IntensityFrame,
    d_k: &DepthMap,
    d_k1: &DepthMap,
    k: &CameraIntrinsics,
) -> Result<()> {
    let ok = i_k.image.matches(k)
        && i_k1.image.matches(k)
        && d_k.inv_depth.matches(k)
        && d_k1.inv_depth.matches(k);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("frame/depth dimensions do not match the intrinsics"))
    }
}

/// Symmetric photometric loss: frame k+1 warped into frame k through `d_k`
/// and `xi`, plus frame k warped into frame k+1 through `d_k1` and `xi⁻¹`,
/// each averaged over its valid interior pixels.
pub fn photometric_loss(
    i_k: &IntensityFrame,
    i_k1: &IntensityFrame,
    d_k: &DepthMap,
    d_k1: &DepthMap,
    xi: &Pose,
    k: &CameraIntrinsics,
) -> Result<PhotometricLoss> {
    check_shapes(i_k, i_k1, d_k, d_k1, k)?;
    let fwd = warp_term(&i_k.image, &i_k1.image, d_k, xi, k, true);
    let inv = xi.inverse();
    let bwd = warp_term(&i_k1.image, &i_k.image, d_k1, &inv, k, true);
    let overlap = fwd.overlap().min(bwd.overlap());
    if overlap < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap {
            stage: "photometric_loss",
            fraction: overlap,
        });
    }
    let (nf, nb) = (fwd.count as f64, bwd.count as f64);
    // xi⁻¹ = exp(-twist), so its twist gradient enters with a minus sign.
    let grad_xi = fwd.grad_twist / nf - bwd.grad_twist / nb;
    Ok(PhotometricLoss {
        value: fwd.mean() + bwd.mean(),
        grad_d_k: fwd.grad_q.iter().map(|g| g / nf).collect(),
        grad_d_k1: bwd.grad_q.iter().map(|g| g / nb).collect(),
        grad_xi,
        overlap,
    })
}

/// Edge-aware smoothness: mean over horizontal neighbour pairs of
/// ρ(Δx d)·exp(-β|Δx I|) plus the same over vertical pairs. Pairs touching
/// an invalid pixel are skipped.
pub fn smoothness_loss(d: &DepthMap, image: &Image, beta: f64) -> Result<(f64, Vec<f64>)> {
    if d.width() != image.width() || d.height() != image.height() {
        return Err(Error::invalid("smoothness_loss: depth and image shapes differ"));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid("smoothness_loss: beta must be non-negative"));
    }
    let (w, h) = (d.width(), d.height());
    let q = d.inv_depth.data();
    let img = image.data();
    let mut grad = vec![0.0; w * h];
    let mut value = 0.0;
    for (dx, dy) in [(1usize, 0usize), (0, 1)] {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut pair_grads = Vec::new();
        for y in 0..h - dy {
            for x in 0..w - dx {
                let i = y * w + x;
                let j = (y + dy) * w + (x + dx);
                if !(d.valid[i] && d.valid[j]) {
                    continue;
                }
                let weight = (-beta * (img[j] - img[i]).abs()).exp();
                let diff = q[j] - q[i];
                sum += charbonnier(diff) * weight;
                count += 1;
                pair_grads.push((i, j, charbonnier_grad(diff) * weight));
            }
        }
        if count > 0 {
            let n = count as f64;
            value += sum / n;
            for (i, j, g) in pair_grads {
                grad[j] += g / n;
                grad[i] -= g / n;
            }
        }
    }
    Ok((value, grad))
}

struct Evaluation {
    loss: f64,
    grad: Vec<f64>,
}

struct Problem<'a> {
    i_k: &'a IntensityFrame,
    i_k1: &'a IntensityFrame,
    mask_k: &'a [bool],
    mask_k1: &'a [bool],
    k: &'a CameraIntrinsics,
    objective: DepthObjective,
    n: usize,
}

impl Problem<'_> {
    fn unpack(&self, x: &[f64]) -> (DepthMap, DepthMap, Pose) {
        let (w, h) = (self.k.width, self.k.height);
        let d_k = DepthMap {
            inv_depth: Image::from_vec(w, h, x[..self.n].to_vec()).expect("size"),
            valid: self.mask_k.to_vec(),
        };
        let d_k1 = DepthMap {
            inv_depth: Image::from_vec(w, h, x[self.n..2 * self.n].to_vec()).expect("size"),
            valid: self.mask_k1.to_vec(),
        };
        let tw = Twist::from_column_slice(&x[2 * self.n..]);
        (d_k, d_k1, Pose::exp_unchecked(&tw))
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let (d_k, d_k1, xi) = self.unpack(x);
        let ph = photometric_loss(self.i_k, self.i_k1, &d_k, &d_k1, &xi, self.k)?;
        let (sk, gk) = smoothness_loss(&d_k, &self.i_k.image, self.objective.beta)?;
        let (sk1, gk1) = smoothness_loss(&d_k1, &self.i_k1.image, self.objective.beta)?;
        let lam = self.objective.lambda_sm;
        let mut grad = Vec::with_capacity(x.len());
        grad.extend(ph.grad_d_k.iter().zip(&gk).map(|(a, b)| a + lam * b));
        grad.extend(ph.grad_d_k1.iter().zip(&gk1).map(|(a, b)| a + lam * b));
        grad.extend(ph.grad_xi.iter());
        Ok(Evaluation {
            loss: ph.value + lam * (sk + sk1),
            grad,
        })
    }
}

/// Minimize photometric + λ_sm·(smoothness(d_k) + smoothness(d_k1)) from the
/// given initial depths and a zero twist. The best iterate is returned, so
/// `final_loss <= initial_loss` always holds.
pub fn estimate_depth_and_pose(
    i_k: &IntensityFrame,
    i_k1: &IntensityFrame,
    init_d_k: &DepthMap,
    init_d_k1: &DepthMap,
    k: &CameraIntrinsics,
    settings: &OptimizerSettings,
    objective: &DepthObjective,
) -> Result<DepthPoseEstimate> {
    estimate_depth_and_pose_from(i_k, i_k1, init_d_k, init_d_k1, &Pose::identity(), k, settings, objective)
}

/// [`estimate_depth_and_pose`] with an explicit initial pose.
#[allow(clippy::too_many_arguments)]
pub fn estimate_depth_and_pose_from(
    i_k: &IntensityFrame,
    i_k1: &IntensityFrame,
    init_d_k: &DepthMap,
    init_d_k1: &DepthMap,
    init_xi: &Pose,
    k: &CameraIntrinsics,
    settings: &OptimizerSettings,
    objective: &DepthObjective,
) -> Result<DepthPoseEstimate> {
    check_shapes(i_k, i_k1, init_d_k, init_d_k1, k)?;
    settings.validate("depth_optimizer")?;
    let n = k.pixel_count();
    let problem = Problem {
        i_k,
        i_k1,
        mask_k: &init_d_k.valid,
        mask_k1: &init_d_k1.valid,
        k,
        objective: *objective,
        n,
    };
    let mut x: Vec<f64> = init_d_k
        .inv_depth
        .data()
        .iter()
        .chain(init_d_k1.inv_depth.data())
        .copied()
        .chain(init_xi.twist().iter().copied())
        .collect();
    let frozen: Vec<bool> = init_d_k.valid.iter().chain(&init_d_k1.valid).map(|v| !v).collect();
    let step = |i: usize| {
        if i >= 2 * n {
            settings.twist_step_size
        } else if frozen[i] {
            0.0
        } else {
            settings.step_size
        }
    };

    let first = problem.evaluate(&x)?;
    let initial_loss = first.loss;
    let mut best_loss = initial_loss;
    let mut best_x = x.clone();
    let mut history = vec![initial_loss];
    let mut above_twice = 0usize;
    let mut adam = Adam::new(x.len(), settings.adam());
    let mut eval = first;
    let mut iterations_run = 0;

    let finish = |bx: &[f64], best: f64, iters: usize| {
        let (d_k, d_k1, xi) = problem.unpack(bx);
        DepthPoseEstimate {
            d_k,
            d_k1,
            xi,
            final_loss: best,
            initial_loss,
            iterations_run: iters,
        }
    };

    for it in 1..=settings.max_iterations {
        adam.step(&mut x, &eval.grad, step);
        for (i, v) in x[..2 * n].iter_mut().enumerate() {
            if !frozen[i] && *v < MIN_INV_DEPTH {
                *v = MIN_INV_DEPTH;
            }
        }
        if it % RENORMALIZE_EVERY == 0 {
            renormalize(&mut x, &mut adam, &frozen, n);
        }
        iterations_run = it;
        eval = match problem.evaluate(&x) {
            Ok(e) => e,
            Err(Error::InsufficientOverlap { .. }) => {
                return Err(Error::DepthDiverged(Box::new(finish(&best_x, best_loss, it))));
            }
            Err(e) => return Err(e),
        };
        if !eval.loss.is_finite() {
            return Err(Error::DepthDiverged(Box::new(finish(&best_x, best_loss, it))));
        }
        if eval.loss < best_loss {
            best_loss = eval.loss;
            best_x.clone_from(&x);
        }
        if eval.loss > 2.0 * initial_loss {
            above_twice += 1;
            if above_twice >= DIVERGENCE_PATIENCE {
                return Err(Error::DepthDiverged(Box::new(finish(&best_x, best_loss, it))));
            }
        } else {
            above_twice = 0;
        }
        history.push(eval.loss);
        if history.len() > CONVERGENCE_WINDOW {
            let old = history[history.len() - 1 - CONVERGENCE_WINDOW];
            if ((old - eval.loss) / old.abs().max(f64::MIN_POSITIVE)).abs() < settings.convergence_tol {
                break;
            }
        }
    }
    Ok(finish(&best_x, best_loss, iterations_run))
}

/// Rescale both depth maps so the mean valid inverse depth of `d_k` is 1 and
/// move the scale into the translation.
fn renormalize(x: &mut [f64], adam: &mut Adam, frozen: &[bool], n: usize) {
    let (sum, cnt) = x[..n]
        .iter()
        .zip(&frozen[..n])
        .filter(|(_, &f)| !f)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if cnt == 0 || !(sum > 0.0) {
        return;
    }
    let mean = sum / cnt as f64;
    let s = 1.0 / mean;
    for i in 0..2 * n {
        x[i] *= s;
        adam.rescale(i, s);
    }
    for i in 2 * n + 3..2 * n + 6 {
        x[i] *= mean;
        adam.rescale(i, mean);
    }
}

/// Encode a depth map as little-endian PFM holding metric depth `1/q`, with
/// invalid pixels stored as 0.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let d = depth.get(x, y).map_or(0.0, |q| (1.0 / q) as f32);
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

/// Decode a grayscale PFM depth file; non-positive or non-finite depths
/// become invalid pixels.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                offset: start,
                reason: format!("missing {what}"),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic")?;
    if magic != "Pf" {
        return Err(Error::Format {
            offset: 0,
            reason: format!("expected grayscale PFM magic 'Pf', found {magic:?}"),
        });
    }
    let parse_dim = |s: String, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Format {
                offset: 0,
                reason: format!("invalid {what} {s:?}"),
            })
    };
    let w = parse_dim(token("width")?, "width")?;
    let h = parse_dim(token("height")?, "height")?;
    let scale_s = token("scale")?;
    let scale: f64 = scale_s.parse().map_err(|_| Error::Format {
        offset: 0,
        reason: format!("invalid scale {scale_s:?}"),
    })?;
    // exactly one whitespace byte separates the header from the data
    let data_start = pos + 1;
    let need = w * h * 4;
    if bytes.len() < data_start + need {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated data: expected {need} bytes after offset {data_start}"),
        });
    }
    let little = scale < 0.0;
    let mut inv = Image::new(w, h, 0.0);
    let mut valid = vec![false; w * h];
    for (row, y) in (0..h).rev().enumerate() {
        for x in 0..w {
            let o = data_start + (row * w + x) * 4;
            let raw = [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
            let d = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) } as f64;
            if d > 0.0 && d.is_finite() {
                inv.set(x, y, 1.0 / d);
                valid[y * w + x] = true;
            }
        }
    }
    DepthMap::with_mask(inv, valid)
}

pub fn export_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pfm(depth)).map_err(|e| Error::io(path, e))
}

pub fn import_depth(path: &Path) -> Result<DepthMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}
