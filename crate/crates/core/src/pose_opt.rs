//! Poses of intermediate pseudo-intensity frames relative to both bracketing
//! intensity frames, by direct photometric alignment.
//!
//! For block `j` between frames `k` and `k+1`, `xi_k_j` maps frame-k camera
//! points into the block's camera and `xi_k1_j` does the same for frame k+1.
//! A regularizer ties the pair to the frames themselves: `xi_k1_j⁻¹ ∘ xi_k_j`
//! must warp `I_{k+1}` onto `I_k` through `d_k`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector6;

use crate::camera::CameraIntrinsics;
use crate::depth_opt::{warp_term, OptimizerSettings, MIN_OVERLAP};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::optim::{charbonnier, charbonnier_grad, Adam};
use crate::se3::{Pose, Twist};
use crate::warp::sample_at_point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLoss {
    pub value: f64,
    pub grad: Vector6<f64>,
    pub overlap: f64,
}

fn check(images: &[&Image], depths: &[&DepthMap], k: &CameraIntrinsics) -> Result<()> {
    let ok = images.iter().all(|i| i.matches(k)) && depths.iter().all(|d| d.inv_depth.matches(k));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("pose_opt: image/depth dimensions do not match the intrinsics"))
    }
}

/// Mean smoothed-L1 difference between `e_ref` and `e_j` inverse-warped
/// through `d_ref` and `xi`, with its gradient in the twist of `xi`.
pub fn pose_photometric_loss(
    e_ref: &Image,
    e_j: &Image,
    d_ref: &DepthMap,
    xi: &Pose,
    k: &CameraIntrinsics,
) -> Result<PoseLoss> {
    check(&[e_ref, e_j], &[d_ref], k)?;
    let term = warp_term(e_ref, e_j, d_ref, xi, k, false);
    let overlap = term.overlap();
    if overlap < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap {
            stage: "pose_photometric_loss",
            fraction: overlap,
        });
    }
    Ok(PoseLoss {
        value: term.mean(),
        grad: term.grad_twist / term.count as f64,
        overlap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerLoss {
    pub value: f64,
    pub grad_k_j: Vector6<f64>,
    pub grad_k1_j: Vector6<f64>,
    pub overlap: f64,
}

/// Pose mapping frame-k camera points into frame k+1 implied by a pair of
/// block poses.
pub fn composed_pose(xi_k_j: &Pose, xi_k1_j: &Pose) -> Pose {
    xi_k1_j.inverse().compose(xi_k_j)
}

/// Mean smoothed-L1 difference between `i_k` and `i_k1` inverse-warped
/// through `d_k` and [`composed_pose`], with gradients in both twists.
pub fn regularizer_loss(
    i_k: &Image,
    i_k1: &Image,
    d_k: &DepthMap,
    xi_k_j: &Pose,
    xi_k1_j: &Pose,
    k: &CameraIntrinsics,
) -> Result<RegularizerLoss> {
    check(&[i_k, i_k1], &[d_k], k)?;
    let (w, h) = (k.width, k.height);
    let back = xi_k1_j.inverse();
    let rb_t = back.rotation().transpose();
    let da = xi_k_j.twist_derivative();
    let db = back.twist_derivative();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut ga = Vector6::zeros();
    let mut gb = Vector6::zeros();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let Some(q) = d_k.get(x, y) else { continue };
            let p = k.ray(x as f64, y as f64) / q;
            let mid = xi_k_j.transform(&p);
            let pt = back.transform(&mid);
            let Some(s) = sample_at_point(i_k1, k, &pt) else { continue };
            let res = s.value - i_k.get(x, y);
            sum += charbonnier(res);
            count += 1;
            let g = s.grad_point * charbonnier_grad(res);
            ga += da.transpose_mul(&p, &(rb_t * g));
            // the inverse pose has the negated twist
            gb -= db.transpose_mul(&mid, &g);
        }
    }
    let interior = w.saturating_sub(2) * h.saturating_sub(2);
    let overlap = count as f64 / interior.max(1) as f64;
    if overlap < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap {
            stage: "regularizer_loss",
            fraction: overlap,
        });
    }
    let n = count as f64;
    Ok(RegularizerLoss {
        value: sum / n,
        grad_k_j: ga / n,
        grad_k1_j: gb / n,
        overlap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSettings {
    /// Adam settings; only `twist_step_size` applies since every parameter
    /// is a twist coordinate.
    pub optimizer: OptimizerSettings,
    pub pyramid_levels: usize,
}

impl Default for PoseSettings {
    fn default() -> Self {
        PoseSettings {
            optimizer: OptimizerSettings {
                twist_step_size: 2e-4,
                max_iterations: 300,
                ..OptimizerSettings::default()
            },
            pyramid_levels: 3,
        }
    }
}

impl PoseSettings {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate("pose.optimizer")?;
        if self.pyramid_levels == 0 {
            return Err(Error::Config {
                field: "pose.pyramid_levels".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Everything the pose objective of one block depends on.
#[derive(Debug, Clone, Copy)]
pub struct PoseInputs<'a> {
    /// Pseudo-intensity at the time of frame k.
    pub e_k0: &'a Image,
    /// Pseudo-intensity at the time of frame k+1.
    pub e_k1_0: &'a Image,
    /// Pseudo-intensity of the block.
    pub e_kj: &'a Image,
    pub d_k: &'a DepthMap,
    pub d_k1: &'a DepthMap,
    pub i_k: &'a Image,
    pub i_k1: &'a Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntermediatePoseEstimate {
    pub xi_k_j: Pose,
    pub xi_k1_j: Pose,
    /// `[L_p(xi_k_j), L_p(xi_k1_j), L_r]`, the last unweighted.
    pub losses: [f64; 3],
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
}

struct Level {
    k: CameraIntrinsics,
    e_k0: Image,
    e_k1_0: Image,
    e_kj: Image,
    d_k: DepthMap,
    d_k1: DepthMap,
    i_k: Image,
    i_k1: Image,
}

impl Level {
    fn evaluate(&self, a: &Pose, b: &Pose, lambda_r: f64) -> Result<([f64; 3], Vector6<f64>, Vector6<f64>)> {
        let la = pose_photometric_loss(&self.e_k0, &self.e_kj, &self.d_k, a, &self.k)?;
        let lb = pose_photometric_loss(&self.e_k1_0, &self.e_kj, &self.d_k1, b, &self.k)?;
        let (reg, ga, gb) = if lambda_r > 0.0 {
            let r = regularizer_loss(&self.i_k, &self.i_k1, &self.d_k, a, b, &self.k)?;
            (r.value, r.grad_k_j * lambda_r, r.grad_k1_j * lambda_r)
        } else {
            (0.0, Vector6::zeros(), Vector6::zeros())
        };
        Ok(([la.value, lb.value, reg], la.grad + ga, lb.grad + gb))
    }

    fn half(&self) -> Level {
        Level {
            k: self.k.half(),
            e_k0: self.e_k0.downsample(),
            e_k1_0: self.e_k1_0.downsample(),
            e_kj: self.e_kj.downsample(),
            d_k: self.d_k.downsample(),
            d_k1: self.d_k1.downsample(),
            i_k: self.i_k.downsample(),
            i_k1: self.i_k1.downsample(),
        }
    }
}

fn total(losses: &[f64; 3], lambda_r: f64) -> f64 {
    losses[0] + losses[1] + lambda_r * losses[2]
}

/// Minimize `L_p(xi_k_j) + L_p(xi_k1_j) + λ_r·L_r(xi_k_j, xi_k1_j)` from
/// `init`, coarse to fine. The returned total loss never exceeds the loss at
/// `init`; failures to keep enough overlap end the search with
/// `converged = false`.
pub fn estimate_intermediate_pose(
    inputs: &PoseInputs<'_>,
    k: &CameraIntrinsics,
    lambda_r: f64,
    settings: &PoseSettings,
    init: (&Pose, &Pose),
) -> Result<IntermediatePoseEstimate> {
    settings.validate()?;
    if !(lambda_r >= 0.0 && lambda_r.is_finite()) {
        return Err(Error::invalid("lambda_r must be non-negative"));
    }
    check(
        &[inputs.e_k0, inputs.e_k1_0, inputs.e_kj, inputs.i_k, inputs.i_k1],
        &[inputs.d_k, inputs.d_k1],
        k,
    )?;
    let mut levels = vec![Level {
        k: *k,
        e_k0: inputs.e_k0.clone(),
        e_k1_0: inputs.e_k1_0.clone(),
        e_kj: inputs.e_kj.clone(),
        d_k: inputs.d_k.clone(),
        d_k1: inputs.d_k1.clone(),
        i_k: inputs.i_k.clone(),
        i_k1: inputs.i_k1.clone(),
    }];
    while levels.len() < settings.pyramid_levels {
        let last = levels.last().expect("non-empty");
        if last.k.width < 16 || last.k.height < 16 {
            break;
        }
        levels.push(last.half());
    }

    let (init_losses, _, _) = levels[0].evaluate(init.0, init.1, lambda_r)?;
    let initial_loss = total(&init_losses, lambda_r);
    let mut best = (*init.0, *init.1, init_losses, initial_loss);
    let mut converged = true;

    let opt = &settings.optimizer;
    let mut x: Vec<f64> = init.0.twist().iter().chain(init.1.twist().iter()).copied().collect();
    for (li, level) in levels.iter().enumerate().rev() {
        let finest = li == 0;
        let mut adam = Adam::new(12, opt.adam());
        let mut history: Vec<f64> = Vec::new();
        for _ in 0..opt.max_iterations {
            let a = Pose::exp_unchecked(&Twist::from_column_slice(&x[..6]));
            let b = Pose::exp_unchecked(&Twist::from_column_slice(&x[6..]));
            let (losses, ga, gb) = match level.evaluate(&a, &b, lambda_r) {
                Ok(v) => v,
                Err(Error::InsufficientOverlap { .. }) => {
                    converged = false;
                    break;
                }
                Err(e) => return Err(e),
            };
            let value = total(&losses, lambda_r);
            if !value.is_finite() {
                converged = false;
                break;
            }
            if finest && value < best.3 {
                best = (a, b, losses, value);
            }
            history.push(value);
            if history.len() > 10 {
                let old = history[history.len() - 11];
                if ((old - value) / old.abs().max(f64::MIN_POSITIVE)).abs() < opt.convergence_tol {
                    break;
                }
            }
            let grad: Vec<f64> = ga.iter().chain(gb.iter()).copied().collect();
            adam.step(&mut x, &grad, |_| opt.twist_step_size);
        }
        if !converged {
            break;
        }
        if finest {
            // score the final iterate too
            let a = Pose::exp_unchecked(&Twist::from_column_slice(&x[..6]));
            let b = Pose::exp_unchecked(&Twist::from_column_slice(&x[6..]));
            if let Ok((losses, _, _)) = level.evaluate(&a, &b, lambda_r) {
                let value = total(&losses, lambda_r);
                if value < best.3 {
                    best = (a, b, losses, value);
                }
            }
        }
    }
    Ok(IntermediatePoseEstimate {
        xi_k_j: best.0,
        xi_k1_j: best.1,
        losses: best.2,
        initial_loss,
        final_loss: best.3,
        converged,
    })
}

/// One `t_mid tx ty tz wx wy wz` line per pose (translation, then the
/// rotation part of the twist).
pub fn trajectory_to_text(entries: &[(f64, Pose)]) -> String {
    let mut s = String::new();
    for (t, p) in entries {
        let tr = p.translation();
        let w = p.rotation_vector();
        let _ = writeln!(s, "{} {} {} {} {} {} {}", t, tr.x, tr.y, tr.z, w.x, w.y, w.z);
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if vals.len() != 7 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected 7 values, found {}", vals.len()),
            });
        }
        let rotation = crate::se3::so3_exp(&nalgebra::Vector3::new(vals[4], vals[5], vals[6]));
        let t = nalgebra::Vector3::new(vals[1], vals[2], vals[3]);
        out.push((vals[0], Pose::from_rt(rotation, t)));
    }
    Ok(out)
}

pub fn export_trajectory(entries: &[(f64, Pose)], path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_to_text(entries)).map_err(|e| Error::io(path, e))
}
