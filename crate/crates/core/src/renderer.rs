//! Intermediate frame synthesis: both bracketing intensity frames are
//! forward-warped to a block's pose and alpha-blended.

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::{DepthMap, IntensityFrame};
use crate::se3::Pose;
use crate::warp::{blend, forward_splat};

/// Default occlusion sharpness of the forward splat.
pub const DEFAULT_GAMMA: f64 = 10.0;

/// How the blend weight of the earlier frame is chosen for block `j` of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// `1 - j / (n + 1)` with 1-based `j`.
    #[default]
    BlockIndex,
    /// `1 - (t - t_k) / (t_k1 - t_k)` from the block timestamp.
    Timestamp,
}

impl AlphaPolicy {
    /// Weight of the earlier frame for block `j` (1-based) of `n`.
    pub fn alpha(self, j: usize, n: usize, t: f64, t_k: f64, t_k1: f64) -> f64 {
        let a = match self {
            AlphaPolicy::BlockIndex => 1.0 - j as f64 / (n + 1) as f64,
            AlphaPolicy::Timestamp => 1.0 - (t - t_k) / (t_k1 - t_k),
        };
        a.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub gamma: f64,
    pub alpha: AlphaPolicy,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            gamma: DEFAULT_GAMMA,
            alpha: AlphaPolicy::default(),
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config {
                field: "render.gamma".into(),
                reason: format!("must be finite and non-negative, got {}", self.gamma),
            });
        }
        Ok(())
    }
}

/// Synthesize the frame at `timestamp` from `i_k` (moved by `xi_k_j`) and
/// `i_k1` (moved by `xi_k1_j`), with `alpha` the weight of `i_k`.
#[allow(clippy::too_many_arguments)]
pub fn render_intermediate(
    i_k: &IntensityFrame,
    i_k1: &IntensityFrame,
    d_k: &DepthMap,
    d_k1: &DepthMap,
    xi_k_j: &Pose,
    xi_k1_j: &Pose,
    alpha: f64,
    k: &CameraIntrinsics,
    gamma: f64,
    timestamp: f64,
) -> Result<IntensityFrame> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("render: alpha {alpha} outside [0, 1]")));
    }
    for (name, w, h) in [
        ("I_k", i_k.width(), i_k.height()),
        ("I_k+1", i_k1.width(), i_k1.height()),
        ("d_k", d_k.width(), d_k.height()),
        ("d_k+1", d_k1.width(), d_k1.height()),
    ] {
        if (w, h) != (k.width, k.height) {
            return Err(Error::invalid(format!(
                "render: {name} is {w}x{h}, camera is {}x{}",
                k.width, k.height
            )));
        }
    }
    let a = forward_splat(i_k, d_k, xi_k_j, k, gamma);
    let b = forward_splat(i_k1, d_k1, xi_k1_j, k, gamma);
    if a.is_empty() && b.is_empty() {
        return Err(Error::Render(format!(
            "no pixel of either frame lands in view at t = {timestamp}"
        )));
    }
    Ok(IntensityFrame::from_clamped(blend(&a, &b, alpha), timestamp))
}

/// Pose pair and timestamp of one event block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPose {
    pub t_mid: f64,
    pub xi_k_j: Pose,
    pub xi_k1_j: Pose,
    /// Set when an earlier stage failed for this block; the block is then
    /// substituted without rendering.
    pub failure: Option<String>,
}

/// Everything needed to render the blocks between input frames `k` and `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderWindow {
    pub d_k: DepthMap,
    pub d_k1: DepthMap,
    pub blocks: Vec<BlockPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    /// Passthrough of input frame `index`.
    Input { index: usize },
    /// Rendered block `block` of window `window`.
    Rendered { window: usize, block: usize },
    /// Render failed; the nearer input frame was substituted.
    Substituted { window: usize, block: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFrame {
    pub frame: IntensityFrame,
    pub source: FrameSource,
}

impl OutputFrame {
    pub fn is_intermediate(&self) -> bool {
        !matches!(self.source, FrameSource::Input { .. })
    }
}

/// Interleave the input frames with rendered block frames. `windows[w]`
/// covers `frames[w]..frames[w + 1]`. A block that fails to render is
/// replaced by the nearer input frame at the block's timestamp.
pub fn render_sequence(
    frames: &[IntensityFrame],
    windows: &[RenderWindow],
    k: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Result<Vec<OutputFrame>> {
    settings.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("render_sequence: no input frames"));
    }
    if windows.len() + 1 != frames.len() {
        return Err(Error::invalid(format!(
            "render_sequence: {} frames need {} windows, got {}",
            frames.len(),
            frames.len() - 1,
            windows.len()
        )));
    }
    let mut out = Vec::with_capacity(frames.len() + windows.iter().map(|w| w.blocks.len()).sum::<usize>());
    out.push(OutputFrame {
        frame: frames[0].clone(),
        source: FrameSource::Input { index: 0 },
    });
    for (w, window) in windows.iter().enumerate() {
        let (i_k, i_k1) = (&frames[w], &frames[w + 1]);
        let (t_k, t_k1) = (i_k.timestamp, i_k1.timestamp);
        if !(t_k < t_k1) {
            return Err(Error::invalid(format!(
                "render_sequence: frame timestamps {t_k} and {t_k1} not increasing"
            )));
        }
        let mut last = t_k;
        let n = window.blocks.len();
        for (j, block) in window.blocks.iter().enumerate() {
            let t = block.t_mid;
            if !(t > last && t < t_k1) {
                return Err(Error::invalid(format!(
                    "render_sequence: block {j} of window {w} at t = {t} is not strictly inside ({last}, {t_k1})"
                )));
            }
            last = t;
            let alpha = settings.alpha.alpha(j + 1, n, t, t_k, t_k1);
            let rendered = match &block.failure {
                Some(reason) => Err(Error::Render(reason.clone())),
                None => render_intermediate(
                    i_k,
                    i_k1,
                    &window.d_k,
                    &window.d_k1,
                    &block.xi_k_j,
                    &block.xi_k1_j,
                    alpha,
                    k,
                    settings.gamma,
                    t,
                ),
            };
            out.push(match rendered {
                Ok(frame) => OutputFrame {
                    frame,
                    source: FrameSource::Rendered { window: w, block: j },
                },
                Err(e) => {
                    log::warn!("window {w} block {j}: {e}; substituting the nearer input frame");
                    let nearer = if t - t_k <= t_k1 - t { i_k } else { i_k1 };
                    OutputFrame {
                        frame: IntensityFrame {
                            image: nearer.image.clone(),
                            timestamp: t,
                        },
                        source: FrameSource::Substituted {
                            window: w,
                            block: j,
                            reason: e.to_string(),
                        },
                    }
                }
            });
        }
        out.push(OutputFrame {
            frame: i_k1.clone(),
            source: FrameSource::Input { index: w + 1 },
        });
    }
    Ok(out)
}
