//! Synthetic hybrid-sensor simulator: textured fronto-parallel planes seen by
//! a moving pinhole camera, rendered as intensity frames with exact depth and
//! a contrast-threshold event stream.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::image::{DepthMap, Image, IntensityFrame};
use crate::se3::{Pose, Twist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureSpec {
    /// Gaussian-blurred white noise on a square lattice of `texel` world
    /// units, stretched to `[low, high]`.
    Noise { texel: f64, blur: f64, low: f64, high: f64 },
    Checkerboard { size: f64, low: f64, high: f64 },
    /// `low` left of world `x = position`, `high` from there on.
    Edge { position: f64, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// World z of the plane.
    pub depth: f64,
    /// `[x_min, x_max, y_min, y_max]` in world units; unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rect: Option<[f64; 4]>,
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    /// Camera-to-world twist `[wx, wy, wz, vx, vy, vz]`.
    pub twist: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub frame_rate: f64,
    /// Time of the first intensity frame; events start at 0.
    pub first_frame: f64,
    pub num_frames: usize,
    /// Log-intensity step per event.
    pub contrast_threshold: f64,
    /// Rate at which log intensity is sampled for event generation.
    pub sample_rate: f64,
    /// Samples per pixel along each axis; pixel intensity is their mean.
    pub supersample: usize,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            frame_rate: 20.0,
            first_frame: 0.05,
            num_frames: 3,
            contrast_threshold: 0.1,
            sample_rate: 4000.0,
            supersample: 1,
        }
    }
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub planes: Vec<PlaneSpec>,
    pub keyframes: Vec<Keyframe>,
    #[serde(default)]
    pub sensor: SensorSpec,
}

impl SimConfig {
    /// Two-plane scene: a textured wall at depth 4 and a smaller textured
    /// panel at depth 2 in front of it, with the camera translating mostly
    /// sideways while slowly rotating.
    pub fn two_plane(seed: u64) -> SimConfig {
        let camera = CameraIntrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 31.5,
            width: 64,
            height: 64,
        };
        let noise = |texel: f64, low: f64, high: f64| TextureSpec::Noise {
            texel,
            blur: 1.0,
            low,
            high,
        };
        SimConfig {
            seed,
            camera,
            planes: vec![
                PlaneSpec {
                    depth: 4.0,
                    rect: None,
                    texture: noise(4.0 / 60.0, 0.05, 0.5),
                },
                PlaneSpec {
                    depth: 2.0,
                    rect: Some([-0.55, 0.35, -0.45, 0.4]),
                    texture: noise(2.0 / 60.0, 0.5, 0.95),
                },
            ],
            keyframes: vec![
                Keyframe {
                    t: 0.0,
                    twist: [0.0; 6],
                },
                Keyframe {
                    t: 0.1,
                    twist: [0.004, 0.016, 0.002, 0.3, -0.045, 0.075],
                },
                Keyframe {
                    t: 0.2,
                    twist: [0.012, 0.026, -0.002, 0.54, -0.15, 0.12],
                },
                Keyframe {
                    t: 0.3,
                    twist: [0.016, 0.04, 0.0, 0.84, -0.18, 0.21],
                },
            ],
            sensor: SensorSpec {
                num_frames: 5,
                contrast_threshold: 0.05,
                supersample: 4,
                ..SensorSpec::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "sim".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sim config serializes")
    }

    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SimConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::Config {
            field: field.into(),
            reason,
        };
        self.camera.validate().map_err(|e| bad("camera", e.to_string()))?;
        if self.planes.is_empty() {
            return Err(bad("planes", "at least one plane is required".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            if !(p.depth > 0.0 && p.depth.is_finite()) {
                return Err(bad(&format!("planes[{i}].depth"), "must be positive".into()));
            }
            if let Some(r) = p.rect {
                if !(r[0] < r[1] && r[2] < r[3]) {
                    return Err(bad(&format!("planes[{i}].rect"), "must satisfy min < max".into()));
                }
            }
            let (lo, hi) = match p.texture {
                TextureSpec::Noise { texel, blur, low, high } => {
                    if !(texel > 0.0) || !(blur >= 0.0) {
                        return Err(bad(&format!("planes[{i}].texture"), "texel must be positive".into()));
                    }
                    (low, high)
                }
                TextureSpec::Checkerboard { size, low, high } => {
                    if !(size > 0.0) {
                        return Err(bad(&format!("planes[{i}].texture"), "size must be positive".into()));
                    }
                    (low, high)
                }
                TextureSpec::Edge { low, high, .. } => (low, high),
            };
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                return Err(bad(&format!("planes[{i}].texture"), "intensities must lie in [0, 1]".into()));
            }
        }
        Trajectory::new(self.keyframes.clone()).map_err(|e| bad("keyframes", e.to_string()))?;
        let s = &self.sensor;
        if !(s.frame_rate > 0.0) {
            return Err(bad("sensor.frame_rate", "must be positive".into()));
        }
        if !(s.first_frame >= 0.0) {
            return Err(bad("sensor.first_frame", "must be non-negative".into()));
        }
        if s.num_frames == 0 {
            return Err(bad("sensor.num_frames", "must be >= 1".into()));
        }
        if !(s.contrast_threshold > 0.0) {
            return Err(bad("sensor.contrast_threshold", "must be positive".into()));
        }
        if !(s.sample_rate >= 10.0 * s.frame_rate) {
            return Err(bad("sensor.sample_rate", "must be at least 10x the frame rate".into()));
        }
        if !(1..=16).contains(&s.supersample) {
            return Err(bad("sensor.supersample", "must be in 1..=16".into()));
        }
        Ok(())
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.sensor.num_frames)
            .map(|i| self.sensor.first_frame + i as f64 / self.sensor.frame_rate)
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Texture {
    Grid { data: Image, origin: [f64; 2], texel: f64 },
    Checkerboard { size: f64, low: f64, high: f64 },
    Edge { position: f64, low: f64, high: f64 },
}

impl Texture {
    fn sample(&self, x: f64, y: f64) -> f64 {
        match self {
            Texture::Grid { data, origin, texel } => {
                let u = ((x - origin[0]) / texel).clamp(0.0, (data.width() - 1) as f64);
                let v = ((y - origin[1]) / texel).clamp(0.0, (data.height() - 1) as f64);
                let x0 = (u.floor() as usize).min(data.width() - 2);
                let y0 = (v.floor() as usize).min(data.height() - 2);
                let (fx, fy) = (u - x0 as f64, v - y0 as f64);
                let a = data.get(x0, y0) * (1.0 - fx) + data.get(x0 + 1, y0) * fx;
                let b = data.get(x0, y0 + 1) * (1.0 - fx) + data.get(x0 + 1, y0 + 1) * fx;
                a * (1.0 - fy) + b * fy
            }
            Texture::Checkerboard { size, low, high } => {
                let parity = ((x / size).floor() as i64 + (y / size).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    *low
                } else {
                    *high
                }
            }
            Texture::Edge { position, low, high } => {
                if x < *position {
                    *low
                } else {
                    *high
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Plane {
    depth: f64,
    rect: Option<[f64; 4]>,
    texture: Texture,
}

/// Planes with realized textures.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    planes: Vec<Plane>,
    supersample: usize,
}

/// Texture margin around the visible area of an unbounded plane, in units of
/// its depth.
const UNBOUNDED_MARGIN: f64 = 1.0;

impl SyntheticScene {
    /// Realize textures with one generator seeded by `seed`, in plane order.
    pub fn build(planes: &[PlaneSpec], camera: &CameraIntrinsics, seed: u64) -> Result<SyntheticScene> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(planes.len());
        for spec in planes {
            let texture = match spec.texture {
                TextureSpec::Noise { texel, blur, low, high } => {
                    let [x0, x1, y0, y1] = spec.rect.unwrap_or_else(|| {
                        let half_w = spec.depth * camera.width as f64 / camera.fx;
                        let half_h = spec.depth * camera.height as f64 / camera.fy;
                        let m = UNBOUNDED_MARGIN * spec.depth;
                        [-half_w - m, half_w + m, -half_h - m, half_h + m]
                    });
                    let pad = 4.0 * texel;
                    let (ox, oy) = (x0 - pad, y0 - pad);
                    let nx = ((x1 + pad - ox) / texel).ceil() as usize + 1;
                    let ny = ((y1 + pad - oy) / texel).ceil() as usize + 1;
                    let noise = Image::from_fn(nx.max(2), ny.max(2), |_, _| rng.random::<f64>());
                    let blurred = noise.gaussian_blur(blur);
                    let (lo, hi) = blurred.min_max();
                    let span = (hi - lo).max(1e-12);
                    Texture::Grid {
                        data: blurred.map(|v| low + (high - low) * (v - lo) / span),
                        origin: [ox, oy],
                        texel,
                    }
                }
                TextureSpec::Checkerboard { size, low, high } => Texture::Checkerboard { size, low, high },
                TextureSpec::Edge { position, low, high } => Texture::Edge { position, low, high },
            };
            out.push(Plane {
                depth: spec.depth,
                rect: spec.rect,
                texture,
            });
        }
        Ok(SyntheticScene {
            planes: out,
            supersample: 1,
        })
    }

    /// Render each pixel as the mean of `n`x`n` evenly spaced rays.
    pub fn with_supersample(mut self, n: usize) -> Self {
        self.supersample = n.max(1);
        self
    }

    /// Nearest intersection of the ray `origin + s·dir` (s > 0): returns the
    /// ray parameter and the texture value.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for p in &self.planes {
            if dir.z.abs() < 1e-15 {
                continue;
            }
            let s = (p.depth - origin.z) / dir.z;
            if s <= 0.0 {
                continue;
            }
            let hit = origin + dir * s;
            if let Some([x0, x1, y0, y1]) = p.rect {
                if !(hit.x >= x0 && hit.x <= x1 && hit.y >= y0 && hit.y <= y1) {
                    continue;
                }
            }
            if best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, p.texture.sample(hit.x, hit.y)));
            }
        }
        best
    }
}

/// Render the scene from the camera-to-world pose `pose`. The depth map
/// holds exact inverse depth along the optical axis through the pixel
/// centre; intensity is averaged over the scene's supersampling grid.
pub fn render_view(scene: &SyntheticScene, pose: &Pose, k: &CameraIntrinsics) -> Result<(Image, DepthMap)> {
    let (w, h) = (k.width, k.height);
    let origin = *pose.translation();
    let r = pose.rotation();
    let mut img = Image::new(w, h, 0.0);
    let mut inv = Image::new(w, h, 0.0);
    let mut valid = vec![false; w * h];
    let n = scene.supersample;
    for y in 0..h {
        for x in 0..w {
            let dir = r * k.ray(x as f64, y as f64);
            let Some((s, centre)) = scene.cast(&origin, &dir) else { continue };
            // ray has unit z, so the ray parameter is the camera-frame depth
            inv.set(x, y, 1.0 / s);
            valid[y * w + x] = true;
            let value = if n == 1 {
                centre
            } else {
                let mut sum = 0.0;
                let mut hits = 0;
                for sy in 0..n {
                    for sx in 0..n {
                        let ox = (sx as f64 + 0.5) / n as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / n as f64 - 0.5;
                        if let Some((_, v)) = scene.cast(&origin, &(r * k.ray(x as f64 + ox, y as f64 + oy))) {
                            sum += v;
                            hits += 1;
                        }
                    }
                }
                sum / hits.max(1) as f64
            };
            img.set(x, y, value);
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::Simulation("no scene geometry visible from this pose".into()));
    }
    Ok((img, DepthMap::with_mask(inv, valid)?))
}

/// Camera-to-world pose path, linear in twist coordinates between keyframes
/// and constant outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(Error::invalid("trajectory needs at least one keyframe"));
        }
        if keyframes.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("keyframe times must be strictly increasing"));
        }
        if keyframes.iter().any(|k| !k.t.is_finite() || k.twist.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("keyframes must be finite"));
        }
        let tr = Trajectory { keyframes };
        if tr.twist_at(0.0).norm() > 1e-12 {
            return Err(Error::invalid("pose at t = 0 must be the identity"));
        }
        Ok(tr)
    }

    /// Constant twist velocity from t = 0.
    pub fn constant_velocity(twist_per_second: [f64; 6], duration: f64) -> Result<Self> {
        Trajectory::new(vec![
            Keyframe {
                t: 0.0,
                twist: [0.0; 6],
            },
            Keyframe {
                t: duration,
                twist: twist_per_second.map(|v| v * duration),
            },
        ])
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn duration(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.t)
    }

    pub fn twist_at(&self, t: f64) -> Twist {
        let kf = &self.keyframes;
        let to_twist = |a: &[f64; 6]| Twist::from_column_slice(a);
        if t <= kf[0].t {
            return to_twist(&kf[0].twist);
        }
        let last = kf.last().expect("non-empty");
        if t >= last.t {
            return to_twist(&last.twist);
        }
        let i = kf.partition_point(|k| k.t <= t) - 1;
        let (a, b) = (&kf[i], &kf[i + 1]);
        let s = (t - a.t) / (b.t - a.t);
        to_twist(&a.twist) * (1.0 - s) + to_twist(&b.twist) * s
    }

    /// Camera-to-world pose at time `t`.
    pub fn pose_at(&self, t: f64) -> Pose {
        Pose::exp(&self.twist_at(t)).expect("finite keyframes")
    }

    /// Pose mapping camera coordinates at `from` into camera coordinates at
    /// `to`.
    pub fn relative(&self, from: f64, to: f64) -> Pose {
        self.pose_at(to).inverse().compose(&self.pose_at(from))
    }
}

fn log_intensity(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| v.max(1e-3).ln()).collect()
}

/// Tolerance on threshold crossings, absorbing float rounding of ramps that
/// land exactly on a multiple of the threshold.
const CROSSING_EPS: f64 = 1e-9;

/// Sample log intensity at `sample_rate` over `[t_start, t_end]` and emit an
/// event whenever a pixel's log intensity moves a full `contrast_threshold`
/// away from its level at the previous event, with the timestamp linearly
/// interpolated between samples.
pub fn generate_events(
    scene: &SyntheticScene,
    trajectory: &Trajectory,
    k: &CameraIntrinsics,
    contrast_threshold: f64,
    sample_rate: f64,
    t_start: f64,
    t_end: f64,
) -> Result<EventStream> {
    if !(contrast_threshold > 0.0) {
        return Err(Error::invalid("contrast threshold must be positive"));
    }
    if !(sample_rate > 0.0) || !(t_end >= t_start) {
        return Err(Error::invalid("sample rate must be positive and t_end >= t_start"));
    }
    let render_log = |t: f64| -> Result<Vec<f64>> {
        let (img, _) = render_view(scene, &trajectory.pose_at(t), k)?;
        Ok(log_intensity(&img))
    };
    let steps = ((t_end - t_start) * sample_rate).ceil().max(1.0) as usize;
    let mut prev = render_log(t_start)?;
    let mut reference = prev.clone();
    let mut events = Vec::new();
    let mut pending: Vec<Event> = Vec::new();
    let mut t_prev = t_start;
    for s in 1..=steps {
        let t = if s == steps {
            t_end
        } else {
            t_start + s as f64 / sample_rate
        };
        let cur = render_log(t)?;
        pending.clear();
        for (i, (&l0, &l1)) in prev.iter().zip(&cur).enumerate() {
            let (x, y) = ((i % k.width) as u32, (i / k.width) as u32);
            let dl = l1 - l0;
            loop {
                let r = reference[i];
                let (level, polarity) = if l1 - r >= contrast_threshold - CROSSING_EPS {
                    (r + contrast_threshold, Polarity::Positive)
                } else if r - l1 >= contrast_threshold - CROSSING_EPS {
                    (r - contrast_threshold, Polarity::Negative)
                } else {
                    break;
                };
                let frac = if dl.abs() > 0.0 {
                    ((level - l0) / dl).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                pending.push(Event::new(t_prev + frac * (t - t_prev), x, y, polarity));
                reference[i] = level;
            }
        }
        pending.sort_by(|a, b| a.t.total_cmp(&b.t));
        events.extend_from_slice(&pending);
        prev = cur;
        t_prev = t;
    }
    EventStream::new(k.width, k.height, events)
}

/// Add `round(noise_rate · n)` spurious events at uniformly random pixels,
/// polarities and times within the stream's span.
pub fn corrupt_events(stream: &EventStream, noise_rate: f64, seed: u64) -> Result<EventStream> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::invalid("noise_rate must be in [0, 1]"));
    }
    let evs = stream.events();
    let count = (noise_rate * evs.len() as f64).round() as usize;
    if count == 0 {
        return Ok(stream.clone());
    }
    let (t0, t1) = (evs[0].t, evs[evs.len() - 1].t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<Event> = (0..count)
        .map(|_| {
            let t = if t1 > t0 { rng.random_range(t0..=t1) } else { t0 };
            let x = rng.random_range(0..stream.width()) as u32;
            let y = rng.random_range(0..stream.height()) as u32;
            let p = if rng.random::<bool>() {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Event::new(t, x, y, p)
        })
        .collect();
    noise.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut merged = Vec::with_capacity(evs.len() + count);
    let (mut i, mut j) = (0, 0);
    while i < evs.len() || j < noise.len() {
        if j >= noise.len() || (i < evs.len() && evs[i].t <= noise[j].t) {
            merged.push(evs[i]);
            i += 1;
        } else {
            merged.push(noise[j]);
            j += 1;
        }
    }
    EventStream::new(stream.width(), stream.height(), merged)
}

/// Round to 8-bit levels, as stored in PNG frames.
pub fn quantize(img: &Image) -> Image {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Scene and trajectory of a configuration without the event stream, for
/// rendering reference frames at arbitrary times.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub scene: SyntheticScene,
    pub trajectory: Trajectory,
    pub camera: CameraIntrinsics,
}

impl GroundTruth {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        Ok(GroundTruth {
            scene: SyntheticScene::build(&config.planes, &config.camera, config.seed)?
                .with_supersample(config.sensor.supersample),
            trajectory: Trajectory::new(config.keyframes.clone())?,
            camera: config.camera,
        })
    }

    /// Unquantized render at time `t`.
    pub fn frame(&self, t: f64) -> Result<IntensityFrame> {
        let (img, _) = render_view(&self.scene, &self.trajectory.pose_at(t), &self.camera)?;
        IntensityFrame::new(img, t)
    }

    pub fn depth(&self, t: f64) -> Result<DepthMap> {
        Ok(render_view(&self.scene, &self.trajectory.pose_at(t), &self.camera)?.1)
    }

    pub fn relative_pose(&self, from: f64, to: f64) -> Pose {
        self.trajectory.relative(from, to)
    }
}

/// Everything the simulator produces for one configuration.
#[derive(Debug, Clone)]
pub struct SimulatedSequence {
    pub config: SimConfig,
    pub scene: SyntheticScene,
    pub trajectory: Trajectory,
    /// 8-bit-quantized intensity frames.
    pub frames: Vec<IntensityFrame>,
    /// Exact inverse depth of every frame.
    pub depths: Vec<DepthMap>,
    pub events: EventStream,
}

impl SimulatedSequence {
    pub fn generate(config: &SimConfig) -> Result<SimulatedSequence> {
        config.validate()?;
        let scene = SyntheticScene::build(&config.planes, &config.camera, config.seed)?
            .with_supersample(config.sensor.supersample);
        let trajectory = Trajectory::new(config.keyframes.clone())?;
        let times = config.frame_times();
        let mut frames = Vec::with_capacity(times.len());
        let mut depths = Vec::with_capacity(times.len());
        for &t in &times {
            let (img, depth) = render_view(&scene, &trajectory.pose_at(t), &config.camera)?;
            frames.push(IntensityFrame::new(quantize(&img), t)?);
            depths.push(depth);
        }
        let t_end = *times.last().expect("num_frames >= 1");
        let events = generate_events(
            &scene,
            &trajectory,
            &config.camera,
            config.sensor.contrast_threshold,
            config.sensor.sample_rate,
            0.0,
            t_end,
        )?;
        Ok(SimulatedSequence {
            config: config.clone(),
            scene,
            trajectory,
            frames,
            depths,
            events,
        })
    }

    /// Unquantized ground-truth render at time `t`.
    pub fn ground_truth(&self, t: f64) -> Result<IntensityFrame> {
        let (img, _) = render_view(&self.scene, &self.trajectory.pose_at(t), &self.config.camera)?;
        IntensityFrame::new(img, t)
    }

    /// Ground-truth pose mapping camera coordinates at `from` to `to`.
    pub fn relative_pose(&self, from: f64, to: f64) -> Pose {
        self.trajectory.relative(from, to)
    }
}
