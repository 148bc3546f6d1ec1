//! Dataset and output directory layout.
//!
//! A dataset directory holds `frames/frame_%08d.png` (8-bit grayscale),
//! `frames.txt` (`filename timestamp` per line), `events.txt`, `calib.txt`
//! and, for simulated data, the generating `sim.toml`.

use std::fmt::Write as _;
use std::path::Path;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::image::{Image, IntensityFrame};
use crate::sim::{SimConfig, SimulatedSequence};

pub const FRAMES_DIR: &str = "frames";
pub const MANIFEST: &str = "frames.txt";
pub const EVENTS_FILE: &str = "events.txt";
pub const CALIB_FILE: &str = "calib.txt";
pub const SIM_FILE: &str = "sim.toml";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:08}.png")
}

/// Write `img` as an 8-bit grayscale PNG, rounding `v·255` after clamping to
/// `[0, 1]`.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer length matches image size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Read a PNG as grayscale with values `byte / 255`. Colour images are
/// converted to luma.
pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::from_vec(w, h, img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())
}

/// `filename timestamp` lines; timestamps use the shortest decimal that
/// parses back to the same `f64`.
pub fn manifest_to_text(entries: &[(String, f64)]) -> String {
    let mut s = String::new();
    for (name, t) in entries {
        let _ = writeln!(s, "{name} {t}");
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: i + 1, reason };
        let mut parts = body.split_whitespace();
        let (Some(name), Some(t), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `filename timestamp`".into()));
        };
        let t: f64 = t.parse().map_err(|e| err(format!("timestamp: {e}")))?;
        if !t.is_finite() {
            return Err(err("timestamp must be finite".into()));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}

/// Write frames as `frames/frame_%08d.png` under `dir` plus the manifest.
pub fn write_frames(dir: &Path, frames: &[IntensityFrame]) -> Result<()> {
    let fdir = dir.join(FRAMES_DIR);
    std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = frame_file_name(i);
        save_png(&f.image, &fdir.join(&name))?;
        entries.push((format!("{FRAMES_DIR}/{name}"), f.timestamp));
    }
    write_text(&dir.join(MANIFEST), &manifest_to_text(&entries))
}

/// Frames listed in `dir/frames.txt`, paths relative to `dir`, in manifest
/// order.
pub fn read_frames(dir: &Path) -> Result<Vec<IntensityFrame>> {
    let manifest = dir.join(MANIFEST);
    let entries = parse_manifest(&read_text(&manifest)?)?;
    entries
        .into_iter()
        .map(|(name, t)| IntensityFrame::new(load_png(&dir.join(name))?, t))
        .collect()
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Input of a reconstruction run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<IntensityFrame>,
    pub events: EventStream,
    pub camera: CameraIntrinsics,
    /// Present for simulated data; supplies ground truth for scoring.
    pub simulation: Option<SimConfig>,
}

impl Dataset {
    pub fn from_simulation(seq: &SimulatedSequence) -> Self {
        Dataset {
            frames: seq.frames.clone(),
            events: seq.events.clone(),
            camera: seq.config.camera,
            simulation: Some(seq.config.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frames.len() < 2 {
            return Err(Error::invalid(format!(
                "dataset needs at least 2 intensity frames, found {}",
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !f.image.matches(&self.camera) {
                return Err(Error::invalid(format!(
                    "frame {i} is {}x{}, calibration says {}x{}",
                    f.width(),
                    f.height(),
                    self.camera.width,
                    self.camera.height
                )));
            }
        }
        if self.frames.windows(2).any(|w| !(w[0].timestamp < w[1].timestamp)) {
            return Err(Error::invalid("frame timestamps must be strictly increasing"));
        }
        if self.events.width() != self.camera.width || self.events.height() != self.camera.height {
            return Err(Error::invalid("event stream and calibration sizes differ"));
        }
        Ok(())
    }

    /// Read a dataset directory. Out-of-bounds event lines are dropped with
    /// a warning.
    pub fn load(dir: &Path) -> Result<Self> {
        let camera = CameraIntrinsics::load(&dir.join(CALIB_FILE))?;
        let frames = read_frames(dir)?;
        let parsed = EventStream::load(&dir.join(EVENTS_FILE), camera.width, camera.height)?;
        if parsed.dropped > 0 {
            log::warn!("{}: dropped {} out-of-bounds events", dir.display(), parsed.dropped);
        }
        let sim_path = dir.join(SIM_FILE);
        let simulation = if sim_path.exists() {
            Some(SimConfig::load(&sim_path)?)
        } else {
            None
        };
        let ds = Dataset {
            frames,
            events: parsed.stream,
            camera,
            simulation,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_frames(dir, &self.frames)?;
        self.events.save(&dir.join(EVENTS_FILE))?;
        write_text(&dir.join(CALIB_FILE), &self.camera.to_calibration_string())?;
        if let Some(sim) = &self.simulation {
            write_text(&dir.join(SIM_FILE), &sim.to_toml())?;
        }
        Ok(())
    }
}
