//! Event streams, fixed-size event blocks, pseudo-intensity frames and the
//! complementary-filter baseline.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, IntensityFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    /// File convention: 1 for positive, 0 for negative.
    pub fn bit(self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: f64, x: u32, y: u32, polarity: Polarity) -> Self {
        Event { t, x, y, polarity }
    }
}

/// Time-ordered events of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() {
                return Err(Error::invalid(format!("event {i}: non-finite timestamp")));
            }
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::invalid(format!(
                    "event {i}: pixel ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::invalid(format!("event {i}: timestamps decrease")));
            }
        }
        Ok(EventStream { width, height, events })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Events with `t_start <= t < t_end`.
    pub fn window(&self, t_start: f64, t_end: f64) -> &[Event] {
        let a = self.events.partition_point(|e| e.t < t_start);
        let b = self.events.partition_point(|e| e.t < t_end);
        &self.events[a..b.max(a)]
    }

    /// Index range of [`EventStream::window`] within [`EventStream::events`].
    pub fn window_range(&self, t_start: f64, t_end: f64) -> std::ops::Range<usize> {
        let a = self.events.partition_point(|e| e.t < t_start);
        let b = self.events.partition_point(|e| e.t < t_end);
        a..b.max(a)
    }

    /// One `t x y p` line per event. Timestamps use the shortest decimal
    /// that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.events.len() * 24);
        for e in &self.events {
            let _ = writeln!(s, "{} {} {} {}", e.t, e.x, e.y, e.polarity.bit());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, width: usize, height: usize) -> Result<ParsedEvents> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_events(&text, width, height)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedEvents {
    pub stream: EventStream,
    /// Lines dropped because their pixel lies outside the sensor.
    pub dropped: usize,
}

/// Parse `t x y p` lines (p ∈ {0, 1}); blank lines and `#` comments are
/// skipped. Out-of-bounds events are dropped and counted.
pub fn parse_events(text: &str, width: usize, height: usize) -> Result<ParsedEvents> {
    let mut events = Vec::new();
    let mut dropped = 0usize;
    let mut last_t = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse { line, reason };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected `t x y p`, found {} fields", fields.len())));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("invalid timestamp {:?}", fields[0])))?;
        if !t.is_finite() {
            return Err(bad("non-finite timestamp".into()));
        }
        let x: i64 = fields[1].parse().map_err(|_| bad(format!("invalid x {:?}", fields[1])))?;
        let y: i64 = fields[2].parse().map_err(|_| bad(format!("invalid y {:?}", fields[2])))?;
        let polarity = match fields[3] {
            "1" => Polarity::Positive,
            "0" => Polarity::Negative,
            p => return Err(bad(format!("polarity must be 0 or 1, found {p:?}"))),
        };
        if t < last_t {
            return Err(bad(format!("timestamp {t} precedes previous {last_t}")));
        }
        last_t = t;
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            dropped += 1;
            continue;
        }
        events.push(Event::new(t, x as u32, y as u32, polarity));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} out-of-bounds events");
    }
    Ok(ParsedEvents {
        stream: EventStream {
            width,
            height,
            events,
        },
        dropped,
    })
}

/// Mean of the first and last event times.
pub fn block_t_mid(block: &[Event]) -> Option<f64> {
    Some(0.5 * (block.first()?.t + block.last()?.t))
}

#[derive(Debug, Clone)]
pub struct EventBlocks<'a> {
    pub blocks: Vec<&'a [Event]>,
    /// Set when the window held fewer than `block_size` events.
    pub underfilled: bool,
}

/// Cut the events of `[t_start, t_end)` into consecutive blocks of
/// `block_size`. A trailing remainder is kept as its own block when it holds
/// at least half a block, otherwise it is merged into the previous block.
pub fn frame_events(stream: &EventStream, block_size: usize, t_start: f64, t_end: f64) -> Result<EventBlocks<'_>> {
    partition_events(stream.window(t_start, t_end), block_size)
}

/// [`frame_events`] over an explicit slice.
pub fn partition_events(events: &[Event], block_size: usize) -> Result<EventBlocks<'_>> {
    if block_size == 0 {
        return Err(Error::invalid("block_size must be >= 1"));
    }
    let n = events.len();
    if n < block_size {
        let blocks = if n == 0 { Vec::new() } else { vec![events] };
        return Ok(EventBlocks {
            blocks,
            underfilled: true,
        });
    }
    let full = n / block_size;
    let rem = n % block_size;
    let keep_rem = rem > 0 && 2 * rem >= block_size;
    let mut blocks = Vec::with_capacity(full + 1);
    for b in 0..full {
        let start = b * block_size;
        let end = if b + 1 == full && !keep_rem { n } else { start + block_size };
        blocks.push(&events[start..end]);
    }
    if keep_rem {
        blocks.push(&events[full * block_size..]);
    }
    Ok(EventBlocks {
        blocks,
        underfilled: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoIntensitySettings {
    /// Brightness step per event.
    pub contrast: f64,
    /// Fraction of the prior state's deviation from 0.5 that survives a block.
    pub decay: f64,
    pub tv_weight: f64,
    pub tv_iterations: usize,
}

impl Default for PseudoIntensitySettings {
    fn default() -> Self {
        PseudoIntensitySettings {
            contrast: 0.1,
            decay: 0.93,
            tv_weight: 0.1,
            tv_iterations: 20,
        }
    }
}

impl PseudoIntensitySettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Config {
            field: format!("pseudo_intensity.{field}"),
            reason: reason.into(),
        };
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(bad("contrast", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(bad("decay", "must be in [0, 1]"));
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(bad("tv_weight", "must be non-negative"));
        }
        Ok(())
    }
}

/// Edge-like surrogate frame integrated from one event block.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoIntensityFrame {
    /// Smoothed output in [0, 1].
    pub pixels: Image,
    /// Raw integrator state, the prior for the next block.
    pub state: Image,
    pub t_mid: f64,
    pub block_index: usize,
}

impl PseudoIntensityFrame {
    /// Neutral frame: 0.5 everywhere.
    pub fn neutral(width: usize, height: usize, t_mid: f64) -> Self {
        PseudoIntensityFrame {
            pixels: Image::new(width, height, 0.5),
            state: Image::new(width, height, 0.5),
            t_mid,
            block_index: 0,
        }
    }
}

const NORMALIZE_BELOW_RANGE: f64 = 0.05;

/// Integrate `block` on top of the decayed prior state (neutral 0.5 when
/// `prior` is `None`), then smooth with total variation.
pub fn pseudo_intensity(
    block: &[Event],
    prior: Option<&PseudoIntensityFrame>,
    width: usize,
    height: usize,
    block_index: usize,
    settings: &PseudoIntensitySettings,
) -> Result<PseudoIntensityFrame> {
    let mut state = match prior {
        Some(p) => {
            if p.state.width() != width || p.state.height() != height {
                return Err(Error::invalid("pseudo_intensity: prior has a different shape"));
            }
            p.state.map(|s| 0.5 + settings.decay * (s - 0.5))
        }
        None => Image::new(width, height, 0.5),
    };
    for e in block {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::invalid(format!("event at ({x}, {y}) outside {width}x{height}")));
        }
        let v = state.get(x, y) + e.polarity.sign() * settings.contrast;
        state.set(x, y, v.clamp(0.0, 1.0));
    }
    let mut pixels = if settings.tv_iterations > 0 && settings.tv_weight > 0.0 {
        tv_denoise(&state, settings.tv_weight, settings.tv_iterations)
    } else {
        state.clone()
    };
    let (lo, hi) = pixels.min_max();
    let range = hi - lo;
    if range > 1e-12 && range < NORMALIZE_BELOW_RANGE {
        pixels = pixels.map(|v| (v - lo) / range);
    }
    let pixels = pixels.map(|v| v.clamp(0.0, 1.0));
    let t_mid = block_t_mid(block)
        .or(prior.map(|p| p.t_mid))
        .unwrap_or(0.0);
    Ok(PseudoIntensityFrame {
        pixels,
        state,
        t_mid,
        block_index,
    })
}

/// Pseudo-intensity frame of `events[range]` whose prior integrates up to
/// `history` blocks of `block_size` events immediately preceding the range,
/// starting from the neutral state. Every frame built this way depends on
/// the stream in the same way regardless of where windows begin.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_intensity_with_history(
    events: &[Event],
    range: std::ops::Range<usize>,
    history: usize,
    block_size: usize,
    width: usize,
    height: usize,
    block_index: usize,
    settings: &PseudoIntensitySettings,
) -> Result<PseudoIntensityFrame> {
    if range.start > range.end || range.end > events.len() {
        return Err(Error::invalid("pseudo_intensity_with_history: range outside the event slice"));
    }
    if block_size == 0 {
        return Err(Error::invalid("block_size must be >= 1"));
    }
    let raw = PseudoIntensitySettings {
        tv_iterations: 0,
        ..*settings
    };
    let first = range.start.saturating_sub(history * block_size);
    let mut prior: Option<PseudoIntensityFrame> = None;
    let mut start = first;
    // chunks aligned so the last one ends exactly at range.start
    let lead = (range.start - first) % block_size;
    if lead > 0 {
        prior = Some(pseudo_intensity(&events[start..start + lead], None, width, height, 0, &raw)?);
        start += lead;
    }
    while start < range.start {
        let end = start + block_size;
        prior = Some(pseudo_intensity(&events[start..end], prior.as_ref(), width, height, 0, &raw)?);
        start = end;
    }
    pseudo_intensity(&events[range], prior.as_ref(), width, height, block_index, settings)
}

/// Primal-dual solver for `min_u ½‖u − f‖² + weight·TV(u)` with isotropic
/// TV and Neumann boundaries.
pub fn tv_denoise(f: &Image, weight: f64, iterations: usize) -> Image {
    let (w, h) = (f.width(), f.height());
    let n = w * h;
    let tau = 0.25;
    let sigma = 0.5;
    let fd = f.data();
    let mut u = fd.to_vec();
    let mut u_bar = u.clone();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let gx = if x + 1 < w { u_bar[i + 1] - u_bar[i] } else { 0.0 };
                let gy = if y + 1 < h { u_bar[i + w] - u_bar[i] } else { 0.0 };
                let qx = px[i] + sigma * gx;
                let qy = py[i] + sigma * gy;
                let norm = (qx * qx + qy * qy).sqrt().max(1.0);
                px[i] = qx / norm;
                py[i] = qy / norm;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut div = 0.0;
                if x + 1 < w {
                    div += px[i];
                }
                if x > 0 {
                    div -= px[i - 1];
                }
                if y + 1 < h {
                    div += py[i];
                }
                if y > 0 {
                    div -= py[i - w];
                }
                let old = u[i];
                u[i] = (old + tau * weight * div + tau * fd[i]) / (1.0 + tau);
                u_bar[i] = 2.0 * u[i] - old;
            }
        }
    }
    Image::from_vec(w, h, u).expect("size")
}

/// Per-pixel continuous-time complementary filter in log intensity.
///
/// Between updates each pixel decays toward the log of the latest intensity
/// frame at rate `cutoff`; every event adds `polarity·contrast`.
#[derive(Debug, Clone)]
pub struct ComplementaryFilter {
    width: usize,
    height: usize,
    cutoff: f64,
    contrast: f64,
    log_state: Vec<f64>,
    log_target: Vec<f64>,
    updated: Vec<f64>,
}

const LOG_FLOOR: f64 = 1e-3;

fn safe_log(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

impl ComplementaryFilter {
    /// Start from `frame`, with the state equal to its log intensity.
    pub fn new(frame: &IntensityFrame, cutoff: f64, contrast: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::invalid("complementary filter cutoff must be positive"));
        }
        if !(contrast > 0.0 && contrast.is_finite()) {
            return Err(Error::invalid("complementary filter contrast must be positive"));
        }
        let log: Vec<f64> = frame.image.data().iter().map(|&v| safe_log(v)).collect();
        Ok(ComplementaryFilter {
            width: frame.width(),
            height: frame.height(),
            cutoff,
            contrast,
            log_state: log.clone(),
            log_target: log,
            updated: vec![frame.timestamp; frame.width() * frame.height()],
        })
    }

    fn decay_pixel(&mut self, i: usize, t: f64) {
        let dt = t - self.updated[i];
        if dt > 0.0 {
            let target = self.log_target[i];
            self.log_state[i] = target + (self.log_state[i] - target) * (-self.cutoff * dt).exp();
            self.updated[i] = t;
        }
    }

    /// Switch the low-frequency reference to `frame` from its timestamp on.
    pub fn add_frame(&mut self, frame: &IntensityFrame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::invalid("complementary filter: frame shape mismatch"));
        }
        for i in 0..self.log_state.len() {
            self.decay_pixel(i, frame.timestamp);
            self.log_target[i] = safe_log(frame.image.data()[i]);
        }
        Ok(())
    }

    pub fn add_event(&mut self, e: &Event) {
        let i = e.y as usize * self.width + e.x as usize;
        self.decay_pixel(i, e.t);
        self.log_state[i] += e.polarity.sign() * self.contrast;
    }

    /// Log state of every pixel at time `t` (not before the latest update).
    pub fn log_state_at(&self, t: f64) -> Vec<f64> {
        (0..self.log_state.len())
            .map(|i| {
                let dt = (t - self.updated[i]).max(0.0);
                let target = self.log_target[i];
                target + (self.log_state[i] - target) * (-self.cutoff * dt).exp()
            })
            .collect()
    }

    /// `exp(state)` at time `t`, clamped to [0, 1].
    pub fn sample(&self, t: f64) -> IntensityFrame {
        let data = self.log_state_at(t).into_iter().map(|l| l.exp().clamp(0.0, 1.0)).collect();
        IntensityFrame::from_clamped(Image::from_vec(self.width, self.height, data).expect("size"), t)
    }
}

/// Run the filter over `stream` with `frames` as the low-frequency input and
/// sample it at each of `times` (sorted). Events and frames before the first
/// frame are ignored.
pub fn complementary_filter(
    stream: &EventStream,
    frames: &[IntensityFrame],
    cutoff: f64,
    contrast: f64,
    times: &[f64],
) -> Result<Vec<IntensityFrame>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("complementary filter needs at least one intensity frame"))?;
    if frames.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::invalid("intensity frames must be time-ordered"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sample times must be sorted"));
    }
    let mut cf = ComplementaryFilter::new(first, cutoff, contrast)?;
    let events = stream.events();
    let mut ei = events.partition_point(|e| e.t < first.timestamp);
    let mut fi = 1;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        loop {
            let next_event = events.get(ei).filter(|e| e.t <= t).map(|e| e.t);
            let next_frame = frames.get(fi).filter(|f| f.timestamp <= t).map(|f| f.timestamp);
            match (next_event, next_frame) {
                (Some(te), Some(tf)) if tf <= te => {
                    cf.add_frame(&frames[fi])?;
                    fi += 1;
                }
                (Some(_), _) => {
                    cf.add_event(&events[ei]);
                    ei += 1;
                }
                (None, Some(_)) => {
                    cf.add_frame(&frames[fi])?;
                    fi += 1;
                }
                (None, None) => break,
            }
        }
        out.push(cf.sample(t.max(first.timestamp)));
    }
    Ok(out)
}
