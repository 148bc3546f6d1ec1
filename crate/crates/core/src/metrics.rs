//! Image quality measures and the per-frame report.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Image, b: &Image, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "{what}: shapes differ ({}x{} vs {}x{})",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio of two `[0, 1]` images, in dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b, "psnr")?;
    if a.is_empty() {
        return Err(Error::invalid("psnr: empty images"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights) for a dynamic
/// range of 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim: {w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (va, vb) = (a.get(x, y), b.get(x, y));
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let var_a = (saa / n - ma * ma).max(0.0);
            let var_b = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub frame_index: usize,
    pub timestamp: f64,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    /// Score `estimate` against `truth`.
    pub fn score(frame_index: usize, timestamp: f64, method: &str, estimate: &Image, truth: &Image) -> Result<Self> {
        Ok(MetricsRow {
            frame_index,
            timestamp,
            method: method.to_owned(),
            psnr: psnr(estimate, truth)?,
            ssim: ssim(estimate, truth)?,
        })
    }
}

pub const CSV_HEADER: &str = "frame_index,timestamp,method,psnr,ssim";

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.frame_index, r.timestamp, r.method, r.psnr, r.ssim).unwrap();
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [idx, t, method, p, s] = fields[..] else {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        };
        let num = |v: &str, name: &str| v.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")));
        rows.push(MetricsRow {
            frame_index: idx.parse().map_err(|e| bad(format!("frame_index: {e}")))?,
            timestamp: num(t, "timestamp")?,
            method: method.to_owned(),
            psnr: num(p, "psnr")?,
            ssim: num(s, "ssim")?,
        });
    }
    Ok(rows)
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Mean PSNR and SSIM of the rows for `method`, `None` if there are none.
pub fn mean_scores(rows: &[MetricsRow], method: &str) -> Option<(f64, f64)> {
    let sel: Vec<_> = rows.iter().filter(|r| r.method == method).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some((
        sel.iter().map(|r| r.psnr).sum::<f64>() / n,
        sel.iter().map(|r| r.ssim).sum::<f64>() / n,
    ))
}
