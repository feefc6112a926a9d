//! Spatial and temporal information (ITU-T P.910 style) on luma planes.
//!
//! SI of a frame is the population standard deviation of the Sobel gradient
//! magnitude over interior pixels (the one-pixel border is excluded). TI of a
//! frame pair is the population standard deviation of their pixel difference
//! over the full frame. Pixels are on the 0..=255 scale.

use std::io::Write;

use crate::error::{Error, Result};
use crate::manifest::FrameSequence;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct SitiResult {
    pub si_per_frame: Vec<f64>,
    /// One value per consecutive frame pair; empty for single-frame clips.
    pub ti_per_frame: Vec<f64>,
    pub si_max: f64,
    pub si_mean: f64,
    pub ti_max: f64,
    pub ti_mean: f64,
}

/// Two-pass population standard deviation.
fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// Sobel magnitude over the interior of one `w x h` plane.
fn sobel_interior(frame: &[u8], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        let up = &frame[(y - 1) * w..y * w];
        let mid = &frame[y * w..(y + 1) * w];
        let down = &frame[(y + 1) * w..(y + 2) * w];
        for x in 1..w - 1 {
            let p = |row: &[u8], dx: usize| f64::from(row[x + dx - 1]);
            let gx = (p(up, 2) + 2.0 * p(mid, 2) + p(down, 2)) - (p(up, 0) + 2.0 * p(mid, 0) + p(down, 0));
            let gy = (p(down, 0) + 2.0 * p(down, 1) + p(down, 2)) - (p(up, 0) + 2.0 * p(up, 1) + p(up, 2));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

pub fn spatial_information(seq: &FrameSequence) -> Result<Vec<f64>> {
    seq.validate()?;
    let (w, h) = (seq.width, seq.height);
    if w < 3 || h < 3 {
        return Err(Error::Data(format!("frame {w}x{h} is smaller than 3x3")));
    }
    Ok(par::map(&seq.frames, |f| {
        let mag = sobel_interior(f, w, h);
        population_std(mag.iter().copied())
    }))
}

pub fn temporal_information(seq: &FrameSequence) -> Result<Vec<f64>> {
    seq.validate()?;
    if seq.frames.len() < 2 {
        return Err(Error::Data("temporal information needs at least 2 frames".into()));
    }
    Ok(par::map_range(seq.frames.len() - 1, |i| {
        let (prev, cur) = (&seq.frames[i], &seq.frames[i + 1]);
        population_std(cur.iter().zip(prev.iter()).map(|(&a, &b)| f64::from(a) - f64::from(b)))
    }))
}

fn max_mean(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max, v.iter().sum::<f64>() / v.len() as f64)
}

/// SI and TI per frame plus their max and mean over time.
///
/// A single-frame clip yields an empty TI list with zero summaries.
pub fn summarize_siti(seq: &FrameSequence) -> Result<SitiResult> {
    let si = spatial_information(seq)?;
    let ti = if seq.frames.len() >= 2 {
        temporal_information(seq)?
    } else {
        Vec::new()
    };
    Ok(summarize(si, ti))
}

pub(crate) fn summarize(si: Vec<f64>, ti: Vec<f64>) -> SitiResult {
    let (si_max, si_mean) = max_mean(&si);
    let (ti_max, ti_mean) = max_mean(&ti);
    SitiResult {
        si_per_frame: si,
        ti_per_frame: ti,
        si_max,
        si_mean,
        ti_max,
        ti_mean,
    }
}

/// Corpus table `sequence_id,si_mean,si_max,ti_mean,ti_max`.
pub fn write_siti_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a SitiResult)>, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence_id", "si_mean", "si_max", "ti_mean", "ti_max"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for (id, r) in rows {
        w.write_record([
            id.to_string(),
            r.si_mean.to_string(),
            r.si_max.to_string(),
            r.ti_mean.to_string(),
            r.ti_max.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<siti>", e))
}
