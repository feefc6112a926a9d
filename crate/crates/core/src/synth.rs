//! Deterministic synthetic corpus for desk-scale training and tests.
//!
//! Each sequence has a latent quality `q` in `[0, 1]`. Lower `q` means lower
//! texture contrast and more pixel noise in the video and more broadband noise
//! in the audio; subject ratings are centred on `15 + 75 q`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hm::{write_hm, HeadMovementTrace};
use crate::manifest::{
    write_manifest, write_scores, write_wav, write_y4m, AudioClip, Device, FrameSequence, Motion, RatingRecord, Scene,
    SequenceManifestEntry, Split,
};
use crate::nn::params::init_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sequences: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: u32,
    pub sample_rate: u32,
    pub audio_channels: usize,
    pub audio_seconds: f64,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sequences: 8,
            width: 64,
            height: 32,
            frames: 8,
            fps: 8,
            sample_rate: 16_000,
            audio_channels: 2,
            audio_seconds: 1.0,
            subjects: 20,
            seed: 7,
        }
    }
}

/// Latent description of one generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub id: String,
    pub quality: f64,
    /// Rating centre on the `[0, 100]` scale.
    pub mos: f64,
}

/// Rating offsets: standard normal quantiles at `k/20`, `k = 1..19`.
fn rating_offsets() -> Vec<f64> {
    let n = Normal::standard();
    (1..20).map(|k| n.inverse_cdf(k as f64 / 20.0)).collect()
}

/// Subject `s` on sequence `j` gets offset `z[(s + j) mod 19]`, so every
/// sequence sees the full offset set and no subject is systematically biased.
fn consistent_rating(centre: f64, sigma: f64, offsets: &[f64], s: usize, j: usize) -> f64 {
    let v = centre + sigma * offsets[(s + j) % offsets.len()];
    (v.clamp(0.0, 100.0) * 1000.0).round() / 1000.0
}

fn subject_id(s: usize) -> String {
    format!("S{s:02}")
}

/// Ratings of `subjects` consistent viewers around the given centres.
pub fn consistent_ratings(ids: &[String], centres: &[f64], subjects: usize, sigma: f64) -> Vec<RatingRecord> {
    let z = rating_offsets();
    let mut out = Vec::with_capacity(ids.len() * subjects);
    for s in 0..subjects {
        for (j, (id, &c)) in ids.iter().zip(centres).enumerate() {
            out.push(RatingRecord {
                subject_id: subject_id(s),
                sequence_id: id.clone(),
                session_id: format!("session{}", s % 2 + 1),
                score: consistent_rating(c, sigma, &z, s, j),
                ssq_flag: false,
            });
        }
    }
    out
}

/// Screening fixture: 20 subjects rate 20 sequences whose means alternate
/// near 39.5 and 60.5. With `planted = Some(s)`, subject `s` scores every
/// sequence at `100 - mean`, which lands above the mean on half the
/// sequences and below it on the other half.
pub fn screening_ratings(planted: Option<usize>) -> Vec<RatingRecord> {
    let ids: Vec<String> = (0..20).map(|j| format!("scr{j:02}")).collect();
    let centres: Vec<f64> = (0..20)
        .map(|j| if j % 2 == 0 { 39.5 } else { 60.5 } + 0.025 * (j as f64 - 9.5))
        .collect();
    let mut records = consistent_ratings(&ids, &centres, 20, 8.0);
    if let Some(p) = planted {
        let sid = subject_id(p);
        for r in records.iter_mut().filter(|r| r.subject_id == sid) {
            let j = ids.iter().position(|i| *i == r.sequence_id).expect("known id");
            r.score = 100.0 - centres[j];
        }
    }
    records
}

fn render_video(cfg: &SynthConfig, quality: f64, rng: &mut impl Rng) -> Result<FrameSequence> {
    let (w, h) = (cfg.width, cfg.height);
    let fx = rng.random_range(1.0..3.0);
    let fy = rng.random_range(1.0..2.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(0.05..0.2);
    let contrast = 30.0 + 70.0 * quality;
    let noise = 45.0 * (1.0 - quality);
    let tau = std::f64::consts::TAU;
    let frames = (0..cfg.frames)
        .map(|t| {
            let shift = speed * t as f64;
            (0..h * w)
                .map(|i| {
                    let (x, y) = ((i % w) as f64 / w as f64, (i / w) as f64 / h as f64);
                    let texture = (tau * (fx * x + shift) + phase).sin() * (tau * fy * y).cos();
                    let edge = if ((x * 8.0 + shift * 4.0) as usize + (y * 4.0) as usize).is_multiple_of(2) {
                        0.5
                    } else {
                        -0.5
                    };
                    let v = 128.0 + contrast * (0.7 * texture + 0.3 * edge) + noise * rng.random_range(-1.0..1.0);
                    v.round().clamp(0.0, 255.0) as u8
                })
                .collect()
        })
        .collect();
    FrameSequence::new(w, h, cfg.fps, 1, frames)
}

fn render_audio(cfg: &SynthConfig, quality: f64, rng: &mut impl Rng) -> Result<AudioClip> {
    let n = (cfg.audio_seconds * f64::from(cfg.sample_rate)).round() as usize;
    let f0 = rng.random_range(220.0..660.0);
    let noise = 0.25 * (1.0 - quality);
    let sr = f64::from(cfg.sample_rate);
    let channels = (0..cfg.audio_channels)
        .map(|c| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let tone = 0.3 * (std::f64::consts::TAU * f0 * t + c as f64 * 0.3).sin()
                        + 0.15 * (std::f64::consts::TAU * 2.0 * f0 * t).sin();
                    tone * (0.5 + 0.5 * quality) + noise * rng.random_range(-1.0..1.0)
                })
                .collect()
        })
        .collect();
    AudioClip::new(cfg.sample_rate, channels)
}

fn render_hm(seconds: f64, rng: &mut impl Rng) -> HeadMovementTrace {
    let n = (seconds * crate::hm::NOMINAL_RATE_HZ).round().max(2.0) as usize;
    let yaw_rate = rng.random_range(-40.0..40.0);
    let start = rng.random_range(-180.0..180.0);
    let mut trace = HeadMovementTrace::default();
    for i in 0..n {
        let t = i as f64 / crate::hm::NOMINAL_RATE_HZ;
        trace.t.push(t);
        trace.yaw.push(crate::hm::wrap_degrees(start + yaw_rate * t));
        trace.pitch.push(10.0 * (t * 1.3).sin());
        trace.roll.push(2.0 * (t * 0.7).cos());
    }
    trace
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the corpus under `dir`:
/// `manifest.json`, `video/*.y4m`, `audio/*.wav`, `hm/*.csv`, `scores.csv`
/// and the screening fixtures `screening/{consistent,planted}.csv`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<Vec<SynthSequence>> {
    if cfg.sequences < 2 || cfg.subjects < 2 || cfg.frames == 0 {
        return Err(Error::Invalid(
            "synthetic corpus needs >= 2 sequences, >= 2 subjects and >= 1 frame".into(),
        ));
    }
    let mut rng = init_rng(cfg.seed);
    let mut qualities: Vec<f64> = (0..cfg.sequences)
        .map(|i| i as f64 / (cfg.sequences - 1) as f64)
        .collect();
    qualities.shuffle(&mut rng);

    let mut sequences = Vec::with_capacity(cfg.sequences);
    let mut manifest = Vec::with_capacity(cfg.sequences);
    for (i, &q) in qualities.iter().enumerate() {
        let id = format!("seq{i:02}");
        let video = render_video(cfg, q, &mut rng)?;
        let audio = render_audio(cfg, q, &mut rng)?;
        let entry = SequenceManifestEntry {
            sequence_id: id.clone(),
            width: cfg.width as u32,
            height: cfg.height as u32,
            fps: f64::from(cfg.fps),
            duration_s: cfg.frames as f64 / f64::from(cfg.fps),
            scene: Scene::ALL[i % Scene::ALL.len()],
            device: Device::Synthetic,
            audio_channels: cfg.audio_channels as u32,
            audio_sample_rate: cfg.sample_rate,
            motion: if i % 2 == 0 { Motion::Static } else { Motion::Dynamic },
            split: Split::Train,
        };
        let mut buf = Vec::new();
        write_y4m(&video, &mut buf).map_err(|e| Error::io(entry.video_path(dir), e))?;
        write_file(&entry.video_path(dir), &buf)?;
        buf.clear();
        write_wav(&audio, &mut buf).map_err(|e| Error::io(entry.audio_path(dir), e))?;
        write_file(&entry.audio_path(dir), &buf)?;
        buf.clear();
        write_hm(&render_hm(entry.duration_s, &mut rng), &mut buf)?;
        write_file(&dir.join("hm").join(format!("{id}.csv")), &buf)?;
        sequences.push(SynthSequence {
            id,
            quality: q,
            mos: 15.0 + 75.0 * q,
        });
        manifest.push(entry);
    }
    write_manifest(dir.join("manifest.json"), &manifest)?;

    let ids: Vec<String> = sequences.iter().map(|s| s.id.clone()).collect();
    let centres: Vec<f64> = sequences.iter().map(|s| s.mos).collect();
    let scores = consistent_ratings(&ids, &centres, cfg.subjects, 5.0);
    for (name, records) in [
        ("scores.csv", scores),
        ("screening/consistent.csv", screening_ratings(None)),
        ("screening/planted.csv", screening_ratings(Some(PLANTED_SUBJECT))),
    ] {
        let mut buf = Vec::new();
        write_scores(&records, &mut buf)?;
        write_file(&dir.join(name), &buf)?;
    }
    Ok(sequences)
}

/// Index of the inconsistent subject in `screening/planted.csv`.
pub const PLANTED_SUBJECT: usize = 7;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_symmetric() {
        let z = rating_offsets();
        assert_eq!(z.len(), 19);
        assert!(z[9].abs() < 1e-12);
        assert!((z[0] + z[18]).abs() < 1e-12);
    }

    #[test]
    fn planted_subject_alternates_sides() {
        let recs = screening_ratings(Some(3));
        let s3: Vec<_> = recs.iter().filter(|r| r.subject_id == "S03").collect();
        assert_eq!(s3.len(), 20);
        assert!(s3[0].score > 55.0 && s3[1].score < 45.0);
    }
}
