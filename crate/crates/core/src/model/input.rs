use std::path::Path;

use super::ModelConfig;
use crate::audiofe::{clip_patches, FrontEndConfig, PATCH_FRAMES, PATCH_MELS};
use crate::erp::{cos_latitude_prior, partition_erp};
use crate::error::{Error, Result};
use crate::manifest::{load_wav, load_y4m, AudioClip, FrameSequence, SequenceManifestEntry};
use crate::nn::Tensor;

/// Height and width every latitude band is resampled to.
pub const BAND_INPUT: (usize, usize) = (16, 32);

/// Network input for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    /// One `[T, 1, 16, 32]` tensor per latitude band, north to south.
    pub bands: Vec<Tensor>,
    /// Cosine-latitude prior of each band.
    pub prior: Vec<f64>,
    /// Log-mel patches `[P, 1, 96, 64]`.
    pub audio: Tensor,
}

/// `t` evenly spaced indices into `available` frames, first and last included.
pub fn sample_frame_indices(available: usize, t: usize) -> Result<Vec<usize>> {
    if t == 0 || t > available {
        return Err(Error::Data(format!(
            "cannot sample {t} frames from a clip of {available}"
        )));
    }
    if t == 1 {
        return Ok(vec![0]);
    }
    Ok((0..t)
        .map(|i| ((i * (available - 1)) as f64 / (t - 1) as f64).round() as usize)
        .collect())
}

/// Overlap of source cell `[i, i+1)` with destination cell `j` scaled to
/// source units, as a dense `[out, in]` weight matrix whose rows sum to 1.
fn area_weights(input: usize, output: usize) -> Vec<f64> {
    let scale = input as f64 / output as f64;
    let mut w = vec![0.0; output * input];
    for j in 0..output {
        let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(input);
        for i in first..last {
            let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
            w[j * input + i] = overlap / scale;
        }
    }
    w
}

/// Exact area-averaging resize of a row-major `h x w` plane.
pub fn area_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if src.len() != h * w || h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "area_resize {h}x{w} -> {out_h}x{out_w} with {} samples",
            src.len()
        )));
    }
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    // columns first, then rows
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for j in 0..out_w {
            tmp[y * out_w + j] = wx[j * w..(j + 1) * w].iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for j in 0..out_h {
        for y in 0..h {
            let k = wy[j * h + y];
            if k != 0.0 {
                for (o, v) in out[j * out_w..(j + 1) * out_w]
                    .iter_mut()
                    .zip(&tmp[y * out_w..(y + 1) * out_w])
                {
                    *o += k * v;
                }
            }
        }
    }
    Ok(out)
}

/// Sample T frames, split each into latitude bands, resize every band to
/// [`BAND_INPUT`] and scale pixels to `v/255 - 0.5`.
pub fn prepare_video(seq: &FrameSequence, cfg: &ModelConfig) -> Result<(Vec<Tensor>, Vec<f64>)> {
    seq.validate()?;
    if seq.width != 2 * seq.height {
        return Err(Error::Data(format!(
            "frame {}x{} is not 2:1 ERP",
            seq.width, seq.height
        )));
    }
    let idx = sample_frame_indices(seq.len(), cfg.frames_per_clip)?;
    let partition = partition_erp(seq.height, cfg.bands)?;
    let prior = cos_latitude_prior(&partition);
    let (bh, bw) = BAND_INPUT;
    let t = idx.len();
    let mut bands = vec![Vec::with_capacity(t * bh * bw); cfg.bands];
    for &fi in &idx {
        let frame = &seq.frames[fi];
        for (m, &(r0, r1)) in partition.band_row_ranges.iter().enumerate() {
            let plane: Vec<f64> = frame[r0 * seq.width..r1 * seq.width]
                .iter()
                .map(|&v| f64::from(v) / 255.0 - 0.5)
                .collect();
            bands[m].extend(area_resize(&plane, r1 - r0, seq.width, bh, bw)?);
        }
    }
    let bands = bands
        .into_iter()
        .map(|d| Tensor::new(vec![t, 1, bh, bw], d))
        .collect::<Result<Vec<_>>>()?;
    Ok((bands, prior))
}

/// Log-mel patches of a clip as `[P, 1, 96, 64]`.
pub fn prepare_audio(clip: &AudioClip) -> Result<Tensor> {
    let patches = clip_patches(clip, &FrontEndConfig::default())?;
    if patches.is_empty() {
        return Err(Error::Data("audio clip yields no patches".into()));
    }
    let p = patches.len();
    let mut data = Vec::with_capacity(p * PATCH_FRAMES * PATCH_MELS);
    for patch in patches {
        data.extend(patch.values);
    }
    Tensor::new(vec![p, 1, PATCH_FRAMES, PATCH_MELS], data)
}

/// Load and preprocess the media of one manifest entry.
pub fn load_sample(entry: &SequenceManifestEntry, media_root: &Path, cfg: &ModelConfig) -> Result<SampleInput> {
    let seq = load_y4m(entry.video_path(media_root))?;
    let clip = load_wav(entry.audio_path(media_root))?;
    let (bands, prior) = prepare_video(&seq, cfg).map_err(|e| Error::Data(format!("{}: {e}", entry.sequence_id)))?;
    let audio = prepare_audio(&clip).map_err(|e| Error::Data(format!("{}: {e}", entry.sequence_id)))?;
    Ok(SampleInput { bands, prior, audio })
}
