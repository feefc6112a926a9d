//! Log-Mel audio front end: framing, Hann-windowed STFT magnitude, HTK mel
//! filterbank, log compression and fixed-size patches for the audio CNN.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::manifest::{downmix_mono, AudioClip};

pub const PATCH_FRAMES: usize = 96;
pub const PATCH_MELS: usize = 64;

/// Front-end parameters; defaults follow the VGGish conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub num_mel: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_offset: f64,
    pub patch_frames: usize,
    pub patch_hop: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            sample_rate: 16_000,
            frame_len_s: 0.025,
            hop_s: 0.010,
            num_mel: PATCH_MELS,
            fmin: 125.0,
            fmax: 7500.0,
            log_offset: 0.01,
            patch_frames: PATCH_FRAMES,
            patch_hop: PATCH_FRAMES,
        }
    }
}

/// Magnitude STFT, `num_frames x num_bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub num_frames: usize,
    pub num_bins: usize,
    pub fft_size: usize,
    pub win_len: usize,
    pub hop_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_bins..(i + 1) * self.num_bins]
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// `1 + (len - win) / hop` when the signal holds at least one window, else 0.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len >= win {
        1 + (len - win) / hop
    } else {
        0
    }
}

pub fn stft_magnitude(mono: &AudioClip, frame_len_s: f64, hop_s: f64) -> Result<Spectrogram> {
    if mono.num_channels() != 1 {
        return Err(Error::Invalid(format!(
            "STFT expects mono audio, got {} channels",
            mono.num_channels()
        )));
    }
    if !(hop_s > 0.0 && frame_len_s >= hop_s) {
        return Err(Error::Invalid(format!(
            "need frame_len_s >= hop_s > 0 (got {frame_len_s}, {hop_s})"
        )));
    }
    let sr = f64::from(mono.sample_rate);
    let win_len = (frame_len_s * sr).round() as usize;
    let hop_len = ((hop_s * sr).round() as usize).max(1);
    if win_len == 0 {
        return Err(Error::Invalid("window shorter than one sample".into()));
    }
    let fft_size = win_len.next_power_of_two();
    let num_bins = fft_size / 2 + 1;
    let signal = &mono.channels[0];
    let num_frames = frame_count(signal.len(), win_len, hop_len);
    if num_frames == 0 {
        log::warn!(
            "clip of {} samples is shorter than one {win_len}-sample window; no frames",
            signal.len()
        );
    }

    let window = hann_periodic(win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut values = Vec::with_capacity(num_frames * num_bins);
    for f in 0..num_frames {
        let start = f * hop_len;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win_len {
                Complex::new(signal[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        values.extend(buf[..num_bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        values,
        num_frames,
        num_bins,
        fft_size,
        win_len,
        hop_len,
        sample_rate: mono.sample_rate,
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, `num_mel x fft_bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub num_mel: usize,
    pub num_bins: usize,
    /// Filter edge frequencies in Hz; filter `m` spans `edges[m]..edges[m+2]`
    /// and peaks at `edges[m+1]`.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.num_bins..(m + 1) * self.num_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }
}

/// `fft_bins` counts bins `0..=N/2` of an `N = 2 * (fft_bins - 1)` point FFT.
pub fn mel_filterbank(
    num_mel: usize,
    fmin: f64,
    fmax: f64,
    sample_rate: u32,
    fft_bins: usize,
) -> Result<MelFilterbank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(Error::Invalid(format!(
            "mel range {fmin}..{fmax} Hz invalid for sample rate {sample_rate}"
        )));
    }
    if num_mel == 0 || fft_bins < 2 {
        return Err(Error::Invalid("need num_mel >= 1 and at least 2 FFT bins".into()));
    }
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges_hz: Vec<f64> = (0..num_mel + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_mel + 1) as f64))
        .collect();
    let bin_hz = nyquist / (fft_bins - 1) as f64;
    let mut weights = vec![0.0; num_mel * fft_bins];
    for m in 0..num_mel {
        let (l, c, r) = (
            hz_to_mel(edges_hz[m]),
            hz_to_mel(edges_hz[m + 1]),
            hz_to_mel(edges_hz[m + 2]),
        );
        for k in 0..fft_bins {
            let mel = hz_to_mel(k as f64 * bin_hz);
            let w = if mel > l && mel <= c {
                (mel - l) / (c - l)
            } else if mel > c && mel < r {
                (r - mel) / (r - c)
            } else {
                0.0
            };
            weights[m * fft_bins + k] = w;
        }
    }
    Ok(MelFilterbank {
        weights,
        num_mel,
        num_bins: fft_bins,
        edges_hz,
    })
}

/// Log-compressed mel energies, `num_frames x num_mel` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub num_frames: usize,
    pub num_mel: usize,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
    pub log_offset: f64,
}

impl MelSpectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_mel..(i + 1) * self.num_mel]
    }
}

/// Mel energies before the log: power spectrum pooled by the filterbank.
pub fn mel_energies(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Vec<f64>> {
    if spec.num_bins != fb.num_bins {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.num_bins, fb.num_bins
        )));
    }
    let mut out = Vec::with_capacity(spec.num_frames * fb.num_mel);
    for f in 0..spec.num_frames {
        let frame = spec.frame(f);
        for m in 0..fb.num_mel {
            out.push(fb.row(m).iter().zip(frame).map(|(w, x)| w * x * x).sum());
        }
    }
    Ok(out)
}

/// `ln(mel_energy + log_offset)`.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank, log_offset: f64) -> Result<MelSpectrogram> {
    let values = mel_energies(spec, fb)?
        .into_iter()
        .map(|e| (e + log_offset).ln())
        .collect();
    let sr = f64::from(spec.sample_rate);
    Ok(MelSpectrogram {
        values,
        num_frames: spec.num_frames,
        num_mel: fb.num_mel,
        frame_hop_s: spec.hop_len as f64 / sr,
        frame_len_s: spec.win_len as f64 / sr,
        log_offset,
    })
}

/// A fixed `patch_frames x num_mel` window of log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioPatch {
    pub values: Vec<f64>,
    pub frames: usize,
    pub mels: usize,
    /// Trailing zero rows added to fill the last window.
    pub padded_rows: usize,
}

impl AudioPatch {
    pub fn is_padded(&self) -> bool {
        self.padded_rows > 0
    }
}

/// Cut the mel spectrogram into windows of `patch_frames`, stepping by
/// `patch_hop`; the final partial window is zero padded.
pub fn frame_patches(mel: &MelSpectrogram, patch_frames: usize, patch_hop: usize) -> Result<Vec<AudioPatch>> {
    if mel.num_mel != PATCH_MELS {
        return Err(Error::Shape(format!(
            "patches need {PATCH_MELS} mel bins, got {}",
            mel.num_mel
        )));
    }
    if patch_frames == 0 || patch_hop == 0 {
        return Err(Error::Invalid("patch size and hop must be positive".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < mel.num_frames {
        let end = (start + patch_frames).min(mel.num_frames);
        let mut values = mel.values[start * mel.num_mel..end * mel.num_mel].to_vec();
        let padded_rows = patch_frames - (end - start);
        values.resize(patch_frames * mel.num_mel, 0.0);
        out.push(AudioPatch {
            values,
            frames: patch_frames,
            mels: mel.num_mel,
            padded_rows,
        });
        start += patch_hop;
    }
    Ok(out)
}

/// Linear-interpolation resampler. Adequate for feature extraction only.
pub fn resample_linear(mono: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Invalid("target sample rate must be > 0".into()));
    }
    if mono.sample_rate == target_rate {
        return Ok(mono.clone());
    }
    let ratio = f64::from(mono.sample_rate) / f64::from(target_rate);
    let channels = mono
        .channels
        .iter()
        .map(|x| {
            let n_out = (x.len() as f64 / ratio).round() as usize;
            (0..n_out)
                .map(|i| {
                    let t = i as f64 * ratio;
                    let i0 = t.floor() as usize;
                    let frac = t - i0 as f64;
                    match (x.get(i0), x.get(i0 + 1)) {
                        (Some(a), Some(b)) => a + (b - a) * frac,
                        (Some(a), None) => *a,
                        _ => 0.0,
                    }
                })
                .collect()
        })
        .collect();
    AudioClip::new(target_rate, channels)
}

/// Full front end: downmix, resample, STFT, log-mel.
pub fn clip_log_mel(clip: &AudioClip, cfg: &FrontEndConfig) -> Result<MelSpectrogram> {
    let mono = resample_linear(&downmix_mono(clip), cfg.sample_rate)?;
    let spec = stft_magnitude(&mono, cfg.frame_len_s, cfg.hop_s)?;
    let fb = mel_filterbank(cfg.num_mel, cfg.fmin, cfg.fmax, cfg.sample_rate, spec.num_bins)?;
    log_mel(&spec, &fb, cfg.log_offset)
}

pub fn clip_patches(clip: &AudioClip, cfg: &FrontEndConfig) -> Result<Vec<AudioPatch>> {
    frame_patches(&clip_log_mel(clip, cfg)?, cfg.patch_frames, cfg.patch_hop)
}

const FEATURE_MAGIC: &[u8; 4] = b"AVQF";

/// Feature dump: `"AVQF"`, u32 rank, u32 dims, f32 payload, little endian.
pub fn write_features(dims: &[usize], data: &[f64], mut out: impl Write) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::Shape(format!(
            "dims {dims:?} hold {count} values, got {}",
            data.len()
        )));
    }
    let io = |e| Error::io("<features>", e);
    let mut buf = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_features(mut input: impl Read) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<features>", e))?;
    let bad = |m: &str| Error::parse("AVQF", m.to_string());
    if bytes.len() < 8 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| bad("truncated"))
    };
    let rank = word(4)? as usize;
    let dims = (0..rank)
        .map(|i| word(8 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 8 + 4 * rank;
    let count: usize = dims.iter().product();
    if bytes.len() != start + 4 * count {
        return Err(bad("payload length does not match dims"));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((dims, data))
}

pub fn save_features(path: impl AsRef<Path>, dims: &[usize], data: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(dims, data, std::io::BufWriter::new(file))
}
