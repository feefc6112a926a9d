use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// PCM audio as per-channel real samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        let clip = AudioClip { sample_rate, channels };
        clip.validate()?;
        Ok(clip)
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        AudioClip {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Data("sample_rate must be > 0".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Data("audio clip has no channels".into()));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Data("audio channels differ in length".into()));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / f64::from(self.sample_rate)
    }
}

/// Sample-wise arithmetic mean over channels.
pub fn downmix_mono(clip: &AudioClip) -> AudioClip {
    if clip.channels.len() == 1 {
        return clip.clone();
    }
    let n = clip.num_samples();
    let scale = 1.0 / clip.channels.len() as f64;
    let mono = (0..n)
        .map(|i| clip.channels.iter().map(|c| c[i]).sum::<f64>() * scale)
        .collect();
    AudioClip::mono(clip.sample_rate, mono)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse a RIFF/WAVE PCM16 file with 1, 2 or 4 channels.
pub fn read_wav(data: &[u8]) -> Result<AudioClip> {
    if data.len() < 12 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(Error::parse("wav", "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32, u16)> = None;
    let mut payload: Option<&[u8]> = None;
    while pos + 8 <= data.len() {
        let id = &data[pos..pos + 4];
        let size = u32_at(data, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| Error::parse("wav", format!("chunk {:?} truncated", String::from_utf8_lossy(id))))?;
        let body = &data[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::parse("wav", "fmt chunk too short"));
                }
                let mut format = u16_at(body, 0);
                if format == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    format = u16_at(body, 24);
                }
                if format != FORMAT_PCM {
                    return Err(Error::parse(
                        "wav",
                        format!("unsupported codec (format tag {format:#06x}); only PCM is read"),
                    ));
                }
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                fmt = Some((channels, rate, bits));
            }
            b"data" => payload = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (channels, rate, bits) = fmt.ok_or_else(|| Error::parse("wav", "missing fmt chunk"))?;
    let payload = payload.ok_or_else(|| Error::parse("wav", "missing data chunk"))?;
    if bits != 16 {
        return Err(Error::parse("wav", format!("{bits}-bit PCM unsupported; expected 16")));
    }
    if !matches!(channels, 1 | 2 | 4) {
        return Err(Error::parse(
            "wav",
            format!("channel count {channels} not in {{1,2,4}}"),
        ));
    }
    if rate == 0 {
        return Err(Error::parse("wav", "sample rate is zero"));
    }
    let nch = usize::from(channels);
    let frames = payload.len() / (2 * nch);
    let mut out = vec![Vec::with_capacity(frames); nch];
    for (i, s) in payload[..frames * 2 * nch].chunks_exact(2).enumerate() {
        out[i % nch].push(f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0);
    }
    Ok(AudioClip {
        sample_rate: rate,
        channels: out,
    })
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav(&data).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Write as PCM16; samples are scaled by 32768 and clamped.
pub fn write_wav(clip: &AudioClip, mut out: impl Write) -> std::io::Result<()> {
    let nch = clip.channels.len() as u16;
    let frames = clip.num_samples();
    let data_len = (frames * usize::from(nch) * 2) as u32;
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_len).to_le_bytes())?;
    out.write_all(b"WAVEfmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&FORMAT_PCM.to_le_bytes())?;
    out.write_all(&nch.to_le_bytes())?;
    out.write_all(&clip.sample_rate.to_le_bytes())?;
    out.write_all(&(clip.sample_rate * u32::from(nch) * 2).to_le_bytes())?;
    out.write_all(&(nch * 2).to_le_bytes())?;
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_len.to_le_bytes())?;
    let mut buf = Vec::with_capacity(data_len as usize);
    for i in 0..frames {
        for ch in &clip.channels {
            buf.extend_from_slice(&quantize(ch[i]).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(clip: &AudioClip) -> Vec<u8> {
        let mut buf = Vec::new();
        write_wav(clip, &mut buf).unwrap();
        buf
    }

    #[test]
    fn one_second_of_silence() {
        let clip = AudioClip::mono(16_000, vec![0.0; 16_000]);
        let back = read_wav(&encode(&clip)).unwrap();
        assert_eq!(back.num_samples(), 16_000);
        assert_eq!(back.sample_rate, 16_000);
        assert!(back.channels[0].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn four_channels_preserved() {
        let clip = AudioClip::new(48_000, vec![vec![0.25; 10]; 4]).unwrap();
        let back = read_wav(&encode(&clip)).unwrap();
        assert_eq!(back.num_channels(), 4);
        assert_eq!(back.channels[3], vec![0.25; 10]);
    }

    #[test]
    fn most_negative_sample_is_minus_one() {
        let clip = AudioClip::mono(8_000, vec![-1.0, 0.5]);
        let bytes = encode(&clip);
        assert_eq!(&bytes[44..46], &(-32768i16).to_le_bytes());
        assert_eq!(read_wav(&bytes).unwrap().channels[0], vec![-1.0, 0.5]);
    }

    #[test]
    fn non_pcm_rejected() {
        let mut bytes = encode(&AudioClip::mono(8_000, vec![0.0; 4]));
        bytes[20] = 3; // IEEE float
        let err = read_wav(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported codec"), "{err}");
    }

    #[test]
    fn three_channels_rejected() {
        let clip = AudioClip::new(8_000, vec![vec![0.0; 4]; 3]).unwrap();
        let err = read_wav(&encode(&clip)).unwrap_err();
        assert!(err.to_string().contains("channel count 3"), "{err}");
    }

    #[test]
    fn skips_unknown_chunks() {
        let bytes = encode(&AudioClip::mono(8_000, vec![0.5; 3]));
        let mut with_list = bytes[..12].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        with_list.extend_from_slice(&bytes[12..]);
        assert_eq!(read_wav(&with_list).unwrap().channels[0], vec![0.5; 3]);
    }

    #[test]
    fn downmix_cases() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin() * 0.5).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let stereo = AudioClip::new(16_000, vec![x.clone(), neg]).unwrap();
        assert!(downmix_mono(&stereo).channels[0].iter().all(|&v| v == 0.0));

        let mono = AudioClip::mono(16_000, x);
        assert_eq!(downmix_mono(&mono), mono);

        let quad = AudioClip::new(16_000, vec![vec![1.0; 5], vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]]).unwrap();
        assert_eq!(downmix_mono(&quad).channels[0], vec![0.25; 5]);
    }

    proptest! {
        #[test]
        fn downmix_is_linear(a in prop::collection::vec(-1.0f64..1.0, 8), b in prop::collection::vec(-1.0f64..1.0, 8)) {
            let split = |v: &[f64]| AudioClip::new(16_000, vec![v[..4].to_vec(), v[4..].to_vec()]).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = downmix_mono(&split(&sum));
            let da = downmix_mono(&split(&a));
            let db = downmix_mono(&split(&b));
            for i in 0..4 {
                prop_assert!((lhs.channels[0][i] - (da.channels[0][i] + db.channels[0][i])).abs() < 1e-12);
            }
        }
    }
}
