use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"YUV4MPEG2 ";
const FRAME: &[u8] = b"FRAME";

/// Decoded luma planes of a video. Chroma is not retained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    /// Frame rate as a rational `num/den`.
    pub fps_num: u32,
    pub fps_den: u32,
    /// Row-major 8-bit luma planes, `width * height` bytes each.
    pub frames: Vec<Vec<u8>>,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, fps_num: u32, fps_den: u32, frames: Vec<Vec<u8>>) -> Result<Self> {
        let seq = FrameSequence {
            width,
            height,
            fps_num,
            fps_den,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("frame sequence has no frames".into()));
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(Error::Data("frame rate must be positive".into()));
        }
        let n = self.width * self.height;
        if let Some(i) = self.frames.iter().position(|f| f.len() != n) {
            return Err(Error::Data(format!(
                "frame {i} has {} bytes, expected {n}",
                self.frames[i].len()
            )));
        }
        Ok(())
    }

    pub fn fps(&self) -> f64 {
        f64::from(self.fps_num) / f64::from(self.fps_den)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame `i` as reals on the 0..=255 scale.
    pub fn frame_f64(&self, i: usize) -> Vec<f64> {
        self.frames[i].iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    Mono,
}

impl Chroma {
    fn plane_bytes(self, w: usize, h: usize) -> usize {
        match self {
            Chroma::C420 => 2 * w.div_ceil(2) * h.div_ceil(2),
            Chroma::Mono => 0,
        }
    }
}

fn read_line<'a>(data: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8]> {
    let rest = &data[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse("y4m", format!("unterminated {what} line")))?;
    *pos += end + 1;
    Ok(&rest[..end])
}

/// Parse a YUV4MPEG2 byte stream (8-bit 4:2:0 or mono).
pub fn read_y4m(data: &[u8]) -> Result<FrameSequence> {
    if !data.starts_with(MAGIC) {
        return Err(Error::parse("y4m", "bad magic (expected \"YUV4MPEG2 \")"));
    }
    let mut pos = 0;
    let header = read_line(data, &mut pos, "header")?;
    let header = std::str::from_utf8(&header[MAGIC.len()..]).map_err(|_| Error::parse("y4m", "header is not ASCII"))?;

    let (mut width, mut height, mut fps) = (None, None, None);
    let mut chroma = Chroma::C420;
    for tok in header.split_ascii_whitespace() {
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = val.parse::<usize>().ok(),
            "H" => height = val.parse::<usize>().ok(),
            "F" => {
                fps = val
                    .split_once(':')
                    .and_then(|(n, d)| Some((n.parse::<u32>().ok()?, d.parse::<u32>().ok()?)))
            }
            "C" => {
                chroma = match val {
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                    "mono" => Chroma::Mono,
                    other => return Err(Error::parse("y4m", format!("unsupported chroma tag C{other}"))),
                }
            }
            _ => {}
        }
    }
    let width = width
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::parse("y4m", "missing or invalid W"))?;
    let height = height
        .filter(|&h| h > 0)
        .ok_or_else(|| Error::parse("y4m", "missing or invalid H"))?;
    let (fps_num, fps_den) = fps
        .filter(|&(n, d)| n > 0 && d > 0)
        .ok_or_else(|| Error::parse("y4m", "missing or invalid F"))?;

    let luma = width * height;
    let frame_bytes = luma + chroma.plane_bytes(width, height);
    let mut frames = Vec::new();
    while pos < data.len() {
        let idx = frames.len();
        let line = read_line(data, &mut pos, "FRAME")?;
        if !line.starts_with(FRAME) {
            return Err(Error::parse("y4m", format!("frame {idx}: missing FRAME marker")));
        }
        if data.len() - pos < frame_bytes {
            return Err(Error::parse(
                "y4m",
                format!(
                    "frame {idx}: truncated payload ({} of {frame_bytes} bytes)",
                    data.len() - pos
                ),
            ));
        }
        frames.push(data[pos..pos + luma].to_vec());
        pos += frame_bytes;
    }
    if frames.is_empty() {
        return Err(Error::parse("y4m", "stream contains no frames"));
    }
    Ok(FrameSequence {
        width,
        height,
        fps_num,
        fps_den,
        frames,
    })
}

pub fn load_y4m(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_y4m(&data).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

/// Serialize as 4:2:0 with neutral (128) chroma.
pub fn write_y4m(seq: &FrameSequence, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C420jpeg",
        seq.width, seq.height, seq.fps_num, seq.fps_den
    )?;
    let chroma = vec![128u8; Chroma::C420.plane_bytes(seq.width, seq.height)];
    for frame in &seq.frames {
        out.write_all(b"FRAME\n")?;
        out.write_all(frame)?;
        out.write_all(&chroma)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_clip(w: usize, h: usize, n: usize) -> FrameSequence {
        let frames = (0..n)
            .map(|t| (0..w * h).map(|i| ((i + 7 * t) % 256) as u8).collect())
            .collect();
        FrameSequence::new(w, h, 30, 1, frames).unwrap()
    }

    fn encode(seq: &FrameSequence) -> Vec<u8> {
        let mut buf = Vec::new();
        write_y4m(seq, &mut buf).unwrap();
        buf
    }

    #[test]
    fn eight_frames_64x32() {
        let clip = gradient_clip(64, 32, 8);
        let back = read_y4m(&encode(&clip)).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!((back.width, back.height), (64, 32));
        assert_eq!(back.fps(), 30.0);
        assert_eq!(back, clip);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&gradient_clip(4, 2, 1));
        bytes[8] = b'3';
        let err = read_y4m(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn short_payload_is_truncation() {
        let mut bytes = encode(&gradient_clip(8, 4, 2));
        bytes.pop();
        let err = read_y4m(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unsupported_chroma() {
        let bytes = b"YUV4MPEG2 W4 H2 F30:1 C444\nFRAME\n".to_vec();
        let err = read_y4m(&bytes).unwrap_err();
        assert!(err.to_string().contains("C444"), "{err}");
    }

    #[test]
    fn mono_stream_and_frame_params() {
        let mut bytes = b"YUV4MPEG2 W3 H2 F25:1 Cmono XYSCSS=MONO\n".to_vec();
        bytes.extend_from_slice(b"FRAME Ixyz\n");
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let seq = read_y4m(&bytes).unwrap();
        assert_eq!(seq.frames, vec![vec![1, 2, 3, 4, 5, 6]]);
        assert_eq!(seq.fps(), 25.0);
    }

    #[test]
    fn odd_dimensions_round_chroma_up() {
        let clip = gradient_clip(5, 3, 2);
        let bytes = encode(&clip);
        // header + 2 * ("FRAME\n" + 15 luma + 2 * 3 * 2 chroma)
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(bytes.len(), header_len + 2 * (6 + 15 + 12));
        assert_eq!(read_y4m(&bytes).unwrap(), clip);
    }

    proptest! {
        #[test]
        fn luma_round_trip(w in 1usize..12, h in 1usize..9, n in 1usize..4, seed in any::<u64>()) {
            let frames: Vec<Vec<u8>> = (0..n)
                .map(|t| (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 31 * t as u64 + 1) >> 24) as u8).collect())
                .collect();
            let clip = FrameSequence::new(w, h, 30000, 1001, frames).unwrap();
            let once = read_y4m(&encode(&clip)).unwrap();
            prop_assert_eq!(&once, &clip);
            prop_assert_eq!(encode(&once), encode(&clip));
        }
    }
}
