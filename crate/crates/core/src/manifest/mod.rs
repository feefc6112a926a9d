//! Dataset model and media ingestion.
//!
//! Everything here is uncompressed: JSON manifests, YUV4MPEG2 video, PCM16
//! WAV audio and CSV rating tables. Loaders are pure functions of the input
//! bytes.

mod scores;
mod split;
mod wav;
mod y4m;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scores::{load_scores, read_scores, write_scores, RatingRecord};
pub use split::{assign_split, check_split, load_split_csv, read_split_csv, test_count, write_split_csv};
pub use wav::{downmix_mono, load_wav, read_wav, write_wav, AudioClip};
pub use y4m::{load_y4m, read_y4m, write_y4m, FrameSequence};

/// Content categories used to tag sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scene {
    Street,
    Park,
    Campus,
    Indoor,
    Market,
    Restaurant,
    Transit,
    Waterside,
    Sports,
    Performance,
}

impl Scene {
    pub const ALL: [Scene; 10] = [
        Scene::Street,
        Scene::Park,
        Scene::Campus,
        Scene::Indoor,
        Scene::Market,
        Scene::Restaurant,
        Scene::Transit,
        Scene::Waterside,
        Scene::Sports,
        Scene::Performance,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Device {
    Insta360Pro2,
    Insta360X3,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::parse("split", format!("unknown split {other:?}"))),
        }
    }
}

/// Metadata for one audio-visual sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifestEntry {
    pub sequence_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration_s: f64,
    pub scene: Scene,
    pub device: Device,
    pub audio_channels: u32,
    pub audio_sample_rate: u32,
    pub motion: Motion,
    pub split: Split,
}

impl SequenceManifestEntry {
    pub fn validate(&self) -> Result<()> {
        let id = &self.sequence_id;
        if id.is_empty() {
            return Err(Error::Data("empty sequence_id".into()));
        }
        if self.height == 0 || self.width != 2 * self.height {
            return Err(Error::Data(format!(
                "{id}: {}x{} is not 2:1 ERP",
                self.width, self.height
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Data(format!("{id}: fps must be > 0")));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Data(format!("{id}: duration_s must be > 0")));
        }
        if !matches!(self.audio_channels, 1 | 2 | 4) {
            return Err(Error::Data(format!(
                "{id}: audio_channels {} not in {{1,2,4}}",
                self.audio_channels
            )));
        }
        if self.audio_sample_rate == 0 {
            return Err(Error::Data(format!("{id}: audio_sample_rate must be > 0")));
        }
        Ok(())
    }

    /// `<root>/video/<id>.y4m`
    pub fn video_path(&self, media_root: &Path) -> PathBuf {
        media_root.join("video").join(format!("{}.y4m", self.sequence_id))
    }

    /// `<root>/audio/<id>.wav`
    pub fn audio_path(&self, media_root: &Path) -> PathBuf {
        media_root.join("audio").join(format!("{}.wav", self.sequence_id))
    }
}

/// Parse a manifest from JSON text. `context` names the source in errors.
pub fn parse_manifest(text: &str, context: &str) -> Result<Vec<SequenceManifestEntry>> {
    if text.trim().is_empty() {
        return Err(Error::parse(context, "empty manifest"));
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let entries: Vec<SequenceManifestEntry> = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::parse(
            format!("{context}:{}:{} at {}", inner.line(), inner.column(), e.path()),
            inner.to_string(),
        )
    })?;
    if entries.is_empty() {
        return Err(Error::parse(context, "empty manifest"));
    }
    let mut seen = HashSet::new();
    for entry in &entries {
        entry.validate()?;
        if !seen.insert(entry.sequence_id.as_str()) {
            return Err(Error::Data(format!("duplicate sequence_id {:?}", entry.sequence_id)));
        }
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SequenceManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[SequenceManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(entries).map_err(|e| Error::Data(format!("serializing manifest: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
