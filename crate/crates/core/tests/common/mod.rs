#![allow(dead_code)]

use std::collections::HashMap;

use avqa_core::erp::{cos_latitude_prior, partition_erp};
use avqa_core::manifest::{load_manifest, load_scores};
use avqa_core::model::{load_sample, FusionMode, Model, ModelConfig, SampleInput, TrainSample};
use avqa_core::nn::{ParamStore, Tensor};
use avqa_core::subjective::{process_scores, ScreeningParams};
use avqa_core::synth::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use tempfile::TempDir;

/// d_model 8, two fusion blocks, two bands, two frames.
pub fn tiny_config(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        bands: 2,
        band_channels: vec![3, 4, 4],
        d_model: 8,
        fusion_blocks: 2,
        heads: 2,
        ffn_mult: 2,
        audio_channels: vec![2, 3, 3, 4],
        frames_per_clip: 2,
        fusion_mode: mode,
        seed: 11,
        epochs: 3,
        batch_size: 2,
        ..ModelConfig::default()
    }
}

pub fn random_tensor(rng: &mut Xoshiro256PlusPlus, shape: &[usize], amp: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
}

pub fn random_input(cfg: &ModelConfig, patches: usize, seed: u64) -> SampleInput {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let t = cfg.frames_per_clip;
    let bands = (0..cfg.bands)
        .map(|_| random_tensor(&mut rng, &[t, 1, 16, 32], 0.5))
        .collect();
    let prior = cos_latitude_prior(&partition_erp(32, cfg.bands).unwrap());
    let audio = random_tensor(&mut rng, &[patches, 1, 96, 64], 3.0);
    SampleInput { bands, prior, audio }
}

/// Biases, norms and band logits start at constants; move every parameter
/// off its initial value so all paths are exercised.
pub fn perturb_all(store: &mut ParamStore, seed: u64, amp: f64) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-amp..amp);
        }
    }
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    buf
}

/// The generated desk-scale corpus with every sequence loaded for training.
pub struct Fixture {
    pub dir: TempDir,
    pub samples: Vec<TrainSample>,
}

pub fn fixture(cfg: &ModelConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &SynthConfig::default()).unwrap();
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    let (_, mos) = process_scores(
        &load_scores(dir.path().join("scores.csv")).unwrap(),
        &ScreeningParams::default(),
    )
    .unwrap();
    let mos: HashMap<String, f64> = mos.into_iter().map(|m| (m.sequence_id, m.mos)).collect();
    let samples = manifest
        .iter()
        .map(|e| TrainSample {
            id: e.sequence_id.clone(),
            input: load_sample(e, dir.path(), cfg).unwrap(),
            target: mos[&e.sequence_id] / 100.0,
        })
        .collect();
    Fixture { dir, samples }
}
