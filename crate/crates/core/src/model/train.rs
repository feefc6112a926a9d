use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::input::SampleInput;
use super::net::{Network, Output};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::params::init_rng;
use crate::nn::{adam_step, AdamState, ParamStore, Tensor};
use crate::par;

const META_CONFIG: &str = "meta.config_json";
const META_CROSS: &str = "meta.cross_attention_blocks";

/// A network together with its parameters.
pub struct Model {
    pub store: ParamStore,
    pub net: Network,
}

impl Model {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::new(config, &mut store)?;
        Ok(Model { store, net })
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn forward(&self, input: &SampleInput) -> Result<Output> {
        Ok(self.net.forward(&self.store, input)?.0)
    }

    /// Quality score on the `[0, 100]` scale.
    pub fn predict(&self, input: &SampleInput) -> Result<f64> {
        Ok(100.0 * self.forward(input)?.score)
    }

    /// Serialize parameters plus the config (as UTF-8 JSON bytes stored one
    /// per element) into an `AVQC` checkpoint.
    pub fn write_checkpoint(&self, out: impl Write) -> Result<()> {
        let json = serde_json::to_vec(self.config()).map_err(|e| Error::Invalid(e.to_string()))?;
        let cfg = Tensor::new(vec![json.len()], json.iter().map(|&b| f64::from(b)).collect())?;
        let cross: Vec<f64> = self
            .config()
            .cross_attention_blocks()
            .iter()
            .map(|&b| b as f64)
            .collect();
        let cross = Tensor::new(vec![cross.len()], cross)?;
        let entries = [(META_CONFIG, &cfg), (META_CROSS, &cross)]
            .into_iter()
            .chain(self.store.iter().map(|p| (p.name.as_str(), &p.value)));
        write_checkpoint(entries, out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(input: impl Read) -> Result<Self> {
        let entries = read_checkpoint(input)?;
        let cfg_bytes: Vec<u8> = entries
            .iter()
            .find(|(n, _)| n == META_CONFIG)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks {META_CONFIG}")))?
            .1
            .data()
            .iter()
            .map(|&v| v as u8)
            .collect();
        let config: ModelConfig =
            serde_json::from_slice(&cfg_bytes).map_err(|e| Error::parse("checkpoint config", e.to_string()))?;
        let mut model = Model::new(&config)?;
        let mut seen = 0;
        for (name, t) in &entries {
            if name.starts_with("meta.") {
                continue;
            }
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::Data(format!("checkpoint/config mismatch: unknown tensor {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "checkpoint/config mismatch: {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::Data(format!(
                "checkpoint/config mismatch: {seen} of {} parameters present",
                model.store.len()
            )));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

/// One training example; `target` is MOS / 100.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub input: SampleInput,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSummary {
    /// Mean batch loss per optimizer step.
    pub step_losses: Vec<f64>,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Adam on the squared error between the sigmoid output and the target.
/// Per-sample gradients are computed in parallel and summed in batch order.
/// `log` receives a `step,loss` CSV.
pub fn train(model: &mut Model, samples: &[TrainSample], mut log: Option<&mut dyn Write>) -> Result<TrainSummary> {
    if samples.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.target)) {
        return Err(Error::Data(format!("{}: target {} outside [0, 1]", s.id, s.target)));
    }
    let cfg = model.config().clone();
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut rng = init_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut summary = TrainSummary::default();
    let io = |e| Error::io("<train log>", e);
    if let Some(w) = log.as_mut() {
        writeln!(w, "step,loss").map_err(io)?;
    }
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let net = &model.net;
            let store = &model.store;
            let results = par::try_map(batch, |&i| {
                net.loss_and_grad(store, &samples[i].input, samples[i].target)
            })?;
            let mut grads = model.store.zero_grads();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                grads.add_assign(g);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            loss *= scale;
            model.store.set_grads(grads)?;
            adam_step(&mut model.store, &mut adam)?;
            if model.store.iter().any(|p| !p.value.is_finite()) {
                return Err(Error::NonFinite(format!("parameters after step {}", adam.step)));
            }
            epoch_loss += loss * batch.len() as f64;
            summary.step_losses.push(loss);
            if let Some(w) = log.as_mut() {
                writeln!(w, "{},{loss:.10e}", adam.step).map_err(io)?;
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        log::info!("epoch {} loss {mean:.6e}", epoch + 1);
        summary.epoch_losses.push(mean);
    }
    model.store.clear_grads();
    Ok(summary)
}
