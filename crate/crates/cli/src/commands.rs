use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use avqa_core::audiofe::{clip_log_mel, save_features, FrontEndConfig};
use avqa_core::hm::{hm_stats, load_hm, write_summary_csv};
use avqa_core::manifest::{
    assign_split, check_split, load_manifest, load_scores, load_split_csv, load_wav, load_y4m, write_split_csv,
    SequenceManifestEntry, Split,
};
use avqa_core::metrics::{evaluate, write_report_csv};
use avqa_core::model::{load_sample, train, Model, TrainSample};
use avqa_core::siti::{summarize_siti, write_siti_csv};
use avqa_core::subjective::{process_scores, write_mos_csv, ScreeningParams};
use avqa_core::synth::{generate, SynthConfig};
use avqa_core::{par, Error};

use crate::config::{ConfigError, Paths, RunConfig, SplitConfig};

/// Lines echoed to the log and written to `<output>/logs/<command>.log`.
pub struct RunLog {
    path: PathBuf,
    lines: Vec<String>,
}

impl RunLog {
    pub fn new(cfg: &RunConfig, command: &str, overrides: &[String]) -> Self {
        let mut log = RunLog {
            path: cfg.paths.output_dir.join("logs").join(format!("{command}.log")),
            lines: Vec::new(),
        };
        log.line(format!("command {command}"));
        for o in overrides {
            log.line(format!("override {o}"));
        }
        log
    }

    pub fn line(&mut self, s: String) {
        log::info!("{s}");
        self.lines.push(s);
    }

    pub fn finish(self) -> Result<()> {
        write_output(&self.path, (self.lines.join("\n") + "\n").as_bytes())
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output_dir.join(name)
}

fn manifest(cfg: &RunConfig) -> Result<Vec<SequenceManifestEntry>> {
    let entries = load_manifest(&cfg.paths.manifest)?;
    for e in &entries {
        e.validate()?;
    }
    Ok(entries)
}

pub fn process_scores_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let records = load_scores(&cfg.paths.scores)?;
    let (screening, mos) = process_scores(&records, &ScreeningParams::default())
        .with_context(|| format!("processing {}", cfg.paths.scores.display()))?;
    let mut buf = Vec::new();
    write_mos_csv(&mos, &mut buf)?;
    write_output(&out(cfg, "mos.csv"), &buf)?;

    let mut text = String::from("subject_id,p_count,q_count,n_ratings,rejected\n");
    for s in &screening {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.subject_id, s.p_count, s.q_count, s.n_ratings, s.rejected
        ));
    }
    write_output(&out(cfg, "screening.csv"), text.as_bytes())?;

    let rejected: Vec<&str> = screening
        .iter()
        .filter(|s| s.rejected)
        .map(|s| s.subject_id.as_str())
        .collect();
    let summary = format!(
        "rejected {} of {} subjects{}{}",
        rejected.len(),
        screening.len(),
        if rejected.is_empty() { "" } else { ": " },
        rejected.join(" ")
    );
    println!("{summary}");
    log.line(summary);
    let thin = mos.iter().filter(|m| !m.is_sufficient()).count();
    log.line(format!(
        "mos for {} sequences ({thin} below the valid-rating minimum)",
        mos.len()
    ));
    Ok(())
}

pub fn siti_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let entries = manifest(cfg)?;
    let results = par::try_map(&entries, |e| -> Result<_> {
        let seq = load_y4m(e.video_path(&cfg.paths.media_root))?;
        summarize_siti(&seq).with_context(|| e.sequence_id.clone())
    })?;
    let mut buf = Vec::new();
    write_siti_csv(entries.iter().map(|e| e.sequence_id.as_str()).zip(&results), &mut buf)?;
    write_output(&out(cfg, "siti.csv"), &buf)?;
    log.line(format!("si/ti for {} sequences", entries.len()));
    Ok(())
}

pub fn hm_stats_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let root = &cfg.paths.hm_root;
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .csv traces under {}", root.display())).into());
    }
    let summaries = par::try_map(&files, |p| -> Result<_> {
        hm_stats(&load_hm(p)?).with_context(|| p.display().to_string())
    })?;
    let names: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    let mut buf = Vec::new();
    write_summary_csv(names.iter().map(String::as_str).zip(&summaries), &mut buf)?;
    write_output(&out(cfg, "hm_stats.csv"), &buf)?;
    log.line(format!("head-movement summaries for {} traces", files.len()));
    Ok(())
}

pub fn split_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let ids: Vec<String> = manifest(cfg)?.into_iter().map(|e| e.sequence_id).collect();
    let a = assign_split(&ids, cfg.split.ratio, cfg.split.seed)?;
    let mut buf = Vec::new();
    write_split_csv(&a, &mut buf)?;
    write_output(&out(cfg, "split.csv"), &buf)?;
    let test = a.iter().filter(|(_, s)| *s == Split::Test).count();
    let summary = format!("split {} train / {test} test (seed {})", a.len() - test, cfg.split.seed);
    println!("{summary}");
    log.line(summary);
    Ok(())
}

pub fn extract_features_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let entries = manifest(cfg)?;
    let fe = FrontEndConfig::default();
    let dir = out(cfg, "features");
    par::try_map(&entries, |e| -> Result<()> {
        let clip = load_wav(e.audio_path(&cfg.paths.media_root))?;
        let mel = clip_log_mel(&clip, &fe).with_context(|| e.sequence_id.clone())?;
        fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
        save_features(
            dir.join(format!("{}.avqf", e.sequence_id)),
            &[mel.num_frames, mel.num_mel],
            &mel.values,
        )?;
        Ok(())
    })?;
    log.line(format!("log-mel features for {} sequences", entries.len()));
    Ok(())
}

/// Split assignment from `<output>/split.csv` if present, else the manifest.
fn assignments(cfg: &RunConfig, entries: &[SequenceManifestEntry]) -> Result<HashMap<String, Split>> {
    let path = out(cfg, "split.csv");
    let a = if path.exists() {
        load_split_csv(&path)?
    } else {
        entries.iter().map(|e| (e.sequence_id.clone(), e.split)).collect()
    };
    check_split(&a)?;
    Ok(a.into_iter().collect())
}

fn mos_table(cfg: &RunConfig) -> Result<HashMap<String, f64>> {
    let (_, mos) = process_scores(&load_scores(&cfg.paths.scores)?, &ScreeningParams::default())?;
    Ok(mos.into_iter().map(|m| (m.sequence_id, m.mos)).collect())
}

fn split_entries(
    cfg: &RunConfig,
    entries: Vec<SequenceManifestEntry>,
    split: Split,
) -> Result<Vec<SequenceManifestEntry>> {
    let a = assignments(cfg, &entries)?;
    let chosen: Vec<_> = entries
        .into_iter()
        .filter(|e| a.get(&e.sequence_id) == Some(&split))
        .collect();
    if chosen.is_empty() {
        return Err(Error::Data(format!("empty {split} split")).into());
    }
    Ok(chosen)
}

fn with_mos(entries: &[SequenceManifestEntry], mos: &HashMap<String, f64>) -> Result<Vec<f64>> {
    entries
        .iter()
        .map(|e| {
            mos.get(&e.sequence_id)
                .copied()
                .ok_or_else(|| Error::Data(format!("{}: no MOS", e.sequence_id)).into())
        })
        .collect()
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| out(cfg, "model.avqc"), Path::to_path_buf)
}

pub fn train_cmd(cfg: &RunConfig, log: &mut RunLog) -> Result<()> {
    let entries = split_entries(cfg, manifest(cfg)?, Split::Train)?;
    let targets = with_mos(&entries, &mos_table(cfg)?)?;
    let inputs = par::try_map(&entries, |e| load_sample(e, &cfg.paths.media_root, &cfg.model))?;
    let samples: Vec<TrainSample> = entries
        .iter()
        .zip(inputs)
        .zip(&targets)
        .map(|((e, input), &m)| TrainSample {
            id: e.sequence_id.clone(),
            input,
            target: m / 100.0,
        })
        .collect();
    let mut model = Model::new(&cfg.model)?;
    let mut train_log = Vec::new();
    let summary = train(&mut model, &samples, Some(&mut train_log))?;
    write_output(&out(cfg, "train_log.csv"), &train_log)?;
    let path = out(cfg, "model.avqc");
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf)?;
    write_output(&path, &buf)?;
    for (i, l) in summary.epoch_losses.iter().enumerate() {
        log.line(format!("epoch {} loss {l:.6e}", i + 1));
    }
    let msg = format!(
        "trained on {} sequences for {} steps; final loss {:.6e}; checkpoint {}",
        samples.len(),
        summary.step_losses.len(),
        summary.step_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    println!("{msg}");
    log.line(msg);
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Data(format!("missing checkpoint {}", path.display())).into());
    }
    Ok(Model::load(path)?)
}

pub fn evaluate_cmd(cfg: &RunConfig, split: Split, checkpoint: Option<&Path>, log: &mut RunLog) -> Result<()> {
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let entries = split_entries(cfg, manifest(cfg)?, split)?;
    let mos = with_mos(&entries, &mos_table(cfg)?)?;
    let preds = par::try_map(&entries, |e| -> Result<f64> {
        Ok(model.predict(&load_sample(e, &cfg.paths.media_root, model.config())?)?)
    })?;
    let report = evaluate(&preds, &mos)?;
    let mut text = String::from("sequence_id,mos,prediction\n");
    for ((e, m), p) in entries.iter().zip(&mos).zip(&preds) {
        text.push_str(&format!("{},{m},{p}\n", e.sequence_id));
    }
    write_output(&out(cfg, &format!("predictions_{split}.csv")), text.as_bytes())?;
    let mut buf = Vec::new();
    write_report_csv(&report, &mut buf)?;
    write_output(&out(cfg, &format!("report_{split}.csv")), &buf)?;
    let msg = format!(
        "{split}: n={} plcc={:.4} srocc={:.4} krocc={:.4} rmse={:.4}",
        report.n, report.plcc, report.srocc, report.krocc, report.rmse
    );
    println!("{msg}");
    log.line(msg);
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig, sequence: &str, checkpoint: Option<&Path>, log: &mut RunLog) -> Result<()> {
    let entry = manifest(cfg)?
        .into_iter()
        .find(|e| e.sequence_id == sequence)
        .ok_or_else(|| anyhow!(ConfigError(format!("sequence {sequence} not in manifest"))))?;
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let score = model.predict(&load_sample(&entry, &cfg.paths.media_root, model.config())?)?;
    let msg = format!("{sequence},{score:.6}");
    println!("{msg}");
    log.line(format!("predicted {msg}"));
    Ok(())
}

/// Generate the synthetic corpus plus a ready-to-use `config.toml`.
pub fn synth_fixture_cmd(dir: &Path, seed: u64) -> Result<()> {
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let seqs = generate(dir, &synth)?;
    let cfg = RunConfig {
        paths: Paths {
            manifest: "manifest.json".into(),
            media_root: ".".into(),
            scores: "scores.csv".into(),
            hm_root: "hm".into(),
            output_dir: "out".into(),
        },
        split: SplitConfig {
            seed,
            ..SplitConfig::default()
        },
        model: avqa_core::model::ModelConfig {
            seed,
            ..Default::default()
        },
    };
    let text = toml::to_string_pretty(&cfg).map_err(|e| anyhow!("serializing config: {e}"))?;
    write_output(&dir.join("config.toml"), text.as_bytes())?;
    println!("wrote {} sequences and config.toml to {}", seqs.len(), dir.display());
    Ok(())
}
