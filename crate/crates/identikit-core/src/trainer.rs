//! Two-stage training orchestration.
//!
//! Stage one trains encoder + masked decoder, stage two trains encoder +
//! flow decoder (optionally warm-started from the stage-one encoder).
//! Step t's batch is a pure function of (seed, t), which is what makes
//! resume-from-checkpoint replay the exact trajectory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest, OptimizerInfo};
use crate::encoder::{Encoder, EncoderConfig};
use crate::episode::{sample_episode, EpisodeConfig};
use crate::error::{Error, Result};
use crate::flow::{face_to_flow_tokens, make_flow_sample, FlowConfig, FlowDecoder, FlowSample};
use crate::mtd::{sample_mask, MtdConfig, MtdDecoder};
use crate::params::{AdamW, Params, Session};
use crate::rng;
use crate::scalar::Scalar;
use crate::synthetic::IdentityRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mtd,
    Flow,
}

impl Stage {
    pub fn kind(&self) -> &'static str {
        match self {
            Stage::Mtd => "mtd",
            Stage::Flow => "flow",
        }
    }
}

/// Model architecture for both stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mtd: MtdConfig,
    pub flow: FlowConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            mtd: MtdConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Total optimization steps to reach (resume continues toward this).
    pub steps: usize,
    pub lr: f64,
    pub batch_episodes: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
    /// Token mask ratio for the masked-decoder stage.
    pub mask_ratio: f64,
    /// Warm-start / resume source.
    pub init_checkpoint: Option<PathBuf>,
    /// Keep encoder weights fixed during the flow stage.
    pub freeze_encoder: bool,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn default_mtd() -> Self {
        TrainConfig {
            stage: Stage::Mtd,
            steps: 2000,
            lr: 1e-4,
            batch_episodes: 4,
            seed: 0,
            episode: EpisodeConfig::default(),
            mask_ratio: 0.95,
            init_checkpoint: None,
            freeze_encoder: false,
            model: ModelConfig::default(),
        }
    }

    pub fn default_flow() -> Self {
        TrainConfig {
            stage: Stage::Flow,
            steps: 1000,
            ..Self::default_mtd()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_episodes == 0 {
            return Err(Error::Config("batch_episodes must be at least 1".into()));
        }
        self.model.encoder.validate()?;
        self.model.mtd.validate()?;
        self.model.flow.validate()?;
        Ok(())
    }

    /// Hash of the config with the data-order seed zeroed: two runs that
    /// differ only in seed share a config hash.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["seed"] = serde_json::json!(0);
        checkpoint::json_hash(&value)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Per-step records with monotonically increasing step numbers; written
/// incrementally as JSON lines by the CLI.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, rec: LogRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.step > last.step, "log steps must increase");
        }
        self.records.push(rec);
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// A trained stage: weights, optimizer state, and provenance manifest.
pub struct Trained<F: Scalar> {
    pub params: Params<F>,
    pub opt_step: usize,
    pub opt_state: IndexMap<String, ndarray::Array2<F>>,
    pub manifest: Manifest,
    pub log: TrainLog,
    pub encoder: Encoder,
    pub mtd: Option<MtdDecoder>,
    pub flow: Option<FlowDecoder>,
}

impl<F: Scalar> Trained<F> {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.opt_state, &self.manifest)
    }
}

/// Instantiate the module structs (and fresh parameters) for a stage.
pub fn build_stage<F: Scalar>(
    stage: Stage,
    model: &ModelConfig,
    seed: u64,
) -> Result<(Params<F>, Encoder, Option<MtdDecoder>, Option<FlowDecoder>)> {
    let mut params = Params::new();
    let mut init_rng = rng::stream(seed, rng::lane::INIT);
    let encoder = Encoder::init(&mut params, &mut init_rng, &model.encoder)?;
    let (mtd, flow) = match stage {
        Stage::Mtd => {
            let dec = MtdDecoder::init(
                &mut params,
                &mut init_rng,
                &model.mtd,
                model.encoder.image_size,
                model.encoder.channels,
                model.encoder.n_heads,
            )?;
            (Some(dec), None)
        }
        Stage::Flow => {
            let dec = FlowDecoder::init(
                &mut params,
                &mut init_rng,
                &model.flow,
                model.encoder.image_size,
                model.encoder.channels,
            )?;
            (None, Some(dec))
        }
    };
    Ok((params, encoder, mtd, flow))
}

/// Rebuild a trained model from a checkpoint (inference side).
pub struct LoadedModel<F: Scalar> {
    pub params: Params<F>,
    pub manifest: Manifest,
    pub encoder: Encoder,
    pub mtd: Option<MtdDecoder>,
    pub flow: Option<FlowDecoder>,
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<LoadedModel<F>> {
    let ckpt = checkpoint::load::<F>(path)?;
    let model: ModelConfig = serde_json::from_value(ckpt.manifest.model_config.clone())?;
    let stage = match ckpt.manifest.kind.as_str() {
        "mtd" => Stage::Mtd,
        "flow" => Stage::Flow,
        other => {
            return Err(Error::Checkpoint(format!(
                "checkpoint kind {other} is not a trainer stage"
            )))
        }
    };
    let (mut params, encoder, mtd, flow) = build_stage::<F>(stage, &model, ckpt.manifest.seed)?;
    let copied = params.load_matching(&ckpt.params);
    if copied.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint covers {} of {} parameters",
            copied.len(),
            params.len()
        )));
    }
    Ok(LoadedModel {
        params,
        manifest: ckpt.manifest,
        encoder,
        mtd,
        flow,
    })
}

/// Run one stage to `config.steps`. `on_step` sees every log record as it
/// is produced (the CLI streams these to the JSONL log).
pub fn train_stage<F: Scalar>(
    config: &TrainConfig,
    dataset: &[IdentityRecord],
    mut on_step: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<Trained<F>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty"));
    }

    let (mut params, encoder, mtd, flow) = build_stage::<F>(config.stage, &config.model, config.seed)?;
    let mut opt: AdamW<F> = AdamW::new(config.lr);
    let mut start_step = 0usize;
    let mut init_hash = None;

    if let Some(ckpt_path) = &config.init_checkpoint {
        if !ckpt_path.exists() {
            return Err(Error::Checkpoint(format!(
                "init checkpoint {} does not exist",
                ckpt_path.display()
            )));
        }
        let ckpt = checkpoint::load::<F>(ckpt_path)?;
        init_hash = Some(checkpoint::file_hash(ckpt_path)?);
        params.load_matching(&ckpt.params);
        if ckpt.manifest.kind == config.stage.kind() {
            // Same stage: resume optimizer state and step counter.
            opt.import_state(ckpt.manifest.step, &ckpt.opt_state);
            start_step = ckpt.manifest.step;
        }
    }

    let frozen = |name: &str| config.freeze_encoder && name.starts_with("encoder.");
    let mut log = TrainLog::default();
    let t0 = Instant::now();

    for step in start_step + 1..=config.steps {
        let mut step_rng = rng::step_stream(config.seed, rng::lane::DATA, step as u64);
        use rand::Rng;

        let mut sess = Session::with_freeze(&params, frozen);
        let mut episode_losses = Vec::with_capacity(config.batch_episodes);
        for _ in 0..config.batch_episodes {
            let rec = &dataset[step_rng.random_range(0..dataset.len())];
            let ep_seed: u64 = step_rng.random();
            let episode = sample_episode(rec, &config.episode, ep_seed)?;
            let rep = encoder.encode_g(&mut sess, &episode.inputs, None)?;

            let loss = match config.stage {
                Stage::Mtd => {
                    let dec = mtd.as_ref().unwrap();
                    let mut parts = Vec::with_capacity(episode.targets.len());
                    for target in &episode.targets {
                        let mask_seed: u64 = step_rng.random();
                        let mask = sample_mask(dec.n_tokens(), config.mask_ratio, mask_seed)?;
                        let pred = dec.decode_g(&mut sess, rep, target, &mask)?;
                        parts.push(dec.loss_g(&mut sess, pred, target)?);
                    }
                    let mut sum = parts[0];
                    for p in &parts[1..] {
                        sum = sess.graph.add(sum, *p);
                    }
                    sess.graph
                        .scale(sum, crate::scalar::s(1.0 / parts.len() as f64))
                }
                Stage::Flow => {
                    let dec = flow.as_ref().unwrap();
                    let samples: Vec<FlowSample<F>> = episode
                        .targets
                        .iter()
                        .map(|t| {
                            let noise_seed: u64 = step_rng.random();
                            let tokens = face_to_flow_tokens(t, dec.config.patch_size);
                            make_flow_sample(&tokens, noise_seed)
                        })
                        .collect();
                    dec.loss_g(&mut sess, &samples, rep)?
                }
            };
            episode_losses.push(loss);
        }

        let mut batch_loss = episode_losses[0];
        for l in &episode_losses[1..] {
            batch_loss = sess.graph.add(batch_loss, *l);
        }
        let batch_loss = sess
            .graph
            .scale(batch_loss, crate::scalar::s(1.0 / episode_losses.len() as f64));

        let loss_value = sess.graph.scalar_value(batch_loss).to_f64().unwrap();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: loss_value,
            });
        }

        let grads = sess.graph.backward(batch_loss);
        let named = sess.grads_by_name(&grads);
        opt.step(&mut params, &named);

        let rec = LogRecord {
            step,
            loss: loss_value,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(cb) = on_step.as_deref_mut() {
            cb(&rec);
        }
        log.push(rec);
    }

    let mut notes = IndexMap::new();
    notes.insert(
        "mtd_loss_normalization".to_string(),
        "foreground_pixel_count".to_string(),
    );
    let manifest = Manifest {
        kind: config.stage.kind().to_string(),
        step: config.steps,
        seed: config.seed,
        config_hash: config.config_hash(),
        train_config: serde_json::to_value(config)?,
        model_config: serde_json::to_value(&config.model)?,
        init_checkpoint_hash: init_hash,
        optimizer: OptimizerInfo {
            name: "adamw".into(),
            lr: config.lr,
            betas: (opt.beta1, opt.beta2),
            weight_decay: opt.weight_decay,
        },
        notes,
    };
    let (opt_step, opt_state) = opt.export_state();

    Ok(Trained {
        params,
        opt_step,
        opt_state,
        manifest,
        log,
        encoder,
        mtd,
        flow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_dataset_sized;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                queries: 4,
                channels: 16,
                n_cross_blocks: 1,
                n_self_blocks: 1,
                n_heads: 2,
                patch_size: 4,
                extractor_depth: 1,
                image_size: 16,
                max_images: 8,
            },
            mtd: MtdConfig {
                mask_ratio: 0.9,
                n_cross_blocks: 2,
                n_self_blocks: 1,
                patch_size: 4,
            },
            flow: FlowConfig {
                depth: 2,
                width: 16,
                n_heads: 2,
                patch_size: 4,
                time_embed_dim: 16,
            },
        }
    }

    fn tiny_config(stage: Stage, steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            stage,
            steps,
            lr: 1e-3,
            batch_episodes: 1,
            seed,
            episode: EpisodeConfig::default(),
            mask_ratio: 0.9,
            init_checkpoint: None,
            freeze_encoder: false,
            model: tiny_model(),
        }
    }

    fn params_bit_equal<F: Scalar>(a: &Params<F>, b: &Params<F>) -> bool {
        a.len() == b.len()
            && a.iter().all(|(name, arr)| {
                b.contains(name)
                    && arr
                        .iter()
                        .zip(b.get(name).iter())
                        .all(|(x, y)| x.to_f64().unwrap().to_bits() == y.to_f64().unwrap().to_bits())
            })
    }

    #[test]
    fn two_steps_twice_identical_weights() {
        let data = generate_dataset_sized(3, 8, 1, 16).unwrap();
        let cfg = tiny_config(Stage::Mtd, 2, 5);
        let a = train_stage::<f32>(&cfg, &data, None).unwrap();
        let b = train_stage::<f32>(&cfg, &data, None).unwrap();
        assert!(params_bit_equal(&a.params, &b.params));
    }

    #[test]
    fn seed_changes_trajectory_but_not_config_hash() {
        let cfg_a = tiny_config(Stage::Mtd, 2, 5);
        let cfg_b = tiny_config(Stage::Mtd, 2, 6);
        assert_eq!(cfg_a.config_hash(), cfg_b.config_hash());

        let data = generate_dataset_sized(3, 8, 1, 16).unwrap();
        let a = train_stage::<f32>(&cfg_a, &data, None).unwrap();
        let b = train_stage::<f32>(&cfg_b, &data, None).unwrap();
        assert!(!params_bit_equal(&a.params, &b.params));

        let mut cfg_c = tiny_config(Stage::Mtd, 3, 5);
        cfg_c.lr = 2e-3;
        assert_ne!(cfg_a.config_hash(), cfg_c.config_hash());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_forward_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mtd.ckpt");
        let data = generate_dataset_sized(3, 8, 2, 16).unwrap();
        let cfg = tiny_config(Stage::Mtd, 3, 9);
        let trained = train_stage::<f32>(&cfg, &data, None).unwrap();
        trained.save(&path).unwrap();

        let loaded = load_model::<f32>(&path).unwrap();
        assert!(params_bit_equal(&trained.params, &loaded.params));

        let faces: Vec<&crate::synthetic::RenderedFace> = data[0].faces[..2].iter().collect();
        let a = trained.encoder.encode_set(&trained.params, &faces).unwrap();
        let b = loaded.encoder.encode_set(&loaded.params, &faces).unwrap();
        assert_eq!(
            a.tokens.mapv(|v| v.to_bits()),
            b.tokens.mapv(|v| v.to_bits())
        );
    }

    #[test]
    fn resume_equivalence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ckpt");
        let data = generate_dataset_sized(3, 8, 3, 16).unwrap();

        let full = train_stage::<f32>(&tiny_config(Stage::Mtd, 8, 11), &data, None).unwrap();

        let half = train_stage::<f32>(&tiny_config(Stage::Mtd, 4, 11), &data, None).unwrap();
        half.save(&path).unwrap();
        let mut resume_cfg = tiny_config(Stage::Mtd, 8, 11);
        resume_cfg.init_checkpoint = Some(path);
        let resumed = train_stage::<f32>(&resume_cfg, &data, None).unwrap();

        for (name, a) in full.params.iter() {
            let b = resumed.params.get(name);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!(
                    (x - y).abs() <= 1e-6,
                    "{name}: {x} vs {y} after resume"
                );
            }
        }
    }

    #[test]
    fn missing_init_checkpoint_errors() {
        let data = generate_dataset_sized(2, 8, 4, 16).unwrap();
        let mut cfg = tiny_config(Stage::Flow, 2, 1);
        cfg.init_checkpoint = Some(PathBuf::from("/nonexistent/model.ckpt"));
        assert!(train_stage::<f32>(&cfg, &data, None).is_err());
    }

    #[test]
    fn flow_stage_warm_starts_from_mtd_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mtd.ckpt");
        let data = generate_dataset_sized(3, 8, 5, 16).unwrap();
        let mtd = train_stage::<f32>(&tiny_config(Stage::Mtd, 3, 13), &data, None).unwrap();
        mtd.save(&path).unwrap();

        let mut flow_cfg = tiny_config(Stage::Flow, 2, 14);
        flow_cfg.init_checkpoint = Some(path.clone());
        let flow = train_stage::<f32>(&flow_cfg, &data, None).unwrap();
        assert_eq!(
            flow.manifest.init_checkpoint_hash,
            Some(checkpoint::file_hash(&path).unwrap())
        );
        // Warm start is weights-only across stages: training restarts at 1.
        assert_eq!(flow.log.records.first().unwrap().step, 1);
    }

    #[test]
    fn frozen_encoder_stays_fixed_in_flow_stage() {
        let data = generate_dataset_sized(3, 8, 6, 16).unwrap();
        let mut cfg = tiny_config(Stage::Flow, 3, 15);
        cfg.freeze_encoder = true;
        let trained = train_stage::<f32>(&cfg, &data, None).unwrap();

        let (fresh, _, _, _) = build_stage::<f32>(Stage::Flow, &cfg.model, cfg.seed).unwrap();
        for (name, arr) in trained.params.iter() {
            if name.starts_with("encoder.") {
                assert_eq!(arr, fresh.get(name), "{name} moved despite freeze");
            }
        }
        let moved = trained
            .params
            .iter()
            .any(|(name, arr)| name.starts_with("flow.") && arr != fresh.get(name));
        assert!(moved, "flow decoder did not train");
    }

    #[test]
    fn mtd_smoke_loss_decreases_over_500_steps() {
        // 20-identity smoke run at a small config.
        let data = generate_dataset_sized(20, 8, 7, 16).unwrap();
        let mut cfg = tiny_config(Stage::Mtd, 500, 17);
        cfg.batch_episodes = 2;
        let trained = train_stage::<f32>(&cfg, &data, None).unwrap();
        let first: f64 = trained.log.records[..20]
            .iter()
            .map(|r| r.loss)
            .sum::<f64>()
            / 20.0;
        let last: f64 = trained.log.records[480..]
            .iter()
            .map(|r| r.loss)
            .sum::<f64>()
            / 20.0;
        assert!(
            last < first,
            "mean loss did not decrease: first {first:.4} last {last:.4}"
        );
    }
}
