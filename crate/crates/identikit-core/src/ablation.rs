//! Ablation harness: trains pipeline variants (MTD pretraining config x
//! flow stage), samples images conditioned on 1/3 input images, and scores
//! identity similarity and pose error against the synthetic ground truth.
//! Reproduces the paper-style comparisons at trend level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{id_similarity, pose_error, PoseRegressor, Probe};
use crate::flow::FlowDecoder;
use crate::params::Params;
use crate::rng;
use crate::scalar::Scalar;
use crate::synthetic::IdentityRecord;
use crate::trainer::{train_stage, Stage, TrainConfig, Trained};

/// One grid cell: an optional MTD pretraining stage feeding a flow stage.
/// `seeds` replicate the whole pipeline for paired comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub name: String,
    pub mtd: Option<TrainConfig>,
    pub flow: TrainConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Episodes scored per (cell, seed, input count).
    pub n_episodes: usize,
    /// Conditioning set sizes to report (the tables' 1-image / 3-image).
    pub input_counts: Vec<usize>,
    /// Euler steps per sampled image.
    pub sample_steps: usize,
    pub eval_seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            n_episodes: 32,
            input_counts: vec![1, 3],
            sample_steps: 20,
            eval_seed: 9000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub name: String,
    pub cells: Vec<PipelineSpec>,
    pub eval: EvalSpec,
}

/// Mean metric at one conditioning size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputCountStats {
    pub inputs: usize,
    pub mean_id_similarity: f64,
    pub var_id_similarity: f64,
    pub mean_pose_error: Option<f64>,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    pub by_inputs: Vec<InputCountStats>,
    /// Set when the cell diverged; metrics absent, run continued.
    pub failed: Option<String>,
    pub mtd_checkpoint_hash: Option<String>,
    pub flow_checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub grid: String,
    pub results: Vec<CellResult>,
}

impl AblationReport {
    /// One CSV row per (cell, seed); metric columns per input count.
    pub fn to_csv(&self) -> String {
        let mut counts: Vec<usize> = Vec::new();
        for r in &self.results {
            for s in &r.by_inputs {
                if !counts.contains(&s.inputs) {
                    counts.push(s.inputs);
                }
            }
        }
        counts.sort_unstable();
        let mut out = String::from("cell,seed,status");
        for c in &counts {
            out.push_str(&format!(",id_sim_{c},pose_err_{c}"));
        }
        out.push('\n');
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{}",
                r.cell,
                r.seed,
                if r.failed.is_some() { "failed" } else { "ok" }
            ));
            for c in &counts {
                match r.by_inputs.iter().find(|s| s.inputs == *c) {
                    Some(s) => {
                        out.push_str(&format!(",{:.6}", s.mean_id_similarity));
                        match s.mean_pose_error {
                            Some(p) => out.push_str(&format!(",{p:.4}")),
                            None => out.push(','),
                        }
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Mean id-similarity across seeds for one cell and input count.
    pub fn cell_mean(&self, cell: &str, inputs: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.cell == cell && r.failed.is_none())
            .filter_map(|r| {
                r.by_inputs
                    .iter()
                    .find(|s| s.inputs == inputs)
                    .map(|s| s.mean_id_similarity)
            })
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Per-seed id-similarity values for paired comparisons.
    pub fn cell_values(&self, cell: &str, inputs: usize) -> Vec<(u64, f64)> {
        self.results
            .iter()
            .filter(|r| r.cell == cell && r.failed.is_none())
            .filter_map(|r| {
                r.by_inputs
                    .iter()
                    .find(|s| s.inputs == inputs)
                    .map(|s| (r.seed, s.mean_id_similarity))
            })
            .collect()
    }
}

/// Everything needed to run generation-side evaluation.
pub struct FlowModelView<'a, F: Scalar> {
    pub params: &'a Params<F>,
    pub encoder: &'a Encoder,
    pub flow: &'a FlowDecoder,
}

impl<'a, F: Scalar> FlowModelView<'a, F> {
    pub fn of_trained(t: &'a Trained<F>) -> Result<Self> {
        Ok(FlowModelView {
            params: &t.params,
            encoder: &t.encoder,
            flow: t
                .flow
                .as_ref()
                .ok_or(Error::Config("trained model has no flow decoder".into()))?,
        })
    }

    pub fn of_loaded(m: &'a crate::trainer::LoadedModel<F>) -> Result<Self> {
        Ok(FlowModelView {
            params: &m.params,
            encoder: &m.encoder,
            flow: m
                .flow
                .as_ref()
                .ok_or(Error::Config("checkpoint has no flow decoder".into()))?,
        })
    }
}

/// Sample one image per evaluation episode and score it against the
/// episode identity's reference renders.
pub fn eval_generation<F: Scalar>(
    model: &FlowModelView<F>,
    eval_set: &[IdentityRecord],
    probe: &Probe<F>,
    pose: Option<&PoseRegressor<F>>,
    inputs: usize,
    n_episodes: usize,
    sample_steps: usize,
    eval_seed: u64,
) -> Result<InputCountStats> {
    if eval_set.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty"));
    }
    let mut sims = Vec::with_capacity(n_episodes);
    let mut poses = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let rec = &eval_set[e % eval_set.len()];
        let mut ep_rng = rng::stream(eval_seed.wrapping_add(e as u64), rng::lane::EVAL);
        use rand::Rng;
        if rec.faces.len() < inputs {
            return Err(Error::Config(format!(
                "identity {} has {} faces, need {inputs} inputs",
                rec.identity_id,
                rec.faces.len()
            )));
        }
        let mut order: Vec<usize> = (0..rec.faces.len()).collect();
        for i in 0..inputs {
            let j = ep_rng.random_range(i..order.len());
            order.swap(i, j);
        }
        let chosen: Vec<&crate::synthetic::RenderedFace> =
            order[..inputs].iter().map(|&i| &rec.faces[i]).collect();

        let rep = model.encoder.encode_set(model.params, &chosen)?;
        let noise_seed: u64 = ep_rng.random();
        let generated = model
            .flow
            .sample_image(model.params, &rep.tokens, sample_steps, noise_seed)?;

        let refs: Vec<&crate::raster::Rgb8Image> = rec.faces.iter().map(|f| &f.image).collect();
        sims.push(id_similarity(&generated, &refs, probe)?);

        if let Some(reg) = pose {
            let target = &rec.faces[order[inputs % order.len()]];
            let est = reg.estimate_float(&generated)?;
            poses.push(pose_error(est, target.params.pose()));
        }
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(InputCountStats {
        inputs,
        mean_id_similarity: mean,
        var_id_similarity: var,
        mean_pose_error: if poses.is_empty() {
            None
        } else {
            Some(poses.iter().sum::<f64>() / poses.len() as f64)
        },
        n_episodes: sims.len(),
    })
}

/// Train one pipeline cell at one seed and return the flow-stage model.
/// Intermediate checkpoints land in `work_dir` (hashes recorded).
pub fn run_cell<F: Scalar>(
    spec: &PipelineSpec,
    seed: u64,
    train_set: &[IdentityRecord],
    work_dir: &Path,
) -> Result<(Trained<F>, Option<String>, Option<String>)> {
    let mut mtd_hash = None;
    let mut flow_cfg = spec.flow.clone();
    flow_cfg.seed = seed;

    if let Some(mtd_spec) = &spec.mtd {
        let mut mtd_cfg = mtd_spec.clone();
        mtd_cfg.seed = seed;
        let trained = train_stage::<F>(&mtd_cfg, train_set, None)?;
        let path = work_dir.join(format!("{}_seed{}_mtd.ckpt", spec.name, seed));
        trained.save(&path)?;
        mtd_hash = Some(crate::checkpoint::file_hash(&path)?);
        flow_cfg.init_checkpoint = Some(path);
    } else {
        flow_cfg.init_checkpoint = None;
    }

    let trained = train_stage::<F>(&flow_cfg, train_set, None)?;
    let path = work_dir.join(format!("{}_seed{}_flow.ckpt", spec.name, seed));
    trained.save(&path)?;
    let flow_hash = Some(crate::checkpoint::file_hash(&path)?);
    Ok((trained, mtd_hash, flow_hash))
}

/// Run the whole grid. Divergence (non-finite loss) marks the cell failed
/// and the run continues.
pub fn run_ablation<F: Scalar>(
    grid: &AblationGrid,
    train_set: &[IdentityRecord],
    eval_set: &[IdentityRecord],
    probe: &Probe<F>,
    pose: Option<&PoseRegressor<F>>,
    work_dir: &Path,
    mut progress: Option<&mut dyn FnMut(&str)>,
) -> Result<AblationReport> {
    std::fs::create_dir_all(work_dir)?;
    let mut results = Vec::new();
    for spec in &grid.cells {
        for &seed in &spec.seeds {
            if let Some(cb) = progress.as_deref_mut() {
                cb(&format!("cell {} seed {seed}", spec.name));
            }
            match run_cell::<F>(spec, seed, train_set, work_dir) {
                Ok((trained, mtd_hash, flow_hash)) => {
                    let view = FlowModelView::of_trained(&trained)?;
                    let mut by_inputs = Vec::new();
                    for &inputs in &grid.eval.input_counts {
                        by_inputs.push(eval_generation(
                            &view,
                            eval_set,
                            probe,
                            pose,
                            inputs,
                            grid.eval.n_episodes,
                            grid.eval.sample_steps,
                            grid.eval.eval_seed,
                        )?);
                    }
                    results.push(CellResult {
                        cell: spec.name.clone(),
                        seed,
                        by_inputs,
                        failed: None,
                        mtd_checkpoint_hash: mtd_hash,
                        flow_checkpoint_hash: flow_hash,
                    });
                }
                Err(Error::NonFiniteLoss { step, loss }) => {
                    results.push(CellResult {
                        cell: spec.name.clone(),
                        seed,
                        by_inputs: Vec::new(),
                        failed: Some(format!("non-finite loss {loss} at step {step}")),
                        mtd_checkpoint_hash: None,
                        flow_checkpoint_hash: None,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(AblationReport {
        grid: grid.name.clone(),
        results,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoreInputsReport {
    pub by_inputs: Vec<InputCountStats>,
    /// Paired probe: one input vs the same input duplicated three times.
    pub duplicate_single_mean: f64,
    pub duplicate_tripled_mean: f64,
    pub n_episodes: usize,
}

/// Mean ID similarity at growing conditioning-set sizes, plus the
/// duplicate-idempotence probe (outcome reported either way).
pub fn more_inputs_monotonicity<F: Scalar>(
    model: &FlowModelView<F>,
    eval_set: &[IdentityRecord],
    probe: &Probe<F>,
    input_counts: &[usize],
    n_episodes: usize,
    sample_steps: usize,
    eval_seed: u64,
) -> Result<MoreInputsReport> {
    let mut by_inputs = Vec::new();
    for &inputs in input_counts {
        by_inputs.push(eval_generation(
            model,
            eval_set,
            probe,
            None,
            inputs,
            n_episodes,
            sample_steps,
            eval_seed,
        )?);
    }

    let mut single = Vec::new();
    let mut tripled = Vec::new();
    for e in 0..n_episodes {
        let rec = &eval_set[e % eval_set.len()];
        let mut ep_rng = rng::stream(eval_seed.wrapping_add(7_000_000 + e as u64), rng::lane::EVAL);
        use rand::Rng;
        let face = &rec.faces[ep_rng.random_range(0..rec.faces.len())];
        let refs: Vec<&crate::raster::Rgb8Image> = rec.faces.iter().map(|f| &f.image).collect();
        let noise_seed: u64 = ep_rng.random();

        let rep1 = model.encoder.encode_set(model.params, &[face])?;
        let gen1 = model
            .flow
            .sample_image(model.params, &rep1.tokens, sample_steps, noise_seed)?;
        single.push(id_similarity(&gen1, &refs, probe)?);

        let rep3 = model.encoder.encode_set(model.params, &[face, face, face])?;
        let gen3 = model
            .flow
            .sample_image(model.params, &rep3.tokens, sample_steps, noise_seed)?;
        tripled.push(id_similarity(&gen3, &refs, probe)?);
    }
    Ok(MoreInputsReport {
        by_inputs,
        duplicate_single_mean: single.iter().sum::<f64>() / single.len().max(1) as f64,
        duplicate_tripled_mean: tripled.iter().sum::<f64>() / tripled.len().max(1) as f64,
        n_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_cell_seed() {
        let report = AblationReport {
            grid: "g".into(),
            results: vec![
                CellResult {
                    cell: "a".into(),
                    seed: 1,
                    by_inputs: vec![InputCountStats {
                        inputs: 1,
                        mean_id_similarity: 0.5,
                        var_id_similarity: 0.01,
                        mean_pose_error: Some(3.0),
                        n_episodes: 8,
                    }],
                    failed: None,
                    mtd_checkpoint_hash: None,
                    flow_checkpoint_hash: None,
                },
                CellResult {
                    cell: "a".into(),
                    seed: 2,
                    by_inputs: vec![],
                    failed: Some("non-finite loss".into()),
                    mtd_checkpoint_hash: None,
                    flow_checkpoint_hash: None,
                },
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("cell,seed,status"));
        assert!(lines[1].contains("ok"));
        assert!(lines[2].contains("failed"));
        assert_eq!(report.cell_mean("a", 1), Some(0.5));
        assert_eq!(report.cell_values("a", 1), vec![(1, 0.5)]);
    }
}
