//! `eval`: score a trained flow model on an evaluation dataset — ID
//! similarity at growing input counts (the more-inputs trend), the
//! duplicate-input probe, and pose error via the pose regressor.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::commands::{load_dataset_checked, obtain_probe};
use crate::config::{load_config, require_exists, resolve_run_dir, write_snapshot};
use crate::{usage, CliError};
use identikit_core::ablation::{more_inputs_monotonicity, FlowModelView};
use identikit_core::eval::{train_pose_regressor, PoseTrainConfig};
use identikit_core::trainer::load_model;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Probe checkpoint path ("" = train one in-run).
    pub probe: String,
    pub probe_seed: u64,
    pub episodes: usize,
    pub input_counts: Vec<usize>,
    pub sample_steps: usize,
    pub seed: u64,
    /// Also train a pose regressor and report pose error.
    pub pose_error: bool,
}

impl Default for Keys {
    fn default() -> Self {
        Keys {
            checkpoint: PathBuf::from("checkpoint.ckpt"),
            dataset: PathBuf::from("dataset"),
            probe: String::new(),
            probe_seed: 4100,
            episodes: 200,
            input_counts: vec![1, 2, 3],
            sample_steps: 20,
            seed: 0,
            pose_error: false,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Flow-stage checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation dataset directory
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Probe checkpoint (trains one when absent)
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Seed for in-run probe training
    #[arg(long)]
    probe_seed: Option<u64>,
    /// Episodes per input count
    #[arg(long)]
    episodes: Option<usize>,
    /// Conditioning sizes to evaluate (repeatable)
    #[arg(long)]
    input_counts: Option<Vec<usize>>,
    /// Euler steps per sample
    #[arg(long)]
    sample_steps: Option<usize>,
    /// Evaluation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Also report pose error via a pose regressor
    #[arg(long)]
    pose_error: bool,
    /// Parent for timestamped run directories
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
    /// Exact output directory (overrides --out-root)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut keys: Keys = match &args.config {
        Some(p) => load_config(p)?,
        None => Keys::default(),
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { keys.$f = v; } )* };
    }
    over!(checkpoint, probe_seed, episodes, input_counts, sample_steps, seed);
    if let Some(d) = &args.dataset {
        keys.dataset = d.clone();
    }
    if let Some(p) = &args.probe {
        keys.probe = p.display().to_string();
    }
    if args.pose_error {
        keys.pose_error = true;
    }

    require_exists(&keys.checkpoint, "checkpoint")?;
    let model = load_model::<f32>(&keys.checkpoint)
        .map_err(|e| usage(format!("checkpoint {}: {e}", keys.checkpoint.display())))?;
    let view = FlowModelView::of_loaded(&model)
        .map_err(|e| usage(format!("checkpoint: {e}")))?;
    let dataset = load_dataset_checked(&keys.dataset)?;
    let image_size = model.encoder.config.image_size;

    let dir = resolve_run_dir(args.run_dir, &args.out_root, "eval", keys.seed)?;
    write_snapshot(&dir, &keys)?;

    let probe_path = if keys.probe.is_empty() {
        None
    } else {
        Some(PathBuf::from(&keys.probe))
    };
    let probe = obtain_probe(probe_path.as_deref(), image_size, keys.probe_seed, &dir)?;

    let report = more_inputs_monotonicity(
        &view,
        &dataset,
        &probe,
        &keys.input_counts,
        keys.episodes,
        keys.sample_steps,
        keys.seed,
    )?;

    let mut out = serde_json::json!({
        "checkpoint": keys.checkpoint.display().to_string(),
        "probe_holdout_accuracy": probe.holdout_accuracy,
        "more_inputs": report,
    });

    if keys.pose_error {
        let reg_data = identikit_core::synthetic::generate_dataset_sized(
            30,
            20,
            keys.probe_seed ^ 0xABCD,
            image_size,
        )?;
        let reg = train_pose_regressor::<f32>(
            &reg_data,
            &PoseTrainConfig::quick(image_size, keys.probe_seed),
        )?;
        let stats = identikit_core::ablation::eval_generation(
            &view,
            &dataset,
            &probe,
            Some(&reg),
            *keys.input_counts.last().unwrap_or(&3),
            keys.episodes,
            keys.sample_steps,
            keys.seed,
        )?;
        out["pose"] = serde_json::json!({
            "regressor_holdout_mae": reg.holdout_mae,
            "mean_pose_error": stats.mean_pose_error,
        });
    }

    let path = dir.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out).unwrap())
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("eval.json: {e}")))?;

    for s in &report.by_inputs {
        println!(
            "inputs {}: mean id-sim {:.4} (var {:.5}, n {})",
            s.inputs, s.mean_id_similarity, s.var_id_similarity, s.n_episodes
        );
    }
    println!(
        "duplicate probe: single {:.4} vs tripled {:.4}",
        report.duplicate_single_mean, report.duplicate_tripled_mean
    );
    println!("report: {}", path.display());
    Ok(())
}
