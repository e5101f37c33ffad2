//! `train-mtd` / `train-flow`: the two training stages. Outputs per run:
//! checkpoint.ckpt, trainlog.jsonl, resolved.toml.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{
    episode_config, load_config, parse_target_mode, require_exists, resolve_run_dir,
    write_snapshot, ModelFlags, ModelKeys,
};
use crate::commands::load_dataset_checked;
use crate::CliError;
use identikit_core::checkpoint::file_hash;
use identikit_core::trainer::{train_stage, Stage, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub dataset: PathBuf,
    pub steps: usize,
    pub lr: f64,
    pub batch_episodes: usize,
    pub seed: u64,
    pub mask_ratio: f64,
    pub inputs_min: usize,
    pub inputs_max: usize,
    pub n_targets: usize,
    /// all | disjoint
    pub target_mode: String,
    pub freeze_encoder: bool,
    /// Warm-start / resume checkpoint ("" = none).
    pub init: String,
    #[serde(flatten)]
    pub model: ModelKeys,
}

impl Keys {
    fn defaults(stage: Stage) -> Self {
        let base = match stage {
            Stage::Mtd => TrainConfig::default_mtd(),
            Stage::Flow => TrainConfig::default_flow(),
        };
        Keys {
            dataset: PathBuf::from("dataset"),
            steps: base.steps,
            lr: base.lr,
            batch_episodes: base.batch_episodes,
            seed: base.seed,
            mask_ratio: base.mask_ratio,
            inputs_min: base.episode.n_inputs_min,
            inputs_max: base.episode.n_inputs_max,
            n_targets: base.episode.n_targets,
            target_mode: "all".into(),
            freeze_encoder: false,
            init: String::new(),
            model: ModelKeys::default(),
        }
    }
}

impl Default for Keys {
    fn default() -> Self {
        Keys::defaults(Stage::Mtd)
    }
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (from gen-data or curate)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Total optimization steps to reach
    #[arg(long)]
    steps: Option<usize>,
    /// Constant learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Episodes per optimization step
    #[arg(long)]
    batch_episodes: Option<usize>,
    /// Data-order seed
    #[arg(long)]
    seed: Option<u64>,
    /// Token mask ratio (masked-decoder objective)
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// Smallest episode input count
    #[arg(long)]
    inputs_min: Option<usize>,
    /// Largest episode input count
    #[arg(long)]
    inputs_max: Option<usize>,
    /// Episode target count
    #[arg(long)]
    n_targets: Option<usize>,
    /// Target sampling: all | disjoint
    #[arg(long)]
    target_mode: Option<String>,
    /// Warm-start / resume checkpoint
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Parent for timestamped run directories
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
    /// Exact output directory (overrides --out-root)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct MtdArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, clap::Args)]
pub struct FlowArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Keep encoder weights fixed during the flow stage
    #[arg(long)]
    freeze_encoder: bool,
}

pub fn run_mtd(args: MtdArgs) -> Result<(), CliError> {
    run(Stage::Mtd, args.common, false)
}

pub fn run_flow(args: FlowArgs) -> Result<(), CliError> {
    run(Stage::Flow, args.common, args.freeze_encoder)
}

fn run(stage: Stage, args: CommonArgs, freeze_flag: bool) -> Result<(), CliError> {
    let mut keys: Keys = match &args.config {
        Some(p) => load_config(p)?,
        None => Keys::defaults(stage),
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { keys.$f = v; } )* };
    }
    over!(
        dataset,
        steps,
        lr,
        batch_episodes,
        seed,
        mask_ratio,
        inputs_min,
        inputs_max,
        n_targets,
        target_mode
    );
    if let Some(init) = &args.init {
        keys.init = init.display().to_string();
    }
    if freeze_flag {
        keys.freeze_encoder = true;
    }
    args.model.apply(&mut keys.model);

    let dataset = load_dataset_checked(&keys.dataset)?;
    let mode = parse_target_mode(&keys.target_mode)?;
    let episode = episode_config(keys.inputs_min, keys.inputs_max, keys.n_targets, mode)?;
    let init_checkpoint = if keys.init.is_empty() {
        None
    } else {
        let p = PathBuf::from(&keys.init);
        require_exists(&p, "init checkpoint")?;
        Some(p)
    };

    let config = TrainConfig {
        stage,
        steps: keys.steps,
        lr: keys.lr,
        batch_episodes: keys.batch_episodes,
        seed: keys.seed,
        episode,
        mask_ratio: keys.mask_ratio,
        init_checkpoint,
        freeze_encoder: keys.freeze_encoder,
        model: keys.model.to_model_config(keys.mask_ratio),
    };
    config
        .validate()
        .map_err(|e| crate::usage(format!("train config: {e}")))?;

    let dir = resolve_run_dir(args.run_dir, &args.out_root, stage.kind(), keys.seed)?;
    write_snapshot(&dir, &keys)?;

    let log_path = dir.join("trainlog.jsonl");
    let mut log_file = std::fs::File::create(&log_path)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("trainlog: {e}")))?;
    let mut on_step = |rec: &identikit_core::trainer::LogRecord| {
        let line = serde_json::to_string(rec).expect("log record serializes");
        let _ = writeln!(log_file, "{line}");
        if rec.step % 100 == 0 || rec.step == 1 {
            eprintln!("step {:>6}  loss {:.5}", rec.step, rec.loss);
        }
    };

    let trained = train_stage::<f32>(&config, &dataset, Some(&mut on_step))?;
    let ckpt_path = dir.join("checkpoint.ckpt");
    trained.save(&ckpt_path)?;
    let hash = file_hash(&ckpt_path)?;
    println!(
        "{} stage done: {} steps, final loss {:.5}",
        stage.kind(),
        keys.steps,
        trained.log.last_loss().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {} ({hash})", ckpt_path.display());
    println!("run dir: {}", dir.display());
    Ok(())
}
