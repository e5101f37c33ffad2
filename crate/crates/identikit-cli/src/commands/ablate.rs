//! `ablate`: run a grid of training-pipeline variants and report metrics
//! per cell. Grids come from a JSON file (`--grid`) or a built-in preset;
//! `--write-grid` emits the preset JSON for editing.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::commands::{load_dataset_checked, obtain_probe};
use crate::config::{load_config, resolve_run_dir, write_snapshot, ModelFlags, ModelKeys};
use crate::plot::{data_range, Chart, SERIES_COLORS};
use crate::{usage, CliError};
use identikit_core::ablation::{run_ablation, AblationGrid, EvalSpec, PipelineSpec};
use identikit_core::episode::{EpisodeConfig, TargetMode};
use identikit_core::trainer::{Stage, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub train_dataset: PathBuf,
    pub eval_dataset: PathBuf,
    /// Grid JSON path ("" = use the preset).
    pub grid: String,
    /// Built-in preset when no grid file is given: "trends" or "mtd-curve".
    pub preset: String,
    pub probe: String,
    pub probe_seed: u64,
    pub mtd_steps: usize,
    pub flow_steps: usize,
    pub lr: f64,
    pub batch_episodes: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub sample_steps: usize,
    pub eval_seed: u64,
    #[serde(flatten)]
    pub model: ModelKeys,
}

impl Default for Keys {
    fn default() -> Self {
        Keys {
            train_dataset: PathBuf::from("dataset"),
            eval_dataset: PathBuf::from("eval_dataset"),
            grid: String::new(),
            preset: "trends".into(),
            probe: String::new(),
            probe_seed: 4100,
            mtd_steps: 800,
            flow_steps: 1200,
            lr: 1e-3,
            batch_episodes: 2,
            seeds: vec![1, 2, 3],
            eval_episodes: 48,
            sample_steps: 10,
            eval_seed: 9000,
            model: ModelKeys::default(),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset directory
    #[arg(long)]
    train_dataset: Option<PathBuf>,
    /// Evaluation dataset directory (disjoint identities)
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    /// Grid JSON (see --write-grid for the schema)
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Built-in preset: trends | mtd-curve
    #[arg(long)]
    preset: Option<String>,
    /// Write the preset grid JSON to this path and exit
    #[arg(long)]
    write_grid: Option<PathBuf>,
    /// Probe checkpoint (trains one when absent)
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Seed for in-run probe training
    #[arg(long)]
    probe_seed: Option<u64>,
    /// MTD pretraining steps for preset cells
    #[arg(long)]
    mtd_steps: Option<usize>,
    /// Flow-stage steps for preset cells
    #[arg(long)]
    flow_steps: Option<usize>,
    /// Learning rate for preset cells
    #[arg(long)]
    lr: Option<f64>,
    /// Episodes per optimization step
    #[arg(long)]
    batch_episodes: Option<usize>,
    /// Pipeline seeds (repeatable)
    #[arg(long)]
    seeds: Option<Vec<u64>>,
    /// Evaluation episodes per (cell, input count)
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Euler steps per sampled image
    #[arg(long)]
    sample_steps: Option<usize>,
    /// Evaluation seed
    #[arg(long)]
    eval_seed: Option<u64>,
    #[command(flatten)]
    model: ModelFlags,
    /// Parent for timestamped run directories
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
    /// Exact output directory (overrides --out-root)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

/// The standard trend grid: few-to-many vs one-to-one episodes, mask 0.95
/// vs 0.85, and MTD-initialized vs from-scratch flow.
pub fn trend_grid(keys: &Keys) -> Result<AblationGrid, CliError> {
    let model = keys.model.to_model_config(0.95);
    let base_mtd = TrainConfig {
        stage: Stage::Mtd,
        steps: keys.mtd_steps,
        lr: keys.lr,
        batch_episodes: keys.batch_episodes,
        seed: 0,
        episode: EpisodeConfig::default(),
        mask_ratio: 0.95,
        init_checkpoint: None,
        freeze_encoder: false,
        model: model.clone(),
    };
    let base_flow = TrainConfig {
        stage: Stage::Flow,
        steps: keys.flow_steps,
        ..base_mtd.clone()
    };
    Ok(AblationGrid {
        name: "trends".into(),
        cells: vec![
            PipelineSpec {
                name: "few_to_many".into(),
                mtd: Some(base_mtd.clone()),
                flow: base_flow.clone(),
                seeds: keys.seeds.clone(),
            },
            PipelineSpec {
                name: "one_to_one".into(),
                mtd: Some(TrainConfig {
                    episode: EpisodeConfig::unchecked(1, 1, 1, TargetMode::All),
                    ..base_mtd.clone()
                }),
                flow: base_flow.clone(),
                seeds: keys.seeds.clone(),
            },
            PipelineSpec {
                name: "mask_085".into(),
                mtd: Some(TrainConfig {
                    mask_ratio: 0.85,
                    ..base_mtd.clone()
                }),
                flow: base_flow.clone(),
                seeds: keys.seeds.clone(),
            },
            PipelineSpec {
                name: "no_mtd".into(),
                mtd: None,
                flow: base_flow.clone(),
                seeds: keys.seeds.clone(),
            },
        ],
        eval: EvalSpec {
            n_episodes: keys.eval_episodes,
            input_counts: vec![1, 3],
            sample_steps: keys.sample_steps,
            eval_seed: keys.eval_seed,
        },
    })
}

/// Rising-pretraining curve: flow quality as a function of MTD steps.
pub fn mtd_curve_grid(keys: &Keys) -> Result<AblationGrid, CliError> {
    let mut grid = trend_grid(keys)?;
    grid.name = "mtd-curve".into();
    let ftm = grid.cells[0].clone();
    grid.cells = [0usize, 1, 2, 4]
        .iter()
        .map(|&quarter| {
            let steps = keys.mtd_steps * quarter / 4;
            let mut cell = ftm.clone();
            cell.name = format!("mtd_{steps}");
            if steps == 0 {
                cell.mtd = None;
            } else if let Some(m) = &mut cell.mtd {
                m.steps = steps;
            }
            cell
        })
        .collect();
    Ok(grid)
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut keys: Keys = match &args.config {
        Some(p) => load_config(p)?,
        None => Keys::default(),
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { keys.$f = v; } )* };
    }
    over!(
        train_dataset,
        eval_dataset,
        preset,
        probe_seed,
        mtd_steps,
        flow_steps,
        lr,
        batch_episodes,
        seeds,
        eval_episodes,
        sample_steps,
        eval_seed
    );
    if let Some(g) = &args.grid {
        keys.grid = g.display().to_string();
    }
    if let Some(p) = &args.probe {
        keys.probe = p.display().to_string();
    }
    args.model.apply(&mut keys.model);

    let preset = |keys: &Keys| -> Result<AblationGrid, CliError> {
        match keys.preset.as_str() {
            "trends" => trend_grid(keys),
            "mtd-curve" => mtd_curve_grid(keys),
            other => Err(usage(format!("preset {other} is not trends|mtd-curve"))),
        }
    };

    if let Some(path) = &args.write_grid {
        let grid = preset(&keys)?;
        std::fs::write(path, serde_json::to_string_pretty(&grid).unwrap())
            .map_err(|e| usage(format!("write grid {}: {e}", path.display())))?;
        println!("wrote grid to {}", path.display());
        return Ok(());
    }

    let grid: AblationGrid = if keys.grid.is_empty() {
        preset(&keys)?
    } else {
        let path = PathBuf::from(&keys.grid);
        crate::config::require_exists(&path, "grid")?;
        let text = std::fs::read_to_string(&path)
            .map_err(|e| usage(format!("grid {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("grid {}: {e}", path.display())))?
    };

    let train_set = load_dataset_checked(&keys.train_dataset)?;
    let eval_set = load_dataset_checked(&keys.eval_dataset)?;

    let first_seed = keys.seeds.first().copied().unwrap_or(0);
    let dir = resolve_run_dir(args.run_dir, &args.out_root, "ablate", first_seed)?;
    write_snapshot(&dir, &keys)?;

    let image_size = train_set
        .first()
        .and_then(|r| r.faces.first())
        .map(|f| f.image.h)
        .ok_or_else(|| usage("training dataset is empty"))?;
    let probe_path = if keys.probe.is_empty() {
        None
    } else {
        Some(PathBuf::from(&keys.probe))
    };
    let probe = obtain_probe(probe_path.as_deref(), image_size, keys.probe_seed, &dir)?;

    let mut progress = |msg: &str| eprintln!("ablate: {msg}");
    let report = run_ablation::<f32>(
        &grid,
        &train_set,
        &eval_set,
        &probe,
        None,
        &dir.join("work"),
        Some(&mut progress),
    )?;

    std::fs::write(dir.join("report.csv"), report.to_csv())
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("report.csv: {e}")))?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .map_err(|e| CliError::Runtime(anyhow::anyhow!("report.json: {e}")))?;

    write_similarity_plot(&grid, &report, &dir)?;

    print!("{}", report.to_csv());
    println!("report dir: {}", dir.display());
    Ok(())
}

/// Mean id-similarity per cell (x = cell index, or MTD steps when every
/// cell is named `mtd_<steps>`), one line per input count; a JSON sidecar
/// maps series and ticks to names.
fn write_similarity_plot(
    grid: &AblationGrid,
    report: &identikit_core::ablation::AblationReport,
    dir: &std::path::Path,
) -> Result<(), CliError> {
    let steps_axis: Option<Vec<f64>> = grid
        .cells
        .iter()
        .map(|c| {
            c.name
                .strip_prefix("mtd_")
                .and_then(|s| s.parse::<f64>().ok())
        })
        .collect();

    let mut series = Vec::new();
    let mut legend = Vec::new();
    for (si, &inputs) in grid.eval.input_counts.iter().enumerate() {
        let mut points = Vec::new();
        for (ci, cell) in grid.cells.iter().enumerate() {
            if let Some(mean) = report.cell_mean(&cell.name, inputs) {
                let x = steps_axis
                    .as_ref()
                    .map(|a| a[ci])
                    .unwrap_or(ci as f64);
                points.push((x, mean));
            }
        }
        legend.push(serde_json::json!({
            "inputs": inputs,
            "color": SERIES_COLORS[si % SERIES_COLORS.len()],
        }));
        series.push(points);
    }
    let (xr, yr) = data_range(&series);
    let mut chart = Chart::new(560, 360, xr, yr);
    for (si, points) in series.iter().enumerate() {
        chart.polyline(points, SERIES_COLORS[si % SERIES_COLORS.len()]);
    }
    chart.save(&dir.join("similarity.png"))?;
    let sidecar = serde_json::json!({
        "x_axis": if steps_axis.is_some() { "mtd_steps" } else { "cell_index" },
        "cells": grid.cells.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        "series": legend,
    });
    std::fs::write(
        dir.join("similarity.json"),
        serde_json::to_string_pretty(&sidecar).unwrap(),
    )
    .map_err(|e| CliError::Runtime(anyhow::anyhow!("similarity.json: {e}")))?;
    Ok(())
}
