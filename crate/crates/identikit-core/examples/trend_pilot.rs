// Trend pilot: runs the ablation pipeline at a candidate desk-scale config
// and prints per-seed ID-similarity values for the three paper-trend
// comparisons. Used to pick the configuration frozen into the acceptance
// suite. `cargo run -p identikit-core --example trend_pilot --release`

use identikit_core::ablation::{run_ablation, AblationGrid, EvalSpec, PipelineSpec};
use identikit_core::encoder::EncoderConfig;
use identikit_core::episode::{EpisodeConfig, TargetMode};
use identikit_core::eval::{train_probe, ProbeTrainConfig};
use identikit_core::flow::FlowConfig;
use identikit_core::mtd::MtdConfig;
use identikit_core::synthetic::{
    generate_dataset_from_latents, sample_distinct_identities,
};
use identikit_core::trainer::{ModelConfig, Stage, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let image_size = 16usize;
    let mtd_steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(800);
    let flow_steps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1200);
    let lr: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);

    let model = ModelConfig {
        encoder: EncoderConfig {
            queries: 8,
            channels: 32,
            n_cross_blocks: 2,
            n_self_blocks: 2,
            n_heads: 4,
            patch_size: 4,
            extractor_depth: 1,
            image_size,
            max_images: 8,
        },
        mtd: MtdConfig {
            mask_ratio: 0.95,
            n_cross_blocks: 4,
            n_self_blocks: 1,
            patch_size: 4,
        },
        flow: FlowConfig {
            depth: 3,
            width: 64,
            n_heads: 4,
            patch_size: 4,
            time_embed_dim: 32,
        },
    };

    let train_latents = sample_distinct_identities(20, 10_000, 0.05, 0.15).unwrap();
    let train_set = generate_dataset_from_latents(&train_latents, 8, 10_001, image_size).unwrap();
    let eval_latents = sample_distinct_identities(8, 20_000, 0.05, 0.15).unwrap();
    let eval_set = generate_dataset_from_latents(&eval_latents, 8, 20_001, image_size).unwrap();
    let probe_latents = sample_distinct_identities(12, 30_000, 0.05, 0.25).unwrap();
    let probe_set = generate_dataset_from_latents(&probe_latents, 30, 30_001, image_size).unwrap();

    let probe_cfg = ProbeTrainConfig {
        steps: 1000,
        lr: 1e-3,
        batch: 16,
        seed: 31,
        holdout_per_id: 4,
        brightness_aug: 0.25,
        backbone: identikit_core::eval::BackboneConfig::probe_default(image_size),
    };
    let probe = train_probe::<f32>(&probe_set, &probe_cfg).unwrap();
    println!(
        "probe accuracy {:.3} ({:.0}s)",
        probe.holdout_accuracy,
        t0.elapsed().as_secs_f64()
    );

    let base_mtd = TrainConfig {
        stage: Stage::Mtd,
        steps: mtd_steps,
        lr,
        batch_episodes: 2,
        seed: 0,
        episode: EpisodeConfig::default(),
        mask_ratio: 0.95,
        init_checkpoint: None,
        freeze_encoder: false,
        model: model.clone(),
    };
    let base_flow = TrainConfig {
        stage: Stage::Flow,
        steps: flow_steps,
        ..base_mtd.clone()
    };

    let seeds = vec![1u64, 2, 3];
    let cells = vec![
        PipelineSpec {
            name: "ftm".into(),
            mtd: Some(base_mtd.clone()),
            flow: base_flow.clone(),
            seeds: seeds.clone(),
        },
        PipelineSpec {
            name: "one2one".into(),
            mtd: Some(TrainConfig {
                episode: EpisodeConfig::unchecked(1, 1, 1, TargetMode::All),
                ..base_mtd.clone()
            }),
            flow: base_flow.clone(),
            seeds: seeds.clone(),
        },
        PipelineSpec {
            name: "mask85".into(),
            mtd: Some(TrainConfig {
                mask_ratio: 0.85,
                ..base_mtd.clone()
            }),
            flow: base_flow.clone(),
            seeds: seeds.clone(),
        },
        PipelineSpec {
            name: "scratch".into(),
            mtd: None,
            flow: base_flow.clone(),
            seeds: seeds.clone(),
        },
    ];
    let grid = AblationGrid {
        name: "trend_pilot".into(),
        cells,
        eval: EvalSpec {
            n_episodes: 48,
            input_counts: vec![1, 3],
            sample_steps: 10,
            eval_seed: 9000,
        },
    };

    let work = std::env::temp_dir().join("identikit_trend_pilot");
    let mut progress = |msg: &str| {
        println!("[{:.0}s] {msg}", t0.elapsed().as_secs_f64());
    };
    let report = run_ablation::<f32>(
        &grid,
        &train_set,
        &eval_set,
        &probe,
        None,
        &work,
        Some(&mut progress),
    )
    .unwrap();

    println!("{}", report.to_csv());
    for inputs in [1usize, 3] {
        println!("--- inputs = {inputs}");
        for cell in ["ftm", "one2one", "mask85", "scratch"] {
            let vals = report.cell_values(cell, inputs);
            let strs: Vec<String> = vals.iter().map(|(s, v)| format!("s{s}={v:.3}")).collect();
            println!(
                "  {cell:8} mean={:?} {}",
                report.cell_mean(cell, inputs).map(|v| (v * 1000.0).round() / 1000.0),
                strs.join(" ")
            );
        }
    }
    // Paired trend statistics.
    for inputs in [1usize, 3] {
        for (name, a, b) in [
            ("ftm>one2one", "ftm", "one2one"),
            ("mask95>mask85", "ftm", "mask85"),
            ("mtd-init>scratch", "ftm", "scratch"),
        ] {
            let va = report.cell_values(a, inputs);
            let vb = report.cell_values(b, inputs);
            let diffs: Vec<f64> = va
                .iter()
                .filter_map(|(s, x)| vb.iter().find(|(t, _)| t == s).map(|(_, y)| x - y))
                .collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (n - 1.0).max(1.0))
                .sqrt();
            println!("{name} inputs={inputs}: mean diff {mean:.4}, sd {sd:.4}, diffs {diffs:?}");
        }
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
