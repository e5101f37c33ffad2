// Width/steps sensitivity for the flow stage on a fixed MTD encoder.
use identikit_core::ablation::{eval_generation, FlowModelView};
use identikit_core::encoder::EncoderConfig;
use identikit_core::episode::EpisodeConfig;
use identikit_core::eval::{train_probe, ProbeTrainConfig};
use identikit_core::flow::FlowConfig;
use identikit_core::mtd::MtdConfig;
use identikit_core::synthetic::{generate_dataset_from_latents, sample_distinct_identities};
use identikit_core::trainer::{train_stage, ModelConfig, Stage, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let image_size = 16usize;
    let enc = EncoderConfig {
        queries: 8, channels: 32, n_cross_blocks: 2, n_self_blocks: 2, n_heads: 4,
        patch_size: 4, extractor_depth: 1, image_size, max_images: 8,
    };
    let mtd = MtdConfig { mask_ratio: 0.95, n_cross_blocks: 4, n_self_blocks: 1, patch_size: 4 };

    let train_latents = sample_distinct_identities(20, 10_000, 0.05, 0.15).unwrap();
    let train_set = generate_dataset_from_latents(&train_latents, 8, 10_001, image_size).unwrap();
    let eval_latents = sample_distinct_identities(8, 20_000, 0.05, 0.15).unwrap();
    let eval_set = generate_dataset_from_latents(&eval_latents, 8, 20_001, image_size).unwrap();
    let probe_latents = sample_distinct_identities(12, 30_000, 0.05, 0.25).unwrap();
    let probe_set = generate_dataset_from_latents(&probe_latents, 30, 30_001, image_size).unwrap();
    let probe = train_probe::<f32>(&probe_set, &ProbeTrainConfig {
        steps: 1000, lr: 1e-3, batch: 16, seed: 31, holdout_per_id: 4, brightness_aug: 0.25,
        backbone: identikit_core::eval::BackboneConfig::probe_default(image_size),
    }).unwrap();

    for width in [32usize, 64] {
        let model = ModelConfig {
            encoder: enc.clone(), mtd: mtd.clone(),
            flow: FlowConfig { depth: 3, width, n_heads: 4, patch_size: 4, time_embed_dim: 32 },
        };
        let mtd_cfg = TrainConfig {
            stage: Stage::Mtd, steps: 800, lr: 1e-3, batch_episodes: 2, seed: 1,
            episode: EpisodeConfig::default(), mask_ratio: 0.95,
            init_checkpoint: None, freeze_encoder: false, model: model.clone(),
        };
        let out = std::env::temp_dir().join(format!("diag3_w{width}"));
        std::fs::create_dir_all(&out).unwrap();
        let ckpt = out.join("mtd.ckpt");
        let m = train_stage::<f32>(&mtd_cfg, &train_set, None).unwrap();
        m.save(&ckpt).unwrap();
        let flow_cfg = TrainConfig {
            stage: Stage::Flow, steps: 1500, init_checkpoint: Some(ckpt), ..mtd_cfg.clone()
        };
        let flow = train_stage::<f32>(&flow_cfg, &train_set, None).unwrap();
        let view = FlowModelView::of_trained(&flow).unwrap();
        for euler in [10usize, 20, 40] {
            let s3 = eval_generation(&view, &eval_set, &probe, None, 3, 32, euler, 9000).unwrap();
            println!("[{:.0}s] width={width} euler={euler}: loss end {:.3}, id-sim 3in={:.3}",
                t0.elapsed().as_secs_f64(), flow.log.last_loss().unwrap(), s3.mean_id_similarity);
        }
    }
}
