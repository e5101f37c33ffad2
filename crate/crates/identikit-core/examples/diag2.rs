// Flow-stage sweep on a fixed MTD encoder.
// cargo run -p identikit-core --example diag2

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
            width: 32,
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
    let probe = train_probe::<f32>(
        &probe_set,
        &ProbeTrainConfig {
            steps: 1000,
            lr: 1e-3,
            batch: 16,
            seed: 31,
            holdout_per_id: 4,
            brightness_aug: 0.25,
            backbone: identikit_core::eval::BackboneConfig::probe_default(image_size),
        },
    )
    .unwrap();

    let mtd_cfg = TrainConfig {
        stage: Stage::Mtd,
        steps: 600,
        lr: 1e-3,
        batch_episodes: 2,
        seed: 1,
        episode: EpisodeConfig::default(),
        mask_ratio: 0.95,
        init_checkpoint: None,
        freeze_encoder: false,
        model: model.clone(),
    };
    let out = std::path::Path::new("/tmp/diag2");
    std::fs::create_dir_all(out).unwrap();
    let ckpt = out.join("mtd.ckpt");
    if !ckpt.exists() {
        let mtd = train_stage::<f32>(&mtd_cfg, &train_set, None).unwrap();
        mtd.save(&ckpt).unwrap();
        println!("[{:.0}s] mtd trained", t0.elapsed().as_secs_f64());
    }

    for steps in [500usize, 1500, 3000] {
        for lr in [1e-3f64, 3e-3] {
            let flow_cfg = TrainConfig {
                stage: Stage::Flow,
                steps,
                lr,
                init_checkpoint: Some(ckpt.clone()),
                ..mtd_cfg.clone()
            };
            let flow = train_stage::<f32>(&flow_cfg, &train_set, None).unwrap();
            let view = FlowModelView::of_trained(&flow).unwrap();
            let s3 = eval_generation(&view, &eval_set, &probe, None, 3, 32, 20, 9000).unwrap();
            let s1 = eval_generation(&view, &eval_set, &probe, None, 1, 32, 20, 9000).unwrap();
            println!(
                "[{:.0}s] steps={steps:4} lr={lr:.0e}: loss {:.3}->{:.3}, id-sim 1in={:.3} 3in={:.3}",
                t0.elapsed().as_secs_f64(),
                flow.log.first_loss().unwrap(),
                flow.log.last_loss().unwrap(),
                s1.mean_id_similarity,
                s3.mean_id_similarity
            );
            // A couple of samples for visual inspection.
            let rec = &eval_set[0];
            let inputs: Vec<&identikit_core::synthetic::RenderedFace> =
                rec.faces[..3].iter().collect();
            let rep = view.encoder.encode_set(view.params, &inputs).unwrap();
            let gen = view.flow.sample_image(view.params, &rep.tokens, 20, 5).unwrap();
            gen.to_u8()
                .save_png(&out.join(format!("gen_s{steps}_lr{lr:.0e}.png")))
                .unwrap();
        }
    }
}
