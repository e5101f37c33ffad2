// Pipeline diagnostics: where does identity information die?
// cargo run -p identikit-core --example diag <mtd_steps> <flow_steps> <lr> <flow_lr>

use identikit_core::ablation::FlowModelView;
use identikit_core::encoder::EncoderConfig;
use identikit_core::episode::EpisodeConfig;
use identikit_core::eval::{id_similarity, train_probe, ProbeTrainConfig};
use identikit_core::flow::FlowConfig;
use identikit_core::mtd::{sample_mask, MtdConfig};
use identikit_core::raster::FloatImage;
use identikit_core::synthetic::{generate_dataset_from_latents, sample_distinct_identities};
use identikit_core::trainer::{train_stage, ModelConfig, Stage, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let arg = |i: usize, d: f64| -> f64 {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(d)
    };
    let mtd_steps = arg(1, 600.0) as usize;
    let flow_steps = arg(2, 200.0) as usize;
    let lr = arg(3, 1e-3);
    let flow_lr = arg(4, 1e-3);
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
    println!("probe acc {:.3}", probe.holdout_accuracy);

    // Probe ceiling/floor on REAL renders of eval identities.
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for (i, rec) in eval_set.iter().enumerate() {
        let refs: Vec<&identikit_core::raster::Rgb8Image> =
            rec.faces[1..].iter().map(|f| &f.image).collect();
        same.push(
            id_similarity(&FloatImage::from_u8(&rec.faces[0].image), &refs, &probe).unwrap(),
        );
        let other = &eval_set[(i + 1) % eval_set.len()];
        cross.push(
            id_similarity(&FloatImage::from_u8(&other.faces[0].image), &refs, &probe).unwrap(),
        );
    }
    println!(
        "render ceiling: same-id {:.3}, cross-id {:.3}",
        same.iter().sum::<f64>() / same.len() as f64,
        cross.iter().sum::<f64>() / cross.len() as f64
    );

    // Stage 1.
    let mtd_cfg = TrainConfig {
        stage: Stage::Mtd,
        steps: mtd_steps,
        lr,
        batch_episodes: 2,
        seed: 1,
        episode: EpisodeConfig::default(),
        mask_ratio: 0.95,
        init_checkpoint: None,
        freeze_encoder: false,
        model: model.clone(),
    };
    let mtd = train_stage::<f32>(&mtd_cfg, &train_set, None).unwrap();
    println!(
        "[{:.0}s] mtd loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        mtd.log.first_loss().unwrap(),
        mtd.log.last_loss().unwrap()
    );

    // Identity through MTD reconstructions of eval identities.
    let dec = mtd.mtd.as_ref().unwrap();
    let mut recon_same = Vec::new();
    let mut recon_cross = Vec::new();
    let out = std::path::Path::new("/tmp/diag");
    std::fs::create_dir_all(out).unwrap();
    for (i, rec) in eval_set.iter().enumerate() {
        let inputs: Vec<&identikit_core::synthetic::RenderedFace> =
            rec.faces[..3].iter().collect();
        let rep = mtd.encoder.encode_set(&mtd.params, &inputs).unwrap();
        let target = &rec.faces[4];
        let mask = sample_mask(dec.n_tokens(), 0.95, 77 + i as u64).unwrap();
        let recon = dec.decode(&mtd.params, &rep.tokens, target, &mask).unwrap();
        let refs: Vec<&identikit_core::raster::Rgb8Image> =
            rec.faces.iter().map(|f| &f.image).collect();
        recon_same.push(id_similarity(&recon, &refs, &probe).unwrap());
        let other = &eval_set[(i + 1) % eval_set.len()];
        let orefs: Vec<&identikit_core::raster::Rgb8Image> =
            other.faces.iter().map(|f| &f.image).collect();
        recon_cross.push(id_similarity(&recon, &orefs, &probe).unwrap());
        if i < 4 {
            recon.to_u8().save_png(&out.join(format!("recon_{i}.png"))).unwrap();
            target.image.save_png(&out.join(format!("target_{i}.png"))).unwrap();
        }
    }
    println!(
        "mtd recon id-sim: same {:.3}, cross {:.3}",
        recon_same.iter().sum::<f64>() / recon_same.len() as f64,
        recon_cross.iter().sum::<f64>() / recon_cross.len() as f64
    );

    // Stage 2.
    let ckpt = out.join("mtd.ckpt");
    mtd.save(&ckpt).unwrap();
    let flow_cfg = TrainConfig {
        stage: Stage::Flow,
        steps: flow_steps,
        lr: flow_lr,
        init_checkpoint: Some(ckpt),
        ..mtd_cfg.clone()
    };
    let flow = train_stage::<f32>(&flow_cfg, &train_set, None).unwrap();
    println!(
        "[{:.0}s] flow loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        flow.log.first_loss().unwrap(),
        flow.log.last_loss().unwrap()
    );

    // Generated samples.
    let view = FlowModelView::of_trained(&flow).unwrap();
    let mut gen_same = Vec::new();
    let mut gen_cross = Vec::new();
    for (i, rec) in eval_set.iter().enumerate() {
        for s in 0..4u64 {
            let inputs: Vec<&identikit_core::synthetic::RenderedFace> =
                rec.faces[..3].iter().collect();
            let rep = view.encoder.encode_set(view.params, &inputs).unwrap();
            let gen = view
                .flow
                .sample_image(view.params, &rep.tokens, 20, 1000 + 10 * i as u64 + s)
                .unwrap();
            let refs: Vec<&identikit_core::raster::Rgb8Image> =
                rec.faces.iter().map(|f| &f.image).collect();
            gen_same.push(id_similarity(&gen, &refs, &probe).unwrap());
            let other = &eval_set[(i + 1) % eval_set.len()];
            let orefs: Vec<&identikit_core::raster::Rgb8Image> =
                other.faces.iter().map(|f| &f.image).collect();
            gen_cross.push(id_similarity(&gen, &orefs, &probe).unwrap());
            if i < 3 && s < 2 {
                gen.to_u8().save_png(&out.join(format!("gen_{i}_{s}.png"))).unwrap();
            }
        }
    }
    println!(
        "flow sample id-sim: same {:.3}, cross {:.3}",
        gen_same.iter().sum::<f64>() / gen_same.len() as f64,
        gen_cross.iter().sum::<f64>() / gen_cross.len() as f64
    );
    println!("total {:.0}s; images in /tmp/diag", t0.elapsed().as_secs_f64());
}
