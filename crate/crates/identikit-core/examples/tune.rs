// Scratch harness for probe/pose hyperparameter sweeps. Not part of the
// deliverable surface; run with `cargo run -p identikit-core --example tune`.

use identikit_core::eval::{
    train_pose_regressor, train_probe, BackboneConfig, PoseTrainConfig, ProbeTrainConfig,
};
use identikit_core::synthetic::generate_dataset_sized;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("probe");

    if mode == "probe" {
        for size in [16usize, 32] {
            for frames in [8usize, 20] {
                let data = generate_dataset_sized(12, frames, 300, size).unwrap();
                for steps in [400usize, 1000] {
                    for patch in [4usize, 8] {
                        let cfg = ProbeTrainConfig {
                            steps,
                            lr: 1e-3,
                            batch: 16,
                            seed: 1,
                            holdout_per_id: 3,
                            backbone: BackboneConfig {
                                channels: 32,
                                patch_size: patch,
                                depth: 2,
                                n_heads: 4,
                                image_size: size,
                            },
                        };
                        let t = Instant::now();
                        match train_probe::<f32>(&data, &cfg) {
                            Ok(p) => {
                                // Train-set accuracy distinguishes fit from
                                // generalization.
                                let mut correct = 0;
                                let mut total = 0;
                                for (class, rec) in data.iter().enumerate() {
                                    for face in &rec.faces[..frames - 3] {
                                        if p.classify(&face.image).unwrap() == class {
                                            correct += 1;
                                        }
                                        total += 1;
                                    }
                                }
                                println!(
                                    "size={size} frames={frames} steps={steps:5} patch={patch} holdout={:.3} train={:.3} ({:.1}s)",
                                    p.holdout_accuracy,
                                    correct as f64 / total as f64,
                                    t.elapsed().as_secs_f64()
                                );
                            }
                            Err(e) => println!("size={size} steps={steps:5} patch={patch} ERR {e}"),
                        }
                    }
                }
            }
        }
    } else {
        let data = generate_dataset_sized(10, 12, 302, 16).unwrap();
        for steps in [500usize, 1500] {
            for lr in [3e-4, 1e-3, 3e-3] {
                for patch in [4usize] {
                    let cfg = PoseTrainConfig {
                        steps,
                        lr,
                        batch: 16,
                        seed: 3,
                        holdout_fraction: 0.15,
                        backbone: BackboneConfig {
                            channels: 32,
                            patch_size: patch,
                            depth: 2,
                            n_heads: 4,
                            image_size: 16,
                        },
                    };
                    let t = Instant::now();
                    match train_pose_regressor::<f32>(&data, &cfg) {
                        Ok(r) => println!(
                            "steps={steps:5} lr={lr:.0e} patch={patch} mae={:?} ({:.1}s)",
                            r.holdout_mae,
                            t.elapsed().as_secs_f64()
                        ),
                        Err(e) => println!("steps={steps:5} lr={lr:.0e} patch={patch} ERR {e}"),
                    }
                }
            }
        }
    }
}
