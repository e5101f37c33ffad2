use identikit_core::eval::{train_pose_regressor, BackboneConfig, PoseTrainConfig};
use identikit_core::synthetic::generate_dataset_sized;
use std::time::Instant;
fn main() {
    for size in [16usize, 32] {
        for (ids, frames) in [(60usize, 20usize)] {
            let data = generate_dataset_sized(ids, frames, 42, size).unwrap();
            for (depth, ch) in [(2usize, 32usize), (3, 48)] {
                for steps in [2000usize, 4000] {
                    let cfg = PoseTrainConfig {
                        steps, lr: 1e-3, batch: 16, seed: 3, holdout_fraction: 0.08,
                        backbone: BackboneConfig { channels: ch, patch_size: 4, depth, n_heads: 4, image_size: size },
                    };
                    let t = Instant::now();
                    let r = train_pose_regressor::<f32>(&data, &cfg).unwrap();
                    println!("size={size} {ids}x{frames} d={depth} ch={ch} steps={steps} mae=[{:.1},{:.1},{:.1}] ({:.0}s)",
                        r.holdout_mae[0], r.holdout_mae[1], r.holdout_mae[2], t.elapsed().as_secs_f64());
                }
            }
        }
    }
}
