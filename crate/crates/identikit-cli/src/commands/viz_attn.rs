//! `viz-attn`: export encoder cross-attention heat maps. One montage PNG
//! per (block, head): query rows x input-image columns, each cell the
//! query's softmax mass over that image's patch grid.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::commands::load_dataset_checked;
use crate::config::{load_config, require_exists, resolve_run_dir, write_snapshot};
use crate::{usage, CliError};
use identikit_core::raster::Rgb8Image;
use identikit_core::trainer::load_model;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub identity: usize,
    pub inputs: usize,
    /// Upscale factor per patch cell.
    pub scale: usize,
}

impl Default for Keys {
    fn default() -> Self {
        Keys {
            checkpoint: PathBuf::from("checkpoint.ckpt"),
            dataset: PathBuf::from("dataset"),
            identity: 0,
            inputs: 3,
            scale: 16,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder-bearing checkpoint (either stage)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset holding the input identity
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Identity index within the dataset
    #[arg(long)]
    identity: Option<usize>,
    /// Input image count
    #[arg(long)]
    inputs: Option<usize>,
    /// Pixels per patch cell in the montage
    #[arg(long)]
    scale: Option<usize>,
    /// Parent for timestamped run directories
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
    /// Exact output directory (overrides --out-root)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

/// Black -> red -> yellow -> white heat ramp.
fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (v * 3.0).min(1.0);
    let g = (v * 3.0 - 1.0).clamp(0.0, 1.0);
    let b = (v * 3.0 - 2.0).clamp(0.0, 1.0);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut keys: Keys = match &args.config {
        Some(p) => load_config(p)?,
        None => Keys::default(),
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { keys.$f = v; } )* };
    }
    over!(checkpoint, dataset, identity, inputs, scale);

    require_exists(&keys.checkpoint, "checkpoint")?;
    let model = load_model::<f32>(&keys.checkpoint)
        .map_err(|e| usage(format!("checkpoint {}: {e}", keys.checkpoint.display())))?;
    let dataset = load_dataset_checked(&keys.dataset)?;
    let rec = dataset
        .get(keys.identity)
        .ok_or_else(|| usage(format!("identity {} outside dataset", keys.identity)))?;
    if rec.faces.len() < keys.inputs {
        return Err(usage(format!(
            "identity has {} faces, need {}",
            rec.faces.len(),
            keys.inputs
        )));
    }

    let dir = resolve_run_dir(args.run_dir, &args.out_root, "viz-attn", 0)?;
    write_snapshot(&dir, &keys)?;

    let chosen: Vec<&identikit_core::synthetic::RenderedFace> =
        rec.faces[..keys.inputs].iter().collect();
    let record = model.encoder.attention_maps(&model.params, &chosen)?;
    let grid = model.encoder.config.patch_grid();
    let queries = model.encoder.config.queries;

    for (i, face) in chosen.iter().enumerate() {
        face.image.save_png(&dir.join(format!("input_{i:02}.png")))?;
    }

    let cell = keys.scale.max(2);
    let pad = 2usize;
    for (b, block) in record.blocks.iter().enumerate() {
        for (h, _) in block.iter().enumerate() {
            let w = keys.inputs * (grid.1 * cell + pad) + pad;
            let hgt = queries * (grid.0 * cell + pad) + pad;
            let mut img = Rgb8Image::new(hgt, w);
            img.data.fill(40);
            for q in 0..queries {
                for m in 0..keys.inputs {
                    let heat = record.heat_map(b, h, q, m, grid);
                    // Normalize within the cell so structure stays visible.
                    let max = heat.iter().cloned().fold(f32::MIN, f32::max).max(1e-9);
                    for gy in 0..grid.0 {
                        for gx in 0..grid.1 {
                            let color = heat_color((heat[(gy, gx)] / max) as f64);
                            for dy in 0..cell {
                                for dx in 0..cell {
                                    let y = pad + q * (grid.0 * cell + pad) + gy * cell + dy;
                                    let x = pad + m * (grid.1 * cell + pad) + gx * cell + dx;
                                    for (ci, &cv) in color.iter().enumerate() {
                                        img.set(y, x, ci, cv);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            img.save_png(&dir.join(format!("attn_block{b}_head{h}.png")))?;
        }
    }
    println!(
        "wrote {} attention montages (queries x inputs) to {}",
        record.blocks.len() * record.blocks[0].len(),
        dir.display()
    );
    Ok(())
}
