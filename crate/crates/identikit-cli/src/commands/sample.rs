//! `sample`: Euler-integrate the learned flow conditioned on an identity's
//! reference images.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::commands::load_dataset_checked;
use crate::config::{load_config, require_exists, resolve_run_dir, write_snapshot};
use crate::{usage, CliError};
use identikit_core::trainer::load_model;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Identity index within the dataset.
    pub identity: usize,
    /// Conditioning images drawn from the identity.
    pub inputs: usize,
    pub n_samples: usize,
    /// Euler integration steps.
    pub steps: usize,
    pub seed: u64,
}

impl Default for Keys {
    fn default() -> Self {
        Keys {
            checkpoint: PathBuf::from("checkpoint.ckpt"),
            dataset: PathBuf::from("dataset"),
            identity: 0,
            inputs: 3,
            n_samples: 4,
            steps: 20,
            seed: 0,
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
    /// Dataset holding the reference identity
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Identity index within the dataset
    #[arg(long)]
    identity: Option<usize>,
    /// Conditioning image count
    #[arg(long)]
    inputs: Option<usize>,
    /// Images to generate
    #[arg(long)]
    n_samples: Option<usize>,
    /// Euler integration steps
    #[arg(long)]
    steps: Option<usize>,
    /// Noise seed
    #[arg(long)]
    seed: Option<u64>,
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
    over!(checkpoint, dataset, identity, inputs, n_samples, steps, seed);

    require_exists(&keys.checkpoint, "checkpoint")?;
    let model = load_model::<f32>(&keys.checkpoint)
        .map_err(|e| usage(format!("checkpoint {}: {e}", keys.checkpoint.display())))?;
    let flow = model
        .flow
        .as_ref()
        .ok_or_else(|| usage("checkpoint has no flow decoder (use a train-flow checkpoint)"))?;
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

    let dir = resolve_run_dir(args.run_dir, &args.out_root, "sample", keys.seed)?;
    write_snapshot(&dir, &keys)?;

    let chosen: Vec<&identikit_core::synthetic::RenderedFace> =
        rec.faces[..keys.inputs].iter().collect();
    let rep = model.encoder.encode_set(&model.params, &chosen)?;
    for (i, face) in chosen.iter().enumerate() {
        face.image.save_png(&dir.join(format!("reference_{i:02}.png")))?;
    }
    for s in 0..keys.n_samples {
        let img = flow.sample_image(
            &model.params,
            &rep.tokens,
            keys.steps,
            keys.seed.wrapping_add(s as u64),
        )?;
        img.to_u8().save_png(&dir.join(format!("sample_{s:03}.png")))?;
    }
    println!(
        "wrote {} samples conditioned on {} references to {}",
        keys.n_samples,
        keys.inputs,
        dir.display()
    );
    Ok(())
}
