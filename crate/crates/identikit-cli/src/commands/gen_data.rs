//! `gen-data`: synthesize an identity dataset (default) or video streams.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{load_config, resolve_run_dir, write_snapshot};
use crate::{usage, CliError};
use identikit_core::storage::{save_dataset, save_videos};
use identikit_core::synthetic::{
    generate_dataset_sized, generate_video_opts, interleave_videos, sample_distinct_identities,
    SyntheticVideo, VideoOptions,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    /// "identities" or "videos".
    pub mode: String,
    pub seed: u64,
    pub image_size: usize,
    pub n_ids: usize,
    pub frames_per_id: usize,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub degrade_fraction: f64,
    /// Fraction of videos carrying two interleaved identities.
    pub multi_id_fraction: f64,
}

impl Default for Keys {
    fn default() -> Self {
        Keys {
            mode: "identities".into(),
            seed: 0,
            image_size: 32,
            n_ids: 20,
            frames_per_id: 8,
            n_videos: 10,
            frames_per_video: 48,
            degrade_fraction: 0.2,
            multi_id_fraction: 0.3,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// identities | videos
    #[arg(long)]
    mode: Option<String>,
    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Square image side length
    #[arg(long)]
    image_size: Option<usize>,
    /// Identity count (identities mode)
    #[arg(long)]
    n_ids: Option<usize>,
    /// Renders per identity (identities mode)
    #[arg(long)]
    frames_per_id: Option<usize>,
    /// Video count (videos mode)
    #[arg(long)]
    n_videos: Option<usize>,
    /// Frames per video (videos mode)
    #[arg(long)]
    frames_per_video: Option<usize>,
    /// Fraction of frames blurred (videos mode)
    #[arg(long)]
    degrade_fraction: Option<f64>,
    /// Fraction of two-identity videos (videos mode)
    #[arg(long)]
    multi_id_fraction: Option<f64>,
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
    over!(
        mode,
        seed,
        image_size,
        n_ids,
        frames_per_id,
        n_videos,
        frames_per_video,
        degrade_fraction,
        multi_id_fraction
    );

    let dir = resolve_run_dir(args.run_dir, &args.out_root, "gen-data", keys.seed)?;
    write_snapshot(&dir, &keys)?;

    match keys.mode.as_str() {
        "identities" => {
            let records = generate_dataset_sized(
                keys.n_ids,
                keys.frames_per_id,
                keys.seed,
                keys.image_size,
            )?;
            save_dataset(&dir, &records, keys.seed)?;
            println!(
                "wrote {} identities x {} frames to {}",
                keys.n_ids,
                keys.frames_per_id,
                dir.display()
            );
        }
        "videos" => {
            let videos = generate_video_set(&keys)?;
            save_videos(&dir, &videos, keys.seed)?;
            println!("wrote {} videos to {}", videos.len(), dir.display());
        }
        other => return Err(usage(format!("mode {other} is not identities|videos"))),
    }
    println!("run dir: {}", dir.display());
    Ok(())
}

/// Build the video set: single-identity walks, a configurable fraction
/// interleaving two visually distinct identities. Ground-truth identity ids
/// are globally unique across the set.
pub fn generate_video_set(keys: &Keys) -> Result<Vec<SyntheticVideo>, CliError> {
    use rand::Rng;
    let mut rng = identikit_core::rng::stream(keys.seed, 40);
    let mut videos = Vec::with_capacity(keys.n_videos);
    let mut next_identity = 0usize;
    // One pool of mutually distinct identities for the whole set.
    let latents = sample_distinct_identities(
        2 * keys.n_videos,
        keys.seed.wrapping_add(777),
        0.05,
        0.3,
    )?;
    for v in 0..keys.n_videos {
        let two_ids = rng.random_range(0.0..1.0) < keys.multi_id_fraction;
        let n_ids = if two_ids { 2 } else { 1 };
        let mut parts = Vec::new();
        for k in 0..n_ids {
            let latent = &latents[next_identity];
            let opts = VideoOptions {
                degrade_fraction: keys.degrade_fraction,
                identity_id: next_identity,
                image_size: keys.image_size,
            };
            let frames = keys.frames_per_video / n_ids;
            parts.push(generate_video_opts(
                latent,
                frames.max(1),
                keys.seed
                    .wrapping_add(10_000 + 100 * v as u64 + k as u64),
                &opts,
            )?);
            next_identity += 1;
        }
        let video = if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            interleave_videos(parts, keys.seed.wrapping_add(20_000 + v as u64))
        };
        videos.push(video);
    }
    Ok(videos)
}
