//! `curate`: turn video streams into pose-diverse identity sets in the
//! standard dataset layout, plus a machine-checkable manifest.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::commands::obtain_probe;
use crate::config::{load_config, require_exists, resolve_run_dir, write_snapshot};
use crate::{usage, CliError};
use identikit_core::curation::{curate_videos, CurationConfig};
use identikit_core::storage::{load_videos, save_dataset, write_json};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Keys {
    pub videos: PathBuf,
    /// Probe checkpoint path ("" = train one in-run on disjoint identities).
    pub probe: String,
    pub probe_seed: u64,
    pub seed: u64,
    pub sim_threshold: f64,
    pub drop_fraction: f64,
    pub n_pose_clusters: usize,
    pub n_select: usize,
    pub min_pose_diff: f64,
}

impl Default for Keys {
    fn default() -> Self {
        let c = CurationConfig::default();
        Keys {
            videos: PathBuf::from("videos"),
            probe: String::new(),
            probe_seed: 4100,
            seed: 0,
            sim_threshold: c.sim_threshold,
            drop_fraction: c.drop_fraction,
            n_pose_clusters: c.n_pose_clusters,
            n_select: c.n_select,
            min_pose_diff: c.min_pose_diff,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Video directory (from gen-data --mode videos)
    #[arg(long)]
    videos: Option<PathBuf>,
    /// Probe checkpoint (trains one when absent)
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Seed for in-run probe training
    #[arg(long)]
    probe_seed: Option<u64>,
    /// Pipeline seed (pose clustering)
    #[arg(long)]
    seed: Option<u64>,
    /// Cosine similarity threshold for the identity split
    #[arg(long)]
    sim_threshold: Option<f64>,
    /// Fraction of lowest-quality frames dropped per clip
    #[arg(long)]
    drop_fraction: Option<f64>,
    /// Pose over-clustering factor
    #[arg(long)]
    n_pose_clusters: Option<usize>,
    /// Frames selected per emitted identity
    #[arg(long)]
    n_select: Option<usize>,
    /// Minimum pairwise pose gap (degrees)
    #[arg(long)]
    min_pose_diff: Option<f64>,
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
        videos,
        probe_seed,
        seed,
        sim_threshold,
        drop_fraction,
        n_pose_clusters,
        n_select,
        min_pose_diff
    );
    if let Some(p) = &args.probe {
        keys.probe = p.display().to_string();
    }

    require_exists(&keys.videos, "video directory")?;
    let videos = load_videos(&keys.videos)
        .map_err(|e| usage(format!("videos {}: {e}", keys.videos.display())))?;
    if videos.is_empty() {
        return Err(usage("video directory holds no videos"));
    }
    let image_size = videos[0].frames[0].image.h;

    let config = CurationConfig {
        sim_threshold: keys.sim_threshold,
        drop_fraction: keys.drop_fraction,
        n_pose_clusters: keys.n_pose_clusters,
        n_select: keys.n_select,
        min_pose_diff: keys.min_pose_diff,
    };
    config
        .validate()
        .map_err(|e| usage(format!("curation config: {e}")))?;

    let dir = resolve_run_dir(args.run_dir, &args.out_root, "curate", keys.seed)?;
    write_snapshot(&dir, &keys)?;

    let probe_path = if keys.probe.is_empty() {
        None
    } else {
        Some(PathBuf::from(&keys.probe))
    };
    let probe = obtain_probe(probe_path.as_deref(), image_size, keys.probe_seed, &dir)?;

    let named: Vec<(String, Vec<identikit_core::synthetic::RenderedFace>)> = videos
        .into_iter()
        .map(|v| (v.name, v.frames))
        .collect();
    let (manifest, records) = curate_videos(&named, &probe, &config, keys.seed)?;

    write_json(&dir.join("curation_manifest.json"), &manifest)?;
    let out_dataset = dir.join("dataset");
    save_dataset(&out_dataset, &records, keys.seed)?;

    let failed = manifest.clips.iter().filter(|c| !c.passed).count();
    println!(
        "curated {} identities from {} clips ({} infeasible), dataset at {}",
        manifest.n_emitted,
        manifest.clips.len(),
        failed,
        out_dataset.display()
    );
    println!("manifest: {}", dir.join("curation_manifest.json").display());
    Ok(())
}
