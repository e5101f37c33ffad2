pub mod ablate;
pub mod curate;
pub mod eval_cmd;
pub mod gen_data;
pub mod sample;
pub mod train;
pub mod viz_attn;

use crate::CliError;
use std::path::Path;

/// Load a dataset directory, classifying a missing/invalid path as a usage
/// error.
pub fn load_dataset_checked(
    dir: &Path,
) -> Result<Vec<identikit_core::synthetic::IdentityRecord>, CliError> {
    crate::config::require_exists(dir, "dataset")?;
    identikit_core::storage::load_dataset(dir)
        .map_err(|e| crate::usage(format!("dataset {}: {e}", dir.display())))
}

/// Train or load the recognition probe shared by eval-style commands.
/// Without `--probe`, a probe is trained on freshly generated identities
/// (drawn from a far-away seed region so they stay disjoint from any
/// dataset seeds in use) and saved into the run dir for reuse.
pub fn obtain_probe(
    probe_path: Option<&Path>,
    image_size: usize,
    probe_seed: u64,
    run_dir: &Path,
) -> Result<identikit_core::eval::Probe<f32>, CliError> {
    use identikit_core::eval::{probe_from_checkpoint, probe_to_checkpoint, train_probe};
    if let Some(path) = probe_path {
        crate::config::require_exists(path, "probe checkpoint")?;
        let probe = probe_from_checkpoint::<f32>(path)
            .map_err(|e| crate::usage(format!("probe {}: {e}", path.display())))?;
        return Ok(probe);
    }
    let latents = identikit_core::synthetic::sample_distinct_identities(
        14,
        probe_seed ^ 0x9E3779B97F4A7C15,
        0.05,
        0.25,
    )?;
    let records = identikit_core::synthetic::generate_dataset_from_latents(
        &latents,
        30,
        probe_seed ^ 0x517CC1B727220A95,
        image_size,
    )?;
    let cfg = identikit_core::eval::ProbeTrainConfig {
        steps: 1200,
        ..identikit_core::eval::ProbeTrainConfig::quick(image_size, probe_seed)
    };
    let probe = train_probe::<f32>(&records, &cfg)?;
    eprintln!(
        "trained probe: holdout accuracy {:.3} over {} identities",
        probe.holdout_accuracy, probe.n_classes
    );
    probe_to_checkpoint(&probe, &cfg, &run_dir.join("probe.ckpt"))?;
    Ok(probe)
}
