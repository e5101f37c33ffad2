//! Config plumbing shared by all subcommands.
//!
//! Every subcommand resolves its parameters in three layers: built-in
//! defaults, then an optional flat TOML config file, then CLI flags. The
//! fully resolved struct is written as `resolved.toml` into the run
//! directory; rerunning with `--config resolved.toml` reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{usage, CliError};
use identikit_core::encoder::EncoderConfig;
use identikit_core::episode::{EpisodeConfig, TargetMode};
use identikit_core::flow::FlowConfig;
use identikit_core::mtd::MtdConfig;
use identikit_core::trainer::ModelConfig;

/// Load a flat TOML config file into a defaulted key struct.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Resolve the run directory: explicit override or
/// `<out_root>/<UTC-timestamp>-seed<seed>-<label>/`.
pub fn resolve_run_dir(
    run_dir: Option<PathBuf>,
    out_root: &Path,
    label: &str,
    seed: u64,
) -> Result<PathBuf, CliError> {
    let dir = match run_dir {
        Some(d) => d,
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
            out_root.join(format!("{stamp}-seed{seed}-{label}"))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| usage(format!("run dir {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Write the resolved config snapshot next to the outputs.
pub fn write_snapshot<T: Serialize>(dir: &Path, keys: &T) -> Result<(), CliError> {
    let text = toml::to_string_pretty(keys)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("snapshot serialization: {e}")))?;
    fs::write(dir.join("resolved.toml"), text)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("snapshot write: {e}")))?;
    Ok(())
}

pub fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Flat model-architecture keys mirrored one-to-one by CLI flags.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelKeys {
    pub image_size: usize,
    pub enc_queries: usize,
    pub enc_channels: usize,
    pub enc_cross_blocks: usize,
    pub enc_self_blocks: usize,
    pub enc_heads: usize,
    pub enc_patch: usize,
    pub extractor_depth: usize,
    pub max_images: usize,
    pub mtd_cross_blocks: usize,
    pub mtd_self_blocks: usize,
    pub mtd_patch: usize,
    pub flow_depth: usize,
    pub flow_width: usize,
    pub flow_heads: usize,
    pub flow_patch: usize,
    pub time_embed_dim: usize,
}

impl Default for ModelKeys {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let mtd = MtdConfig::default();
        let flow = FlowConfig::default();
        ModelKeys {
            image_size: enc.image_size,
            enc_queries: enc.queries,
            enc_channels: enc.channels,
            enc_cross_blocks: enc.n_cross_blocks,
            enc_self_blocks: enc.n_self_blocks,
            enc_heads: enc.n_heads,
            enc_patch: enc.patch_size,
            extractor_depth: enc.extractor_depth,
            max_images: enc.max_images,
            mtd_cross_blocks: mtd.n_cross_blocks,
            mtd_self_blocks: mtd.n_self_blocks,
            mtd_patch: mtd.patch_size,
            flow_depth: flow.depth,
            flow_width: flow.width,
            flow_heads: flow.n_heads,
            flow_patch: flow.patch_size,
            time_embed_dim: flow.time_embed_dim,
        }
    }
}

impl ModelKeys {
    pub fn to_model_config(&self, mask_ratio: f64) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                queries: self.enc_queries,
                channels: self.enc_channels,
                n_cross_blocks: self.enc_cross_blocks,
                n_self_blocks: self.enc_self_blocks,
                n_heads: self.enc_heads,
                patch_size: self.enc_patch,
                extractor_depth: self.extractor_depth,
                image_size: self.image_size,
                max_images: self.max_images,
            },
            mtd: MtdConfig {
                mask_ratio,
                n_cross_blocks: self.mtd_cross_blocks,
                n_self_blocks: self.mtd_self_blocks,
                patch_size: self.mtd_patch,
            },
            flow: FlowConfig {
                depth: self.flow_depth,
                width: self.flow_width,
                n_heads: self.flow_heads,
                patch_size: self.flow_patch,
                time_embed_dim: self.time_embed_dim,
            },
        }
    }
}

/// Shared clap flags mirroring [`ModelKeys`].
#[derive(Debug, Clone, clap::Args)]
pub struct ModelFlags {
    /// Square image side length
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Encoder query token count L
    #[arg(long)]
    pub enc_queries: Option<usize>,
    /// Encoder channel width C
    #[arg(long)]
    pub enc_channels: Option<usize>,
    /// Encoder cross-attention block count
    #[arg(long)]
    pub enc_cross_blocks: Option<usize>,
    /// Encoder self-attention block count
    #[arg(long)]
    pub enc_self_blocks: Option<usize>,
    /// Attention heads in the encoder
    #[arg(long)]
    pub enc_heads: Option<usize>,
    /// Encoder patch size
    #[arg(long)]
    pub enc_patch: Option<usize>,
    /// Feature-extractor self-attention depth
    #[arg(long)]
    pub extractor_depth: Option<usize>,
    /// Largest accepted input-set size
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Masked-decoder cross-attention block count
    #[arg(long)]
    pub mtd_cross_blocks: Option<usize>,
    /// Masked-decoder self-attention block count
    #[arg(long)]
    pub mtd_self_blocks: Option<usize>,
    /// Masked-decoder patch size
    #[arg(long)]
    pub mtd_patch: Option<usize>,
    /// Flow-decoder block count
    #[arg(long)]
    pub flow_depth: Option<usize>,
    /// Flow-decoder channel width
    #[arg(long)]
    pub flow_width: Option<usize>,
    /// Flow-decoder attention heads
    #[arg(long)]
    pub flow_heads: Option<usize>,
    /// Flow-decoder patch size
    #[arg(long)]
    pub flow_patch: Option<usize>,
    /// Sinusoidal time-embedding width
    #[arg(long)]
    pub time_embed_dim: Option<usize>,
}

impl ModelFlags {
    pub fn apply(&self, keys: &mut ModelKeys) {
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { keys.$f = v; } )* };
        }
        over!(
            image_size,
            enc_queries,
            enc_channels,
            enc_cross_blocks,
            enc_self_blocks,
            enc_heads,
            enc_patch,
            extractor_depth,
            max_images,
            mtd_cross_blocks,
            mtd_self_blocks,
            mtd_patch,
            flow_depth,
            flow_width,
            flow_heads,
            flow_patch,
            time_embed_dim
        );
    }
}

pub fn parse_target_mode(s: &str) -> Result<TargetMode, CliError> {
    match s {
        "all" => Ok(TargetMode::All),
        "disjoint" => Ok(TargetMode::Disjoint),
        other => Err(usage(format!(
            "target_mode {other} is not one of: all, disjoint"
        ))),
    }
}

pub fn episode_config(
    inputs_min: usize,
    inputs_max: usize,
    n_targets: usize,
    mode: TargetMode,
) -> Result<EpisodeConfig, CliError> {
    EpisodeConfig::new(inputs_min, inputs_max, n_targets, mode)
        .map_err(|e| usage(format!("episode config: {e}")))
}
