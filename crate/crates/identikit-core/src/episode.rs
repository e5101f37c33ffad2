//! Few-to-many training episodes: a small input subset and a larger target
//! set drawn from one identity's images.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synthetic::{IdentityRecord, RenderedFace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Targets are `n_targets` faces drawn from the whole record; inputs may
    /// appear among them (the 3-8 setting).
    All,
    /// Targets exclude the inputs.
    Disjoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_inputs_min: usize,
    pub n_inputs_max: usize,
    pub n_targets: usize,
    pub target_mode: TargetMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_inputs_min: 1,
            n_inputs_max: 3,
            n_targets: 8,
            target_mode: TargetMode::All,
        }
    }
}

impl EpisodeConfig {
    /// Standard validation: under `All` mode the target set must be strictly
    /// larger than any input set, which is the few-to-many contract.
    /// Degenerate configurations (ablation baselines such as one-to-one
    /// reconstruction) are built with [`EpisodeConfig::unchecked`].
    pub fn validate(&self) -> Result<()> {
        if self.n_inputs_min == 0 || self.n_inputs_min > self.n_inputs_max {
            return Err(Error::Config(format!(
                "bad input range {}..={}",
                self.n_inputs_min, self.n_inputs_max
            )));
        }
        if self.n_targets == 0 {
            return Err(Error::Config("n_targets must be at least 1".into()));
        }
        if self.target_mode == TargetMode::All && self.n_inputs_max >= self.n_targets {
            return Err(Error::Config(format!(
                "few-to-many requires max inputs {} < targets {}",
                self.n_inputs_max, self.n_targets
            )));
        }
        Ok(())
    }

    pub fn new(
        n_inputs_min: usize,
        n_inputs_max: usize,
        n_targets: usize,
        target_mode: TargetMode,
    ) -> Result<Self> {
        let cfg = EpisodeConfig {
            n_inputs_min,
            n_inputs_max,
            n_targets,
            target_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Bypass the few-to-many check (ablation baselines only).
    pub fn unchecked(
        n_inputs_min: usize,
        n_inputs_max: usize,
        n_targets: usize,
        target_mode: TargetMode,
    ) -> Self {
        EpisodeConfig {
            n_inputs_min,
            n_inputs_max,
            n_targets,
            target_mode,
        }
    }
}

/// One training episode over a single identity.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub inputs: Vec<&'a RenderedFace>,
    pub targets: Vec<&'a RenderedFace>,
    pub identity_id: usize,
}

/// Draw an episode from one identity. Inputs are uniform without
/// replacement; targets are a uniform subset of the requested size, either
/// over all faces (`All`) or excluding the inputs (`Disjoint`).
pub fn sample_episode<'a>(
    record: &'a IdentityRecord,
    config: &EpisodeConfig,
    rng_seed: u64,
) -> Result<Episode<'a>> {
    let n = record.faces.len();
    let needed = match config.target_mode {
        TargetMode::All => config.n_targets.max(config.n_inputs_max),
        TargetMode::Disjoint => config.n_targets + config.n_inputs_max,
    };
    if n < needed {
        return Err(Error::Config(format!(
            "identity {} has {n} faces, episode needs {needed}",
            record.identity_id
        )));
    }

    let mut rng = rng::stream(rng_seed, rng::lane::DATA);
    let n_inputs = rng.random_range(config.n_inputs_min..=config.n_inputs_max);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let input_idx: Vec<usize> = order[..n_inputs].to_vec();

    let target_idx: Vec<usize> = match config.target_mode {
        TargetMode::All => {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all[..config.n_targets].to_vec()
        }
        TargetMode::Disjoint => {
            let mut rest: Vec<usize> = order[n_inputs..].to_vec();
            rest.shuffle(&mut rng);
            rest[..config.n_targets].to_vec()
        }
    };

    Ok(Episode {
        inputs: input_idx.iter().map(|&i| &record.faces[i]).collect(),
        targets: target_idx.iter().map(|&i| &record.faces[i]).collect(),
        identity_id: record.identity_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_dataset;

    fn record() -> IdentityRecord {
        generate_dataset(1, 8, 3).unwrap().remove(0)
    }

    #[test]
    fn default_config_keeps_targets_larger_than_inputs() {
        let rec = record();
        let cfg = EpisodeConfig::default();
        cfg.validate().unwrap();
        for seed in 0..50 {
            let ep = sample_episode(&rec, &cfg, seed).unwrap();
            assert!((1..=3).contains(&ep.inputs.len()));
            assert_eq!(ep.targets.len(), 8);
            assert!(ep.targets.len() > ep.inputs.len());
            assert_eq!(ep.identity_id, rec.identity_id);
        }
    }

    #[test]
    fn fixed_input_count_mode() {
        let rec = record();
        let cfg = EpisodeConfig::new(3, 3, 8, TargetMode::All).unwrap();
        let ep = sample_episode(&rec, &cfg, 1).unwrap();
        assert_eq!(ep.inputs.len(), 3);
        assert_eq!(ep.targets.len(), 8);
    }

    #[test]
    fn disjoint_mode_excludes_inputs() {
        let rec = record();
        let cfg = EpisodeConfig::new(1, 3, 4, TargetMode::Disjoint).unwrap();
        for seed in 0..50 {
            let ep = sample_episode(&rec, &cfg, seed).unwrap();
            for t in &ep.targets {
                for i in &ep.inputs {
                    assert!(!std::ptr::eq(*t, *i), "target overlaps input");
                }
            }
        }
    }

    #[test]
    fn insufficient_faces_is_an_error() {
        let rec = generate_dataset(1, 4, 3).unwrap().remove(0);
        let cfg = EpisodeConfig::default();
        assert!(sample_episode(&rec, &cfg, 0).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(EpisodeConfig::new(0, 3, 8, TargetMode::All).is_err());
        assert!(EpisodeConfig::new(3, 1, 8, TargetMode::All).is_err());
        assert!(EpisodeConfig::new(1, 8, 8, TargetMode::All).is_err());
        // The same shape is constructible for ablations.
        let cfg = EpisodeConfig::unchecked(1, 1, 1, TargetMode::All);
        assert_eq!(cfg.n_targets, 1);
    }

    #[test]
    fn input_count_is_uniform_and_deterministic() {
        let rec = record();
        let cfg = EpisodeConfig::default();

        let a = sample_episode(&rec, &cfg, 123).unwrap();
        let b = sample_episode(&rec, &cfg, 123).unwrap();
        assert_eq!(a.inputs.len(), b.inputs.len());
        assert!(a
            .inputs
            .iter()
            .zip(&b.inputs)
            .all(|(x, y)| std::ptr::eq(*x, *y)));

        // Monte-Carlo oracle: each count lands in [0.30, 0.37] over 10k draws.
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let ep = sample_episode(&rec, &cfg, seed).unwrap();
            counts[ep.inputs.len()] += 1;
        }
        for k in 1..=3 {
            let freq = counts[k] as f64 / 10_000.0;
            assert!(
                (0.30..=0.37).contains(&freq),
                "input count {k} frequency {freq}"
            );
        }
    }
}
