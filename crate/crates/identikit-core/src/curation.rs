//! Video curation pipeline: split streams into identities by embedding
//! similarity, drop low-quality frames, cluster remaining frames by head
//! pose, and select a pose-diverse subset per identity under a pairwise
//! pose-gap constraint. Emitted identities land in the standard dataset
//! layout so the trainer consumes them directly.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cosine, Probe};
use crate::rng;
use crate::scalar::Scalar;
use crate::synthetic::{pose_distance, IdentityRecord, RenderedFace};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Cosine similarity to a clip centroid required to join the clip.
    pub sim_threshold: f64,
    /// Fraction of lowest-quality frames dropped per clip.
    pub drop_fraction: f64,
    /// Pose over-clustering factor (k-means k).
    pub n_pose_clusters: usize,
    /// Frames selected per emitted identity.
    pub n_select: usize,
    /// Minimum pairwise sum-abs pose difference among selected frames.
    pub min_pose_diff: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            sim_threshold: 0.6,
            drop_fraction: 0.2,
            n_pose_clusters: 16,
            n_select: 8,
            min_pose_diff: 15.0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_fraction) || self.drop_fraction == 0.0 {
            return Err(Error::Config(format!(
                "drop_fraction {} outside (0,1)",
                self.drop_fraction
            )));
        }
        if self.n_select > self.n_pose_clusters {
            return Err(Error::Config(format!(
                "n_select {} exceeds n_pose_clusters {}",
                self.n_select, self.n_pose_clusters
            )));
        }
        Ok(())
    }
}

/// Per-frame measurements driving the pipeline.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Unit-norm recognition embedding.
    pub embedding: Vec<f64>,
    /// Variance-of-Laplacian sharpness score.
    pub quality: f64,
    /// Ground-truth (yaw, pitch, roll); stands in for a pose estimator.
    pub pose: (f64, f64, f64),
}

/// Embed, score, and pose-tag every frame of a stream.
pub fn embed_frames<F: Scalar>(
    frames: &[RenderedFace],
    probe: &Probe<F>,
) -> Result<Vec<FrameRecord>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(FrameRecord {
                frame_index: i,
                embedding: probe.embed(&f.image)?,
                quality: f.image.laplacian_variance(),
                pose: f.params.pose(),
            })
        })
        .collect()
}

/// Greedy online identity split: each frame joins the first clip whose
/// centroid cosine similarity clears the threshold, else opens a new clip.
/// Centroids are running means renormalized to unit length.
pub fn cluster_identities(records: &[FrameRecord], sim_threshold: f64) -> Vec<Vec<usize>> {
    let mut clips: Vec<Vec<usize>> = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in records.iter().enumerate() {
        let mut joined = false;
        for (clip, sum) in clips.iter_mut().zip(sums.iter_mut()) {
            if cosine(sum, &rec.embedding) >= sim_threshold {
                clip.push(idx);
                for (s, e) in sum.iter_mut().zip(&rec.embedding) {
                    *s += e;
                }
                joined = true;
                break;
            }
        }
        if !joined {
            clips.push(vec![idx]);
            sums.push(rec.embedding.clone());
        }
    }
    clips
}

/// Drop the floor(drop_fraction * n) lowest-quality members; ties broken by
/// dropping the lower frame index first.
pub fn quality_filter(clip: &[usize], records: &[FrameRecord], drop_fraction: f64) -> Vec<usize> {
    assert!(!clip.is_empty(), "quality_filter on empty clip");
    let n_drop = (drop_fraction * clip.len() as f64).floor() as usize;
    let mut order: Vec<usize> = clip.to_vec();
    order.sort_by(|&a, &b| {
        records[a]
            .quality
            .partial_cmp(&records[b].quality)
            .unwrap()
            .then(records[a].frame_index.cmp(&records[b].frame_index))
    });
    let mut kept: Vec<usize> = order[n_drop..].to_vec();
    kept.sort_by_key(|&i| records[i].frame_index);
    kept
}

/// k-means over (yaw,pitch,roll) with k-means++ seeding, at most 50
/// iterations, deterministic given the seed. k collapses to the clip size
/// when the clip is smaller.
pub fn pose_cluster(
    clip: &[usize],
    records: &[FrameRecord],
    n_clusters: usize,
    rng_seed: u64,
) -> Vec<usize> {
    assert!(!clip.is_empty(), "pose_cluster on empty clip");
    let k = n_clusters.min(clip.len()).max(1);
    let points: Vec<[f64; 3]> = clip
        .iter()
        .map(|&i| {
            let (y, p, r) = records[i].pose;
            [y, p, r]
        })
        .collect();
    let sqdist = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };

    let mut rng = rng::stream(rng_seed, rng::lane::EVAL);
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sqdist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centers.push(points[next]);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sqdist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 3]> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                for axis in 0..3 {
                    center[axis] =
                        members.iter().map(|m| m[axis]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    assignment
}

/// Within-cluster sum of squared pose distances for an assignment.
pub fn pose_cluster_objective(
    clip: &[usize],
    records: &[FrameRecord],
    assignment: &[usize],
) -> f64 {
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let points: Vec<[f64; 3]> = clip
        .iter()
        .map(|&i| {
            let (y, p, r) = records[i].pose;
            [y, p, r]
        })
        .collect();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&[f64; 3]> = points
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = [0.0; 3];
        for m in &members {
            for axis in 0..3 {
                mean[axis] += m[axis];
            }
        }
        for v in &mut mean {
            *v /= members.len() as f64;
        }
        for m in &members {
            total += (m[0] - mean[0]).powi(2) + (m[1] - mean[1]).powi(2) + (m[2] - mean[2]).powi(2);
        }
    }
    total
}

/// Selection outcome for one clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Selection {
    /// Frame indices (into the clip's source stream), one per used cluster.
    Selected(Vec<usize>),
    Infeasible { reason: String },
}

/// Pick `n_select` frames, at most one per pose cluster, every pair at
/// least `min_pose_diff` apart in sum-abs pose distance. Greedy by quality
/// first; if greedy fails, a budgeted exhaustive search settles
/// feasibility (complete for desk-scale instances, so decisions match a
/// brute-force oracle).
pub fn select_frames(
    clip: &[usize],
    records: &[FrameRecord],
    assignment: &[usize],
    config: &CurationConfig,
) -> Selection {
    assert_eq!(clip.len(), assignment.len(), "assignment must cover clip");
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);

    // Candidates per cluster, best quality first (frame index breaks ties).
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &frame) in clip.iter().enumerate() {
        clusters[assignment[pos]].push(frame);
    }
    clusters.retain(|c| !c.is_empty());
    for c in clusters.iter_mut() {
        c.sort_by(|&a, &b| {
            records[b]
                .quality
                .partial_cmp(&records[a].quality)
                .unwrap()
                .then(records[a].frame_index.cmp(&records[b].frame_index))
        });
    }
    if clusters.len() < config.n_select {
        return Selection::Infeasible {
            reason: format!(
                "{} non-empty pose clusters, need {}",
                clusters.len(),
                config.n_select
            ),
        };
    }
    // Cluster visit order: best-quality representative first.
    clusters.sort_by(|a, b| {
        records[b[0]]
            .quality
            .partial_cmp(&records[a[0]].quality)
            .unwrap()
            .then(records[a[0]].frame_index.cmp(&records[b[0]].frame_index))
    });

    let compatible = |sel: &[usize], cand: usize| {
        sel.iter().all(|&s| {
            pose_distance(records[s].pose, records[cand].pose) >= config.min_pose_diff
        })
    };

    // Greedy pass: best frame of each cluster in order.
    let mut selected: Vec<usize> = Vec::with_capacity(config.n_select);
    for cluster in &clusters {
        if selected.len() == config.n_select {
            break;
        }
        if compatible(&selected, cluster[0]) {
            selected.push(cluster[0]);
        }
    }
    if selected.len() == config.n_select {
        return Selection::Selected(sorted(selected));
    }

    // Complete search with a node budget: clusters in order, each either
    // contributes one candidate or is skipped.
    let mut budget = 200_000usize;
    let mut stack: Vec<usize> = Vec::with_capacity(config.n_select);
    if dfs(&clusters, records, config, &mut stack, 0, &mut budget) {
        return Selection::Selected(sorted(stack));
    }
    if budget == 0 {
        Selection::Infeasible {
            reason: "search budget exhausted".into(),
        }
    } else {
        Selection::Infeasible {
            reason: "no pose-diverse subset satisfies the pairwise gap".into(),
        }
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn dfs(
    clusters: &[Vec<usize>],
    records: &[FrameRecord],
    config: &CurationConfig,
    selected: &mut Vec<usize>,
    next_cluster: usize,
    budget: &mut usize,
) -> bool {
    if selected.len() == config.n_select {
        return true;
    }
    if *budget == 0 {
        return false;
    }
    // Not enough clusters left to finish.
    if clusters.len() - next_cluster < config.n_select - selected.len() {
        return false;
    }
    for (offset, cluster) in clusters[next_cluster..].iter().enumerate() {
        for &cand in cluster {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            let ok = selected.iter().all(|&s| {
                pose_distance(records[s].pose, records[cand].pose) >= config.min_pose_diff
            });
            if ok {
                selected.push(cand);
                if dfs(clusters, records, config, selected, next_cluster + offset + 1, budget) {
                    return true;
                }
                selected.pop();
            }
        }
        // Skipping this cluster is handled by advancing `offset`, but only
        // while enough clusters remain.
        if clusters.len() - (next_cluster + offset + 1) < config.n_select - selected.len() {
            break;
        }
    }
    false
}

/// Outcome record for one clip of one source video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipReport {
    pub source: String,
    pub clip_index: usize,
    pub n_frames: usize,
    pub n_after_quality: usize,
    /// Selected frame indices into the source stream (empty on failure).
    pub selected_frames: Vec<usize>,
    /// Pose cluster of each selected frame.
    pub selected_clusters: Vec<usize>,
    /// Pairwise sum-abs pose differences of the selected frames.
    pub pose_diff_matrix: Vec<Vec<f64>>,
    pub passed: bool,
    pub failure_reason: Option<String>,
    /// Output identity id when emitted.
    pub identity_id: Option<usize>,
}

impl ClipReport {
    /// Constraint check against the manifest's own numbers.
    pub fn constraints_hold(&self, config: &CurationConfig) -> bool {
        if !self.passed {
            return true;
        }
        if self.selected_frames.len() != config.n_select {
            return false;
        }
        let mut seen = std::collections::HashSet::new();
        if !self.selected_clusters.iter().all(|c| seen.insert(*c)) {
            return false;
        }
        for i in 0..self.pose_diff_matrix.len() {
            for j in 0..i {
                if self.pose_diff_matrix[i][j] < config.min_pose_diff {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationManifest {
    pub config: CurationConfig,
    pub seed: u64,
    pub clips: Vec<ClipReport>,
    pub n_emitted: usize,
}

/// Full pipeline over one stream's frames. Returns the per-clip reports and
/// the emitted identities' face sets (frame indices resolved).
pub fn curate_stream<F: Scalar>(
    source: &str,
    frames: &[RenderedFace],
    probe: &Probe<F>,
    config: &CurationConfig,
    rng_seed: u64,
) -> Result<(Vec<ClipReport>, Vec<Vec<usize>>)> {
    config.validate()?;
    let records = embed_frames(frames, probe)?;
    let clips = cluster_identities(&records, config.sim_threshold);

    let mut reports = Vec::new();
    let mut emitted = Vec::new();
    for (clip_index, clip) in clips.iter().enumerate() {
        let kept = quality_filter(clip, &records, config.drop_fraction);
        let assignment = pose_cluster(
            &kept,
            &records,
            config.n_pose_clusters,
            rng_seed.wrapping_add(clip_index as u64),
        );
        let selection = select_frames(&kept, &records, &assignment, config);
        let cluster_of = |frame: usize| -> usize {
            kept.iter()
                .position(|&f| f == frame)
                .map(|pos| assignment[pos])
                .unwrap()
        };
        match selection {
            Selection::Selected(sel) => {
                let matrix: Vec<Vec<f64>> = sel
                    .iter()
                    .map(|&a| {
                        sel.iter()
                            .map(|&b| pose_distance(records[a].pose, records[b].pose))
                            .collect()
                    })
                    .collect();
                reports.push(ClipReport {
                    source: source.to_string(),
                    clip_index,
                    n_frames: clip.len(),
                    n_after_quality: kept.len(),
                    selected_clusters: sel.iter().map(|&f| cluster_of(f)).collect(),
                    pose_diff_matrix: matrix,
                    selected_frames: sel.clone(),
                    passed: true,
                    failure_reason: None,
                    identity_id: None,
                });
                emitted.push(sel);
            }
            Selection::Infeasible { reason } => {
                reports.push(ClipReport {
                    source: source.to_string(),
                    clip_index,
                    n_frames: clip.len(),
                    n_after_quality: kept.len(),
                    selected_frames: Vec::new(),
                    selected_clusters: Vec::new(),
                    pose_diff_matrix: Vec::new(),
                    passed: false,
                    failure_reason: Some(reason),
                    identity_id: None,
                });
            }
        }
    }
    Ok((reports, emitted))
}

/// Curate a set of named streams into identity records (dataset layout
/// ready) plus the machine-checkable manifest.
pub fn curate_videos<F: Scalar>(
    videos: &[(String, Vec<RenderedFace>)],
    probe: &Probe<F>,
    config: &CurationConfig,
    rng_seed: u64,
) -> Result<(CurationManifest, Vec<IdentityRecord>)> {
    let mut all_reports = Vec::new();
    let mut records = Vec::new();
    for (vi, (name, frames)) in videos.iter().enumerate() {
        let (mut reports, emitted) =
            curate_stream(name, frames, probe, config, rng_seed.wrapping_add(1000 * vi as u64))?;
        let mut emit_iter = emitted.into_iter();
        for report in &mut reports {
            if report.passed {
                let sel = emit_iter.next().expect("one selection per passed clip");
                let identity_id = records.len();
                report.identity_id = Some(identity_id);
                let faces: Vec<RenderedFace> = sel
                    .iter()
                    .map(|&f| {
                        let mut face = frames[f].clone();
                        face.identity_id = identity_id;
                        face
                    })
                    .collect();
                records.push(IdentityRecord {
                    identity_id,
                    latent: None,
                    faces,
                });
            }
        }
        all_reports.extend(reports);
    }
    let manifest = CurationManifest {
        config: config.clone(),
        seed: rng_seed,
        n_emitted: records.len(),
        clips: all_reports,
    };
    Ok((manifest, records))
}

/// Frame-weighted purity of an identity split against ground-truth labels:
/// the fraction of frames lying in the majority-identity of their clip.
pub fn split_purity(clips: &[Vec<usize>], frames: &[RenderedFace]) -> f64 {
    let mut majority = 0usize;
    let mut total = 0usize;
    for clip in clips {
        let mut counts: IndexMap<usize, usize> = IndexMap::new();
        for &idx in clip {
            *counts.entry(frames[idx].identity_id).or_insert(0) += 1;
        }
        majority += counts.values().copied().max().unwrap_or(0);
        total += clip.len();
    }
    if total == 0 {
        return 1.0;
    }
    majority as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_at(idx: usize, pose: (f64, f64, f64), quality: f64, embedding: Vec<f64>) -> FrameRecord {
        FrameRecord {
            frame_index: idx,
            embedding,
            quality,
            pose,
        }
    }

    #[test]
    fn identical_embeddings_form_one_clip() {
        let records: Vec<FrameRecord> = (0..6)
            .map(|i| frame_at(i, (0.0, 0.0, 0.0), 1.0, vec![1.0, 0.0]))
            .collect();
        let clips = cluster_identities(&records, 0.6);
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].len(), 6);
    }

    #[test]
    fn orthogonal_groups_split_at_default_threshold() {
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(frame_at(i, (0.0, 0.0, 0.0), 1.0, vec![1.0, 0.0]));
        }
        for i in 4..8 {
            records.push(frame_at(i, (0.0, 0.0, 0.0), 1.0, vec![0.0, 1.0]));
        }
        let clips = cluster_identities(&records, 0.6);
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[0], vec![0, 1, 2, 3]);
        assert_eq!(clips[1], vec![4, 5, 6, 7]);
    }

    #[test]
    fn quality_filter_drops_lowest_with_tie_rule() {
        let records: Vec<FrameRecord> = (0..10)
            .map(|i| frame_at(i, (0.0, 0.0, 0.0), (i % 5) as f64, vec![1.0]))
            .collect();
        let clip: Vec<usize> = (0..10).collect();
        let kept = quality_filter(&clip, &records, 0.2);
        assert_eq!(kept.len(), 8);
        // Qualities 0 appear at frames 0 and 5; the tie rule drops the
        // lower frame indices first.
        assert!(!kept.contains(&0));
        assert!(!kept.contains(&5));

        // floor(0.2 * 4) = 0: nothing dropped.
        let small: Vec<usize> = (0..4).collect();
        assert_eq!(quality_filter(&small, &records, 0.2).len(), 4);

        // Oracle: kept set equals the quality-sorted suffix.
        let mut by_quality: Vec<usize> = clip.clone();
        by_quality.sort_by(|&a, &b| {
            records[a]
                .quality
                .partial_cmp(&records[b].quality)
                .unwrap()
                .then(a.cmp(&b))
        });
        let expect: std::collections::HashSet<usize> = by_quality[2..].iter().copied().collect();
        let got: std::collections::HashSet<usize> = kept.iter().copied().collect();
        assert_eq!(expect, got);
    }

    #[test]
    fn pose_clustering_separated_and_degenerate_cases() {
        // 16 well-separated poses with k=16 end up in singleton clusters.
        let records: Vec<FrameRecord> = (0..16)
            .map(|i| {
                frame_at(
                    i,
                    ((i as f64) * 5.0 - 40.0, 0.0, 0.0),
                    1.0,
                    vec![1.0],
                )
            })
            .collect();
        let clip: Vec<usize> = (0..16).collect();
        let assignment = pose_cluster(&clip, &records, 16, 7);
        let distinct: std::collections::HashSet<usize> = assignment.iter().copied().collect();
        assert_eq!(distinct.len(), 16);

        // k = 1 puts everything together.
        let assignment = pose_cluster(&clip, &records, 1, 7);
        assert!(assignment.iter().all(|&a| a == 0));

        // Determinism.
        assert_eq!(
            pose_cluster(&clip, &records, 4, 9),
            pose_cluster(&clip, &records, 4, 9)
        );
    }

    #[test]
    fn kmeans_beats_random_assignments() {
        let mut rng = crate::rng::stream(33, 0);
        let records: Vec<FrameRecord> = (0..30)
            .map(|i| {
                frame_at(
                    i,
                    (
                        rng.random_range(-45.0..45.0),
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-20.0..20.0),
                    ),
                    1.0,
                    vec![1.0],
                )
            })
            .collect();
        let clip: Vec<usize> = (0..30).collect();
        let assignment = pose_cluster(&clip, &records, 4, 11);
        let objective = pose_cluster_objective(&clip, &records, &assignment);
        for trial in 0..100 {
            let mut trial_rng = crate::rng::stream(1000 + trial, 0);
            let random: Vec<usize> = (0..30).map(|_| trial_rng.random_range(0..4)).collect();
            let random_obj = pose_cluster_objective(&clip, &records, &random);
            assert!(
                objective <= random_obj + 1e-9,
                "kmeans {objective} worse than random {random_obj}"
            );
        }
    }

    #[test]
    fn selection_succeeds_on_separated_clusters_and_fails_on_identical_poses() {
        let config = CurationConfig::default();
        // 16 poses pairwise >= 20 degrees apart.
        let records: Vec<FrameRecord> = (0..16)
            .map(|i| frame_at(i, ((i as f64) * 20.0 - 150.0, 0.0, 0.0), 1.0, vec![1.0]))
            .collect();
        let clip: Vec<usize> = (0..16).collect();
        let assignment: Vec<usize> = (0..16).collect();
        match select_frames(&clip, &records, &assignment, &config) {
            Selection::Selected(sel) => {
                assert_eq!(sel.len(), 8);
                for (i, &a) in sel.iter().enumerate() {
                    for &b in &sel[..i] {
                        assert!(pose_distance(records[a].pose, records[b].pose) >= 15.0);
                    }
                }
            }
            Selection::Infeasible { reason } => panic!("separated case infeasible: {reason}"),
        }

        // All frames at one pose: unsatisfiable, reported not crashed.
        let same: Vec<FrameRecord> = (0..16)
            .map(|i| frame_at(i, (1.0, 2.0, 3.0), 1.0, vec![1.0]))
            .collect();
        let assignment: Vec<usize> = (0..16).collect();
        match select_frames(&clip, &same, &assignment, &config) {
            Selection::Infeasible { .. } => {}
            Selection::Selected(_) => panic!("identical poses cannot satisfy the gap"),
        }
    }

    /// Brute-force feasibility oracle over all C(n, n_select) subsets.
    fn feasible_by_brute_force(
        clip: &[usize],
        records: &[FrameRecord],
        assignment: &[usize],
        config: &CurationConfig,
    ) -> bool {
        let n = clip.len();
        let mut chosen: Vec<usize> = Vec::new();
        fn rec(
            start: usize,
            chosen: &mut Vec<usize>,
            n: usize,
            clip: &[usize],
            records: &[FrameRecord],
            assignment: &[usize],
            config: &CurationConfig,
        ) -> bool {
            if chosen.len() == config.n_select {
                let mut clusters = std::collections::HashSet::new();
                for &pos in chosen.iter() {
                    if !clusters.insert(assignment[pos]) {
                        return false;
                    }
                }
                for (i, &a) in chosen.iter().enumerate() {
                    for &b in &chosen[..i] {
                        if pose_distance(records[clip[a]].pose, records[clip[b]].pose)
                            < config.min_pose_diff
                        {
                            return false;
                        }
                    }
                }
                return true;
            }
            for pos in start..n {
                chosen.push(pos);
                if rec(pos + 1, chosen, n, clip, records, assignment, config) {
                    return true;
                }
                chosen.pop();
            }
            false
        }
        rec(0, &mut chosen, n, clip, records, assignment, config)
    }

    #[test]
    fn selection_feasibility_matches_brute_force_on_12_frame_instances() {
        let config = CurationConfig::default();
        let mut agree_feasible = 0;
        let mut agree_infeasible = 0;
        for trial in 0..60u64 {
            let mut rng = crate::rng::stream(500 + trial, 0);
            let records: Vec<FrameRecord> = (0..12)
                .map(|i| {
                    frame_at(
                        i,
                        (
                            rng.random_range(-45.0..45.0),
                            rng.random_range(-30.0..30.0),
                            rng.random_range(-20.0..20.0),
                        ),
                        rng.random_range(0.0..10.0),
                        vec![1.0],
                    )
                })
                .collect();
            let clip: Vec<usize> = (0..12).collect();
            let assignment: Vec<usize> = (0..12).map(|_| rng.random_range(0..10)).collect();
            let got = matches!(
                select_frames(&clip, &records, &assignment, &config),
                Selection::Selected(_)
            );
            let want = feasible_by_brute_force(&clip, &records, &assignment, &config);
            assert_eq!(got, want, "trial {trial} disagrees with brute force");
            if want {
                agree_feasible += 1;
            } else {
                agree_infeasible += 1;
            }
        }
        // The trial distribution must exercise both outcomes.
        assert!(agree_feasible > 5, "only {agree_feasible} feasible trials");
        assert!(
            agree_infeasible > 5,
            "only {agree_infeasible} infeasible trials"
        );
    }
}
