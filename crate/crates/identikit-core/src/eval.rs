//! Metrics: a small recognition probe whose embeddings stand in for a face
//! recognition network, cosine ID similarity, pose error, and a pose
//! regressor for scoring generated images that carry no ground truth.

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{Block, LayerNorm, Linear};
use crate::params::{init_normal, AdamW, Params, Session};
use crate::raster::{patchify, FloatImage, Rgb8Image};
use crate::rng;
use crate::scalar::{s, Scalar};
use crate::synthetic::{IdentityRecord, RenderParams, PITCH_RANGE, ROLL_RANGE, YAW_RANGE};

/// Sum of absolute yaw/pitch/roll differences in degrees.
pub fn pose_error(pred: (f64, f64, f64), gt: (f64, f64, f64)) -> f64 {
    crate::synthetic::pose_distance(pred, gt)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding length mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

fn l2_normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub channels: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub image_size: usize,
}

impl BackboneConfig {
    pub fn probe_default(image_size: usize) -> Self {
        BackboneConfig {
            channels: 32,
            patch_size: 8.min(image_size / 2),
            depth: 2,
            n_heads: 4,
            image_size,
        }
    }

    pub fn pose_default(image_size: usize) -> Self {
        BackboneConfig {
            channels: 32,
            patch_size: 4.min(image_size / 2),
            depth: 2,
            n_heads: 4,
            image_size,
        }
    }
}

/// Patch transformer with mean pooling: the shared trunk of the probe and
/// the pose regressor.
struct Backbone {
    config: BackboneConfig,
    embed: Linear,
    pos_name: String,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Backbone {
    fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
        prefix: &str,
        config: &BackboneConfig,
    ) -> Result<Self> {
        if config.image_size % config.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                config.image_size, config.patch_size
            )));
        }
        let pdim = config.patch_size * config.patch_size * 3;
        let n_tokens = (config.image_size / config.patch_size).pow(2);
        let embed = Linear::init(params, rng, &format!("{prefix}.embed"), pdim, config.channels);
        let pos_name = format!("{prefix}.pos");
        params.insert(&pos_name, init_normal(rng, n_tokens, config.channels));
        let blocks = (0..config.depth)
            .map(|i| {
                Block::init(
                    params,
                    rng,
                    &format!("{prefix}.blk{i}"),
                    config.channels,
                    config.n_heads,
                )
            })
            .collect();
        let norm = LayerNorm::init(params, &format!("{prefix}.norm"), config.channels);
        Ok(Backbone {
            config: config.clone(),
            embed,
            pos_name,
            blocks,
            norm,
        })
    }

    fn n_tokens(&self) -> usize {
        (self.config.image_size / self.config.patch_size).pow(2)
    }

    /// Normed token features (n_tokens x C) for one image.
    fn tokens_g<F: Scalar>(&self, sess: &mut Session<F>, img: &FloatImage) -> Result<NodeId> {
        if img.h != self.config.image_size || img.w != self.config.image_size {
            return Err(Error::shape(
                "backbone image",
                format!("{0}x{0}", self.config.image_size),
                format!("{}x{}", img.h, img.w),
            ));
        }
        let patches: Array2<F> = patchify(img, self.config.patch_size, -1.0, 1.0);
        let x = sess.graph.input(patches);
        let mut x = self.embed.forward(sess, x);
        let pos = sess.p(&self.pos_name);
        x = sess.graph.add(x, pos);
        for blk in &self.blocks {
            x = blk.forward_self(sess, x);
        }
        Ok(self.norm.forward(sess, x))
    }

    /// Mean-pooled 1 x C feature row (identity is a global property).
    fn pooled_g<F: Scalar>(&self, sess: &mut Session<F>, img: &FloatImage) -> Result<NodeId> {
        let x = self.tokens_g(sess, img)?;
        let n_tokens = self.n_tokens();
        let ones = sess
            .graph
            .input(Array2::from_elem((1, n_tokens), s::<F>(1.0 / n_tokens as f64)));
        Ok(sess.graph.matmul(ones, x))
    }

    /// Flattened 1 x (n_tokens * C) readout; keeps per-position information
    /// for geometric regression.
    fn flat_g<F: Scalar>(&self, sess: &mut Session<F>, img: &FloatImage) -> Result<NodeId> {
        let x = self.tokens_g(sess, img)?;
        Ok(sess.graph.flatten_rows(x))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Renders per identity held out for the accuracy check.
    pub holdout_per_id: usize,
    /// Random brightness scale range (1 +- this) applied during training;
    /// teaches invariance to the lighting gradient. 0 disables.
    pub brightness_aug: f64,
    pub backbone: BackboneConfig,
}

impl ProbeTrainConfig {
    pub fn quick(image_size: usize, seed: u64) -> Self {
        ProbeTrainConfig {
            steps: 800,
            lr: 1e-3,
            batch: 24,
            seed,
            holdout_per_id: 3,
            brightness_aug: 0.25,
            backbone: BackboneConfig::probe_default(image_size),
        }
    }
}

/// Identity recognition probe: classifier over its training identities,
/// embedding = L2-normalized penultimate (pooled, layer-normed) features.
pub struct Probe<F: Scalar> {
    pub params: Params<F>,
    backbone: Backbone,
    head: Linear,
    pub n_classes: usize,
    /// Top-1 accuracy on its own held-out renders.
    pub holdout_accuracy: f64,
}

impl<F: Scalar> Probe<F> {
    pub fn embedding_dim(&self) -> usize {
        self.backbone.config.channels
    }

    pub fn embed_float(&self, img: &FloatImage) -> Result<Vec<f64>> {
        let mut sess = Session::new(&self.params);
        let pooled = self.backbone.pooled_g(&mut sess, img)?;
        let mut v: Vec<f64> = sess
            .graph
            .value(pooled)
            .iter()
            .map(|x| x.to_f64().unwrap())
            .collect();
        l2_normalize(&mut v);
        Ok(v)
    }

    pub fn embed(&self, img: &Rgb8Image) -> Result<Vec<f64>> {
        self.embed_float(&FloatImage::from_u8(img))
    }

    pub fn classify(&self, img: &Rgb8Image) -> Result<usize> {
        let mut sess = Session::new(&self.params);
        let pooled = self.backbone.pooled_g(&mut sess, &FloatImage::from_u8(img))?;
        let logits = self.head.forward(&mut sess, pooled);
        let row = sess.graph.value(logits);
        let mut best = 0;
        for j in 1..row.dim().1 {
            if row[(0, j)] > row[(0, best)] {
                best = j;
            }
        }
        Ok(best)
    }
}

/// Train the recognition probe on `records` (class = index in the slice).
/// The last `holdout_per_id` renders of each identity are reserved for the
/// accuracy measurement.
pub fn train_probe<F: Scalar>(
    records: &[IdentityRecord],
    config: &ProbeTrainConfig,
) -> Result<Probe<F>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("probe needs training identities"));
    }
    let n_classes = records.len();
    let mut params: Params<F> = Params::new();
    let mut init_rng = rng::stream(config.seed, rng::lane::INIT);
    let backbone = Backbone::init(&mut params, &mut init_rng, "probe", &config.backbone)?;
    let head = Linear::init(
        &mut params,
        &mut init_rng,
        "probe.head",
        config.backbone.channels,
        n_classes,
    );

    let mut train_set = Vec::new();
    let mut holdout = Vec::new();
    for (class, rec) in records.iter().enumerate() {
        let n = rec.faces.len();
        let cut = n.saturating_sub(config.holdout_per_id).max(1);
        for (i, face) in rec.faces.iter().enumerate() {
            if i < cut {
                train_set.push((class, face));
            } else {
                holdout.push((class, face));
            }
        }
    }

    let mut opt: AdamW<F> = AdamW::new(config.lr);
    for step in 1..=config.steps {
        let mut step_rng = rng::step_stream(config.seed, rng::lane::DATA, step as u64);
        use rand::Rng;
        let mut sess = Session::new(&params);
        let mut rows = Vec::with_capacity(config.batch);
        let mut labels = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let (class, face) = train_set[step_rng.random_range(0..train_set.len())];
            let mut img = FloatImage::from_u8(&face.image);
            if config.brightness_aug > 0.0 {
                let f = 1.0
                    + step_rng.random_range(-config.brightness_aug..config.brightness_aug);
                for v in &mut img.data {
                    *v = (*v * f).clamp(0.0, 1.0);
                }
            }
            rows.push(backbone.pooled_g(&mut sess, &img)?);
            labels.push(class);
        }
        let pooled = sess.graph.concat_rows(&rows);
        let logits = head.forward(&mut sess, pooled);
        let loss = sess.graph.cross_entropy_mean(logits, &labels);
        let loss_value = sess.graph.scalar_value(loss).to_f64().unwrap();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: loss_value,
            });
        }
        let grads = sess.graph.backward(loss);
        let named = sess.grads_by_name(&grads);
        opt.step(&mut params, &named);
    }

    let mut probe = Probe {
        params,
        backbone,
        head,
        n_classes,
        holdout_accuracy: 0.0,
    };
    if !holdout.is_empty() {
        let correct = holdout
            .iter()
            .filter(|(class, face)| probe.classify(&face.image).unwrap() == *class)
            .count();
        probe.holdout_accuracy = correct as f64 / holdout.len() as f64;
    }
    Ok(probe)
}

/// Mean cosine similarity between a generated image's probe embedding and
/// each reference image's embedding.
pub fn id_similarity<F: Scalar>(
    generated: &FloatImage,
    references: &[&Rgb8Image],
    probe: &Probe<F>,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyInput("id_similarity needs references"));
    }
    let gen_embed = probe.embed_float(generated)?;
    let mut total = 0.0;
    for r in references {
        let e = probe.embed(r)?;
        total += cosine(&gen_embed, &e);
    }
    Ok(total / references.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub backbone: BackboneConfig,
}

impl PoseTrainConfig {
    pub fn quick(image_size: usize, seed: u64) -> Self {
        PoseTrainConfig {
            steps: 600,
            lr: 1e-3,
            batch: 24,
            seed,
            holdout_fraction: 0.15,
            backbone: BackboneConfig::pose_default(image_size),
        }
    }
}

/// Pose regressor: predicts (yaw, pitch, roll) from pixels, for scoring
/// generated images that carry no ground-truth render parameters.
pub struct PoseRegressor<F: Scalar> {
    pub params: Params<F>,
    backbone: Backbone,
    head: Linear,
    /// Per-axis mean absolute error (degrees) on held-out renders.
    pub holdout_mae: [f64; 3],
}

impl<F: Scalar> PoseRegressor<F> {
    pub fn estimate_float(&self, img: &FloatImage) -> Result<(f64, f64, f64)> {
        let mut sess = Session::new(&self.params);
        let flat = self.backbone.flat_g(&mut sess, img)?;
        let out = self.head.forward(&mut sess, flat);
        let v = sess.graph.value(out);
        let yaw = v[(0, 0)].to_f64().unwrap().clamp(-1.0, 1.0) * YAW_RANGE;
        let pitch = v[(0, 1)].to_f64().unwrap().clamp(-1.0, 1.0) * PITCH_RANGE;
        let roll = v[(0, 2)].to_f64().unwrap().clamp(-1.0, 1.0) * ROLL_RANGE;
        Ok((yaw, pitch, roll))
    }

    pub fn estimate(&self, img: &Rgb8Image) -> Result<(f64, f64, f64)> {
        self.estimate_float(&FloatImage::from_u8(img))
    }
}

fn pose_target<F: Scalar>(p: &RenderParams) -> Array2<F> {
    let mut t = Array2::zeros((1, 3));
    t[(0, 0)] = s(p.yaw / YAW_RANGE);
    t[(0, 1)] = s(p.pitch / PITCH_RANGE);
    t[(0, 2)] = s(p.roll / ROLL_RANGE);
    t
}

/// Train the pose regressor on renders with known parameters.
pub fn train_pose_regressor<F: Scalar>(
    records: &[IdentityRecord],
    config: &PoseTrainConfig,
) -> Result<PoseRegressor<F>> {
    let all: Vec<&crate::synthetic::RenderedFace> =
        records.iter().flat_map(|r| r.faces.iter()).collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("pose regressor needs renders"));
    }
    let cut = ((all.len() as f64) * (1.0 - config.holdout_fraction)).ceil() as usize;
    let (train_set, holdout) = all.split_at(cut.min(all.len()));

    let mut params: Params<F> = Params::new();
    let mut init_rng = rng::stream(config.seed, rng::lane::INIT);
    let backbone = Backbone::init(&mut params, &mut init_rng, "pose", &config.backbone)?;
    let flat_dim = backbone.n_tokens() * config.backbone.channels;
    let head = Linear::init(&mut params, &mut init_rng, "pose.head", flat_dim, 3);

    let mut opt: AdamW<F> = AdamW::new(config.lr);
    for step in 1..=config.steps {
        let mut step_rng = rng::step_stream(config.seed, rng::lane::DATA, step as u64);
        use rand::Rng;
        let mut sess = Session::new(&params);
        let mut rows = Vec::with_capacity(config.batch);
        let mut targets = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let face = train_set[step_rng.random_range(0..train_set.len())];
            rows.push(backbone.flat_g(&mut sess, &FloatImage::from_u8(&face.image))?);
            targets.push(pose_target::<F>(&face.params));
        }
        let pooled = sess.graph.concat_rows(&rows);
        let pred = head.forward(&mut sess, pooled);
        let mut target = Array2::zeros((targets.len(), 3));
        for (i, t) in targets.iter().enumerate() {
            target.row_mut(i).assign(&t.row(0));
        }
        let target = sess.graph.input(target);
        let diff = sess.graph.sub(pred, target);
        let sq = sess.graph.square(diff);
        let loss = sess.graph.mean_all(sq);
        let loss_value = sess.graph.scalar_value(loss).to_f64().unwrap();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: loss_value,
            });
        }
        let grads = sess.graph.backward(loss);
        let named = sess.grads_by_name(&grads);
        opt.step(&mut params, &named);
    }

    let mut reg = PoseRegressor {
        params,
        backbone,
        head,
        holdout_mae: [0.0; 3],
    };
    if !holdout.is_empty() {
        let mut err = [0.0; 3];
        for face in holdout {
            let (y, p, r) = reg.estimate(&face.image)?;
            err[0] += (y - face.params.yaw).abs();
            err[1] += (p - face.params.pitch).abs();
            err[2] += (r - face.params.roll).abs();
        }
        for e in &mut err {
            *e /= holdout.len() as f64;
        }
        reg.holdout_mae = err;
    }
    Ok(reg)
}

/// Serializable snapshot of probe/regressor weights (the curation CLI and
/// tests pass probes between stages via the checkpoint archive).
pub fn probe_to_checkpoint<F: Scalar>(
    probe: &Probe<F>,
    config: &ProbeTrainConfig,
    path: &std::path::Path,
) -> Result<()> {
    let manifest = crate::checkpoint::Manifest {
        kind: "probe".into(),
        step: config.steps,
        seed: config.seed,
        config_hash: crate::checkpoint::json_hash(&serde_json::to_value(config)?),
        train_config: serde_json::to_value(config)?,
        model_config: serde_json::json!({
            "backbone": config.backbone,
            "n_classes": probe.n_classes,
            "holdout_accuracy": probe.holdout_accuracy,
        }),
        init_checkpoint_hash: None,
        optimizer: crate::checkpoint::OptimizerInfo {
            name: "adamw".into(),
            lr: config.lr,
            betas: (0.9, 0.999),
            weight_decay: 0.01,
        },
        notes: IndexMap::new(),
    };
    crate::checkpoint::save(path, &probe.params, &IndexMap::new(), &manifest)
}

pub fn probe_from_checkpoint<F: Scalar>(path: &std::path::Path) -> Result<Probe<F>> {
    let ckpt = crate::checkpoint::load::<F>(path)?;
    if ckpt.manifest.kind != "probe" {
        return Err(Error::Checkpoint(format!(
            "expected a probe checkpoint, found kind {}",
            ckpt.manifest.kind
        )));
    }
    let backbone_cfg: BackboneConfig =
        serde_json::from_value(ckpt.manifest.model_config["backbone"].clone())?;
    let n_classes: usize = serde_json::from_value(ckpt.manifest.model_config["n_classes"].clone())?;
    let holdout_accuracy: f64 =
        serde_json::from_value(ckpt.manifest.model_config["holdout_accuracy"].clone())?;
    let mut params: Params<F> = Params::new();
    let mut init_rng = rng::stream(ckpt.manifest.seed, rng::lane::INIT);
    let backbone = Backbone::init(&mut params, &mut init_rng, "probe", &backbone_cfg)?;
    let head = Linear::init(
        &mut params,
        &mut init_rng,
        "probe.head",
        backbone_cfg.channels,
        n_classes,
    );
    let copied = params.load_matching(&ckpt.params);
    if copied.len() != params.len() {
        return Err(Error::Checkpoint("probe checkpoint incomplete".into()));
    }
    Ok(Probe {
        params,
        backbone,
        head,
        n_classes,
        holdout_accuracy,
    })
}
