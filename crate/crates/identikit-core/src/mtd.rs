//! Masked transformer decoder.
//!
//! The decoder sees the identity representation plus a heavily masked target
//! image: visible patches are embedded, hidden positions get a shared
//! learned mask token, and cross-attention blocks pull identity information
//! out of the representation (keys/values from rep). The L1 loss is
//! restricted to the foreground mask, so backgrounds are never learned.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{Block, LayerNorm, Linear};
use crate::params::{init_normal, Params, Session};
use crate::raster::{mask_to_patch_layout, patch_count, patchify, unpatchify, FloatImage};
use crate::rng;
use crate::scalar::{s, Scalar};
use crate::synthetic::RenderedFace;

/// Per-token visibility mask. `visible.len()` is the token count; exactly
/// `max(1, round((1 - ratio) * n))` entries are true.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSpec {
    pub visible: Vec<bool>,
    pub ratio: f64,
}

impl MaskSpec {
    pub fn n_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// Number of visible tokens forced by a mask ratio: at least one token
/// always stays visible so the decoder is never fully blind.
pub fn visible_count(n_tokens: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n_tokens as f64).round() as usize).max(1)
}

/// Uniformly random visible subset of the forced size.
pub fn sample_mask(n_tokens: usize, ratio: f64, rng_seed: u64) -> Result<MaskSpec> {
    if n_tokens == 0 {
        return Err(Error::Range("n_tokens must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Range(format!("mask ratio {ratio} outside (0,1)")));
    }
    let k = visible_count(n_tokens, ratio);
    let mut rng = rng::stream(rng_seed, rng::lane::MASK);
    let mut idx: Vec<usize> = (0..n_tokens).collect();
    idx.shuffle(&mut rng);
    let mut visible = vec![false; n_tokens];
    for &i in idx.iter().take(k) {
        visible[i] = true;
    }
    Ok(MaskSpec { visible, ratio })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtdConfig {
    pub mask_ratio: f64,
    pub n_cross_blocks: usize,
    pub n_self_blocks: usize,
    pub patch_size: usize,
}

impl Default for MtdConfig {
    fn default() -> Self {
        MtdConfig {
            mask_ratio: 0.95,
            n_cross_blocks: 6,
            n_self_blocks: 2,
            patch_size: 4,
        }
    }
}

impl MtdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio) || self.mask_ratio == 0.0 {
            return Err(Error::Config(format!(
                "mask_ratio {} outside (0,1)",
                self.mask_ratio
            )));
        }
        Ok(())
    }
}

pub struct MtdDecoder {
    pub config: MtdConfig,
    pub image_size: usize,
    patch_embed: Linear,
    pos_name: String,
    mask_token_name: String,
    cross_blocks: Vec<Block>,
    self_blocks: Vec<Block>,
    out_norm: LayerNorm,
    head: Linear,
}

impl MtdDecoder {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
        config: &MtdConfig,
        image_size: usize,
        channels: usize,
        n_heads: usize,
    ) -> Result<Self> {
        config.validate()?;
        if image_size % config.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {image_size} not divisible by patch {}",
                config.patch_size
            )));
        }
        let pdim = config.patch_size * config.patch_size * 3;
        let n_tokens = patch_count(image_size, image_size, config.patch_size);

        let patch_embed = Linear::init(params, rng, "mtd.embed", pdim, channels);
        let pos_name = "mtd.pos".to_string();
        params.insert(&pos_name, init_normal(rng, n_tokens, channels));
        let mask_token_name = "mtd.mask_token".to_string();
        params.insert(&mask_token_name, init_normal(rng, 1, channels));
        let cross_blocks = (0..config.n_cross_blocks)
            .map(|i| Block::init(params, rng, &format!("mtd.cross{i}"), channels, n_heads))
            .collect();
        let self_blocks = (0..config.n_self_blocks)
            .map(|i| Block::init(params, rng, &format!("mtd.self{i}"), channels, n_heads))
            .collect();
        let out_norm = LayerNorm::init(params, "mtd.out_norm", channels);
        let head = Linear::init(params, rng, "mtd.head", channels, pdim);

        Ok(MtdDecoder {
            config: config.clone(),
            image_size,
            patch_embed,
            pos_name,
            mask_token_name,
            cross_blocks,
            self_blocks,
            out_norm,
            head,
        })
    }

    pub fn n_tokens(&self) -> usize {
        patch_count(self.image_size, self.image_size, self.config.patch_size)
    }

    /// Decode on the graph; returns predicted pixels in the patch-token
    /// layout, [0,1] value space. Masked-out patch pixels never enter:
    /// their embeddings are multiplied by zero and replaced by the mask
    /// token before any attention runs.
    pub fn decode_g<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        rep: NodeId,
        target: &RenderedFace,
        mask: &MaskSpec,
    ) -> Result<NodeId> {
        let n_tokens = self.n_tokens();
        if mask.visible.len() != n_tokens {
            return Err(Error::shape(
                "mtd mask",
                format!("{n_tokens} tokens"),
                format!("{}", mask.visible.len()),
            ));
        }
        if target.image.h != self.image_size || target.image.w != self.image_size {
            return Err(Error::shape(
                "mtd target",
                format!("{0}x{0}", self.image_size),
                format!("{}x{}", target.image.h, target.image.w),
            ));
        }

        let float = FloatImage::from_u8(&target.image);
        let patches: Array2<F> = patchify(&float, self.config.patch_size, -1.0, 1.0);
        let x = sess.graph.input(patches);
        let embed = self.patch_embed.forward(sess, x);

        let channels = sess.graph.value(embed).dim().1;
        let vis = Array2::from_shape_fn((n_tokens, channels), |(i, _)| {
            if mask.visible[i] {
                F::one()
            } else {
                F::zero()
            }
        });
        let hid = vis.mapv(|v| F::one() - v);

        let kept = sess.graph.mul_mask(embed, vis);
        let mask_token = sess.p(&self.mask_token_name);
        let mask_rows = sess.graph.broadcast_row(mask_token, n_tokens);
        let filled = sess.graph.mul_mask(mask_rows, hid);
        let mut tokens = sess.graph.add(kept, filled);

        let pos = sess.p(&self.pos_name);
        tokens = sess.graph.add(tokens, pos);

        for blk in &self.cross_blocks {
            tokens = blk.forward_cross(sess, tokens, rep, None);
        }
        for blk in &self.self_blocks {
            tokens = blk.forward_self(sess, tokens);
        }
        let tokens = self.out_norm.forward(sess, tokens);
        Ok(self.head.forward(sess, tokens))
    }

    /// Inference decode to an image (values may leave [0,1] untrained).
    pub fn decode<F: Scalar>(
        &self,
        params: &Params<F>,
        rep: &Array2<F>,
        target: &RenderedFace,
        mask: &MaskSpec,
    ) -> Result<FloatImage> {
        let mut sess = Session::new(params);
        let rep = sess.graph.input(rep.clone());
        let out = self.decode_g(&mut sess, rep, target, mask)?;
        Ok(unpatchify(
            sess.graph.value(out),
            self.image_size,
            self.image_size,
            self.config.patch_size,
            0.0,
            1.0,
        ))
    }

    /// Foreground-masked L1 between a token-layout prediction and a target,
    /// on the graph: sum |pred - target| over foreground pixels and
    /// channels, divided by (3 * foreground pixel count).
    pub fn loss_g<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        pred_tokens: NodeId,
        target: &RenderedFace,
    ) -> Result<NodeId> {
        let fg_count = target.fg_mask.count();
        if fg_count == 0 {
            return Err(Error::EmptyInput("target has empty foreground mask"));
        }
        let float = FloatImage::from_u8(&target.image);
        let target_tokens: Array2<F> = patchify(&float, self.config.patch_size, 0.0, 1.0);
        let target_node = sess.graph.input(target_tokens);
        let diff = sess.graph.sub(pred_tokens, target_node);
        let absdiff = sess.graph.abs(diff);
        let fg: Array2<F> = mask_to_patch_layout(&target.fg_mask, self.config.patch_size);
        let masked = sess.graph.mul_mask(absdiff, fg);
        let total = sess.graph.sum_all(masked);
        Ok(sess.graph.scale(total, s(1.0 / (3.0 * fg_count as f64))))
    }
}

/// Foreground-masked L1 reconstruction error of a predicted image:
/// mean of |pred - target| over foreground pixels and channels.
pub fn mtd_loss(pred: &FloatImage, target: &RenderedFace) -> Result<f64> {
    if pred.h != target.image.h || pred.w != target.image.w {
        return Err(Error::shape(
            "mtd_loss",
            format!("{}x{}", target.image.h, target.image.w),
            format!("{}x{}", pred.h, pred.w),
        ));
    }
    let fg_count = target.fg_mask.count();
    if fg_count == 0 {
        return Err(Error::EmptyInput("target has empty foreground mask"));
    }
    let mut total = 0.0;
    for y in 0..pred.h {
        for x in 0..pred.w {
            if target.fg_mask.get(y, x) {
                for c in 0..3 {
                    let t = target.image.get(y, x, c) as f64 / 255.0;
                    total += (pred.get(y, x, c) - t).abs();
                }
            }
        }
    }
    Ok(total / (3.0 * fg_count as f64))
}

/// Mean foreground-masked L1 over an episode's target set.
pub fn mtd_episode_loss(preds: &[FloatImage], targets: &[&RenderedFace]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::EmptyInput("episode loss needs matching non-empty sets"));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += mtd_loss(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};
    use crate::rng::stream;
    use crate::synthetic::generate_dataset_sized;

    #[test]
    fn visible_counts_match_rounding_rule() {
        assert_eq!(visible_count(64, 0.95), 3);
        assert_eq!(visible_count(64, 0.99), 1);
        assert_eq!(visible_count(16, 0.95), 1);
        assert_eq!(visible_count(36, 0.85), 5);
        let m = sample_mask(64, 0.95, 0).unwrap();
        assert_eq!(m.n_visible(), 3);
        let m = sample_mask(64, 0.99, 0).unwrap();
        assert_eq!(m.n_visible(), 1);
    }

    #[test]
    fn mask_rejects_bad_ratio() {
        assert!(sample_mask(64, 1.0, 0).is_err());
        assert!(sample_mask(64, -0.1, 0).is_err());
        assert!(sample_mask(0, 0.5, 0).is_err());
    }

    #[test]
    fn mask_is_uniform_over_tokens() {
        // Monte-Carlo oracle: every token visible with frequency 3/64 +- 0.01.
        let mut counts = vec![0usize; 64];
        for seed in 0..10_000u64 {
            let m = sample_mask(64, 0.95, seed).unwrap();
            for (i, &v) in m.visible.iter().enumerate() {
                if v {
                    counts[i] += 1;
                }
            }
        }
        let expected = 3.0 / 64.0;
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / 10_000.0;
            assert!(
                (freq - expected).abs() <= 0.01,
                "token {i} frequency {freq}"
            );
        }
    }

    fn tiny_setup() -> (Encoder, MtdDecoder, Params<f64>, Vec<RenderedFace>) {
        let enc_cfg = EncoderConfig {
            queries: 3,
            channels: 8,
            n_cross_blocks: 1,
            n_self_blocks: 1,
            n_heads: 2,
            patch_size: 4,
            extractor_depth: 1,
            image_size: 8,
            max_images: 4,
        };
        let mtd_cfg = MtdConfig {
            mask_ratio: 0.75,
            n_cross_blocks: 2,
            n_self_blocks: 1,
            patch_size: 4,
        };
        let mut params = Params::new();
        let mut rng = stream(5, crate::rng::lane::INIT);
        let enc = Encoder::init(&mut params, &mut rng, &enc_cfg).unwrap();
        let dec = MtdDecoder::init(&mut params, &mut rng, &mtd_cfg, 8, 8, 2).unwrap();
        let faces = generate_dataset_sized(1, 4, 11, 8).unwrap().remove(0).faces;
        (enc, dec, params, faces)
    }

    #[test]
    fn decode_shape_matches_target() {
        let (_, dec, params, faces) = tiny_setup();
        let rep = Array2::from_elem((3, 8), 0.1);
        let mask = sample_mask(dec.n_tokens(), 0.75, 3).unwrap();
        let img = dec.decode(&params, &rep, &faces[0], &mask).unwrap();
        assert_eq!((img.h, img.w), (8, 8));
    }

    #[test]
    fn masked_pixels_never_affect_prediction() {
        let (_, dec, params, faces) = tiny_setup();
        let rep = Array2::from_elem((3, 8), 0.1);
        let mask = sample_mask(dec.n_tokens(), 0.75, 3).unwrap();
        let base = dec.decode(&params, &rep, &faces[0], &mask).unwrap();

        // Scribble over every pixel of every hidden patch.
        let mut vandalized = faces[0].clone();
        let grid = 8 / dec.config.patch_size;
        for (tok, &vis) in mask.visible.iter().enumerate() {
            if vis {
                continue;
            }
            let (py, px) = (tok / grid, tok % grid);
            for dy in 0..dec.config.patch_size {
                for dx in 0..dec.config.patch_size {
                    for c in 0..3 {
                        let y = py * dec.config.patch_size + dy;
                        let x = px * dec.config.patch_size + dx;
                        let v = vandalized.image.get(y, x, c);
                        vandalized.image.set(y, x, c, v.wrapping_add(101));
                    }
                }
            }
        }
        let after = dec.decode(&params, &rep, &vandalized, &mask).unwrap();
        assert_eq!(base.data, after.data, "hidden pixels leaked into decode");

        // A visible pixel, by contrast, does change the output.
        let vis_tok = mask.visible.iter().position(|&v| v).unwrap();
        let (py, px) = (vis_tok / grid, vis_tok % grid);
        let mut touched = faces[0].clone();
        let v = touched.image.get(py * 4, px * 4, 0);
        touched.image.set(py * 4, px * 4, 0, v.wrapping_add(101));
        let after = dec.decode(&params, &rep, &touched, &mask).unwrap();
        assert_ne!(base.data, after.data, "visible pixel had no effect");
    }

    #[test]
    fn rep_perturbation_changes_prediction() {
        let (_, dec, params, faces) = tiny_setup();
        let rep = Array2::from_elem((3, 8), 0.1);
        let mask = sample_mask(dec.n_tokens(), 0.75, 7).unwrap();
        let a = dec.decode(&params, &rep, &faces[0], &mask).unwrap();
        let rep2 = rep.mapv(|v| v + 0.5);
        let b = dec.decode(&params, &rep2, &faces[0], &mask).unwrap();
        let delta: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(delta > 0.0, "conditioning is degenerate");
    }

    #[test]
    fn loss_identities() {
        let (_, _, _, faces) = tiny_setup();
        let target = &faces[0];
        let exact = FloatImage::from_u8(&target.image);
        assert_eq!(mtd_loss(&exact, target).unwrap(), 0.0);

        // Uniform +0.5 offset: loss is exactly 0.5 whatever the fg size.
        let mut off = exact.clone();
        for v in &mut off.data {
            *v += 0.5;
        }
        assert!((mtd_loss(&off, target).unwrap() - 0.5).abs() < 1e-12);

        // Background-only perturbation leaves the loss untouched.
        let mut bg_noise = exact.clone();
        let mut changed = 0;
        for y in 0..bg_noise.h {
            for x in 0..bg_noise.w {
                if !target.fg_mask.get(y, x) {
                    for c in 0..3 {
                        bg_noise.data[(y * bg_noise.w + x) * 3 + c] = 7.77;
                    }
                    changed += 1;
                }
            }
        }
        assert!(changed > 0, "no background pixels in target");
        assert_eq!(mtd_loss(&bg_noise, target).unwrap(), 0.0);

        // Empty foreground is an error.
        let mut bald = faces[0].clone();
        bald.fg_mask = crate::raster::MaskImage::new(8, 8);
        assert!(mtd_loss(&exact, &bald).is_err());
    }

    #[test]
    fn episode_loss_gradcheck_into_encoder_and_decoder() {
        // Finite differences through the full episode objective: encoder ->
        // rep -> decoder -> masked L1, f64, rel err <= 1e-4.
        let (enc, dec, params, faces) = tiny_setup();
        let inputs: Vec<&RenderedFace> = faces[..2].iter().collect();
        let targets: Vec<&RenderedFace> = faces[2..4].iter().collect();
        let masks: Vec<MaskSpec> = (0..targets.len())
            .map(|i| sample_mask(dec.n_tokens(), 0.75, 100 + i as u64).unwrap())
            .collect();

        let eval = |p: &Params<f64>| -> (f64, indexmap::IndexMap<String, Array2<f64>>) {
            let mut sess = Session::new(p);
            let rep = enc.encode_g(&mut sess, &inputs, None).unwrap();
            let mut parts = Vec::new();
            for (t, m) in targets.iter().zip(&masks) {
                let pred = dec.decode_g(&mut sess, rep, t, m).unwrap();
                parts.push(dec.loss_g(&mut sess, pred, t).unwrap());
            }
            let mut loss = parts[0];
            for p in &parts[1..] {
                loss = sess.graph.add(loss, *p);
            }
            let loss = sess.graph.scale(loss, 1.0 / parts.len() as f64);
            let grads = sess.graph.backward(loss);
            let named = sess.grads_by_name(&grads);
            (sess.graph.scalar_value(loss), named)
        };

        let (_, named) = eval(&params);
        let h = 1e-4;
        let mut pick = stream(41, 0);
        use rand::Rng;
        for name in [
            "encoder.query",
            "encoder.extract.embed.w",
            "mtd.mask_token",
            "mtd.cross0.attn.wv.w",
            "mtd.head.w",
        ] {
            let g = named.get(name).unwrap_or_else(|| panic!("no grad for {name}"));
            let (rows, cols) = g.dim();
            for _ in 0..2 {
                let (r, c) = (pick.random_range(0..rows), pick.random_range(0..cols));
                let mut up = params.clone();
                up.get_mut(name)[(r, c)] += h;
                let mut dn = params.clone();
                dn.get_mut(name)[(r, c)] -= h;
                let fd = (eval(&up).0 - eval(&dn).0) / (2.0 * h);
                let an = g[(r, c)];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "{name}({r},{c}): analytic {an} vs fd {fd}");
            }
        }
    }
}
