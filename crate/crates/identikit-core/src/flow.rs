//! Conditional flow-matching decoder.
//!
//! A small denoising transformer predicts the velocity eps - x along the
//! linear interpolant x_t = (1-t) x + t eps. The identity representation is
//! injected into every block through a decoupled cross-attention branch
//! (its own key/value projections over rep, output projection
//! zero-initialized so conditioning starts as a no-op). A single learned
//! token stands in for the fixed text prompt. Images live in [-1,1] and are
//! handled in the patch-token layout throughout.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{attend, sinusoidal_embedding, LayerNorm, Linear, Mlp};
use crate::params::{init_normal, Params, Session};
use crate::raster::{patch_count, patchify, unpatchify, FloatImage};
use crate::rng;
use crate::scalar::{s, Scalar};
use crate::synthetic::RenderedFace;

/// One flow-matching training tuple. All identities hold exactly:
/// `x_t = (1-t) x + t eps` and `v_target = eps - x`.
#[derive(Debug, Clone)]
pub struct FlowSample<F: Scalar> {
    pub x: Array2<F>,
    pub eps: Array2<F>,
    pub t: f64,
    pub x_t: Array2<F>,
    pub v_target: Array2<F>,
}

impl<F: Scalar> FlowSample<F> {
    pub fn new(x: Array2<F>, eps: Array2<F>, t: f64) -> Self {
        assert_eq!(x.dim(), eps.dim(), "noise shape mismatch");
        let tf = s::<F>(t);
        let one_minus = F::one() - tf;
        let x_t = ndarray::Zip::from(&x)
            .and(&eps)
            .map_collect(|&xv, &ev| one_minus * xv + tf * ev);
        let v_target = ndarray::Zip::from(&eps)
            .and(&x)
            .map_collect(|&ev, &xv| ev - xv);
        FlowSample {
            x,
            eps,
            t,
            x_t,
            v_target,
        }
    }
}

/// Draw t ~ U(0,1) and eps ~ N(0,I) for a clean target in [-1,1] space.
pub fn make_flow_sample<F: Scalar>(x: &Array2<F>, rng_seed: u64) -> FlowSample<F> {
    let mut rng = rng::stream(rng_seed, rng::lane::NOISE);
    use rand::Rng;
    let t: f64 = rng.random_range(0.0..1.0);
    let eps = Array2::from_shape_fn(x.dim(), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        s(z)
    });
    FlowSample::new(x.clone(), eps, t)
}

/// Patch-token layout of a face image in [-1,1] space.
pub fn face_to_flow_tokens<F: Scalar>(face: &RenderedFace, patch: usize) -> Array2<F> {
    patchify(&FloatImage::from_u8(&face.image), patch, -1.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub depth: usize,
    pub width: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    pub time_embed_dim: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            depth: 4,
            width: 64,
            n_heads: 4,
            patch_size: 4,
            time_embed_dim: 64,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.n_heads
            )));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        Ok(())
    }
}

struct FlowBlock {
    norm1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    /// Decoupled branch: keys/values from the identity context,
    /// zero-initialized output projection.
    wk_id: Linear,
    wv_id: Linear,
    wo_id: Linear,
    norm2: LayerNorm,
    mlp: Mlp,
    n_heads: usize,
}

impl FlowBlock {
    fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        width: usize,
        rep_dim: usize,
        n_heads: usize,
    ) -> Self {
        FlowBlock {
            norm1: LayerNorm::init(params, &format!("{name}.norm1"), width),
            wq: Linear::init(params, rng, &format!("{name}.wq"), width, width),
            wk: Linear::init(params, rng, &format!("{name}.wk"), width, width),
            wv: Linear::init(params, rng, &format!("{name}.wv"), width, width),
            wo: Linear::init(params, rng, &format!("{name}.wo"), width, width),
            wk_id: Linear::init(params, rng, &format!("{name}.wk_id"), rep_dim, width),
            wv_id: Linear::init(params, rng, &format!("{name}.wv_id"), rep_dim, width),
            wo_id: Linear::init_zero(params, &format!("{name}.wo_id"), width, width),
            norm2: LayerNorm::init(params, &format!("{name}.norm2"), width),
            mlp: Mlp::init(params, rng, &format!("{name}.mlp"), width, 4),
            n_heads,
        }
    }

    fn forward<F: Scalar>(&self, sess: &mut Session<F>, x: NodeId, id_ctx: NodeId) -> NodeId {
        let xn = self.norm1.forward(sess, x);
        let q = self.wq.forward(sess, xn);

        let k = self.wk.forward(sess, xn);
        let v = self.wv.forward(sess, xn);
        let self_attn = attend(sess, q, k, v, self.n_heads, None);
        let self_out = self.wo.forward(sess, self_attn);

        let k_id = self.wk_id.forward(sess, id_ctx);
        let v_id = self.wv_id.forward(sess, id_ctx);
        let id_attn = attend(sess, q, k_id, v_id, self.n_heads, None);
        let id_out = self.wo_id.forward(sess, id_attn);

        let x = sess.graph.add(x, self_out);
        let x = sess.graph.add(x, id_out);
        let xn = self.norm2.forward(sess, x);
        let m = self.mlp.forward(sess, xn);
        sess.graph.add(x, m)
    }
}

pub struct FlowDecoder {
    pub config: FlowConfig,
    pub image_size: usize,
    pub rep_dim: usize,
    in_proj: Linear,
    pos_name: String,
    cond_token_name: String,
    time_fc1: Linear,
    time_fc2: Linear,
    blocks: Vec<FlowBlock>,
    out_norm: LayerNorm,
    head: Linear,
}

impl FlowDecoder {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
        config: &FlowConfig,
        image_size: usize,
        rep_dim: usize,
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
        let w = config.width;

        let in_proj = Linear::init(params, rng, "flow.in_proj", pdim, w);
        let pos_name = "flow.pos".to_string();
        params.insert(&pos_name, init_normal(rng, n_tokens, w));
        let cond_token_name = "flow.cond_token".to_string();
        params.insert(&cond_token_name, init_normal(rng, 1, rep_dim));
        let time_fc1 = Linear::init(params, rng, "flow.time_fc1", config.time_embed_dim, w);
        let time_fc2 = Linear::init(params, rng, "flow.time_fc2", w, w);
        let blocks = (0..config.depth)
            .map(|i| FlowBlock::init(params, rng, &format!("flow.blk{i}"), w, rep_dim, config.n_heads))
            .collect();
        let out_norm = LayerNorm::init(params, "flow.out_norm", w);
        let head = Linear::init(params, rng, "flow.head", w, pdim);

        Ok(FlowDecoder {
            config: config.clone(),
            image_size,
            rep_dim,
            in_proj,
            pos_name,
            cond_token_name,
            time_fc1,
            time_fc2,
            blocks,
            out_norm,
            head,
        })
    }

    pub fn n_tokens(&self) -> usize {
        patch_count(self.image_size, self.image_size, self.config.patch_size)
    }

    /// Velocity prediction on the graph; x_t is a constant token-layout
    /// input, rep is the (possibly trainable) identity representation node.
    pub fn velocity_g<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        x_t: &Array2<F>,
        t: f64,
        rep: NodeId,
    ) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0,1]")));
        }
        let expected = (self.n_tokens(), self.config.patch_size * self.config.patch_size * 3);
        if x_t.dim() != expected {
            return Err(Error::shape(
                "flow x_t",
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", x_t.dim().0, x_t.dim().1),
            ));
        }
        if sess.graph.value(rep).dim().1 != self.rep_dim {
            return Err(Error::shape(
                "flow rep",
                format!("_x{}", self.rep_dim),
                format!("_x{}", sess.graph.value(rep).dim().1),
            ));
        }

        let n_tokens = self.n_tokens();
        let x_in = sess.graph.input(x_t.clone());
        let mut x = self.in_proj.forward(sess, x_in);
        let pos = sess.p(&self.pos_name);
        x = sess.graph.add(x, pos);

        let temb_in = sess.graph.input(sinusoidal_embedding(t, self.config.time_embed_dim));
        let temb = self.time_fc1.forward(sess, temb_in);
        let temb = sess.graph.gelu(temb);
        let temb = self.time_fc2.forward(sess, temb);
        let temb_rows = sess.graph.broadcast_row(temb, n_tokens);
        x = sess.graph.add(x, temb_rows);

        let cond = sess.p(&self.cond_token_name);
        let id_ctx = sess.graph.concat_rows(&[rep, cond]);

        for blk in &self.blocks {
            x = blk.forward(sess, x, id_ctx);
        }
        let x = self.out_norm.forward(sess, x);
        Ok(self.head.forward(sess, x))
    }

    /// Velocity prediction (inference), token layout in and out.
    pub fn predict_velocity<F: Scalar>(
        &self,
        params: &Params<F>,
        x_t: &Array2<F>,
        t: f64,
        rep: &Array2<F>,
    ) -> Result<Array2<F>> {
        let mut sess = Session::new(params);
        let rep_node = sess.graph.input(rep.clone());
        let out = self.velocity_g(&mut sess, x_t, t, rep_node)?;
        Ok(sess.graph.value(out).clone())
    }

    /// Mean squared error to the velocity targets over a batch, on the graph.
    pub fn loss_g<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        samples: &[FlowSample<F>],
        rep: NodeId,
    ) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("flow loss needs at least one sample"));
        }
        let mut parts = Vec::with_capacity(samples.len());
        for sample in samples {
            let pred = self.velocity_g(sess, &sample.x_t, sample.t, rep)?;
            let target = sess.graph.input(sample.v_target.clone());
            let diff = sess.graph.sub(pred, target);
            let sq = sess.graph.square(diff);
            parts.push(sess.graph.mean_all(sq));
        }
        let mut total = parts[0];
        for p in &parts[1..] {
            total = sess.graph.add(total, *p);
        }
        Ok(sess.graph.scale(total, s(1.0 / samples.len() as f64)))
    }

    /// Euler integration of the learned flow from pure noise down to t=0,
    /// deterministic given seed and weights; output clamped to [-1,1] and
    /// returned as a [0,1] float image.
    pub fn sample_image<F: Scalar>(
        &self,
        params: &Params<F>,
        rep: &Array2<F>,
        n_steps: usize,
        rng_seed: u64,
    ) -> Result<FloatImage> {
        let tokens = self.sample_tokens(rep, n_steps, rng_seed, |x_t, t| {
            self.predict_velocity(params, x_t, t, rep)
        })?;
        Ok(unpatchify(
            &tokens,
            self.image_size,
            self.image_size,
            self.config.patch_size,
            -1.0,
            1.0,
        ))
    }

    /// Euler sampler over an arbitrary velocity field (oracle hooks for
    /// tests use this directly). Returns token layout in [-1,1].
    pub fn sample_tokens<F: Scalar>(
        &self,
        _rep: &Array2<F>,
        n_steps: usize,
        rng_seed: u64,
        mut velocity: impl FnMut(&Array2<F>, f64) -> Result<Array2<F>>,
    ) -> Result<Array2<F>> {
        if n_steps == 0 {
            return Err(Error::Range("n_steps must be at least 1".into()));
        }
        let mut rng = rng::stream(rng_seed, rng::lane::NOISE);
        let shape = (self.n_tokens(), self.config.patch_size * self.config.patch_size * 3);
        let mut x: Array2<F> = Array2::from_shape_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s(z)
        });
        let dt = s::<F>(1.0 / n_steps as f64);
        for k in (1..=n_steps).rev() {
            let t = k as f64 / n_steps as f64;
            let v = velocity(&x, t)?;
            x = ndarray::Zip::from(&x).and(&v).map_collect(|&xv, &vv| xv - dt * vv);
        }
        Ok(x.mapv(|v| v.min(F::one()).max(-F::one())))
    }
}

/// Plain MSE between velocity predictions and targets (oracle-side metric).
pub fn velocity_mse<F: Scalar>(preds: &[Array2<F>], targets: &[Array2<F>]) -> f64 {
    assert_eq!(preds.len(), targets.len());
    assert!(!preds.is_empty());
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        assert_eq!(p.dim(), t.dim());
        for (a, b) in p.iter().zip(t.iter()) {
            let d = a.to_f64().unwrap() - b.to_f64().unwrap();
            total += d * d;
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};
    use crate::rng::stream;
    use crate::synthetic::generate_dataset_sized;
    use ndarray::array;

    fn tiny_flow() -> (FlowDecoder, Params<f64>) {
        let cfg = FlowConfig {
            depth: 2,
            width: 8,
            n_heads: 2,
            patch_size: 4,
            time_embed_dim: 8,
        };
        let mut params = Params::new();
        let mut rng = stream(3, crate::rng::lane::INIT);
        let dec = FlowDecoder::init(&mut params, &mut rng, &cfg, 8, 6).unwrap();
        (dec, params)
    }

    #[test]
    fn interpolant_identities_exact() {
        let x = array![[0.25f64, -0.5], [1.0, -1.0]];
        let eps = array![[0.1f64, 0.7], [-0.3, 0.9]];

        let at0 = FlowSample::new(x.clone(), eps.clone(), 0.0);
        assert_eq!(at0.x_t, x);
        let at1 = FlowSample::new(x.clone(), eps.clone(), 1.0);
        assert_eq!(at1.x_t, eps);

        // Scalar case: x=2, eps=4, t=0.5 -> x_t=3, v_target=2.
        let s = FlowSample::new(array![[2.0f64]], array![[4.0f64]], 0.5);
        assert_eq!(s.x_t[(0, 0)], 3.0);
        assert_eq!(s.v_target[(0, 0)], 2.0);
    }

    #[test]
    fn velocity_shape_matches_input() {
        let (dec, params) = tiny_flow();
        let x_t = Array2::from_elem((4, 48), 0.3);
        let rep = Array2::from_elem((3, 6), 0.2);
        let v = dec.predict_velocity(&params, &x_t, 0.4, &rep).unwrap();
        assert_eq!(v.dim(), x_t.dim());
        assert!(dec.predict_velocity(&params, &x_t, 1.5, &rep).is_err());
    }

    #[test]
    fn zero_init_adapter_makes_rep_inert_at_start() {
        let (dec, params) = tiny_flow();
        let x_t = Array2::from_elem((4, 48), 0.3);
        let rep_a = Array2::from_elem((3, 6), 0.2);
        let rep_b = Array2::from_elem((3, 6), -0.9);
        let va = dec.predict_velocity(&params, &x_t, 0.4, &rep_a).unwrap();
        let vb = dec.predict_velocity(&params, &x_t, 0.4, &rep_b).unwrap();
        assert_eq!(va, vb, "zero-initialized id branch leaked conditioning");

        // Once the output projection is nonzero the branch is live.
        let mut warm = params.clone();
        warm.get_mut("flow.blk0.wo_id.w").fill(0.05);
        let va = dec.predict_velocity(&warm, &x_t, 0.4, &rep_a).unwrap();
        let vb = dec.predict_velocity(&warm, &x_t, 0.4, &rep_b).unwrap();
        let delta: f64 = (&va - &vb).iter().map(|d| d.abs()).sum();
        assert!(delta > 0.0);
    }

    #[test]
    fn time_conditioning_changes_prediction() {
        let (dec, params) = tiny_flow();
        let x_t = Array2::from_elem((4, 48), 0.3);
        let rep = Array2::from_elem((3, 6), 0.2);
        let a = dec.predict_velocity(&params, &x_t, 0.1, &rep).unwrap();
        let b = dec.predict_velocity(&params, &x_t, 0.9, &rep).unwrap();
        let delta: f64 = (&a - &b).iter().map(|d| d.abs()).sum();
        assert!(delta > 0.0, "time embedding has no effect");
    }

    #[test]
    fn loss_zero_at_oracle_and_unit_at_zero_predictor() {
        // Oracle predictor == v_target gives exactly zero.
        let x = Array2::from_elem((4, 48), 0.5f64);
        let sample = make_flow_sample(&x, 7);
        assert_eq!(velocity_mse(&[sample.v_target.clone()], &[sample.v_target.clone()]), 0.0);

        // Zero predictor on x = 0 images: loss = E[eps^2] ~ 1 +- 0.02.
        let zero_x = Array2::from_elem((64, 48), 0.0f64);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for seed in 0..32 {
            let s = make_flow_sample(&zero_x, seed);
            preds.push(Array2::from_elem(zero_x.dim(), 0.0));
            targets.push(s.v_target);
        }
        let mse = velocity_mse(&preds, &targets);
        assert!((mse - 1.0).abs() <= 0.02, "E[eps^2] estimate {mse}");
    }

    #[test]
    fn one_euler_step_recovers_x_with_oracle_velocity() {
        let (dec, _) = tiny_flow();
        let mut rng = stream(5, 0);
        use rand::Rng;
        let x_true: Array2<f64> =
            Array2::from_shape_fn((dec.n_tokens(), 48), |_| rng.random_range(-0.9..0.9));
        let rep = Array2::from_elem((3, 6), 0.0);
        // v(x_t, t) = eps - x, and from x_1 = eps one step of size 1 lands
        // exactly on x. eps is whatever the sampler drew, so recover it
        // from x_t at t=1.
        let x_ref = x_true.clone();
        let out = dec
            .sample_tokens(&rep, 1, 99, |x_t, t| {
                assert_eq!(t, 1.0);
                Ok(ndarray::Zip::from(x_t)
                    .and(&x_ref)
                    .map_collect(|&e, &xv| e - xv))
            })
            .unwrap();
        let max_dev = (&out - &x_true)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-12, "one-step recovery off by {max_dev}");
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let (dec, params) = tiny_flow();
        let rep = Array2::from_elem((3, 6), 0.2);
        let a = dec.sample_image(&params, &rep, 5, 42).unwrap();
        let b = dec.sample_image(&params, &rep, 5, 42).unwrap();
        assert_eq!(a.data, b.data);
        let c = dec.sample_image(&params, &rep, 5, 43).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn flow_loss_gradcheck_reaches_encoder() {
        // The joint-optimization contract: gradients flow through the flow
        // loss into encoder weights (f64 finite differences, rel <= 1e-4).
        let enc_cfg = EncoderConfig {
            queries: 3,
            channels: 6,
            n_cross_blocks: 1,
            n_self_blocks: 1,
            n_heads: 2,
            patch_size: 4,
            extractor_depth: 1,
            image_size: 8,
            max_images: 4,
        };
        let mut params: Params<f64> = Params::new();
        let mut rng = stream(9, crate::rng::lane::INIT);
        let enc = Encoder::init(&mut params, &mut rng, &enc_cfg).unwrap();
        let flow_cfg = FlowConfig {
            depth: 1,
            width: 8,
            n_heads: 2,
            patch_size: 4,
            time_embed_dim: 8,
        };
        let dec = FlowDecoder::init(&mut params, &mut rng, &flow_cfg, 8, 6).unwrap();
        // Wake the zero-initialized adapter so its upstream projections and
        // the encoder see nonzero gradients.
        params.get_mut("flow.blk0.wo_id.w").mapv_inplace(|_| 0.03);

        let faces = generate_dataset_sized(1, 3, 21, 8).unwrap().remove(0).faces;
        let inputs: Vec<&RenderedFace> = faces[..2].iter().collect();
        let samples: Vec<FlowSample<f64>> = faces[2..3]
            .iter()
            .map(|f| make_flow_sample(&face_to_flow_tokens(f, 4), 50))
            .collect();

        let eval = |p: &Params<f64>| -> (f64, indexmap::IndexMap<String, Array2<f64>>) {
            let mut sess = Session::new(p);
            let rep = enc.encode_g(&mut sess, &inputs, None).unwrap();
            let loss = dec.loss_g(&mut sess, &samples, rep).unwrap();
            let grads = sess.graph.backward(loss);
            let named = sess.grads_by_name(&grads);
            (sess.graph.scalar_value(loss), named)
        };

        let (_, named) = eval(&params);
        let h = 1e-4;
        let mut pick = stream(51, 0);
        use rand::Rng;
        for name in [
            "encoder.query",
            "encoder.extract.embed.w",
            "flow.blk0.wk_id.w",
            "flow.cond_token",
            "flow.time_fc1.w",
            "flow.head.w",
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
