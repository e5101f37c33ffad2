//! Transformer building blocks shared by the encoder, both decoders, and
//! the evaluation probes. Layers register their tensors in a [`Params`]
//! store at init time and address them by name during the forward pass.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::graph::NodeId;
use crate::params::{init_normal, init_ones, init_zeros, Params, Session};
use crate::scalar::{s, Scalar};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone)]
pub struct Linear {
    pub w: String,
    pub b: Option<String>,
}

impl Linear {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        // Xavier-scaled projections; token/position embeddings elsewhere
        // keep the 0.02 convention.
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        params.insert(
            format!("{name}.w"),
            crate::params::init_normal_std(rng, d_in, d_out, std),
        );
        params.insert(format!("{name}.b"), init_zeros(1, d_out));
        Linear {
            w: format!("{name}.w"),
            b: Some(format!("{name}.b")),
        }
    }

    /// Zero-initialized projection: the layer starts as a no-op branch.
    pub fn init_zero<F: Scalar>(
        params: &mut Params<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        params.insert(format!("{name}.w"), init_zeros(d_in, d_out));
        params.insert(format!("{name}.b"), init_zeros(1, d_out));
        Linear {
            w: format!("{name}.w"),
            b: Some(format!("{name}.b")),
        }
    }

    pub fn forward<F: Scalar>(&self, sess: &mut Session<F>, x: NodeId) -> NodeId {
        let w = sess.p(&self.w);
        let y = sess.graph.matmul(x, w);
        match &self.b {
            Some(b) => {
                let b = sess.p(b);
                sess.graph.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gain: String,
    pub bias: String,
}

impl LayerNorm {
    pub fn init<F: Scalar>(params: &mut Params<F>, name: &str, dim: usize) -> Self {
        params.insert(format!("{name}.g"), init_ones(1, dim));
        params.insert(format!("{name}.b"), init_zeros::<F>(1, dim));
        LayerNorm {
            gain: format!("{name}.g"),
            bias: format!("{name}.b"),
        }
    }

    pub fn forward<F: Scalar>(&self, sess: &mut Session<F>, x: NodeId) -> NodeId {
        let n = sess.graph.layer_norm_rows(x, s(LN_EPS));
        let g = sess.p(&self.gain);
        let scaled = sess.graph.mul_row(n, g);
        let b = sess.p(&self.bias);
        sess.graph.add_row(scaled, b)
    }
}

#[derive(Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        expansion: usize,
    ) -> Self {
        Mlp {
            fc1: Linear::init(params, rng, &format!("{name}.fc1"), dim, dim * expansion),
            fc2: Linear::init(params, rng, &format!("{name}.fc2"), dim * expansion, dim),
        }
    }

    pub fn forward<F: Scalar>(&self, sess: &mut Session<F>, x: NodeId) -> NodeId {
        let h = self.fc1.forward(sess, x);
        let h = sess.graph.gelu(h);
        self.fc2.forward(sess, h)
    }
}

/// Multi-head scaled-dot-product attention on already-projected tensors
/// (no output projection). Softmax weights per head land in `capture`.
pub fn attend<F: Scalar>(
    sess: &mut Session<F>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    n_heads: usize,
    mut capture: Option<&mut Vec<Array2<F>>>,
) -> NodeId {
    let c = sess.graph.value(q).dim().1;
    assert_eq!(c % n_heads, 0, "channels {c} not divisible by {n_heads} heads");
    let dh = c / n_heads;
    let scale = s::<F>(1.0 / (dh as f64).sqrt());

    let mut outs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = sess.graph.slice_cols(q, h * dh, dh);
        let kh = sess.graph.slice_cols(k, h * dh, dh);
        let vh = sess.graph.slice_cols(v, h * dh, dh);
        let kt = sess.graph.transpose(kh);
        let scores = sess.graph.matmul(qh, kt);
        let scores = sess.graph.scale(scores, scale);
        let weights = sess.graph.softmax_rows(scores);
        if let Some(cap) = capture.as_deref_mut() {
            cap.push(sess.graph.value(weights).clone());
        }
        outs.push(sess.graph.matmul(weights, vh));
    }
    sess.graph.concat_cols(&outs)
}

#[derive(Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        n_heads: usize,
    ) -> Self {
        MultiHeadAttention {
            wq: Linear::init(params, rng, &format!("{name}.wq"), dim, dim),
            wk: Linear::init(params, rng, &format!("{name}.wk"), dim, dim),
            wv: Linear::init(params, rng, &format!("{name}.wv"), dim, dim),
            wo: Linear::init(params, rng, &format!("{name}.wo"), dim, dim),
            n_heads,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        queries: NodeId,
        context: NodeId,
        capture: Option<&mut Vec<Array2<F>>>,
    ) -> NodeId {
        let q = self.wq.forward(sess, queries);
        let k = self.wk.forward(sess, context);
        let v = self.wv.forward(sess, context);
        let merged = attend(sess, q, k, v, self.n_heads, capture);
        self.wo.forward(sess, merged)
    }
}

/// Pre-norm residual block: attention (self or cross) then MLP.
#[derive(Clone)]
pub struct Block {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        n_heads: usize,
    ) -> Self {
        Block {
            norm_attn: LayerNorm::init(params, &format!("{name}.norm_attn"), dim),
            attn: MultiHeadAttention::init(params, rng, &format!("{name}.attn"), dim, n_heads),
            norm_mlp: LayerNorm::init(params, &format!("{name}.norm_mlp"), dim),
            mlp: Mlp::init(params, rng, &format!("{name}.mlp"), dim, 4),
        }
    }

    /// Cross-attention: queries come from `x`, keys/values from `context`.
    pub fn forward_cross<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        x: NodeId,
        context: NodeId,
        capture: Option<&mut Vec<Array2<F>>>,
    ) -> NodeId {
        let normed = self.norm_attn.forward(sess, x);
        let att = self.attn.forward(sess, normed, context, capture);
        let x = sess.graph.add(x, att);
        let normed = self.norm_mlp.forward(sess, x);
        let m = self.mlp.forward(sess, normed);
        sess.graph.add(x, m)
    }

    /// Self-attention: context is the normed input itself.
    pub fn forward_self<F: Scalar>(&self, sess: &mut Session<F>, x: NodeId) -> NodeId {
        let normed = self.norm_attn.forward(sess, x);
        let att = self.attn.forward(sess, normed, normed, None);
        let x = sess.graph.add(x, att);
        let normed = self.norm_mlp.forward(sess, x);
        let m = self.mlp.forward(sess, normed);
        sess.graph.add(x, m)
    }
}

/// Sinusoidal embedding of a time value in [0,1], DiT-style scaling.
pub fn sinusoidal_embedding<F: Scalar>(t: f64, dim: usize) -> Array2<F> {
    assert!(dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut out = Array2::zeros((1, dim));
    let t_scaled = t * 1000.0;
    for i in 0..half {
        let freq = (-(i as f64) * (10000.0f64).ln() / (half as f64 - 1.0).max(1.0)).exp();
        out[(0, i)] = s((t_scaled * freq).sin());
        out[(0, half + i)] = s((t_scaled * freq).cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;
    use rand::Rng;

    fn rand_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn attention_rows_are_probability_vectors() {
        let mut params: Params<f64> = Params::new();
        let mut rng = stream(0, 1);
        let mha = MultiHeadAttention::init(&mut params, &mut rng, "attn", 8, 2);
        let mut sess = Session::new(&params);
        let q = sess.graph.input(rand_input(3, 8, 2));
        let ctx = sess.graph.input(rand_input(5, 8, 3));
        let mut cap = Vec::new();
        let out = mha.forward(&mut sess, q, ctx, Some(&mut cap));
        assert_eq!(sess.graph.value(out).dim(), (3, 8));
        assert_eq!(cap.len(), 2);
        for w in &cap {
            assert_eq!(w.dim(), (3, 5));
            for row in w.rows() {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_gradcheck_through_attention() {
        // End-to-end finite differences through a full pre-norm block.
        let mut params: Params<f64> = Params::new();
        let mut rng = stream(1, 1);
        let block = Block::init(&mut params, &mut rng, "blk", 6, 2);
        let x_val = rand_input(4, 6, 5);
        let ctx_val = rand_input(3, 6, 6);

        let eval = |params: &Params<f64>| -> (f64, Option<ndarray::Array2<f64>>) {
            let mut sess = Session::new(params);
            let x = sess.graph.input(x_val.clone());
            let ctx = sess.graph.input(ctx_val.clone());
            let y = block.forward_cross(&mut sess, x, ctx, None);
            let sq = sess.graph.square(y);
            let loss = sess.graph.mean_all(sq);
            let grads = sess.graph.backward(loss);
            let named = sess.grads_by_name(&grads);
            (
                sess.graph.scalar_value(loss),
                named.get("blk.attn.wq.w").cloned(),
            )
        };

        let (_, analytic) = eval(&params);
        let analytic = analytic.expect("wq gradient");
        let h = 1e-5;
        for &(r, c) in &[(0usize, 0usize), (2, 3), (5, 5)] {
            let mut up = params.clone();
            up.get_mut("blk.attn.wq.w")[(r, c)] += h;
            let mut dn = params.clone();
            dn.get_mut("blk.attn.wq.w")[(r, c)] -= h;
            let fd = (eval(&up).0 - eval(&dn).0) / (2.0 * h);
            let an = analytic[(r, c)];
            // Absolute floor covers cancellation noise in the FD estimate.
            assert!(
                (an - fd).abs() < 1e-5 * an.abs().max(fd.abs()) + 1e-9,
                "({r},{c}): analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn sinusoidal_embedding_distinguishes_times() {
        let a = sinusoidal_embedding::<f64>(0.1, 16);
        let b = sinusoidal_embedding::<f64>(0.9, 16);
        let diff: f64 = (&a - &b).iter().map(|d| d.abs()).sum();
        assert!(diff > 0.1);
    }
}
