//! Set-to-fixed-size identity encoder.
//!
//! Per-image features come from a small patch-embedding transformer trained
//! from scratch (the backbone is swappable behind `extract_image_features`).
//! Features of all input images are concatenated along the token axis with
//! no cross-image positions, a learnable L x C query attends to them through
//! cross-attention blocks (keys/values re-projected from the set feature in
//! every block), and self-attention blocks refine the result. Output shape
//! is L x C regardless of how many images went in.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::nn::{Block, Linear};
use crate::params::{init_normal, Params, Session};
use crate::raster::{patch_count, patchify, FloatImage};
use crate::scalar::Scalar;
use crate::synthetic::RenderedFace;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Query token count L.
    pub queries: usize,
    /// Channel width C.
    pub channels: usize,
    pub n_cross_blocks: usize,
    pub n_self_blocks: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    /// Self-attention depth of the per-image feature extractor.
    pub extractor_depth: usize,
    /// Square input image side length.
    pub image_size: usize,
    /// Largest accepted input-set size.
    pub max_images: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            queries: 16,
            channels: 64,
            n_cross_blocks: 2,
            n_self_blocks: 2,
            n_heads: 4,
            patch_size: 4,
            extractor_depth: 2,
            image_size: 32,
            max_images: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.n_heads
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Tokens per image, L_x.
    pub fn tokens_per_image(&self) -> usize {
        patch_count(self.image_size, self.image_size, self.patch_size)
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        let g = self.image_size / self.patch_size;
        (g, g)
    }
}

/// L_x x C features of a single image.
#[derive(Debug, Clone)]
pub struct ImageTokens<F: Scalar>(pub Array2<F>);

/// Token-axis concatenation of per-image features.
#[derive(Debug, Clone)]
pub struct SetFeature<F: Scalar> {
    pub tokens: Array2<F>,
    pub n_images: usize,
}

/// The fixed-size L x C identity representation.
#[derive(Debug, Clone)]
pub struct IdentityRep<F: Scalar> {
    pub tokens: Array2<F>,
}

/// Softmax cross-attention weights: `blocks[b][h]` is L x (M * L_x).
#[derive(Debug, Clone)]
pub struct AttentionRecord<F: Scalar> {
    pub blocks: Vec<Vec<Array2<F>>>,
    pub n_images: usize,
    pub tokens_per_image: usize,
}

impl<F: Scalar> AttentionRecord<F> {
    /// One query's attention over one image, reshaped onto the patch grid.
    pub fn heat_map(
        &self,
        block: usize,
        head: usize,
        query: usize,
        image: usize,
        grid: (usize, usize),
    ) -> Array2<F> {
        let row = self.blocks[block][head].row(query);
        let offset = image * self.tokens_per_image;
        Array2::from_shape_fn(grid, |(gy, gx)| row[offset + gy * grid.1 + gx])
    }
}

/// Row-wise stacking of per-image token arrays, in list order. No
/// cross-image positional encoding is added.
pub fn concat_set<F: Scalar>(features: &[ImageTokens<F>]) -> Result<SetFeature<F>> {
    if features.is_empty() {
        return Err(Error::EmptyInput("concat_set needs at least one image"));
    }
    let (lx, c) = features[0].0.dim();
    let mut tokens = Array2::zeros((lx * features.len(), c));
    for (i, f) in features.iter().enumerate() {
        if f.0.dim() != (lx, c) {
            return Err(Error::shape(
                "concat_set",
                format!("{lx}x{c}"),
                format!("{}x{}", f.0.dim().0, f.0.dim().1),
            ));
        }
        tokens
            .slice_mut(ndarray::s![i * lx..(i + 1) * lx, ..])
            .assign(&f.0);
    }
    Ok(SetFeature {
        tokens,
        n_images: features.len(),
    })
}

pub struct Encoder {
    pub config: EncoderConfig,
    patch_embed: Linear,
    pos_name: String,
    extractor_blocks: Vec<Block>,
    query_name: String,
    cross_blocks: Vec<Block>,
    self_blocks: Vec<Block>,
    out_norm: crate::nn::LayerNorm,
}

impl Encoder {
    pub fn init<F: Scalar>(
        params: &mut Params<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
        config: &EncoderConfig,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let lx = config.tokens_per_image();
        let pdim = config.patch_size * config.patch_size * 3;

        let patch_embed = Linear::init(params, rng, "encoder.extract.embed", pdim, c);
        let pos_name = "encoder.extract.pos".to_string();
        params.insert(&pos_name, init_normal(rng, lx, c));
        let extractor_blocks = (0..config.extractor_depth)
            .map(|i| Block::init(params, rng, &format!("encoder.extract.blk{i}"), c, config.n_heads))
            .collect();

        let query_name = "encoder.query".to_string();
        params.insert(&query_name, init_normal(rng, config.queries, c));

        let cross_blocks = (0..config.n_cross_blocks)
            .map(|i| Block::init(params, rng, &format!("encoder.cross{i}"), c, config.n_heads))
            .collect();
        let self_blocks = (0..config.n_self_blocks)
            .map(|i| Block::init(params, rng, &format!("encoder.self{i}"), c, config.n_heads))
            .collect();
        let out_norm = crate::nn::LayerNorm::init(params, "encoder.out_norm", c);

        Ok(Encoder {
            config: config.clone(),
            patch_embed,
            pos_name,
            extractor_blocks,
            query_name,
            cross_blocks,
            self_blocks,
            out_norm,
        })
    }

    fn check_image(&self, face: &RenderedFace) -> Result<()> {
        if face.image.h != self.config.image_size || face.image.w != self.config.image_size {
            return Err(Error::shape(
                "encoder image",
                format!("{0}x{0}", self.config.image_size),
                format!("{}x{}", face.image.h, face.image.w),
            ));
        }
        Ok(())
    }

    /// Extractor forward on the graph: patch embedding + learned positions +
    /// self-attention blocks.
    pub fn tokens_g<F: Scalar>(&self, sess: &mut Session<F>, face: &RenderedFace) -> NodeId {
        let float = FloatImage::from_u8(&face.image);
        let patches: Array2<F> = patchify(&float, self.config.patch_size, -1.0, 1.0);
        let x = sess.graph.input(patches);
        let mut x = self.patch_embed.forward(sess, x);
        let pos = sess.p(&self.pos_name);
        x = sess.graph.add(x, pos);
        for blk in &self.extractor_blocks {
            x = blk.forward_self(sess, x);
        }
        x
    }

    /// Full set encoding on the graph. `capture` collects the softmax
    /// weights of every cross block (heads in order).
    pub fn encode_g<F: Scalar>(
        &self,
        sess: &mut Session<F>,
        faces: &[&RenderedFace],
        mut capture: Option<&mut Vec<Vec<Array2<F>>>>,
    ) -> Result<NodeId> {
        if faces.is_empty() {
            return Err(Error::EmptyInput("encode_set needs at least one image"));
        }
        if faces.len() > self.config.max_images {
            return Err(Error::Config(format!(
                "{} images exceeds configured maximum {}",
                faces.len(),
                self.config.max_images
            )));
        }
        for f in faces {
            self.check_image(f)?;
        }

        let per_image: Vec<NodeId> = faces.iter().map(|f| self.tokens_g(sess, f)).collect();
        let z = sess.graph.concat_rows(&per_image);

        let mut x = sess.p(&self.query_name);
        for blk in &self.cross_blocks {
            if let Some(cap) = capture.as_deref_mut() {
                let mut heads = Vec::new();
                x = blk.forward_cross(sess, x, z, Some(&mut heads));
                cap.push(heads);
            } else {
                x = blk.forward_cross(sess, x, z, None);
            }
        }
        for blk in &self.self_blocks {
            x = blk.forward_self(sess, x);
        }
        Ok(self.out_norm.forward(sess, x))
    }

    /// Per-image feature extraction (inference).
    pub fn extract_image_features<F: Scalar>(
        &self,
        params: &Params<F>,
        face: &RenderedFace,
    ) -> Result<ImageTokens<F>> {
        self.check_image(face)?;
        let mut sess = Session::new(params);
        let id = self.tokens_g(&mut sess, face);
        Ok(ImageTokens(sess.graph.value(id).clone()))
    }

    /// Set encoding (inference).
    pub fn encode_set<F: Scalar>(
        &self,
        params: &Params<F>,
        faces: &[&RenderedFace],
    ) -> Result<IdentityRep<F>> {
        let mut sess = Session::new(params);
        let id = self.encode_g(&mut sess, faces, None)?;
        Ok(IdentityRep {
            tokens: sess.graph.value(id).clone(),
        })
    }

    /// Cross-attention softmax weights for every block and head (inference).
    pub fn attention_maps<F: Scalar>(
        &self,
        params: &Params<F>,
        faces: &[&RenderedFace],
    ) -> Result<AttentionRecord<F>> {
        let mut sess = Session::new(params);
        let mut capture = Vec::new();
        self.encode_g(&mut sess, faces, Some(&mut capture))?;
        Ok(AttentionRecord {
            blocks: capture,
            n_images: faces.len(),
            tokens_per_image: self.config.tokens_per_image(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthetic::{generate_dataset, sample_identity, RenderParams};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            queries: 4,
            channels: 16,
            n_cross_blocks: 2,
            n_self_blocks: 2,
            n_heads: 2,
            patch_size: 4,
            extractor_depth: 1,
            image_size: 16,
            max_images: 8,
        }
    }

    fn build<F: Scalar>(config: &EncoderConfig, seed: u64) -> (Encoder, Params<F>) {
        let mut params = Params::new();
        let mut rng = stream(seed, crate::rng::lane::INIT);
        let enc = Encoder::init(&mut params, &mut rng, config).unwrap();
        (enc, params)
    }

    fn faces(n: usize, size: usize) -> Vec<RenderedFace> {
        let records = crate::synthetic::generate_dataset_sized(1, n, 99, size).unwrap();
        records.into_iter().next().unwrap().faces
    }

    #[test]
    fn default_config_token_count() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.tokens_per_image(), 64);
        let (enc, params) = build::<f32>(&cfg, 0);
        let f = faces(1, 32);
        let tokens = enc.extract_image_features(&params, &f[0]).unwrap();
        assert_eq!(tokens.0.dim(), (64, 64));
    }

    #[test]
    fn distinct_images_give_distinct_tokens() {
        let cfg = small_config();
        let (enc, params) = build::<f32>(&cfg, 1);
        let f = faces(2, 16);
        let a = enc.extract_image_features(&params, &f[0]).unwrap();
        let b = enc.extract_image_features(&params, &f[1]).unwrap();
        let diff: f32 = (&a.0 - &b.0).iter().map(|d| d.abs()).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn zeroed_patch_embed_ignores_content_positions_still_distinguish_rows() {
        let cfg = small_config();
        let (enc, mut params) = build::<f64>(&cfg, 2);
        params.get_mut("encoder.extract.embed.w").fill(0.0);
        params.get_mut("encoder.extract.embed.b").fill(0.0);

        let f = faces(2, 16);
        let a = enc.extract_image_features(&params, &f[0]).unwrap();
        let b = enc.extract_image_features(&params, &f[1]).unwrap();
        // Content is ignored: identical outputs across different images.
        assert_eq!(a.0, b.0);
        // Positional encodings still make rows differ from each other.
        let r0 = a.0.row(0).to_owned();
        let distinct = (1..a.0.dim().0).any(|i| {
            a.0.row(i)
                .iter()
                .zip(r0.iter())
                .any(|(x, y)| (x - y).abs() > 1e-12)
        });
        assert!(distinct, "rows identical despite positional encoding");

        // With the positional table removed as well, all rows collapse.
        params.get_mut("encoder.extract.pos").fill(0.0);
        let c = enc.extract_image_features(&params, &f[0]).unwrap();
        let r0 = c.0.row(0).to_owned();
        for i in 1..c.0.dim().0 {
            for (x, y) in c.0.row(i).iter().zip(r0.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_set_stacks_in_order() {
        let a = ImageTokens::<f64>(Array2::from_elem((2, 3), 1.0));
        let b = ImageTokens::<f64>(Array2::from_elem((2, 3), 2.0));
        let z = concat_set(&[a.clone(), b]).unwrap();
        assert_eq!(z.tokens.dim(), (4, 3));
        assert_eq!(z.n_images, 2);
        assert_eq!(z.tokens[(0, 0)], 1.0);
        assert_eq!(z.tokens[(2, 0)], 2.0);

        let single = concat_set(&[a.clone()]).unwrap();
        assert_eq!(single.tokens, a.0);

        assert!(concat_set::<f64>(&[]).is_err());
    }

    #[test]
    fn output_shape_fixed_for_all_set_sizes() {
        let cfg = small_config();
        let (enc, params) = build::<f32>(&cfg, 3);
        let f = faces(8, 16);
        for m in 1..=8 {
            let set: Vec<&RenderedFace> = f.iter().take(m).collect();
            let rep = enc.encode_set(&params, &set).unwrap();
            assert_eq!(rep.tokens.dim(), (4, 16));
            assert!(rep.tokens.iter().all(|v| v.is_finite()));
        }
        assert!(enc.encode_set::<f32>(&params, &[]).is_err());
    }

    #[test]
    fn permutation_invariance_f32_and_f64() {
        let cfg = small_config();
        let f = faces(3, 16);
        let set: Vec<&RenderedFace> = f.iter().collect();
        let perm: Vec<&RenderedFace> = vec![&f[2], &f[0], &f[1]];

        let (enc, params) = build::<f32>(&cfg, 4);
        let a = enc.encode_set(&params, &set).unwrap();
        let b = enc.encode_set(&params, &perm).unwrap();
        let max_dev = (&a.tokens - &b.tokens)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f32, f32::max);
        assert!(max_dev <= 1e-5, "f32 deviation {max_dev}");

        let (enc, params) = build::<f64>(&cfg, 4);
        let a = enc.encode_set(&params, &set).unwrap();
        let b = enc.encode_set(&params, &perm).unwrap();
        let max_dev = (&a.tokens - &b.tokens)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= 1e-10, "f64 deviation {max_dev}");
    }

    #[test]
    fn duplicated_image_matches_single() {
        // Duplicate keys rescale softmax mass uniformly, so [a] and [a,a]
        // agree; verified empirically here.
        let cfg = small_config();
        let (enc, params) = build::<f32>(&cfg, 5);
        let latent = sample_identity(8);
        let face = {
            let mut f =
                crate::synthetic::render_sized(&latent, &RenderParams::frontal(), 16, 16).unwrap();
            f.identity_id = 0;
            f
        };
        let one = enc.encode_set(&params, &[&face]).unwrap();
        let two = enc.encode_set(&params, &[&face, &face]).unwrap();
        let max_dev = (&one.tokens - &two.tokens)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f32, f32::max);
        assert!(max_dev <= 1e-5, "duplicate deviation {max_dev}");
    }

    #[test]
    fn attention_rows_are_normalized_and_grid_shaped() {
        let cfg = small_config();
        let (enc, params) = build::<f64>(&cfg, 6);
        let f = faces(2, 16);
        let set: Vec<&RenderedFace> = f.iter().collect();
        let rec = enc.attention_maps(&params, &set).unwrap();
        assert_eq!(rec.blocks.len(), cfg.n_cross_blocks);
        for block in &rec.blocks {
            assert_eq!(block.len(), cfg.n_heads);
            for head in block {
                assert_eq!(head.dim(), (cfg.queries, 2 * cfg.tokens_per_image()));
                for row in head.rows() {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-5);
                }
            }
        }
        let grid = cfg.patch_grid();
        let heat = rec.heat_map(0, 0, 0, 1, grid);
        assert_eq!(heat.dim(), grid);
    }

    #[test]
    fn encoder_gradcheck_through_encode_set() {
        // Analytic gradient of mean(encode_set) w.r.t. sampled weights
        // matches central differences (f64, step 1e-4, rel err <= 1e-4).
        let cfg = EncoderConfig {
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
        let (enc, params) = build::<f64>(&cfg, 7);
        let recs = generate_dataset(1, 2, 17).unwrap();
        let f: Vec<RenderedFace> = recs[0]
            .faces
            .iter()
            .map(|face| {
                let mut small =
                    crate::synthetic::render_sized(recs[0].latent.as_ref().unwrap(), &face.params, 8, 8).unwrap();
                small.identity_id = 0;
                small
            })
            .collect();
        let set: Vec<&RenderedFace> = f.iter().collect();

        let eval = |p: &Params<f64>| -> f64 {
            let mut sess = Session::new(p);
            let rep = enc.encode_g(&mut sess, &set, None).unwrap();
            let loss = sess.graph.mean_all(rep);
            sess.graph.scalar_value(loss)
        };

        let mut sess = Session::new(&params);
        let rep = enc.encode_g(&mut sess, &set, None).unwrap();
        let loss = sess.graph.mean_all(rep);
        let grads = sess.graph.backward(loss);
        let named = sess.grads_by_name(&grads);

        let h = 1e-4;
        let mut pick = stream(31, 0);
        use rand::Rng;
        for name in ["encoder.query", "encoder.cross0.attn.wk.w", "encoder.extract.embed.w"] {
            let g = named.get(name).unwrap();
            let (rows, cols) = g.dim();
            for _ in 0..3 {
                let (r, c) = (pick.random_range(0..rows), pick.random_range(0..cols));
                let mut up = params.clone();
                up.get_mut(name)[(r, c)] += h;
                let mut dn = params.clone();
                dn.get_mut(name)[(r, c)] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let an = g[(r, c)];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "{name}({r},{c}): analytic {an} vs fd {fd}");
            }
        }
    }
}
