//! Procedural identity world. Identities are 8-dim latents; a pure-function
//! renderer draws face-like images under controlled pose, expression, and
//! lighting, and hands back ground truth (pose, foreground mask, identity)
//! that real datasets never provide.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskImage, Rgb8Image};
use crate::rng;

pub const LATENT_DIM: usize = 8;
pub const DEFAULT_IMAGE_SIZE: usize = 32;
pub const DEFAULT_FRAMES_PER_ID: usize = 8;

pub const YAW_RANGE: f64 = 45.0;
pub const PITCH_RANGE: f64 = 30.0;
pub const ROLL_RANGE: f64 = 20.0;
pub const LIGHTING_MIN: f64 = 0.5;
pub const LIGHTING_MAX: f64 = 1.5;

/// Minimum max-pairwise pose spread (sum of absolute yaw/pitch/roll
/// differences, degrees) enforced inside one identity's image set.
pub const POSE_SPREAD_MIN: f64 = 15.0;

// rng lanes private to this module
const LANE_LATENT: u64 = 10;
const LANE_POSE: u64 = 11;
const LANE_VIDEO: u64 = 12;

/// The 8 latent components, all in [0,1]:
/// head aspect, skin R, skin G, skin B, eye spacing, eye size, nose length,
/// mouth width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityLatent {
    pub params: [f64; LATENT_DIM],
}

impl IdentityLatent {
    pub fn validate(&self) -> Result<()> {
        for (i, &p) in self.params.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Range(format!("latent[{i}] = {p} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn linf_distance(&self, other: &IdentityLatent) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Degrees in [-45, 45].
    pub yaw: f64,
    /// Degrees in [-30, 30].
    pub pitch: f64,
    /// Degrees in [-20, 20].
    pub roll: f64,
    /// mouth-open, smile, eye-closure, each in [0,1].
    pub expression: [f64; 3],
    /// Multiplier in [0.5, 1.5] on a left-to-right brightness gradient.
    pub lighting: f64,
}

impl RenderParams {
    pub fn frontal() -> Self {
        RenderParams {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            expression: [0.2, 0.5, 0.1],
            lighting: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("yaw", self.yaw, YAW_RANGE),
            ("pitch", self.pitch, PITCH_RANGE),
            ("roll", self.roll, ROLL_RANGE),
        ];
        for (name, v, lim) in checks {
            if !(-lim..=lim).contains(&v) {
                return Err(Error::Range(format!("{name} = {v} outside [-{lim},{lim}]")));
            }
        }
        for (i, &e) in self.expression.iter().enumerate() {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Range(format!("expression[{i}] = {e} outside [0,1]")));
            }
        }
        if !(LIGHTING_MIN..=LIGHTING_MAX).contains(&self.lighting) {
            return Err(Error::Range(format!(
                "lighting = {} outside [{LIGHTING_MIN},{LIGHTING_MAX}]",
                self.lighting
            )));
        }
        Ok(())
    }

    pub fn pose(&self) -> (f64, f64, f64) {
        (self.yaw, self.pitch, self.roll)
    }
}

/// Sum of absolute yaw/pitch/roll differences in degrees.
pub fn pose_distance(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs() + (a.2 - b.2).abs()
}

#[derive(Debug, Clone)]
pub struct RenderedFace {
    pub image: Rgb8Image,
    pub fg_mask: MaskImage,
    pub identity_id: usize,
    pub params: RenderParams,
}

/// One identity's image set. `latent` is available for procedurally
/// generated identities and absent for identities curated out of videos.
#[derive(Debug, Clone)]
pub struct IdentityRecord {
    pub identity_id: usize,
    pub latent: Option<IdentityLatent>,
    pub faces: Vec<RenderedFace>,
}

/// Deterministic, component-wise uniform draw of an identity latent.
pub fn sample_identity(rng_seed: u64) -> IdentityLatent {
    let mut rng = rng::stream(rng_seed, LANE_LATENT);
    let mut params = [0.0; LATENT_DIM];
    for p in &mut params {
        *p = rng.random_range(0.0..1.0);
    }
    IdentityLatent { params }
}

/// Distance between two latents in the skin-color subspace (components
/// 1..4), the dominant appearance cue at desk-scale resolutions.
pub fn skin_distance(a: &IdentityLatent, b: &IdentityLatent) -> f64 {
    a.params[1..4]
        .iter()
        .zip(&b.params[1..4])
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rejection-sample identities that are pairwise distinguishable: L-inf
/// separation at least `min_linf` over the full latent and at least
/// `min_skin_l2` apart in skin color. Deterministic in the seed.
pub fn sample_distinct_identities(
    n: usize,
    rng_seed: u64,
    min_linf: f64,
    min_skin_l2: f64,
) -> Result<Vec<IdentityLatent>> {
    let mut out: Vec<IdentityLatent> = Vec::with_capacity(n);
    let mut k = 0u64;
    let budget = (n as u64) * 4000;
    while out.len() < n {
        if k >= budget {
            return Err(Error::Range(format!(
                "could not place {n} identities at linf {min_linf} / skin {min_skin_l2}"
            )));
        }
        let cand = sample_identity(rng_seed.wrapping_add(k));
        k += 1;
        let ok = out.iter().all(|l| {
            l.linf_distance(&cand) >= min_linf && skin_distance(l, &cand) >= min_skin_l2
        });
        if ok {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Render a dataset for externally chosen latents (identity i keeps index i).
pub fn generate_dataset_from_latents(
    latents: &[IdentityLatent],
    frames_per_id: usize,
    rng_seed: u64,
    image_size: usize,
) -> Result<Vec<IdentityRecord>> {
    if latents.is_empty() || frames_per_id == 0 {
        return Err(Error::Range(
            "latents and frames_per_id must be non-empty".into(),
        ));
    }
    latents
        .iter()
        .enumerate()
        .map(|(id, latent)| {
            latent.validate()?;
            let id_seed = rng_seed.wrapping_add(id as u64);
            let mut pose_rng = rng::stream(id_seed, LANE_POSE);
            let params = sample_record_params(&mut pose_rng, frames_per_id);
            let faces = params
                .iter()
                .map(|p| {
                    let mut f = render_sized(latent, p, image_size, image_size)?;
                    f.identity_id = id;
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IdentityRecord {
                identity_id: id,
                latent: Some(latent.clone()),
                faces,
            })
        })
        .collect()
}

/// Uniform render parameters within the full legal ranges.
pub fn sample_render_params(rng: &mut ChaCha8Rng) -> RenderParams {
    RenderParams {
        yaw: rng.random_range(-YAW_RANGE..YAW_RANGE),
        pitch: rng.random_range(-PITCH_RANGE..PITCH_RANGE),
        roll: rng.random_range(-ROLL_RANGE..ROLL_RANGE),
        expression: [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ],
        lighting: rng.random_range(LIGHTING_MIN..LIGHTING_MAX),
    }
}

#[inline]
fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Smooth coverage of a signed distance: 1 deep inside, 0 outside, linear
/// ramp of width `aa` across the edge.
#[inline]
fn edge_alpha(dist: f64, aa: f64) -> f64 {
    (0.5 - dist / aa).clamp(0.0, 1.0)
}

/// Approximate signed distance to an axis-aligned ellipse (negative inside).
#[inline]
fn ellipse_dist(du: f64, dv: f64, a: f64, b: f64) -> f64 {
    let r = ((du / a) * (du / a) + (dv / b) * (dv / b)).sqrt();
    (r - 1.0) * a.min(b)
}

struct FaceGeometry {
    ax: f64,
    ay: f64,
    skin: [f64; 3],
    eye_dx: f64,
    eye_r: f64,
    nose_len: f64,
    mouth_w: f64,
}

impl FaceGeometry {
    fn from_latent(l: &IdentityLatent) -> Self {
        let p = &l.params;
        let ar = lerp(0.85, 1.15, p[0]);
        FaceGeometry {
            ax: 0.68 * ar,
            ay: 0.68 / ar,
            skin: [
                lerp(60.0, 220.0, p[1]),
                lerp(55.0, 205.0, p[2]),
                lerp(50.0, 190.0, p[3]),
            ],
            eye_dx: lerp(0.18, 0.34, p[4]),
            eye_r: lerp(0.055, 0.125, p[5]),
            nose_len: lerp(0.12, 0.34, p[6]),
            mouth_w: lerp(0.14, 0.38, p[7]),
        }
    }
}

/// Render at the default 32x32 resolution.
pub fn render(latent: &IdentityLatent, params: &RenderParams) -> Result<RenderedFace> {
    render_sized(latent, params, DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE)
}

/// Pure renderer: same inputs give a bit-identical image. Yaw/pitch/roll act
/// as an affine warp of the canonical composition (plus a feature parallax
/// shift so turning the head visibly moves the features), expression moves
/// mouth/eye geometry, lighting scales a left-to-right brightness gradient.
pub fn render_sized(
    latent: &IdentityLatent,
    params: &RenderParams,
    h: usize,
    w: usize,
) -> Result<RenderedFace> {
    latent.validate()?;
    params.validate()?;

    let geo = FaceGeometry::from_latent(latent);
    let [mouth_open, smile, eye_close] = params.expression;

    let yaw_rad = params.yaw.to_radians();
    let pitch_rad = params.pitch.to_radians();
    let roll_rad = params.roll.to_radians();
    let (sin_r, cos_r) = roll_rad.sin_cos();
    let sx = yaw_rad.cos();
    let sy = pitch_rad.cos();
    let tx = 0.18 * params.yaw / YAW_RANGE;
    let ty = 0.15 * params.pitch / PITCH_RANGE;

    // Features slide across the head as it turns.
    let shift_u = 0.30 * yaw_rad.sin();
    let shift_v = 0.22 * pitch_rad.sin();

    // Anti-aliasing band: ~1.5 px in canvas units.
    let aa = 1.5 * 2.0 / w as f64;

    let bg = [26.0, 24.0, 30.0];
    let eye_white = [232.0, 230.0, 235.0];
    let iris = [45.0, 32.0, 28.0];
    let brow = [42.0, 32.0, 26.0];
    let lip = [135.0, 48.0, 52.0];
    let mouth_inner = [58.0, 24.0, 26.0];
    let nose_shade = [geo.skin[0] * 0.72, geo.skin[1] * 0.70, geo.skin[2] * 0.70];

    let eye_v = -0.22;
    let eye_hw = geo.eye_r * 1.45;
    let eye_hh = (geo.eye_r * (1.0 - 0.80 * eye_close)).max(0.016);
    let iris_r = geo.eye_r * 0.55 * (1.0 - 0.6 * eye_close);
    let brow_v = eye_v - 1.9 * geo.eye_r;
    let mouth_v = 0.46;
    let mouth_hh = 0.035 + 0.11 * mouth_open;
    let smile_curve = 0.14 * (smile - 0.35);

    let mut image = Rgb8Image::new(h, w);
    let mut mask = MaskImage::new(h, w);

    for y in 0..h {
        for x in 0..w {
            let uc = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let vc = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;

            // Invert canvas = R(roll) * diag(sx,sy) * face + t.
            let du = uc - tx;
            let dv = vc - ty;
            let fu = (cos_r * du + sin_r * dv) / sx;
            let fv = (-sin_r * du + cos_r * dv) / sy;

            let head_d = ellipse_dist(fu, fv, geo.ax, geo.ay);
            let head_a = edge_alpha(head_d, aa);

            let mut color = bg;
            if head_a > 0.0 {
                let mut face = geo.skin;

                // Feature coordinates with parallax applied.
                let gu = fu - shift_u;
                let gv = fv - shift_v;

                // Brows.
                for side in [-1.0, 1.0] {
                    let d = ellipse_dist(gu - side * geo.eye_dx, gv - brow_v, eye_hw * 1.1, 0.030);
                    let a = edge_alpha(d, aa);
                    for c in 0..3 {
                        face[c] = face[c] * (1.0 - a) + brow[c] * a;
                    }
                }

                // Eyes: sclera then iris.
                for side in [-1.0, 1.0] {
                    let eu = gu - side * geo.eye_dx;
                    let ev = gv - eye_v;
                    let d_sclera = ellipse_dist(eu, ev, eye_hw, eye_hh);
                    let a_sclera = edge_alpha(d_sclera, aa);
                    for c in 0..3 {
                        face[c] = face[c] * (1.0 - a_sclera) + eye_white[c] * a_sclera;
                    }
                    let d_iris = ellipse_dist(eu, ev, iris_r.max(1e-4), (iris_r * 0.9).max(1e-4));
                    let a_iris = edge_alpha(d_iris, aa) * a_sclera;
                    for c in 0..3 {
                        face[c] = face[c] * (1.0 - a_iris) + iris[c] * a_iris;
                    }
                }

                // Nose: a wedge widening downward.
                let nv0 = -0.06;
                if gv >= nv0 - aa && gv <= nv0 + geo.nose_len + aa {
                    let t = ((gv - nv0) / geo.nose_len).clamp(0.0, 1.0);
                    let half_w = 0.02 + 0.065 * t;
                    let d = gu.abs() - half_w;
                    let dv_edge = (gv - (nv0 + geo.nose_len)).max(nv0 - gv);
                    let d = d.max(dv_edge);
                    let a = edge_alpha(d, aa);
                    for c in 0..3 {
                        face[c] = face[c] * (1.0 - a) + nose_shade[c] * a;
                    }
                }

                // Mouth: vertical center curves with smile, opens with
                // mouth_open, corners pinned at +-mouth_w.
                let du_m = gu / geo.mouth_w;
                if du_m.abs() <= 1.0 + aa {
                    let t = du_m.clamp(-1.0, 1.0);
                    let center = mouth_v + smile_curve * (t * t - 0.5);
                    let d_lat = gu.abs() - geo.mouth_w;
                    let d = (gv - center).abs() - mouth_hh;
                    let d = d.max(d_lat);
                    let a = edge_alpha(d, aa);
                    for c in 0..3 {
                        face[c] = face[c] * (1.0 - a) + lip[c] * a;
                    }
                    if mouth_open > 0.15 {
                        let inner_hh = (mouth_open - 0.15) * 0.09;
                        let d_in = ((gv - center).abs() - inner_hh).max(gu.abs() - geo.mouth_w * 0.8);
                        let a_in = edge_alpha(d_in, aa) * a;
                        for c in 0..3 {
                            face[c] = face[c] * (1.0 - a_in) + mouth_inner[c] * a_in;
                        }
                    }
                }

                for c in 0..3 {
                    color[c] = color[c] * (1.0 - head_a) + face[c] * head_a;
                }
            }

            // Left-to-right illumination gradient scaled by the lighting knob.
            let shade = params.lighting * (0.78 + 0.22 * uc);
            for c in 0..3 {
                let v = (color[c] * shade).round().clamp(0.0, 255.0) as u8;
                image.set(y, x, c, v);
            }
            mask.set(y, x, head_a >= 0.5);
        }
    }

    Ok(RenderedFace {
        image,
        fg_mask: mask,
        identity_id: 0,
        params: *params,
    })
}

/// Max pairwise pose spread within a set of params.
pub fn max_pairwise_pose_spread(params: &[RenderParams]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            best = best.max(pose_distance(params[i].pose(), params[j].pose()));
        }
    }
    best
}

/// Sample one identity's frame parameters, guaranteeing the pose-spread
/// constraint for sets of two or more frames.
fn sample_record_params(rng: &mut ChaCha8Rng, frames: usize) -> Vec<RenderParams> {
    for _ in 0..64 {
        let params: Vec<RenderParams> = (0..frames).map(|_| sample_render_params(rng)).collect();
        if frames < 2 || max_pairwise_pose_spread(&params) >= POSE_SPREAD_MIN {
            return params;
        }
    }
    // Unreachable in practice; force a compliant spread.
    let mut params: Vec<RenderParams> = (0..frames).map(|_| sample_render_params(rng)).collect();
    params[0].yaw = -12.0;
    params[1].yaw = 12.0;
    params
}

/// Deterministic multi-identity dataset. Identity `i` is generated from the
/// derived seed `rng_seed + i`, so generation parallelized across identities
/// is independent of worker layout.
pub fn generate_dataset(
    n_ids: usize,
    frames_per_id: usize,
    rng_seed: u64,
) -> Result<Vec<IdentityRecord>> {
    generate_dataset_sized(n_ids, frames_per_id, rng_seed, DEFAULT_IMAGE_SIZE)
}

pub fn generate_dataset_sized(
    n_ids: usize,
    frames_per_id: usize,
    rng_seed: u64,
    image_size: usize,
) -> Result<Vec<IdentityRecord>> {
    if n_ids == 0 || frames_per_id == 0 {
        return Err(Error::Range(
            "n_ids and frames_per_id must be at least 1".into(),
        ));
    }
    (0..n_ids)
        .map(|id| {
            let id_seed = rng_seed.wrapping_add(id as u64);
            let latent = sample_identity(id_seed);
            let mut pose_rng = rng::stream(id_seed, LANE_POSE);
            let params = sample_record_params(&mut pose_rng, frames_per_id);
            let faces = params
                .iter()
                .map(|p| {
                    let mut f = render_sized(&latent, p, image_size, image_size)?;
                    f.identity_id = id;
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IdentityRecord {
                identity_id: id,
                latent: Some(latent),
                faces,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoOptions {
    /// Fraction of frames degraded by blur (quality-filter fodder).
    pub degrade_fraction: f64,
    pub identity_id: usize,
    pub image_size: usize,
}

impl Default for VideoOptions {
    fn default() -> Self {
        VideoOptions {
            degrade_fraction: 0.2,
            identity_id: 0,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

/// One synthetic video stream: frames plus which ones were degraded.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub frames: Vec<RenderedFace>,
    pub degraded: Vec<usize>,
}

/// Smooth random-walk video of one identity: per-frame pose deltas are at
/// most 3 degrees per axis, expressions and lighting drift slowly, and
/// exactly `round(degrade_fraction * n_frames)` frames are blurred.
pub fn generate_video(
    latent: &IdentityLatent,
    n_frames: usize,
    rng_seed: u64,
) -> Result<Vec<RenderedFace>> {
    Ok(generate_video_opts(latent, n_frames, rng_seed, &VideoOptions::default())?.frames)
}

pub fn generate_video_opts(
    latent: &IdentityLatent,
    n_frames: usize,
    rng_seed: u64,
    opts: &VideoOptions,
) -> Result<SyntheticVideo> {
    if n_frames == 0 {
        return Err(Error::Range("n_frames must be at least 1".into()));
    }
    let mut rng = rng::stream(rng_seed, LANE_VIDEO);
    let mut cur = sample_render_params(&mut rng);
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut f = render_sized(latent, &cur, opts.image_size, opts.image_size)?;
        f.identity_id = opts.identity_id;
        frames.push(f);

        cur.yaw = (cur.yaw + rng.random_range(-3.0..3.0)).clamp(-YAW_RANGE, YAW_RANGE);
        cur.pitch = (cur.pitch + rng.random_range(-3.0..3.0)).clamp(-PITCH_RANGE, PITCH_RANGE);
        cur.roll = (cur.roll + rng.random_range(-3.0..3.0)).clamp(-ROLL_RANGE, ROLL_RANGE);
        for e in &mut cur.expression {
            *e = (*e + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
        }
        cur.lighting =
            (cur.lighting + rng.random_range(-0.04..0.04)).clamp(LIGHTING_MIN, LIGHTING_MAX);
    }

    let n_degraded = (opts.degrade_fraction * n_frames as f64).round() as usize;
    let mut indices: Vec<usize> = (0..n_frames).collect();
    // Partial Fisher-Yates: the first n_degraded entries are the blur set.
    for i in 0..n_degraded.min(n_frames) {
        let j = rng.random_range(i..n_frames);
        indices.swap(i, j);
    }
    let mut degraded: Vec<usize> = indices[..n_degraded.min(n_frames)].to_vec();
    degraded.sort_unstable();
    for &idx in &degraded {
        frames[idx].image = frames[idx].image.box_blur3(2);
    }

    Ok(SyntheticVideo { frames, degraded })
}

/// Splice several single-identity videos into one stream, alternating
/// segments of 3..=8 frames while preserving each source's frame order.
pub fn interleave_videos(videos: Vec<SyntheticVideo>, rng_seed: u64) -> SyntheticVideo {
    let mut rng = rng::stream(rng_seed, LANE_VIDEO + 1);
    let mut cursors = vec![0usize; videos.len()];
    let mut frames = Vec::new();
    let mut degraded = Vec::new();
    let mut active: Vec<usize> = (0..videos.len()).collect();
    let mut which = 0usize;
    while !active.is_empty() {
        which %= active.len();
        let v = active[which];
        let seg = rng.random_range(3..=8usize);
        for _ in 0..seg {
            if cursors[v] >= videos[v].frames.len() {
                break;
            }
            if videos[v].degraded.contains(&cursors[v]) {
                degraded.push(frames.len());
            }
            frames.push(videos[v].frames[cursors[v]].clone());
            cursors[v] += 1;
        }
        if cursors[v] >= videos[v].frames.len() {
            active.remove(which);
        } else {
            which += 1;
        }
    }
    SyntheticVideo { frames, degraded }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_identity_is_deterministic_and_uniform() {
        let a = sample_identity(0);
        let b = sample_identity(0);
        assert_eq!(a, b);

        let c = sample_identity(1);
        assert!(a.params.iter().zip(&c.params).any(|(x, y)| x != y));

        // Monte-Carlo oracle: component means of 10k draws sit near 0.5.
        let mut sums = [0.0; LATENT_DIM];
        for seed in 0..10_000u64 {
            let l = sample_identity(seed);
            for (s, p) in sums.iter_mut().zip(&l.params) {
                *s += p;
            }
        }
        for s in sums {
            let mean = s / 10_000.0;
            assert!((0.45..=0.55).contains(&mean), "component mean {mean}");
        }
    }

    #[test]
    fn render_is_pure() {
        let latent = sample_identity(3);
        let p = RenderParams::frontal();
        let a = render(&latent, &p).unwrap();
        let b = render(&latent, &p).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.fg_mask, b.fg_mask);
    }

    #[test]
    fn render_rejects_out_of_range_params() {
        let latent = sample_identity(0);
        let mut p = RenderParams::frontal();
        p.yaw = 60.0;
        assert!(render(&latent, &p).is_err());
        let mut p = RenderParams::frontal();
        p.lighting = 0.2;
        assert!(render(&latent, &p).is_err());
    }

    #[test]
    fn mask_coverage_within_bounds_across_poses() {
        let latent = sample_identity(5);
        let mut rng = rng::stream(17, 0);
        for _ in 0..50 {
            let p = sample_render_params(&mut rng);
            let f = render(&latent, &p).unwrap();
            let cov = f.fg_mask.coverage();
            assert!((0.2..=0.9).contains(&cov), "coverage {cov} at {p:?}");
        }
    }

    #[test]
    fn yaw_changes_many_foreground_pixels() {
        let latent = sample_identity(7);
        let frontal = render(&latent, &RenderParams::frontal()).unwrap();
        let mut turned_params = RenderParams::frontal();
        turned_params.yaw = 30.0;
        let turned = render(&latent, &turned_params).unwrap();
        let fg = frontal.fg_mask.count();
        let differing = frontal.image.differing_pixels(&turned.image);
        assert!(
            differing as f64 >= 0.05 * fg as f64,
            "{differing} differing vs {fg} fg pixels"
        );
    }

    #[test]
    fn brightness_monotone_in_lighting() {
        let latent = sample_identity(11);
        let mut lo = RenderParams::frontal();
        lo.lighting = 1.0;
        let mut hi = RenderParams::frontal();
        hi.lighting = 1.5;
        let a = render(&latent, &lo).unwrap().image.mean_brightness();
        let b = render(&latent, &hi).unwrap().image.mean_brightness();
        assert!(b > a, "brightness {b} at 1.5 vs {a} at 1.0");
    }

    #[test]
    fn every_latent_component_is_visible() {
        // Perturbing any single component by the distinctness threshold
        // (L-inf 0.05) must change at least one pixel.
        let base = IdentityLatent { params: [0.5; 8] };
        let canonical = render(&base, &RenderParams::frontal()).unwrap();
        for i in 0..LATENT_DIM {
            let mut perturbed = base.clone();
            perturbed.params[i] += 0.05;
            let img = render(&perturbed, &RenderParams::frontal()).unwrap();
            let d = canonical.image.l1_distance(&img.image);
            assert!(d > 0, "component {i} invisible at +0.05");
        }
    }

    #[test]
    fn expression_moves_geometry() {
        let latent = sample_identity(13);
        let neutral = render(&latent, &RenderParams::frontal()).unwrap();
        for i in 0..3 {
            let mut p = RenderParams::frontal();
            p.expression[i] = 1.0;
            let moved = render(&latent, &p).unwrap();
            assert!(
                neutral.image.l1_distance(&moved.image) > 0,
                "expression component {i} has no effect"
            );
        }
    }

    #[test]
    fn nearest_neighbor_identifies_50_identities() {
        // Gallery at fixed params; all cross-identity distances must be
        // positive so 1-NN is exact for every query.
        let mut latents = Vec::new();
        let mut seed = 0u64;
        while latents.len() < 50 {
            let cand = sample_identity(seed);
            seed += 1;
            if latents
                .iter()
                .all(|l: &IdentityLatent| l.linf_distance(&cand) >= 0.05)
            {
                latents.push(cand);
            }
        }
        let p = RenderParams::frontal();
        let gallery: Vec<Rgb8Image> = latents
            .iter()
            .map(|l| render(l, &p).unwrap().image)
            .collect();
        for i in 0..gallery.len() {
            for j in 0..gallery.len() {
                if i != j {
                    assert!(
                        gallery[i].l1_distance(&gallery[j]) > 0,
                        "identities {i} and {j} render identically"
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_shapes_spread_and_determinism() {
        let a = generate_dataset(2, 8, 42).unwrap();
        assert_eq!(a.len(), 2);
        for rec in &a {
            assert_eq!(rec.faces.len(), 8);
            for f in &rec.faces {
                assert_eq!(f.identity_id, rec.identity_id);
                f.params.validate().unwrap();
                let cov = f.fg_mask.coverage();
                assert!((0.2..=0.9).contains(&cov));
            }
            let params: Vec<RenderParams> = rec.faces.iter().map(|f| f.params).collect();
            assert!(max_pairwise_pose_spread(&params) >= POSE_SPREAD_MIN);
        }
        let b = generate_dataset(2, 8, 42).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (fa, fb) in ra.faces.iter().zip(&rb.faces) {
                assert_eq!(fa.image, fb.image);
            }
        }
    }

    #[test]
    fn video_walk_is_smooth_and_degrades_exact_count() {
        let latent = sample_identity(21);
        let video = generate_video_opts(
            &latent,
            100,
            9,
            &VideoOptions {
                degrade_fraction: 0.2,
                identity_id: 4,
                image_size: 32,
            },
        )
        .unwrap();
        assert_eq!(video.frames.len(), 100);
        assert_eq!(video.degraded.len(), 20);
        for pair in video.frames.windows(2) {
            let d = pose_distance(pair[0].params.pose(), pair[1].params.pose());
            assert!(d <= 9.0 + 1e-9, "pose jump {d}");
        }
        for f in &video.frames {
            assert_eq!(f.identity_id, 4);
        }
    }
}
