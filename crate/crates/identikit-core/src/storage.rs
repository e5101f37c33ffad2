//! On-disk layout for datasets and video streams.
//!
//! Dataset directory:
//!   manifest.json                  top-level list of identities + seed
//!   id_00000/meta.json             latent, identity id, per-frame params
//!   id_00000/frame_000.png         8-bit RGB
//!   id_00000/frame_000_mask.png    8-bit grayscale foreground mask
//!
//! Video directory:
//!   manifest.json
//!   vid_000/meta.json              per-frame identity/pose/degraded record
//!   vid_000/frame_000.png

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskImage, Rgb8Image};
use crate::synthetic::{
    IdentityLatent, IdentityRecord, RenderParams, RenderedFace, SyntheticVideo,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_identities: usize,
    pub frames_per_id: usize,
    pub image_size: usize,
    pub identities: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMeta {
    pub file: String,
    pub mask_file: String,
    pub params: RenderParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityMeta {
    pub identity_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<IdentityLatent>,
    pub frames: Vec<FrameMeta>,
}

pub fn identity_dir_name(id: usize) -> String {
    format!("id_{id:05}")
}

pub fn save_dataset(dir: &Path, records: &[IdentityRecord], seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let image_size = records
        .first()
        .and_then(|r| r.faces.first())
        .map(|f| f.image.h)
        .unwrap_or(0);
    let manifest = DatasetManifest {
        seed,
        n_identities: records.len(),
        frames_per_id: records.first().map(|r| r.faces.len()).unwrap_or(0),
        image_size,
        identities: records
            .iter()
            .map(|r| identity_dir_name(r.identity_id))
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    for rec in records {
        let id_dir = dir.join(identity_dir_name(rec.identity_id));
        fs::create_dir_all(&id_dir)?;
        let mut frames = Vec::new();
        for (i, face) in rec.faces.iter().enumerate() {
            let file = format!("frame_{i:03}.png");
            let mask_file = format!("frame_{i:03}_mask.png");
            face.image.save_png(&id_dir.join(&file))?;
            face.fg_mask.save_png(&id_dir.join(&mask_file))?;
            frames.push(FrameMeta {
                file,
                mask_file,
                params: face.params,
            });
        }
        let meta = IdentityMeta {
            identity_id: rec.identity_id,
            latent: rec.latent.clone(),
            frames,
        };
        write_json(&id_dir.join("meta.json"), &meta)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<IdentityRecord>> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    manifest
        .identities
        .iter()
        .map(|name| {
            let id_dir = dir.join(name);
            let meta: IdentityMeta = read_json(&id_dir.join("meta.json"))?;
            let faces = meta
                .frames
                .iter()
                .map(|fm| {
                    Ok(RenderedFace {
                        image: Rgb8Image::load_png(&id_dir.join(&fm.file))?,
                        fg_mask: MaskImage::load_png(&id_dir.join(&fm.mask_file))?,
                        identity_id: meta.identity_id,
                        params: fm.params,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IdentityRecord {
                identity_id: meta.identity_id,
                latent: meta.latent.clone(),
                faces,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoManifest {
    pub seed: u64,
    pub videos: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoFrameMeta {
    pub file: String,
    pub mask_file: String,
    pub identity_id: usize,
    pub params: RenderParams,
    pub degraded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoMeta {
    pub frames: Vec<VideoFrameMeta>,
}

pub fn video_dir_name(idx: usize) -> String {
    format!("vid_{idx:03}")
}

pub fn save_videos(dir: &Path, videos: &[SyntheticVideo], seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = VideoManifest {
        seed,
        videos: (0..videos.len()).map(video_dir_name).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    for (vi, video) in videos.iter().enumerate() {
        let vdir = dir.join(video_dir_name(vi));
        fs::create_dir_all(&vdir)?;
        let mut frames = Vec::new();
        for (fi, frame) in video.frames.iter().enumerate() {
            let file = format!("frame_{fi:04}.png");
            let mask_file = format!("frame_{fi:04}_mask.png");
            frame.image.save_png(&vdir.join(&file))?;
            frame.fg_mask.save_png(&vdir.join(&mask_file))?;
            frames.push(VideoFrameMeta {
                file,
                mask_file,
                identity_id: frame.identity_id,
                params: frame.params,
                degraded: video.degraded.contains(&fi),
            });
        }
        write_json(&vdir.join("meta.json"), &VideoMeta { frames })?;
    }
    Ok(())
}

/// Loaded video frames keep ground-truth identity and pose from metadata.
pub struct LoadedVideo {
    pub name: String,
    pub frames: Vec<RenderedFace>,
    pub degraded: Vec<usize>,
}

pub fn load_videos(dir: &Path) -> Result<Vec<LoadedVideo>> {
    let manifest: VideoManifest = read_json(&dir.join("manifest.json"))?;
    manifest
        .videos
        .iter()
        .map(|name| {
            let vdir = dir.join(name);
            let meta: VideoMeta = read_json(&vdir.join("meta.json"))?;
            let mut degraded = Vec::new();
            let frames = meta
                .frames
                .iter()
                .enumerate()
                .map(|(i, fm)| {
                    if fm.degraded {
                        degraded.push(i);
                    }
                    let image = Rgb8Image::load_png(&vdir.join(&fm.file))?;
                    let fg_mask = MaskImage::load_png(&vdir.join(&fm.mask_file))?;
                    Ok(RenderedFace {
                        image,
                        fg_mask,
                        identity_id: fm.identity_id,
                        params: fm.params,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedVideo {
                name: name.clone(),
                frames,
                degraded,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_dataset, generate_video_opts, sample_identity, VideoOptions};

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let records = generate_dataset(2, 3, 7).unwrap();
        save_dataset(dir.path(), &records, 7).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.identity_id, b.identity_id);
            assert_eq!(a.latent, b.latent);
            for (fa, fb) in a.faces.iter().zip(&b.faces) {
                assert_eq!(fa.image, fb.image);
                assert_eq!(fa.fg_mask, fb.fg_mask);
                assert_eq!(fa.params, fb.params);
            }
        }
    }

    #[test]
    fn video_round_trip_keeps_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let latent = sample_identity(1);
        let video = generate_video_opts(
            &latent,
            10,
            3,
            &VideoOptions {
                degrade_fraction: 0.2,
                identity_id: 9,
                image_size: 32,
            },
        )
        .unwrap();
        save_videos(dir.path(), &[video.clone()], 3).unwrap();
        let loaded = load_videos(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].degraded, video.degraded);
        for (a, b) in video.frames.iter().zip(&loaded[0].frames) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.identity_id, b.identity_id);
            assert_eq!(a.params, b.params);
        }
    }
}
