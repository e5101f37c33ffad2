//! Pixel-level plumbing: 8-bit RGB buffers, float images, patch layout
//! conversions, blur and sharpness scoring, PNG io.

use std::path::Path;

use ndarray::Array2;

use crate::error::Result;
use crate::scalar::{s, Scalar};

/// Row-major H x W x 3 buffer of 8-bit sRGB-ish values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(h: usize, w: usize) -> Self {
        Rgb8Image {
            h,
            w,
            data: vec![0; h * w * 3],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.w + x) * 3 + c] = v;
    }

    /// Sum of absolute per-channel differences.
    pub fn l1_distance(&self, other: &Rgb8Image) -> u64 {
        assert_eq!(self.data.len(), other.data.len(), "image size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
            .sum()
    }

    /// Count of pixels where any channel differs.
    pub fn differing_pixels(&self, other: &Rgb8Image) -> usize {
        assert_eq!(self.data.len(), other.data.len(), "image size mismatch");
        (0..self.h * self.w)
            .filter(|i| self.data[i * 3..i * 3 + 3] != other.data[i * 3..i * 3 + 3])
            .count()
    }

    pub fn mean_brightness(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// 3x3 box blur with clamped edges, `passes` times.
    pub fn box_blur3(&self, passes: usize) -> Rgb8Image {
        let mut cur = self.clone();
        for _ in 0..passes {
            let mut next = Rgb8Image::new(self.h, self.w);
            for y in 0..self.h {
                for x in 0..self.w {
                    for c in 0..3 {
                        let mut sum = 0u32;
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let yy = (y as i64 + dy).clamp(0, self.h as i64 - 1) as usize;
                                let xx = (x as i64 + dx).clamp(0, self.w as i64 - 1) as usize;
                                sum += cur.get(yy, xx, c) as u32;
                            }
                        }
                        next.set(y, x, c, (sum / 9) as u8);
                    }
                }
            }
            cur = next;
        }
        cur
    }

    /// Variance of the 4-neighbour Laplacian of the grayscale image.
    /// Sharp renders score high, blurred ones low.
    pub fn laplacian_variance(&self) -> f64 {
        if self.h < 3 || self.w < 3 {
            return 0.0;
        }
        let gray = |y: usize, x: usize| -> f64 {
            0.299 * self.get(y, x, 0) as f64
                + 0.587 * self.get(y, x, 1) as f64
                + 0.114 * self.get(y, x, 2) as f64
        };
        let mut vals = Vec::with_capacity((self.h - 2) * (self.w - 2));
        for y in 1..self.h - 1 {
            for x in 1..self.w - 1 {
                vals.push(
                    4.0 * gray(y, x) - gray(y - 1, x) - gray(y + 1, x) - gray(y, x - 1)
                        - gray(y, x + 1),
                );
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.data.clone())
            .expect("raw buffer size");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        Ok(Rgb8Image {
            h: img.height() as usize,
            w: img.width() as usize,
            data: img.into_raw(),
        })
    }
}

/// Boolean foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(h: usize, w: usize) -> Self {
        MaskImage {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn coverage(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len() as f64
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.w as u32, self.h as u32, buf)
            .expect("raw buffer size");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        Ok(MaskImage {
            h: img.height() as usize,
            w: img.width() as usize,
            data: img.into_raw().into_iter().map(|v| v > 127).collect(),
        })
    }
}

/// Float RGB image in [0,1] (values may leave the range mid-pipeline).
#[derive(Debug, Clone)]
pub struct FloatImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn from_u8(img: &Rgb8Image) -> Self {
        FloatImage {
            h: img.h,
            w: img.w,
            data: img.data.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn to_u8(&self) -> Rgb8Image {
        Rgb8Image {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.w + x) * 3 + c]
    }
}

/// Number of patch tokens for an image of the given size.
pub fn patch_count(h: usize, w: usize, patch: usize) -> usize {
    assert!(
        h % patch == 0 && w % patch == 0,
        "image {h}x{w} not divisible by patch {patch}"
    );
    (h / patch) * (w / patch)
}

/// Patchify a float image into tokens x (patch*patch*3), mapping pixel
/// values from [0,1] into [lo,hi]. Patches scan row-major over the grid,
/// pixels row-major within a patch, channels innermost.
pub fn patchify<F: Scalar>(img: &FloatImage, patch: usize, lo: f64, hi: f64) -> Array2<F> {
    let (gh, gw) = (img.h / patch, img.w / patch);
    assert!(
        img.h % patch == 0 && img.w % patch == 0,
        "image {}x{} not divisible by patch {patch}",
        img.h,
        img.w
    );
    let dim = patch * patch * 3;
    let mut out = Array2::zeros((gh * gw, dim));
    for py in 0..gh {
        for px in 0..gw {
            let row = py * gw + px;
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..3 {
                        let v = img.get(py * patch + dy, px * patch + dx, c);
                        out[(row, (dy * patch + dx) * 3 + c)] = s(lo + v * (hi - lo));
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]: tokens back to a float image in [0,1] space.
pub fn unpatchify<F: Scalar>(
    tokens: &Array2<F>,
    h: usize,
    w: usize,
    patch: usize,
    lo: f64,
    hi: f64,
) -> FloatImage {
    let (gh, gw) = (h / patch, w / patch);
    assert_eq!(tokens.dim(), (gh * gw, patch * patch * 3), "token layout");
    let mut img = FloatImage {
        h,
        w,
        data: vec![0.0; h * w * 3],
    };
    for py in 0..gh {
        for px in 0..gw {
            let row = py * gw + px;
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..3 {
                        let v = tokens[(row, (dy * patch + dx) * 3 + c)]
                            .to_f64()
                            .unwrap();
                        img.data[((py * patch + dy) * w + px * patch + dx) * 3 + c] =
                            (v - lo) / (hi - lo);
                    }
                }
            }
        }
    }
    img
}

/// Foreground mask in the patch token layout (1.0 where the pixel is
/// foreground, replicated over channels).
pub fn mask_to_patch_layout<F: Scalar>(mask: &MaskImage, patch: usize) -> Array2<F> {
    let (gh, gw) = (mask.h / patch, mask.w / patch);
    let dim = patch * patch * 3;
    let mut out = Array2::zeros((gh * gw, dim));
    for py in 0..gh {
        for px in 0..gw {
            let row = py * gw + px;
            for dy in 0..patch {
                for dx in 0..patch {
                    let v = if mask.get(py * patch + dy, px * patch + dx) {
                        F::one()
                    } else {
                        F::zero()
                    };
                    for c in 0..3 {
                        out[(row, (dy * patch + dx) * 3 + c)] = v;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let mut img = Rgb8Image::new(8, 8);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 7 % 251) as u8;
        }
        let f = FloatImage::from_u8(&img);
        let tokens: Array2<f64> = patchify(&f, 4, -1.0, 1.0);
        assert_eq!(tokens.dim(), (4, 48));
        let back = unpatchify(&tokens, 8, 8, 4, -1.0, 1.0);
        assert_eq!(back.to_u8(), img);
    }

    #[test]
    fn blur_reduces_laplacian_variance() {
        let mut img = Rgb8Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                let v = if (x + y) % 2 == 0 { 220 } else { 30 };
                for c in 0..3 {
                    img.set(y, x, c, v);
                }
            }
        }
        let sharp = img.laplacian_variance();
        let blurred = img.box_blur3(2).laplacian_variance();
        assert!(blurred < sharp * 0.5, "blur {blurred} vs sharp {sharp}");
    }

    #[test]
    fn mask_patch_layout_marks_channels() {
        let mut m = MaskImage::new(4, 4);
        m.set(0, 0, true);
        let layout: Array2<f64> = mask_to_patch_layout(&m, 4);
        assert_eq!(layout[(0, 0)], 1.0);
        assert_eq!(layout[(0, 1)], 1.0);
        assert_eq!(layout[(0, 2)], 1.0);
        assert_eq!(layout[(0, 3)], 0.0);
        let total: f64 = layout.iter().sum();
        assert_eq!(total, 3.0);
    }
}
