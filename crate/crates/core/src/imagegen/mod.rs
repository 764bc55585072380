//! Text-to-image generation.
//!
//! Each synthetic image goes through the same three stages: a 64x64 base
//! sample, a learned upsample to 256x256, and a bilinear resize to the
//! dataset's resolution. Images are content-addressed in an [`ImageCache`] so
//! an interrupted run can be resumed without regenerating finished images.

mod cache;
mod stub;
pub mod wire;

pub use cache::{atomic_write, pixel_checksum, CacheKey, CacheMeta, ImageCache, Lookup};
pub use stub::{hue_distance, mean_hue, StubT2I, STUB_HUE_BINS, STUB_MIN_HUE_SEPARATION};
pub use wire::ProcessT2I;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::datasets::{Dataset, PromptSource};
use crate::textgen::LabelSpec;

pub const BASE_SIZE: u32 = 64;
pub const UPSAMPLED_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "three")]
    pub channels: u8,
}

fn three() -> u8 {
    3
}

impl ImageSpec {
    pub fn rgb(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ImageGenError> {
        if self.width == 0 || self.height == 0 || self.channels != 3 {
            return Err(ImageGenError::InvalidSpec(*self));
        }
        Ok(())
    }

    pub fn matches(&self, image: &RgbImage) -> bool {
        image.width() == self.width && image.height() == self.height
    }
}

impl std::fmt::Display for ImageSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub pixels: RgbImage,
    pub prompt: String,
    pub prompt_source: PromptSource,
    pub class_id: u32,
    /// 1-based position within its generation request.
    pub index: u32,
    pub backend_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub label: LabelSpec,
    pub prompt: String,
    pub prompt_source: PromptSource,
    pub count: u32,
    pub target_spec: ImageSpec,
    /// Image `j` is generated with seed `seed + j`.
    pub seed: u64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), ImageGenError> {
        self.target_spec.validate()?;
        if self.count == 0 {
            return Err(ImageGenError::InvalidRequest("count must be at least 1".into()));
        }
        if self.prompt.trim().is_empty() {
            return Err(ImageGenError::InvalidRequest("prompt is empty".into()));
        }
        Ok(())
    }

    pub fn image_seed(&self, index: u32) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// A generated image together with where it sits in the cache.
#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub image: SyntheticImage,
    pub cache_path: std::path::PathBuf,
    pub checksum: String,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub generated: usize,
    pub cache_hits: usize,
    /// Entries whose checksum did not match and were regenerated.
    pub repaired: usize,
}

#[derive(Debug, Error)]
pub enum ImageGenError {
    #[error("invalid image spec {0}")]
    InvalidSpec(ImageSpec),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("cannot resize {from_w}x{from_h} to {to_w}x{to_h}: upscaling is not supported")]
    Upscale { from_w: u32, from_h: u32, to_w: u32, to_h: u32 },
    #[error("backend returned a {got_w}x{got_h} image from the {stage} stage, expected {want}x{want}")]
    StageSize { stage: &'static str, got_w: u32, got_h: u32, want: u32 },
    #[error("generation failed for {} of {} image(s) (completed: {completed:?}); first failure at index {}: {}", failed.len(), failed.len() + completed.len(), failed[0].0, failed[0].1)]
    Partial {
        completed: Vec<u32>,
        failed: Vec<(u32, String)>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cache error: {0}")]
    Cache(String),
}

/// Two-stage text-to-image generator.
///
/// Both stages must be deterministic in `(prompt, seed)`.
pub trait T2IBackend: Send + Sync {
    /// Identifies the model and its sampling settings; part of every cache key.
    fn id(&self) -> String;

    fn max_parallelism(&self) -> usize {
        1
    }

    /// A 64x64 sample for `prompt`.
    fn generate_base(&self, prompt: &str, seed: u64) -> Result<RgbImage, BackendError>;

    /// Lifts a 64x64 sample to 256x256.
    fn upsample(&self, base: &RgbImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError>;

    /// Adapts the generator to a training set. Returns a short receipt.
    fn finetune(&mut self, dataset: &Dataset) -> Result<String, BackendError> {
        let _ = dataset;
        Err(BackendError::Failed {
            backend: self.id(),
            detail: "fine-tuning is not supported by this backend".into(),
        })
    }
}

fn check_stage(stage: &'static str, img: &RgbImage, want: u32) -> Result<(), ImageGenError> {
    if img.width() != want || img.height() != want {
        return Err(ImageGenError::StageSize {
            stage,
            got_w: img.width(),
            got_h: img.height(),
            want,
        });
    }
    Ok(())
}

/// Runs base, upsample and resize for one seed without touching the cache.
pub fn render_one(
    backend: &dyn T2IBackend,
    prompt: &str,
    seed: u64,
    target: &ImageSpec,
) -> Result<RgbImage, ImageGenError> {
    let base = backend.generate_base(prompt, seed)?;
    check_stage("base", &base, BASE_SIZE)?;
    let up = backend.upsample(&base, prompt, seed)?;
    check_stage("upsample", &up, UPSAMPLED_SIZE)?;
    resize(&up, target)
}

/// Produces exactly `req.count` images, reusing cached ones.
///
/// On failure, images that did finish are already in the cache, so calling
/// again only generates the missing indices.
pub fn gen_images(
    backend: &dyn T2IBackend,
    req: &GenerationRequest,
    cache: &ImageCache,
) -> Result<(Vec<GeneratedImage>, GenerationStats), ImageGenError> {
    req.validate()?;
    let backend_id = backend.id();
    let one = |index: u32| -> Result<(GeneratedImage, Lookup), ImageGenError> {
        let seed = req.image_seed(index);
        let key = CacheKey {
            backend_id: backend_id.clone(),
            prompt: req.prompt.clone(),
            seed,
            spec: req.target_spec,
        };
        let lookup = cache.get(&key)?;
        let (pixels, checksum, from_cache) = match &lookup {
            Lookup::Hit(img, checksum) => (img.clone(), checksum.clone(), true),
            Lookup::Miss | Lookup::Corrupt(_) => {
                if let Lookup::Corrupt(reason) = &lookup {
                    log::warn!("cache entry {} is corrupt ({reason}); regenerating", key.digest());
                }
                let img = render_one(backend, &req.prompt, seed, &req.target_spec)?;
                let checksum = cache.put(&key, &img)?;
                (img, checksum, false)
            }
        };
        Ok((
            GeneratedImage {
                image: SyntheticImage {
                    pixels,
                    prompt: req.prompt.clone(),
                    prompt_source: req.prompt_source,
                    class_id: req.label.class_id,
                    index,
                    backend_id: backend_id.clone(),
                    seed,
                },
                cache_path: cache.image_path(&key),
                checksum,
                from_cache,
            },
            lookup,
        ))
    };
    let indices: Vec<u32> = (1..=req.count).collect();
    let results: Vec<_> = if backend.max_parallelism() > 1 {
        indices.par_iter().map(|&j| one(j)).collect()
    } else {
        indices.iter().map(|&j| one(j)).collect()
    };

    let mut images = Vec::with_capacity(results.len());
    let mut stats = GenerationStats::default();
    let mut failed = Vec::new();
    for (j, r) in indices.iter().zip(results) {
        match r {
            Ok((img, lookup)) => {
                match lookup {
                    Lookup::Hit(..) => stats.cache_hits += 1,
                    Lookup::Miss => stats.generated += 1,
                    Lookup::Corrupt(_) => {
                        stats.generated += 1;
                        stats.repaired += 1;
                    }
                }
                images.push(img);
            }
            Err(e) => failed.push((*j, e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(ImageGenError::Partial {
            completed: images.iter().map(|g| g.image.index).collect(),
            failed,
        });
    }
    Ok((images, stats))
}

/// Bilinear downsampling with pixel-center alignment.
///
/// Output pixel `(x, y)` samples the source at
/// `((x + 0.5) * sw / tw - 0.5, (y + 0.5) * sh / th - 0.5)`, clamped to the
/// image, and rounds half up. Equal sizes return an exact copy.
pub fn resize(image: &RgbImage, target: &ImageSpec) -> Result<RgbImage, ImageGenError> {
    target.validate()?;
    let (sw, sh) = image.dimensions();
    if target.width > sw || target.height > sh {
        return Err(ImageGenError::Upscale {
            from_w: sw,
            from_h: sh,
            to_w: target.width,
            to_h: target.height,
        });
    }
    if (target.width, target.height) == (sw, sh) {
        return Ok(image.clone());
    }
    // Positions are kept as exact fractions over 2 * dst, so ties round exactly.
    let taps = |src: u32, dst: u32| -> Vec<(usize, usize, u64)> {
        let den = 2 * dst as i64;
        let max = den * (src as i64 - 1);
        (0..dst as i64)
            .map(|o| {
                let pos = ((2 * o + 1) * src as i64 - dst as i64).clamp(0, max);
                let lo = (pos / den) as usize;
                let hi = (lo + 1).min(src as usize - 1);
                (lo, hi, (pos % den) as u64)
            })
            .collect()
    };
    let (dx, dy) = (2 * target.width as u64, 2 * target.height as u64);
    let den = dx * dy;
    let xs = taps(sw, target.width);
    let ys = taps(sh, target.height);
    let src = image.as_raw();
    let stride = sw as usize * 3;
    let mut out = RgbImage::new(target.width, target.height);
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let px = out.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[yy * stride + xx * 3 + c] as u64;
                let top = at(y0, x0) * (dx - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (dx - fx) + at(y1, x1) * fx;
                let v = top * (dy - fy) + bottom * fy;
                px.0[c] = ((2 * v + den) / (2 * den)).min(255) as u8;
            }
        }
    }
    Ok(out)
}

/// Per-channel standardization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardize {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Converts to channel-major floats: `pixel / 255`, then `(x - mean) / std`
/// when `standardize` is given. Layout is `[c][y][x]`.
pub fn normalize(image: &RgbImage, standardize: Option<&Standardize>) -> Vec<f32> {
    let (w, h) = image.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0f32; plane * 3];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            let mut v = px.0[c] as f32 / 255.0;
            if let Some(s) = standardize {
                v = (v - s.mean[c]) / s.std[c];
            }
            out[c * plane + i] = v;
        }
    }
    out
}
