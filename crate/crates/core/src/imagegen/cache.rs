//! Content-addressed image cache.
//!
//! Layout: `<root>/<backend_id>/<key>.png` with a `<key>.meta` JSON sidecar
//! holding the prompt, seed, spec and the SHA-256 of the raw RGB bytes.
//! Files are written to a temporary name and renamed into place, so readers
//! never observe a half-written entry.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ImageGenError, ImageSpec};
use crate::digest::{json_digest, sha256_hex};

/// Everything that determines an image's bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub backend_id: String,
    pub prompt: String,
    pub seed: u64,
    pub spec: ImageSpec,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub backend_id: String,
    pub prompt: String,
    pub seed: u64,
    pub spec: ImageSpec,
    /// SHA-256 of the raw row-major RGB bytes.
    pub checksum: String,
}

#[derive(Debug)]
pub enum Lookup {
    Hit(RgbImage, String),
    Miss,
    Corrupt(String),
}

#[derive(Debug, Clone)]
pub struct ImageCache {
    root: PathBuf,
}

pub fn pixel_checksum(image: &RgbImage) -> String {
    sha256_hex(image.as_raw())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ImageGenError {
    ImageGenError::Cache(format!("{}: {e}", path.display()))
}

impl ImageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, key: &CacheKey) -> PathBuf {
        self.root.join(sanitize(&key.backend_id))
    }

    pub fn image_path(&self, key: &CacheKey) -> PathBuf {
        self.dir(key).join(format!("{}.png", key.digest()))
    }

    pub fn meta_path(&self, key: &CacheKey) -> PathBuf {
        self.dir(key).join(format!("{}.meta", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Lookup, ImageGenError> {
        let (img_path, meta_path) = (self.image_path(key), self.meta_path(key));
        if !img_path.exists() || !meta_path.exists() {
            return Ok(Lookup::Miss);
        }
        let meta: CacheMeta = match std::fs::read(&meta_path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
        {
            Ok(m) => m,
            Err(e) => return Ok(Lookup::Corrupt(format!("unreadable sidecar: {e}"))),
        };
        if meta.prompt != key.prompt || meta.seed != key.seed || meta.spec != key.spec {
            return Ok(Lookup::Corrupt("sidecar does not match key".into()));
        }
        let img = match image::open(&img_path) {
            Ok(i) => i.to_rgb8(),
            Err(e) => return Ok(Lookup::Corrupt(format!("undecodable image: {e}"))),
        };
        if !key.spec.matches(&img) {
            return Ok(Lookup::Corrupt("image dimensions differ from spec".into()));
        }
        let sum = pixel_checksum(&img);
        if sum != meta.checksum {
            return Ok(Lookup::Corrupt("checksum mismatch".into()));
        }
        Ok(Lookup::Hit(img, sum))
    }

    /// Stores `image` under `key` and returns its checksum.
    pub fn put(&self, key: &CacheKey, image: &RgbImage) -> Result<String, ImageGenError> {
        let dir = self.dir(key);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut png = Vec::new();
        PngEncoder::new(&mut png)
            .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
            .map_err(|e| io_err(&dir, e))?;
        let checksum = pixel_checksum(image);
        let meta = CacheMeta {
            backend_id: key.backend_id.clone(),
            prompt: key.prompt.clone(),
            seed: key.seed,
            spec: key.spec,
            checksum: checksum.clone(),
        };
        let mut meta_bytes = serde_json::to_vec_pretty(&meta).expect("serializable meta");
        meta_bytes.push(b'\n');
        // Image first: an entry only counts once its sidecar exists.
        atomic_write(&self.image_path(key), &png)?;
        atomic_write(&self.meta_path(key), &meta_bytes)?;
        Ok(checksum)
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ImageGenError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}
