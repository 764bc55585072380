use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{T2IBackend, BASE_SIZE, UPSAMPLED_SIZE};
use crate::backend::BackendError;
use crate::datasets::Dataset;

/// Number of distinct base hues; a prompt's hue is `bin * 360 / STUB_HUE_BINS`.
pub const STUB_HUE_BINS: u64 = 12;

/// Minimum mean-hue distance, in degrees, between stub images of two prompts
/// that land in different hue bins.
pub const STUB_MIN_HUE_SEPARATION: f64 = 15.0;

const SATURATION: f64 = 0.2;
const VALUE: f64 = 0.5;
const BRIGHTNESS_JITTER: f64 = 50.0;
const GRADIENT_AMPLITUDE: f64 = 40.0;
const PIXEL_NOISE: f64 = 48.0;
const DETAIL_NOISE: i32 = 3;

/// Procedural text-to-image backend.
///
/// Every image of a prompt has the prompt's base hue. Seeds vary brightness,
/// a linear shading gradient and per-pixel noise, none of which move the
/// mean hue, so images of different prompts stay linearly separable on their
/// mean color while images of one prompt all differ.
#[derive(Debug, Default, Clone)]
pub struct StubT2I {
    finetune_calls: Vec<usize>,
}

impl StubT2I {
    pub const ID: &'static str = "stub-t2i";

    pub fn new() -> Self {
        Self::default()
    }

    /// Image counts of the datasets passed to `finetune`, in call order.
    pub fn finetune_calls(&self) -> &[usize] {
        &self.finetune_calls
    }

    pub fn hue_bin(prompt: &str) -> u64 {
        crate::digest::hash64(prompt.as_bytes()) % STUB_HUE_BINS
    }

    pub fn base_color(prompt: &str) -> [f64; 3] {
        let hue = Self::hue_bin(prompt) as f64 * 360.0 / STUB_HUE_BINS as f64;
        hsv_to_rgb(hue, SATURATION, VALUE)
    }

    /// Base stage of the stub; also available without a backend handle.
    pub fn stub_generate(prompt: &str, seed: u64) -> RgbImage {
        let mut rng = rng_for(prompt, seed, b"base");
        let color = Self::base_color(prompt);
        let brightness = rng.random_range(-BRIGHTNESS_JITTER..=BRIGHTNESS_JITTER);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let gradient = rng.random_range(0.0..=GRADIENT_AMPLITUDE);
        let (dx, dy) = (angle.cos(), angle.sin());
        let n = BASE_SIZE as f64;
        let mut img = RgbImage::new(BASE_SIZE, BASE_SIZE);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let t = ((x as f64 + 0.5) / n - 0.5) * dx + ((y as f64 + 0.5) / n - 0.5) * dy;
            let shade = brightness + gradient * 2.0 * t;
            for (channel, base) in px.0.iter_mut().zip(color) {
                let noise = rng.random_range(-PIXEL_NOISE..=PIXEL_NOISE);
                *channel = (base + shade + noise).round().clamp(0.0, 255.0) as u8;
            }
        }
        img
    }

    fn stub_upsample(base: &RgbImage, prompt: &str, seed: u64) -> RgbImage {
        let mut rng = rng_for(prompt, seed, b"upsample");
        let (bw, bh) = base.dimensions();
        let sx = bw as f64 / UPSAMPLED_SIZE as f64;
        let sy = bh as f64 / UPSAMPLED_SIZE as f64;
        let mut out = RgbImage::new(UPSAMPLED_SIZE, UPSAMPLED_SIZE);
        for (x, y, px) in out.enumerate_pixels_mut() {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (bw - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (bh - 1) as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(bw - 1), (y0 + 1).min(bh - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..3 {
                let p = |xx: u32, yy: u32| base.get_pixel(xx, yy).0[c] as f64;
                let v = (p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx) * (1.0 - ty)
                    + (p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx) * ty;
                let detail = rng.random_range(-DETAIL_NOISE..=DETAIL_NOISE) as f64;
                px.0[c] = (v + detail).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

fn rng_for(prompt: &str, seed: u64, stage: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(stage);
    h.update((prompt.len() as u64).to_le_bytes());
    h.update(prompt.as_bytes());
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl T2IBackend for StubT2I {
    fn id(&self) -> String {
        Self::ID.into()
    }

    fn max_parallelism(&self) -> usize {
        usize::MAX
    }

    fn generate_base(&self, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        Ok(Self::stub_generate(prompt, seed))
    }

    fn upsample(&self, base: &RgbImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        Ok(Self::stub_upsample(base, prompt, seed))
    }

    /// Records the call and leaves generation unchanged.
    fn finetune(&mut self, dataset: &Dataset) -> Result<String, BackendError> {
        let n = dataset.total_images();
        self.finetune_calls.push(n);
        Ok(format!("stub-t2i: recorded fine-tune request over {n} images (no-op)"))
    }
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Hue, in degrees, of the image's mean color.
pub fn mean_hue(image: &RgbImage) -> f64 {
    let n = (image.width() * image.height()) as f64;
    let mut sum = [0f64; 3];
    for Rgb(p) in image.pixels() {
        for c in 0..3 {
            sum[c] += p[c] as f64;
        }
    }
    let [r, g, b] = sum.map(|s| s / n);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / d)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    h.rem_euclid(360.0)
}

/// Circular distance between two hues in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_prompt_and_seed_same_bytes() {
        assert_eq!(StubT2I::stub_generate("bike", 4), StubT2I::stub_generate("bike", 4));
        assert_ne!(StubT2I::stub_generate("bike", 4), StubT2I::stub_generate("bike", 5));
    }

    #[test]
    fn bike_and_chair_hues_are_separated() {
        assert_ne!(StubT2I::hue_bin("bike"), StubT2I::hue_bin("chair"));
        for seed in 0..20 {
            let a = mean_hue(&StubT2I::stub_generate("bike", seed));
            let b = mean_hue(&StubT2I::stub_generate("chair", seed * 7 + 3));
            assert!(hue_distance(a, b) > STUB_MIN_HUE_SEPARATION, "{a} vs {b}");
        }
    }

    #[test]
    fn mean_hue_tracks_base_hue() {
        for prompt in ["bike", "chair", "apple", "whale", "tractor"] {
            let expected = StubT2I::hue_bin(prompt) as f64 * 30.0;
            for seed in 0..5 {
                let h = mean_hue(&StubT2I::stub_generate(prompt, seed));
                assert!(hue_distance(h, expected) < STUB_MIN_HUE_SEPARATION / 2.0, "{prompt}: {h}");
            }
        }
    }

    #[test]
    fn upsample_shape_and_determinism() {
        let stub = StubT2I::new();
        let base = stub.generate_base("cat", 1).unwrap();
        let a = stub.upsample(&base, "cat", 1).unwrap();
        assert_eq!(a.dimensions(), (256, 256));
        assert_eq!(a, stub.upsample(&base, "cat", 1).unwrap());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 255.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0.0, 0.0, 255.0]);
    }
}
