use image::{imageops, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Classical label-preserving image transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOp {
    /// Horizontal flip with probability 1/2.
    HFlip,
    /// Zero-pad by 4 pixels, then crop back to the original size at a random offset.
    CropPad4,
    /// Rotation by a random multiple of 90 degrees (square images only).
    Rotate90,
}

const PAD: u32 = 4;

/// Applies `ops` in order with randomness drawn from `seed`.
pub fn transform_augment(image: &RgbImage, ops: &[TransformOp], seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.clone();
    for op in ops {
        img = match op {
            TransformOp::HFlip => {
                if rng.random_bool(0.5) {
                    imageops::flip_horizontal(&img)
                } else {
                    img
                }
            }
            TransformOp::CropPad4 => {
                let (w, h) = img.dimensions();
                let dx = rng.random_range(0..=2 * PAD);
                let dy = rng.random_range(0..=2 * PAD);
                let mut padded = RgbImage::new(w + 2 * PAD, h + 2 * PAD);
                imageops::replace(&mut padded, &img, PAD as i64, PAD as i64);
                imageops::crop_imm(&padded, dx, dy, w, h).to_image()
            }
            TransformOp::Rotate90 => {
                if img.width() != img.height() {
                    img
                } else {
                    match rng.random_range(0..4u8) {
                        0 => img,
                        1 => imageops::rotate90(&img),
                        2 => imageops::rotate180(&img),
                        _ => imageops::rotate270(&img),
                    }
                }
            }
        };
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn ramp() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8 * 10, y as u8 * 10, 7]))
    }

    #[test]
    fn keeps_size_and_is_deterministic() {
        let ops = [TransformOp::HFlip, TransformOp::CropPad4, TransformOp::Rotate90];
        for seed in 0..10 {
            let a = transform_augment(&ramp(), &ops, seed);
            assert_eq!(a.dimensions(), (16, 16));
            assert_eq!(a, transform_augment(&ramp(), &ops, seed));
        }
    }

    #[test]
    fn flip_is_either_identity_or_mirror() {
        let mirror = imageops::flip_horizontal(&ramp());
        let mut seen = [false; 2];
        for seed in 0..20 {
            let a = transform_augment(&ramp(), &[TransformOp::HFlip], seed);
            if a == ramp() {
                seen[0] = true;
            } else {
                assert_eq!(a, mirror);
                seen[1] = true;
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn crop_pad_shifts_content() {
        for seed in 0..20 {
            let a = transform_augment(&ramp(), &[TransformOp::CropPad4], seed);
            // Some source pixel survives at an offset of at most 4 in each axis.
            let c = a.get_pixel(8, 8).0;
            if c != [0, 0, 0] {
                let (sx, sy) = (c[0] as i32 / 10, c[1] as i32 / 10);
                assert!((sx - 8).abs() <= 4 && (sy - 8).abs() <= 4);
            }
        }
    }
}
