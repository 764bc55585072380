use image::RgbImage;

use super::TrainError;
use crate::datasets::{transform_augment, Dataset, TransformOp};
use crate::imagegen::{normalize, resize, ImageSpec, Standardize};

/// Per-channel standardization applied to every training input.
pub const INPUT_STANDARDIZE: Standardize = Standardize {
    mean: [0.5, 0.5, 0.5],
    std: [0.25, 0.25, 0.25],
};

/// Decoded, resized and normalized images with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub spec: ImageSpec,
    pub num_classes: usize,
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn from_images(images: &[(RgbImage, usize)], spec: ImageSpec, num_classes: usize) -> Result<Self, TrainError> {
        let mut inputs = Vec::with_capacity(images.len());
        let mut labels = Vec::with_capacity(images.len());
        for (img, label) in images {
            if *label >= num_classes {
                return Err(TrainError::Data(format!("label {label} out of range for {num_classes} classes")));
            }
            let img = resize(img, &spec).map_err(|e| TrainError::Data(e.to_string()))?;
            inputs.push(normalize(&img, Some(&INPUT_STANDARDIZE)));
            labels.push(*label);
        }
        Ok(Self {
            spec,
            num_classes,
            inputs,
            labels,
        })
    }

    /// Loads every image of `ds`, whatever its provenance or split.
    pub fn from_dataset(ds: &Dataset, spec: ImageSpec) -> Result<Self, TrainError> {
        Self::from_images(&load_images(ds)?, spec, ds.num_classes())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn load_images(ds: &Dataset) -> Result<Vec<(RgbImage, usize)>, TrainError> {
    let mut out = Vec::with_capacity(ds.total_images());
    for cat in &ds.categories {
        for (_, r) in cat.images() {
            let img = image::open(&r.path).map_err(|e| TrainError::Data(format!("{}: {e}", r.path)))?;
            out.push((img.to_rgb8(), cat.class_id() as usize));
        }
    }
    Ok(out)
}

/// The originals followed by `copies` transformed versions of each.
pub fn with_transform_copies(images: &[(RgbImage, usize)], ops: &[TransformOp], copies: usize, seed: u64) -> Vec<(RgbImage, usize)> {
    let mut out = images.to_vec();
    for c in 0..copies {
        for (i, (img, label)) in images.iter().enumerate() {
            let s = seed.wrapping_add((c * images.len() + i) as u64);
            out.push((transform_augment(img, ops, s), *label));
        }
    }
    out
}
