//! Dataset model and the procedures that build training sets from it:
//! synthetic augmentation, long-tail and few-shot subsets, adversarial
//! injection, holdout splitting and a classical transform baseline.
//!
//! Builders take a dataset by reference and return a new one. Every random
//! choice is drawn from a ChaCha stream keyed by `(seed, operation, class)`,
//! so results depend only on the seed, never on call order.

mod manifest;
mod ratio;
mod transform;

pub use manifest::{
    load_manifest, manifest_digest, parse_manifest, provenance_counts, save_manifest, to_manifest_string, ManifestHeader,
    ManifestRecord,
};
pub use ratio::Ratio;
pub use transform::{transform_augment, TransformOp};

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagegen::{GeneratedImage, ImageSpec};
use crate::textgen::LabelSpec;
use crate::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
    Adversarial,
}

/// What the text-to-image backend is prompted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    Label,
    Description,
}

impl std::str::FromStr for PromptSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "label" => Ok(PromptSource::Label),
            "description" => Ok(PromptSource::Description),
            other => Err(format!("unknown prompt source `{other}` (expected label or description)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub split: Split,
}

impl ImageRef {
    pub fn train(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            split: Split::Train,
        }
    }
}

/// A synthetic image reference tagged with the class it was generated for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticRef {
    pub class_id: u32,
    pub image: ImageRef,
}

impl From<&GeneratedImage> for SyntheticRef {
    fn from(g: &GeneratedImage) -> Self {
        Self {
            class_id: g.image.class_id,
            image: ImageRef::train(g.cache_path.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub label: LabelSpec,
    pub real_images: Vec<ImageRef>,
    pub synthetic_images: Vec<ImageRef>,
    pub adversarial_images: Vec<ImageRef>,
}

impl Category {
    pub fn new(label: LabelSpec) -> Self {
        Self {
            label,
            real_images: Vec::new(),
            synthetic_images: Vec::new(),
            adversarial_images: Vec::new(),
        }
    }

    pub fn with_real(label: LabelSpec, real: Vec<ImageRef>) -> Self {
        Self {
            real_images: real,
            ..Self::new(label)
        }
    }

    pub fn class_id(&self) -> u32 {
        self.label.class_id
    }

    /// Real images in the train split; `m` in the count formulas.
    pub fn real_train_count(&self) -> usize {
        self.real_images.iter().filter(|r| r.split == Split::Train).count()
    }

    pub fn total(&self) -> usize {
        self.real_images.len() + self.synthetic_images.len() + self.adversarial_images.len()
    }

    pub fn images(&self) -> impl Iterator<Item = (Provenance, &ImageRef)> {
        self.real_images
            .iter()
            .map(|r| (Provenance::Real, r))
            .chain(self.synthetic_images.iter().map(|r| (Provenance::Synthetic, r)))
            .chain(self.adversarial_images.iter().map(|r| (Provenance::Adversarial, r)))
    }

    pub fn list_mut(&mut self, p: Provenance) -> &mut Vec<ImageRef> {
        match p {
            Provenance::Real => &mut self.real_images,
            Provenance::Synthetic => &mut self.synthetic_images,
            Provenance::Adversarial => &mut self.adversarial_images,
        }
    }

    fn canonicalize(&mut self) {
        for p in [Provenance::Real, Provenance::Synthetic, Provenance::Adversarial] {
            self.list_mut(p).sort();
        }
    }

    fn restrict(&self, split: Split) -> Category {
        let keep = |v: &Vec<ImageRef>| v.iter().filter(|r| r.split == split).cloned().collect();
        Category {
            label: self.label.clone(),
            real_images: keep(&self.real_images),
            synthetic_images: keep(&self.synthetic_images),
            adversarial_images: keep(&self.adversarial_images),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Domain tag for multi-domain benchmarks (e.g. `Amazon`, `Clipart`).
    pub domain: Option<String>,
    pub image_spec: ImageSpec,
    pub categories: Vec<Category>,
}

/// Per-dataset summary: total images, classes and images per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub classes: usize,
    pub per_class_min: usize,
    pub per_class_max: usize,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let per = if self.per_class_min == self.per_class_max {
            self.per_class_min.to_string()
        } else {
            format!("{}-{}", self.per_class_min, self.per_class_max)
        };
        write!(f, "# total {}  # class {}  # per class {}", self.total, self.classes, per)
    }
}

impl Dataset {
    /// An empty dataset with one category per label. Class ids must be
    /// exactly `0..n` in order.
    pub fn new(name: impl Into<String>, image_spec: ImageSpec, labels: Vec<LabelSpec>) -> Result<Self, DatasetError> {
        let ds = Self {
            name: name.into(),
            domain: None,
            image_spec,
            categories: labels.into_iter().map(Category::new).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut texts = HashSet::new();
        for (i, c) in self.categories.iter().enumerate() {
            if c.class_id() as usize != i {
                return Err(DatasetError::InvalidLabels(format!(
                    "category {i} has class_id {}; ids must be 0..n without gaps",
                    c.class_id()
                )));
            }
            if c.label.label_text.trim().is_empty() {
                return Err(DatasetError::InvalidLabels(format!("class {i} has an empty label")));
            }
            if !texts.insert(c.label.label_text.as_str()) {
                return Err(DatasetError::InvalidLabels(format!(
                    "label `{}` is used twice",
                    c.label.label_text
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn labels(&self) -> Vec<LabelSpec> {
        self.categories.iter().map(|c| c.label.clone()).collect()
    }

    pub fn total_images(&self) -> usize {
        self.categories.iter().map(Category::total).sum()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.categories
            .iter()
            .map(|c| match provenance {
                Provenance::Real => c.real_images.len(),
                Provenance::Synthetic => c.synthetic_images.len(),
                Provenance::Adversarial => c.adversarial_images.len(),
            })
            .sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let sizes: Vec<usize> = self.categories.iter().map(Category::total).collect();
        DatasetStats {
            total: sizes.iter().sum(),
            classes: sizes.len(),
            per_class_min: sizes.iter().copied().min().unwrap_or(0),
            per_class_max: sizes.iter().copied().max().unwrap_or(0),
        }
    }

    /// Sorts every image list by `(split, path)`.
    pub fn canonicalize(&mut self) {
        self.categories.iter_mut().for_each(Category::canonicalize);
    }

    /// Only the images of one split, keeping every category.
    pub fn restrict(&self, split: Split) -> Dataset {
        Dataset {
            categories: self.categories.iter().map(|c| c.restrict(split)).collect(),
            ..self.clone()
        }
    }

    /// Union of two datasets over the same label space.
    pub fn combine(&self, other: &Dataset) -> Result<Dataset, DatasetError> {
        if self.labels() != other.labels() {
            return Err(DatasetError::InvalidLabels("label spaces differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.categories.iter_mut().zip(&other.categories) {
            a.real_images.extend(b.real_images.iter().cloned());
            a.synthetic_images.extend(b.synthetic_images.iter().cloned());
            a.adversarial_images.extend(b.adversarial_images.iter().cloned());
        }
        out.canonicalize();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPlan {
    /// Synthetic images per real image; `+20%` is `0.2`.
    pub ratio: Ratio,
    pub prompt_source: PromptSource,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deficit {
    pub class_id: u32,
    pub requested: usize,
    pub provided: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("synthetic image {index} has class_id {found}, category is {expected}")]
    ClassMismatch { index: usize, expected: u32, found: u32 },
    #[error("image provider returned the wrong number of images: {}", format_deficits(.0))]
    Shortfall(Vec<Deficit>),
    #[error("image provider failed for class {class_id}: {message}")]
    Provider { class_id: u32, message: String },
    #[error("holdout fraction must be strictly between 0 and 1, got {0}")]
    InvalidFraction(Ratio),
    #[error("class {class_id} has {real} real image(s); a holdout split needs at least 2")]
    TooFewForHoldout { class_id: u32, real: usize },
    #[error("few-shot size {requested} is invalid for class {class_id} with {available} real image(s)")]
    FewShot { class_id: u32, available: usize, requested: usize },
    #[error("unknown class_id {0}")]
    UnknownClass(u32),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest references missing image(s): {}", .0.join(", "))]
    MissingImages(Vec<String>),
}

fn format_deficits(d: &[Deficit]) -> String {
    d.iter()
        .map(|x| format!("class {} requested {} got {}", x.class_id, x.requested, x.provided))
        .collect::<Vec<_>>()
        .join("; ")
}

const STREAM_LONG_TAIL: u64 = 1 << 32;
const STREAM_FEW_SHOT: u64 = 2 << 32;
const STREAM_HOLDOUT: u64 = 3 << 32;

/// `k` distinct sorted indices out of `len`, drawn uniformly.
fn sample_indices(len: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx = rand::seq::index::sample(&mut rng, len, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Keeps `k` of the category's real train images (other splits untouched).
fn subsample_real(cat: &Category, k: usize, seed: u64, stream: u64) -> Category {
    let (train, other): (Vec<_>, Vec<_>) = cat.real_images.iter().cloned().partition(|r| r.split == Split::Train);
    let keep = sample_indices(train.len(), k, seed, stream | cat.class_id() as u64);
    let mut real: Vec<ImageRef> = keep.into_iter().map(|i| train[i].clone()).collect();
    real.extend(other);
    let mut out = Category {
        real_images: real,
        ..cat.clone()
    };
    out.canonicalize();
    out
}

/// Adds synthetic images to a category. Real images are left as they are.
pub fn augment_category(cat: &Category, synth: &[SyntheticRef]) -> Result<Category, DatasetError> {
    if let Some((index, s)) = synth.iter().enumerate().find(|(_, s)| s.class_id != cat.class_id()) {
        return Err(DatasetError::ClassMismatch {
            index,
            expected: cat.class_id(),
            found: s.class_id,
        });
    }
    let mut out = cat.clone();
    out.synthetic_images.extend(synth.iter().map(|s| s.image.clone()));
    out.canonicalize();
    Ok(out)
}

/// Number of synthetic images `plan` asks for in `cat`.
pub fn synthetic_target(cat: &Category, plan: &AugmentationPlan) -> usize {
    plan.ratio.of_half_up(cat.real_train_count() as u64) as usize
}

/// Adds `round(ratio * m_i)` synthetic images to every category.
///
/// `provider(category, plan, count)` must return exactly `count` images of
/// that category; any mismatch is reported for all categories at once.
pub fn build_augmented_dataset<F>(ds: &Dataset, plan: &AugmentationPlan, mut provider: F) -> Result<Dataset, DatasetError>
where
    F: FnMut(&Category, &AugmentationPlan, usize) -> Result<Vec<SyntheticRef>, DatasetError>,
{
    let mut out = ds.clone();
    let mut deficits = Vec::new();
    for cat in out.categories.iter_mut() {
        let want = synthetic_target(cat, plan);
        if want == 0 {
            continue;
        }
        let synth = provider(cat, plan, want)?;
        if synth.len() != want {
            deficits.push(Deficit {
                class_id: cat.class_id(),
                requested: want,
                provided: synth.len(),
            });
            continue;
        }
        *cat = augment_category(cat, &synth)?;
    }
    if !deficits.is_empty() {
        return Err(DatasetError::Shortfall(deficits));
    }
    Ok(out)
}

/// Number of real images category `i` (1-based) of `n` keeps in a long-tail
/// subset: `max(1, floor(i * m / n))`.
pub fn long_tail_size(i: usize, n: usize, m: usize) -> usize {
    ((i * m) / n).max(1).min(m.max(1))
}

/// Class-imbalanced subset where the `i`-th category keeps `i/n` of its real
/// images, in original category order.
pub fn make_long_tail(ds: &Dataset, seed: u64) -> Dataset {
    let n = ds.categories.len();
    let mut out = ds.clone();
    for (pos, cat) in out.categories.iter_mut().enumerate() {
        let m = cat.real_train_count();
        if m == 0 {
            continue;
        }
        let k = long_tail_size(pos + 1, n, m);
        *cat = subsample_real(cat, k, seed, STREAM_LONG_TAIL);
    }
    out
}

/// Keeps exactly `per_class` real train images in every category.
pub fn make_few_shot(ds: &Dataset, per_class: usize, seed: u64) -> Result<Dataset, DatasetError> {
    for cat in &ds.categories {
        let available = cat.real_train_count();
        if per_class == 0 || per_class > available {
            return Err(DatasetError::FewShot {
                class_id: cat.class_id(),
                available,
                requested: per_class,
            });
        }
    }
    let mut out = ds.clone();
    for cat in out.categories.iter_mut() {
        *cat = subsample_real(cat, per_class, seed, STREAM_FEW_SHOT);
    }
    Ok(out)
}

/// Appends adversarial images (train split) to the given classes.
pub fn inject_adversarial(ds: &Dataset, adv: &BTreeMap<u32, Vec<ImageRef>>) -> Result<Dataset, DatasetError> {
    if let Some(&bad) = adv.keys().find(|&&id| id as usize >= ds.categories.len()) {
        return Err(DatasetError::UnknownClass(bad));
    }
    let mut out = ds.clone();
    for (&id, images) in adv {
        let cat = &mut out.categories[id as usize];
        cat.adversarial_images.extend(images.iter().map(|r| ImageRef {
            path: r.path.clone(),
            split: Split::Train,
        }));
        cat.canonicalize();
    }
    Ok(out)
}

/// Moves `round(fraction * m)` real train images of every category into a
/// validation set. Synthetic and adversarial images always stay in train.
pub fn split_holdout(ds: &Dataset, fraction: Ratio, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if fraction.is_zero() || fraction >= Ratio::ONE {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    for cat in &ds.categories {
        let real = cat.real_train_count();
        if real < 2 {
            return Err(DatasetError::TooFewForHoldout {
                class_id: cat.class_id(),
                real,
            });
        }
    }
    let mut train = ds.clone();
    let mut val = ds.clone();
    for (t, v) in train.categories.iter_mut().zip(val.categories.iter_mut()) {
        let eligible: Vec<ImageRef> = t.real_images.iter().filter(|r| r.split == Split::Train).cloned().collect();
        let k = fraction.of_half_up(eligible.len() as u64) as usize;
        let picked: HashSet<usize> = sample_indices(eligible.len(), k, seed, STREAM_HOLDOUT | t.class_id() as u64)
            .into_iter()
            .collect();
        let mut keep = Vec::new();
        let mut held = Vec::new();
        for (i, r) in eligible.into_iter().enumerate() {
            if picked.contains(&i) {
                held.push(ImageRef {
                    path: r.path,
                    split: Split::Val,
                });
            } else {
                keep.push(r);
            }
        }
        keep.extend(t.real_images.iter().filter(|r| r.split != Split::Train).cloned());
        t.real_images = keep;
        t.canonicalize();
        *v = Category::with_real(t.label.clone(), held);
    }
    Ok((train, val))
}
