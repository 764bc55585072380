//! Generative data augmentation for image classification.
//!
//! The pipeline runs in four steps:
//!
//! 1. fine-tune a text-to-text generator on captions prefixed with a keyword
//!    prompt ([`corpus`], [`textgen`]),
//! 2. turn each class label into a caption-like description ([`textgen`]),
//! 3. synthesize labeled images from the label or the description with a
//!    two-stage text-to-image backend ([`imagegen`]),
//! 4. mix the synthetic images into the real training set under a chosen
//!    ratio or subset setting ([`datasets`]).
//!
//! [`trainer`] measures the effect with a small image classifier and
//! [`metrics`] provides the captioning scores (BLEU4, ROUGE-L, CIDEr-D).
//!
//! Every backend has a deterministic stub so the whole pipeline runs without
//! models or network access.

pub mod backend;
pub mod corpus;
pub mod datasets;
pub mod digest;
pub mod imagegen;
pub mod metrics;
pub mod textgen;
pub mod trainer;

use serde::{Deserialize, Serialize};

/// Which partition of a dataset an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}
