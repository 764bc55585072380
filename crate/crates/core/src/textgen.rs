//! Text-to-text generation: fine-tuning on keyword-prompted captions and
//! label-to-description generation.
//!
//! A description for label `bike` is produced by sending the keyword prompt
//! for `{bike}` to a [`T2TBackend`]. Beam search and the model itself live in
//! the backend; this module only transports the decoding settings and
//! enforces the length bound on what comes back.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ProcessChannel};
use crate::corpus::{prompt_keywords, render_prompt, EntitySet, PromptedCaption};

/// Fine-tuning epochs used for the caption generator.
pub const DEFAULT_FINETUNE_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSpec {
    pub class_id: u32,
    pub label_text: String,
}

impl LabelSpec {
    pub fn new(class_id: u32, label_text: impl Into<String>) -> Self {
        Self {
            class_id,
            label_text: label_text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Upper bound on whitespace tokens in a generated description.
    pub max_length: usize,
    pub beam_size: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_length: 20,
            beam_size: 5,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), TextGenError> {
        if self.max_length == 0 || self.beam_size == 0 {
            return Err(TextGenError::InvalidConfig(
                "max_length and beam_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub source_label: LabelSpec,
    pub backend_id: String,
    pub decode_config: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub backend_id: String,
    pub epochs: usize,
    pub records_seen: u64,
    /// Mean negative log-likelihood after each epoch, as reported by the backend.
    pub epoch_nll: Vec<f64>,
    pub final_nll: f64,
}

#[derive(Debug, Error)]
pub enum TextGenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("fine-tuning needs at least one record")]
    EmptyRecords,
    #[error("epochs must be at least 1")]
    InvalidEpochs,
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error("label text is empty (class {0})")]
    EmptyLabel(u32),
    #[error("empty generation for label `{0}`")]
    EmptyGeneration(String),
    #[error("label `{label}`: {source}")]
    ForLabel {
        label: String,
        #[source]
        source: Box<TextGenError>,
    },
}

/// A text-to-text generator.
///
/// `generate` must be a pure function of the backend state, the prompt and
/// the decode config.
pub trait T2TBackend: Send + Sync {
    fn id(&self) -> String;

    /// How many `generate` calls may run at once.
    fn max_parallelism(&self) -> usize {
        1
    }

    fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<String, BackendError>;

    fn finetune(&mut self, records: &[PromptedCaption], epochs: usize) -> Result<TrainingSummary, BackendError>;
}

pub fn finetune(
    backend: &mut dyn T2TBackend,
    records: &[PromptedCaption],
    epochs: usize,
) -> Result<TrainingSummary, TextGenError> {
    if records.is_empty() {
        return Err(TextGenError::EmptyRecords);
    }
    if epochs == 0 {
        return Err(TextGenError::InvalidEpochs);
    }
    Ok(backend.finetune(records, epochs)?)
}

/// Counts whitespace tokens.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn truncate_tokens(text: &str, max: usize) -> String {
    text.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
}

pub fn gen_description(
    backend: &dyn T2TBackend,
    label: &LabelSpec,
    config: &DecodeConfig,
) -> Result<Description, TextGenError> {
    config.validate()?;
    if label.label_text.trim().is_empty() {
        return Err(TextGenError::EmptyLabel(label.class_id));
    }
    let prompt = render_prompt(&EntitySet::new([&label.label_text]))
        .map_err(|_| TextGenError::EmptyLabel(label.class_id))?;
    let raw = backend.generate(&prompt, config)?;
    let text = if token_count(&raw) > config.max_length {
        truncate_tokens(&raw, config.max_length)
    } else {
        raw.trim().to_owned()
    };
    if text.is_empty() {
        return Err(TextGenError::EmptyGeneration(label.label_text.clone()));
    }
    Ok(Description {
        text,
        source_label: label.clone(),
        backend_id: backend.id(),
        decode_config: *config,
    })
}

/// Generates `variants_per_label` descriptions per label, label-major.
/// Variant `v` decodes with seed `config.seed + v`.
pub fn gen_description_batch(
    backend: &dyn T2TBackend,
    labels: &[LabelSpec],
    config: &DecodeConfig,
    variants_per_label: usize,
) -> Result<Vec<Description>, TextGenError> {
    if variants_per_label == 0 {
        return Err(TextGenError::InvalidConfig("variants_per_label must be at least 1".into()));
    }
    let jobs: Vec<(&LabelSpec, DecodeConfig)> = labels
        .iter()
        .flat_map(|l| {
            (0..variants_per_label as u64).map(move |v| {
                (l, DecodeConfig {
                    seed: config.seed.wrapping_add(v),
                    ..*config
                })
            })
        })
        .collect();
    let run = |(label, cfg): &(&LabelSpec, DecodeConfig)| {
        gen_description(backend, label, cfg).map_err(|e| TextGenError::ForLabel {
            label: label.label_text.clone(),
            source: Box::new(e),
        })
    };
    if backend.max_parallelism() > 1 {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    }
}

/// Deterministic template generator used when no model is configured.
///
/// Output: `a photo of a {keywords} in a realistic scene, variant {seed mod 16}`.
#[derive(Debug, Default, Clone)]
pub struct StubT2T {
    finetuned_records: u64,
}

impl StubT2T {
    pub const ID: &'static str = "stub-t2t";
    pub const VARIANTS: u64 = 16;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn records_seen(&self) -> u64 {
        self.finetuned_records
    }
}

impl T2TBackend for StubT2T {
    fn id(&self) -> String {
        Self::ID.into()
    }

    fn max_parallelism(&self) -> usize {
        usize::MAX
    }

    fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<String, BackendError> {
        let keywords = prompt_keywords(prompt).unwrap_or(prompt).trim();
        let text = format!(
            "a photo of a {keywords} in a realistic scene, variant {}",
            config.seed % Self::VARIANTS
        );
        Ok(truncate_tokens(&text, config.max_length))
    }

    fn finetune(&mut self, records: &[PromptedCaption], epochs: usize) -> Result<TrainingSummary, BackendError> {
        // Synthetic loss curve: 4 / (k + 1) after epoch k.
        let epoch_nll: Vec<f64> = (1..=epochs).map(|k| 4.0 / (k as f64 + 1.0)).collect();
        let seen = records.len() as u64 * epochs as u64;
        self.finetuned_records += seen;
        Ok(TrainingSummary {
            backend_id: self.id(),
            epochs,
            records_seen: seen,
            final_nll: *epoch_nll.last().unwrap_or(&f64::NAN),
            epoch_nll,
        })
    }
}

/// Wire records for out-of-process text generators.
pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct GenerateRequest {
        pub prompt: String,
        pub max_length: usize,
        pub beam_size: usize,
        pub seed: u64,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct GenerateResponse {
        pub text: String,
    }

    /// Announces a fine-tune stream: `records` PromptedCaption lines follow.
    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct FinetuneRequest {
        pub finetune: FinetuneHeader,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct FinetuneHeader {
        pub epochs: usize,
        pub records: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct FinetuneResponse {
        pub records_seen: u64,
        pub epoch_nll: Vec<f64>,
        pub final_nll: f64,
    }

    #[derive(Debug, Deserialize)]
    #[serde(untagged)]
    pub enum Request {
        Finetune(FinetuneRequest),
        Generate(GenerateRequest),
    }
}

/// A text generator running as a subprocess that speaks [`wire`] records.
pub struct ProcessT2T {
    id: String,
    channel: ProcessChannel,
}

impl ProcessT2T {
    pub fn spawn(id: impl Into<String>, command: &[String]) -> Result<Self, BackendError> {
        let id = id.into();
        let channel = ProcessChannel::spawn(&id, command)?;
        Ok(Self { id, channel })
    }
}

impl T2TBackend for ProcessT2T {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<String, BackendError> {
        let req = wire::GenerateRequest {
            prompt: prompt.to_owned(),
            max_length: config.max_length,
            beam_size: config.beam_size,
            seed: config.seed,
        };
        self.channel
            .with(|ch| ch.call::<_, wire::GenerateResponse>(&req))
            .map(|r| r.text)
    }

    fn finetune(&mut self, records: &[PromptedCaption], epochs: usize) -> Result<TrainingSummary, BackendError> {
        let id = self.id.clone();
        let resp: wire::FinetuneResponse = self.channel.with(|ch| {
            ch.send(&wire::FinetuneRequest {
                finetune: wire::FinetuneHeader {
                    epochs,
                    records: records.len(),
                },
            })?;
            for r in records {
                ch.send(r)?;
            }
            ch.receive()
        })?;
        Ok(TrainingSummary {
            backend_id: id,
            epochs,
            records_seen: resp.records_seen,
            epoch_nll: resp.epoch_nll,
            final_nll: resp.final_nll,
        })
    }
}

/// Serves `backend` over a line stream until the input closes.
///
/// This is the server half of [`ProcessT2T`]; it lets any backend, including
/// the stub, run behind the process boundary.
pub fn serve<R: BufRead, W: Write>(backend: &mut dyn T2TBackend, reader: R, writer: W) -> std::io::Result<()> {
    let mut lines = reader.lines();
    let mut out = writer;
    let reply = |out: &mut W, value: serde_json::Value| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &value)?;
        out.write_all(b"\n")?;
        out.flush()
    };
    while let Some(line) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<wire::Request>(&line) {
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }),
            Ok(wire::Request::Generate(req)) => {
                let cfg = DecodeConfig {
                    max_length: req.max_length,
                    beam_size: req.beam_size,
                    seed: req.seed,
                };
                match backend.generate(&req.prompt, &cfg) {
                    Ok(text) => serde_json::json!({ "text": text }),
                    Err(e) => serde_json::json!({ "error": e.to_string() }),
                }
            }
            Ok(wire::Request::Finetune(req)) => {
                let mut records = Vec::with_capacity(req.finetune.records);
                let mut bad = None;
                for _ in 0..req.finetune.records {
                    match lines.next() {
                        Some(Ok(l)) => match serde_json::from_str::<PromptedCaption>(&l) {
                            Ok(r) => records.push(r),
                            Err(e) => bad = Some(format!("bad record: {e}")),
                        },
                        Some(Err(e)) => return Err(e),
                        None => {
                            bad = Some("record stream ended early".into());
                            break;
                        }
                    }
                }
                match bad {
                    Some(msg) => serde_json::json!({ "error": msg }),
                    None => match backend.finetune(&records, req.finetune.epochs) {
                        Ok(s) => serde_json::json!({
                            "records_seen": s.records_seen,
                            "epoch_nll": s.epoch_nll,
                            "final_nll": s.final_nll,
                        }),
                        Err(e) => serde_json::json!({ "error": e.to_string() }),
                    },
                }
            }
        };
        reply(&mut out, response)?;
    }
    Ok(())
}
