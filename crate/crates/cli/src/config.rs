//! Pipeline configuration: one TOML file per experiment.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set
//! key=value` overrides, the `SYNTHAUG_CACHE_DIR` environment variable (cache
//! root only), explicit command-line flags. Relative paths in the file and in
//! `--set` values resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthaug::corpus::CaptionFormat;
use synthaug::datasets::{PromptSource, Ratio, TransformOp};
use synthaug::digest::json_digest;
use synthaug::textgen::{DecodeConfig, DEFAULT_FINETUNE_EPOCHS};
use synthaug::trainer::TrainConfig;

use crate::error::CliError;

pub const CACHE_ENV: &str = "SYNTHAUG_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub backends: BackendConfig,
    pub augment: AugmentConfig,
    pub decode: DecodeConfig,
    pub finetune: FinetuneConfig,
    pub train: TrainConfig,
    pub baseline: Option<BaselineConfig>,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("synthaug-out"),
            cache_dir: None,
            data: DataConfig::default(),
            backends: BackendConfig::default(),
            augment: AugmentConfig::default(),
            decode: DecodeConfig::default(),
            finetune: FinetuneConfig::default(),
            train: TrainConfig::default(),
            baseline: None,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Caption file for fine-tuning the text generator.
    pub captions: Option<PathBuf>,
    pub caption_format: CaptionFormat,
    /// Manifest of the real training images.
    pub manifest: Option<PathBuf>,
    /// Separate validation manifest; when set, no holdout split is made.
    pub val_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Labels for `gen-descriptions` when no manifest is given.
    pub labels: Vec<String>,
    /// Directory with one sub-directory of PNG files per label.
    pub adversarial_dir: Option<PathBuf>,
    pub long_tail: bool,
    pub few_shot: Option<usize>,
    pub holdout: Ratio,
    /// Defaults to `<output_dir>/descriptions.jsonl`.
    pub descriptions: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            captions: None,
            caption_format: CaptionFormat::CocoJson,
            manifest: None,
            val_manifest: None,
            test_manifest: None,
            labels: Vec::new(),
            adversarial_dir: None,
            long_tail: false,
            few_shot: None,
            holdout: Ratio::new(1, 5).expect("nonzero denominator"),
            descriptions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    /// A subprocess speaking the JSON-lines protocol on stdin/stdout.
    Process,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub t2t: BackendKind,
    pub t2i: BackendKind,
    pub t2t_command: Vec<String>,
    pub t2i_command: Vec<String>,
    /// Identifier recorded in outputs and cache keys for process backends.
    pub t2t_id: Option<String>,
    pub t2i_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub ratio: Ratio,
    pub prompt_source: PromptSource,
    pub variants_per_label: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ratio: Ratio::ONE,
            prompt_source: PromptSource::Label,
            variants_per_label: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_FINETUNE_EPOCHS,
        }
    }
}

/// Classical-augmentation baseline: `copies` transformed versions of every
/// training image are added before training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub ops: Vec<TransformOp>,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ratios: Vec<Ratio>,
    /// Candidates for the `max` row, picked by validation accuracy.
    pub max_ratios: Vec<Ratio>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let r = |n, d| Ratio::new(n, d).expect("nonzero denominator");
        Self {
            ratios: vec![r(1, 5), r(1, 2), r(1, 1)],
            max_ratios: vec![r(2, 1), r(3, 1), r(4, 1), r(5, 1)],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ratio: Option<Ratio>,
}

fn parse_value(raw: &str) -> toml::Value {
    // Reuse TOML's own literal syntax; anything that is not a literal is a string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), parse_value(raw.trim()));
    Ok(())
}

/// `base/p` without `.` components.
fn under(base: &Path, p: impl AsRef<Path>) -> PathBuf {
    let joined = base.join(p);
    std::path::absolute(&joined).unwrap_or(joined)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = under(base, &*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl PipelineConfig {
    /// Loads `path` (or defaults), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let cwd = std::env::current_dir().map_err(|e| CliError::Config(e.to_string()))?;
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                (table, under(&cwd, dir))
            }
            None => (toml::Table::new(), cwd.clone()),
        };
        for s in &overrides.sets {
            apply_set(&mut table, s)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_owned()))?;
        cfg.resolve_paths(&base);
        if let Ok(dir) = std::env::var(CACHE_ENV) {
            if !dir.is_empty() {
                cfg.cache_dir = Some(under(&cwd, dir));
            }
        }
        if let Some(d) = &overrides.output_dir {
            cfg.output_dir = under(&cwd, d);
        }
        if let Some(d) = &overrides.cache_dir {
            cfg.cache_dir = Some(under(&cwd, d));
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(r) = overrides.ratio {
            cfg.augment.ratio = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve_opt(base, &mut self.cache_dir);
        let d = &mut self.data;
        for p in [
            &mut d.captions,
            &mut d.manifest,
            &mut d.val_manifest,
            &mut d.test_manifest,
            &mut d.adversarial_dir,
            &mut d.descriptions,
        ] {
            resolve_opt(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.data.holdout.is_zero() || self.data.holdout >= Ratio::ONE {
            return bad(format!("data.holdout must be in (0, 1), got {}", self.data.holdout));
        }
        if self.data.few_shot == Some(0) {
            return bad("data.few_shot must be at least 1".into());
        }
        if self.augment.variants_per_label == 0 {
            return bad("augment.variants_per_label must be at least 1".into());
        }
        if self.finetune.epochs == 0 {
            return bad("finetune.epochs must be at least 1".into());
        }
        if self.backends.t2t == BackendKind::Process && self.backends.t2t_command.is_empty() {
            return bad("backends.t2t = \"process\" needs backends.t2t_command".into());
        }
        if self.backends.t2i == BackendKind::Process && self.backends.t2i_command.is_empty() {
            return bad("backends.t2i = \"process\" needs backends.t2i_command".into());
        }
        if let Some(b) = &self.baseline {
            if b.ops.is_empty() || b.copies == 0 {
                return bad("baseline needs at least one op and one copy".into());
            }
        }
        self.decode.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn descriptions_path(&self) -> PathBuf {
        self.data
            .descriptions
            .clone()
            .unwrap_or_else(|| self.output_dir.join("descriptions.jsonl"))
    }

    /// Digest over every field that can change results. Output and cache
    /// locations are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        json_digest(&c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("exp.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn file_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "output_dir = \"out\"\n[data]\nmanifest = \"real.jsonl\"\n");
        let c = PipelineConfig::load(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(c.output_dir, dir.path().join("out"));
        assert_eq!(c.data.manifest.unwrap(), dir.path().join("real.jsonl"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "[augment]\nratoi = 1.0\n");
        let err = PipelineConfig::load(Some(&p), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("ratoi"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn set_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "seed = 1\n[augment]\nratio = 0.5\n[train]\nepochs = 3\nmilestones = []\nwarmup_epochs = 0\n");
        let o = Overrides {
            sets: vec!["train.epochs=7".into(), "augment.prompt_source=description".into()],
            seed: Some(9),
            ratio: Some("2".parse().unwrap()),
            ..Overrides::default()
        };
        let c = PipelineConfig::load(Some(&p), &o).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.augment.prompt_source, PromptSource::Description);
        assert_eq!(c.seed, 9);
        assert_eq!(c.augment.ratio, Ratio::integer(2));
        assert_eq!(c.train.batch_size, 128);
    }

    #[test]
    fn invalid_values_rejected() {
        for set in ["data.holdout=1.0", "train.gamma=1.5", "augment.variants_per_label=0", "backends.t2i=\"process\""] {
            let o = Overrides {
                sets: vec![set.into()],
                ..Overrides::default()
            };
            assert!(PipelineConfig::load(None, &o).is_err(), "{set}");
        }
    }

    #[test]
    fn digest_ignores_locations_only() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "elsewhere".into(),
            cache_dir: Some("c".into()),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.digest(), c.digest());
        let mut d = a.clone();
        d.train.base_lr = 0.05;
        assert_ne!(a.digest(), d.digest());
    }

    #[test]
    fn toml_round_trip() {
        let a = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(a, back);
    }
}
