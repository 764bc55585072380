//! Caption metrics (BLEU-4, ROUGE-L, CIDEr-D) and accuracy delta tables.
//!
//! Conventions follow the widely used COCO caption evaluator: ROUGE-L with
//! `beta = 1.2`, CIDEr-D with a Gaussian length penalty of `sigma = 6` and a
//! final scale of 10, BLEU with the closest reference length.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("pair `{0}` has no references")]
    NoReferences(String),
    #[error("IDF undefined at corpus size 1")]
    SingleImage,
    #[error("image_id `{0}` appears twice")]
    DuplicateImage(String),
    #[error("hypothesis for `{0}` has no references")]
    Unmatched(String),
    #[error("cannot compare {what}: `{a}` vs `{b}`")]
    Mismatch { what: &'static str, a: String, b: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub image_id: String,
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl CaptionPair {
    pub fn new(image_id: impl Into<String>, hypothesis: Vec<String>, references: Vec<Vec<String>>) -> Result<Self, MetricsError> {
        let image_id = image_id.into();
        if references.is_empty() {
            return Err(MetricsError::NoReferences(image_id));
        }
        Ok(Self {
            image_id,
            hypothesis,
            references,
        })
    }

    /// Builds a pair from raw sentences, tokenizing each.
    pub fn from_text(image_id: impl Into<String>, hypothesis: &str, references: &[&str]) -> Result<Self, MetricsError> {
        Self::new(image_id, tokenize(hypothesis), references.iter().map(|r| tokenize(r)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub n: usize,
}

pub fn evaluate_captions(corpus: &[CaptionPair]) -> Result<MetricReport, MetricsError> {
    Ok(MetricReport {
        bleu4: bleu4(corpus)?,
        rouge_l: rouge_l_corpus(corpus)?,
        cider_d: cider_d(corpus)?,
        n: corpus.len(),
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], u64> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check(corpus: &[CaptionPair]) -> Result<(), MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if let Some(p) = corpus.iter().find(|p| p.references.is_empty()) {
        return Err(MetricsError::NoReferences(p.image_id.clone()));
    }
    Ok(())
}

/// Corpus BLEU-4 without smoothing.
pub fn bleu4(corpus: &[CaptionPair]) -> Result<f64, MetricsError> {
    check(corpus)?;
    let mut matched = [0u64; MAX_N];
    let mut total = [0u64; MAX_N];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for pair in corpus {
        let c = pair.hypothesis.len();
        hyp_len += c as u64;
        ref_len += pair
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c), l))
            .unwrap_or(0) as u64;
        for n in 1..=MAX_N {
            let hyp = ngram_counts(&pair.hypothesis, n);
            let mut max_ref: HashMap<&[String], u64> = HashMap::new();
            for r in &pair.references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in hyp {
                total[n - 1] += k;
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_mean = (0..MAX_N)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok(bp * log_mean.exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Sentence ROUGE-L. With several references, precision and recall are each
/// maximized over references before they are combined.
pub fn rouge_l(pair: &CaptionPair) -> f64 {
    let (mut p_max, mut r_max) = (0f64, 0f64);
    for r in &pair.references {
        let l = lcs(&pair.hypothesis, r) as f64;
        if l == 0.0 {
            continue;
        }
        p_max = p_max.max(l / pair.hypothesis.len() as f64);
        r_max = r_max.max(l / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l_corpus(corpus: &[CaptionPair]) -> Result<f64, MetricsError> {
    check(corpus)?;
    Ok(corpus.iter().map(rouge_l).sum::<f64>() / corpus.len() as f64)
}

type TfIdf<'a> = [BTreeMap<&'a [String], f64>; MAX_N];

/// Read-only document frequency table over the reference sets.
pub struct CiderIdf<'a> {
    df: HashMap<&'a [String], f64>,
    log_n: f64,
}

impl<'a> CiderIdf<'a> {
    pub fn new(corpus: &'a [CaptionPair]) -> Result<Self, MetricsError> {
        check(corpus)?;
        let mut seen = HashSet::new();
        for p in corpus {
            if !seen.insert(p.image_id.as_str()) {
                return Err(MetricsError::DuplicateImage(p.image_id.clone()));
            }
        }
        if corpus.len() < 2 {
            return Err(MetricsError::SingleImage);
        }
        let mut df: HashMap<&[String], f64> = HashMap::new();
        for p in corpus {
            let mut grams = HashSet::new();
            for r in &p.references {
                for n in 1..=MAX_N {
                    grams.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in grams {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Ok(Self {
            df,
            log_n: (corpus.len() as f64).ln(),
        })
    }

    fn vector<'b>(&self, tokens: &'b [String]) -> (TfIdf<'b>, [f64; MAX_N]) {
        let mut vec: TfIdf<'b> = Default::default();
        let mut sq = [0f64; MAX_N];
        for n in 1..=MAX_N {
            for (g, tf) in ngram_counts(tokens, n) {
                let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (self.log_n - df.ln());
                sq[n - 1] += w * w;
                vec[n - 1].insert(g, w);
            }
        }
        (vec, sq)
    }

    fn similarity(&self, hyp: &[String], reference: &[String]) -> f64 {
        let (vh, sh) = self.vector(hyp);
        let (vr, sr) = self.vector(reference);
        let delta = hyp.len() as f64 - reference.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut total = 0.0;
        for n in 0..MAX_N {
            let mut dot = 0.0;
            for (g, &h) in &vh[n] {
                if let Some(&r) = vr[n].get(g) {
                    dot += h.min(r) * r;
                }
            }
            // sqrt(sh * sr) rather than sqrt(sh) * sqrt(sr): exact for identical vectors.
            let denom = (sh[n] * sr[n]).sqrt();
            if denom != 0.0 {
                total += dot / denom * penalty;
            }
        }
        total / MAX_N as f64
    }

    /// CIDEr-D of one hypothesis against its references.
    pub fn score(&self, pair: &CaptionPair) -> f64 {
        let sum: f64 = pair.references.iter().map(|r| self.similarity(&pair.hypothesis, r)).sum();
        sum / pair.references.len() as f64 * CIDER_SCALE
    }
}

/// Corpus CIDEr-D: mean per-image score, IDF from the references only.
pub fn cider_d(corpus: &[CaptionPair]) -> Result<f64, MetricsError> {
    let idf = CiderIdf::new(corpus)?;
    Ok(corpus.iter().map(|p| idf.score(p)).sum::<f64>() / corpus.len() as f64)
}

/// One score of a named run on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub name: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub name: String,
    pub value: f64,
    pub delta: String,
}

/// Signed percentage-point difference with one decimal, e.g. `+1.3%`.
/// Negative values use the typographic minus sign U+2212.
pub fn format_delta(baseline: f64, variant: f64) -> String {
    let d = (variant - baseline) * 100.0;
    let mag = format!("{:.1}", d.abs());
    if d < 0.0 && mag != "0.0" {
        format!("\u{2212}{mag}%")
    } else {
        format!("+{mag}%")
    }
}

pub fn delta_table(baseline: &ScoreRow, variants: &[ScoreRow]) -> Result<Vec<DeltaRow>, MetricsError> {
    for v in variants {
        if v.dataset != baseline.dataset {
            return Err(MetricsError::Mismatch {
                what: "datasets",
                a: baseline.dataset.clone(),
                b: v.dataset.clone(),
            });
        }
        if v.metric != baseline.metric {
            return Err(MetricsError::Mismatch {
                what: "metrics",
                a: baseline.metric.clone(),
                b: v.metric.clone(),
            });
        }
    }
    Ok(variants
        .iter()
        .map(|v| DeltaRow {
            name: v.name.clone(),
            value: v.value,
            delta: format_delta(baseline.value, v.value),
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn write_delta_csv<W: Write>(baseline: &ScoreRow, rows: &[DeltaRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "name,dataset,metric,value,delta")?;
    writeln!(w, "{},{},{},{:.4},", csv_field(&baseline.name), csv_field(&baseline.dataset), csv_field(&baseline.metric), baseline.value)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.4},{}",
            csv_field(&r.name),
            csv_field(&baseline.dataset),
            csv_field(&baseline.metric),
            r.value,
            r.delta
        )?;
    }
    Ok(())
}

pub fn write_report_csv<W: Write>(name: &str, report: &MetricReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "name,n,bleu4,rouge_l,cider_d")?;
    writeln!(w, "{},{},{:.6},{:.6},{:.6}", csv_field(name), report.n, report.bleu4, report.rouge_l, report.cider_d)
}

#[derive(Debug, Deserialize)]
struct SentenceRecord {
    image_id: serde_json::Value,
    sentence: String,
}

/// Reads `{image_id, sentence}` JSON lines.
pub fn read_sentences(path: &Path) -> Result<Vec<(String, String)>, MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| MetricsError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec: SentenceRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let id = match rec.image_id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(parse_err(format!("image_id must be a string or number, got {other}"))),
        };
        out.push((id, rec.sentence));
    }
    Ok(out)
}

/// Joins one hypothesis per image with all references of that image.
pub fn pair_sentences(hyps: &[(String, String)], refs: &[(String, String)]) -> Result<Vec<CaptionPair>, MetricsError> {
    let mut by_id: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
    for (id, s) in refs {
        by_id.entry(id).or_default().push(tokenize(s));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (id, s) in hyps {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateImage(id.clone()));
        }
        let r = by_id.get(id.as_str()).ok_or_else(|| MetricsError::Unmatched(id.clone()))?;
        out.push(CaptionPair::new(id.clone(), tokenize(s), r.clone())?);
    }
    Ok(out)
}
