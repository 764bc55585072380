//! The pipeline commands. Each reads a validated [`PipelineConfig`], writes
//! its artifacts under `output_dir` and returns the main result.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use synthaug::corpus::{build_finetune_records, load_captions, write_records_jsonl, RuleTagger};
use synthaug::datasets::{
    build_augmented_dataset, inject_adversarial, load_manifest, make_few_shot, make_long_tail, manifest_digest,
    parse_manifest, save_manifest, split_holdout, AugmentationPlan, Dataset, DatasetError, DatasetStats, ImageRef,
    PromptSource, Provenance, Ratio, SyntheticRef,
};
use synthaug::imagegen::{
    atomic_write, gen_images, GenerationRequest, GenerationStats, ImageCache, ImageGenError, ProcessT2I, StubT2I,
    T2IBackend,
};
use synthaug::metrics::{
    evaluate_captions, format_delta, pair_sentences, read_sentences, write_report_csv, MetricReport, ScoreRow,
};
use synthaug::textgen::{
    finetune, gen_description_batch, Description, LabelSpec, ProcessT2T, StubT2T, T2TBackend, TrainingSummary,
};
use synthaug::trainer::{load_images, run_experiment, with_transform_copies, Checkpoint, ImageSet, RunReport};

use crate::config::{BackendKind, PipelineConfig};
use crate::error::CliError;
use crate::plot;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    atomic_write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<(), CliError> {
    let mut png = Vec::new();
    PngEncoder::new(&mut png)
        .write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
        .map_err(|e| CliError::io(path, e))?;
    write_bytes(path, &png)
}

/// Writes the effective configuration next to the command's outputs.
pub fn echo_config(cfg: &PipelineConfig) -> Result<(), CliError> {
    let text = format!("# config digest {}\n{}", cfg.digest(), cfg.to_toml());
    write_bytes(&cfg.output_dir.join("effective_config.toml"), text.as_bytes())
}

pub fn t2t_backend(cfg: &PipelineConfig) -> Result<Box<dyn T2TBackend>, CliError> {
    Ok(match cfg.backends.t2t {
        BackendKind::Stub => Box::new(StubT2T::new()),
        BackendKind::Process => {
            let id = cfg.backends.t2t_id.clone().unwrap_or_else(|| "process-t2t".into());
            Box::new(ProcessT2T::spawn(id, &cfg.backends.t2t_command)?)
        }
    })
}

pub fn t2i_backend(cfg: &PipelineConfig) -> Result<Box<dyn T2IBackend>, CliError> {
    Ok(match cfg.backends.t2i {
        BackendKind::Stub => Box::new(StubT2I::new()),
        BackendKind::Process => {
            let id = cfg.backends.t2i_id.clone().unwrap_or_else(|| "process-t2i".into());
            Box::new(ProcessT2I::spawn(id, &cfg.backends.t2i_command)?)
        }
    })
}

/// Step 1: fine-tunes the text generator on keyword-prompted captions.
pub fn cmd_finetune_t2t(cfg: &PipelineConfig) -> Result<TrainingSummary, CliError> {
    let path = cfg
        .data
        .captions
        .as_ref()
        .ok_or_else(|| CliError::Config("data.captions is not set".into()))?;
    let loaded = load_captions(path, cfg.data.caption_format, None)?;
    if loaded.skipped > 0 {
        log::warn!("skipped {} blank caption(s) in {}", loaded.skipped, path.display());
    }
    let records = build_finetune_records(&loaded.captions, &RuleTagger);
    let mut buf = Vec::new();
    write_records_jsonl(&mut buf, &records).map_err(|e| CliError::Input(e.to_string()))?;
    write_bytes(&cfg.output_dir.join("finetune_records.jsonl"), &buf)?;
    let mut backend = t2t_backend(cfg)?;
    let summary = finetune(backend.as_mut(), &records, cfg.finetune.epochs)?;
    write_json(&cfg.output_dir.join("t2t_summary.json"), &summary)?;
    Ok(summary)
}

/// Labels of the configured manifest, or of `data.labels`.
pub fn load_labels(cfg: &PipelineConfig) -> Result<Vec<LabelSpec>, CliError> {
    let labels = match &cfg.data.manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_manifest(&text, p.parent())?.labels()
        }
        None => cfg
            .data
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabelSpec::new(i as u32, l.clone()))
            .collect(),
    };
    if labels.is_empty() {
        return Err(CliError::Input("no labels: set data.manifest or data.labels".into()));
    }
    Ok(labels)
}

/// Step 2: one or more descriptions per label, label-major.
pub fn cmd_gen_descriptions(cfg: &PipelineConfig) -> Result<Vec<Description>, CliError> {
    let labels = load_labels(cfg)?;
    let backend = t2t_backend(cfg)?;
    let descs = gen_description_batch(backend.as_ref(), &labels, &cfg.decode, cfg.augment.variants_per_label)?;
    let mut buf = Vec::new();
    for d in &descs {
        serde_json::to_writer(&mut buf, d).expect("serializable description");
        buf.push(b'\n');
    }
    write_bytes(&cfg.descriptions_path(), &buf)?;
    Ok(descs)
}

fn load_descriptions(cfg: &PipelineConfig, labels: &[LabelSpec]) -> Result<BTreeMap<u32, Vec<String>>, CliError> {
    let path = cfg.descriptions_path();
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Input(format!(
            "prompt_source = \"description\" needs descriptions at {} ({e}); run `synthaug gen-descriptions` first or set data.descriptions",
            path.display()
        ))
    })?;
    let mut by_class: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let d: Description =
            serde_json::from_str(line).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        by_class.entry(d.source_label.class_id).or_default().push(d.text);
    }
    for l in labels {
        if !by_class.contains_key(&l.class_id) {
            return Err(CliError::Input(format!(
                "{} has no description for label `{}`",
                path.display(),
                l.label_text
            )));
        }
    }
    Ok(by_class)
}

/// Real training images after the optional few-shot and long-tail subsetting.
pub fn prepare_real(cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("data.manifest is not set".into()))?;
    let mut ds = load_manifest(path)?;
    if let Some(k) = cfg.data.few_shot {
        ds = make_few_shot(&ds, k, cfg.seed)?;
    }
    if cfg.data.long_tail {
        ds = make_long_tail(&ds, cfg.seed);
    }
    Ok(ds)
}

/// Generates (or fetches from the cache) `round(ratio * m_i)` images per
/// category and returns them as a synthetic-only dataset.
pub fn generate_synthetic(
    cfg: &PipelineConfig,
    real: &Dataset,
    ratio: Ratio,
    backend: &dyn T2IBackend,
) -> Result<(Dataset, GenerationStats), CliError> {
    let cache = ImageCache::new(cfg.cache_root());
    let descriptions = match cfg.augment.prompt_source {
        PromptSource::Description => Some(load_descriptions(cfg, &real.labels())?),
        PromptSource::Label => None,
    };
    let mut synth = Dataset::new(format!("{}-synthetic", real.name), real.image_spec, real.labels())?;
    synth.domain = real.domain.clone();
    let mut stats = GenerationStats::default();
    let mut failures = Vec::new();
    let mut transport = Vec::new();
    for (cat, out) in real.categories.iter().zip(synth.categories.iter_mut()) {
        let count = ratio.of_half_up(cat.real_train_count() as u64);
        if count == 0 {
            continue;
        }
        let prompts = match &descriptions {
            Some(d) => d[&cat.class_id()].clone(),
            None => vec![cat.label.label_text.clone()],
        };
        let v = prompts.len() as u64;
        for (i, prompt) in prompts.into_iter().enumerate() {
            let n = count / v + u64::from((i as u64) < count % v);
            if n == 0 {
                continue;
            }
            let req = GenerationRequest {
                label: cat.label.clone(),
                prompt,
                prompt_source: cfg.augment.prompt_source,
                count: n as u32,
                target_spec: real.image_spec,
                seed: cfg.seed,
            };
            match gen_images(backend, &req, &cache) {
                Ok((images, s)) => {
                    stats.generated += s.generated;
                    stats.cache_hits += s.cache_hits;
                    stats.repaired += s.repaired;
                    out.synthetic_images.extend(images.iter().map(|g| SyntheticRef::from(g).image));
                }
                Err(ImageGenError::Partial { completed, failed }) => {
                    if completed.is_empty() {
                        transport.push(format!("class {}: {}", cat.class_id(), failed[0].1));
                    }
                    failures.push(format!(
                        "class {} prompt `{}`: {} of {} failed (first: index {} {})",
                        cat.class_id(),
                        req.prompt,
                        failed.len(),
                        req.count,
                        failed[0].0,
                        failed[0].1
                    ));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    log::info!(
        "synthetic images: {} generated, {} cache hits, {} repaired",
        stats.generated,
        stats.cache_hits,
        stats.repaired
    );
    if !failures.is_empty() {
        let msg = format!("{}; rerun to resume from the cache", failures.join("; "));
        let nothing_done = stats.generated + stats.cache_hits == 0;
        return Err(if nothing_done && transport.len() == failures.len() {
            CliError::Backend(msg)
        } else {
            CliError::Partial(msg)
        });
    }
    synth.canonicalize();
    Ok((synth, stats))
}

/// Step 3: populates the image cache and writes `synthetic.jsonl`.
pub fn cmd_gen_images(cfg: &PipelineConfig) -> Result<(Dataset, GenerationStats), CliError> {
    let real = prepare_real(cfg)?;
    let backend = t2i_backend(cfg)?;
    let (synth, stats) = generate_synthetic(cfg, &real, cfg.augment.ratio, backend.as_ref())?;
    save_manifest(&synth, &cfg.output_dir.join("synthetic.jsonl"))?;
    Ok((synth, stats))
}

fn adversarial_images(dir: &Path, labels: &[LabelSpec]) -> Result<BTreeMap<u32, Vec<ImageRef>>, CliError> {
    let by_text: BTreeMap<&str, u32> = labels.iter().map(|l| (l.label_text.as_str(), l.class_id)).collect();
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        let &class_id = by_text
            .get(name.as_str())
            .ok_or_else(|| CliError::Input(format!("adversarial directory `{name}` matches no label")))?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| CliError::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let refs = files
            .into_iter()
            .map(|p| ImageRef::train(std::path::absolute(&p).unwrap_or(p).to_string_lossy().into_owned()))
            .collect();
        out.insert(class_id, refs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltDataset {
    pub train: Dataset,
    pub val: Dataset,
}

/// Real images, augmented, split and optionally with adversarial images.
pub fn build_dataset(cfg: &PipelineConfig, ratio: Ratio) -> Result<BuiltDataset, CliError> {
    let real = prepare_real(cfg)?;
    let synth = if ratio.is_zero() {
        None
    } else {
        let backend = t2i_backend(cfg)?;
        Some(generate_synthetic(cfg, &real, ratio, backend.as_ref())?.0)
    };
    let plan = AugmentationPlan {
        ratio,
        prompt_source: cfg.augment.prompt_source,
        seed: cfg.seed,
    };
    let augmented = build_augmented_dataset(&real, &plan, |cat, _, n| {
        let pool = synth
            .as_ref()
            .map(|s| &s.categories[cat.class_id() as usize].synthetic_images)
            .ok_or(DatasetError::Provider {
                class_id: cat.class_id(),
                message: "no synthetic images were generated".into(),
            })?;
        Ok(pool
            .iter()
            .take(n)
            .map(|r| SyntheticRef {
                class_id: cat.class_id(),
                image: r.clone(),
            })
            .collect())
    })?;
    let (mut train, val) = match &cfg.data.val_manifest {
        Some(p) => (augmented, load_manifest(p)?),
        None => split_holdout(&augmented, cfg.data.holdout, cfg.seed)?,
    };
    if let Some(dir) = &cfg.data.adversarial_dir {
        train = inject_adversarial(&train, &adversarial_images(dir, &train.labels())?)?;
    }
    Ok(BuiltDataset { train, val })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train: DatasetStats,
    pub val: DatasetStats,
    pub real: usize,
    pub synthetic: usize,
    pub adversarial: usize,
}

/// Step 4: writes `train.jsonl`, `val.jsonl` and `dataset_stats.json`.
pub fn cmd_build_dataset(cfg: &PipelineConfig) -> Result<BuiltDataset, CliError> {
    let built = build_dataset(cfg, cfg.augment.ratio)?;
    save_manifest(&built.train, &cfg.output_dir.join("train.jsonl"))?;
    save_manifest(&built.val, &cfg.output_dir.join("val.jsonl"))?;
    let summary = DatasetSummary {
        train: built.train.stats(),
        val: built.val.stats(),
        real: built.train.count(Provenance::Real),
        synthetic: built.train.count(Provenance::Synthetic),
        adversarial: built.train.count(Provenance::Adversarial),
    };
    write_json(&cfg.output_dir.join("dataset_stats.json"), &summary)?;
    Ok(built)
}

/// Everything needed to reproduce and compare a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_digest: String,
    pub train_manifest_digest: String,
    pub test_manifest_digest: String,
    pub report: RunReport,
    /// Kept out of `experiment.json` so reruns reproduce it byte for byte;
    /// written to `timings.json` instead.
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

fn image_set(cfg: &PipelineConfig, ds: &Dataset, spec_from: &Dataset, transforms: bool) -> Result<ImageSet, CliError> {
    let mut images = load_images(ds)?;
    if transforms {
        if let Some(b) = &cfg.baseline {
            images = with_transform_copies(&images, &b.ops, b.copies, cfg.seed);
        }
    }
    Ok(ImageSet::from_images(&images, spec_from.image_spec, ds.num_classes())?)
}

/// Trains every configured seed and writes the report, checkpoints and histories.
pub fn cmd_train(cfg: &PipelineConfig, paths: &TrainPaths) -> Result<ExperimentResult, CliError> {
    let train_path = paths.train.clone().unwrap_or_else(|| cfg.output_dir.join("train.jsonl"));
    let val_path = paths.val.clone().unwrap_or_else(|| cfg.output_dir.join("val.jsonl"));
    let test_path = paths
        .test
        .clone()
        .or_else(|| cfg.data.test_manifest.clone())
        .unwrap_or_else(|| {
            log::warn!("no test manifest configured; reporting validation accuracy as test accuracy");
            val_path.clone()
        });
    let t0 = Instant::now();
    let train_ds = load_manifest(&train_path)?;
    let val_ds = load_manifest(&val_path)?;
    let test_ds = load_manifest(&test_path)?;
    for (name, ds) in [("validation", &val_ds), ("test", &test_ds)] {
        if ds.labels() != train_ds.labels() {
            return Err(CliError::Input(format!("{name} labels differ from the training labels")));
        }
    }
    let train_set = image_set(cfg, &train_ds, &train_ds, true)?;
    let val_set = image_set(cfg, &val_ds, &train_ds, false)?;
    let test_set = image_set(cfg, &test_ds, &train_ds, false)?;
    let load_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let train_digest = manifest_digest(&train_path)?;
    let exp = run_experiment(&train_set, &val_set, &test_set, &cfg.train, Some(train_digest.clone()))?;
    let result = ExperimentResult {
        config_digest: cfg.digest(),
        train_manifest_digest: train_digest,
        test_manifest_digest: manifest_digest(&test_path)?,
        report: exp.report.clone(),
        timings: Timings {
            load_seconds,
            train_seconds: t1.elapsed().as_secs_f64(),
        },
    };
    for o in &exp.outcomes {
        let seed = o.checkpoint.seed;
        write_bytes(
            &cfg.output_dir.join(format!("checkpoints/seed_{seed}.json")),
            o.checkpoint.to_json().as_bytes(),
        )?;
        let mut h = Vec::new();
        for r in &o.history {
            serde_json::to_writer(&mut h, r).expect("serializable record");
            h.push(b'\n');
        }
        write_bytes(&cfg.output_dir.join(format!("history/seed_{seed}.jsonl")), &h)?;
    }
    write_json(&cfg.output_dir.join("run_report.json"), &exp.report)?;
    write_json(&cfg.output_dir.join("experiment.json"), &result)?;
    write_json(&cfg.output_dir.join("timings.json"), &result.timings)?;
    if exp.report.partial {
        let failed: Vec<String> = exp.report.failures.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
        return Err(CliError::Partial(format!(
            "{} of {} seed(s) failed ({}); report written with the surviving seeds",
            failed.len(),
            cfg.train.seeds.len(),
            failed.join("; ")
        )));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEvaluation {
    pub checkpoint_digest: String,
    pub manifest_digest: String,
    pub accuracy: f64,
    pub n: usize,
}

pub fn cmd_evaluate_classifier(cfg: &PipelineConfig, checkpoint: &Path, manifest: &Path) -> Result<ClassifierEvaluation, CliError> {
    let text = std::fs::read_to_string(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| CliError::io(checkpoint, e))?;
    let ds = load_manifest(manifest)?;
    if ds.num_classes() != ckpt.num_classes {
        return Err(CliError::Input(format!(
            "checkpoint has {} classes, {} has {}",
            ckpt.num_classes,
            manifest.display(),
            ds.num_classes()
        )));
    }
    let set = ImageSet::from_images(&load_images(&ds)?, ckpt.spec, ds.num_classes())?;
    let eval = ClassifierEvaluation {
        checkpoint_digest: ckpt.digest(),
        manifest_digest: manifest_digest(manifest)?,
        accuracy: ckpt.evaluate(&set)?,
        n: set.len(),
    };
    write_json(&cfg.output_dir.join("evaluation.json"), &eval)?;
    Ok(eval)
}

pub fn cmd_evaluate_captions(cfg: &PipelineConfig, hyp: &Path, refs: &Path) -> Result<MetricReport, CliError> {
    let pairs = pair_sentences(&read_sentences(hyp)?, &read_sentences(refs)?)?;
    let report = evaluate_captions(&pairs)?;
    write_json(&cfg.output_dir.join("metrics.json"), &report)?;
    let mut csv = Vec::new();
    write_report_csv(&hyp.display().to_string(), &report, &mut csv).map_err(|e| CliError::Input(e.to_string()))?;
    write_bytes(&cfg.output_dir.join("metrics.csv"), &csv)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub ratio: Ratio,
    pub mean_val: f64,
    pub mean_test: f64,
    pub std_test: f64,
    pub delta: String,
}

pub const SWEEP_CSV_HEADER: &str = "name,ratio,mean_val,mean_test,std_test,delta";

/// `+20%` for a ratio of 0.2.
pub fn ratio_name(r: Ratio) -> String {
    match Ratio::new(r.numer() * 100, r.denom()) {
        Some(p) => format!("+{p}%"),
        None => format!("x{r}"),
    }
}

/// Best of `candidates` by validation accuracy, the smaller ratio on ties.
pub fn pick_max(candidates: &[(Ratio, f64)]) -> Option<Ratio> {
    let mut best: Option<(Ratio, f64)> = None;
    for &(r, v) in candidates {
        best = match best {
            Some((br, bv)) if bv > v || (bv == v && br < r) => Some((br, bv)),
            _ => Some((r, v)),
        };
    }
    best.map(|(r, _)| r)
}

/// Trains at ratio 0 and at every sweep ratio; writes `sweep.csv` and `sweep.png`.
pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<Vec<SweepRow>, CliError> {
    let mut ratios: Vec<Ratio> = std::iter::once(Ratio::ZERO)
        .chain(cfg.sweep.ratios.iter().copied())
        .chain(cfg.sweep.max_ratios.iter().copied())
        .collect();
    ratios.sort();
    ratios.dedup();
    let test_path = cfg.data.test_manifest.clone();
    let mut results: Vec<(Ratio, RunReport)> = Vec::new();
    for &r in &ratios {
        let dir = cfg.output_dir.join("sweep").join(format!("ratio_{}", r.to_string().replace('/', "_")));
        let built = build_dataset(cfg, r)?;
        save_manifest(&built.train, &dir.join("train.jsonl"))?;
        save_manifest(&built.val, &dir.join("val.jsonl"))?;
        let sub = PipelineConfig {
            output_dir: dir.clone(),
            ..cfg.clone()
        };
        let paths = TrainPaths {
            train: Some(dir.join("train.jsonl")),
            val: Some(dir.join("val.jsonl")),
            test: test_path.clone(),
        };
        log::info!("sweep: training at ratio {r}");
        let result = cmd_train(&sub, &paths)?;
        results.push((r, result.report));
    }
    let base = &results[0].1;
    let row = |name: String, r: Ratio, rep: &RunReport| SweepRow {
        name,
        ratio: r,
        mean_val: rep.mean_val,
        mean_test: rep.mean,
        std_test: rep.std,
        delta: if r.is_zero() { String::new() } else { format_delta(base.mean, rep.mean) },
    };
    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|(r, rep)| row(if r.is_zero() { "baseline".into() } else { ratio_name(*r) }, *r, rep))
        .collect();
    let candidates: Vec<(Ratio, f64)> = results
        .iter()
        .filter(|(r, _)| cfg.sweep.max_ratios.contains(r))
        .map(|(r, rep)| (*r, rep.mean_val))
        .collect();
    if let Some(best) = pick_max(&candidates) {
        let rep = &results.iter().find(|(r, _)| *r == best).expect("candidate ratio was run").1;
        rows.push(row("max".into(), best, rep));
    }
    let mut csv = Vec::new();
    writeln!(csv, "{SWEEP_CSV_HEADER}").expect("write to vec");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{:.4},{:.4},{:.4},{}",
            r.name, r.ratio, r.mean_val, r.mean_test, r.std_test, r.delta
        )
        .expect("write to vec");
    }
    write_bytes(&cfg.output_dir.join("sweep.csv"), &csv)?;
    let val: Vec<(f64, f64)> = results.iter().map(|(r, rep)| (r.to_f64(), rep.mean_val)).collect();
    let test: Vec<(f64, f64)> = results.iter().map(|(r, rep)| (r.to_f64(), rep.mean)).collect();
    write_png(&cfg.output_dir.join("sweep.png"), &plot::line_plot(&[&val, &test]))?;
    Ok(rows)
}

/// Delta table over finished runs, each given as `name=path/to/experiment.json`.
pub fn cmd_report(cfg: &PipelineConfig, baseline: &str, variants: &[String]) -> Result<String, CliError> {
    let parse = |spec: &str| -> Result<(String, ExperimentResult), CliError> {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected name=path, got `{spec}`")))?;
        Ok((name.to_owned(), read_json(Path::new(path))?))
    };
    let score = |name: &str, r: &ExperimentResult| ScoreRow {
        name: name.to_owned(),
        dataset: r.test_manifest_digest.clone(),
        metric: "test_accuracy".into(),
        value: r.report.mean,
    };
    let (bname, bres) = parse(baseline)?;
    let base = score(&bname, &bres);
    let mut rows = Vec::new();
    for v in variants {
        let (name, res) = parse(v)?;
        rows.push(score(&name, &res));
    }
    let deltas = synthaug::metrics::delta_table(&base, &rows)?;
    let mut csv = Vec::new();
    synthaug::metrics::write_delta_csv(&base, &deltas, &mut csv).expect("write to vec");
    write_bytes(&cfg.output_dir.join("report.csv"), &csv)?;
    Ok(String::from_utf8(csv).expect("utf-8 csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_names() {
        assert_eq!(ratio_name("0.2".parse().unwrap()), "+20%");
        assert_eq!(ratio_name("5".parse().unwrap()), "+500%");
        assert_eq!(ratio_name("1/3".parse().unwrap()), "+100/3%");
    }

    #[test]
    fn max_prefers_smaller_ratio_on_ties() {
        let r = |s: &str| s.parse::<Ratio>().unwrap();
        assert_eq!(pick_max(&[(r("2"), 0.8), (r("3"), 0.9), (r("4"), 0.9)]), Some(r("3")));
        assert_eq!(pick_max(&[(r("5"), 0.9), (r("2"), 0.9)]), Some(r("2")));
        assert_eq!(pick_max(&[]), None);
    }
}
