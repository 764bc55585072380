//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/oracles/metrics.rs"]
mod metric_oracles;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthaug::corpus::{render_prompt, EntitySet};
use synthaug::datasets::{
    build_augmented_dataset, make_long_tail, split_holdout, AugmentationPlan, Dataset, ImageRef, PromptSource,
    Provenance, Ratio, SyntheticRef,
};
use synthaug::digest::sha256_hex;
use synthaug::imagegen::ImageSpec;
use synthaug::metrics::{bleu4, cider_d, rouge_l, rouge_l_corpus, CaptionPair};
use synthaug::textgen::LabelSpec;
use synthaug::trainer::{lr_schedule, TrainConfig};
use synthaug::Split;
use synthaug_cli::commands::{cmd_build_dataset, cmd_train, TrainPaths};
use synthaug_cli::config::{Overrides, PipelineConfig};
use synthaug_cli::toy::{make_toy_dataset, LABEL_PROMPT};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn labels(n: usize) -> Vec<LabelSpec> {
    (0..n).map(|i| LabelSpec::new(i as u32, format!("class{i}"))).collect()
}

fn manifest_only(classes: usize, per_class: usize) -> Dataset {
    let mut ds = Dataset::new("toy", ImageSpec::rgb(32, 32), labels(classes)).unwrap();
    for cat in &mut ds.categories {
        let c = cat.class_id();
        cat.real_images = (0..per_class).map(|j| ImageRef::train(format!("real/{c}/{j}.png"))).collect();
    }
    ds
}

fn placeholder_synthetic(cat: &synthaug::datasets::Category, n: usize) -> Vec<SyntheticRef> {
    let c = cat.class_id();
    (0..n)
        .map(|j| SyntheticRef {
            class_id: c,
            image: ImageRef::train(format!("syn/{c}/{j}.png")),
        })
        .collect()
}

fn count_laws() -> Result<String, String> {
    let toy = manifest_only(2, 50);
    let expected = [("0.2", 10), ("0.5", 25), ("1.0", 50), ("2.0", 100), ("5.0", 250)];
    for (ratio, want) in expected {
        let plan = AugmentationPlan {
            ratio: ratio.parse().unwrap(),
            prompt_source: PromptSource::Label,
            seed: 7,
        };
        let out = build_augmented_dataset(&toy, &plan, |c, _, n| Ok(placeholder_synthetic(c, n))).map_err(|e| e.to_string())?;
        for cat in &out.categories {
            ensure(cat.synthetic_images.len() == want && cat.real_images.len() == 50, || {
                format!("ratio {ratio}: class {} has {} synthetic", cat.class_id(), cat.synthetic_images.len())
            })?;
        }
    }
    let cifar = manifest_only(100, 500);
    let plan = AugmentationPlan {
        ratio: Ratio::ONE,
        prompt_source: PromptSource::Label,
        seed: 7,
    };
    let out = build_augmented_dataset(&cifar, &plan, |c, _, n| Ok(placeholder_synthetic(c, n))).map_err(|e| e.to_string())?;
    let total = out.count(Provenance::Synthetic);
    ensure(total == 50_000, || format!("100x500 at 1.0 gave {total} synthetic"))?;
    Ok("2x50 at {0.2,0.5,1,2,5} gives {10,25,50,100,250} per class; 100x500 at 1.0 gives 50000".into())
}

fn long_tail_law() -> Result<String, String> {
    let cases: [(usize, usize, Vec<usize>); 5] = [
        (3, 10, vec![3, 6, 10]),
        (4, 10, vec![2, 5, 7, 10]),
        (4, 1, vec![1, 1, 1, 1]),
        (3, 2, vec![1, 1, 2]),
        (100, 500, (1..=100).map(|i| 5 * i).collect()),
    ];
    for (n, m, want) in cases {
        let got: Vec<usize> = make_long_tail(&manifest_only(n, m), 11).categories.iter().map(|c| c.real_images.len()).collect();
        ensure(got == want, || format!("n={n} m={m}: {got:?}"))?;
    }
    Ok("n in {3,4,100}, including m=1 clamp and n=100/m=500 -> 5i".into())
}

fn prompt_template() -> Result<String, String> {
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts.txt"))
        .map_err(|e| e.to_string())?;
    let sets: [&[&str]; 4] = [
        &["bike"],
        &["dog", "frisbee"],
        &["dog", "frisbee", "park"],
        &["man", "horse", "beach", "sunset", "dog"],
    ];
    let rendered: Vec<String> = sets.iter().map(|s| render_prompt(&EntitySet::new(s.iter())).unwrap()).collect();
    let want: Vec<&str> = golden.lines().collect();
    ensure(rendered == want, || format!("{rendered:?}"))?;
    Ok("n in {1,2,3,5} byte-identical to golden file".into())
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_synthaug")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SYNTHAUG_CACHE_DIR")
        .output()
        .expect("spawn synthaug")
}

fn ok_in(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = run_in(dir, args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Relative path to SHA-256 for every file under `root`, skipping temp files.
fn checksums(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if !e.file_name().to_string_lossy().starts_with(".tmp") {
                out.insert(p.strip_prefix(root).unwrap().to_owned(), sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn count_png(root: &Path) -> usize {
    checksums(root).keys().filter(|p| p.extension().is_some_and(|x| x == "png")).count()
}

fn toy_project(dir: &Path, per_class: usize, ratio: &str) -> Result<(), String> {
    ok_in(dir, &["toy-data", "--labels", "bicycle,chair", "--per-class", &per_class.to_string(), "--out", "data"])?;
    let cfg = format!("seed = 7\noutput_dir = \"out\"\n\n[data]\nmanifest = \"data/real.jsonl\"\n\n[augment]\nratio = \"{ratio}\"\n");
    std::fs::write(dir.join("cfg.toml"), cfg).map_err(|e| e.to_string())
}

fn determinism() -> Result<String, String> {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &runs {
        toy_project(d.path(), 10, "2")?;
        ok_in(d.path(), &["--config", "cfg.toml", "gen-images"])?;
        ok_in(d.path(), &["--config", "cfg.toml", "build-dataset"])?;
    }
    // Manifests and image files; the echoed config records absolute paths.
    let outputs = |d: &Path| -> BTreeMap<PathBuf, String> {
        checksums(d)
            .into_iter()
            .filter(|(p, _)| p.extension().is_some_and(|x| x == "jsonl" || x == "png" || x == "meta"))
            .collect()
    };
    let (a, b) = (outputs(runs[0].path()), outputs(runs[1].path()));
    if let Some((p, _)) = a.iter().find(|(p, h)| b.get(*p) != Some(h)) {
        return Err(format!("{} differs between the two runs", p.display()));
    }
    ensure(a.len() == b.len(), || "the two runs wrote different file sets".into())?;
    let images = a.keys().filter(|p| p.extension().is_some_and(|x| x == "png")).count();
    for f in ["out/synthetic.jsonl", "out/train.jsonl", "out/val.jsonl"] {
        ensure(a.contains_key(Path::new(f)), || format!("{f} missing"))?;
    }
    ensure(images == 20 + 40, || format!("expected 60 images, found {images}"))?;
    let again = ok_in(runs[0].path(), &["--config", "cfg.toml", "gen-images"])?;
    ensure(again.contains(" 0 generated, 40 from cache"), || format!("second invocation: {again}"))?;
    ensure(outputs(runs[0].path()) == a, || "second invocation changed outputs".into())?;
    Ok(format!("{} files incl. {images} images identical; rerun served from cache", a.len()))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let c = metric_oracles::random_corpus(&mut rng);
        let pairs = [
            ("bleu4", bleu4(&c).unwrap(), metric_oracles::oracle_bleu(&c)),
            ("cider_d", cider_d(&c).unwrap(), metric_oracles::oracle_cider(&c)),
        ];
        for (name, got, want) in pairs {
            worst = worst.max((got - want).abs());
            ensure(close(got, want), || format!("corpus {k}: {name} {got} vs oracle {want}"))?;
        }
        for p in &c {
            let (got, want) = (rouge_l(p), metric_oracles::oracle_rouge(p));
            worst = worst.max((got - want).abs());
            ensure(close(got, want), || format!("corpus {k}: rouge_l {got} vs oracle {want}"))?;
        }
    }
    let same: Vec<CaptionPair> = ["a dog runs on the grass", "two cats sleep on a warm sofa", "the red bike leans on a wall"]
        .iter()
        .enumerate()
        .map(|(i, s)| CaptionPair::from_text(i.to_string(), s, &[s]).unwrap())
        .collect();
    let maxima = (bleu4(&same).unwrap(), rouge_l_corpus(&same).unwrap(), cider_d(&same).unwrap());
    ensure(maxima == (1.0, 1.0, 10.0), || format!("trivial maxima {maxima:?}"))?;
    Ok(format!("50 corpora, max abs error {worst:.1e}; identical hyp/ref gives 1.0/1.0/10.0 exactly"))
}

fn scheduler() -> Result<String, String> {
    let cfg = TrainConfig::cifar_recipe();
    for (epoch, want) in [(0, 0.01), (9, 0.1), (60, 0.02), (120, 0.004), (160, 0.0008)] {
        let got = lr_schedule(&cfg, epoch);
        ensure(got == want, || format!("epoch {epoch}: {got} != {want}"))?;
    }
    Ok("0.01, 0.1, 0.02, 0.004, 0.0008 at epochs 0, 9, 60, 120, 160".into())
}

const FEW_SHOT_RECIPE: &str = r#"
[train]
epochs = 10
batch_size = 16
base_lr = 0.05
warmup_epochs = 1
milestones = [6, 8]
seeds = [7, 17, 42]

[train.model]
type = "conv_net"
widths = [8, 16, 32]
"#;

fn few_shot() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let names = ["bicycle".to_string(), "chair".to_string()];
    make_toy_dataset(&names, 5, 32, root, "real", 1_000_000, LABEL_PROMPT).map_err(|e| e.to_string())?;
    make_toy_dataset(&names, 50, 32, root, "val", 2_000_000, LABEL_PROMPT).map_err(|e| e.to_string())?;
    let cfg_text = format!(
        "seed = 7\n\n[data]\nmanifest = \"real.jsonl\"\nval_manifest = \"val.jsonl\"\n{FEW_SHOT_RECIPE}"
    );
    std::fs::write(root.join("cfg.toml"), cfg_text).unwrap();
    let mut means = Vec::new();
    for (name, ratio) in [("baseline", "0"), ("augmented", "20")] {
        let overrides = Overrides {
            output_dir: Some(root.join(name)),
            ratio: Some(ratio.parse().unwrap()),
            ..Overrides::default()
        };
        let cfg = PipelineConfig::load(Some(&root.join("cfg.toml")), &overrides).map_err(|e| e.to_string())?;
        let built = cmd_build_dataset(&cfg).map_err(|e| e.to_string())?;
        let per_class: Vec<(usize, usize)> = built
            .train
            .categories
            .iter()
            .map(|c| (c.real_images.len(), c.synthetic_images.len()))
            .collect();
        let want = if name == "baseline" { (5, 0) } else { (5, 100) };
        ensure(per_class.iter().all(|&p| p == want), || format!("{name} train counts {per_class:?}"))?;
        let result = cmd_train(&cfg, &TrainPaths::default()).map_err(|e| e.to_string())?;
        means.push(result.report.mean_val);
    }
    let elapsed = start.elapsed();
    let gain = (means[1] - means[0]) * 100.0;
    let detail = format!(
        "mean val {:.4} (5 real) -> {:.4} (+100 synthetic), {gain:+.1} pp, {:.0}s",
        means[0],
        means[1],
        elapsed.as_secs_f64()
    );
    ensure(gain >= 10.0, || detail.clone())?;
    ensure(elapsed <= Duration::from_secs(300), || detail.clone())?;
    Ok(detail)
}

fn holdout_law() -> Result<String, String> {
    let mut ds = manifest_only(2, 500);
    for cat in &mut ds.categories {
        let c = cat.class_id();
        cat.synthetic_images = (0..300).map(|j| ImageRef::train(format!("syn/{c}/{j}.png"))).collect();
        cat.adversarial_images = (0..20).map(|j| ImageRef::train(format!("adv/{c}/{j}.png"))).collect();
    }
    for seed in 0..100u64 {
        let (train, val) = split_holdout(&ds, "0.2".parse().unwrap(), seed).map_err(|e| e.to_string())?;
        for ((t, v), orig) in train.categories.iter().zip(&val.categories).zip(&ds.categories) {
            ensure(t.real_images.len() == 400 && v.real_images.len() == 100, || {
                format!("seed {seed}: {}/{}", t.real_images.len(), v.real_images.len())
            })?;
            ensure(v.synthetic_images.is_empty() && v.adversarial_images.is_empty(), || format!("seed {seed}: leakage"))?;
            ensure(
                t.synthetic_images.len() == 300 && t.adversarial_images.len() == 20,
                || format!("seed {seed}: train lost synthetic or adversarial images"),
            )?;
            ensure(v.real_images.iter().all(|r| r.split == Split::Val), || format!("seed {seed}: val split tag"))?;
            let mut union: Vec<&str> = t.real_images.iter().chain(&v.real_images).map(|r| r.path.as_str()).collect();
            union.sort();
            let mut want: Vec<&str> = orig.real_images.iter().map(|r| r.path.as_str()).collect();
            want.sort();
            ensure(union == want, || format!("seed {seed}: train and val overlap or lose images"))?;
        }
    }
    Ok("400/100 per class, no synthetic or adversarial images in val, 100 seeds".into())
}

fn resume() -> Result<String, String> {
    let reference = tempfile::tempdir().unwrap();
    toy_project(reference.path(), 20, "10")?;
    ok_in(reference.path(), &["--config", "cfg.toml", "gen-images"])?;
    let want = checksums(&reference.path().join("out/cache"));
    let total = count_png(&reference.path().join("out/cache"));
    ensure(total == 400, || format!("reference run produced {total} images"))?;

    let killed = tempfile::tempdir().unwrap();
    toy_project(killed.path(), 20, "10")?;
    let cache = killed.path().join("out/cache");
    let mut child = Command::new(bin())
        .args(["--config", "cfg.toml", "gen-images"])
        .current_dir(killed.path())
        .env_remove("SYNTHAUG_CACHE_DIR")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(60);
    while count_png(&cache) < 40 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    let at_kill = count_png(&cache);
    ensure(at_kill > 0 && at_kill < total, || format!("kill landed at {at_kill}/{total} images"))?;
    let rerun = ok_in(killed.path(), &["--config", "cfg.toml", "gen-images"])?;
    ensure(checksums(&cache) == want, || "resumed cache differs from the uninterrupted one".into())?;

    // A backend process that dies after 100 samples, then a resume with the in-process stub.
    let crashed = tempfile::tempdir().unwrap();
    toy_project(crashed.path(), 20, "10")?;
    let mut cfg = std::fs::read_to_string(crashed.path().join("cfg.toml")).unwrap();
    cfg.push_str(&format!(
        "\n[backends]\nt2i = \"process\"\nt2i_id = \"stub-t2i\"\nt2i_command = [\"{}\", \"serve-stub\", \"t2i\", \"--fail-after\", \"100\"]\n",
        bin()
    ));
    std::fs::write(crashed.path().join("crash.toml"), cfg).unwrap();
    let out = run_in(crashed.path(), &["--config", "crash.toml", "gen-images"]);
    ensure(out.status.code() == Some(4), || format!("crashing backend exited {:?}", out.status.code()))?;
    let partial = count_png(&crashed.path().join("out/cache"));
    ensure(partial == 100, || format!("crashing backend left {partial} images"))?;
    ok_in(crashed.path(), &["--config", "cfg.toml", "gen-images"])?;
    ensure(checksums(&crashed.path().join("out/cache")) == want, || "cache after backend crash differs".into())?;

    Ok(format!(
        "killed at {at_kill}/{total}, resume: {}; backend crash at 100/{total} exits 4 and resumes identically",
        rerun.trim()
    ))
}

fn main() {
    let checks: [(u32, &str, Check); 9] = [
        (1, "count laws", count_laws),
        (2, "long-tail law", long_tail_law),
        (3, "prompt template", prompt_template),
        (4, "determinism", determinism),
        (5, "metric oracles", metric_oracles),
        (6, "scheduler", scheduler),
        (7, "few-shot gain", few_shot),
        (8, "holdout law", holdout_law),
        (9, "idempotent resume", resume),
    ];
    let mut failed = 0;
    for (n, name, check) in checks {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
