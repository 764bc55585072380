//! Helpers for runs without real data or models: stub image sets and
//! line-protocol servers wrapping the stub backends.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use synthaug::backend::BackendError;
use synthaug::datasets::{save_manifest, Dataset, ImageRef};
use synthaug::imagegen::{render_one, ImageSpec, StubT2I, T2IBackend};
use synthaug::textgen::{LabelSpec, StubT2T};

use crate::commands::write_png;
use crate::error::CliError;

/// Prompt used for toy images; `{label}` is replaced by the label text.
pub const LABEL_PROMPT: &str = "{label}";

/// Stand-in for hard, out-of-distribution images of a class.
pub const ADVERSARIAL_PROMPT: &str = "a {label} in an unusual style";

/// Renders `per_class` stub images per label into `out/images/<name>/<label>/`
/// and writes a manifest at `out/<name>.jsonl`. Image `j` of a class uses
/// seed `seed_offset + j`.
pub fn make_toy_dataset(
    labels: &[String],
    per_class: usize,
    size: u32,
    out: &Path,
    name: &str,
    seed_offset: u64,
    prompt_template: &str,
) -> Result<PathBuf, CliError> {
    if !prompt_template.contains("{label}") {
        return Err(CliError::Config(format!("prompt template `{prompt_template}` has no {{label}} placeholder")));
    }
    let out = &std::path::absolute(out).map_err(|e| CliError::io(out, e))?;
    let specs: Vec<LabelSpec> = labels.iter().enumerate().map(|(i, l)| LabelSpec::new(i as u32, l.clone())).collect();
    let spec = ImageSpec::rgb(size, size);
    let mut ds = Dataset::new(name, spec, specs)?;
    let stub = StubT2I::new();
    for cat in &mut ds.categories {
        let dir = out.join("images").join(name).join(cat.label.label_text.replace(['/', ' '], "_"));
        for j in 0..per_class {
            let prompt = prompt_template.replace("{label}", &cat.label.label_text);
            let img = render_one(&stub, &prompt, seed_offset + j as u64, &spec)?;
            let path = dir.join(format!("{j:05}.png"));
            write_png(&path, &img)?;
            cat.real_images.push(ImageRef::train(path.to_string_lossy().into_owned()));
        }
    }
    let manifest = out.join(format!("{name}.jsonl"));
    save_manifest(&ds, &manifest)?;
    Ok(manifest)
}

/// Stub image backend that kills its own process once `remaining` base
/// samples have been produced, to simulate a crashed server.
pub struct CrashingT2I {
    inner: StubT2I,
    remaining: AtomicUsize,
}

impl CrashingT2I {
    pub fn new(after: usize) -> Self {
        CrashingT2I {
            inner: StubT2I::new(),
            remaining: AtomicUsize::new(after),
        }
    }
}

impl T2IBackend for CrashingT2I {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate_base(&self, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        if self.remaining.fetch_sub(1, Ordering::SeqCst) == 0 {
            std::process::exit(17);
        }
        self.inner.generate_base(prompt, seed)
    }

    fn upsample(&self, base: &RgbImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        self.inner.upsample(base, prompt, seed)
    }
}

pub fn serve_t2t() -> Result<(), CliError> {
    let stdin = std::io::stdin();
    synthaug::textgen::serve(&mut StubT2T::new(), stdin.lock(), std::io::stdout().lock())
        .map_err(|e| CliError::Backend(e.to_string()))
}

pub fn serve_t2i(fail_after: Option<usize>) -> Result<(), CliError> {
    let stdin = std::io::stdin();
    let backend: Box<dyn T2IBackend> = match fail_after {
        Some(n) => Box::new(CrashingT2I::new(n)),
        None => Box::new(StubT2I::new()),
    };
    synthaug::imagegen::wire::serve(backend.as_ref(), stdin.lock(), std::io::stdout().lock())
        .map_err(|e| CliError::Backend(e.to_string()))
}
