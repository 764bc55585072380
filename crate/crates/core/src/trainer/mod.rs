//! Image-classification training harness.
//!
//! SGD with momentum and weight decay, a linear warmup followed by a
//! multi-step schedule, per-epoch validation with best-checkpoint selection
//! and multi-seed averaging. A run is single-threaded and deterministic;
//! seeds of one experiment run in parallel.

mod data;
mod model;

pub use data::{load_images, with_transform_copies, ImageSet, INPUT_STANDARDIZE};
pub use model::{Classifier, ClassifierKind, ConvNet, Linear};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{json_digest, sha256_hex};
use crate::imagegen::ImageSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Absolute epoch indices at which the rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub model: ClassifierKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::cifar_recipe()
    }
}

impl TrainConfig {
    /// 200 epochs of SGD (lr 0.1, momentum 0.9, weight decay 5e-4), batch 128,
    /// 10 warmup epochs, decay by 0.2 at epochs 60/120/160, seeds 7/17/42.
    pub fn cifar_recipe() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            milestones: vec![60, 120, 160],
            gamma: 0.2,
            warmup_epochs: 10,
            seeds: vec![7, 17, 42],
            loss: Loss::CrossEntropy,
            model: ClassifierKind::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing".into());
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return bad("milestones must be below epochs".into());
        }
        let warm_limit = self.milestones.first().copied().unwrap_or(self.epochs + 1);
        if self.warmup_epochs >= warm_limit {
            return bad("warmup must end before the first milestone".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.model.validate().map_err(TrainError::InvalidConfig)
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// Learning rate for `epoch`.
///
/// Warmup ramps linearly to `base_lr` at the last warmup epoch; afterwards
/// the rate is `base_lr * gamma^k` with `k` the milestones at or below `epoch`.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    if epoch < config.warmup_epochs {
        return config.base_lr * (epoch + 1) as f64 / config.warmup_epochs as f64;
    }
    let k = config.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    // Dividing by (1/gamma)^k keeps decimal rates such as 0.02 exact.
    config.base_lr / (1.0 / config.gamma).powi(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("label spaces differ: {0} vs {1} classes")]
    LabelSpace(usize, usize),
    #[error("input shapes differ: {0} vs {1}")]
    Shape(ImageSpec, ImageSpec),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: Vec<EpochRecord>,
    },
    #[error("checkpoint does not fit its classifier")]
    Checkpoint,
    #[error("data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ClassifierKind,
    pub num_classes: usize,
    pub spec: ImageSpec,
    pub seed: u64,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn classifier(&self) -> Result<Box<dyn Classifier>, TrainError> {
        self.model
            .restore(self.num_classes, self.spec.width as usize, self.spec.height as usize, &self.params)
            .ok_or(TrainError::Checkpoint)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable checkpoint")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn evaluate(&self, set: &ImageSet) -> Result<f64, TrainError> {
        if set.num_classes != self.num_classes {
            return Err(TrainError::LabelSpace(self.num_classes, set.num_classes));
        }
        evaluate(self.classifier()?.as_ref(), set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Index of the highest logit; ties go to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &dyn Classifier, set: &ImageSet) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let correct = set
        .inputs
        .iter()
        .zip(&set.labels)
        .filter(|(x, &y)| argmax(&model.forward(x)) == y)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Epoch with the highest validation accuracy, the earliest on ties.
pub fn select_best(history: &[EpochRecord]) -> Option<&EpochRecord> {
    history.iter().reduce(|best, r| {
        if r.val_accuracy > best.val_accuracy || (r.val_accuracy == best.val_accuracy && r.epoch < best.epoch) {
            r
        } else {
            best
        }
    })
}

fn check_sets(train: &ImageSet, val: &ImageSet) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySet("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if train.num_classes != val.num_classes {
        return Err(TrainError::LabelSpace(train.num_classes, val.num_classes));
    }
    if train.spec != val.spec {
        return Err(TrainError::Shape(train.spec, val.spec));
    }
    Ok(())
}

/// Trains one seed and returns the best checkpoint with the full history.
pub fn train(train_set: &ImageSet, val_set: &ImageSet, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_sets(train_set, val_set)?;
    let spec = train_set.spec;
    let mut model = config
        .model
        .build(train_set.num_classes, spec.width as usize, spec.height as usize, seed);
    let n_params = model.params().len();
    let mut velocity = vec![0f32; n_params];
    let mut grad = vec![0f32; n_params];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 0..config.epochs {
        let lr = lr_schedule(config, epoch) as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0f64;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                loss_sum += model.accumulate_grad(&train_set.inputs[i], train_set.labels[i], &mut grad) as f64;
            }
            let scale = 1.0 / batch.len() as f32;
            let (m, wd) = (config.momentum as f32, config.weight_decay as f32);
            for ((w, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = m * *v + g * scale + wd * *w;
                *w -= lr * *v;
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                loss: train_loss,
                history,
            });
        }
        let val_accuracy = evaluate(model.as_ref(), val_set)?;
        history.push(EpochRecord {
            epoch,
            lr: lr_schedule(config, epoch),
            train_loss,
            val_accuracy,
        });
        log::debug!("seed {seed} epoch {epoch}: lr {lr} loss {train_loss:.4} val {val_accuracy:.4}");
        if best.as_ref().is_none_or(|b| val_accuracy > b.val_accuracy) {
            best = Some(Checkpoint {
                model: config.model.clone(),
                num_classes: train_set.num_classes,
                spec,
                seed,
                epoch,
                val_accuracy,
                params: model.params().to_vec(),
            });
        }
    }
    let checkpoint = best.expect("epochs > 0");
    debug_assert_eq!(select_best(&history).map(|r| r.epoch), Some(checkpoint.epoch));
    Ok(TrainOutcome { checkpoint, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub test_accuracy: f64,
    pub checkpoint_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
    /// Mean test accuracy over the surviving seeds.
    pub mean: f64,
    /// Population standard deviation of the test accuracies.
    pub std: f64,
    pub mean_val: f64,
    pub config_digest: String,
    pub manifest_digest: Option<String>,
    pub partial: bool,
}

impl RunReport {
    pub fn from_results(
        seeds: Vec<SeedResult>,
        failures: Vec<SeedFailure>,
        config_digest: String,
        manifest_digest: Option<String>,
    ) -> Self {
        let (mean, std) = mean_std(seeds.iter().map(|s| s.test_accuracy));
        let (mean_val, _) = mean_std(seeds.iter().map(|s| s.best_val_accuracy));
        let partial = !failures.is_empty();
        Self {
            seeds,
            failures,
            mean,
            std,
            mean_val,
            config_digest,
            manifest_digest,
            partial,
        }
    }
}

/// Arithmetic mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outcome of [`run_experiment`]: the report plus each surviving seed's checkpoint.
pub struct Experiment {
    pub report: RunReport,
    pub outcomes: Vec<TrainOutcome>,
}

/// Trains and tests every seed in `config.seeds`.
pub fn run_experiment(
    train_set: &ImageSet,
    val_set: &ImageSet,
    test_set: &ImageSet,
    config: &TrainConfig,
    manifest_digest: Option<String>,
) -> Result<Experiment, TrainError> {
    config.validate()?;
    check_sets(train_set, val_set)?;
    if test_set.num_classes != train_set.num_classes {
        return Err(TrainError::LabelSpace(train_set.num_classes, test_set.num_classes));
    }
    type SeedRun = (u64, Result<(TrainOutcome, f64), TrainError>);
    let runs: Vec<SeedRun> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let r = train(train_set, val_set, config, seed)
                .and_then(|o| o.checkpoint.evaluate(test_set).map(|acc| (o, acc)));
            (seed, r)
        })
        .collect();
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    let mut outcomes = Vec::new();
    for (seed, r) in runs {
        match r {
            Ok((o, test_accuracy)) => {
                seeds.push(SeedResult {
                    seed,
                    best_val_accuracy: o.checkpoint.val_accuracy,
                    best_epoch: o.checkpoint.epoch,
                    test_accuracy,
                    checkpoint_digest: o.checkpoint.digest(),
                });
                outcomes.push(o);
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(Experiment {
        report: RunReport::from_results(seeds, failures, config.digest(), manifest_digest),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagegen::StubT2I;

    fn stub_set(labels: &[&str], per_class: usize, seed0: u64, size: u32) -> ImageSet {
        let mut imgs = Vec::new();
        for (c, l) in labels.iter().enumerate() {
            for j in 0..per_class {
                imgs.push((StubT2I::stub_generate(l, seed0 + j as u64), c));
            }
        }
        ImageSet::from_images(&imgs, ImageSpec::rgb(size, size), labels.len()).unwrap()
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            base_lr: 0.05,
            milestones: vec![],
            warmup_epochs: 1,
            seeds: vec![7],
            model: ClassifierKind::ConvNet { widths: vec![8, 16] },
            ..TrainConfig::cifar_recipe()
        }
    }

    #[test]
    fn schedule_matches_closed_form() {
        let c = TrainConfig::cifar_recipe();
        assert_eq!(lr_schedule(&c, 0), 0.01);
        assert_eq!(lr_schedule(&c, 9), 0.1);
        assert_eq!(lr_schedule(&c, 59), 0.1);
        assert_eq!(lr_schedule(&c, 60), 0.02);
        assert_eq!(lr_schedule(&c, 120), 0.004);
        assert_eq!(lr_schedule(&c, 160), 0.0008);
        assert_eq!(lr_schedule(&c, 199), 0.0008);
        let decays = (1..c.epochs)
            .filter(|&e| e >= c.warmup_epochs && lr_schedule(&c, e) < lr_schedule(&c, e - 1))
            .count();
        assert_eq!(decays, c.milestones.len());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::cifar_recipe().validate().is_ok());
        let bad = [
            TrainConfig { milestones: vec![60, 60], ..TrainConfig::cifar_recipe() },
            TrainConfig { milestones: vec![60, 200], ..TrainConfig::cifar_recipe() },
            TrainConfig { gamma: 1.0, ..TrainConfig::cifar_recipe() },
            TrainConfig { warmup_epochs: 60, ..TrainConfig::cifar_recipe() },
            TrainConfig { seeds: vec![], ..TrainConfig::cifar_recipe() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn rec(epoch: usize, val_accuracy: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            lr: 0.1,
            train_loss: 1.0,
            val_accuracy,
        }
    }

    #[test]
    fn best_selection_prefers_earlier_tie_regardless_of_order() {
        let h = vec![rec(0, 0.5), rec(1, 0.7), rec(2, 0.6), rec(3, 0.9), rec(4, 0.9)];
        assert_eq!(select_best(&h).unwrap().epoch, 3);
        let mut rev = h.clone();
        rev.reverse();
        assert_eq!(select_best(&rev).unwrap().epoch, 3);
        assert!(select_best(&[]).is_none());
    }

    struct Constant(usize, usize);

    impl Classifier for Constant {
        fn num_classes(&self) -> usize {
            self.1
        }
        fn params(&self) -> &[f32] {
            &[]
        }
        fn params_mut(&mut self) -> &mut [f32] {
            &mut []
        }
        fn forward(&self, _: &[f32]) -> Vec<f32> {
            (0..self.1).map(|k| if k == self.0 { 1.0 } else { 0.0 }).collect()
        }
        fn accumulate_grad(&self, _: &[f32], _: usize, _: &mut [f32]) -> f32 {
            0.0
        }
    }

    fn label_set(labels: Vec<usize>, classes: usize) -> ImageSet {
        ImageSet {
            spec: ImageSpec::rgb(1, 1),
            num_classes: classes,
            inputs: labels.iter().map(|_| vec![0.0; 3]).collect(),
            labels,
        }
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(evaluate(&Constant(2, 4), &label_set(vec![0, 1, 2, 3], 4)).unwrap(), 0.25);
        assert_eq!(evaluate(&Constant(1, 2), &label_set(vec![1; 5], 2)).unwrap(), 1.0);
        let mut seven = vec![1; 7];
        seven.extend([0, 0, 0]);
        assert_eq!(evaluate(&Constant(1, 2), &label_set(seven, 2)).unwrap(), 0.7);
        assert!(matches!(evaluate(&Constant(0, 2), &label_set(vec![], 2)), Err(TrainError::EmptySet(_))));
    }

    #[test]
    fn stub_toy_task_trains_to_high_accuracy() {
        let train_set = stub_set(&["bike", "chair"], 100, 0, 16);
        let val_set = stub_set(&["bike", "chair"], 20, 10_000, 16);
        let out = train(&train_set, &val_set, &small_config(5), 7).unwrap();
        assert!(out.checkpoint.val_accuracy >= 0.95, "{:?}", out.history);
        assert_eq!(out.history.len(), 5);
        let cfg = small_config(5);
        for r in &out.history {
            assert_eq!(r.lr, lr_schedule(&cfg, r.epoch));
        }
        assert_eq!(out.checkpoint.evaluate(&val_set).unwrap(), out.checkpoint.val_accuracy);
    }

    #[test]
    fn training_is_deterministic() {
        let train_set = stub_set(&["bike", "chair"], 6, 0, 8);
        let val_set = stub_set(&["bike", "chair"], 4, 500, 8);
        let a = train(&train_set, &val_set, &small_config(2), 3).unwrap();
        let b = train(&train_set, &val_set, &small_config(2), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_history() {
        let train_set = stub_set(&["bike", "chair"], 6, 0, 8);
        let val_set = stub_set(&["bike", "chair"], 4, 500, 8);
        let cfg = TrainConfig {
            base_lr: 1e30,
            warmup_epochs: 0,
            momentum: 0.0,
            ..small_config(3)
        };
        match train(&train_set, &val_set, &cfg, 1) {
            Err(TrainError::Diverged { history, .. }) => assert!(history.len() < 3),
            other => panic!("{:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn report_statistics() {
        let s = |seed, acc| SeedResult {
            seed,
            best_val_accuracy: acc,
            best_epoch: 0,
            test_accuracy: acc,
            checkpoint_digest: String::new(),
        };
        let r = RunReport::from_results(vec![s(7, 0.90), s(17, 0.92), s(42, 0.91)], vec![], "c".into(), None);
        assert!((r.mean - 0.91).abs() < 1e-12);
        let one = RunReport::from_results(vec![s(7, 0.5)], vec![], "c".into(), None);
        assert_eq!(one.std, 0.0);
        assert!(!one.partial);
    }

    #[test]
    fn experiment_report_is_reproducible() {
        let train_set = stub_set(&["bike", "chair"], 6, 0, 8);
        let val_set = stub_set(&["bike", "chair"], 4, 500, 8);
        let cfg = TrainConfig {
            seeds: vec![7, 17],
            ..small_config(2)
        };
        let a = run_experiment(&train_set, &val_set, &val_set, &cfg, Some("m".into())).unwrap();
        let b = run_experiment(&train_set, &val_set, &val_set, &cfg, Some("m".into())).unwrap();
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
        assert_eq!(a.report.seeds.len(), 2);
    }
}
