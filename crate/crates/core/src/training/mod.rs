//! Mini-batch training with Adam, evaluation metrics and multi-seed runs.

mod metrics;

pub use metrics::{auc, evaluate_scores, Confusion, MetricsError, MetricsReport};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureMask, FeatureScaler, EventGraph, DataError};
use crate::model::{prepare_all, training_loss, BatchBuilder, Model, ModelConfig, ModelError, PreparedEvent};
use crate::tensor::{Adam, AdamConfig, Tape, TensorError};

/// Mixed into the seed of the training stream so it differs from the
/// initialization stream.
const TRAIN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub w_load: f64,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub seeds: Vec<u64>,
    /// Evaluate AUC on the held-out set after every epoch.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 500,
            w_load: 1.0,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            seeds: vec![1],
            eval_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            out.push(format!("lr_decay {} must lie in (0, 1]", self.lr_decay));
        }
        if !(self.w_load >= 0.0 && self.w_load.is_finite()) {
            out.push(format!("w_load {} must be non-negative", self.w_load));
        }
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_loss: f64,
    pub load_loss: f64,
    pub eval_auc: Option<f64>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {place}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        place: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-epoch curve as CSV with header `epoch,ce_loss,load_loss,eval_auc`.
pub fn curve_csv(curve: &[EpochLog]) -> String {
    let mut out = String::from("epoch,ce_loss,load_loss,eval_auc\n");
    for e in curve {
        let auc = e.eval_auc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.ce_loss, e.load_loss, auc));
    }
    out
}

/// Trains `model` in place. Deterministic given `seed`.
pub fn train(
    model: &mut Model,
    config: &TrainConfig,
    train_set: &[PreparedEvent],
    eval_set: Option<&[PreparedEvent]>,
    seed: u64,
) -> Result<Vec<EpochLog>, TrainError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    if train_set.is_empty() {
        return Err(TrainError::Empty("training"));
    }
    let mut rng = crate::seeded_rng(seed ^ TRAIN_STREAM);
    let builder = BatchBuilder::new(model.config.d_pe);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.store.tensors(),
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.set_learning_rate(config.learning_rate * config.lr_decay.powi(epoch as i32));
        order.shuffle(&mut rng);
        let (mut ce_sum, mut load_sum, mut weight) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let events: Vec<&PreparedEvent> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = builder.build(&events, Some(&mut rng));
            let nonfinite = |place: String| TrainError::NonFinite {
                epoch,
                batch: b,
                place,
            };
            let mut tape = Tape::new();
            let p = model.store.bind(&mut tape);
            let fwd = match model.forward(&mut tape, &p, &batch, true, &mut rng) {
                Err(ModelError::NonFinite(place)) => return Err(nonfinite(place)),
                other => other?,
            };
            let loss = training_loss(&mut tape, &fwd, &batch.labels, config.w_load)?;
            let total = tape.value(loss.total).item();
            if !total.is_finite() {
                return Err(nonfinite("loss".into()));
            }
            let mut grads = tape.backward(loss.total)?;
            let grads = p.gradients(&mut grads);
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(nonfinite(format!("gradient of {}", model.store.names()[i])));
            }
            adam.step(model.store.tensors_mut(), &grads)?;
            let n = chunk.len() as f64;
            ce_sum += tape.value(loss.cross_entropy).item() * n;
            load_sum += loss.load.map_or(0.0, |l| tape.value(l).item()) * n;
            weight += n;
        }
        let eval_auc = match eval_set {
            Some(set) if config.eval_each_epoch => Some(evaluate(model, set, config.batch_size)?.auc),
            _ => None,
        };
        curve.push(EpochLog {
            epoch,
            ce_loss: ce_sum / weight,
            load_loss: load_sum / weight,
            eval_auc,
        });
    }
    Ok(curve)
}

/// Inference-mode metrics with threshold 0.5 on the signal probability.
pub fn evaluate(model: &Model, events: &[PreparedEvent], batch_size: usize) -> Result<MetricsReport, TrainError> {
    if events.is_empty() {
        return Err(TrainError::Empty("evaluation"));
    }
    let scores = model.predict(events, batch_size)?;
    let positive: Vec<bool> = events.iter().map(|e| e.label.class() == 1).collect();
    Ok(evaluate_scores(&scores, &positive, 0.5)?)
}

/// The five headline metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl MetricValues {
    fn of(r: &MetricsReport) -> Self {
        Self {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc: r.auc,
        }
    }

    fn to_array(self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auc]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            accuracy: a[0],
            precision: a[1],
            recall: a[2],
            f1: a[3],
            auc: a[4],
        }
    }
}

/// Mean and sample standard deviation across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: MetricValues,
    pub std: MetricValues,
    pub n_seeds: usize,
}

/// Aggregates per-seed reports; one report gives std 0.
pub fn aggregate(reports: &[MetricsReport]) -> Aggregate {
    let n = reports.len();
    let values: Vec<[f64; 5]> = reports.iter().map(|r| MetricValues::of(r).to_array()).collect();
    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    if n > 0 {
        for j in 0..5 {
            mean[j] = values.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            if n > 1 {
                let ss: f64 = values.iter().map(|v| (v[j] - mean[j]).powi(2)).sum();
                std[j] = (ss / (n - 1) as f64).sqrt();
            }
        }
    }
    Aggregate {
        mean: MetricValues::from_array(mean),
        std: MetricValues::from_array(std),
        n_seeds: n,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub curve: Vec<EpochLog>,
    pub metrics: MetricsReport,
}

pub struct Experiment {
    pub scaler: FeatureScaler,
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

/// Fits the scaler on `train_events`, then trains and evaluates one model per
/// seed. `mask` hides feature cells in both sets.
pub fn run_experiment(
    config: &ExperimentConfig,
    train_events: &[EventGraph],
    test_events: &[EventGraph],
    mask: &FeatureMask,
) -> Result<Experiment, TrainError> {
    let problems: Vec<String> = config
        .model
        .problems()
        .into_iter()
        .chain(config.train.problems())
        .collect();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems));
    }
    let scaler = FeatureScaler::fit(train_events)?;
    let train_set = prepare_all(train_events, &scaler, mask);
    let test_set = prepare_all(test_events, &scaler, mask);
    let mut runs = Vec::with_capacity(config.train.seeds.len());
    for &seed in &config.train.seeds {
        let mut model = Model::new(config.model.clone(), &mut crate::seeded_rng(seed))?;
        let curve = train(&mut model, &config.train, &train_set, Some(&test_set), seed)?;
        let metrics = evaluate(&model, &test_set, config.train.batch_size)?;
        runs.push(SeedRun {
            seed,
            model,
            curve,
            metrics,
        });
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics.clone()).collect();
    Ok(Experiment {
        scaler,
        runs,
        aggregate: aggregate(&reports),
    })
}
