//! The three-step experiment: train one model per modality, train the
//! multimodal model without weights for a few epochs, then keep training it
//! with per-instance modality weights recomputed every epoch.

mod config;
mod report;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::{ClassificationEval, MetricReport, RegressionEval};
use crate::predictions::{PredictionSeries, PredictionSet, Targets};
use crate::seed;
use crate::synthdata::{self, Dataset, SplitTag};
use crate::tinymoe::{
    backward, forward_modalities, loss_and_grad, predict, sgd_step, DataBatch, LossTargets, ModelParams, MoeConfig,
    Task,
};
use crate::weights::{
    combine_bilevel, combine_bilevel_prenormalized, combine_global_kl, combine_global_mi, combine_local,
    instance_kl_weights, modality_mi, smooth_update, MetricDirection, ModalityMI, SmoothingState, WeightMatrix,
};

pub use config::{parse_data_spec, DataSource, ExperimentConfig, Hooks, Schedule, Variant};
pub use report::{write_outputs, EpochRecord, FinalReport, Phase};

/// Features and targets of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub batch: DataBatch,
    pub targets: Targets,
}

impl SplitData {
    pub fn from_dataset(dataset: &Dataset, tag: SplitTag) -> Result<Self> {
        let idx = dataset.indices(tag);
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("the {tag} split is empty")));
        }
        let (features, targets) = dataset.subset(&idx);
        Ok(Self {
            batch: DataBatch::new(features)?,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn loss_targets(&self) -> LossTargets<'_> {
        match &self.targets {
            Targets::Regression(y) => LossTargets::Regression(y),
            Targets::Classification { labels, .. } => LossTargets::Classification(labels),
        }
    }

    fn subset_targets(&self, idx: &[usize]) -> Targets {
        match &self.targets {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classification { labels, n_classes } => Targets::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        }
    }
}

/// A dataset with its three splits materialized.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let split_seed = seed::derive(cfg.seed, seed::SPLIT);
    let dataset = match &cfg.data {
        DataSource::Synthetic(spec) => synthdata::split(&synthdata::generate(spec)?, cfg.split_fractions, split_seed)?,
        DataSource::Path(dir) => {
            let ds = synthdata::load_dataset(dir)?;
            if ds.tags().iter().all(|t| *t == SplitTag::Train) {
                synthdata::split(&ds, cfg.split_fractions, split_seed)?
            } else {
                ds
            }
        }
    };
    Ok(PreparedData {
        train: SplitData::from_dataset(&dataset, SplitTag::Train)?,
        val: SplitData::from_dataset(&dataset, SplitTag::Val)?,
        test: SplitData::from_dataset(&dataset, SplitTag::Test)?,
        dataset,
    })
}

/// The configured architecture with input dims and task taken from the data.
pub fn model_config(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<MoeConfig> {
    let mut m = cfg.moe.clone();
    m.input_dims = dataset.modality_dims();
    m.task = dataset.task();
    m.validate()?;
    Ok(m)
}

fn failure(phase: &str, epoch: usize, e: Error) -> Error {
    match e {
        Error::TrainingFailure { .. } => e,
        other => Error::TrainingFailure {
            phase: phase.into(),
            epoch,
            reason: other.to_string(),
        },
    }
}

/// One pass of minibatch SGD over `data` in a seeded shuffled order. Returns
/// the mean per-instance loss seen during the pass.
#[allow(clippy::too_many_arguments)]
fn train_epoch(
    params: &mut ModelParams,
    data: &SplitData,
    modalities: &[usize],
    multipliers: Option<&[Vec<f64>]>,
    lr: f64,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<f64> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(shuffle_seed));
    let task = params.config().task;
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch = data.batch.gather(chunk);
        let targets = data.subset_targets(chunk);
        let mult: Option<Vec<Vec<f64>>> = multipliers.map(|m| chunk.iter().map(|&i| m[i].clone()).collect());
        let (preds, trace) = forward_modalities(params, &batch, modalities, mult.as_deref())?;
        let lt = match &targets {
            Targets::Regression(y) => LossTargets::Regression(y),
            Targets::Classification { labels, .. } => LossTargets::Classification(labels),
        };
        let (loss, dpred) = loss_and_grad(task, &preds, lt)?;
        if !loss.is_finite() {
            return Err(Error::NumericOverflow { layer: "loss".into() });
        }
        let grads = backward(params, &trace, &dpred)?;
        sgd_step(params, &grads, lr)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

fn split_loss(task: Task, outputs: &[Vec<f64>], data: &SplitData) -> Result<f64> {
    let (loss, _) = loss_and_grad(task, outputs, data.loss_targets())?;
    if !loss.is_finite() {
        return Err(Error::NumericOverflow { layer: "loss".into() });
    }
    Ok(loss)
}

fn to_series(outputs: &[Vec<f64>], targets: &Targets) -> Result<PredictionSeries> {
    match targets {
        Targets::Regression(y) => {
            let means: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            PredictionSeries::regression(&means, y)
        }
        Targets::Classification { .. } => PredictionSeries::classification(outputs.to_vec()),
    }
}

/// Metrics of raw model outputs against a split's targets.
pub fn metric_report(outputs: &[Vec<f64>], targets: &Targets) -> Result<MetricReport> {
    match targets {
        Targets::Regression(y) => Ok(MetricReport::regression(&RegressionEval::new(
            outputs.iter().map(|o| o[0]).collect(),
            y.clone(),
        )?)),
        Targets::Classification { labels, .. } => Ok(MetricReport::classification(&ClassificationEval::new(
            outputs.iter().map(|o| crate::distkl::argmax(o)).collect(),
            labels.clone(),
        )?)),
    }
}

/// The scalar that drives the smoothing schedule: validation MAE for
/// regression, validation weighted F1 for classification.
pub fn smoothing_metric(report: &MetricReport) -> (f64, MetricDirection) {
    match report {
        MetricReport::Regression { mae, .. } => (*mae, MetricDirection::LowerIsBetter),
        MetricReport::Classification { weighted_f1, .. } => (*weighted_f1, MetricDirection::HigherIsBetter),
    }
}

fn broadcast(per_modality: &[f64], n: usize) -> Vec<Vec<f64>> {
    vec![per_modality.to_vec(); n]
}

/// Forward pass on a split with per-modality multipliers shared by every
/// instance, then metrics.
pub fn evaluate(model: &ModelParams, split: &SplitData, eval_weights: &[f64]) -> Result<MetricReport> {
    if split.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let all: Vec<usize> = (0..model.config().n_modalities()).collect();
    let out = predict(model, &split.batch, &all, Some(&broadcast(eval_weights, split.len())))?;
    metric_report(&out, &split.targets)
}

/// Frozen per-modality reference models and their predictions.
#[derive(Debug, Clone)]
pub struct UnimodalPhase {
    pub models: Vec<ModelParams>,
    pub train: Vec<PredictionSeries>,
    pub val: Vec<PredictionSeries>,
    pub val_metrics: Vec<MetricReport>,
}

fn train_one_unimodal(
    cfg: &ExperimentConfig,
    model_cfg: &MoeConfig,
    data: &PreparedData,
    m: usize,
) -> Result<(ModelParams, PredictionSeries, PredictionSeries, MetricReport)> {
    let model_seed = seed::derive(cfg.seed, m as u64);
    let mut params = ModelParams::init(model_cfg.clone(), model_seed)?;
    let phase = format!("unimodal[{m}]");
    for e in 0..cfg.schedule.epochs_unimodal {
        train_epoch(
            &mut params,
            &data.train,
            &[m],
            None,
            cfg.lr,
            cfg.batch_size,
            seed::derive(model_seed, seed::SHUFFLE + e as u64),
        )
        .map_err(|err| failure(&phase, e + 1, err))?;
    }
    let end = cfg.schedule.epochs_unimodal;
    let train_out = predict(&params, &data.train.batch, &[m], None).map_err(|e| failure(&phase, end, e))?;
    let val_out = predict(&params, &data.val.batch, &[m], None).map_err(|e| failure(&phase, end, e))?;
    Ok((
        params,
        to_series(&train_out, &data.train.targets)?,
        to_series(&val_out, &data.val.targets)?,
        metric_report(&val_out, &data.val.targets)?,
    ))
}

/// Trains one independently initialized model per modality (seed `seed + m`),
/// in parallel.
pub fn train_unimodal_all(cfg: &ExperimentConfig, data: &PreparedData) -> Result<UnimodalPhase> {
    let model_cfg = model_config(cfg, &data.dataset)?;
    let n = model_cfg.n_modalities();
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|m| {
                let model_cfg = &model_cfg;
                s.spawn(move || train_one_unimodal(cfg, model_cfg, data, m))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("unimodal worker panicked"))
            .collect()
    });
    let mut phase = UnimodalPhase {
        models: Vec::with_capacity(n),
        train: Vec::with_capacity(n),
        val: Vec::with_capacity(n),
        val_metrics: Vec::with_capacity(n),
    };
    for r in results {
        let (model, train, val, metrics) = r?;
        phase.models.push(model);
        phase.train.push(train);
        phase.val.push(val);
        phase.val_metrics.push(metrics);
    }
    Ok(phase)
}

/// A multimodal model with its latest outputs on the train and val splits.
#[derive(Debug, Clone)]
pub struct MultimodalState {
    pub model: ModelParams,
    pub train_outputs: Vec<Vec<f64>>,
    pub val_outputs: Vec<Vec<f64>>,
    pub val_metrics: MetricReport,
    /// Epochs trained so far.
    pub epoch: usize,
}

fn all_modalities(model: &ModelParams) -> Vec<usize> {
    (0..model.config().n_modalities()).collect()
}

/// One multimodal epoch plus refreshed outputs. `train_mult` holds one
/// multiplier row per training instance, `val_mult` one value per modality.
fn multimodal_epoch(
    cfg: &ExperimentConfig,
    state: &mut MultimodalState,
    data: &PreparedData,
    train_mult: Option<&[Vec<f64>]>,
    val_mult: Option<&[f64]>,
    phase: &str,
) -> Result<(f64, f64)> {
    let epoch = state.epoch + 1;
    let all = all_modalities(&state.model);
    let task = state.model.config().task;
    let run = |state: &mut MultimodalState| -> Result<(f64, f64)> {
        let train_loss = train_epoch(
            &mut state.model,
            &data.train,
            &all,
            train_mult,
            cfg.lr,
            cfg.batch_size,
            seed::derive(cfg.seed, seed::SHUFFLE + state.epoch as u64),
        )?;
        state.train_outputs = predict(&state.model, &data.train.batch, &all, train_mult)?;
        let val_rows = val_mult.map(|v| broadcast(v, data.val.len()));
        state.val_outputs = predict(&state.model, &data.val.batch, &all, val_rows.as_deref())?;
        let val_loss = split_loss(task, &state.val_outputs, &data.val)?;
        state.val_metrics = metric_report(&state.val_outputs, &data.val.targets)?;
        if state.train_outputs.len() != data.train.len() {
            return Err(Error::Consistency(format!(
                "{} train outputs for {} train instances",
                state.train_outputs.len(),
                data.train.len()
            )));
        }
        Ok((train_loss, val_loss))
    };
    let r = run(state).map_err(|e| failure(phase, epoch, e))?;
    state.epoch = epoch;
    Ok(r)
}

fn uniform_means(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Initializes the multimodal model with the experiment seed and trains it
/// for `epochs_warm` epochs without weights.
pub fn train_multimodal_warm(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(MultimodalState, Vec<EpochRecord>)> {
    let model_cfg = model_config(cfg, &data.dataset)?;
    let model = ModelParams::init(model_cfg, cfg.seed)?;
    let all = all_modalities(&model);
    let fail = |e| failure("warm", 0, e);
    let train_outputs = predict(&model, &data.train.batch, &all, None).map_err(fail)?;
    let val_outputs = predict(&model, &data.val.batch, &all, None).map_err(fail)?;
    let val_metrics = metric_report(&val_outputs, &data.val.targets)?;
    let mut state = MultimodalState {
        model,
        train_outputs,
        val_outputs,
        val_metrics,
        epoch: 0,
    };
    let records = continue_unweighted(cfg, &mut state, data, cfg.schedule.epochs_warm, Phase::Warm)?;
    Ok((state, records))
}

fn continue_unweighted(
    cfg: &ExperimentConfig,
    state: &mut MultimodalState,
    data: &PreparedData,
    epochs: usize,
    phase: Phase,
) -> Result<Vec<EpochRecord>> {
    let m = state.model.config().n_modalities();
    let mut records = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let t0 = Instant::now();
        let (train_loss, val_loss) = multimodal_epoch(cfg, state, data, None, None, &phase.to_string())?;
        records.push(EpochRecord {
            epoch: state.epoch,
            phase,
            train_loss,
            val_loss,
            val_metrics: state.val_metrics.clone(),
            alpha: None,
            mean_weights: uniform_means(m),
            duration: t0.elapsed(),
        });
    }
    Ok(records)
}

/// Everything the weighted phase produced besides the model itself.
#[derive(Debug, Clone, Default)]
pub struct WeightedTrajectory {
    pub records: Vec<EpochRecord>,
    /// Smoothed weights used in each weighted epoch, with the epoch number.
    pub weights: Vec<(usize, WeightMatrix)>,
    pub alphas: Vec<(usize, f64)>,
    /// Per-modality MI estimated at each weighted epoch.
    pub mi: Vec<Vec<f64>>,
}

fn combine(cfg: &ExperimentConfig, preds: &PredictionSet, epoch: usize) -> Result<(WeightMatrix, Vec<f64>)> {
    let raw = instance_kl_weights(preds)?;
    let m = preds.n_modalities();
    let mi = if cfg.hooks.force_uniform_mi {
        ModalityMI::new(vec![1.0; m])?
    } else {
        modality_mi(preds, cfg.knn_k, seed::derive(cfg.seed, seed::MI_JITTER + epoch as u64))?
    };
    let w = match cfg.variant {
        Variant::BtwLocal => combine_local(&raw),
        Variant::BtwGlobalKl => combine_global_kl(&raw),
        Variant::BtwGlobalMi => combine_global_mi(&mi, raw.n_instances())?,
        Variant::Btw if cfg.prenormalize_bilevel => combine_bilevel_prenormalized(&raw, &mi)?,
        Variant::Btw => combine_bilevel(&raw, &mi)?,
        Variant::Unweighted => {
            return Err(Error::InvalidInput(
                "the unweighted variant has no weighted phase".into(),
            ));
        }
    };
    Ok((w, mi.values().to_vec()))
}

/// Per-modality multipliers for evaluation: `M ·` column means of `w`, or
/// ones under the unit-weight hook.
fn eval_multipliers(cfg: &ExperimentConfig, w: &WeightMatrix) -> Vec<f64> {
    let m = w.n_modalities();
    if cfg.hooks.force_unit_weights {
        vec![1.0; m]
    } else {
        w.column_means().iter().map(|v| v * m as f64).collect()
    }
}

/// `epochs_weighted` epochs of: KL weights from the frozen unimodal train
/// predictions against the current multimodal ones, MI, combination per
/// variant, smoothing driven by the previous epoch's validation metric, one
/// training epoch with the smoothed weights scaling the embeddings, and a
/// refresh of the multimodal outputs.
pub fn run_weighted_phase(
    cfg: &ExperimentConfig,
    state: &mut MultimodalState,
    unimodal: &UnimodalPhase,
    data: &PreparedData,
) -> Result<WeightedTrajectory> {
    if cfg.variant == Variant::Unweighted {
        return Err(Error::InvalidInput(
            "the unweighted variant has no weighted phase".into(),
        ));
    }
    let mut smoothing = SmoothingState::new(cfg.smoothing)?;
    let mut out = WeightedTrajectory::default();
    let m = unimodal.models.len();
    for _ in 0..cfg.schedule.epochs_weighted {
        let t0 = Instant::now();
        let epoch = state.epoch + 1;
        let fail = |e| failure("weighted", epoch, e);
        let multi = to_series(&state.train_outputs, &data.train.targets).map_err(fail)?;
        if multi.len() != unimodal.train[0].len() {
            return Err(Error::Consistency(format!(
                "epoch {epoch}: {} multimodal predictions, {} unimodal",
                multi.len(),
                unimodal.train[0].len()
            )));
        }
        let preds = PredictionSet::new(unimodal.train.clone(), multi, data.train.targets.clone()).map_err(fail)?;
        let (new_w, mi) = combine(cfg, &preds, epoch).map_err(fail)?;
        let (metric, direction) = smoothing_metric(&state.val_metrics);
        let (smoothed, next) = smooth_update(smoothing, &new_w, metric, direction).map_err(fail)?;
        smoothing = next;

        let train_mult = if cfg.hooks.force_unit_weights {
            vec![vec![1.0; m]; smoothed.n_instances()]
        } else {
            smoothed.embedding_multipliers()
        };
        let val_mult = eval_multipliers(cfg, &smoothed);
        let (train_loss, val_loss) =
            multimodal_epoch(cfg, state, data, Some(&train_mult), Some(&val_mult), "weighted")?;
        out.records.push(EpochRecord {
            epoch,
            phase: Phase::Weighted,
            train_loss,
            val_loss,
            val_metrics: state.val_metrics.clone(),
            alpha: Some(smoothing.alpha()),
            mean_weights: smoothed.column_means(),
            duration: t0.elapsed(),
        });
        out.alphas.push((epoch, smoothing.alpha()));
        out.weights.push((epoch, smoothed));
        out.mi.push(mi);
    }
    Ok(out)
}

/// Full result of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub unimodal: UnimodalPhase,
    pub model: ModelParams,
    pub records: Vec<EpochRecord>,
    pub trajectory: WeightedTrajectory,
    /// Per-modality multipliers applied at evaluation.
    pub eval_multipliers: Vec<f64>,
    pub val_metrics: MetricReport,
    pub test_metrics: MetricReport,
    pub unimodal_test_metrics: Vec<MetricReport>,
}

impl ExperimentOutput {
    /// Final per-modality MI, L1-normalized (uniform when all zero).
    pub fn final_mi_weights(&self) -> Option<Vec<f64>> {
        let mi = self.trajectory.mi.last()?;
        let w = combine_global_mi(&ModalityMI::new(mi.clone()).ok()?, 1).ok()?;
        Some(w.row(0).to_vec())
    }

    pub fn total_duration(&self) -> Duration {
        self.records.iter().map(|r| r.duration).sum()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_experiment_on(cfg, &data)
}

/// [`run_experiment`] on data that was already prepared (and may be shared
/// between runs).
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let unimodal = train_unimodal_all(cfg, data)?;
    let (mut state, mut records) = train_multimodal_warm(cfg, data)?;
    let m = unimodal.models.len();
    let (trajectory, eval_mult) = if cfg.variant == Variant::Unweighted {
        let more = continue_unweighted(cfg, &mut state, data, cfg.schedule.epochs_weighted, Phase::Unweighted)?;
        (
            WeightedTrajectory {
                records: more,
                ..Default::default()
            },
            vec![1.0; m],
        )
    } else {
        let t = run_weighted_phase(cfg, &mut state, &unimodal, data)?;
        let mult = match t.weights.last() {
            Some((_, w)) => eval_multipliers(cfg, w),
            None => vec![1.0; m],
        };
        (t, mult)
    };
    records.extend(trajectory.records.iter().cloned());
    let test_metrics = evaluate(&state.model, &data.test, &eval_mult)?;
    let unimodal_test_metrics = unimodal
        .models
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let out = predict(model, &data.test.batch, &[i], None)?;
            metric_report(&out, &data.test.targets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        unimodal,
        val_metrics: state.val_metrics.clone(),
        model: state.model,
        records,
        trajectory,
        eval_multipliers: eval_mult,
        test_metrics,
        unimodal_test_metrics,
    })
}
