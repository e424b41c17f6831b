//! Instance-level KL weights, modality-level MI weights, their combinations,
//! and the adaptive exponential smoothing applied across epochs.

use std::io::Write;

use crate::distkl::{categorical_kl, gaussian_kl};
use crate::error::{Error, Result};
use crate::miest::{discrete_mi, ksg_mi, LabelSeries, ScoreSeries};
use crate::predictions::{PredictionSeries, PredictionSet};

/// Row sums of a normalized [`WeightMatrix`] must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub const WEIGHTS_CSV_HEADER: &str = "epoch,instance,modality,weight";
pub const ALPHA_CSV_HEADER: &str = "epoch,alpha";

fn check_entries(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(bad) => Err(Error::InvalidInput(format!(
            "{what} entry {bad} must be finite and non-negative"
        ))),
        None => Ok(()),
    }
}

/// Per-instance, per-modality KL divergences before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawKlMatrix {
    values: Vec<f64>,
    n_modalities: usize,
}

impl RawKlMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_modalities = rows.first().map_or(0, Vec::len);
        if n_modalities == 0 {
            return Err(Error::InvalidInput("raw KL matrix has no entries".into()));
        }
        if rows.iter().any(|r| r.len() != n_modalities) {
            return Err(Error::Shape("ragged raw KL rows".into()));
        }
        let values: Vec<f64> = rows.concat();
        check_entries(&values, "raw KL")?;
        Ok(Self { values, n_modalities })
    }

    pub fn n_instances(&self) -> usize {
        self.values.len() / self.n_modalities
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_modalities..(i + 1) * self.n_modalities]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_modalities)
    }

    pub fn column_means(&self) -> Vec<f64> {
        column_means(&self.values, self.n_modalities)
    }
}

/// Per-modality mutual information, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMI(Vec<f64>);

impl ModalityMI {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("modality MI vector is empty".into()));
        }
        check_entries(&values, "modality MI")?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Row-stochastic N×M matrix of modality weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Vec<f64>,
    n_instances: usize,
    n_modalities: usize,
}

impl WeightMatrix {
    /// Wraps rows that must already be normalized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_modalities = rows.first().map_or(0, Vec::len);
        if n_modalities == 0 {
            return Err(Error::InvalidInput("weight matrix has no entries".into()));
        }
        if rows.iter().any(|r| r.len() != n_modalities) {
            return Err(Error::Shape("ragged weight rows".into()));
        }
        let m = Self {
            values: rows.concat(),
            n_instances: rows.len(),
            n_modalities,
        };
        m.check_row_stochastic()?;
        Ok(m)
    }

    /// `n` copies of the uniform row `1/M`.
    pub fn uniform(n: usize, n_modalities: usize) -> Self {
        Self {
            values: vec![1.0 / n_modalities as f64; n * n_modalities],
            n_instances: n,
            n_modalities,
        }
    }

    fn from_normalized_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, n_modalities: usize) -> Self {
        let mut values = Vec::new();
        for row in rows {
            push_normalized(&mut values, row);
        }
        Self {
            n_instances: values.len() / n_modalities,
            values,
            n_modalities,
        }
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_modalities..(i + 1) * self.n_modalities]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_modalities)
    }

    pub fn column_means(&self) -> Vec<f64> {
        column_means(&self.values, self.n_modalities)
    }

    /// Embedding multipliers `M · W`; a uniform row maps to all ones.
    pub fn embedding_multipliers(&self) -> Vec<Vec<f64>> {
        let scale = self.n_modalities as f64;
        self.rows().map(|r| r.iter().map(|w| w * scale).collect()).collect()
    }

    pub fn check_row_stochastic(&self) -> Result<()> {
        check_entries(&self.values, "weight")?;
        for (i, row) in self.rows().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|w| *w > 1.0) {
                return Err(Error::InvalidInput(format!("weight row {i} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Appends one `epoch,instance,modality,weight` line per entry.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W, epoch: usize) -> std::io::Result<()> {
        for (i, row) in self.rows().enumerate() {
            for (m, w) in row.iter().enumerate() {
                writeln!(out, "{epoch},{i},{m},{w}")?;
            }
        }
        Ok(())
    }
}

fn column_means(values: &[f64], n_modalities: usize) -> Vec<f64> {
    let n = values.len() / n_modalities;
    let mut sums = vec![0.0; n_modalities];
    for row in values.chunks_exact(n_modalities) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / n as f64).collect()
}

/// L1-normalizes `row` onto `out`, falling back to uniform when it sums to zero.
fn push_normalized(out: &mut Vec<f64>, row: &[f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        out.extend(row.iter().map(|v| v / total));
    } else {
        out.extend(std::iter::repeat_n(1.0 / row.len() as f64, row.len()));
    }
}

/// Entry `(i, m)` is `KL(unimodal_i^(m) || multimodal_i)`.
pub fn instance_kl_weights(preds: &PredictionSet) -> Result<RawKlMatrix> {
    let n = preds.n_instances();
    let m_count = preds.n_modalities();
    let mut values = vec![0.0; n * m_count];
    for m in 0..m_count {
        match (preds.unimodal(m), preds.multimodal()) {
            (PredictionSeries::Regression(uni), PredictionSeries::Regression(multi)) => {
                for (i, (u, q)) in uni.iter().zip(multi).enumerate() {
                    values[i * m_count + m] = gaussian_kl(u, q);
                }
            }
            (PredictionSeries::Classification(uni), PredictionSeries::Classification(multi)) => {
                for (i, (u, q)) in uni.iter().zip(multi).enumerate() {
                    values[i * m_count + m] = categorical_kl(u, q)?;
                }
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "modality {m} prediction kind differs from the multimodal one"
                )))
            }
        }
    }
    check_entries(&values, "raw KL")?;
    Ok(RawKlMatrix {
        values,
        n_modalities: m_count,
    })
}

/// MI between each modality's unimodal predictions and the multimodal ones.
///
/// Classification uses hard argmax labels; regression uses KSG on the means.
pub fn modality_mi(preds: &PredictionSet, k: usize, jitter_seed: u64) -> Result<ModalityMI> {
    let multi = preds.multimodal();
    let values = (0..preds.n_modalities())
        .map(|m| {
            let uni = preds.unimodal(m);
            match (uni.labels(), multi.labels()) {
                (Some(a), Some(b)) => {
                    let classes = match preds.targets() {
                        crate::predictions::Targets::Classification { n_classes, .. } => *n_classes,
                        _ => a.iter().chain(&b).max().map_or(0, |x| x + 1),
                    };
                    discrete_mi(&LabelSeries::new(a, classes)?, &LabelSeries::new(b, classes)?)
                }
                _ => ksg_mi(
                    &ScoreSeries::new(uni.point_values())?,
                    &ScoreSeries::new(multi.point_values())?,
                    k,
                    jitter_seed,
                ),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ModalityMI::new(values)
}

/// Row-wise L1 normalization of the KL weights.
pub fn combine_local(raw: &RawKlMatrix) -> WeightMatrix {
    WeightMatrix::from_normalized_rows(raw.rows(), raw.n_modalities)
}

/// Raw KL weights scaled by modality MI, normalized once per row.
pub fn combine_bilevel(raw: &RawKlMatrix, mi: &ModalityMI) -> Result<WeightMatrix> {
    check_mi_shape(raw, mi)?;
    let mut values = Vec::with_capacity(raw.values.len());
    let mut scaled = vec![0.0; raw.n_modalities];
    for row in raw.rows() {
        for ((s, w), m) in scaled.iter_mut().zip(row).zip(&mi.0) {
            *s = w * m;
        }
        push_normalized(&mut values, &scaled);
    }
    Ok(WeightMatrix {
        n_instances: raw.n_instances(),
        values,
        n_modalities: raw.n_modalities,
    })
}

/// Alternative reading of the bilevel rule: normalize the KL row first, then
/// scale by MI and normalize again.
pub fn combine_bilevel_prenormalized(raw: &RawKlMatrix, mi: &ModalityMI) -> Result<WeightMatrix> {
    check_mi_shape(raw, mi)?;
    let local = combine_local(raw);
    let rescaled = RawKlMatrix {
        values: local.values,
        n_modalities: raw.n_modalities,
    };
    combine_bilevel(&rescaled, mi)
}

fn check_mi_shape(raw: &RawKlMatrix, mi: &ModalityMI) -> Result<()> {
    if mi.len() != raw.n_modalities {
        return Err(Error::Shape(format!(
            "{} MI values for {} modalities",
            mi.len(),
            raw.n_modalities
        )));
    }
    Ok(())
}

/// Every row is the normalized vector of KL column means.
pub fn combine_global_kl(raw: &RawKlMatrix) -> WeightMatrix {
    let means = raw.column_means();
    WeightMatrix::from_normalized_rows(
        std::iter::repeat_n(means.as_slice(), raw.n_instances()),
        raw.n_modalities,
    )
}

/// Every row is the normalized MI vector.
pub fn combine_global_mi(mi: &ModalityMI, n: usize) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("global MI weights need n >= 1".into()));
    }
    Ok(WeightMatrix::from_normalized_rows(
        std::iter::repeat_n(mi.values(), n),
        mi.len(),
    ))
}

/// Whether a smaller or larger validation metric counts as an improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricDirection {
    LowerIsBetter,
    HigherIsBetter,
}

impl MetricDirection {
    pub fn improves(self, current: f64, previous: f64) -> bool {
        match self {
            MetricDirection::LowerIsBetter => current < previous,
            MetricDirection::HigherIsBetter => current > previous,
        }
    }
}

/// Bounds and step of the adaptive smoothing factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub initial: f64,
    pub step: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            step: 0.1,
            min: 0.1,
            max: 0.9,
        }
    }
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && 0.0 <= self.min
            && self.min <= self.initial
            && self.initial <= self.max
            && self.max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "alpha schedule needs 0 <= min <= initial <= max <= 1 and step > 0, got {self:?}"
            )))
        }
    }

    /// Alpha after `level` net increments from the initial value.
    ///
    /// Alpha is recomputed from an integer level instead of accumulated, so a
    /// long run of updates does not drift.
    fn alpha_at(&self, level: i64) -> f64 {
        (self.initial + level as f64 * self.step).clamp(self.min, self.max)
    }

    fn level_bounds(&self) -> (i64, i64) {
        let slack = 1e-9;
        let lo = -(((self.initial - self.min) / self.step + slack).floor() as i64);
        let hi = ((self.max - self.initial) / self.step + slack).floor() as i64;
        (lo, hi)
    }
}

/// Adaptive EMA state carried between weighted epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingState {
    schedule: AlphaSchedule,
    level: i64,
    prev_weights: Option<WeightMatrix>,
    prev_metric: Option<f64>,
    epoch: usize,
}

impl SmoothingState {
    pub fn new(schedule: AlphaSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            level: 0,
            prev_weights: None,
            prev_metric: None,
            epoch: 0,
        })
    }

    /// State whose alpha starts at an arbitrary reachable value.
    pub fn with_alpha(schedule: AlphaSchedule, alpha: f64) -> Result<Self> {
        let mut s = Self::new(schedule)?;
        let level = ((alpha - schedule.initial) / schedule.step).round() as i64;
        let (lo, hi) = schedule.level_bounds();
        if !(lo..=hi).contains(&level) || (schedule.alpha_at(level) - alpha).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "alpha {alpha} is not reachable under {schedule:?}"
            )));
        }
        s.level = level;
        Ok(s)
    }

    pub fn alpha(&self) -> f64 {
        self.schedule.alpha_at(self.level)
    }

    pub fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    pub fn prev_weights(&self) -> Option<&WeightMatrix> {
        self.prev_weights.as_ref()
    }

    pub fn prev_metric(&self) -> Option<f64> {
        self.prev_metric
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Convex blend `alpha · new + (1 − alpha) · prev`, without renormalization.
pub fn blend(prev: &WeightMatrix, new: &WeightMatrix, alpha: f64) -> Result<Vec<f64>> {
    if prev.n_instances != new.n_instances || prev.n_modalities != new.n_modalities {
        return Err(Error::Shape(format!(
            "previous weights are {}x{}, new weights are {}x{}",
            prev.n_instances, prev.n_modalities, new.n_instances, new.n_modalities
        )));
    }
    Ok(new
        .values
        .iter()
        .zip(&prev.values)
        .map(|(n, p)| alpha * n + (1.0 - alpha) * p)
        .collect())
}

/// One adaptive smoothing step.
///
/// Alpha moves up one step when `current_metric` strictly improves on the
/// previously recorded metric and down one step otherwise (clamped). The
/// recursion runs over smoothed weights: the returned matrix becomes the
/// `prev_weights` of the next call.
pub fn smooth_update(
    state: SmoothingState,
    new_weights: &WeightMatrix,
    current_metric: f64,
    direction: MetricDirection,
) -> Result<(WeightMatrix, SmoothingState)> {
    if !current_metric.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothing metric {current_metric} is not finite"
        )));
    }
    let mut state = state;
    if let Some(prev) = state.prev_metric {
        let (lo, hi) = state.schedule.level_bounds();
        let delta = if direction.improves(current_metric, prev) {
            1
        } else {
            -1
        };
        state.level = (state.level + delta).clamp(lo, hi);
    }
    let smoothed = match &state.prev_weights {
        None => new_weights.clone(),
        Some(prev) => {
            let blended = blend(prev, new_weights, state.alpha())?;
            WeightMatrix::from_normalized_rows(blended.chunks_exact(new_weights.n_modalities), new_weights.n_modalities)
        }
    };
    state.prev_weights = Some(smoothed.clone());
    state.prev_metric = Some(current_metric);
    state.epoch += 1;
    Ok((smoothed, state))
}
