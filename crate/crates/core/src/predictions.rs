//! Aligned unimodal and multimodal predictions for one data split.

use crate::distkl::{argmax, CategoricalDist, GaussianParams};
use crate::error::{Error, Result};

/// Targets of a split, aligned with the prediction series.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One model's predictions over a split.
///
/// Regression keeps the predicted mean and its residual variance against the
/// target; classification keeps the class-probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSeries {
    Regression(Vec<GaussianParams>),
    Classification(Vec<CategoricalDist>),
}

impl PredictionSeries {
    /// Builds regression predictions, deriving each variance from the target.
    pub fn regression(means: &[f64], targets: &[f64]) -> Result<Self> {
        if means.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predicted means for {} targets",
                means.len(),
                targets.len()
            )));
        }
        means
            .iter()
            .zip(targets)
            .map(|(&mu, &y)| GaussianParams::from_residual(y, mu))
            .collect::<Result<Vec<_>>>()
            .map(PredictionSeries::Regression)
    }

    pub fn classification(probs: Vec<Vec<f64>>) -> Result<Self> {
        probs
            .into_iter()
            .map(CategoricalDist::new)
            .collect::<Result<Vec<_>>>()
            .map(PredictionSeries::Classification)
    }

    pub fn len(&self) -> usize {
        match self {
            PredictionSeries::Regression(v) => v.len(),
            PredictionSeries::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point predictions: means for regression, argmax probability mass index
    /// (as `f64`) for classification.
    pub fn point_values(&self) -> Vec<f64> {
        match self {
            PredictionSeries::Regression(v) => v.iter().map(|g| g.mean()).collect(),
            PredictionSeries::Classification(v) => v.iter().map(|c| c.argmax() as f64).collect(),
        }
    }

    /// Hard labels for classification predictions.
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self {
            PredictionSeries::Regression(_) => None,
            PredictionSeries::Classification(v) => Some(v.iter().map(|c| argmax(c.probs())).collect()),
        }
    }

    fn same_kind(&self, other: &PredictionSeries) -> bool {
        matches!(
            (self, other),
            (PredictionSeries::Regression(_), PredictionSeries::Regression(_))
                | (PredictionSeries::Classification(_), PredictionSeries::Classification(_))
        )
    }
}

/// Unimodal predictions for every modality plus the multimodal predictions,
/// all aligned on instance index.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    unimodal: Vec<PredictionSeries>,
    multimodal: PredictionSeries,
    targets: Targets,
}

impl PredictionSet {
    pub fn new(unimodal: Vec<PredictionSeries>, multimodal: PredictionSeries, targets: Targets) -> Result<Self> {
        if unimodal.is_empty() {
            return Err(Error::IncompleteInput("no unimodal predictions".into()));
        }
        let n = multimodal.len();
        if n == 0 {
            return Err(Error::IncompleteInput("no multimodal predictions".into()));
        }
        for (m, series) in unimodal.iter().enumerate() {
            if series.len() != n {
                return Err(Error::IncompleteInput(format!(
                    "modality {m} has {} predictions, multimodal has {n}",
                    series.len()
                )));
            }
            if !series.same_kind(&multimodal) {
                return Err(Error::InvalidInput(format!(
                    "modality {m} prediction kind differs from the multimodal one"
                )));
            }
        }
        if targets.len() != n {
            return Err(Error::IncompleteInput(format!(
                "{} targets for {n} predictions",
                targets.len()
            )));
        }
        Ok(Self {
            unimodal,
            multimodal,
            targets,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.multimodal.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.unimodal.len()
    }

    pub fn unimodal(&self, modality: usize) -> &PredictionSeries {
        &self.unimodal[modality]
    }

    pub fn multimodal(&self) -> &PredictionSeries {
        &self.multimodal
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Same unimodal reference with a refreshed multimodal side.
    pub fn with_multimodal(&self, multimodal: PredictionSeries) -> Result<Self> {
        Self::new(self.unimodal.clone(), multimodal, self.targets.clone())
    }
}
