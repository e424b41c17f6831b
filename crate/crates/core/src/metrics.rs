//! Evaluation metrics in the sentiment-benchmark style (MAE, correlation,
//! Acc-7/5/2) and for classification (accuracy, macro and weighted F1).

use serde::Serialize;

use crate::error::{Error, Result};

/// Paired real-valued predictions and targets, at least two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEval {
    preds: Vec<f64>,
    targets: Vec<f64>,
}

impl RegressionEval {
    pub fn new(preds: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if preds.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} targets",
                preds.len(),
                targets.len()
            )));
        }
        if preds.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: preds.len(),
            });
        }
        if preds.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite prediction or target".into()));
        }
        Ok(Self { preds, targets })
    }

    pub fn preds(&self) -> &[f64] {
        &self.preds
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.preds.iter().copied().zip(self.targets.iter().copied())
    }
}

pub fn mae(e: &RegressionEval) -> f64 {
    e.pairs().map(|(p, t)| (p - t).abs()).sum::<f64>() / e.preds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub value: f64,
    /// Set when either series has zero variance; `value` is then 0.
    pub degenerate: bool,
}

pub fn pearson(e: &RegressionEval) -> Correlation {
    let n = e.preds.len() as f64;
    let mp = e.preds.iter().sum::<f64>() / n;
    let mt = e.targets.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in e.pairs() {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccK {
    /// Round, clamp to [−3, 3], exact match.
    Seven,
    /// Round, clamp to [−2, 2], exact match.
    Five,
    /// Sign agreement over all instances; zero counts as non-positive.
    TwoIncludeZero,
    /// Sign agreement over instances whose target is nonzero.
    TwoNonZero,
}

/// Round half to even, then clamp to `[-limit, limit]`.
pub fn bin_score(v: f64, limit: f64) -> f64 {
    v.round_ties_even().clamp(-limit, limit)
}

fn positive(v: f64) -> bool {
    v > 0.0
}

/// Fraction of matching instances. With [`AccK::TwoNonZero`] and no nonzero
/// targets there is nothing to score and the result is 0.
pub fn acc_k(e: &RegressionEval, k: AccK) -> f64 {
    let (hits, total) = match k {
        AccK::Seven | AccK::Five => {
            let limit = if k == AccK::Seven { 3.0 } else { 2.0 };
            let hits = e
                .pairs()
                .filter(|&(p, t)| bin_score(p, limit) == bin_score(t, limit))
                .count();
            (hits, e.preds.len())
        }
        AccK::TwoIncludeZero => {
            let hits = e.pairs().filter(|&(p, t)| positive(p) == positive(t)).count();
            (hits, e.preds.len())
        }
        AccK::TwoNonZero => {
            let kept: Vec<_> = e.pairs().filter(|&(_, t)| t != 0.0).collect();
            let hits = kept.iter().filter(|&&(p, t)| positive(p) == positive(t)).count();
            (hits, kept.len())
        }
    };
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Predicted and true class indices, at least one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationEval {
    predicted: Vec<usize>,
    truth: Vec<usize>,
}

impl ClassificationEval {
    pub fn new(predicted: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predicted labels for {} true labels",
                predicted.len(),
                truth.len()
            )));
        }
        if predicted.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(Self { predicted, truth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

/// Per-class F1 (0 when a class has no true positives), averaged over the
/// classes that occur in the true labels: plain mean for macro, support
/// weighted for weighted.
pub fn f1_scores(e: &ClassificationEval) -> F1Scores {
    let n_classes = e.predicted.iter().chain(&e.truth).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &t) in e.predicted.iter().zip(&e.truth) {
        pred_count[p] += 1;
        support[t] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let n = e.truth.len() as f64;
    let (mut macro_sum, mut weighted_sum, mut present) = (0.0, 0.0, 0usize);
    for c in 0..n_classes {
        if support[c] == 0 {
            continue;
        }
        present += 1;
        let f1 = if tp[c] == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / (pred_count[c] + support[c]) as f64
        };
        macro_sum += f1;
        weighted_sum += f1 * support[c] as f64;
    }
    let macro_f1 = macro_sum / present as f64;
    // equal supports: the weighted mean is the macro mean, bit for bit
    let mut supports = support.iter().filter(|&&s| s > 0);
    let first = supports.next().copied();
    let weighted_f1 = if supports.all(|&s| Some(s) == first) {
        macro_f1
    } else {
        weighted_sum / n
    };
    F1Scores {
        macro_f1,
        weighted_f1,
        accuracy: tp.iter().sum::<usize>() as f64 / n,
    }
}

/// Include-zero / non-zero pair, in the order reported by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair {
    pub include_zero: f64,
    pub non_zero: f64,
}

/// Metrics for one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum MetricReport {
    Regression {
        mae: f64,
        corr: Correlation,
        acc7: f64,
        acc5: f64,
        acc2: Pair,
        weighted_f1: Pair,
    },
    Classification {
        accuracy: f64,
        macro_f1: f64,
        weighted_f1: f64,
    },
}

impl MetricReport {
    pub fn regression(e: &RegressionEval) -> Self {
        let binary = |keep: &dyn Fn(f64) -> bool| {
            let (p, t): (Vec<usize>, Vec<usize>) = e
                .pairs()
                .filter(|&(_, t)| keep(t))
                .map(|(p, t)| (positive(p) as usize, positive(t) as usize))
                .unzip();
            ClassificationEval::new(p, t).map_or(0.0, |c| f1_scores(&c).weighted_f1)
        };
        MetricReport::Regression {
            mae: mae(e),
            corr: pearson(e),
            acc7: acc_k(e, AccK::Seven),
            acc5: acc_k(e, AccK::Five),
            acc2: Pair {
                include_zero: acc_k(e, AccK::TwoIncludeZero),
                non_zero: acc_k(e, AccK::TwoNonZero),
            },
            weighted_f1: Pair {
                include_zero: binary(&|_| true),
                non_zero: binary(&|t| t != 0.0),
            },
        }
    }

    pub fn classification(e: &ClassificationEval) -> Self {
        let f = f1_scores(e);
        MetricReport::Classification {
            accuracy: f.accuracy,
            macro_f1: f.macro_f1,
            weighted_f1: f.weighted_f1,
        }
    }

    /// Named scalar columns, in a fixed order, for CSV output.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        match self {
            MetricReport::Regression {
                mae,
                corr,
                acc7,
                acc5,
                acc2,
                weighted_f1,
            } => vec![
                ("mae", *mae),
                ("corr", corr.value),
                ("acc7", *acc7),
                ("acc5", *acc5),
                ("acc2_include_zero", acc2.include_zero),
                ("acc2_non_zero", acc2.non_zero),
                ("weighted_f1_include_zero", weighted_f1.include_zero),
                ("weighted_f1_non_zero", weighted_f1.non_zero),
            ],
            MetricReport::Classification {
                accuracy,
                macro_f1,
                weighted_f1,
            } => vec![
                ("accuracy", *accuracy),
                ("macro_f1", *macro_f1),
                ("weighted_f1", *weighted_f1),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.columns().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(p: &[f64], t: &[f64]) -> RegressionEval {
        RegressionEval::new(p.to_vec(), t.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&reg(&[1.0, 2.0], &[1.0, 2.0])), 0.0);
        assert_eq!(mae(&reg(&[0.0, 0.0], &[1.0, -1.0])), 1.0);
        assert!(matches!(
            RegressionEval::new(vec![0.5], vec![0.5]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn pearson_examples() {
        let t = [0.5, -1.0, 2.0, 0.0];
        let affine: Vec<f64> = t.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&reg(&affine, &t)).value - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&reg(&neg, &t)).value + 1.0).abs() < 1e-12);
        let c = pearson(&reg(&[0.3; 4], &t));
        assert_eq!(
            c,
            Correlation {
                value: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn acc_examples() {
        let s = [-3.0, -1.0, 0.0, 2.0, 3.0];
        assert_eq!(acc_k(&reg(&s, &s), AccK::Seven), 1.0);
        assert_eq!(acc_k(&reg(&[2.6, 0.0], &[3.0, 0.0]), AccK::Seven), 1.0);
        assert_eq!(acc_k(&reg(&[0.1, -0.1], &[0.0, -2.0]), AccK::TwoNonZero), 1.0);
        // zero target is non-positive, so 0.1 disagrees with it
        assert_eq!(acc_k(&reg(&[0.1, -0.1], &[0.0, -2.0]), AccK::TwoIncludeZero), 0.5);
        assert_eq!(acc_k(&reg(&[5.0, -4.0], &[2.0, -2.0]), AccK::Five), 1.0);
        assert_eq!(acc_k(&reg(&[5.0, -4.0], &[2.0, -2.0]), AccK::Seven), 0.0);
        assert_eq!(acc_k(&reg(&[1.0, 1.0], &[0.0, 0.0]), AccK::TwoNonZero), 0.0);
    }

    #[test]
    fn binning_is_idempotent() {
        for v in [-7.2, -2.5, -0.5, 0.49, 0.5, 1.5, 2.51, 9.0] {
            let once = bin_score(v, 3.0);
            assert_eq!(bin_score(once, 3.0), once);
        }
    }

    #[test]
    fn f1_examples() {
        let perfect = ClassificationEval::new(vec![0, 1, 2, 3], vec![0, 1, 2, 3]).unwrap();
        assert_eq!(
            f1_scores(&perfect),
            F1Scores {
                macro_f1: 1.0,
                weighted_f1: 1.0,
                accuracy: 1.0
            }
        );

        let all_zero = ClassificationEval::new(vec![0, 0, 0, 0], vec![0, 0, 1, 1]).unwrap();
        let f = f1_scores(&all_zero);
        assert_eq!(f.accuracy, 0.5);
        assert!((f.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.macro_f1, f.weighted_f1);

        let one = ClassificationEval::new(vec![2], vec![2]).unwrap();
        assert_eq!(
            f1_scores(&one),
            F1Scores {
                macro_f1: 1.0,
                weighted_f1: 1.0,
                accuracy: 1.0
            }
        );
        assert!(ClassificationEval::new(vec![], vec![]).is_err());
    }

    #[test]
    fn unequal_supports() {
        // class 0: tp 2, fp 1, fn 0 -> 0.8; class 1: tp 0 -> 0
        let e = ClassificationEval::new(vec![0, 0, 0], vec![0, 0, 1]).unwrap();
        let f = f1_scores(&e);
        assert!((f.macro_f1 - 0.4).abs() < 1e-15);
        assert!((f.weighted_f1 - 0.8 * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_regression_report() {
        let t = [-2.0, 0.5, 1.0, 3.0];
        let MetricReport::Regression {
            mae,
            corr,
            acc7,
            acc5,
            acc2,
            weighted_f1,
        } = MetricReport::regression(&reg(&t, &t))
        else {
            panic!()
        };
        assert_eq!((mae, corr.value, acc7, acc5), (0.0, 1.0, 1.0, 1.0));
        assert_eq!((acc2.include_zero, acc2.non_zero), (1.0, 1.0));
        assert_eq!((weighted_f1.include_zero, weighted_f1.non_zero), (1.0, 1.0));
    }
}
