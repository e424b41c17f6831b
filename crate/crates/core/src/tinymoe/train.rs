use rand::Rng;

use super::forward::forward;
use super::{backward, DataBatch, ModelParams, ParamGrads, Task};
use crate::error::{Error, Result};
use crate::seed;

/// Targets for a batch, matching the model's task.
#[derive(Debug, Clone, Copy)]
pub enum LossTargets<'a> {
    Regression(&'a [f64]),
    Classification(&'a [usize]),
}

impl LossTargets<'_> {
    fn len(&self) -> usize {
        match self {
            LossTargets::Regression(t) => t.len(),
            LossTargets::Classification(t) => t.len(),
        }
    }
}

/// Smallest probability fed to the log in the cross-entropy.
const PROB_FLOOR: f64 = 1e-300;

/// Batch-mean loss and its gradient with respect to each prediction.
///
/// Regression uses mean squared error; classification uses cross-entropy on
/// the predicted probabilities.
pub fn loss_and_grad(task: Task, predictions: &[Vec<f64>], targets: LossTargets<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = predictions.len();
    if n == 0 || targets.len() != n {
        return Err(Error::Shape(format!("{n} predictions for {} targets", targets.len())));
    }
    let scale = 1.0 / n as f64;
    match (task, targets) {
        (Task::Regression, LossTargets::Regression(t)) => {
            let mut loss = 0.0;
            let grads = predictions
                .iter()
                .zip(t)
                .map(|(p, y)| {
                    let r = p[0] - y;
                    loss += r * r;
                    vec![2.0 * r * scale]
                })
                .collect();
            Ok((loss * scale, grads))
        }
        (Task::Classification { n_classes }, LossTargets::Classification(t)) => {
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(n);
            for (p, &y) in predictions.iter().zip(t) {
                if y >= n_classes {
                    return Err(Error::Range {
                        what: "classes",
                        index: y,
                        len: n_classes,
                    });
                }
                let py = p[y].max(PROB_FLOOR);
                loss -= py.ln();
                let mut g = vec![0.0; n_classes];
                g[y] = -scale / py;
                grads.push(g);
            }
            Ok((loss * scale, grads))
        }
        _ => Err(Error::InvalidInput("loss targets do not match the model task".into())),
    }
}

/// `params ← params − lr · grads`.
pub fn sgd_step(params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidInput(format!(
            "learning rate {lr} must be finite and >= 0"
        )));
    }
    if grads.tensors.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NumericOverflow {
            layer: "gradients".into(),
        });
    }
    if grads.tensors.shapes() != params.tensors().shapes() {
        return Err(Error::Shape("gradient layout differs from the parameters".into()));
    }
    for (p, g) in params
        .tensors_mut()
        .slices_mut()
        .into_iter()
        .zip(grads.tensors.slices())
    {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

fn batch_loss(
    params: &ModelParams,
    batch: &DataBatch,
    weights: Option<&[Vec<f64>]>,
    targets: LossTargets<'_>,
) -> Result<f64> {
    let (preds, _) = forward(params, batch, weights)?;
    loss_and_grad(params.config().task, &preds, targets).map(|(l, _)| l)
}

/// Compares analytic gradients against central finite differences on
/// `n_probes` parameters drawn uniformly (seeded). Returns the largest
/// relative error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    params: &ModelParams,
    batch: &DataBatch,
    targets: LossTargets<'_>,
    n_probes: usize,
    epsilon: f64,
    probe_seed: u64,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::InvalidInput("grad_check needs at least one probe".into()));
    }
    let total = params.tensors().n_scalars();
    let mut rng = seed::rng(seed::derive(probe_seed, seed::GRAD_PROBES));
    let indices: Vec<usize> = (0..n_probes).map(|_| rng.random_range(0..total)).collect();
    grad_check_indices(params, batch, None, targets, &indices, epsilon)
}

/// [`grad_check`] on an explicit list of flat parameter indices.
pub fn grad_check_indices(
    params: &ModelParams,
    batch: &DataBatch,
    weights: Option<&[Vec<f64>]>,
    targets: LossTargets<'_>,
    indices: &[usize],
    epsilon: f64,
) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} must be positive")));
    }
    let (preds, trace) = forward(params, batch, weights)?;
    let (_, dpred) = loss_and_grad(params.config().task, &preds, targets)?;
    let analytic = backward(params, &trace, &dpred)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for &idx in indices {
        let original = params.tensors().get_flat(idx).ok_or(Error::Range {
            what: "model parameters",
            index: idx,
            len: params.tensors().n_scalars(),
        })?;
        probe.tensors_mut().set_flat(idx, original + epsilon)?;
        let up = batch_loss(&probe, batch, weights, targets)?;
        probe.tensors_mut().set_flat(idx, original - epsilon)?;
        let down = batch_loss(&probe, batch, weights, targets)?;
        probe.tensors_mut().set_flat(idx, original)?;

        let numeric = (up - down) / (2.0 * epsilon);
        let exact = analytic.tensors.get_flat(idx).unwrap_or(0.0);
        let denom = exact.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((exact - numeric).abs() / denom);
    }
    Ok(worst)
}
