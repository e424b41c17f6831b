use super::forward::ForwardTrace;
use super::{gelu, gelu_grad, ModelParams, ParamGrads, Pooling, Task};
use crate::error::{Error, Result};

/// Reverse-mode gradients of the loss with respect to every parameter.
///
/// `loss_grad[i]` is `dL/d prediction_i`: a single value for regression, or
/// one value per class probability for classification. Expert selection is
/// treated as fixed; the softmax over the selected router logits is
/// differentiated exactly.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, loss_grad: &[Vec<f64>]) -> Result<ParamGrads> {
    if trace.generation != params.generation {
        return Err(Error::InvalidState(format!(
            "trace was recorded at parameter generation {}, parameters are at {}",
            trace.generation, params.generation
        )));
    }
    if loss_grad.len() != trace.instances.len() {
        return Err(Error::Shape(format!(
            "{} loss gradients for {} traced instances",
            loss_grad.len(),
            trace.instances.len()
        )));
    }
    let cfg = &params.config;
    let t = &params.tensors;
    let out_dim = cfg.task.output_dim();
    let mut grads = ParamGrads::zeros_like(params);
    let g = &mut grads.tensors;

    for (inst, dout) in trace.instances.iter().zip(loss_grad) {
        if dout.len() != out_dim {
            return Err(Error::Shape(format!(
                "loss gradient has {} entries, head emits {out_dim}",
                dout.len()
            )));
        }
        if dout.iter().all(|v| *v == 0.0) {
            continue;
        }
        let dhead = match cfg.task {
            Task::Regression => dout.clone(),
            Task::Classification { .. } => {
                let p = &inst.output;
                let dot: f64 = dout.iter().zip(p).map(|(d, pv)| d * pv).sum();
                p.iter().zip(dout).map(|(pv, d)| pv * (d - dot)).collect()
            }
        };
        let dpooled = t.head.backprop(&inst.pooled, &dhead, &mut g.head, true);
        let pool_scale = match cfg.pooling {
            Pooling::Mean => 1.0 / trace.modalities.len() as f64,
            Pooling::Sum => 1.0,
        };

        for (slot, &m) in trace.modalities.iter().enumerate() {
            let mut de: Vec<f64> = dpooled.iter().map(|v| v * pool_scale).collect();
            for (l, tok) in inst.tokens[slot].iter().enumerate().rev() {
                // out = in + sum_s gate_s * expert_s(in)
                let mut din = de.clone();
                let mut dgates = Vec::with_capacity(tok.selected.len());
                for (s, &k) in tok.selected.iter().enumerate() {
                    let y = &tok.expert_out[s];
                    dgates.push(de.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
                    let dy: Vec<f64> = de.iter().map(|v| v * tok.gates[s]).collect();
                    let ex = &t.experts[l][k];
                    let gex = &mut g.experts[l][k];
                    let pre = &tok.hidden_pre[s];
                    let h: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
                    let dh = ex.down.backprop(&h, &dy, &mut gex.down, true);
                    let dpre: Vec<f64> = dh.iter().zip(pre).map(|(d, &p)| d * gelu_grad(p)).collect();
                    let dx = ex.up.backprop(&tok.input, &dpre, &mut gex.up, true);
                    for (a, b) in din.iter_mut().zip(&dx) {
                        *a += b;
                    }
                }
                let gdot: f64 = tok.gates.iter().zip(&dgates).map(|(a, b)| a * b).sum();
                let mut dlogits = vec![0.0; cfg.n_experts];
                for ((&k, gate), dg) in tok.selected.iter().zip(&tok.gates).zip(&dgates) {
                    dlogits[k] = gate * (dg - gdot);
                }
                let dx = t.routers[l][m].backprop(&tok.input, &dlogits, &mut g.routers[l][m], true);
                for (a, b) in din.iter_mut().zip(&dx) {
                    *a += b;
                }
                de = din;
            }
            let mult = inst.multipliers[slot];
            let draw: Vec<f64> = de.iter().map(|v| v * mult).collect();
            t.encoders[m].backprop(&inst.inputs[slot], &draw, &mut g.encoders[m], false);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::{forward, sgd_step, DataBatch, MoeConfig};
    use super::*;
    use crate::tensor::Matrix;
    use rand::Rng;

    fn setup(task: Task) -> (ModelParams, DataBatch) {
        let cfg = MoeConfig {
            input_dims: vec![3, 2],
            embed_dim: 4,
            n_experts: 4,
            top_k: 1,
            expert_hidden: 3,
            n_moe_layers: 1,
            task,
            pooling: Pooling::Mean,
        };
        let mut rng = crate::seed::rng(11);
        let b = DataBatch::new(
            [3, 2]
                .iter()
                .map(|&d| Matrix::new(2, d, (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
                .collect(),
        )
        .unwrap();
        (ModelParams::init(cfg, 0).unwrap(), b)
    }

    #[test]
    fn zero_loss_grad_gives_zero_grads() {
        let (p, b) = setup(Task::Classification { n_classes: 3 });
        let (_, trace) = forward(&p, &b, None).unwrap();
        let g = backward(&p, &trace, &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn unselected_experts_get_zero_gradient() {
        let (p, b) = setup(Task::Regression);
        let (_, trace) = forward(&p, &b, None).unwrap();
        let used = trace.experts_used();
        assert!(
            used.len() < 4,
            "with top-1 over 2 instances x 2 modalities some expert must idle"
        );
        let g = backward(&p, &trace, &[vec![1.0], vec![-0.5]]).unwrap();
        for e in 0..4 {
            let ex = &g.tensors.experts[0][e];
            let zero = ex.up.weight.iter().chain(&ex.down.weight).all(|v| *v == 0.0);
            assert_eq!(zero, !used.contains(&(0, e)), "expert {e}");
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let (mut p, b) = setup(Task::Regression);
        let (_, trace) = forward(&p, &b, None).unwrap();
        let g = backward(&p, &trace, &[vec![1.0], vec![1.0]]).unwrap();
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!(matches!(
            backward(&p, &trace, &[vec![1.0], vec![1.0]]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn loss_grad_shape_checked() {
        let (p, b) = setup(Task::Regression);
        let (_, trace) = forward(&p, &b, None).unwrap();
        assert!(backward(&p, &trace, &[vec![1.0]]).is_err());
        assert!(backward(&p, &trace, &[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
    }
}
