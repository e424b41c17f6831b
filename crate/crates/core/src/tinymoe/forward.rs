use super::{gelu, softmax, DataBatch, ModelParams, Pooling, Task};
use crate::error::{Error, Result};

/// One modality token passing through one MoE layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TokenTrace {
    pub input: Vec<f64>,
    pub selected: Vec<usize>,
    pub gates: Vec<f64>,
    pub hidden_pre: Vec<Vec<f64>>,
    pub expert_out: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct InstanceTrace {
    /// Raw features of each used modality.
    pub inputs: Vec<Vec<f64>>,
    /// Multiplier applied to each used modality's encoder output.
    pub multipliers: Vec<f64>,
    /// `[used modality][layer]`.
    pub tokens: Vec<Vec<TokenTrace>>,
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
}

/// Everything [`super::backward`] needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub(crate) generation: u64,
    pub(crate) modalities: Vec<usize>,
    pub(crate) instances: Vec<InstanceTrace>,
}

impl ForwardTrace {
    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    /// Modality indices that took part in the pass, in pooling order.
    pub fn modalities(&self) -> &[usize] {
        &self.modalities
    }

    /// Experts selected for a modality token at one layer; `slot` indexes
    /// [`ForwardTrace::modalities`].
    pub fn selected_experts(&self, instance: usize, slot: usize, layer: usize) -> &[usize] {
        &self.instances[instance].tokens[slot][layer].selected
    }

    pub fn gate_weights(&self, instance: usize, slot: usize, layer: usize) -> &[f64] {
        &self.instances[instance].tokens[slot][layer].gates
    }

    /// Pooled fusion vector of an instance.
    pub fn pooled(&self, instance: usize) -> &[f64] {
        &self.instances[instance].pooled
    }

    /// Number of `(modality, layer, expert)` activations of an instance.
    pub fn activation_count(&self, instance: usize) -> usize {
        self.instances[instance]
            .tokens
            .iter()
            .flatten()
            .map(|t| t.selected.len())
            .sum()
    }

    /// Every distinct `(layer, expert)` pair that was selected anywhere.
    pub fn experts_used(&self) -> Vec<(usize, usize)> {
        let mut used = Vec::new();
        for inst in &self.instances {
            for token_layers in &inst.tokens {
                for (l, t) in token_layers.iter().enumerate() {
                    used.extend(t.selected.iter().map(|&e| (l, e)));
                }
            }
        }
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Indices of the `k` largest logits, largest first; lower index wins ties.
pub(crate) fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_finite(values: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { layer: layer() })
    }
}

/// Multimodal forward pass over every modality.
///
/// `modality_weights`, when given, holds one row per instance with one
/// multiplier per modality, applied to that modality's encoder output.
pub fn forward(
    params: &ModelParams,
    batch: &DataBatch,
    modality_weights: Option<&[Vec<f64>]>,
) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
    let all: Vec<usize> = (0..params.config.n_modalities()).collect();
    forward_modalities(params, batch, &all, modality_weights)
}

/// The same network evaluated on one modality's stream only.
pub fn unimodal_forward(params: &ModelParams, batch: &DataBatch, modality: usize) -> Result<Vec<Vec<f64>>> {
    let m = params.config.n_modalities();
    if modality >= m {
        return Err(Error::Range {
            what: "modalities",
            index: modality,
            len: m,
        });
    }
    forward_modalities(params, batch, &[modality], None).map(|(p, _)| p)
}

/// Predictions only.
pub fn predict(
    params: &ModelParams,
    batch: &DataBatch,
    modalities: &[usize],
    modality_weights: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>> {
    forward_modalities(params, batch, modalities, modality_weights).map(|(p, _)| p)
}

/// Forward pass over a chosen subset of modalities.
pub fn forward_modalities(
    params: &ModelParams,
    batch: &DataBatch,
    modalities: &[usize],
    modality_weights: Option<&[Vec<f64>]>,
) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
    let cfg = &params.config;
    let t = &params.tensors;
    if batch.n_modalities() != cfg.n_modalities() {
        return Err(Error::Shape(format!(
            "batch has {} modalities, model expects {}",
            batch.n_modalities(),
            cfg.n_modalities()
        )));
    }
    for (m, &dim) in cfg.input_dims.iter().enumerate() {
        if batch.modality(m).cols() != dim {
            return Err(Error::Shape(format!(
                "modality {m} has {} features, model expects {dim}",
                batch.modality(m).cols()
            )));
        }
    }
    if modalities.is_empty() {
        return Err(Error::InvalidInput("forward needs at least one modality".into()));
    }
    if let Some(&bad) = modalities.iter().find(|&&m| m >= cfg.n_modalities()) {
        return Err(Error::Range {
            what: "modalities",
            index: bad,
            len: cfg.n_modalities(),
        });
    }
    let n = batch.n_instances();
    if let Some(w) = modality_weights {
        if w.len() != n || w.iter().any(|row| row.len() != cfg.n_modalities()) {
            return Err(Error::Shape(format!(
                "modality weights must be {n}x{}",
                cfg.n_modalities()
            )));
        }
    }

    let mut outputs = Vec::with_capacity(n);
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let mut inputs = Vec::with_capacity(modalities.len());
        let mut multipliers = Vec::with_capacity(modalities.len());
        let mut tokens = Vec::with_capacity(modalities.len());
        let mut pooled = vec![0.0; cfg.embed_dim];
        for &m in modalities {
            let x = batch.modality(m).row(i);
            let mut e = t.encoders[m].apply(x);
            check_finite(&e, || format!("encoder[{m}]"))?;
            let mult = modality_weights.map_or(1.0, |w| w[i][m]);
            if modality_weights.is_some() {
                for v in &mut e {
                    *v *= mult;
                }
            }
            let mut layers = Vec::with_capacity(cfg.n_moe_layers);
            for l in 0..cfg.n_moe_layers {
                let logits = t.routers[l][m].apply(&e);
                let selected = top_k(&logits, cfg.top_k);
                let sel_logits: Vec<f64> = selected.iter().map(|&k| logits[k]).collect();
                let gates = softmax(&sel_logits);
                let mut next = e.clone();
                let mut hidden_pre = Vec::with_capacity(selected.len());
                let mut expert_out = Vec::with_capacity(selected.len());
                for (&k, &g) in selected.iter().zip(&gates) {
                    let ex = &t.experts[l][k];
                    let pre = ex.up.apply(&e);
                    let h: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
                    let y = ex.down.apply(&h);
                    for (nv, yv) in next.iter_mut().zip(&y) {
                        *nv += g * yv;
                    }
                    hidden_pre.push(pre);
                    expert_out.push(y);
                }
                check_finite(&next, || format!("moe[{l}] (modality {m})"))?;
                layers.push(TokenTrace {
                    input: e,
                    selected,
                    gates,
                    hidden_pre,
                    expert_out,
                });
                e = next;
            }
            for (p, v) in pooled.iter_mut().zip(&e) {
                *p += v;
            }
            inputs.push(x.to_vec());
            multipliers.push(mult);
            tokens.push(layers);
        }
        if cfg.pooling == Pooling::Mean {
            let count = modalities.len() as f64;
            for p in &mut pooled {
                *p /= count;
            }
        }
        let head = t.head.apply(&pooled);
        let output = match cfg.task {
            Task::Regression => head,
            Task::Classification { .. } => softmax(&head),
        };
        check_finite(&output, || "head".to_string())?;
        outputs.push(output.clone());
        instances.push(InstanceTrace {
            inputs,
            multipliers,
            tokens,
            pooled,
            output,
        });
    }
    Ok((
        outputs,
        ForwardTrace {
            generation: params.generation,
            modalities: modalities.to_vec(),
            instances,
        },
    ))
}
