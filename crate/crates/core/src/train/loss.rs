//! The composite objective: next-token cross-entropy plus graph, attention
//! entropy and GNN/transformer consistency regularizers.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{invalid, shape_err, CgtError, Result};
use crate::graph::asymmetry_penalty;
use crate::model::{CgtModel, ForwardOutput};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};
use crate::text::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub graph: f64,
    pub attention: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { graph: 0.1, attention: 0.05, consistency: 0.02 }
    }
}

impl LossWeights {
    pub fn lm_only() -> Self {
        LossWeights { graph: 0.0, attention: 0.0, consistency: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub graph: f64,
    pub attention: f64,
    pub consistency: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the weighted sum from the components.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.lm + w.graph * self.graph + w.attention * self.attention + w.consistency * self.consistency
    }

    pub(crate) fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.lm += s * other.lm;
        self.graph += s * other.graph;
        self.attention += s * other.attention;
        self.consistency += s * other.consistency;
        self.total += s * other.total;
    }
}

/// Weighted sum of the four components.
pub fn total_loss(lm: f64, graph: f64, attention: f64, consistency: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("lm", lm), ("graph", graph), ("attention", attention), ("consistency", consistency)] {
        if !v.is_finite() {
            return Err(CgtError::NonFinite(format!("{name} loss is {v}")));
        }
    }
    let mut b = LossBreakdown { lm, graph, attention, consistency, total: 0.0 };
    b.total = b.recombine(w);
    Ok(b)
}

/// Mean token cross-entropy over positions whose target is `Some`.
pub fn lm_loss<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let v = tape.cross_entropy(l, targets)?;
    Ok(tape.scalar(v).f64())
}

/// `mean_heads(−Σ_{edges} ln α) + ½‖A − Aᵀ‖²`. `edge_alphas[h]` holds head
/// `h`'s coefficient on every graph edge.
pub fn graph_loss(edge_alphas: &[Vec<f64>], adjacency: &Tensor<f64>) -> Result<f64> {
    let (n, m) = adjacency.dims2()?;
    if n != m {
        return Err(shape_err!("adjacency must be square, got {n}x{m}"));
    }
    let mut nll = 0.0;
    for head in edge_alphas {
        for &a in head {
            if !(a > 0.0) {
                return Err(invalid!("attention weight {a} is not positive on an existing edge"));
            }
            nll -= a.ln();
        }
    }
    let heads = edge_alphas.len().max(1) as f64;
    Ok(nll / heads + asymmetry_penalty(adjacency))
}

/// `−Σ_layers Σ_heads mean_row_entropy(attn)` with natural logs.
pub fn attention_entropy_loss(attn: &[Vec<Tensor<f64>>]) -> Result<f64> {
    let mut total = 0.0;
    for layer in attn {
        for head in layer {
            let (rows, _) = head.dims2()?;
            let mut sum = 0.0;
            for i in 0..rows {
                let row = head.row(i);
                let mass: f64 = row.iter().sum();
                if (mass - 1.0).abs() > 1e-4 || row.iter().any(|&p| p < 0.0) {
                    return Err(invalid!("attention row {i} is not a distribution (sums to {mass})"));
                }
                sum -= row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
            }
            if rows > 0 {
                total -= sum / rows as f64;
            }
        }
    }
    Ok(total)
}

/// `‖a − b‖²` summed over all entries.
pub fn consistency_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("consistency loss on {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum())
}

/// Recorded loss terms for one sequence.
pub struct LossVars {
    pub total: Var,
    pub lm: Var,
    pub graph: Option<Var>,
    pub attention: Option<Var>,
    pub consistency: Option<Var>,
    pub breakdown: LossBreakdown,
    /// `½‖A − Aᵀ‖²` of the graph used (a constant of the parameters).
    pub asymmetry: f64,
    pub forward: ForwardOutput,
}

/// Next-token inputs and targets for a window of `n + 1` tokens.
pub fn shift_targets(window: &[TokenId]) -> Result<(&[TokenId], Vec<Option<usize>>)> {
    if window.len() < 2 {
        return Err(invalid!("a training window needs at least 2 tokens"));
    }
    let inputs = &window[..window.len() - 1];
    let targets = window[1..].iter().map(|&t| Some(t as usize)).collect();
    Ok((inputs, targets))
}

/// Records the composite loss of one sequence on `tape`. `graph` freezes the
/// token graph (otherwise it is rebuilt from the current embeddings).
pub fn record_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &CgtModel<T>,
    params: &'p ParamStore<T>,
    inputs: &[TokenId],
    targets: &[Option<usize>],
    weights: &LossWeights,
    graph: Option<&crate::graph::TokenGraph>,
) -> Result<LossVars> {
    if targets.len() != inputs.len() {
        return Err(shape_err!("{} targets for {} inputs", targets.len(), inputs.len()));
    }
    let out = model.forward_with(tape, params, inputs, graph)?;
    let lm = tape.cross_entropy(out.logits, targets)?;
    let mut total = lm;
    let mut breakdown = LossBreakdown { lm: tape.scalar(lm).f64(), ..Default::default() };

    let mut asymmetry = 0.0;
    let mut graph_var = None;
    if let (Some(last), Some(g)) = (out.gnn_attention.last(), out.graph.as_ref()) {
        asymmetry = g.asymmetry();
        let mut sum = None;
        for &alpha in last {
            let v = tape.neg_log_select(alpha, &out.edge_slots)?;
            sum = Some(match sum {
                None => v,
                Some(s) => tape.add(s, v)?,
            });
        }
        let mean = tape.scale(sum.expect("at least one head"), T::of(1.0 / last.len() as f64));
        let sym = tape.constant(Tensor::scalar(T::of(asymmetry)));
        let g = tape.add(mean, sym)?;
        breakdown.graph = tape.scalar(g).f64();
        graph_var = Some(g);
    }

    let mut attention_var = None;
    if !out.transformer_attention.is_empty() {
        let mut sum: Option<Var> = None;
        for &p in out.transformer_attention.iter().flatten() {
            let e = tape.row_entropy_mean(p)?;
            sum = Some(match sum {
                None => e,
                Some(s) => tape.add(s, e)?,
            });
        }
        let neg = tape.scale(sum.expect("at least one head"), -T::one());
        breakdown.attention = tape.scalar(neg).f64();
        attention_var = Some(neg);
    }

    let mut consistency_var = None;
    if let (Some(hg), Some(ht)) = (out.h_gnn, out.h_trans) {
        let d = tape.sub(hg, ht)?;
        let c = tape.sum_squares(d);
        breakdown.consistency = tape.scalar(c).f64();
        consistency_var = Some(c);
    }

    for (var, w) in [(graph_var, weights.graph), (attention_var, weights.attention), (consistency_var, weights.consistency)] {
        if let Some(v) = var {
            if w != 0.0 {
                let s = tape.scale(v, T::of(w));
                total = tape.add(total, s)?;
            }
        }
    }
    breakdown = total_loss(breakdown.lm, breakdown.graph, breakdown.attention, breakdown.consistency, weights)?;
    Ok(LossVars {
        total,
        lm,
        graph: graph_var,
        attention: attention_var,
        consistency: consistency_var,
        breakdown,
        asymmetry,
        forward: out,
    })
}
