//! The contextual graph transformer: embeddings with sinusoidal positions, a
//! stack of graph-attention layers over the per-sequence token graph, a causal
//! transformer stack, and a vocabulary projection.

mod config;

use std::rc::Rc;

pub use crate::autograd::GatVersion;
pub use config::{ModelConfig, Variant};

use crate::autograd::{Neighborhoods, Tape, Var};
use crate::error::{invalid, shape_err, CgtError, Result};
use crate::graph::{build_graph, SimilaritySource, TokenGraph};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::text::TokenId;

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn positional_encoding(position: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(invalid!("positional encoding needs an even dimension, got {d}"));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = position as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Positional encodings for positions `0..n`, as an `n × d` matrix.
pub fn positional_table<T: Scalar>(n: usize, d: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        data.extend(positional_encoding(pos, d)?.into_iter().map(T::of));
    }
    Tensor::new(vec![n, d], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn layout(cfg: &ModelConfig) -> Vec<Slot> {
    let d = cfg.hidden_dim;
    let ff = cfg.ffn_dim;
    let mut slots = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| slots.push(Slot { name, shape, init });
    add("embed.tokens".into(), vec![cfg.vocab_size, d], Init::Normal);
    let gh = cfg.gnn_heads();
    for l in 0..cfg.active_gnn_layers() {
        add(format!("gnn.{l}.weight"), vec![d, d], Init::Normal);
        add(format!("gnn.{l}.attn"), vec![gh, 2 * (d / gh)], Init::Normal);
    }
    for l in 0..cfg.active_transformer_layers() {
        let p = format!("transformer.{l}");
        for w in ["wq", "wk", "wv", "wo"] {
            add(format!("{p}.{w}"), vec![d, d], Init::Normal);
        }
        add(format!("{p}.ln1.gain"), vec![d], Init::Ones);
        add(format!("{p}.ln1.bias"), vec![d], Init::Zeros);
        add(format!("{p}.ffn.w1"), vec![d, ff], Init::Normal);
        add(format!("{p}.ffn.b1"), vec![ff], Init::Zeros);
        add(format!("{p}.ffn.w2"), vec![ff, d], Init::Normal);
        add(format!("{p}.ffn.b2"), vec![d], Init::Zeros);
        add(format!("{p}.ln2.gain"), vec![d], Init::Ones);
        add(format!("{p}.ln2.bias"), vec![d], Init::Zeros);
    }
    if !cfg.tie_lm_head {
        add("head.weight".into(), vec![d, cfg.vocab_size], Init::Normal);
    }
    slots
}

/// Closed-form parameter counts per block.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamCount {
    pub embeddings: usize,
    pub gnn_per_layer: usize,
    pub gnn_total: usize,
    /// Attention and feed-forward weights of one transformer layer, excluding
    /// its layer norms.
    pub transformer_per_layer: usize,
    pub transformer_total: usize,
    pub layer_norms: usize,
    pub lm_head: usize,
    pub total: usize,
}

pub fn count_params(cfg: &ModelConfig) -> ParamCount {
    let d = cfg.hidden_dim;
    let v = cfg.vocab_size;
    let ff = cfg.ffn_dim;
    let embeddings = v * d;
    // W plus one [a_src ‖ a_dst] vector per head; heads always tile d.
    let gnn_per_layer = d * d + 2 * d;
    let gnn_total = gnn_per_layer * cfg.active_gnn_layers();
    let transformer_per_layer = 4 * d * d + d * ff + ff + ff * d + d;
    let lt = cfg.active_transformer_layers();
    let transformer_total = transformer_per_layer * lt;
    let layer_norms = 4 * d * lt;
    let lm_head = if cfg.tie_lm_head { 0 } else { d * v };
    ParamCount {
        embeddings,
        gnn_per_layer,
        gnn_total,
        transformer_per_layer,
        transformer_total,
        layer_norms,
        lm_head,
        total: embeddings + gnn_total + transformer_total + layer_norms + lm_head,
    }
}

#[derive(Clone, Debug)]
struct GnnLayer {
    weight: ParamId,
    attn: ParamId,
}

#[derive(Clone, Debug)]
struct TransformerLayer {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln1: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct CgtModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    embed: ParamId,
    gnn: Vec<GnnLayer>,
    transformer: Vec<TransformerLayer>,
    head: Option<ParamId>,
}

/// Everything a forward pass exposes to the losses.
pub struct ForwardOutput {
    pub h0: Var,
    pub logits: Var,
    /// Output of the GNN stack (the initial states when the stack is empty).
    pub h_gnn: Option<Var>,
    pub h_trans: Option<Var>,
    /// `[layer][head]` edge-attention coefficients over the neighbourhood
    /// layout in `neighborhoods`.
    pub gnn_attention: Vec<Vec<Var>>,
    /// `[layer][head]` `n × n` attention matrices.
    pub transformer_attention: Vec<Vec<Var>>,
    pub graph: Option<TokenGraph>,
    pub neighborhoods: Option<Rc<Neighborhoods>>,
    /// Position of each graph edge inside the neighbourhood layout.
    pub edge_slots: Vec<usize>,
}

impl<T: Scalar> CgtModel<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed, config.init_std);
        let mut params = ParamStore::new();
        for slot in layout(&config) {
            let t = match slot.init {
                Init::Normal => init.normal(slot.shape),
                Init::Zeros => Tensor::zeros(slot.shape),
                Init::Ones => Tensor::filled(slot.shape, T::one()),
            };
            params.insert(slot.name, t, true)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let slots = layout(&config);
        if slots.len() != params.len() {
            return Err(shape_err!("config implies {} parameters, got {}", slots.len(), params.len()));
        }
        for (slot, p) in slots.iter().zip(params.iter()) {
            if slot.name != p.name || slot.shape != p.tensor.shape() {
                return Err(shape_err!(
                    "expected parameter {} {:?}, found {} {:?}",
                    slot.name,
                    slot.shape,
                    p.name,
                    p.tensor.shape()
                ));
            }
        }
        let id = |name: String| params.id(&name).ok_or_else(|| shape_err!("missing parameter {name}"));
        let embed = id("embed.tokens".into())?;
        let gnn = (0..config.active_gnn_layers())
            .map(|l| Ok(GnnLayer { weight: id(format!("gnn.{l}.weight"))?, attn: id(format!("gnn.{l}.attn"))? }))
            .collect::<Result<Vec<_>>>()?;
        let transformer = (0..config.active_transformer_layers())
            .map(|l| {
                let p = format!("transformer.{l}");
                Ok(TransformerLayer {
                    wq: id(format!("{p}.wq"))?,
                    wk: id(format!("{p}.wk"))?,
                    wv: id(format!("{p}.wv"))?,
                    wo: id(format!("{p}.wo"))?,
                    ln1: (id(format!("{p}.ln1.gain"))?, id(format!("{p}.ln1.bias"))?),
                    w1: id(format!("{p}.ffn.w1"))?,
                    b1: id(format!("{p}.ffn.b1"))?,
                    w2: id(format!("{p}.ffn.w2"))?,
                    b2: id(format!("{p}.ffn.b2"))?,
                    ln2: (id(format!("{p}.ln2.gain"))?, id(format!("{p}.ln2.bias"))?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = if config.tie_lm_head { None } else { Some(id("head.weight".into())?) };
        Ok(CgtModel { config, params, embed, gnn, transformer, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn embedding_table(&self) -> &Tensor<T> {
        &self.params.get(self.embed).tensor
    }

    pub fn cast<U: Scalar>(&self) -> CgtModel<U> {
        CgtModel {
            config: self.config.clone(),
            params: self.params.cast(),
            embed: self.embed,
            gnn: self.gnn.clone(),
            transformer: self.transformer.clone(),
            head: self.head,
        }
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(invalid!("empty token sequence"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(invalid!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            ));
        }
        tokens
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t >= self.config.vocab_size {
                    Err(invalid!("token id {t} out of range for vocab {}", self.config.vocab_size))
                } else {
                    Ok(t)
                }
            })
            .collect()
    }

    /// `H0 = E[tokens] + P[0..n)` as a plain matrix.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (h0, _) = self.embed_on(&mut tape, &self.params, tokens)?;
        Ok(tape.value(h0).clone())
    }

    fn embed_on<'p>(&self, tape: &mut Tape<'p, T>, ps: &'p ParamStore<T>, tokens: &[TokenId]) -> Result<(Var, Var)> {
        let ids = self.check_tokens(tokens)?;
        let table = tape.param(ps, self.embed);
        let e = tape.gather_rows(table, &ids)?;
        let pe = tape.constant(positional_table(ids.len(), self.config.hidden_dim)?);
        Ok((tape.add(e, pe)?, e))
    }

    fn gat_on<'p>(&self, tape: &mut Tape<'p, T>, ps: &'p ParamStore<T>, layer: usize, h: Var, nb: &Rc<Neighborhoods>) -> Result<(Var, Vec<Var>)> {
        let l = &self.gnn[layer];
        let w = tape.param(ps, l.weight);
        let attn = tape.param(ps, l.attn);
        let wh = tape.matmul(h, w)?;
        let heads = self.config.gnn_heads();
        let dk = self.config.hidden_dim / heads;
        let slope = T::of(self.config.leaky_slope);
        let mut outs = Vec::with_capacity(heads);
        let mut alphas = Vec::with_capacity(heads);
        for head in 0..heads {
            let wh_h = if heads == 1 { wh } else { tape.slice_cols(wh, head * dk, dk)? };
            let alpha = tape.edge_attention(wh_h, attn, head, nb, self.config.gat_version, slope)?;
            outs.push(tape.edge_aggregate(alpha, wh_h, nb)?);
            alphas.push(alpha);
        }
        let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let act = tape.relu(merged);
        let out = if self.config.gnn_residual { tape.add(h, act)? } else { act };
        Ok((out, alphas))
    }

    fn transformer_on<'p>(&self, tape: &mut Tape<'p, T>, ps: &'p ParamStore<T>, layer: usize, h: Var, causal: bool) -> Result<(Var, Vec<Var>)> {
        let l = &self.transformer[layer];
        let p = |tape: &mut Tape<'p, T>, id| tape.param(ps, id);
        let (wq, wk, wv, wo) = (p(tape, l.wq), p(tape, l.wk), p(tape, l.wv), p(tape, l.wo));
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let heads = self.config.heads;
        let dk = self.config.head_dim();
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let mut ctxs = Vec::with_capacity(heads);
        let mut attn = Vec::with_capacity(heads);
        for head in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, head * dk, dk)?,
                    tape.slice_cols(k, head * dk, dk)?,
                    tape.slice_cols(v, head * dk, dk)?,
                )
            };
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores, causal)?;
            ctxs.push(tape.matmul(probs, vh)?);
            attn.push(probs);
        }
        let ctx = if heads == 1 { ctxs[0] } else { tape.concat_cols(&ctxs)? };
        let mh = tape.matmul(ctx, wo)?;
        let res1 = tape.add(h, mh)?;
        let (g1, b1) = (p(tape, l.ln1.0), p(tape, l.ln1.1));
        let eps = T::of(self.config.layer_norm_eps);
        let z = tape.layer_norm(res1, g1, b1, eps)?;
        let (w1, bias1, w2, bias2) = (p(tape, l.w1), p(tape, l.b1), p(tape, l.w2), p(tape, l.b2));
        let f = tape.matmul(z, w1)?;
        let f = tape.add_row(f, bias1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, bias2)?;
        let res2 = tape.add(z, f)?;
        let (g2, b2) = (p(tape, l.ln2.0), p(tape, l.ln2.1));
        Ok((tape.layer_norm(res2, g2, b2, eps)?, attn))
    }

    /// Builds the token graph this model would use for `tokens`.
    pub fn graph_for(&self, tokens: &[TokenId]) -> Result<TokenGraph> {
        let mut tape = Tape::new();
        let (h0, e) = self.embed_on(&mut tape, &self.params, tokens)?;
        let src = match self.config.graph.similarity {
            SimilaritySource::Hidden => h0,
            SimilaritySource::Embedding => e,
        };
        build_graph(tape.value(src), &self.config.graph)
    }

    /// Records a full forward pass. When `graph` is given it replaces the
    /// dynamically built one (its size must match the sequence).
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, T>, tokens: &[TokenId], graph: Option<&TokenGraph>) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.params, tokens, graph)
    }

    /// `forward` against an external parameter store with this model's
    /// layout (used to evaluate perturbed copies).
    pub fn forward_with<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        ps: &'p ParamStore<T>,
        tokens: &[TokenId],
        graph: Option<&TokenGraph>,
    ) -> Result<ForwardOutput> {
        if ps.len() != self.params.len() {
            return Err(shape_err!("parameter store has {} entries, model expects {}", ps.len(), self.params.len()));
        }
        let (h0, e) = self.embed_on(tape, ps, tokens)?;
        let n = tokens.len();
        let mut h = h0;
        let mut out_graph = None;
        let mut nb_out = None;
        let mut edge_slots = Vec::new();
        let mut gnn_attention = Vec::new();
        let mut h_gnn = None;

        if self.config.variant.uses_gnn() {
            if !self.gnn.is_empty() {
                let g = match graph {
                    Some(g) if g.n == n => g.clone(),
                    Some(g) => return Err(shape_err!("graph has {} nodes for {n} tokens", g.n)),
                    None => {
                        let src = match self.config.graph.similarity {
                            SimilaritySource::Hidden => h0,
                            SimilaritySource::Embedding => e,
                        };
                        build_graph(tape.value(src), &self.config.graph)?
                    }
                };
                let (nb, slots) = g.neighborhoods(self.config.edge_weight_bias);
                let nb = Rc::new(nb);
                for layer in 0..self.gnn.len() {
                    let (next, alphas) = self.gat_on(tape, ps, layer, h, &nb)?;
                    h = next;
                    gnn_attention.push(alphas);
                }
                edge_slots = slots;
                nb_out = Some(nb);
                out_graph = Some(g);
            }
            h_gnn = Some(h);
        }

        let mut transformer_attention = Vec::new();
        let mut h_trans = None;
        if self.config.variant.uses_transformer() {
            for layer in 0..self.transformer.len() {
                let (next, attn) = self.transformer_on(tape, ps, layer, h, self.config.causal)?;
                h = next;
                transformer_attention.push(attn);
            }
            h_trans = Some(h);
        }

        let table = tape.param(ps, self.embed);
        let logits = match self.head {
            None => tape.matmul_bt(h, table)?,
            Some(id) => {
                let w = tape.param(ps, id);
                tape.matmul(h, w)?
            }
        };
        Ok(ForwardOutput {
            h0,
            logits,
            h_gnn,
            h_trans,
            gnn_attention,
            transformer_attention,
            graph: out_graph,
            neighborhoods: nb_out,
            edge_slots,
        })
    }

    /// `n × |V|` logits for a token sequence.
    pub fn logits(&self, tokens: &[TokenId]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, tokens, None)?;
        let logits = tape.value(out.logits).clone();
        logits.ensure_finite("logits")?;
        Ok(logits)
    }

    /// Runs one graph-attention layer on `h` over `graph`. Returns the new
    /// states and, per head, the attention coefficients grouped by node as
    /// `(neighbour, α)` pairs (self-loop included).
    pub fn gat_layer(&self, layer: usize, h: &Tensor<T>, graph: &TokenGraph) -> Result<(Tensor<T>, Vec<Vec<Vec<(usize, T)>>>)> {
        if layer >= self.gnn.len() {
            return Err(invalid!("no GNN layer {layer}"));
        }
        if graph.n != h.rows() {
            return Err(shape_err!("graph has {} nodes, input has {} rows", graph.n, h.rows()));
        }
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (nb, _) = graph.neighborhoods(self.config.edge_weight_bias);
        let nb = Rc::new(nb);
        let (out, alphas) = self.gat_on(&mut tape, &self.params, layer, hv, &nb)?;
        let per_head = alphas
            .iter()
            .map(|&a| {
                let vals = tape.value(a).data();
                (0..nb.node_count())
                    .map(|i| nb.range(i).map(|e| (nb.targets[e], vals[e])).collect())
                    .collect()
            })
            .collect();
        Ok((tape.value(out).clone(), per_head))
    }

    /// Runs one transformer block. Returns the output and each head's
    /// attention matrix.
    pub fn transformer_layer(&self, layer: usize, h: &Tensor<T>, causal: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if layer >= self.transformer.len() {
            return Err(invalid!("no transformer layer {layer}"));
        }
        let (_, d) = h.dims2()?;
        if d != self.config.hidden_dim {
            return Err(shape_err!("input width {d} vs hidden_dim {}", self.config.hidden_dim));
        }
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (out, attn) = self.transformer_on(&mut tape, &self.params, layer, hv, causal)?;
        Ok((tape.value(out).clone(), attn.iter().map(|&a| tape.value(a).clone()).collect()))
    }

    pub fn count_params(&self) -> ParamCount {
        count_params(&self.config)
    }
}

impl CgtModel<f32> {
    /// Replaces all parameters; used when loading checkpoints.
    pub fn with_params(config: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        for p in params.iter() {
            if !p.tensor.is_finite() {
                return Err(CgtError::NonFinite(format!("parameter {} is not finite", p.name)));
            }
        }
        Self::from_params(config, params)
    }
}
