//! Dynamic token graphs.
//!
//! Each sequence gets its own graph over token positions with three edge
//! kinds: sequential neighbours (weight 1), short skips weighted by
//! `exp(-decay · offset)` when that weight clears a threshold, and semantic
//! links between positions 3..=10 apart whose hidden states have cosine
//! similarity above a threshold. The raw adjacency is then symmetrically
//! normalized as `D^{-1/2} A D^{-1/2}`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autograd::Neighborhoods;
use crate::error::{invalid, CgtError, Result};
use crate::tensor::{cosine, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    /// Token embedding plus positional encoding.
    Hidden,
    /// Token embedding only.
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub skip_decay: f64,
    pub skip_threshold: f64,
    pub skip_offsets: Vec<usize>,
    pub sem_threshold: f64,
    pub sem_min_offset: usize,
    pub sem_max_offset: usize,
    pub strict_causal: bool,
    pub similarity: SimilaritySource,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            skip_decay: 0.5,
            skip_threshold: 0.3,
            skip_offsets: vec![2, 3],
            sem_threshold: 0.7,
            sem_min_offset: 3,
            sem_max_offset: 10,
            strict_causal: false,
            similarity: SimilaritySource::Hidden,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.skip_threshold) || !unit(self.sem_threshold) {
            return Err(CgtError::Config("graph thresholds must lie in (0, 1)".into()));
        }
        if !(self.skip_decay > 0.0) {
            return Err(CgtError::Config("skip_decay must be positive".into()));
        }
        if self.skip_offsets.is_empty() || self.skip_offsets.contains(&0) {
            return Err(CgtError::Config("skip_offsets must be non-empty and positive".into()));
        }
        if self.sem_min_offset == 0 || self.sem_min_offset > self.sem_max_offset {
            return Err(CgtError::Config("semantic window must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }

    /// Largest offset any rule can connect.
    pub fn max_offset(&self) -> usize {
        let skip = self.skip_offsets.iter().copied().max().unwrap_or(1);
        skip.max(self.sem_max_offset).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Sequential,
    Skip,
    Semantic,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Sequential => "sequential",
            EdgeKind::Skip => "skip",
            EdgeKind::Semantic => "semantic",
        }
    }

    fn dot_style(self) -> &'static str {
        match self {
            EdgeKind::Sequential => "style=solid, color=red",
            EdgeKind::Skip => "style=dotted, color=green",
            EdgeKind::Semantic => "style=dashed, color=orange",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenGraph {
    pub n: usize,
    /// Directed edges sorted by `(src, dst)`.
    pub edges: Vec<Edge>,
    /// Raw symmetric weights, `n × n`.
    pub adjacency: Tensor<f64>,
    pub normalized_adjacency: Tensor<f64>,
}

/// Decides the edge (if any) between positions `i < j` given their
/// similarity. Priority is sequential, then semantic, then skip.
fn classify(cfg: &GraphConfig, offset: usize, similarity: impl FnOnce() -> f64) -> Option<(f64, EdgeKind)> {
    if offset == 1 {
        return Some((1.0, EdgeKind::Sequential));
    }
    if (cfg.sem_min_offset..=cfg.sem_max_offset).contains(&offset) {
        let s = similarity();
        if s > cfg.sem_threshold {
            return Some((s.min(1.0), EdgeKind::Semantic));
        }
    }
    if cfg.skip_offsets.contains(&offset) {
        let w = (-cfg.skip_decay * offset as f64).exp();
        if w > cfg.skip_threshold {
            return Some((w, EdgeKind::Skip));
        }
    }
    None
}

/// Builds the token graph from per-position feature rows (`n × d`).
pub fn build_graph<T: Scalar>(h0: &Tensor<T>, cfg: &GraphConfig) -> Result<TokenGraph> {
    cfg.validate()?;
    let (n, d) = h0.dims2()?;
    if n == 0 {
        return Err(invalid!("cannot build a graph over zero tokens"));
    }
    h0.ensure_finite("graph input")?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| h0.row(i).iter().map(|v| v.f64()).collect()).collect();
    debug_assert!(rows.iter().all(|r| r.len() == d));

    let mut adjacency = vec![0.0; n * n];
    let mut edges = Vec::new();
    for i in 0..n {
        for offset in 1..=cfg.max_offset() {
            let j = i + offset;
            if j >= n {
                break;
            }
            let Some((w, kind)) = classify(cfg, offset, || cosine(&rows[i], &rows[j])) else {
                continue;
            };
            adjacency[i * n + j] = w;
            adjacency[j * n + i] = w;
            if !cfg.strict_causal {
                edges.push(Edge { src: i, dst: j, weight: w, kind });
            }
            edges.push(Edge { src: j, dst: i, weight: w, kind });
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    let adjacency = Tensor::new(vec![n, n], adjacency)?;
    let normalized_adjacency = normalize_adjacency(&adjacency)?;
    Ok(TokenGraph { n, edges, adjacency, normalized_adjacency })
}

/// `D^{-1/2} A D^{-1/2}` with `D = diag(row sums)`. Zero-degree rows and
/// columns stay zero.
pub fn normalize_adjacency(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(invalid!("adjacency must be square, got {n}x{m}"));
    }
    a.ensure_finite("adjacency")?;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (a.at(i, j), a.at(j, i));
            if x < 0.0 {
                return Err(invalid!("adjacency has negative entry at ({i},{j})"));
            }
            if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                return Err(invalid!("adjacency is not symmetric at ({i},{j})"));
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a.row(i).iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt[i] * a.at(i, j) * inv_sqrt[j];
        }
    }
    Tensor::new(vec![n, n], out)
}

impl TokenGraph {
    /// Attention neighbourhoods: node `i` attends to itself and to every `j`
    /// with a directed edge `(i, j)`. Returns the CSR layout and, for each
    /// graph edge, its position in the flattened neighbour array.
    pub fn neighborhoods(&self, weight_bias: bool) -> (Neighborhoods, Vec<usize>) {
        let mut offsets = Vec::with_capacity(self.n + 1);
        let mut targets = Vec::with_capacity(self.edges.len() + self.n);
        let mut bias = Vec::with_capacity(self.edges.len() + self.n);
        let mut edge_slots = Vec::with_capacity(self.edges.len());
        let mut cursor = 0;
        offsets.push(0);
        for i in 0..self.n {
            let mut entries: Vec<(usize, f64, bool)> = vec![(i, 1.0, false)];
            while cursor < self.edges.len() && self.edges[cursor].src == i {
                let e = &self.edges[cursor];
                entries.push((e.dst, e.weight, true));
                cursor += 1;
            }
            entries.sort_by_key(|e| e.0);
            for (j, w, is_edge) in entries {
                if is_edge {
                    edge_slots.push(targets.len());
                }
                targets.push(j);
                bias.push(if weight_bias { w.ln() } else { 0.0 });
            }
            offsets.push(targets.len());
        }
        (Neighborhoods { offsets, targets, bias }, edge_slots)
    }

    /// Squared Frobenius norm of `A − Aᵀ`, halved.
    pub fn asymmetry(&self) -> f64 {
        asymmetry_penalty(&self.adjacency)
    }

    pub fn count_kind(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

/// `½‖A − Aᵀ‖_F²`.
pub fn asymmetry_penalty(a: &Tensor<f64>) -> f64 {
    let n = a.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = a.at(i, j) - a.at(j, i);
            total += d * d;
        }
    }
    0.5 * total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl std::str::FromStr for GraphFormat {
    type Err = CgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(GraphFormat::Json),
            "dot" => Ok(GraphFormat::Dot),
            other => Err(invalid!("unknown graph format {other:?} (expected json or dot)")),
        }
    }
}

/// Parsed form of the JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub normalized: bool,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

impl GraphJson {
    pub fn from_graph(g: &TokenGraph, normalized: bool) -> Self {
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeJson {
                src: e.src,
                dst: e.dst,
                weight: if normalized { g.normalized_adjacency.at(e.src, e.dst) } else { e.weight },
                kind: e.kind,
            })
            .collect();
        GraphJson { n: g.n, normalized, edges }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let g: GraphJson = serde_json::from_slice(bytes)?;
        if g.edges.iter().any(|e| e.src >= g.n || e.dst >= g.n) {
            return Err(CgtError::Format("edge endpoint out of range".into()));
        }
        Ok(g)
    }

    /// Canonical single-line JSON with weights at six decimal places.
    pub fn to_json(&self) -> String {
        let mut s = format!("{{\"n\":{},\"normalized\":{},\"edges\":[", self.n, self.normalized);
        for (k, e) in self.edges.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "{{\"src\":{},\"dst\":{},\"weight\":{:.6},\"kind\":\"{}\"}}",
                e.src,
                e.dst,
                e.weight,
                e.kind.as_str()
            );
        }
        s.push_str("]}");
        s
    }
}

fn dot_escape(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            '\n' => vec!['\\', 'n'],
            c if c.is_control() => vec!['?'],
            c => vec![c],
        })
        .collect()
}

/// Undirected DOT rendering: one line per connected pair, labelled with its
/// raw weight and styled by edge kind.
pub fn to_dot(g: &TokenGraph, labels: Option<&[String]>) -> String {
    let mut s = String::from("graph cgt {\n  node [shape=circle];\n");
    for i in 0..g.n {
        let label = labels.and_then(|l| l.get(i)).map_or_else(|| i.to_string(), |l| dot_escape(l));
        let _ = writeln!(s, "  {i} [label=\"{label}\"];");
    }
    let mut pairs: Vec<&Edge> = g.edges.iter().collect();
    pairs.sort_by_key(|e| (e.src.min(e.dst), e.src.max(e.dst)));
    pairs.dedup_by_key(|e| (e.src.min(e.dst), e.src.max(e.dst)));
    for e in pairs {
        let _ = writeln!(
            s,
            "  {} -- {} [label=\"{:.6}\", kind={}, {}];",
            e.src.min(e.dst),
            e.src.max(e.dst),
            e.weight,
            e.kind.as_str(),
            e.kind.dot_style()
        );
    }
    s.push_str("}\n");
    s
}

pub fn export_graph(g: &TokenGraph, format: GraphFormat, labels: Option<&[String]>) -> Vec<u8> {
    match format {
        GraphFormat::Json => GraphJson::from_graph(g, false).to_json().into_bytes(),
        GraphFormat::Dot => to_dot(g, labels).into_bytes(),
    }
}
