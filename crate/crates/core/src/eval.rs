//! QA evaluation reports and the three-variant ablation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CgtError, Result};
use crate::metrics::{efficiency, score_answer, Prf};
use crate::model::{count_params, CgtModel, ModelConfig, Variant};
use crate::rag::{ask, HashedBow, KnowledgeBase, LanguageModel, MeanEmbed, RagConfig, TextEmbedder, EmbedderKind};
use crate::text::{chunk_corpus, load_corpus, Tokenizer, TokenizerSpec};
use crate::train::{train_two_stage, LossWeights, StageConfig, StepInfo};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub reference_answer: String,
}

/// One JSON object per non-blank line.
pub fn parse_qa(text: &str) -> Result<Vec<QaItem>> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem =
            serde_json::from_str(line).map_err(|e| CgtError::Format(format!("QA line {}: {e}", n + 1)))?;
        if item.question.trim().is_empty() || item.reference_answer.trim().is_empty() {
            return Err(CgtError::Format(format!("QA line {} has an empty field", n + 1)));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(invalid!("QA set is empty"));
    }
    Ok(items)
}

pub fn load_qa(path: &Path) -> Result<Vec<QaItem>> {
    parse_qa(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub text: String,
    pub used_fallback: bool,
}

/// Produces an answer for a question.
pub trait Answerer {
    fn answer(&self, question: &str) -> Result<AnswerOutcome>;
}

/// The retrieval-augmented pipeline as an [`Answerer`].
pub struct RagAnswerer<'a> {
    pub model: &'a dyn LanguageModel,
    pub tokenizer: &'a Tokenizer,
    pub kb: &'a KnowledgeBase,
    pub embedder: &'a dyn TextEmbedder,
    pub cfg: &'a RagConfig,
}

impl Answerer for RagAnswerer<'_> {
    fn answer(&self, question: &str) -> Result<AnswerOutcome> {
        let a = ask(question, self.kb, self.model, self.tokenizer, self.embedder, self.cfg)?;
        Ok(AnswerOutcome { text: a.text, used_fallback: a.used_fallback })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeDetail {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub question: String,
    pub answer: String,
    pub reference: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub jaccard: f64,
    pub seconds: f64,
    pub used_fallback: bool,
    pub rouge_detail: RougeDetail,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub jaccard: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub params: usize,
    pub rows: Vec<MetricRow>,
    pub means: MetricMeans,
}

const TABLE_HEADER: [&str; 8] = ["BLEU-1", "BLEU-2", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L", "Jaccard", "Time (s)"];

fn metric_cells(v: [f64; 8]) -> String {
    v.iter().map(|x| format!(" {x:>8.4}")).collect()
}

impl MetricReport {
    /// Copy with timing fields zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.seconds = 0.0);
        r.means.seconds = 0.0;
        r
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant {} ({} parameters)", self.variant, self.params);
        let _ = write!(s, "{:<6}", "#");
        for h in TABLE_HEADER {
            let _ = write!(s, " {h:>8}");
        }
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let cells = metric_cells([r.bleu1, r.bleu2, r.bleu4, r.rouge1, r.rouge2, r.rouge_l, r.jaccard, r.seconds]);
            let _ = writeln!(s, "{:<6}{cells}", i + 1);
        }
        let m = &self.means;
        let cells = metric_cells([m.bleu1, m.bleu2, m.bleu4, m.rouge1, m.rouge2, m.rouge_l, m.jaccard, m.seconds]);
        let _ = writeln!(s, "{:<6}{cells}", "mean");
        s
    }
}

/// Answers every question, scores it against its reference and averages.
pub fn evaluate_qa(answerer: &dyn Answerer, qa: &[QaItem], variant: &str, params: usize) -> Result<MetricReport> {
    if qa.is_empty() {
        return Err(invalid!("QA set is empty"));
    }
    let mut rows = Vec::with_capacity(qa.len());
    for item in qa {
        let started = Instant::now();
        let out = answerer.answer(&item.question)?;
        let seconds = started.elapsed().as_secs_f64();
        let sc = score_answer(&out.text, &item.reference_answer)?;
        rows.push(MetricRow {
            question: item.question.clone(),
            answer: out.text,
            reference: item.reference_answer.clone(),
            bleu1: sc.bleu1,
            bleu2: sc.bleu2,
            bleu4: sc.bleu4,
            rouge1: sc.rouge1.f1,
            rouge2: sc.rouge2.f1,
            rouge_l: sc.rouge_l.f1,
            jaccard: sc.jaccard,
            seconds,
            used_fallback: out.used_fallback,
            rouge_detail: RougeDetail { rouge1: sc.rouge1, rouge2: sc.rouge2, rouge_l: sc.rouge_l },
        });
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let means = MetricMeans {
        bleu1: mean(|r| r.bleu1),
        bleu2: mean(|r| r.bleu2),
        bleu4: mean(|r| r.bleu4),
        rouge1: mean(|r| r.rouge1),
        rouge2: mean(|r| r.rouge2),
        rouge_l: mean(|r| r.rouge_l),
        jaccard: mean(|r| r.jaccard),
        seconds: mean(|r| r.seconds),
    };
    Ok(MetricReport { variant: variant.to_string(), params, rows, means })
}

/// Builds the knowledge base for `model` over `dir` with the configured
/// embedder and the default 128/32 chunking.
pub fn build_kb(
    dir: &Path,
    model: &CgtModel<f32>,
    tokenizer: &Tokenizer,
    embedder: EmbedderKind,
    chunk_size: usize,
    overlap: usize,
) -> Result<KnowledgeBase> {
    let corpus = load_corpus(dir)?;
    let chunks = chunk_corpus(&corpus, tokenizer, chunk_size, overlap)?;
    match embedder {
        EmbedderKind::HashedBow => KnowledgeBase::build(chunks, &HashedBow::default()),
        EmbedderKind::MeanEmbed => KnowledgeBase::build(chunks, &MeanEmbed::new(model.embedding_table(), tokenizer)?),
    }
}

/// Runs the RAG answerer for `model` over `qa`.
pub fn evaluate_model(
    model: &CgtModel<f32>,
    tokenizer: &Tokenizer,
    kb: &KnowledgeBase,
    qa: &[QaItem],
    cfg: &RagConfig,
) -> Result<MetricReport> {
    let hashed = HashedBow::default();
    let mean;
    let embedder: &dyn TextEmbedder = match kb.embedder {
        EmbedderKind::HashedBow => &hashed,
        EmbedderKind::MeanEmbed => {
            mean = MeanEmbed::new(model.embedding_table(), tokenizer)?;
            &mean
        }
    };
    let answerer = RagAnswerer { model, tokenizer, kb, embedder, cfg };
    evaluate_qa(&answerer, qa, model.config().variant.as_str(), count_params(model.config()).total)
}

/// The hybrid config plus its two single-stack counterparts: a pure
/// transformer with `L_gnn + L_trans` layers and a pure GNN with `L_gnn`.
pub fn ablation_configs(hybrid: &ModelConfig) -> [ModelConfig; 3] {
    let mut h = hybrid.clone();
    h.variant = Variant::Hybrid;
    let mut t = hybrid.clone().with_variant(Variant::PureTransformer);
    t.transformer_layers = hybrid.gnn_layers + hybrid.transformer_layers;
    let g = hybrid.clone().with_variant(Variant::PureGnn);
    [h, t, g]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    pub params: usize,
    pub params_millions: f64,
    pub final_loss: f64,
    pub efficiency: f64,
    pub metrics: MetricMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub versus: String,
    /// `(hybrid − other) / other`, percent.
    pub params_pct: f64,
    /// `(other_loss − hybrid_loss) / other_loss`, percent.
    pub performance_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub deltas: Vec<AblationDelta>,
}

fn layers(n: usize) -> String {
    if n == 1 {
        "1 layer".into()
    } else {
        format!("{n} layers")
    }
}

fn variant_label(cfg: &ModelConfig) -> String {
    match cfg.variant {
        Variant::PureTransformer => format!("Pure Transformer ({})", layers(cfg.transformer_layers)),
        Variant::PureGnn => format!("Pure GNN ({})", layers(cfg.gnn_layers)),
        Variant::Hybrid => "CGT (GNN + Transformer)".into(),
    }
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant.as_str())
    }

    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.metrics.seconds = 0.0);
        r
    }

    /// Variant / parameters / final loss rows followed by the improvement
    /// rows, then the QA metric means per variant.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<32} {:>15} {:>11} {:>12}", "Model Variant", "Parameters (M)", "Final Loss", "Efficiency");
        let order = [Variant::PureTransformer, Variant::PureGnn, Variant::Hybrid];
        for v in order {
            if let Some(r) = self.row(v) {
                let _ = writeln!(
                    s,
                    "{:<32} {:>15.4} {:>11.4} {:>12.4e}",
                    r.label, r.params_millions, r.final_loss, r.efficiency
                );
            }
        }
        for d in &self.deltas {
            let _ = writeln!(
                s,
                "{:<32} {:>+14.1}% params {:>+9.1}% performance",
                format!("Improvement vs {}", d.versus),
                d.params_pct,
                d.performance_pct
            );
        }
        let _ = write!(s, "\n{:<32}", "QA means");
        for h in TABLE_HEADER {
            let _ = write!(s, " {h:>8}");
        }
        s.push('\n');
        for v in order {
            if let Some(r) = self.row(v) {
                let m = &r.metrics;
                let cells = metric_cells([m.bleu1, m.bleu2, m.bleu4, m.rouge1, m.rouge2, m.rouge_l, m.jaccard, m.seconds]);
                let _ = writeln!(s, "{:<32}{cells}", r.label);
            }
        }
        let _ = writeln!(s, "seed {}", self.seed);
        s
    }
}

pub struct AblationSetup<'a> {
    pub hybrid: ModelConfig,
    pub tokenizer: &'a Tokenizer,
    pub tokenizer_spec: TokenizerSpec,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub weights: LossWeights,
    pub rag: RagConfig,
    pub kb_dir: &'a Path,
    pub qa: &'a [QaItem],
    pub seed: u64,
}

/// Trains the three variants identically (same seed, corpora and stage
/// configs), then evaluates each on the QA set.
pub fn ablation_run(setup: &AblationSetup, progress: &mut dyn FnMut(&str, &StepInfo)) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(3);
    for cfg in ablation_configs(&setup.hybrid) {
        let mut model = CgtModel::<f32>::init(cfg.clone(), setup.seed)?;
        let name = cfg.variant.as_str();
        let (_, _, report) = train_two_stage(
            &mut model,
            setup.tokenizer,
            &setup.tokenizer_spec,
            &setup.stage1,
            &setup.stage2,
            &setup.weights,
            None,
            &mut |s| progress(name, s),
        )?;
        let kb = build_kb(setup.kb_dir, &model, setup.tokenizer, setup.rag.embedder, 128, 32)?;
        let metrics = evaluate_model(&model, setup.tokenizer, &kb, setup.qa, &setup.rag)?;
        let params = count_params(&cfg).total;
        let params_millions = params as f64 / 1e6;
        rows.push(AblationRow {
            variant: name.to_string(),
            label: variant_label(&cfg),
            params,
            params_millions,
            final_loss: report.final_eval_loss,
            efficiency: efficiency(params_millions, report.final_eval_loss)?,
            metrics: metrics.means,
        });
    }
    let hybrid = rows[0].clone();
    let deltas = rows[1..]
        .iter()
        .map(|o| AblationDelta {
            versus: o.label.clone(),
            params_pct: 100.0 * (hybrid.params as f64 - o.params as f64) / o.params as f64,
            performance_pct: 100.0 * (o.final_loss - hybrid.final_loss) / o.final_loss,
        })
        .collect();
    Ok(AblationReport { seed: setup.seed, rows, deltas })
}
