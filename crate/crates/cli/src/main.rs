mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgt::checkpoint::{load_checkpoint, write_atomic, Checkpoint, CheckpointMeta};
use cgt::eval::{ablation_run, build_kb, evaluate_model, AblationSetup};
use cgt::graph::{export_graph, GraphFormat};
use cgt::model::{CgtModel, Variant};
use cgt::rag::{ask, generate, BeamConfig, EmbedderKind, HashedBow, KnowledgeBase, MeanEmbed, TextEmbedder};
use cgt::text::Tokenizer;
use cgt::train::{train_two_stage, StepInfo};
use cgt::{CgtError, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{load_qa_or_bundled, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "cgt", version, about = "Contextual graph transformer: training, graph inspection, generation and retrieval QA")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed for initialization and data order. Falls back to the config file, then CGT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run config (model fields plus stage1/stage2/rag/loss). Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for secondary outputs (checkpoints, reports).
    #[arg(long, global = true, default_value = "cgt-out")]
    out_dir: PathBuf,
    /// Write the primary artifact here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-stage training: general corpus, then domain corpus.
    Train(TrainArgs),
    /// Build and export the token graph for a piece of text.
    Graph(GraphArgs),
    /// Beam-search continuation of a prompt.
    Generate(GenerateArgs),
    /// Chunk a corpus and build a retrieval knowledge base.
    KbBuild(KbBuildArgs),
    /// Answer a question with retrieval-augmented generation.
    Ask(AskArgs),
    /// Score answers on a QA set.
    Eval(EvalArgs),
    /// Train and compare the hybrid, pure-transformer and pure-GNN variants.
    Ablate(AblateArgs),
    /// Print a checkpoint's config, metadata and tensor manifest.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// General (stage 1) corpus directory; defaults to the bundled one.
    #[arg(long)]
    general: Option<PathBuf>,
    /// Domain (stage 2) corpus directory; defaults to the bundled one.
    #[arg(long)]
    domain: Option<PathBuf>,
    /// Epochs for both stages.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    text: String,
    #[arg(long, default_value = "json", value_parser = parse_graph_format)]
    format: GraphFormat,
    /// Checkpoint whose embeddings drive the semantic edges; otherwise a freshly seeded model.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
}

#[derive(Args, Debug)]
struct KbBuildArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory; defaults to the bundled domain corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_embedder)]
    embedder: Option<EmbedderKind>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args, Debug)]
struct RagArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

#[derive(Args, Debug)]
struct AskArgs {
    #[arg(long)]
    question: String,
    #[command(flatten)]
    rag: RagArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// QA set (JSON lines); defaults to the bundled one.
    #[arg(long)]
    qa: Option<PathBuf>,
    #[command(flatten)]
    rag: RagArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Domain corpus for stage 2 and the knowledge base; defaults to the bundled one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// General corpus for stage 1; defaults to the bundled one.
    #[arg(long)]
    general: Option<PathBuf>,
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown variant {s:?} (hybrid, pure_transformer, pure_gnn)"))
}

fn parse_graph_format(s: &str) -> std::result::Result<GraphFormat, String> {
    s.parse().map_err(|e: CgtError| e.to_string())
}

fn parse_embedder(s: &str) -> std::result::Result<EmbedderKind, String> {
    s.parse().map_err(|e: CgtError| e.to_string())
}

fn exit_code(e: &CgtError) -> u8 {
    match e {
        CgtError::NonFinite(_) => 3,
        CgtError::Config(_) => 1,
        _ => 2,
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out_dir: PathBuf,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn resolve(g: &Global) -> Result<Self> {
        let cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        let env_seed = match std::env::var("CGT_SEED") {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CgtError::Config(format!("CGT_SEED={v:?} is not a u64")))?),
            Err(_) => None,
        };
        let seed = g.seed.or(cfg.seed).or(env_seed).unwrap_or(0);
        Ok(Ctx { cfg, seed, out_dir: g.out_dir.clone(), out: g.out.clone(), quiet: g.quiet })
    }

    fn announce(&mut self) -> Result<()> {
        self.cfg.seed = Some(self.seed);
        self.cfg.stage1.seed = self.seed;
        self.cfg.stage2.seed = self.seed;
        self.cfg.validate()?;
        eprintln!("seed: {}", self.seed);
        eprintln!("config: {}", serde_json::to_string(&self.cfg)?);
        Ok(())
    }

    fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Primary artifact to `--out` (atomically) or stdout.
    fn emit(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(p) => write_atomic(p, bytes),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
                Ok(())
            }
        }
    }

    fn emit_json(&self, v: &impl serde::Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.emit(s.as_bytes())
    }

    fn write_secondary(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let p = self.out_dir.join(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }
}

fn step_printer(quiet: bool, label: String) -> impl FnMut(&StepInfo) {
    move |s: &StepInfo| {
        if !quiet && s.step % 25 == 0 {
            eprintln!("{label}stage {} epoch {} step {} loss {:.4} (lm {:.4})", s.stage, s.epoch, s.step, s.loss.total, s.loss.lm);
        }
    }
}

fn load_model(path: &Path) -> Result<(CgtModel<f32>, Tokenizer, CheckpointMeta)> {
    let ckpt = load_checkpoint(path)?;
    let tok = ckpt.meta.tokenizer.load()?;
    let meta = ckpt.meta.clone();
    Ok((ckpt.into_model()?, tok, meta))
}

fn run_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        ctx.cfg.stage1.epochs = e;
        ctx.cfg.stage2.epochs = e;
    }
    if let Some(v) = a.variant {
        ctx.cfg.model.variant = v;
    }
    if a.general.is_some() {
        ctx.cfg.stage1.corpus = a.general.clone();
    }
    if a.domain.is_some() {
        ctx.cfg.stage2.corpus = a.domain.clone();
    }
    ctx.announce()?;
    let tok = ctx.cfg.tokenizer.load()?;
    let mut model = CgtModel::<f32>::init(ctx.cfg.model.clone(), ctx.seed)?;
    std::fs::create_dir_all(&ctx.out_dir)?;
    let (_, _, report) = train_two_stage(
        &mut model,
        &tok,
        &ctx.cfg.tokenizer,
        &ctx.cfg.stage1,
        &ctx.cfg.stage2,
        &ctx.cfg.loss,
        Some(&ctx.out_dir),
        &mut step_printer(ctx.quiet, String::new()),
    )?;
    let text = report.to_text();
    ctx.write_secondary("train_report.txt", text.as_bytes())?;
    ctx.write_secondary("train_report.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    ctx.progress(&text);
    ctx.emit_json(&report)
}

fn run_graph(ctx: &mut Ctx, a: &GraphArgs) -> Result<()> {
    ctx.announce()?;
    let (model, tok) = match &a.model {
        Some(p) => {
            let (m, t, _) = load_model(p)?;
            (m, t)
        }
        None => (CgtModel::<f32>::init(ctx.cfg.model.clone(), ctx.seed)?, ctx.cfg.tokenizer.load()?),
    };
    let ids = tok.encode(&a.text);
    if ids.is_empty() {
        return Err(CgtError::InvalidInput("text encodes to no tokens".into()));
    }
    let g = model.graph_for(&ids)?;
    let labels: Vec<String> = ids.iter().map(|&i| tok.token_label(i)).collect();
    ctx.emit(&export_graph(&g, a.format, Some(&labels)))
}

fn run_generate(ctx: &mut Ctx, a: &GenerateArgs) -> Result<()> {
    let (model, tok, _) = load_model(&a.model)?;
    ctx.cfg.model = model.config().clone();
    if let Some(w) = a.beam_width {
        ctx.cfg.rag.beam_width = w;
    }
    if let Some(n) = a.max_new_tokens {
        ctx.cfg.rag.max_new_tokens = n;
    }
    if let Some(p) = a.length_penalty {
        ctx.cfg.rag.length_penalty = p;
    }
    ctx.announce()?;
    let prompt = tok.encode(&a.prompt);
    let beam = BeamConfig {
        beam_width: ctx.cfg.rag.beam_width,
        max_new_tokens: ctx.cfg.rag.max_new_tokens,
        length_penalty: ctx.cfg.rag.length_penalty,
        eos_id: tok.eos_id(),
    };
    let out = generate(&model, &prompt, &beam)?;
    ctx.emit_json(&json!({
        "prompt": a.prompt,
        "prompt_tokens": prompt,
        "generated_tokens": out,
        "text": tok.decode(&out)?,
    }))
}

fn run_kb_build(ctx: &mut Ctx, a: &KbBuildArgs) -> Result<()> {
    let (model, tok, _) = load_model(&a.model)?;
    ctx.cfg.model = model.config().clone();
    if let Some(e) = a.embedder {
        ctx.cfg.rag.embedder = e;
    }
    if let Some(c) = a.chunk_size {
        ctx.cfg.chunk_size = c;
    }
    if let Some(o) = a.overlap {
        ctx.cfg.chunk_overlap = o;
    }
    ctx.announce()?;
    let dir = a.corpus.clone().unwrap_or_else(|| cgt::bundled_data_dir().join("domain"));
    let kb = build_kb(&dir, &model, &tok, ctx.cfg.rag.embedder, ctx.cfg.chunk_size, ctx.cfg.chunk_overlap)?;
    let path = match &ctx.out {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(&ctx.out_dir)?;
            ctx.out_dir.join("kb.cgtk")
        }
    };
    kb.save(&path)?;
    let summary = json!({
        "path": path,
        "chunks": kb.len(),
        "dim": kb.dim(),
        "embedder": kb.embedder,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn apply_rag_args(ctx: &mut Ctx, a: &RagArgs) {
    if let Some(k) = a.k {
        ctx.cfg.rag.k = k;
    }
    if let Some(t) = a.threshold {
        ctx.cfg.rag.quality_threshold = t;
    }
    if let Some(w) = a.beam_width {
        ctx.cfg.rag.beam_width = w;
    }
    if let Some(n) = a.max_new_tokens {
        ctx.cfg.rag.max_new_tokens = n;
    }
}

fn load_rag(ctx: &mut Ctx, a: &RagArgs) -> Result<(CgtModel<f32>, Tokenizer, KnowledgeBase)> {
    let (model, tok, _) = load_model(&a.model)?;
    let kb = KnowledgeBase::load(&a.kb)?;
    ctx.cfg.model = model.config().clone();
    ctx.cfg.rag.embedder = kb.embedder;
    apply_rag_args(ctx, a);
    ctx.announce()?;
    Ok((model, tok, kb))
}

fn run_ask(ctx: &mut Ctx, a: &AskArgs) -> Result<()> {
    let (model, tok, kb) = load_rag(ctx, &a.rag)?;
    let hashed = HashedBow::default();
    let mean;
    let embedder: &dyn TextEmbedder = match kb.embedder {
        EmbedderKind::HashedBow => &hashed,
        EmbedderKind::MeanEmbed => {
            mean = MeanEmbed::new(model.embedding_table(), &tok)?;
            &mean
        }
    };
    let answer = ask(&a.question, &kb, &model, &tok, embedder, &ctx.cfg.rag)?;
    ctx.emit_json(&answer)
}

fn run_eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<()> {
    let (model, tok, kb) = load_rag(ctx, &a.rag)?;
    let qa = load_qa_or_bundled(a.qa.as_deref())?;
    let report = evaluate_model(&model, &tok, &kb, &qa, &ctx.cfg.rag)?;
    let text = report.to_text();
    ctx.write_secondary("eval_report.txt", text.as_bytes())?;
    ctx.progress(&text);
    ctx.emit_json(&report)
}

fn run_ablate(ctx: &mut Ctx, a: &AblateArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        ctx.cfg.stage1.epochs = e;
        ctx.cfg.stage2.epochs = e;
    }
    if a.general.is_some() {
        ctx.cfg.stage1.corpus = a.general.clone();
    }
    if a.corpus.is_some() {
        ctx.cfg.stage2.corpus = a.corpus.clone();
    }
    ctx.cfg.model.variant = Variant::Hybrid;
    ctx.announce()?;
    let tok = ctx.cfg.tokenizer.load()?;
    let qa = load_qa_or_bundled(a.qa.as_deref())?;
    let kb_dir = ctx.cfg.stage2.corpus.clone().unwrap_or_else(|| cgt::bundled_data_dir().join("domain"));
    let setup = AblationSetup {
        hybrid: ctx.cfg.model.clone(),
        tokenizer: &tok,
        tokenizer_spec: ctx.cfg.tokenizer.clone(),
        stage1: ctx.cfg.stage1.clone(),
        stage2: ctx.cfg.stage2.clone(),
        weights: ctx.cfg.loss,
        rag: ctx.cfg.rag.clone(),
        kb_dir: &kb_dir,
        qa: &qa,
        seed: ctx.seed,
    };
    let quiet = ctx.quiet;
    let report = ablation_run(&setup, &mut |variant, s| {
        if !quiet && s.step % 50 == 0 {
            eprintln!("[{variant}] stage {} epoch {} step {} loss {:.4}", s.stage, s.epoch, s.step, s.loss.total);
        }
    })?;
    let text = report.to_text();
    ctx.write_secondary("ablation_report.txt", text.as_bytes())?;
    ctx.progress(&text);
    ctx.emit_json(&report)
}

fn run_inspect(ctx: &mut Ctx, a: &InspectArgs) -> Result<()> {
    let ckpt = Checkpoint::from_bytes(&std::fs::read(&a.path)?)?;
    ctx.cfg.model = ckpt.config.clone();
    ctx.announce()?;
    let tensors: Vec<_> = ckpt
        .params
        .iter()
        .map(|p| json!({"name": p.name, "shape": p.tensor.shape(), "trainable": p.trainable}))
        .collect();
    let counts = cgt::model::count_params(&ckpt.config);
    ctx.emit_json(&json!({
        "config": ckpt.config,
        "meta": ckpt.meta,
        "param_count": counts,
        "tensors": tensors,
    }))
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::resolve(&cli.global)?;
    match &cli.command {
        Command::Train(a) => run_train(&mut ctx, a),
        Command::Graph(a) => run_graph(&mut ctx, a),
        Command::Generate(a) => run_generate(&mut ctx, a),
        Command::KbBuild(a) => run_kb_build(&mut ctx, a),
        Command::Ask(a) => run_ask(&mut ctx, a),
        Command::Eval(a) => run_eval(&mut ctx, a),
        Command::Ablate(a) => run_ablate(&mut ctx, a),
        Command::InspectCheckpoint(a) => run_inspect(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
