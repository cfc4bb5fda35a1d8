//! Command-line front end.
//!
//! Every command works inside a working directory (`--workdir`, default
//! `.`) whose layout is given by the `paths` section of the run
//! configuration. Each artifact carries the hash of the resolved
//! configuration it was produced under.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_model, load_transr, save_model, save_transr};
use crate::config::RunConfig;
use crate::embed::build_embeddings;
use crate::error::{Error, Result};
use crate::graph::{builder_from_files, load_graph_dir, UrbanGraph};
use crate::harness::{
    few_shot_eval, kfold_eval, zero_shot_eval, EmbeddingMatrix, EmbeddingSource, EvalReport, Labels,
    ProbedLabels,
};
use crate::kg::train_transr_logged;
use crate::pretrain::{write_loss_log, ImageSet, InitMode, ModelState, PretrainConfig, PretrainContext};
use crate::prompt::{frozen_head_mse, learnable_embeddings, tune_prompt, PromptState, PromptTask};
use crate::synth::{synth_city, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "urbanprompt", version, about = "Urban region graph pre-training, prompting and evaluation")]
pub struct Cli {
    /// Directory holding every artifact.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration (default: $URBANPROMPT_CONFIG when set).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pretrain.epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grid city with planted tasks.
    Synth(SynthArgs),
    /// Load city CSVs, check them and write the canonical graph.
    BuildGraph(BuildGraphArgs),
    /// Report every invariant violation of a graph directory.
    Validate(GraphArg),
    /// Train TransR node features.
    InitKg(InitKgArgs),
    /// Pre-train the region encoder.
    Pretrain(PretrainArgs),
    /// Export region embeddings from any source.
    Embed(EmbedArgs),
    /// Embeddings under a manual prompt preset (P1..P4).
    PromptManual(PromptManualArgs),
    /// Tune a learnable prompt on a task with the backbone frozen.
    PromptTune(PromptTuneArgs),
    /// Evaluate embeddings on a task.
    Eval(EvalArgs),
    /// Collect every evaluation into one CSV and table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Grid size such as `3x3`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML synthesis spec replacing the `synth` config section.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Directory with `nodes.csv`, `edges.csv` and optional `flows.csv`,
    /// `images.csv`.
    #[arg(long)]
    pub city: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArg {
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitKgArgs {
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TransR epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pre-training ablations: each removes one loss term or swaps the node
/// feature initialization.
#[derive(Debug, Args, Clone, Copy, Default)]
pub struct Ablation {
    /// Drop the flow view.
    #[arg(long)]
    pub no_flow: bool,
    /// Drop the spatial (triplet) view.
    #[arg(long)]
    pub no_spatial: bool,
    /// Drop the imagery view.
    #[arg(long)]
    pub no_imagery: bool,
    /// Drop the fusion layer.
    #[arg(long)]
    pub no_fusion: bool,
    /// Untrained random node features instead of TransR.
    #[arg(long)]
    pub random_init: bool,
}

impl Ablation {
    pub fn any(&self) -> bool {
        self.no_flow || self.no_spatial || self.no_imagery || self.no_fusion || self.random_init
    }

    pub fn apply(&self, cfg: &mut PretrainConfig) {
        cfg.views.flow &= !self.no_flow;
        cfg.views.spatial &= !self.no_spatial;
        cfg.views.imagery &= !self.no_imagery;
        cfg.views.fusion &= !self.no_fusion;
        if self.random_init {
            cfg.init = InitMode::Random;
        }
    }

    /// Tag such as `/F/K`, empty without ablations.
    pub fn label(&self) -> String {
        [
            (self.no_flow, "/F"),
            (self.no_spatial, "/S"),
            (self.no_imagery, "/I"),
            (self.no_fusion, "/M"),
            (self.random_init, "/K"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, t)| *t)
        .collect()
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// TransR checkpoint to use instead of training one.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[command(flatten)]
    pub ablation: Ablation,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// pretrained, manual:<preset>, learnable, transr-node, transr-graph or random.
    #[arg(long)]
    pub source: Option<String>,
    /// Graph to embed (default: the training graph).
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptManualArgs {
    #[arg(long, default_value = "P1")]
    pub preset: String,
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TaskArg {
    /// Task name, resolved to `<city>/tasks/<name>.csv`.
    #[arg(long)]
    pub task: Option<String>,
    /// Explicit `region_id,value` label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptTuneArgs {
    #[command(flatten)]
    pub task: TaskArg,
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Kfold,
    FewShot,
    ZeroShot,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "kfold")]
    pub protocol: Protocol,
    /// Embedding CSV (default: `<embeddings>/<source>.csv`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Source tag selecting the default embedding file.
    #[arg(long)]
    pub source: Option<String>,
    #[command(flatten)]
    pub task: TaskArg,
    /// Zero-shot: embeddings of the target city.
    #[arg(long)]
    pub target_embeddings: Option<PathBuf>,
    /// Zero-shot: target graph, embedded with the current model when no
    /// target embeddings are given.
    #[arg(long)]
    pub target_graph: Option<PathBuf>,
    /// Zero-shot: labels of the target city (only read for scoring).
    #[arg(long)]
    pub target_labels: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Ablations retrain the backbone in memory and evaluate its embeddings.
    #[command(flatten)]
    pub ablation: Ablation,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolved configuration plus the working directory.
struct Session {
    workdir: PathBuf,
    cfg: RunConfig,
}

impl Session {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn or_default(&self, given: &Option<PathBuf>, default: &Path) -> PathBuf {
        given.as_deref().map_or_else(|| self.path(default), Path::to_path_buf)
    }

    fn graph_dir(&self, arg: &GraphArg) -> PathBuf {
        self.or_default(&arg.graph, &self.cfg.paths.graph)
    }

    fn load_graph(&self, arg: &GraphArg) -> Result<UrbanGraph> {
        load_graph_dir(&self.graph_dir(arg), &self.cfg.graph)
    }

    fn images(&self, dir: &Path) -> Result<Option<ImageSet>> {
        let p = dir.join("images.csv");
        if p.exists() {
            Ok(Some(ImageSet::load(&p)?))
        } else {
            Ok(None)
        }
    }

    fn labels(&self, arg: &TaskArg) -> Result<Labels> {
        match (&arg.labels, &arg.task) {
            (Some(p), _) => Labels::load(p),
            (None, Some(name)) => {
                Labels::load(&self.path(&self.cfg.paths.city).join("tasks").join(format!("{name}.csv")))
            }
            (None, None) => Err(Error::InvalidArgument("give --task or --labels".into())),
        }
    }

    fn hash(&self) -> String {
        self.cfg.hash()
    }

    fn stamp(&self) -> String {
        format!("config_hash={}", self.hash())
    }

    /// Writes the resolved configuration next to the artifacts of `command`.
    fn record(&self, command: &str) -> Result<()> {
        let dir = self.workdir.join("runs");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{command}.toml"));
        let text = format!("# {}\n{}", self.stamp(), self.cfg.to_toml());
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn embedding_file(&self, source: &str) -> PathBuf {
        self.path(&self.cfg.paths.embeddings)
            .join(format!("{}.csv", source.replace([':', '/'], "_")))
    }
}

/// Parses arguments and runs the command; the binary maps errors to a single
/// `error[kind]: message` line and exit status 1.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    fs::create_dir_all(&cli.workdir).map_err(|e| Error::io(&cli.workdir, e))?;
    let mut s = Session {
        workdir: cli.workdir,
        cfg,
    };
    match cli.command {
        Command::Synth(a) => synth(&mut s, a),
        Command::BuildGraph(a) => build_graph(&mut s, a),
        Command::Validate(a) => validate(&s, a),
        Command::InitKg(a) => init_kg(&mut s, a),
        Command::Pretrain(a) => pretrain_cmd(&mut s, a),
        Command::Embed(a) => embed(&mut s, a),
        Command::PromptManual(a) => {
            let args = EmbedArgs {
                source: Some(format!("manual:{}", a.preset)),
                graph: a.graph,
                seed: a.seed,
                out: a.out,
            };
            embed(&mut s, args)
        }
        Command::PromptTune(a) => prompt_tune(&mut s, a),
        Command::Eval(a) => eval(&mut s, a),
        Command::Report(a) => report(&s, a),
    }
}

fn check(cfg: &RunConfig) -> Result<()> {
    cfg.check()
}

fn synth(s: &mut Session, a: SynthArgs) -> Result<()> {
    if let Some(p) = &a.spec {
        s.cfg.synth = SynthSpec::load(p)?;
    }
    if let Some(g) = &a.grid {
        let (rows, cols) = SynthSpec::parse_grid(g)?;
        s.cfg.synth.rows = rows;
        s.cfg.synth.cols = cols;
    }
    if let Some(seed) = a.seed {
        s.cfg.seed = seed;
    }
    check(&s.cfg)?;
    let out = s.or_default(&a.out, &s.cfg.paths.city);
    let city = synth_city(&s.cfg.synth, s.cfg.seed)?;
    city.write(&out, Some(&s.stamp()))?;
    s.record("synth")?;
    println!(
        "synth: {}x{} grid, {} nodes, {} edges, {} flow records, {} tasks -> {} ({})",
        s.cfg.synth.rows,
        s.cfg.synth.cols,
        city.graph.node_count(),
        city.graph.edge_count(),
        city.graph.flows().len(),
        city.tasks.len(),
        out.display(),
        s.stamp()
    );
    Ok(())
}

fn build_graph(s: &mut Session, a: BuildGraphArgs) -> Result<()> {
    let city = s.or_default(&a.city, &s.cfg.paths.city);
    let out = s.or_default(&a.out, &s.cfg.paths.graph);
    let graph = load_graph_dir(&city, &s.cfg.graph)?;
    graph.save(&out, Some(&s.stamp()))?;
    if let Some(images) = s.images(&city)? {
        images.save(&out.join("images.csv"), Some(&s.stamp()))?;
    }
    s.record("build-graph")?;
    println!(
        "build-graph: {} nodes, {} edges, {} regions -> {}",
        graph.node_count(),
        graph.edge_count(),
        graph.regions().len(),
        out.display()
    );
    Ok(())
}

fn validate(s: &Session, a: GraphArg) -> Result<()> {
    let dir = s.graph_dir(&a);
    let flows = dir.join("flows.csv");
    let builder = builder_from_files(
        &dir.join("nodes.csv"),
        &dir.join("edges.csv"),
        flows.exists().then_some(flows.as_path()),
    )?;
    let graph = builder.build_unchecked(&s.cfg.graph)?;
    let report = graph.validate();
    print!("{report}");
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::InvalidGraph(report.len(), v.to_string())),
    }
}

fn init_kg(s: &mut Session, a: InitKgArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        s.cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        s.cfg.pretrain.transr.epochs = e;
    }
    check(&s.cfg)?;
    let graph = s.load_graph(&a.graph)?;
    let (state, log) = train_transr_logged(&graph, &s.cfg.pretrain.transr, s.cfg.seed)?;
    let out = s.or_default(&a.out, &s.cfg.paths.transr);
    let meta = serde_json::json!({
        "config_hash": s.hash(),
        "seed": s.cfg.seed,
        "transr": s.cfg.pretrain.transr,
    });
    save_transr(&state, &out, meta)?;
    s.record("init-kg")?;
    let first = log.first().copied().unwrap_or(f64::NAN);
    let last = log.last().copied().unwrap_or(f64::NAN);
    println!(
        "init-kg: {} entities, d={}, margin loss {first:.6} -> {last:.6} -> {}",
        state.node_ids.len(),
        state.dim,
        out.display()
    );
    Ok(())
}

/// TransR tables saved by `init-kg` for the same TransR settings and seed.
fn reusable_transr(s: &Session, path: &Path) -> Result<Option<crate::kg::TransRState>> {
    if !path.exists() || s.cfg.pretrain.init != InitMode::Transr {
        return Ok(None);
    }
    let ck = crate::checkpoint::Checkpoint::load(path)?;
    let same = ck.meta["seed"].as_u64() == Some(s.cfg.seed)
        && ck.meta["transr"] == serde_json::to_value(&s.cfg.pretrain.transr).expect("serializes");
    if same {
        Ok(Some(load_transr(path)?))
    } else {
        Ok(None)
    }
}

fn train_model(s: &Session, graph_arg: &GraphArg, kg: Option<&Path>) -> Result<(ModelState, Vec<crate::pretrain::LossBreakdown>)> {
    let dir = s.graph_dir(graph_arg);
    let graph = load_graph_dir(&dir, &s.cfg.graph)?;
    let images = if s.cfg.pretrain.views.imagery {
        s.images(&dir)?
    } else {
        None
    };
    let features = match kg {
        Some(p) => Some(load_transr(p)?),
        None => reusable_transr(s, &s.path(&s.cfg.paths.transr))?,
    };
    let mut model = match features {
        Some(f) => ModelState::init_with_features(&graph, images.as_ref(), &s.cfg.pretrain, s.cfg.seed, f)?,
        None => ModelState::init(&graph, images.as_ref(), &s.cfg.pretrain, s.cfg.seed)?,
    };
    let ctx = PretrainContext::new(&model, &graph, images.as_ref())?;
    let log = crate::pretrain::train(&mut model, &ctx, s.cfg.pretrain.epochs)?;
    model.round_to_f32();
    Ok((model, log))
}

fn pretrain_cmd(s: &mut Session, a: PretrainArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        s.cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        s.cfg.pretrain.epochs = e;
    }
    a.ablation.apply(&mut s.cfg.pretrain);
    check(&s.cfg)?;
    let (model, log) = train_model(s, &a.graph, a.kg.as_deref())?;
    let out = s.path(&s.cfg.paths.model);
    save_model(&model, &out, &s.hash())?;
    write_loss_log(&s.path(&s.cfg.paths.loss_log), &log, &s.hash())?;
    s.record("pretrain")?;
    match log.last() {
        Some(l) => println!(
            "pretrain: {} epochs, views {}, last loss total={:.6} (sp={:.6} img={:.6} flow={:.6} fuse={:.6}) -> {}",
            log.len(),
            s.cfg.pretrain.views.label(),
            l.total,
            l.spatial,
            l.imagery,
            l.flow,
            l.fusion,
            out.display()
        ),
        None => println!("pretrain: 0 epochs, initialization saved -> {}", out.display()),
    }
    Ok(())
}

fn load_backbone(s: &mut Session) -> Result<ModelState> {
    let (model, _) = load_model(&s.path(&s.cfg.paths.model))?;
    // downstream artifacts are stamped with the backbone's settings
    s.cfg.pretrain = model.config.clone();
    s.cfg.seed = model.seed;
    Ok(model)
}

fn embed(s: &mut Session, a: EmbedArgs) -> Result<()> {
    if let Some(src) = &a.source {
        s.cfg.embed.source = src.clone();
    }
    if let Some(seed) = a.seed {
        s.cfg.embed.seed = seed;
    }
    let source: EmbeddingSource = s.cfg.embed.source.parse()?;
    let model = load_backbone(s)?;
    check(&s.cfg)?;
    let graph = s.load_graph(&a.graph)?;
    let prompt = match source {
        EmbeddingSource::Learnable => Some(PromptState::load(&s.path(&s.cfg.paths.prompt))?),
        _ => None,
    };
    let emb = build_embeddings(&source, &model, &graph, prompt.as_ref(), s.cfg.embed.seed)?;
    let out = a.out.clone().unwrap_or_else(|| s.embedding_file(&s.cfg.embed.source));
    emb.save(&out, &s.hash())?;
    s.record("embed")?;
    println!(
        "embed: source {}, {} regions x {} -> {}",
        emb.source,
        emb.len(),
        emb.dim(),
        out.display()
    );
    Ok(())
}

fn prompt_tune(s: &mut Session, a: PromptTuneArgs) -> Result<()> {
    let model = load_backbone(s)?;
    if let Some(seed) = a.seed {
        s.cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        s.cfg.prompt.epochs = e;
    }
    check(&s.cfg)?;
    let graph = s.load_graph(&a.graph)?;
    let labels = s.labels(&a.task)?;
    let task = PromptTask::from_backbone(&model, &graph, &labels)?;
    let baseline = frozen_head_mse(&task.embeddings, &task.targets)?;
    let (state, log) = tune_prompt(&task, &s.cfg.prompt, s.cfg.seed)?;
    state.save(&s.path(&s.cfg.paths.prompt), &s.hash())?;
    let values = learnable_embeddings(&model, &graph, &state)?;
    let emb = EmbeddingMatrix::new(graph.region_ids(), values, EmbeddingSource::Learnable)?;
    let out = s.embedding_file("learnable");
    emb.save(&out, &s.hash())?;
    s.record("prompt-tune")?;
    println!(
        "prompt-tune: task {}, {} regions, frozen-head MSE {baseline:.6}, prompted MSE {:.6} (iterate {} of {}) -> {}",
        labels.name,
        task.len(),
        log.best_mse(),
        log.best,
        log.mse.len() - 1,
        out.display()
    );
    Ok(())
}

fn eval(s: &mut Session, a: EvalArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        s.cfg.seed = seed;
    }
    if let Some(v) = a.alpha {
        s.cfg.eval.alpha = v;
    }
    if let Some(v) = a.folds {
        s.cfg.eval.folds = v;
    }
    if let Some(v) = a.ratio {
        s.cfg.eval.few_shot_ratio = v;
    }
    if let Some(v) = a.repeats {
        s.cfg.eval.few_shot_repeats = v;
    }
    if let Some(src) = &a.source {
        s.cfg.embed.source = src.clone();
    }
    let labels = s.labels(&a.task)?;

    // ablations retrain; otherwise embeddings come from disk
    let mut model = None;
    let emb = if a.ablation.any() {
        a.ablation.apply(&mut s.cfg.pretrain);
        check(&s.cfg)?;
        let (m, _) = train_model(s, &a.graph, None)?;
        let graph = s.load_graph(&a.graph)?;
        let e = build_embeddings(&EmbeddingSource::Pretrained, &m, &graph, None, s.cfg.embed.seed)?;
        model = Some(m);
        e
    } else {
        check(&s.cfg)?;
        let path = a
            .embeddings
            .clone()
            .unwrap_or_else(|| s.embedding_file(&s.cfg.embed.source));
        EmbeddingMatrix::load(&path)?
    };
    let (cfg, seed) = (&s.cfg.eval, s.cfg.seed);
    let mut rep = match a.protocol {
        Protocol::Kfold => kfold_eval(&emb, &labels, cfg.folds, seed, cfg.alpha)?,
        Protocol::FewShot => few_shot_eval(&emb, &labels, cfg.few_shot_ratio, cfg.few_shot_repeats, seed, cfg.alpha)?,
        Protocol::ZeroShot => {
            let dst_labels = Labels::load(a.target_labels.as_deref().ok_or_else(|| {
                Error::InvalidArgument("zero-shot needs --target-labels".into())
            })?)?;
            let dst = match (&a.target_embeddings, &a.target_graph) {
                (Some(p), _) => EmbeddingMatrix::load(p)?,
                (None, Some(g)) => {
                    let m = match model.take() {
                        Some(m) => m,
                        None => load_backbone(s)?,
                    };
                    let graph = load_graph_dir(g, &s.cfg.graph)?;
                    build_embeddings(&emb.source, &m, &graph, None, s.cfg.embed.seed)?
                }
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "zero-shot needs --target-embeddings or --target-graph".into(),
                    ))
                }
            };
            let probe = ProbedLabels::new(&dst_labels);
            zero_shot_eval((&emb, &labels), &dst, &probe, s.cfg.eval.alpha)?
        }
    };
    if a.ablation.any() {
        rep.source = format!("{}{}", rep.source, a.ablation.label());
    }
    rep.meta.insert("config_hash".into(), s.hash());
    let dir = s.path(&s.cfg.paths.reports);
    let stem = format!("{}__{}__{}", rep.protocol, rep.task, rep.source.replace([':', '/'], "_"));
    EvalReport::save_all(std::slice::from_ref(&rep), &dir.join(format!("{stem}.csv")), &s.hash())?;
    let json = serde_json::to_string_pretty(&rep).expect("report serializes");
    let jpath = dir.join(format!("{stem}.json"));
    fs::write(&jpath, json).map_err(|e| Error::io(&jpath, e))?;
    s.record("eval")?;
    print!("{}", EvalReport::table(std::slice::from_ref(&rep)));
    Ok(())
}

fn report(s: &Session, a: ReportArgs) -> Result<()> {
    let dir = s.or_default(&a.reports, &s.cfg.paths.reports);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<EvalReport>(&text).map_err(|e| Error::Parse {
                file: p.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if reports.is_empty() {
        return Err(Error::InvalidArgument(format!("no reports in {}", dir.display())));
    }
    let out = s.or_default(&a.out, Path::new(""));
    let table = EvalReport::table(&reports);
    EvalReport::save_all(&reports, &out.join("report.csv"), &s.hash())?;
    let tpath = out.join("report.txt");
    fs::write(&tpath, format!("# {}\n{table}", s.stamp())).map_err(|e| Error::io(&tpath, e))?;
    print!("{table}");
    Ok(())
}
