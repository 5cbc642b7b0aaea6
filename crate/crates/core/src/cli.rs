//! Command-line front end. `run_command` returns the process exit code:
//! 0 on success, 1 for input or usage errors, 2 for numerical failures.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::attention::{multi_head_attend, AttentionParams};
use crate::error::{Error, Result};
use crate::gcpool::gcpool;
use crate::graph::{build_graph, connected_components, filter_components};
use crate::io::{self, FeaturesFile, GraphFile, ParamsFile, PartitionFile, SceneSpec};
use crate::oracle;
use crate::repgn::{repgn_forward, repgn_forward_no_gcpool, NormMode, RepGnConfig};
use crate::spectral::{brute_force_ncut, ncut_value, recursive_ncut, two_way_ncut, EigenConfig};

#[derive(Debug, Parser)]
#[command(
    name = "repgn",
    version,
    about = "Relational proposal graphs: IoU graphs, normalized-cut pooling, graph attention"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or inspect proposal graphs.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Normalized-cut partitioning.
    #[command(subcommand)]
    Cut(CutCmd),
    /// Graph-cut pooling.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Graph attention over the proposal graph (no pooling, no normalization).
    Attend(PipelineArgs),
    /// Full refinement pipeline.
    Forward {
        #[command(flatten)]
        args: PipelineArgs,
        /// Skip graph-cut pooling.
        #[arg(long)]
        no_gcpool: bool,
    },
    /// Self-checks against independent oracles.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Generate a synthetic proposal document.
    Gen(GenArgs),
    /// Attention parameter files.
    #[command(subcommand)]
    Params(ParamsCmd),
}

#[derive(Debug, Subcommand)]
enum GraphCmd {
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        iou_thr: f64,
        #[arg(long)]
        output: PathBuf,
    },
    Components {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        min_size: usize,
        /// Threshold used when the input is a proposal document.
        #[arg(long, default_value_t = 0.3)]
        iou_thr: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum CutCmd {
    Ncut {
        #[arg(long)]
        input: PathBuf,
        /// Split recursively while the two-way Ncut stays at or below this.
        #[arg(long)]
        stop_ncut: Option<f64>,
        #[arg(long, default_value_t = 1)]
        min_part: usize,
        /// Exhaustive search over all bipartitions (at most 15 nodes).
        #[arg(long)]
        brute_force: bool,
        #[arg(long, default_value_t = 0.3)]
        iou_thr: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum PoolCmd {
    Gcpool {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum OracleCmd {
    Ncut {
        #[arg(long, default_value_t = 10)]
        max_n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Grad {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum ParamsCmd {
    /// Write the seeded default attention stack for features of `dim`.
    Init {
        #[arg(long)]
        dim: usize,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON file with configuration fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iou_thr: Option<f64>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    stop_ncut: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, value_parser = ["literal", "moment_match"])]
    norm_mode: Option<String>,
    #[arg(long)]
    dense_attention: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RepGnConfig> {
        let mut cfg = match &self.config {
            Some(p) => io::load_config(p)?,
            None => RepGnConfig::default(),
        };
        if let Some(v) = self.iou_thr {
            cfg.iou_thr = v;
        }
        if let Some(v) = self.min_size {
            cfg.min_size = v;
        }
        if let Some(v) = self.stop_ncut {
            cfg.stop_ncut = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.heads {
            cfg.head_count = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = &self.norm_mode {
            cfg.norm_mode = if v == "literal" { NormMode::Literal } else { NormMode::MomentMatch };
        }
        if self.dense_attention {
            cfg.dense_attention = true;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Attention parameters; seeded defaults are used when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    output: PathBuf,
    /// Write the run report here instead of standard error.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Feature dimension; 0 omits features (spatial descriptors are used).
    #[arg(long, default_value_t = 0)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    width: u32,
    #[arg(long, default_value_t = 1000)]
    height: u32,
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    command: &'a str,
    config: &'a RepGnConfig,
    proposals: usize,
    feature_dim: usize,
    edges: usize,
    components: Option<usize>,
    parts: Option<usize>,
    filtered: Option<usize>,
    coarse_nodes: usize,
    stage_ms: Vec<(String, f64)>,
    total_ms: f64,
    output_sha256: String,
}

fn emit(output: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match output {
        Some(p) => io::write_json(p, value).map(|_| ()),
        None => {
            print!("{}", String::from_utf8(io::to_json_bytes(value)).expect("JSON is UTF-8"));
            Ok(())
        }
    }
}

fn emit_report(path: Option<&Path>, report: &RunReport<'_>) -> Result<()> {
    match path {
        Some(p) => io::write_json(p, report).map(|_| ()),
        None => {
            eprintln!("{}", serde_json::to_string(report).expect("report serializes"));
            Ok(())
        }
    }
}

fn load_layers(path: Option<&Path>, cfg: &RepGnConfig, dim: usize) -> Result<Vec<AttentionParams>> {
    match path {
        Some(p) => io::load_params(p),
        None => Ok(cfg.init_layers(dim)),
    }
}

fn run_pipeline(args: &PipelineArgs, name: &str, full: Option<bool>) -> Result<()> {
    let start = Instant::now();
    let cfg = args.config.resolve()?;
    let t = Instant::now();
    let props = io::load_proposals(&args.input)?;
    let load_ms = t.elapsed().as_secs_f64() * 1e3;
    let (m, d) = props.features.dim();
    let layers = load_layers(args.params.as_deref(), &cfg, d)?;

    let (features, ids, mut diag) = match full {
        None => {
            let t = Instant::now();
            let g = build_graph(&props.boxes, props.features.clone(), cfg.iou_thr)?;
            let graph_ms = t.elapsed().as_secs_f64() * 1e3;
            let t = Instant::now();
            let opts = cfg.attention_options();
            let mut x = props.features.clone();
            for layer in &layers {
                x = multi_head_attend(x.view(), layer, &g, &opts)?;
            }
            let diag = crate::repgn::Diagnostics {
                edges: g.edges().len(),
                stage_ms: vec![("graph".into(), graph_ms), ("attention".into(), t.elapsed().as_secs_f64() * 1e3)],
                ..Default::default()
            };
            (x, g.node_ids().to_vec(), diag)
        }
        Some(with_pool) => {
            let r = if with_pool {
                repgn_forward(&props.boxes, props.features.view(), &layers, &cfg)?
            } else {
                repgn_forward_no_gcpool(&props.boxes, props.features.view(), &layers, &cfg)?
            };
            (r.features, r.original_ids, r.diagnostics)
        }
    };
    diag.stage_ms.insert(0, ("load".into(), load_ms));

    let t = Instant::now();
    let sha = io::write_json(&args.output, &FeaturesFile::new(ids, &features))?;
    diag.stage_ms.push(("write".into(), t.elapsed().as_secs_f64() * 1e3));

    let report = RunReport {
        command: name,
        config: &cfg,
        proposals: m,
        feature_dim: d,
        edges: diag.edges,
        components: diag.pool.as_ref().map(|p| p.components),
        parts: diag.pool.as_ref().map(|p| p.parts),
        filtered: diag.pool.as_ref().map(|p| p.filtered_stage1 + p.filtered_stage2),
        coarse_nodes: diag.coarse_nodes,
        stage_ms: diag.stage_ms,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        output_sha256: sha,
    };
    emit_report(args.report.as_deref(), &report)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Graph(GraphCmd::Build { input, iou_thr, output }) => {
            let p = io::load_proposals(&input)?;
            let g = build_graph(&p.boxes, p.features, iou_thr)?;
            io::write_json(&output, &GraphFile::from(&g))?;
            Ok(())
        }
        Command::Graph(GraphCmd::Components { input, min_size, iou_thr, output }) => {
            if min_size == 0 {
                return Err(Error::invalid("--min-size must be at least 1"));
            }
            let g = io::load_graph(&input, iou_thr)?;
            let comps = connected_components(&g);
            let (kept, removed) = filter_components(&g, min_size);
            emit(
                output.as_deref(),
                &json!({
                    "labels": comps.labels,
                    "component_sizes": comps.component_sizes,
                    "kept": kept.node_ids(),
                    "removed": removed,
                }),
            )
        }
        Command::Cut(CutCmd::Ncut { input, stop_ncut, min_part, brute_force, iou_thr, output }) => {
            let g = io::load_graph(&input, iou_thr)?;
            let eig = EigenConfig::default();
            let (p, report) = if brute_force {
                let (p, r) = brute_force_ncut(&g)?;
                (p, Some(r))
            } else if let Some(stop) = stop_ncut {
                if !(stop >= 0.0) {
                    return Err(Error::invalid("--stop-ncut must be non-negative"));
                }
                let p = recursive_ncut(&g, stop, min_part, &eig)?;
                let r = ncut_value(&g, &p).ok();
                (p, r)
            } else {
                let (p, r) = two_way_ncut(&g, &eig)?;
                (p, Some(r))
            };
            emit(
                output.as_deref(),
                &json!({
                    "labels": p.labels(),
                    "coarse": [],
                    "ncut": report.as_ref().map(|r| r.ncut_value),
                    "per_set": report.as_ref().map(|r| r.per_set.iter().map(|s| (s.cut, s.assoc)).collect::<Vec<_>>()),
                }),
            )
        }
        Command::Pool(PoolCmd::Gcpool { input, config, output }) => {
            let cfg = config.resolve()?;
            let p = io::load_proposals(&input)?;
            let g = build_graph(&p.boxes, p.features, cfg.iou_thr)?;
            let out = gcpool(&g, &cfg.pool_config())?;
            io::write_json(&output, &PartitionFile::from(&out))?;
            eprintln!("{}", serde_json::to_string(&out.stats).expect("stats serialize"));
            Ok(())
        }
        Command::Attend(args) => run_pipeline(&args, "attend", None),
        Command::Forward { args, no_gcpool } => run_pipeline(&args, "forward", Some(!no_gcpool)),
        Command::Oracle(OracleCmd::Ncut { max_n, trials, seed }) => {
            let s = oracle::ncut_oracle(trials, max_n, seed, 1e-10)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
            if s.passed() {
                Ok(())
            } else {
                Err(Error::Numerical(format!(
                    "{} of {} instances disagree with exhaustive search",
                    s.trials - s.agreements,
                    s.trials
                )))
            }
        }
        Command::Oracle(OracleCmd::Grad { trials, seed }) => {
            let s = oracle::grad_oracle(trials, seed, 1e-5)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
            if s.passed() {
                Ok(())
            } else {
                Err(Error::Numerical(format!("max relative gradient error {:e}", s.max_rel_error)))
            }
        }
        Command::Gen(a) => {
            let spec = SceneSpec {
                clusters: a.clusters,
                per_cluster: a.per_cluster,
                seed: a.seed,
                width: a.width,
                height: a.height,
                dim: a.dim,
                jitter: a.jitter,
            };
            io::write_json(&a.output, &io::generate_scene(&spec)?)?;
            Ok(())
        }
        Command::Params(ParamsCmd::Init { dim, config, output }) => {
            let cfg = config.resolve()?;
            io::write_json(&output, &ParamsFile::from_layers(&cfg.init_layers(dim)))?;
            Ok(())
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return 1;
        }
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
