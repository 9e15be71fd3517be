//! `se-mapper`: train, apply and check instruction mappings for a
//! streaming CGRA.
//!
//! Exit codes: 0 success, 1 mapping failed validation, 2 usage or
//! configuration error, 3 mapping hit a dead end.

mod config;
mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use se_mapper::baselines::{
    brute_force_optimal, greedy_schedule, simulated_annealing, BruteForceLimits, BaselineError,
};
use se_mapper::device::{validate_mapping, Action, DeviceConfig, Mapping};
use se_mapper::env::{run_episode, EnvOptions, MappingEnv};
use se_mapper::ir::{fixtures, parse_ir, random_graph, serialize_ir, DataflowGraph, GeneratorParams, IrGraph};
use se_mapper::policy::{load_checkpoint, ActorCritic, GraphTensors, ModelPolicy, SelectMode};
use se_mapper::ppo::{finetune, train, IterationMetrics, Trainer};

use config::{Overrides, RunConfig};
use plot::Series;

const VALIDATION_FAILED: u8 = 1;
const USAGE: u8 = 2;
const DEAD_END: u8 = 3;

#[derive(Parser)]
#[command(name = "se-mapper", version, about = "Map dataflow instructions onto a streaming CGRA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on one or more graphs.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variant: Variant,
        /// IR JSON files; defaults to `paths.graphs` from the config.
        graphs: Vec<PathBuf>,
    },
    /// Map a graph with a trained checkpoint (greedy decoding).
    Map {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mapping JSON whose placements are kept verbatim.
        #[arg(long)]
        partial: Option<PathBuf>,
        /// Where to write the mapping; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        graph: PathBuf,
    },
    /// Continue training a checkpoint on a single graph.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        graph: PathBuf,
    },
    /// Check a mapping against the hardware rules and timing.
    Validate { graph: PathBuf, mapping: PathBuf },
    /// Run RL (GGA and MLP), annealing, greedy and, where small enough,
    /// exhaustive search on each graph.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Generate random graphs of these sizes as well.
        #[arg(long, value_delimiter = ',')]
        random_nodes: Vec<usize>,
        /// Write attention scores for every placed node.
        #[arg(long)]
        dump_attention: bool,
        graphs: Vec<PathBuf>,
    },
    /// Write a random or built-in graph as IR JSON.
    Gen {
        #[arg(long, required_unless_present = "fixture")]
        nodes: Option<usize>,
        #[arg(long, env = config::SEED_ENV, default_value_t = 0)]
        seed: u64,
        /// `distance-calc` or `fft-like`.
        #[arg(long, conflicts_with = "nodes")]
        fixture: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tiles: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    ii: Option<usize>,
    /// Rollout threads.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Variant {
    /// Plain MLP policy without the graph encoder.
    #[arg(long)]
    no_gga: bool,
    /// Let the agent pick illegal slices and penalize them instead.
    #[arg(long)]
    no_mask: bool,
    /// Visit nodes in a fresh random order each episode.
    #[arg(long)]
    random_order: bool,
}

impl Common {
    fn resolve(&self, variant: Option<&Variant>) -> Result<RunConfig> {
        let o = Overrides {
            seed: self.seed,
            tiles: self.tiles,
            slots: self.slots,
            ii: self.ii,
            workers: self.workers,
            epochs: self.epochs,
            out_dir: self.out.clone(),
            no_gga: variant.is_some_and(|v| v.no_gga),
            no_mask: variant.is_some_and(|v| v.no_mask),
            random_order: variant.is_some_and(|v| v.random_order),
        };
        RunConfig::load(self.config.as_deref())?.resolve(&o)
    }
}

fn read_graph(path: &Path) -> Result<DataflowGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ir = parse_ir(&text).with_context(|| format!("parsing {}", path.display()))?;
    DataflowGraph::new(ir).with_context(|| format!("validating {}", path.display()))
}

fn graph_paths(cli: &[PathBuf], cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let paths = if cli.is_empty() { cfg.paths.graphs.clone() } else { cli.to_vec() };
    if paths.is_empty() {
        bail!("no graphs given: pass IR files or set paths.graphs");
    }
    Ok(paths)
}

fn curve_plot(path: &Path, title: &str, metrics: &[IterationMetrics]) -> Result<()> {
    let mean = metrics.iter().map(|m| (m.iter as f64, m.mean_return)).collect();
    let best = metrics.iter().filter(|m| m.best_return.is_finite()).map(|m| (m.iter as f64, m.best_return)).collect();
    plot::line_chart(
        path,
        title,
        "epoch",
        "return",
        &[Series { label: "mean return".into(), points: mean }, Series { label: "best return".into(), points: best }],
    )
}

fn report_best(best: Option<&(usize, Mapping)>, graphs: &[Arc<DataflowGraph>], device: &DeviceConfig) -> u8 {
    match best {
        Some((gi, m)) => {
            let report = validate_mapping(device, &graphs[*gi], m);
            println!(
                "best mapping: graph {} total_cycles {} ({})",
                graphs[*gi].name(),
                m.total_cycles.map_or("-".into(), |c| c.to_string()),
                if report.is_valid() { "valid" } else { "INVALID" }
            );
            if report.is_valid() {
                0
            } else {
                VALIDATION_FAILED
            }
        }
        None => {
            println!("no complete mapping found");
            DEAD_END
        }
    }
}

fn cmd_train(common: &Common, variant: &Variant, graphs: &[PathBuf]) -> Result<u8> {
    let mut cfg = common.resolve(Some(variant))?;
    let out = cfg.out_dir()?.to_path_buf();
    cfg.paths.graphs = graph_paths(graphs, &cfg)?;
    let graphs: Vec<Arc<DataflowGraph>> =
        cfg.paths.graphs.iter().map(|p| read_graph(p).map(Arc::new)).collect::<Result<_>>()?;
    cfg.echo(&out)?;
    let outcome = train::<f32>(graphs.clone(), &cfg.device, &cfg.model, &cfg.train, Some(&out))?;
    curve_plot(&out.join("reward_curve.svg"), "training reward", &outcome.metrics)?;
    println!("best return {:.1}", outcome.best_return);
    Ok(report_best(outcome.best_mapping.as_ref(), &graphs, &cfg.device))
}

fn cmd_finetune(common: &Common, checkpoint: &Path, graph: &Path) -> Result<u8> {
    let cfg = common.resolve(None)?;
    let out = cfg.out_dir()?.to_path_buf();
    let ck = load_checkpoint::<f32>(checkpoint, &cfg.device, None)?;
    let g = Arc::new(read_graph(graph)?);
    cfg.echo(&out)?;
    let outcome = finetune(ck, Arc::clone(&g), &cfg.device, &cfg.train, Some(&out))?;
    curve_plot(&out.join("reward_curve.svg"), "finetuning reward", &outcome.metrics)?;
    println!("best return {:.1}", outcome.best_return);
    Ok(report_best(outcome.best_mapping.as_ref(), &[g], &cfg.device))
}

fn cmd_map(common: &Common, checkpoint: &Path, partial: Option<&Path>, output: Option<&Path>, graph: &Path) -> Result<u8> {
    let cfg = common.resolve(None)?;
    let ck = load_checkpoint::<f32>(checkpoint, &cfg.device, None)?;
    let g = Arc::new(read_graph(graph)?);
    let mut env = MappingEnv::new(Arc::clone(&g), cfg.device.clone(), EnvOptions::default())?;
    if let Some(p) = partial {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let pinned = Mapping::from_json(&text).with_context(|| format!("parsing {}", p.display()))?;
        env.pin(pinned.placements.iter().map(|(&n, m)| (n, Action::new(m.tile, m.slot))))
            .with_context(|| format!("applying {}", p.display()))?;
    }
    let mut policy = ModelPolicy::new(&ck.model, SelectMode::Greedy);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let ep = run_episode(&mut policy, &mut env, cfg.train.seed, &mut rng)?;
    let text = ep.mapping.to_json();
    match output {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if ep.dead_end {
        eprintln!("dead end after placing {} of {} nodes", ep.mapping.placements.len(), g.len());
        return Ok(DEAD_END);
    }
    eprintln!("total_cycles {}", ep.total_cycles.unwrap_or_default());
    Ok(0)
}

fn cmd_validate(graph: &Path, mapping: &Path) -> Result<u8> {
    let g = read_graph(graph)?;
    let text = std::fs::read_to_string(mapping).with_context(|| format!("reading {}", mapping.display()))?;
    let m = Mapping::from_json(&text).with_context(|| format!("parsing {}", mapping.display()))?;
    let report = validate_mapping(&m.device_config(), &g, &m);
    print!("{}", report.to_json());
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(if report.is_valid() { 0 } else { VALIDATION_FAILED })
}

fn cmd_gen(nodes: Option<usize>, seed: u64, fixture: Option<&str>, out: &Path) -> Result<u8> {
    let ir: IrGraph = match (fixture, nodes) {
        (Some("distance-calc"), _) => fixtures::distance_calc(),
        (Some("fft-like"), _) => fixtures::fft_like(),
        (Some(other), _) => bail!("unknown fixture {other:?}; expected distance-calc or fft-like"),
        (None, Some(0)) => bail!("--nodes must be at least 1"),
        (None, Some(n)) => {
            let r = random_graph(n, seed, &GeneratorParams::default());
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            r.graph
        }
        (None, None) => bail!("pass --nodes or --fixture"),
    };
    std::fs::write(out, serialize_ir(&ir)).with_context(|| format!("writing {}", out.display()))?;
    Ok(0)
}

/// Best cycles of one method on one graph, or why it has none.
type Cell = Result<u64, String>;

fn cell_text(c: &Cell) -> String {
    c.as_ref().map_or_else(|_| String::new(), |v| v.to_string())
}

fn dump_attention(dir: &Path, name: &str, model: &ActorCritic<f32>, g: &Arc<DataflowGraph>, device: &DeviceConfig) -> Result<()> {
    let tensors = GraphTensors::new(g);
    let mut env = MappingEnv::new(Arc::clone(g), device.clone(), EnvOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ep = run_episode(&mut ModelPolicy::new(model, SelectMode::Greedy), &mut env, 0, &mut rng)?;
    let mut placed = Vec::new();
    let mut matrix = Vec::new();
    for t in &ep.trajectory {
        let Some(node) = t.observation.current_node else { continue };
        let (_, attn) = model.gga_forward(&tensors, node)?;
        matrix = attn.rows().into_iter().map(|r| r.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>()).collect();
        placed.push(json!({ "node": node, "scores": matrix[node] }));
    }
    let doc = json!({ "graph": g.name(), "matrix": matrix, "placed": placed });
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&doc)? + "\n")?;
    plot::heat_map(&dir.join(format!("{name}.svg")), &format!("attention: {}", g.name()), &matrix)
}

fn cmd_compare(common: &Common, random_nodes: &[usize], attention: bool, graphs: &[PathBuf]) -> Result<u8> {
    let mut cfg = common.resolve(None)?;
    let out = cfg.out_dir()?.to_path_buf();
    let mut named: Vec<(String, Arc<DataflowGraph>)> = Vec::new();
    if !graphs.is_empty() {
        cfg.paths.graphs = graphs.to_vec();
    }
    for p in &cfg.paths.graphs {
        let stem = p.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned());
        named.push((stem, Arc::new(read_graph(p)?)));
    }
    for (i, &n) in random_nodes.iter().enumerate() {
        if n == 0 {
            bail!("--random-nodes sizes must be at least 1");
        }
        let seed = cfg.train.seed.wrapping_add(i as u64);
        named.push((format!("random-{n}-{seed}"), Arc::new(DataflowGraph::new(random_graph(n, seed, &GeneratorParams::default()).graph)?)));
    }
    if named.is_empty() {
        bail!("no graphs given: pass IR files, --random-nodes, or set paths.graphs");
    }
    cfg.echo(&out)?;
    if attention {
        std::fs::create_dir_all(out.join("attention"))?;
    }

    let methods = ["rl_gga", "rl_mlp", "sa", "greedy", "brute_force"];
    let mut table = format!("graph,nodes,{},notes\n", methods.join(","));
    let mut by_method: Vec<Vec<(f64, f64)>> = vec![Vec::new(); methods.len()];
    for (name, g) in &named {
        let mut cells: Vec<Cell> = Vec::new();
        let mut curves = Vec::new();
        for use_gga in [true, false] {
            let model_cfg = se_mapper::policy::ModelConfig { use_gga, ..cfg.model.clone() };
            let model = ActorCritic::<f32>::new(model_cfg, &cfg.device, cfg.train.seed)?;
            let mut t = Trainer::new(model, vec![Arc::clone(g)], cfg.device.clone(), cfg.train.clone())?;
            t.run(None)?;
            cells.push(t.best_cycles().ok_or_else(|| "no complete mapping".to_string()));
            let label = if use_gga { "GGA" } else { "MLP" };
            curves.push(Series {
                label: label.into(),
                points: t.metrics().iter().filter(|m| m.best_return.is_finite()).map(|m| (m.iter as f64, m.best_return)).collect(),
            });
            if use_gga && attention {
                dump_attention(&out.join("attention"), name, &t.model, g, &cfg.device)?;
            }
        }
        cells.push(simulated_annealing(g, &cfg.device, &cfg.sa).map(|r| r.best_cycles).map_err(|e| e.to_string()));
        cells.push(greedy_schedule(g, &cfg.device).map(|m| m.total_cycles.unwrap_or_default()).map_err(|e| e.to_string()));
        cells.push(match brute_force_optimal(g, &cfg.device, BruteForceLimits { max_states: 1e6 }) {
            Ok(r) => Ok(r.optimal_cycles),
            Err(BaselineError::TooLarge { .. }) => Err("brute force skipped: too large".into()),
            Err(e) => Err(e.to_string()),
        });
        let notes: Vec<String> = methods
            .iter()
            .zip(&cells)
            .filter_map(|(m, c)| c.as_ref().err().map(|e| format!("{m}: {}", e.replace([',', ';'], " "))))
            .collect();
        let _ = writeln!(
            table,
            "{name},{},{},{}",
            g.len(),
            cells.iter().map(cell_text).collect::<Vec<_>>().join(","),
            notes.join("; ")
        );
        for (i, c) in cells.iter().enumerate() {
            if let Ok(v) = c {
                by_method[i].push((g.len() as f64, *v as f64));
            }
        }
        plot::line_chart(&out.join(format!("best_return_{name}.svg")), &format!("best return: {name}"), "epoch", "best return", &curves)?;
        println!("{name}: {}", methods.iter().zip(&cells).map(|(m, c)| format!("{m}={}", cell_text(c))).collect::<Vec<_>>().join(" "));
    }
    std::fs::write(out.join("comparison.csv"), table)?;
    let series: Vec<Series> = methods
        .iter()
        .zip(by_method)
        .map(|(m, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label: (*m).into(), points: pts }
        })
        .collect();
    plot::line_chart(&out.join("cycles_vs_nodes.svg"), "best cycles by graph size", "nodes", "total cycles", &series)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Train { common, variant, graphs } => cmd_train(common, variant, graphs),
        Command::Map { common, checkpoint, partial, output, graph } => {
            cmd_map(common, checkpoint, partial.as_deref(), output.as_deref(), graph)
        }
        Command::Finetune { common, checkpoint, graph } => cmd_finetune(common, checkpoint, graph),
        Command::Validate { graph, mapping } => cmd_validate(graph, mapping),
        Command::Compare { common, random_nodes, dump_attention, graphs } => {
            cmd_compare(common, random_nodes, *dump_attention, graphs)
        }
        Command::Gen { nodes, seed, fixture, out } => cmd_gen(*nodes, *seed, fixture.as_deref(), out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE)
        }
    }
}
