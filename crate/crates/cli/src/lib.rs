//! `wsdo` command implementations.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use wsdo_core::generate::{generate_instance, GenParams};
use wsdo_core::graph::{build_route_graph, RouteGraph};
use wsdo_core::model::{Instance, Layout, OrderLine};
use wsdo_core::nhatc::warehouse::{self, decode_assignment, default_frozen, warehouse_graph, WarehouseConfig};
use wsdo_core::nhatc::{
    configure_active_set, nhatc_solve_with, ConvergenceReport, InProcessExecutor, NhatcOptions, NhatcStatus, NodeExecutor,
    ALL_KINDS,
};
use wsdo_core::routing::{Route, Router, Sequencing};
use wsdo_core::sim::{compare_policies_with, simulate_day_with, PolicyBundle, SimOptions, SummaryRow};
use wsdo_net::{worker_serve, NetError, RemoteExecutor, WorkerConfig, WorkerRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Infeasible(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Infeasible(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<wsdo_core::Error> for Failure {
    fn from(e: wsdo_core::Error) -> Self {
        use wsdo_core::Error as E;
        match e {
            E::Capacity { .. }
            | E::LayoutInfeasible { .. }
            | E::InfeasibleParallelism { .. }
            | E::InfeasibleDiscretization { .. }
            | E::IsolatedSlot(_)
            | E::Unreachable { .. }
            | E::UnreachableSlot(_)
            | E::DegenerateLabels
            | E::Solver(_) => Failure::Infeasible(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(m) => Failure::Usage(m),
            e => Failure::Io(e.to_string()),
        }
    }
}

type Outcome = Result<i32, Failure>;

#[derive(Debug, Parser)]
#[command(name = "wsdo", version, about = "Warehouse system design optimization")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic instance.
    Gen(GenArgs),
    /// Coordinate the subsystems and write the convergence report.
    Optimize(OptimizeArgs),
    /// Simulate one shift under a policy bundle.
    Evaluate(EvaluateArgs),
    /// Simulate the baseline and optimized bundles on the same instance.
    Compare(CompareArgs),
    /// Serve node solves over TCP.
    Worker(WorkerArgs),
    /// Draw the layout and one picking route as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Generator parameters (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "instance.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Run configuration (JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma list of layout, routing, slotting, reassignment, classification.
    #[arg(long, value_delimiter = ',')]
    pub active: Option<Vec<String>>,
    /// Worker registry (JSON list of {host, port, capabilities}).
    #[arg(long)]
    pub workers: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyName {
    Baseline,
    Optimized,
    OptimizedLayout,
}

impl PolicyName {
    fn bundle(self) -> PolicyBundle {
        match self {
            PolicyName::Baseline => PolicyBundle::baseline(),
            PolicyName::Optimized => PolicyBundle::optimized(),
            PolicyName::OptimizedLayout => PolicyBundle {
                layout: wsdo_core::sim::LayoutPolicy::Optimized,
                ..PolicyBundle::optimized()
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Instance file; the default benchmark for `--seed` when omitted.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "optimized")]
    pub policy: PolicyName,
    /// Policy bundle (JSON); overrides --policy.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Simulation options (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long, default_value = "127.0.0.1:7001")]
    pub bind: String,
    /// Node kinds this worker accepts; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub capabilities: Option<Vec<String>>,
    /// Fault injection: serve this many solves, then drop all connections on the next.
    #[arg(long)]
    pub fail_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Order whose route is drawn; the first order when omitted.
    #[arg(long)]
    pub order: Option<u64>,
    #[arg(long, default_value = "layout.svg")]
    pub out: PathBuf,
}

/// Settings for `optimize`; every field is optional and flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub instance: Option<PathBuf>,
    pub active: Option<Vec<String>>,
    pub tol_c: Option<f64>,
    pub max_outer: Option<usize>,
    pub workers: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub warehouse: Option<WarehouseConfig>,
    /// Fixed responses by link name for excluded subsystems.
    pub frozen: BTreeMap<String, Vec<f64>>,
}

impl RunConfig {
    /// Relative paths in a config file resolve against its directory.
    fn resolve(mut self, base: &Path) -> Self {
        for p in [&mut self.instance, &mut self.workers, &mut self.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let out = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Worker(a) => cmd_worker(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match out {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn load_instance(path: Option<&Path>, seed: u64) -> Result<Instance, Failure> {
    let inst = match path {
        Some(p) => Instance::from_json(&read_text(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => generate_instance(seed, &GenParams::default())?,
    };
    inst.validate()?;
    Ok(inst)
}

pub fn cmd_gen(a: &GenArgs) -> Outcome {
    let params: GenParams = match &a.config {
        Some(p) => read_json(p)?,
        None => GenParams::default(),
    };
    let inst = generate_instance(a.seed, &params)?;
    write_file(&a.out, inst.to_json()?.as_bytes())?;
    println!(
        "wrote {} ({} products, {} orders, {} slots)",
        a.out.display(),
        inst.catalog.len(),
        inst.history.len(),
        inst.layout.slot_total()
    );
    Ok(EXIT_OK)
}

fn parse_active(ids: &[String]) -> Result<Vec<String>, Failure> {
    let mut out = Vec::new();
    for id in ids.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if !warehouse::SUBSYSTEMS.contains(&id) {
            return Err(Failure::Usage(format!(
                "unknown subsystem {id}; expected one of {}",
                warehouse::SUBSYSTEMS.join(", ")
            )));
        }
        if !out.iter().any(|o| o == id) {
            out.push(id.to_string());
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("--active lists no subsystem".into()));
    }
    Ok(out)
}

pub fn cmd_optimize(a: &OptimizeArgs) -> Outcome {
    let cfg = match &a.config {
        Some(p) => read_json::<RunConfig>(p)?.resolve(p.parent().unwrap_or(Path::new("."))),
        None => RunConfig::default(),
    };
    let seed = a.seed.or(cfg.seed).unwrap_or(42);
    let defaults = NhatcOptions::default();
    let options = NhatcOptions {
        tol_c: a.tol.or(cfg.tol_c).unwrap_or(defaults.tol_c),
        max_outer: a.max_outer.or(cfg.max_outer).unwrap_or(defaults.max_outer),
        seed,
        ..defaults
    };
    if !(options.tol_c > 0.0) || options.max_outer == 0 {
        return Err(Failure::Usage("--tol must be positive and --max-outer at least 1".into()));
    }
    let active = parse_active(
        a.active
            .as_deref()
            .or(cfg.active.as_deref())
            .unwrap_or(&warehouse::SUBSYSTEMS.map(String::from)),
    )?;
    let out = a.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let inst = load_instance(a.instance.as_deref().or(cfg.instance.as_deref()), seed)?;

    let registry = match a.workers.as_deref().or(cfg.workers.as_deref()) {
        Some(p) => WorkerRegistry::load(p)?,
        None => WorkerRegistry::from_env()?.unwrap_or_default(),
    };
    let wcfg = WarehouseConfig { seed, ..cfg.warehouse.clone().unwrap_or_default() };
    let graph = warehouse_graph(&inst, &wcfg)?;
    let mut frozen = default_frozen(&inst, &wcfg)?;
    frozen.extend(cfg.frozen.clone());
    let set = configure_active_set(&graph, &active, &frozen)?;

    let mut remote;
    let mut local = InProcessExecutor;
    let executor: &mut dyn NodeExecutor = if registry.is_empty() {
        &mut local
    } else {
        log::info!("dispatching to {} workers", registry.len());
        remote = RemoteExecutor::new(&registry);
        &mut remote
    };
    let report = nhatc_solve_with(&graph, &set, &options, executor)?;
    write_json(&out.join("report.json"), &report)?;
    print_report(&report);

    let updated = updated_instance(&inst, &report);
    let code = match (&updated, report.status) {
        (Ok(u), status) => {
            write_file(&out.join("instance.json"), u.to_json()?.as_bytes())?;
            if status == NhatcStatus::Converged { EXIT_OK } else { EXIT_INFEASIBLE }
        }
        (Err(e), _) => {
            eprintln!("error: the coordinated design is not a valid instance: {e}");
            EXIT_INFEASIBLE
        }
    };
    Ok(code)
}

fn print_report(r: &ConvergenceReport) {
    println!(
        "{:?} after {} outer iterations, |c|inf = {:.3e}, {:.2} s",
        r.status, r.outer_iterations, r.c_inf, r.wall_time_s
    );
    for n in r.nodes.iter().filter(|n| n.active) {
        if let Some(s) = &n.solution {
            println!("  {:<15} objective {:>14.6}  {:?}", n.id, s.objective, s.status);
        }
    }
}

/// The instance with the coordinated widths and slot assignment applied.
pub fn updated_instance(inst: &Instance, report: &ConvergenceReport) -> wsdo_core::Result<Instance> {
    let mut out = inst.clone();
    if report.node(warehouse::LAYOUT).is_some() {
        if let Some(l) = report.link(warehouse::AISLE_WIDTHS) {
            out.layout = out.layout.with_aisle_widths(&l.r)?;
        }
    }
    if report.node(warehouse::SLOTTING).is_some() {
        if let Some(l) = report.link(warehouse::SLOT_POSITIONS) {
            out.assignment = decode_assignment(inst, &l.r)?;
        }
    }
    out.validate()?;
    Ok(out)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Outcome {
    let inst = load_instance(a.instance.as_deref(), a.seed)?;
    let bundle = match &a.config {
        Some(p) => read_json(p)?,
        None => a.policy.bundle(),
    };
    let report = simulate_day_with(&inst, &bundle, a.seed, &SimOptions::default())?;
    write_json(&a.out.join("throughput.json"), &report)?;
    println!(
        "{} of {} orders completed, {:.0} m walked, {} carts",
        report.orders_completed, report.orders_offered, report.total_distance, report.parallelism
    );
    Ok(EXIT_OK)
}

pub fn cmd_compare(a: &CompareArgs) -> Outcome {
    let inst = load_instance(a.instance.as_deref(), a.seed)?;
    let opts: SimOptions = match &a.config {
        Some(p) => read_json(p)?,
        None => SimOptions::default(),
    };
    let cmp = compare_policies_with(&inst, &PolicyBundle::baseline(), &PolicyBundle::optimized(), a.seed, &opts)?;
    write_json(&a.out.join("compare.json"), &cmp)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in [SummaryRow::new("baseline", &cmp.baseline), SummaryRow::new("optimized", &cmp.optimized)] {
        w.serialize(row).map_err(|e| Failure::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
    write_file(&a.out.join("compare.csv"), &bytes)?;
    match cmp.improvement {
        Some(i) => println!(
            "baseline {} orders, optimized {} orders, improvement {:+.1}%",
            cmp.baseline_completed,
            cmp.optimized_completed,
            100.0 * i
        ),
        None => println!("baseline completed no orders; optimized {}", cmp.optimized_completed),
    }
    Ok(EXIT_OK)
}

pub fn cmd_worker(a: &WorkerArgs) -> Outcome {
    let caps = match &a.capabilities {
        Some(c) => {
            let c: Vec<String> = c.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = c.iter().find(|k| !ALL_KINDS.contains(&k.as_str())) {
                return Err(Failure::Usage(format!("unknown capability {bad}")));
            }
            c
        }
        None => ALL_KINDS.iter().map(|s| s.to_string()).collect(),
    };
    let listener = TcpListener::bind(&a.bind).map_err(|e| Failure::Io(format!("bind {}: {e}", a.bind)))?;
    let addr = listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?;
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    worker_serve(listener, WorkerConfig::new(caps).fail_after(a.fail_after))?;
    Ok(EXIT_OK)
}

pub fn cmd_plot(a: &PlotArgs) -> Outcome {
    let inst = load_instance(a.instance.as_deref(), a.seed)?;
    let graph = build_route_graph(&inst.layout, inst.params.cell_size)?;
    let order = match a.order {
        Some(id) => inst
            .history
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| Failure::Usage(format!("order {id} is not in the instance")))?,
        None => inst.history.first().ok_or_else(|| Failure::Usage("the instance has no orders".into()))?,
    };
    let slots = order
        .lines
        .iter()
        .map(|l: &OrderLine| {
            inst.assignment
                .get(&l.product_id)
                .ok_or_else(|| Failure::Usage(format!("product {} has no slot", l.product_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let route = Router::new(&graph).route(&slots, Sequencing::Optimized)?;
    write_file(&a.out, render_svg(&inst.layout, &graph, Some(&route)).as_bytes())?;
    println!("wrote {} (order {}, {:.1} m)", a.out.display(), order.id, route.total_distance);
    Ok(EXIT_OK)
}

const PX_PER_M: f64 = 20.0;
const MARGIN_PX: f64 = 10.0;

/// Racks as rectangles, the route as a polyline, the depot as a circle.
pub fn render_svg(layout: &Layout, graph: &RouteGraph, route: Option<&Route>) -> String {
    let px = |m: f64| MARGIN_PX + m * PX_PER_M;
    let w = 2.0 * MARGIN_PX + layout.floor_width * PX_PER_M;
    let h = 2.0 * MARGIN_PX + layout.floor_depth * PX_PER_M;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#);
    let (fx1, fy1) = (px(layout.floor_width), px(layout.floor_depth));
    let (f0x, f0y) = (px(0.0), px(0.0));
    let _ = writeln!(
        s,
        r##"  <path class="floor" d="M{f0x:.1} {f0y:.1} H{fx1:.1} V{fy1:.1} H{f0x:.1} Z" fill="#fafafa" stroke="#333" stroke-width="1"/>"##
    );
    for r in 0..layout.rack_rows.len() {
        let rc = layout.rack_rect(r);
        let _ = writeln!(
            s,
            r##"  <rect class="rack" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#8a9bb0" stroke="#34495e"/>"##,
            px(rc.x0),
            px(rc.y0),
            (rc.x1 - rc.x0) * PX_PER_M,
            (rc.y1 - rc.y0) * PX_PER_M
        );
    }
    if let Some(route) = route {
        let points: Vec<String> = route
            .node_path
            .iter()
            .map(|&n| {
                let c = graph.center(n);
                format!("{:.1},{:.1}", px(c.x), px(c.y))
            })
            .collect();
        let _ = writeln!(
            s,
            r##"  <polyline class="route" points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
            points.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r##"  <circle class="depot" cx="{:.1}" cy="{:.1}" r="6" fill="#27ae60"/>"##,
        px(layout.depot.x),
        px(layout.depot.y)
    );
    s.push_str("</svg>\n");
    s
}
