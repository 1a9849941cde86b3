//! Nonhierarchical coordination of coupled subproblems.
//!
//! Every link joins a response node (which computes a quantity) and a target
//! node (which holds its own copy). The inconsistency `c = t - r` is priced
//! by `v' c + |w o c|^2` inside each node's objective. An outer iteration
//! runs Jacobi sweeps over the active nodes until the published link values
//! stop moving, then updates the multipliers:
//!
//! ```text
//! v <- v + 2 w o w o c
//! w_e <- beta w_e   where |c_e| > gamma |c_e previous|
//! ```

pub mod node;
pub mod warehouse;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use node::{
    augment_objective, node_gradient_error, penalty, solve_node, CouplingTerm, LayoutNode, LinkView, NodeInput, NodeProblem, NodeSolution,
    NodeStatus, Role, ALL_KINDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub target: String,
    pub response: String,
    pub dim: usize,
    pub initial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemNode {
    pub id: String,
    pub problem: NodeProblem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingGraph {
    pub nodes: Vec<SubproblemNode>,
    pub links: Vec<LinkSpec>,
}

impl CouplingGraph {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::Config(format!("duplicate node id {}", n.id)));
            }
        }
        let mut names = BTreeSet::new();
        for l in &self.links {
            if !names.insert(l.name.as_str()) {
                return Err(Error::Config(format!("duplicate link name {}", l.name)));
            }
            for end in [&l.target, &l.response] {
                if !ids.contains(end.as_str()) {
                    return Err(Error::Config(format!("link {} refers to unknown node {end}", l.name)));
                }
            }
            if l.target == l.response {
                return Err(Error::Config(format!("link {} joins node {} to itself", l.name, l.target)));
            }
            if l.dim == 0 {
                return Err(Error::Config(format!("link {} has dimension 0", l.name)));
            }
            if l.initial.len() != l.dim {
                return Err(Error::DimensionMismatch {
                    context: format!("initial value of link {}", l.name),
                    expected: l.dim,
                    got: l.initial.len(),
                });
            }
        }
        Ok(())
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    /// Both ends active.
    Live,
    /// Response end excluded; its value is held fixed.
    Frozen,
    /// Target end excluded; the link plays no part.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub active: BTreeSet<String>,
    /// Fixed response value per link index.
    pub frozen: BTreeMap<usize, Vec<f64>>,
}

impl ActiveSet {
    pub fn all(graph: &CouplingGraph) -> Self {
        Self { active: graph.nodes.iter().map(|n| n.id.clone()).collect(), frozen: BTreeMap::new() }
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.contains(id)
    }

    pub fn mode(&self, graph: &CouplingGraph, link: usize) -> LinkMode {
        let l = &graph.links[link];
        match (self.is_active(&l.target), self.is_active(&l.response)) {
            (true, true) => LinkMode::Live,
            (true, false) => LinkMode::Frozen,
            (false, _) => LinkMode::Dropped,
        }
    }
}

/// Restricts coordination to `ids`. A link whose target is active but whose
/// response is not needs a fixed response value in `frozen`, keyed by link
/// name; entries for other links are ignored.
pub fn configure_active_set(
    graph: &CouplingGraph,
    ids: &[String],
    frozen: &BTreeMap<String, Vec<f64>>,
) -> Result<ActiveSet> {
    graph.validate()?;
    if ids.is_empty() {
        return Err(Error::Config("the active set is empty".into()));
    }
    let mut active = BTreeSet::new();
    for id in ids {
        if graph.node_index(id).is_none() {
            return Err(Error::Config(format!("unknown node {id} in the active set")));
        }
        active.insert(id.clone());
    }
    let mut set = ActiveSet { active, frozen: BTreeMap::new() };
    for (i, l) in graph.links.iter().enumerate() {
        if set.mode(graph, i) != LinkMode::Frozen {
            continue;
        }
        let value = frozen.get(&l.name).ok_or_else(|| {
            Error::Config(format!(
                "link {} needs a frozen value because node {} is excluded while {} is active",
                l.name, l.response, l.target
            ))
        })?;
        if value.len() != l.dim {
            return Err(Error::DimensionMismatch {
                context: format!("frozen value of link {}", l.name),
                expected: l.dim,
                got: value.len(),
            });
        }
        set.frozen.insert(i, value.clone());
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NhatcOptions {
    pub tol_c: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner fixpoint tolerance; `None` means `tol_c / 10`.
    pub inner_tol: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub w0: f64,
    pub seed: u64,
    pub node_tol: f64,
}

impl Default for NhatcOptions {
    fn default() -> Self {
        Self {
            tol_c: 1e-4,
            max_outer: 50,
            max_inner: 100,
            inner_tol: None,
            beta: 2.2,
            gamma: 0.4,
            w0: 1.0,
            seed: 0,
            node_tol: 1e-8,
        }
    }
}

impl NhatcOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_c > 0.0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.inner_tol.is_none_or(|t| t > 0.0)
            && self.beta >= 1.0
            && self.gamma > 0.0
            && self.w0 > 0.0
            && self.node_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad coordination options {self:?}")))
        }
    }

    fn inner_tol(&self) -> f64 {
        self.inner_tol.unwrap_or(self.tol_c / 10.0)
    }
}

/// What a solve dispatch did, for the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchEvent {
    pub outer: usize,
    pub sweep: usize,
    pub node: String,
    pub worker: String,
    pub outcome: String,
}

pub trait NodeExecutor {
    /// One result per input, in input order.
    fn solve_all(&mut self, inputs: &[NodeInput]) -> Vec<std::result::Result<NodeSolution, String>>;

    /// Events since the last call; `outer` and `sweep` are filled in by the caller.
    fn take_events(&mut self) -> Vec<DispatchEvent> {
        Vec::new()
    }
}

/// Solves the nodes of a sweep on scoped threads.
#[derive(Debug, Default)]
pub struct InProcessExecutor;

impl NodeExecutor for InProcessExecutor {
    fn solve_all(&mut self, inputs: &[NodeInput]) -> Vec<std::result::Result<NodeSolution, String>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = inputs.iter().map(|i| s.spawn(move || solve_node(i))).collect();
            handles
                .into_iter()
                .map(|h| match h.join() {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(_) => Err("node solve panicked".to_string()),
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub c_prev: Option<Vec<f64>>,
}

impl CouplingState {
    pub fn c(&self) -> Vec<f64> {
        self.t.iter().zip(&self.r).map(|(t, r)| t - r).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NhatcStatus {
    Converged,
    MaxOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub inner_sweeps: usize,
    pub inner_converged: bool,
    pub c_inf: f64,
    /// Per link name, for links that take part.
    pub c: BTreeMap<String, Vec<f64>>,
    /// Multipliers the sweeps of this iteration were solved with.
    pub v: BTreeMap<String, Vec<f64>>,
    pub w: BTreeMap<String, Vec<f64>>,
    pub node_objectives: BTreeMap<String, f64>,
    pub node_status: BTreeMap<String, NodeStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub name: String,
    pub target: String,
    pub response: String,
    pub mode: LinkMode,
    /// Target side adopts the response.
    pub echo: bool,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub c_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    pub kind: String,
    pub active: bool,
    pub solution: Option<NodeSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub status: NhatcStatus,
    pub outer_iterations: usize,
    /// Iteration the reported links and nodes come from.
    pub reported_iteration: usize,
    pub c_inf: f64,
    pub options: NhatcOptions,
    pub history: Vec<OuterRecord>,
    pub links: Vec<LinkReport>,
    pub nodes: Vec<NodeReport>,
    pub wall_time_s: f64,
    pub dispatch_log: Vec<DispatchEvent>,
}

impl ConvergenceReport {
    /// Everything except timing and dispatch details.
    pub fn numeric_view(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.remove("wall_time_s");
            map.remove("dispatch_log");
        }
        Ok(v)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSolution> {
        self.nodes.iter().find(|n| n.id == id).and_then(|n| n.solution.as_ref())
    }

    pub fn link(&self, name: &str) -> Option<&LinkReport> {
        self.links.iter().find(|l| l.name == name)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn inf_norm(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Snapshot {
    iteration: usize,
    c_inf: f64,
    states: Vec<CouplingState>,
    solutions: Vec<Option<NodeSolution>>,
}

pub fn nhatc_solve(graph: &CouplingGraph, active: &ActiveSet, options: &NhatcOptions) -> Result<ConvergenceReport> {
    nhatc_solve_with(graph, active, options, &mut InProcessExecutor)
}

pub fn nhatc_solve_with(
    graph: &CouplingGraph,
    active: &ActiveSet,
    options: &NhatcOptions,
    executor: &mut dyn NodeExecutor,
) -> Result<ConvergenceReport> {
    graph.validate()?;
    options.validate()?;
    for id in &active.active {
        if graph.node_index(id).is_none() {
            return Err(Error::Config(format!("unknown node {id} in the active set")));
        }
    }
    let started = Instant::now();
    let modes: Vec<LinkMode> = (0..graph.links.len()).map(|i| active.mode(graph, i)).collect();
    let mut states: Vec<CouplingState> = Vec::with_capacity(graph.links.len());
    for (i, l) in graph.links.iter().enumerate() {
        let r = match modes[i] {
            LinkMode::Frozen => active
                .frozen
                .get(&i)
                .cloned()
                .ok_or_else(|| Error::Config(format!("link {} has no frozen value", l.name)))?,
            _ => l.initial.clone(),
        };
        if r.len() != l.dim {
            return Err(Error::DimensionMismatch { context: format!("frozen value of link {}", l.name), expected: l.dim, got: r.len() });
        }
        states.push(CouplingState { t: l.initial.clone(), r, v: vec![0.0; l.dim], w: vec![options.w0; l.dim], c_prev: None });
    }
    let live: Vec<usize> = (0..graph.nodes.len()).filter(|&i| active.is_active(&graph.nodes[i].id)).collect();
    let coupled: Vec<usize> = (0..graph.links.len()).filter(|&i| modes[i] != LinkMode::Dropped).collect();
    let echo: Vec<bool> = graph.links.iter().map(|l| is_echo(graph, l)).collect();

    let mut solutions: Vec<Option<NodeSolution>> = vec![None; graph.nodes.len()];
    let mut history = Vec::new();
    let mut dispatch_log = Vec::new();
    let mut best: Option<Snapshot> = None;
    let mut status = NhatcStatus::MaxOuter;

    for outer in 1..=options.max_outer {
        let mut sweeps = 0;
        let mut inner_converged = false;
        while sweeps < options.max_inner {
            sweeps += 1;
            let inputs: Vec<NodeInput> = live
                .iter()
                .map(|&ni| node_input(graph, &modes, &echo, &states, &solutions, ni, options))
                .collect();
            let results = executor.solve_all(&inputs);
            if results.len() != inputs.len() {
                return Err(Error::Solver(format!("executor returned {} results for {} nodes", results.len(), inputs.len())));
            }
            for mut e in executor.take_events() {
                e.outer = outer;
                e.sweep = sweeps;
                dispatch_log.push(e);
            }
            let before: Vec<CouplingState> = states.clone();
            for (&ni, res) in live.iter().zip(results) {
                let id = &graph.nodes[ni].id;
                match res {
                    Ok(sol) if sol.status == NodeStatus::Infeasible => {
                        log::warn!("node {id} reported an infeasible local problem; keeping its previous values");
                        solutions[ni] = Some(NodeSolution { x: solutions[ni].as_ref().map_or(sol.x.clone(), |s| s.x.clone()), ..sol });
                    }
                    Ok(sol) => {
                        for (&li, value) in &sol.values {
                            let (Some(l), Some(state)) = (graph.links.get(li), states.get_mut(li)) else {
                                return Err(Error::Solver(format!("node {id} published unknown link {li}")));
                            };
                            if value.len() != l.dim {
                                return Err(Error::DimensionMismatch { context: format!("link {} from node {id}", l.name), expected: l.dim, got: value.len() });
                            }
                            if l.target == *id {
                                state.t = value.clone();
                            } else if l.response == *id && modes[li] == LinkMode::Live {
                                state.r = value.clone();
                            }
                        }
                        solutions[ni] = Some(sol);
                    }
                    Err(msg) => log::warn!("node {id} failed: {msg}; keeping its previous values"),
                }
            }
            for &i in &coupled {
                if echo[i] {
                    states[i].t = states[i].r.clone();
                }
            }
            let change = coupled
                .iter()
                .map(|&i| max_abs_diff(&states[i].t, &before[i].t).max(max_abs_diff(&states[i].r, &before[i].r)))
                .fold(0.0, f64::max);
            log::debug!("outer {outer} sweep {sweeps}: max link change {change:.3e}");
            if change <= options.inner_tol() {
                inner_converged = true;
                break;
            }
        }

        let mut record = OuterRecord {
            iteration: outer,
            inner_sweeps: sweeps,
            inner_converged,
            c_inf: 0.0,
            c: BTreeMap::new(),
            v: BTreeMap::new(),
            w: BTreeMap::new(),
            node_objectives: BTreeMap::new(),
            node_status: BTreeMap::new(),
        };
        for &i in &coupled {
            let c = states[i].c();
            record.c_inf = record.c_inf.max(inf_norm(&c));
            let name = graph.links[i].name.clone();
            record.v.insert(name.clone(), states[i].v.clone());
            record.w.insert(name.clone(), states[i].w.clone());
            record.c.insert(name, c);
        }
        for &ni in &live {
            if let Some(s) = &solutions[ni] {
                record.node_objectives.insert(graph.nodes[ni].id.clone(), s.objective);
                record.node_status.insert(graph.nodes[ni].id.clone(), s.status);
            }
        }
        let c_inf = record.c_inf;
        log::info!("outer {outer}: |c|inf = {c_inf:.3e} after {sweeps} sweeps");
        history.push(record);

        let converged = c_inf <= options.tol_c;
        if converged || best.as_ref().is_none_or(|b| c_inf < b.c_inf) {
            best = Some(Snapshot { iteration: outer, c_inf, states: states.clone(), solutions: solutions.clone() });
        }
        if converged {
            status = NhatcStatus::Converged;
            break;
        }
        for &i in &coupled {
            let s = &mut states[i];
            let c = s.c();
            for j in 0..c.len() {
                s.v[j] += 2.0 * s.w[j] * s.w[j] * c[j];
            }
            if let Some(prev) = &s.c_prev {
                for j in 0..c.len() {
                    if c[j].abs() > options.gamma * prev[j].abs() {
                        s.w[j] *= options.beta;
                    }
                }
            }
            s.c_prev = Some(c);
        }
    }

    let best = best.ok_or_else(|| Error::Solver("no outer iteration ran".into()))?;
    let links = graph
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let s = &best.states[i];
            LinkReport {
                name: l.name.clone(),
                target: l.target.clone(),
                response: l.response.clone(),
                mode: modes[i],
                echo: is_echo(graph, l),
                t: s.t.clone(),
                r: s.r.clone(),
                v: s.v.clone(),
                w: s.w.clone(),
                c_inf: if modes[i] == LinkMode::Dropped { 0.0 } else { inf_norm(&s.c()) },
            }
        })
        .collect();
    let nodes = graph
        .nodes
        .iter()
        .zip(best.solutions)
        .map(|(n, s)| NodeReport { id: n.id.clone(), kind: n.problem.kind().into(), active: active.is_active(&n.id), solution: s })
        .collect();
    Ok(ConvergenceReport {
        status,
        outer_iterations: history.len(),
        reported_iteration: best.iteration,
        c_inf: best.c_inf,
        options: *options,
        history,
        links,
        nodes,
        wall_time_s: started.elapsed().as_secs_f64(),
        dispatch_log,
    })
}

/// A discrete target holds no copy of its own: it adopts the response, so
/// the link carries no penalty for the response side.
fn is_echo(graph: &CouplingGraph, link: &LinkSpec) -> bool {
    graph.nodes.iter().find(|n| n.id == link.target).is_some_and(|n| !n.problem.is_continuous())
}

fn node_input(
    graph: &CouplingGraph,
    modes: &[LinkMode],
    echo: &[bool],
    states: &[CouplingState],
    solutions: &[Option<NodeSolution>],
    ni: usize,
    options: &NhatcOptions,
) -> NodeInput {
    let node = &graph.nodes[ni];
    let mut links = Vec::new();
    for (li, l) in graph.links.iter().enumerate() {
        if modes[li] == LinkMode::Dropped {
            continue;
        }
        let s = &states[li];
        let (role, neighbor) = if l.target == node.id {
            (Role::Target, s.r.clone())
        } else if l.response == node.id && modes[li] == LinkMode::Live {
            (Role::Response, s.t.clone())
        } else {
            continue;
        };
        let (v, w) = if echo[li] { (vec![0.0; l.dim], vec![0.0; l.dim]) } else { (s.v.clone(), s.w.clone()) };
        links.push(LinkView { link: li, name: l.name.clone(), role, neighbor, v, w });
    }
    NodeInput {
        node: node.id.clone(),
        problem: node.problem.clone(),
        links,
        start: solutions[ni].as_ref().map(|s| s.x.clone()),
        seed: options.seed,
        tol: options.node_tol,
    }
}
