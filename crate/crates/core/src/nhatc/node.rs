//! One subproblem solve: the node's own problem plus the penalty on every
//! incident link, evaluated against the neighbors' last published values.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::layout_opt::RowTemplate;
use crate::sqp::{sqp_solve, Function, NlpProblem, NlpStatus};

use super::warehouse::{self, ClassificationNode, ReassignmentNode, RoutingNode, SlottingNode};

/// Which side of a link a node holds. The response side computes the
/// coupled quantity, the target side holds its own copy; `c = t - r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Target,
    Response,
}

/// A link as seen from one of its ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub link: usize,
    pub name: String,
    pub role: Role,
    /// The other side's current value.
    pub neighbor: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl LinkView {
    /// Inconsistency if this node publishes `mine`.
    pub fn coupling(&self, mine: &[f64]) -> Vec<f64> {
        match self.role {
            Role::Target => mine.iter().zip(&self.neighbor).map(|(t, r)| t - r).collect(),
            Role::Response => self.neighbor.iter().zip(mine).map(|(t, r)| t - r).collect(),
        }
    }

    fn sign(&self) -> f64 {
        match self.role {
            Role::Target => 1.0,
            Role::Response => -1.0,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        for (what, len) in [("neighbor", self.neighbor.len()), ("v", self.v.len()), ("w", self.w.len())] {
            if len != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("link {} {what}", self.name),
                    expected: dim,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// `v' c + |w o c|^2`.
pub fn penalty(c: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != c.len() || w.len() != c.len() {
        return Err(Error::DimensionMismatch {
            context: "penalty".into(),
            expected: c.len(),
            got: if v.len() != c.len() { v.len() } else { w.len() },
        });
    }
    Ok(c.iter()
        .zip(v)
        .zip(w)
        .map(|((c, v), w)| v * c + (w * c).powi(2))
        .sum())
}

pub struct CouplingTerm<'a> {
    pub c: &'a [f64],
    pub v: &'a [f64],
    pub w: &'a [f64],
}

/// Local objective value plus the penalty of every link.
pub fn augment_objective(f: f64, terms: &[CouplingTerm<'_>]) -> Result<f64> {
    let mut total = f;
    for t in terms {
        total += penalty(t.c, t.v, t.w)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeProblem {
    /// `sum (x - center)^2`; every link couples the whole of `x`.
    Quadratic { center: Vec<f64> },
    Layout(LayoutNode),
    Routing(RoutingNode),
    Slotting(SlottingNode),
    Reassignment(ReassignmentNode),
    Classification(ClassificationNode),
}

impl NodeProblem {
    /// Capability tag a worker must advertise to solve this node.
    pub fn kind(&self) -> &'static str {
        match self {
            NodeProblem::Quadratic { .. } => "quadratic",
            NodeProblem::Layout(_) => "layout",
            NodeProblem::Routing(_) => "routing",
            NodeProblem::Slotting(_) => "slotting",
            NodeProblem::Reassignment(_) => "reassignment",
            NodeProblem::Classification(_) => "classification",
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, NodeProblem::Quadratic { .. } | NodeProblem::Layout(_))
    }
}

pub const ALL_KINDS: [&str; 6] = ["quadratic", "layout", "routing", "slotting", "reassignment", "classification"];

/// Aisle-width node: `x = [a; q]` with `a` the widths it publishes on its
/// response links and `q` its copy of the picking rates on its target links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub template: RowTemplate,
    pub k: f64,
    pub a_lb: f64,
    pub initial_widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInput {
    pub node: String,
    pub problem: NodeProblem,
    pub links: Vec<LinkView>,
    /// Previous solution, used as the starting point.
    pub start: Option<Vec<f64>>,
    pub seed: u64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Converged,
    MaxIter,
    Infeasible,
    /// Discrete procedure evaluated.
    Evaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSolution {
    pub node: String,
    pub x: Vec<f64>,
    /// Published value per link id.
    pub values: BTreeMap<usize, Vec<f64>>,
    pub objective: f64,
    pub penalized: f64,
    pub status: NodeStatus,
    pub artifacts: serde_json::Value,
}

pub fn solve_node(input: &NodeInput) -> Result<NodeSolution> {
    match &input.problem {
        NodeProblem::Quadratic { center } => solve_quadratic(input, center),
        NodeProblem::Layout(p) => solve_layout(input, p),
        NodeProblem::Routing(p) => warehouse::solve_routing(input, p),
        NodeProblem::Slotting(p) => warehouse::solve_slotting(input, p),
        NodeProblem::Reassignment(p) => warehouse::solve_reassignment(input, p),
        NodeProblem::Classification(p) => warehouse::solve_classification(input, p),
    }
}

/// Penalized total of a discrete node's published values.
pub(crate) fn discrete_penalty(input: &NodeInput, values: &BTreeMap<usize, Vec<f64>>) -> Result<f64> {
    let mut total = 0.0;
    for l in &input.links {
        if let Some(mine) = values.get(&l.link) {
            total += penalty(&l.coupling(mine), &l.v, &l.w)?;
        }
    }
    Ok(total)
}

/// A continuous node: local problem plus where each link sits inside `x`.
struct Continuous<'a> {
    dim: usize,
    objective: Function<'a>,
    inequalities: Vec<Function<'a>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Range of `x` published on each of `input.links`, by position.
    ranges: Vec<Range<usize>>,
    x0: Vec<f64>,
}

/// The node objective plus the penalty of every incident link.
fn augmented<'m>(links: &'m [LinkView], model: &'m Continuous<'_>) -> Function<'m> {
    let ranges = &model.ranges;
    let f = &model.objective;
    let value = move |x: &[f64]| {
        let mut total = f.value(x);
        for (l, r) in links.iter().zip(ranges) {
            let c = l.coupling(&x[r.clone()]);
            total += penalty(&c, &l.v, &l.w).expect("link dimensions checked");
        }
        total
    };
    let gradient = move |x: &[f64]| {
        let mut g = f.gradient(x);
        for (l, r) in links.iter().zip(ranges) {
            let c = l.coupling(&x[r.clone()]);
            for (j, i) in r.clone().enumerate() {
                g[i] += l.sign() * (l.v[j] + 2.0 * l.w[j] * l.w[j] * c[j]);
            }
        }
        g
    };
    Function::with_gradient(value, gradient)
}

fn continuous_model(input: &NodeInput) -> Result<Option<Continuous<'static>>> {
    let model = match &input.problem {
        NodeProblem::Quadratic { center } => quadratic_model(input, center),
        NodeProblem::Layout(p) => layout_model(input, p)?,
        _ => return Ok(None),
    };
    for (l, r) in input.links.iter().zip(&model.ranges) {
        l.check(r.len())?;
    }
    Ok(Some(model))
}

/// Worst relative disagreement between the analytic gradients of a
/// continuous node's penalized objective and constraints and central
/// differences at `x`. `None` for discrete nodes.
pub fn node_gradient_error(input: &NodeInput, x: &[f64]) -> Result<Option<f64>> {
    let Some(mut model) = continuous_model(input)? else {
        return Ok(None);
    };
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch { context: "node gradient check".into(), expected: model.dim, got: x.len() });
    }
    let inequalities = std::mem::take(&mut model.inequalities);
    let mut nlp = NlpProblem::new(model.dim, augmented(&input.links, &model));
    nlp.inequalities = inequalities;
    Ok(Some(nlp.gradient_check(x)))
}

fn solve_continuous(input: &NodeInput, mut model: Continuous<'_>) -> Result<NodeSolution> {
    for (l, r) in input.links.iter().zip(&model.ranges) {
        l.check(r.len())?;
    }
    let inequalities = std::mem::take(&mut model.inequalities);
    let mut nlp = NlpProblem::new(model.dim, augmented(&input.links, &model))
        .bounds(model.lower.clone(), model.upper.clone());
    nlp.inequalities = inequalities;

    let x0: Vec<f64> = match &input.start {
        Some(s) if s.len() == model.dim => s.clone(),
        _ => model.x0.clone(),
    }
    .iter()
    .enumerate()
    .map(|(i, v)| v.clamp(model.lower[i], model.upper[i]))
    .collect();
    let res = sqp_solve(&nlp, &x0, input.tol)?;

    let mut values = BTreeMap::new();
    for (l, r) in input.links.iter().zip(&model.ranges) {
        values.insert(l.link, res.x[r.clone()].to_vec());
    }
    Ok(NodeSolution {
        node: input.node.clone(),
        objective: model.objective.value(&res.x),
        penalized: res.objective,
        status: match res.status {
            NlpStatus::Converged => NodeStatus::Converged,
            NlpStatus::MaxIter => NodeStatus::MaxIter,
            NlpStatus::Infeasible => NodeStatus::Infeasible,
        },
        artifacts: json!({
            "kkt_residual": res.kkt_residual,
            "sqp_iterations": res.iterations,
        }),
        x: res.x,
        values,
    })
}

fn solve_quadratic(input: &NodeInput, center: &[f64]) -> Result<NodeSolution> {
    solve_continuous(input, quadratic_model(input, center))
}

fn quadratic_model(input: &NodeInput, center: &[f64]) -> Continuous<'static> {
    let n = center.len();
    let c1 = center.to_vec();
    let c2 = center.to_vec();
    Continuous {
        dim: n,
        objective: Function::with_gradient(
            move |x| x.iter().zip(&c1).map(|(x, c)| (x - c).powi(2)).sum(),
            move |x| x.iter().zip(&c2).map(|(x, c)| 2.0 * (x - c)).collect(),
        ),
        inequalities: Vec::new(),
        lower: vec![f64::NEG_INFINITY; n],
        upper: vec![f64::INFINITY; n],
        ranges: vec![0..n; input.links.len()],
        x0: center.to_vec(),
    }
}

fn solve_layout(input: &NodeInput, p: &LayoutNode) -> Result<NodeSolution> {
    let m = p.initial_widths.len();
    let tpl = p.template;
    let mut sol = solve_continuous(input, layout_model(input, p)?)?;
    let widths = &sol.x[..m];
    let rows = tpl.rows(widths.iter().sum::<f64>() / m as f64);
    if let serde_json::Value::Object(map) = &mut sol.artifacts {
        map.insert("aisle_widths".into(), json!(widths));
        map.insert("utilization".into(), json!(tpl.utilization(widths)));
        map.insert("rows_continuous".into(), json!(rows));
        map.insert("rows_integer".into(), json!(rows.floor() as usize));
    }
    Ok(sol)
}

fn layout_model(input: &NodeInput, p: &LayoutNode) -> Result<Continuous<'static>> {
    let m = p.initial_widths.len();
    let tpl = p.template;
    if !(tpl.floor_depth > tpl.rack_depth) || m == 0 {
        return Err(Error::InvalidArgument("layout node needs D > d_r and at least one aisle".into()));
    }
    let room = tpl.floor_depth - tpl.rack_depth;
    let k = p.k;
    let mut inequalities = Vec::with_capacity(m);
    for i in 0..m {
        inequalities.push(Function::with_gradient(
            move |x| k * x[m + i] - x[i],
            move |x| {
                let mut g = vec![0.0; x.len()];
                g[i] = -1.0;
                g[m + i] = k;
                g
            },
        ));
    }
    let ranges = input
        .links
        .iter()
        .map(|l| match l.role {
            Role::Response => 0..m,
            Role::Target => m..2 * m,
        })
        .collect();
    let mut x0: Vec<f64> = p.initial_widths.clone();
    x0.extend(std::iter::repeat_n(0.0, m));
    Ok(Continuous {
        dim: 2 * m,
        objective: Function::with_gradient(
            move |x| -tpl.utilization(&x[..m]),
            move |x| {
                let mut g: Vec<f64> = tpl.utilization_gradient(&x[..m]).into_iter().map(|v| -v).collect();
                g.extend(std::iter::repeat_n(0.0, m));
                g
            },
        ),
        inequalities,
        lower: [vec![p.a_lb; m], vec![0.0; m]].concat(),
        upper: [vec![room; m], vec![f64::INFINITY; m]].concat(),
        ranges,
        x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_input(center: f64, links: Vec<LinkView>) -> NodeInput {
        NodeInput {
            node: "p".into(),
            problem: NodeProblem::Quadratic { center: vec![center] },
            links,
            start: None,
            seed: 0,
            tol: 1e-10,
        }
    }

    fn view(role: Role, neighbor: f64) -> LinkView {
        LinkView { link: 0, name: "z".into(), role, neighbor: vec![neighbor], v: vec![0.0], w: vec![1.0] }
    }

    #[test]
    fn zero_penalty_is_the_raw_objective() {
        assert_eq!(augment_objective(3.5, &[CouplingTerm { c: &[0.0, 0.0], v: &[0.0, 0.0], w: &[1.0, 7.0] }]).unwrap(), 3.5);
    }

    #[test]
    fn quadratic_penalty_examples() {
        assert_eq!(augment_objective(0.0, &[CouplingTerm { c: &[2.0], v: &[0.0], w: &[1.0] }]).unwrap(), 4.0);
        let a = penalty(&[1.5, -0.5], &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let b = penalty(&[1.5, -0.5], &[0.0, 0.0], &[2.0, 4.0]).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
        assert!(penalty(&[1.0], &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn no_links_plain_solve() {
        let s = solve_node(&quad_input(2.0, vec![])).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert_eq!(s.penalized, s.objective);
    }

    #[test]
    fn consistent_target_is_kept() {
        let s = solve_node(&quad_input(2.0, vec![view(Role::Response, 2.0)])).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert!(s.values[&0][0] - 2.0 < 1e-9);
    }

    #[test]
    fn target_pulls_halfway() {
        // argmin (x-2)^2 + (4-x)^2 = 3
        let s = solve_node(&quad_input(2.0, vec![view(Role::Response, 4.0)])).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-8, "{:?}", s.x);
    }

    #[test]
    fn layout_node_tracks_rates() {
        let input = NodeInput {
            node: "layout".into(),
            problem: NodeProblem::Layout(LayoutNode {
                template: RowTemplate { floor_depth: 30.0, rack_depth: 1.5, row_length: 30.0 },
                k: 0.01,
                a_lb: 1.0,
                initial_widths: vec![2.0],
            }),
            links: vec![LinkView { link: 3, name: "rates".into(), role: Role::Target, neighbor: vec![120.0], v: vec![0.0], w: vec![10.0] }],
            start: None,
            seed: 0,
            tol: 1e-8,
        };
        let s = solve_node(&input).unwrap();
        assert_eq!(s.status, NodeStatus::Converged);
        // q sits just below 120 and a = k q on the clearance constraint
        let q = s.values[&3][0];
        assert!((q - 120.0).abs() < 1e-3);
        assert!((s.x[0] - 0.01 * q).abs() < 1e-9);
    }
}
