//! The five warehouse subsystems as coupled nodes.
//!
//! Links (response side computes, target side consumes):
//!
//! | link              | response     | target         | value                         |
//! |-------------------|--------------|----------------|-------------------------------|
//! | `aisle_widths`    | layout       | routing        | aisle widths `a`              |
//! | `pick_frequency`  | routing      | layout         | per-aisle pick rates          |
//! | `aisle_clearance` | layout       | classification | aisle widths (cart capacity)  |
//! | `product_clusters`| slotting     | classification | cluster labels, then slots    |
//! | `slot_positions`  | slotting     | routing        | slot index per product        |
//! | `proposed_slots`  | slotting     | reassignment   | proposed slot per product     |
//! | `accepted_moves`  | reassignment | slotting       | 1 where a move is allowed     |
//!
//! Assignments travel as one global slot index per catalog product. The
//! discrete nodes evaluate their procedure and echo what they consumed on
//! their target links.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::build_route_graph;
use crate::layout_opt::RowTemplate;
use crate::model::{Instance, ProductId, SlotAssignment};
use crate::order_class::{bootstrap_samples, build_picklists, parallelism_limit, svm_train, Batching, SvmConfig};
use crate::routing::{picking_frequency, Router, Sequencing, DEFAULT_N_EXACT};
use crate::slotting::{
    assign_slots, evaluate_reassignment, kmeans_cluster, pick_frequencies, product_features, slot_distances,
    weighted_depot_distance, Clustering, RejectReason,
};

use super::node::{discrete_penalty, LayoutNode, NodeInput, NodeProblem, NodeSolution, NodeStatus};
use super::{CouplingGraph, LinkSpec, SubproblemNode};

pub const LAYOUT: &str = "layout";
pub const ROUTING: &str = "routing";
pub const SLOTTING: &str = "slotting";
pub const REASSIGNMENT: &str = "reassignment";
pub const CLASSIFICATION: &str = "classification";
pub const SUBSYSTEMS: [&str; 5] = [LAYOUT, ROUTING, SLOTTING, REASSIGNMENT, CLASSIFICATION];

pub const AISLE_WIDTHS: &str = "aisle_widths";
pub const PICK_FREQUENCY: &str = "pick_frequency";
pub const AISLE_CLEARANCE: &str = "aisle_clearance";
pub const PRODUCT_CLUSTERS: &str = "product_clusters";
pub const SLOT_POSITIONS: &str = "slot_positions";
pub const PROPOSED_SLOTS: &str = "proposed_slots";
pub const ACCEPTED_MOVES: &str = "accepted_moves";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingNode {
    pub instance: Instance,
    pub n_exact: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlottingNode {
    pub instance: Instance,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReassignmentNode {
    pub instance: Instance,
    pub move_cost: f64,
    /// `None` means unlimited.
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationNode {
    pub instance: Instance,
    pub svm: SvmConfig,
    pub batch_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarehouseConfig {
    /// Cluster count; `None` means one per rack row.
    pub clusters: Option<usize>,
    pub seed: u64,
    pub move_cost: f64,
    pub budget: Option<f64>,
    /// Lower aisle width; `None` keeps the current cart parallelism.
    pub a_lb: Option<f64>,
    pub svm: SvmConfig,
    pub batch_cap: usize,
    pub n_exact: usize,
}

impl Default for WarehouseConfig {
    fn default() -> Self {
        Self {
            clusters: None,
            seed: 42,
            move_cost: 1.0,
            budget: None,
            a_lb: None,
            svm: SvmConfig::default(),
            batch_cap: 4,
            n_exact: DEFAULT_N_EXACT,
        }
    }
}

pub fn encode_assignment(inst: &Instance, a: &SlotAssignment) -> Result<Vec<f64>> {
    inst.catalog
        .iter()
        .map(|p| {
            let slot = a
                .get(&p.id)
                .ok_or_else(|| Error::InvalidInstance(format!("product {} has no slot", p.id)))?;
            inst.layout
                .slot_global_index(slot)
                .map(|i| i as f64)
                .ok_or_else(|| Error::InvalidInstance(format!("slot {slot} is not in the layout")))
        })
        .collect()
}

pub fn decode_assignment(inst: &Instance, v: &[f64]) -> Result<SlotAssignment> {
    if v.len() != inst.catalog.len() {
        return Err(Error::DimensionMismatch {
            context: "assignment vector".into(),
            expected: inst.catalog.len(),
            got: v.len(),
        });
    }
    let slots = inst.layout.slot_ids();
    let mut out = BTreeMap::new();
    for (p, &x) in inst.catalog.iter().zip(v) {
        let i = x.round();
        if !(i >= 0.0 && (i as usize) < slots.len()) {
            return Err(Error::InvalidArgument(format!("slot index {x} out of range")));
        }
        out.insert(p.id.clone(), slots[i as usize]);
    }
    let a = SlotAssignment(out);
    a.validate(&inst.layout)?;
    Ok(a)
}

fn view<'a>(input: &'a NodeInput, name: &str) -> Option<&'a super::node::LinkView> {
    input.links.iter().find(|l| l.name == name)
}

/// Every target link echoes what the node consumed.
fn echo_targets(input: &NodeInput, values: &mut BTreeMap<usize, Vec<f64>>) {
    for l in &input.links {
        if l.role == super::node::Role::Target {
            values.insert(l.link, l.neighbor.clone());
        }
    }
}

fn publish(input: &NodeInput, name: &str, value: Vec<f64>, values: &mut BTreeMap<usize, Vec<f64>>) {
    if let Some(l) = view(input, name) {
        values.insert(l.link, value);
    }
}

fn discrete(input: &NodeInput, values: BTreeMap<usize, Vec<f64>>, objective: f64, artifacts: serde_json::Value) -> Result<NodeSolution> {
    let penalized = objective + discrete_penalty(input, &values)?;
    Ok(NodeSolution {
        node: input.node.clone(),
        x: Vec::new(),
        values,
        objective,
        penalized,
        status: NodeStatus::Evaluated,
        artifacts,
    })
}

/// Per-aisle pick rates with every order routed as its own trip.
pub fn routing_rates(inst: &Instance, assignment: &SlotAssignment, n_exact: usize) -> Result<(Vec<f64>, f64)> {
    let graph = build_route_graph(&inst.layout, inst.params.cell_size)?;
    let router = Router::new(&graph).n_exact(n_exact);
    let mut routes = Vec::with_capacity(inst.history.len());
    for o in &inst.history {
        let picks = o
            .lines
            .iter()
            .map(|l| assignment.get(&l.product_id).ok_or_else(|| Error::InvalidInstance(format!("product {} has no slot", l.product_id))))
            .collect::<Result<Vec<_>>>()?;
        routes.push(router.route(&picks, Sequencing::Optimized)?);
    }
    let total: f64 = routes.iter().map(|r| r.total_distance).sum();
    Ok((picking_frequency(&routes, &inst.params, inst.layout.num_aisles()).mean, total))
}

pub(crate) fn solve_routing(input: &NodeInput, p: &RoutingNode) -> Result<NodeSolution> {
    let inst = &p.instance;
    let assignment = match view(input, SLOT_POSITIONS) {
        Some(l) => decode_assignment(inst, &l.neighbor)?,
        None => inst.assignment.clone(),
    };
    let (rates, total) = routing_rates(inst, &assignment, p.n_exact)?;
    let mut values = BTreeMap::new();
    echo_targets(input, &mut values);
    publish(input, PICK_FREQUENCY, rates.clone(), &mut values);
    let n = inst.history.len().max(1) as f64;
    discrete(input, values, total, json!({
        "total_distance": total,
        "mean_route_distance": total / n,
        "pick_rates": rates,
    }))
}

/// Proposed slots where the mask allows a move, current slots elsewhere.
/// A move that would land on an occupied slot is withdrawn until the result
/// is collision free.
pub fn apply_move_mask(inst: &Instance, current: &SlotAssignment, proposal: &SlotAssignment, mask: &[f64]) -> Result<SlotAssignment> {
    if mask.len() != inst.catalog.len() {
        return Err(Error::DimensionMismatch { context: "move mask".into(), expected: inst.catalog.len(), got: mask.len() });
    }
    let ids: Vec<&ProductId> = inst.catalog.iter().map(|p| &p.id).collect();
    let cur = |i: usize| current.get(ids[i]).ok_or_else(|| Error::InvalidInstance(format!("product {} has no slot", ids[i])));
    let mut moved: Vec<bool> = mask.iter().map(|m| *m >= 0.5).collect();
    loop {
        let mut at: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for i in 0..ids.len() {
            let s = if moved[i] {
                proposal.get(ids[i]).ok_or_else(|| Error::InvalidInstance(format!("product {} has no proposal", ids[i])))?
            } else {
                cur(i)?
            };
            at.entry(s).or_default().push(i);
        }
        let mut changed = false;
        for members in at.values().filter(|m| m.len() > 1) {
            for &i in members {
                if moved[i] {
                    moved[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            let out = at.into_iter().map(|(s, m)| (ids[m[0]].clone(), s)).collect();
            return Ok(SlotAssignment(out));
        }
    }
}

fn cluster(inst: &Instance, k: usize, seed: u64) -> Result<Clustering> {
    let products: Vec<ProductId> = inst.catalog.iter().map(|p| p.id.clone()).collect();
    let k = k.clamp(1, products.len().max(1));
    kmeans_cluster(&product_features(&products, &inst.history), k, seed)
}

pub(crate) fn solve_slotting(input: &NodeInput, p: &SlottingNode) -> Result<NodeSolution> {
    let inst = &p.instance;
    let graph = build_route_graph(&inst.layout, inst.params.cell_size)?;
    let clustering = cluster(inst, p.k, p.seed)?;
    let proposal = assign_slots(&clustering, &inst.layout, &graph, &inst.history)?;
    let mask = match view(input, ACCEPTED_MOVES) {
        Some(l) => l.neighbor.clone(),
        None => vec![1.0; inst.catalog.len()],
    };
    let published = apply_move_mask(inst, &inst.assignment, &proposal, &mask)?;
    let encoded = encode_assignment(inst, &published)?;

    let freq = pick_frequencies(&inst.history);
    let dist = slot_distances(&graph);
    let objective = weighted_depot_distance(&published, &freq, &dist);

    let mut values = BTreeMap::new();
    echo_targets(input, &mut values);
    let labels = clustering.labels();
    let mut clusters: Vec<f64> = inst.catalog.iter().map(|p| labels[&p.id] as f64).collect();
    clusters.extend(&encoded);
    publish(input, PRODUCT_CLUSTERS, clusters, &mut values);
    publish(input, SLOT_POSITIONS, encoded, &mut values);
    publish(input, PROPOSED_SLOTS, encode_assignment(inst, &proposal)?, &mut values);
    discrete(input, values, objective, json!({
        "k": clustering.k,
        "inertia": clustering.inertia,
        "kmeans_iterations": clustering.iterations,
        "weighted_depot_distance": objective,
        "initial_weighted_depot_distance": weighted_depot_distance(&inst.assignment, &freq, &dist),
    }))
}

pub(crate) fn solve_reassignment(input: &NodeInput, p: &ReassignmentNode) -> Result<NodeSolution> {
    let inst = &p.instance;
    let proposal = match view(input, PROPOSED_SLOTS) {
        Some(l) => decode_assignment(inst, &l.neighbor)?,
        None => inst.assignment.clone(),
    };
    let graph = build_route_graph(&inst.layout, inst.params.cell_size)?;
    let budget = p.budget.unwrap_or(f64::INFINITY);
    let plan = evaluate_reassignment(&inst.assignment, &proposal, &inst.history, &graph, p.move_cost, budget)?;
    let mask: Vec<f64> = inst
        .catalog
        .iter()
        .map(|c| if plan.result.get(&c.id) == proposal.get(&c.id) { 1.0 } else { 0.0 })
        .collect();
    let mut values = BTreeMap::new();
    echo_targets(input, &mut values);
    publish(input, ACCEPTED_MOVES, mask, &mut values);
    let rejected = |r: RejectReason| plan.moves.iter().filter(|m| m.reason == Some(r)).count();
    discrete(input, values, -plan.total_benefit, json!({
        "moves": plan.moves.len(),
        "accepted": plan.accepted().count(),
        "rejected_no_benefit": rejected(RejectReason::NoBenefit),
        "rejected_over_budget": rejected(RejectReason::OverBudget),
        "rejected_slot_occupied": rejected(RejectReason::SlotOccupied),
        "total_cost": plan.total_cost,
        "total_benefit": plan.total_benefit,
    }))
}

pub(crate) fn solve_classification(input: &NodeInput, p: &ClassificationNode) -> Result<NodeSolution> {
    let inst = &p.instance;
    let n = inst.catalog.len();
    let (labels, assignment) = match view(input, PRODUCT_CLUSTERS) {
        Some(l) if l.neighbor.len() == 2 * n => {
            let labels: Vec<usize> = l.neighbor[..n].iter().map(|v| v.round().max(0.0) as usize).collect();
            (labels, decode_assignment(inst, &l.neighbor[n..])?)
        }
        Some(l) => {
            return Err(Error::DimensionMismatch { context: PRODUCT_CLUSTERS.into(), expected: 2 * n, got: l.neighbor.len() })
        }
        None => (vec![0; n], inst.assignment.clone()),
    };
    let widths = match view(input, AISLE_CLEARANCE) {
        Some(l) => l.neighbor.clone(),
        None => inst.layout.aisle_widths.clone(),
    };
    let k = labels.iter().copied().max().map_or(1, |m| m + 1);
    let clustering = Clustering {
        k,
        products: inst.catalog.iter().map(|p| p.id.clone()).collect(),
        assignment: labels,
        centroids: Vec::new(),
        inertia: 0.0,
        inertia_history: Vec::new(),
        iterations: 0,
    };
    let samples = bootstrap_samples(&inst.history, &clustering)?;
    let categories: BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    let model = if categories.len() >= 2 {
        Some(svm_train(&samples, SvmConfig { seed: input.seed, ..p.svm })?)
    } else {
        None
    };
    let batching = match &model {
        Some(m) => Batching::Classified { model: m, cap: p.batch_cap },
        None => Batching::Single,
    };
    let lists = build_picklists(&inst.history, batching, &clustering, &assignment, &widths, &inst.params)?;
    let mut values = BTreeMap::new();
    echo_targets(input, &mut values);
    discrete(input, values, lists.batches.len() as f64, json!({
        "parallelism": lists.parallelism,
        "batches": lists.batches.len(),
        "categories": categories.len(),
        "training_accuracy": model.as_ref().map_or(1.0, |m| m.accuracy(&samples)),
    }))
}

fn link(name: &str, response: &str, target: &str, initial: Vec<f64>) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        response: response.into(),
        target: target.into(),
        dim: initial.len(),
        initial,
    }
}

/// The five-node warehouse graph, seeded from the instance as built.
pub fn warehouse_graph(inst: &Instance, cfg: &WarehouseConfig) -> Result<CouplingGraph> {
    inst.validate()?;
    let row = inst
        .layout
        .rack_rows
        .first()
        .ok_or_else(|| Error::InvalidLayout("the warehouse graph needs at least one rack row".into()))?;
    let widths = inst.layout.aisle_widths.clone();
    let m = widths.len();
    let n = inst.catalog.len();
    let a_lb = match cfg.a_lb {
        Some(a) => a,
        None => inst.params.cart_width * parallelism_limit(&widths, &inst.params)? as f64,
    };
    let k = cfg.clusters.unwrap_or(inst.layout.rack_rows.len());
    let slots = encode_assignment(inst, &inst.assignment)?;

    let nodes = vec![
        SubproblemNode {
            id: LAYOUT.into(),
            problem: NodeProblem::Layout(LayoutNode {
                template: RowTemplate { floor_depth: inst.layout.floor_depth, rack_depth: row.depth, row_length: row.length },
                k: inst.params.clearance_coeff,
                a_lb,
                initial_widths: widths.iter().map(|w| w.max(a_lb)).collect(),
            }),
        },
        SubproblemNode {
            id: ROUTING.into(),
            problem: NodeProblem::Routing(RoutingNode { instance: inst.clone(), n_exact: cfg.n_exact }),
        },
        SubproblemNode {
            id: SLOTTING.into(),
            problem: NodeProblem::Slotting(SlottingNode { instance: inst.clone(), k, seed: cfg.seed }),
        },
        SubproblemNode {
            id: REASSIGNMENT.into(),
            problem: NodeProblem::Reassignment(ReassignmentNode { instance: inst.clone(), move_cost: cfg.move_cost, budget: cfg.budget }),
        },
        SubproblemNode {
            id: CLASSIFICATION.into(),
            problem: NodeProblem::Classification(ClassificationNode { instance: inst.clone(), svm: cfg.svm, batch_cap: cfg.batch_cap }),
        },
    ];
    let links = vec![
        link(AISLE_WIDTHS, LAYOUT, ROUTING, widths.clone()),
        link(PICK_FREQUENCY, ROUTING, LAYOUT, vec![0.0; m]),
        link(AISLE_CLEARANCE, LAYOUT, CLASSIFICATION, widths),
        link(PRODUCT_CLUSTERS, SLOTTING, CLASSIFICATION, [vec![0.0; n], slots.clone()].concat()),
        link(SLOT_POSITIONS, SLOTTING, ROUTING, slots.clone()),
        link(PROPOSED_SLOTS, SLOTTING, REASSIGNMENT, slots),
        link(ACCEPTED_MOVES, REASSIGNMENT, SLOTTING, vec![1.0; n]),
    ];
    let g = CouplingGraph { nodes, links };
    g.validate()?;
    Ok(g)
}

/// Responses an excluded subsystem holds fixed: the layout keeps its
/// current widths, slotting keeps the current assignment (with cluster
/// labels for classification), routing reports the rates of the current
/// assignment and reassignment allows every move.
pub fn default_frozen(inst: &Instance, cfg: &WarehouseConfig) -> Result<BTreeMap<String, Vec<f64>>> {
    let n = inst.catalog.len();
    let slots = encode_assignment(inst, &inst.assignment)?;
    let k = cfg.clusters.unwrap_or(inst.layout.rack_rows.len());
    let labels = cluster(inst, k, cfg.seed)?.labels();
    let mut clusters: Vec<f64> = inst.catalog.iter().map(|p| labels[&p.id] as f64).collect();
    clusters.extend(&slots);
    let (rates, _) = routing_rates(inst, &inst.assignment, cfg.n_exact)?;
    Ok(BTreeMap::from([
        (AISLE_WIDTHS.to_string(), inst.layout.aisle_widths.clone()),
        (AISLE_CLEARANCE.to_string(), inst.layout.aisle_widths.clone()),
        (PICK_FREQUENCY.to_string(), rates),
        (PRODUCT_CLUSTERS.to_string(), clusters),
        (SLOT_POSITIONS.to_string(), slots.clone()),
        (PROPOSED_SLOTS.to_string(), slots),
        (ACCEPTED_MOVES.to_string(), vec![1.0; n]),
    ]))
}
