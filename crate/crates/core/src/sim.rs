//! One picking shift under a policy bundle.
//!
//! All orders of the instance history are offered at shift start. Batches
//! are dispatched in sequence to whichever cart frees up first; a trip takes
//! `distance / picker_speed + lines * handle_time` seconds and must finish
//! inside the shift. Nothing is stochastic, so a report depends only on the
//! instance, the bundle and the seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_route_graph, RouteGraph};
use crate::layout_opt::{optimize_layout, RowTemplate};
use crate::model::{utilization, Instance, Layout, SlotAssignment};
use crate::order_class::{
    bootstrap_samples, build_picklists, parallelism_limit, svm_train, Batching, Picklists, SvmConfig,
};
use crate::routing::{picking_frequency, Route, Router, Sequencing};
use crate::slotting::{assign_slots, kmeans_cluster, product_features, Clustering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlottingPolicy {
    Random,
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchingPolicy {
    OneOrderPerTrip,
    SvmBatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutPolicy {
    Frozen,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub slotting: SlottingPolicy,
    pub sequencing: Sequencing,
    pub batching: BatchingPolicy,
    pub layout: LayoutPolicy,
}

impl PolicyBundle {
    pub fn baseline() -> Self {
        Self {
            slotting: SlottingPolicy::Random,
            sequencing: Sequencing::GivenOrder,
            batching: BatchingPolicy::OneOrderPerTrip,
            layout: LayoutPolicy::Frozen,
        }
    }

    /// Everything optimized except the rack layout.
    pub fn optimized() -> Self {
        Self {
            slotting: SlottingPolicy::Clustered,
            sequencing: Sequencing::Optimized,
            batching: BatchingPolicy::SvmBatched,
            layout: LayoutPolicy::Frozen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Orders per batch under SVM batching.
    pub batch_cap: usize,
    /// Cluster count; `None` means one per rack row.
    pub clusters: Option<usize>,
    pub svm: SvmConfig,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { batch_cap: 4, clusters: None, svm: SvmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub batch: usize,
    pub orders: usize,
    pub start: f64,
    pub end: f64,
    pub distance: f64,
    /// False for the trip cut off by the end of the shift.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTimeline {
    pub cart: usize,
    pub trips: Vec<Trip>,
    pub busy: f64,
    pub idle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub bundle: PolicyBundle,
    pub seed: u64,
    pub orders_offered: usize,
    pub orders_completed: usize,
    pub orders_in_progress: usize,
    pub orders_not_started: usize,
    pub trips_completed: usize,
    /// Meters walked on completed trips.
    pub total_distance: f64,
    /// Meters of every planned trip, executed or not.
    pub planned_distance: f64,
    /// Busy seconds summed over carts.
    pub total_time: f64,
    pub shift_seconds: f64,
    pub utilization: f64,
    pub aisle_widths: Vec<f64>,
    pub parallelism: usize,
    pub carts: Vec<CartTimeline>,
}

/// Everything decided before the shift starts.
pub struct Plan {
    pub layout: Layout,
    pub graph: RouteGraph,
    pub assignment: SlotAssignment,
    pub clustering: Option<Clustering>,
    pub picklists: Picklists,
    /// One route per batch, in dispatch order.
    pub routes: Vec<Route>,
}

pub fn plan_shift(inst: &Instance, bundle: &PolicyBundle, seed: u64, opts: &SimOptions) -> Result<Plan> {
    inst.validate()?;
    let plan = plan_on(inst, inst.layout.clone(), bundle, seed, opts)?;
    if bundle.layout == LayoutPolicy::Frozen {
        return Ok(plan);
    }
    let p = &inst.params;
    let freq = picking_frequency(&plan.routes, p, inst.layout.num_aisles());
    let row = inst
        .layout
        .rack_rows
        .first()
        .ok_or_else(|| Error::InvalidLayout("layout optimization needs a rack row".into()))?;
    let template = RowTemplate {
        floor_depth: inst.layout.floor_depth,
        rack_depth: row.depth,
        row_length: row.length,
    };
    // keep the current cart parallelism as the width floor
    let carts = parallelism_limit(&inst.layout.aisle_widths, p)?;
    let a_lb = p.cart_width * carts as f64;
    let opt = optimize_layout(&template, &freq.mean, p.clearance_coeff, a_lb)?;
    let layout = inst.layout.with_aisle_widths(&opt.aisle_widths)?;
    plan_on(inst, layout, bundle, seed, opts)
}

fn plan_on(inst: &Instance, layout: Layout, bundle: &PolicyBundle, seed: u64, opts: &SimOptions) -> Result<Plan> {
    let params = &inst.params;
    let graph = build_route_graph(&layout, params.cell_size)?;
    let products: Vec<_> = inst.catalog.iter().map(|p| p.id.clone()).collect();

    let needs_clusters = bundle.slotting == SlottingPolicy::Clustered || bundle.batching == BatchingPolicy::SvmBatched;
    let clustering = if needs_clusters && !products.is_empty() {
        let k = opts.clusters.unwrap_or(layout.rack_rows.len()).clamp(1, products.len());
        Some(kmeans_cluster(&product_features(&products, &inst.history), k, seed)?)
    } else {
        None
    };
    let assignment = match (bundle.slotting, &clustering) {
        (SlottingPolicy::Clustered, Some(c)) => assign_slots(c, &layout, &graph, &inst.history)?,
        _ => inst.assignment.clone(),
    };

    let model;
    let batching = match (bundle.batching, &clustering) {
        (BatchingPolicy::SvmBatched, Some(c)) => {
            let samples = bootstrap_samples(&inst.history, c)?;
            let config = SvmConfig { seed, ..opts.svm };
            match svm_train(&samples, config) {
                Ok(m) => {
                    model = m;
                    Batching::Classified { model: &model, cap: opts.batch_cap }
                }
                // a single category still batches, just without a classifier
                Err(Error::DegenerateLabels) => Batching::Single,
                Err(e) => return Err(e),
            }
        }
        _ => Batching::Single,
    };
    let empty = Clustering {
        k: 0,
        products: Vec::new(),
        assignment: Vec::new(),
        centroids: Vec::new(),
        inertia: 0.0,
        inertia_history: Vec::new(),
        iterations: 0,
    };
    let picklists = build_picklists(
        &inst.history,
        batching,
        clustering.as_ref().unwrap_or(&empty),
        &assignment,
        &layout.aisle_widths,
        params,
    )?;

    let router = Router::new(&graph);
    let routes = picklists
        .dispatch
        .iter()
        .map(|&b| {
            let batch = &picklists.batches[b];
            let mut r = router.route(&batch.slots, bundle.sequencing)?;
            r.pick_count = batch.lines;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Plan { layout, graph, assignment, clustering, picklists, routes })
}

pub fn simulate_day(inst: &Instance, bundle: &PolicyBundle, seed: u64) -> Result<ThroughputReport> {
    simulate_day_with(inst, bundle, seed, &SimOptions::default())
}

pub fn simulate_day_with(inst: &Instance, bundle: &PolicyBundle, seed: u64, opts: &SimOptions) -> Result<ThroughputReport> {
    let plan = plan_shift(inst, bundle, seed, opts)?;
    Ok(execute(inst, &plan, bundle, seed))
}

/// Runs the planned trips through the shift.
pub fn execute(inst: &Instance, plan: &Plan, bundle: &PolicyBundle, seed: u64) -> ThroughputReport {
    let params = &inst.params;
    let shift = params.shift_seconds();
    let p = plan.picklists.parallelism;
    let mut clock = vec![0.0f64; p];
    let mut open = vec![true; p];
    let mut carts: Vec<CartTimeline> = (0..p)
        .map(|cart| CartTimeline { cart, trips: Vec::new(), busy: 0.0, idle: 0.0 })
        .collect();

    let mut completed = 0;
    let mut in_progress = 0;
    let mut trips_completed = 0;
    let mut distance = 0.0;
    let mut next = 0;
    let dispatch = &plan.picklists.dispatch;
    while next < dispatch.len() {
        // earliest free cart still inside the shift, lowest index on ties
        let Some(cart) = (0..p).filter(|&c| open[c]).min_by(|&a, &b| clock[a].total_cmp(&clock[b])) else {
            break;
        };
        let batch = &plan.picklists.batches[dispatch[next]];
        let route = &plan.routes[next];
        let start = clock[cart];
        let end = start + route.duration(params);
        let done = end <= shift;
        carts[cart].trips.push(Trip {
            batch: batch.id,
            orders: batch.orders.len(),
            start,
            end: end.min(shift),
            distance: route.total_distance,
            completed: done,
        });
        if done {
            completed += batch.orders.len();
            trips_completed += 1;
            distance += route.total_distance;
            clock[cart] = end;
        } else {
            in_progress += batch.orders.len();
            clock[cart] = shift;
            open[cart] = false;
        }
        next += 1;
    }
    for c in &mut carts {
        c.busy = c.trips.iter().map(|t| t.end - t.start).sum();
        c.idle = shift - c.busy;
    }

    let offered = inst.history.len();
    ThroughputReport {
        bundle: *bundle,
        seed,
        orders_offered: offered,
        orders_completed: completed,
        orders_in_progress: in_progress,
        orders_not_started: offered - completed - in_progress,
        trips_completed,
        total_distance: distance,
        planned_distance: plan.routes.iter().map(|r| r.total_distance).sum(),
        total_time: carts.iter().map(|c| c.busy).sum(),
        shift_seconds: shift,
        utilization: utilization(&plan.layout),
        aisle_widths: plan.layout.aisle_widths.clone(),
        parallelism: p,
        carts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_completed: usize,
    pub optimized_completed: usize,
    /// `optimized / baseline - 1`; absent when the baseline completes nothing.
    pub improvement: Option<f64>,
    /// Planned meters per offered order, optimized over baseline.
    pub distance_ratio: Option<f64>,
    pub baseline: ThroughputReport,
    pub optimized: ThroughputReport,
}

pub fn compare_policies(
    inst: &Instance,
    baseline: &PolicyBundle,
    optimized: &PolicyBundle,
    seed: u64,
) -> Result<Comparison> {
    compare_policies_with(inst, baseline, optimized, seed, &SimOptions::default())
}

pub fn compare_policies_with(
    inst: &Instance,
    baseline: &PolicyBundle,
    optimized: &PolicyBundle,
    seed: u64,
    opts: &SimOptions,
) -> Result<Comparison> {
    let b = simulate_day_with(inst, baseline, seed, opts)?;
    let o = if optimized == baseline { b.clone() } else { simulate_day_with(inst, optimized, seed, opts)? };
    Ok(Comparison {
        baseline_completed: b.orders_completed,
        optimized_completed: o.orders_completed,
        improvement: (b.orders_completed > 0)
            .then(|| o.orders_completed as f64 / b.orders_completed as f64 - 1.0),
        distance_ratio: (b.planned_distance > 0.0).then(|| o.planned_distance / b.planned_distance),
        baseline: b,
        optimized: o,
    })
}

/// Flat per-run summary for CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub seed: u64,
    pub slotting: SlottingPolicy,
    pub sequencing: Sequencing,
    pub batching: BatchingPolicy,
    pub layout: LayoutPolicy,
    pub orders_offered: usize,
    pub orders_completed: usize,
    pub total_distance: f64,
    pub planned_distance: f64,
    pub total_time: f64,
    pub utilization: f64,
    pub parallelism: usize,
}

impl SummaryRow {
    pub fn new(label: &str, r: &ThroughputReport) -> Self {
        Self {
            label: label.to_string(),
            seed: r.seed,
            slotting: r.bundle.slotting,
            sequencing: r.bundle.sequencing,
            batching: r.bundle.batching,
            layout: r.bundle.layout,
            orders_offered: r.orders_offered,
            orders_completed: r.orders_completed,
            total_distance: r.total_distance,
            planned_distance: r.planned_distance,
            total_time: r.total_time,
            utilization: r.utilization,
            parallelism: r.parallelism,
        }
    }
}
