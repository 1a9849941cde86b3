//! Demand-driven slotting: cluster products by picking behavior, place hot
//! clusters nearest the depot, and gate relocations by a move budget.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dijkstra, RouteGraph};
use crate::model::{Layout, Order, ProductId, SlotAssignment, SlotId};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;
pub const FEATURE_NAMES: [&str; 3] = ["frequency", "order_size", "copick_affinity"];

/// Lines per product over the history.
pub fn pick_frequencies(history: &[Order]) -> BTreeMap<ProductId, f64> {
    let mut out = BTreeMap::new();
    for o in history {
        for l in &o.lines {
            *out.entry(l.product_id.clone()).or_insert(0.0) += 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFeatures {
    pub products: Vec<ProductId>,
    /// Un-normalized rows, columns as in [`FEATURE_NAMES`].
    pub raw: Vec<Vec<f64>>,
    /// Z-scored rows; constant columns become zero.
    pub rows: Vec<Vec<f64>>,
}

/// Features for `products` (typically the catalog, in catalog order).
///
/// * frequency: lines naming the product;
/// * order size: mean line count of the orders containing it;
/// * co-pick affinity: mean frequency of the products it shares orders with.
pub fn product_features(products: &[ProductId], history: &[Order]) -> ProductFeatures {
    let freq = pick_frequencies(history);
    let mut size_sum: BTreeMap<&ProductId, f64> = BTreeMap::new();
    let mut partner_sum: BTreeMap<&ProductId, (f64, f64)> = BTreeMap::new();
    for o in history {
        let n = o.lines.len() as f64;
        for l in &o.lines {
            *size_sum.entry(&l.product_id).or_insert(0.0) += n;
            let e = partner_sum.entry(&l.product_id).or_insert((0.0, 0.0));
            for m in &o.lines {
                if m.product_id != l.product_id {
                    e.0 += freq[&m.product_id];
                    e.1 += 1.0;
                }
            }
        }
    }
    let raw: Vec<Vec<f64>> = products
        .iter()
        .map(|p| {
            let f = freq.get(p).copied().unwrap_or(0.0);
            let size = if f > 0.0 { size_sum[p] / f } else { 0.0 };
            let aff = match partner_sum.get(p) {
                Some((s, c)) if *c > 0.0 => s / c,
                _ => 0.0,
            };
            vec![f, size, aff]
        })
        .collect();
    ProductFeatures {
        products: products.to_vec(),
        rows: standardize(&raw),
        raw,
    }
}

fn standardize(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if raw.is_empty() {
        return Vec::new();
    }
    let n = raw.len() as f64;
    let dim = raw[0].len();
    let mut out = raw.to_vec();
    for j in 0..dim {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in out.iter_mut() {
            r[j] = if sd > 1e-12 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub products: Vec<ProductId>,
    /// Cluster id per product, aligned with `products`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every centroid update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn labels(&self) -> BTreeMap<ProductId, usize> {
        self.products.iter().cloned().zip(self.assignment.iter().copied()).collect()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn inertia(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from given centroids until the assignment is a fixpoint.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> Clustering {
    let k = centroids.len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        update_centroids(points, &mut assignment, &mut centroids);
        history.push(inertia(points, &assignment, &centroids));
        if iterations >= max_iter {
            break;
        }
        let next: Vec<usize> = points
            .iter()
            .zip(&assignment)
            .map(|(p, &cur)| {
                let (c, d) = nearest(p, &centroids);
                // stay put on ties so the fixpoint is stable
                if d < sq_dist(p, &centroids[cur]) { c } else { cur }
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Clustering {
        k,
        products: Vec::new(),
        inertia: *history.last().unwrap_or(&0.0),
        assignment,
        centroids,
        inertia_history: history,
        iterations,
    }
}

/// Means of the assigned points. An empty cluster takes over the point
/// farthest from its own centroid (lowest index on ties).
fn update_centroids(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = points.first().map_or(0, |p| p.len());
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        assignment[i] = empty;
        centroids[empty] = points[i].clone();
    }
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment.iter()) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

/// Best of [`KMEANS_RESTARTS`] k-means++ seeded Lloyd runs, all drawn from
/// one `seed` stream.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("feature rows must be finite and of equal length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = kmeans_pp(points, k, &mut rng);
        let run = lloyd(points, init, KMEANS_MAX_ITER);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans_cluster(features: &ProductFeatures, k: usize, seed: u64) -> Result<Clustering> {
    let mut c = kmeans(&features.rows, k, seed)?;
    c.products = features.products.clone();
    Ok(c)
}

/// Depot distance of every slot's pick node.
pub fn slot_distances(graph: &RouteGraph) -> BTreeMap<SlotId, f64> {
    let field = dijkstra(graph, graph.depot);
    graph.pick_nodes.iter().map(|(s, &n)| (*s, field[n])).collect()
}

/// Frequency-weighted mean depot distance of an assignment.
pub fn weighted_depot_distance(
    assignment: &SlotAssignment,
    freq: &BTreeMap<ProductId, f64>,
    dist: &BTreeMap<SlotId, f64>,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, s) in &assignment.0 {
        let f = freq.get(p).copied().unwrap_or(0.0);
        num += f * dist[s];
        den += f;
    }
    if den > 0.0 { num / den } else { 0.0 }
}

/// Clusters by total frequency (descending), products within a cluster by
/// frequency (descending, then id), onto slots by depot distance
/// (ascending, then slot id).
pub fn assign_slots(
    clustering: &Clustering,
    layout: &Layout,
    graph: &RouteGraph,
    history: &[Order],
) -> Result<SlotAssignment> {
    let n = clustering.products.len();
    if n > layout.slot_total() {
        return Err(Error::Capacity { products: n, slots: layout.slot_total() });
    }
    let freq = pick_frequencies(history);
    let f = |i: usize| freq.get(&clustering.products[i]).copied().unwrap_or(0.0);

    let mut clusters: Vec<(usize, f64)> = (0..clustering.k)
        .map(|c| (c, clustering.members(c).into_iter().map(f).sum()))
        .collect();
    clusters.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut slots: Vec<(SlotId, f64)> = slot_distances(graph).into_iter().collect();
    slots.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut out = BTreeMap::new();
    let mut next = slots.iter();
    for (c, _) in clusters {
        let mut members = clustering.members(c);
        members.sort_by(|&a, &b| f(b).total_cmp(&f(a)).then(clustering.products[a].cmp(&clustering.products[b])));
        for i in members {
            let (slot, _) = next.next().ok_or(Error::Capacity { products: n, slots: slots.len() })?;
            out.insert(clustering.products[i].clone(), *slot);
        }
    }
    Ok(SlotAssignment(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoBenefit,
    OverBudget,
    SlotOccupied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub product: ProductId,
    pub from_slot: SlotId,
    pub to_slot: SlotId,
    /// Reduction of frequency-weighted depot distance (meters per replay).
    pub benefit: f64,
    pub cost: f64,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReassignmentPlan {
    pub moves: Vec<Move>,
    pub total_cost: f64,
    pub total_benefit: f64,
    pub result: SlotAssignment,
}

impl ReassignmentPlan {
    pub fn accepted(&self) -> impl Iterator<Item = &Move> {
        self.moves.iter().filter(|m| m.accepted)
    }
}

/// Greedy budgeted relocation from `current` toward `proposed`.
///
/// Moves are ranked by benefit per cost. Passes repeat in that order until
/// nothing more is accepted, so a move blocked by an occupant becomes
/// acceptable once the occupant has moved away. Cyclic swaps stay blocked.
pub fn evaluate_reassignment(
    current: &SlotAssignment,
    proposed: &SlotAssignment,
    history: &[Order],
    graph: &RouteGraph,
    move_cost: f64,
    budget: f64,
) -> Result<ReassignmentPlan> {
    if !(move_cost >= 0.0) || budget.is_nan() {
        return Err(Error::InvalidArgument("move cost and budget must be non-negative".into()));
    }
    let freq = pick_frequencies(history);
    let dist = slot_distances(graph);
    let d = |s: &SlotId| dist.get(s).copied().ok_or(Error::UnreachableSlot(*s));

    let mut moves = Vec::new();
    for (p, &from) in &current.0 {
        let Some(&to) = proposed.0.get(p) else { continue };
        if to == from {
            continue;
        }
        let f = freq.get(p).copied().unwrap_or(0.0);
        moves.push(Move {
            product: p.clone(),
            from_slot: from,
            to_slot: to,
            benefit: f * (d(&from)? - d(&to)?),
            cost: move_cost,
            accepted: false,
            reason: None,
        });
    }
    let ratio = |m: &Move| if m.cost > 0.0 { m.benefit / m.cost } else { m.benefit * f64::MAX };
    moves.sort_by(|a, b| ratio(b).total_cmp(&ratio(a)).then(a.product.cmp(&b.product)));

    let mut occupied: BTreeSet<SlotId> = current.0.values().copied().collect();
    let mut spent = 0.0;
    loop {
        let mut progress = false;
        for m in moves.iter_mut().filter(|m| !m.accepted) {
            m.reason = Some(if m.benefit <= 0.0 {
                RejectReason::NoBenefit
            } else if spent + m.cost > budget {
                RejectReason::OverBudget
            } else if occupied.contains(&m.to_slot) {
                RejectReason::SlotOccupied
            } else {
                occupied.remove(&m.from_slot);
                occupied.insert(m.to_slot);
                spent += m.cost;
                m.accepted = true;
                progress = true;
                continue;
            });
        }
        if !progress {
            break;
        }
    }
    for m in moves.iter_mut().filter(|m| m.accepted) {
        m.reason = None;
    }

    let mut result = current.clone();
    for m in moves.iter().filter(|m| m.accepted) {
        result.0.insert(m.product.clone(), m.to_slot);
    }
    Ok(ReassignmentPlan {
        total_cost: spent,
        total_benefit: moves.iter().filter(|m| m.accepted).map(|m| m.benefit).sum(),
        moves,
        result,
    })
}
