//! Pick-list routing and the picking-frequency coupling variable.
//!
//! A route starts and ends at the depot and visits the pick node of every
//! slot in the pick list. Up to [`DEFAULT_N_EXACT`] distinct stops the visit
//! order is globally optimal (Held-Karp over the shortest-path metric);
//! beyond that a nearest-neighbor tour is improved by first-improvement
//! 2-opt.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{walk_shortest, DistanceTable, NodeId, RouteGraph};
use crate::model::{SimParams, SlotId};

pub const DEFAULT_N_EXACT: usize = 8;
pub const TWO_OPT_MAX_MOVES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sequencing {
    GivenOrder,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Distinct slots in visit order.
    pub slots: Vec<SlotId>,
    pub node_path: Vec<NodeId>,
    pub total_distance: f64,
    pub aisle_traversal_counts: BTreeMap<usize, usize>,
    /// Pick lines served, duplicates included.
    pub pick_count: usize,
    pub picks_per_aisle: BTreeMap<usize, usize>,
}

impl Route {
    /// Trip duration in seconds.
    pub fn duration(&self, params: &SimParams) -> f64 {
        self.total_distance / params.picker_speed + self.pick_count as f64 * params.handle_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickingFrequency {
    /// Picks per hour in each aisle.
    pub rates: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Routes pick lists on one graph, reusing a shared distance table.
#[derive(Debug, Clone)]
pub struct Router<'g> {
    graph: &'g RouteGraph,
    table: DistanceTable,
    n_exact: usize,
}

impl<'g> Router<'g> {
    pub fn new(graph: &'g RouteGraph) -> Self {
        Self {
            graph,
            table: DistanceTable::for_picking(graph),
            n_exact: DEFAULT_N_EXACT,
        }
    }

    pub fn with_table(graph: &'g RouteGraph, table: DistanceTable) -> Self {
        Self { graph, table, n_exact: DEFAULT_N_EXACT }
    }

    pub fn n_exact(mut self, n: usize) -> Self {
        self.n_exact = n;
        self
    }

    pub fn graph(&self) -> &RouteGraph {
        self.graph
    }

    pub fn table(&self) -> &DistanceTable {
        &self.table
    }

    /// Depot-to-pick-node distance for one slot.
    pub fn depot_distance(&self, slot: SlotId) -> Result<f64> {
        let node = self.graph.pick_node(slot).ok_or(Error::UnreachableSlot(slot))?;
        let d = self.table.dist(self.graph.depot, node);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::UnreachableSlot(slot))
        }
    }

    pub fn route(&self, picks: &[SlotId], sequencing: Sequencing) -> Result<Route> {
        let depot = self.graph.depot;
        let mut stops: Vec<SlotId> = Vec::new();
        for &s in picks {
            if !stops.contains(&s) {
                stops.push(s);
            }
        }
        let nodes: Vec<NodeId> = stops
            .iter()
            .map(|&s| self.graph.pick_node(s).ok_or(Error::UnreachableSlot(s)))
            .collect::<Result<_>>()?;
        for (s, &n) in stops.iter().zip(&nodes) {
            if !self.table.dist(depot, n).is_finite() {
                return Err(Error::UnreachableSlot(*s));
            }
        }

        let order: Vec<usize> = match sequencing {
            Sequencing::GivenOrder => (0..stops.len()).collect(),
            Sequencing::Optimized if stops.len() <= self.n_exact => self.held_karp(&nodes),
            Sequencing::Optimized => self.improve(&nodes),
        };

        let seq: Vec<NodeId> = std::iter::once(depot)
            .chain(order.iter().map(|&i| nodes[i]))
            .chain(std::iter::once(depot))
            .collect();
        let mut total = 0.0;
        let mut path = vec![depot];
        for leg in seq.windows(2) {
            total += self.table.dist(leg[0], leg[1]);
            let field = self
                .table
                .field(leg[1])
                .expect("route stops are tabled");
            path.extend(walk_shortest(self.graph, field, leg[0]).into_iter().skip(1));
        }

        let mut traversals = BTreeMap::new();
        let mut prev = None;
        for &n in &path {
            let a = self.graph.aisle_of[n];
            if let Some(i) = a {
                if prev != Some(i) {
                    *traversals.entry(i).or_insert(0) += 1;
                }
            }
            prev = a;
        }
        let mut per_aisle = BTreeMap::new();
        for s in picks {
            if let Some(a) = self.graph.aisle_of[self.graph.pick_nodes[s]] {
                *per_aisle.entry(a).or_insert(0) += 1;
            }
        }

        Ok(Route {
            slots: order.iter().map(|&i| stops[i]).collect(),
            node_path: path,
            total_distance: total,
            aisle_traversal_counts: traversals,
            pick_count: picks.len(),
            picks_per_aisle: per_aisle,
        })
    }

    fn tour_length(&self, nodes: &[NodeId], order: &[usize]) -> f64 {
        let depot = self.graph.depot;
        let mut prev = depot;
        let mut total = 0.0;
        for &i in order {
            total += self.table.dist(prev, nodes[i]);
            prev = nodes[i];
        }
        total + self.table.dist(prev, depot)
    }

    fn held_karp(&self, nodes: &[NodeId]) -> Vec<usize> {
        let n = nodes.len();
        if n == 0 {
            return vec![];
        }
        let depot = self.graph.depot;
        let d = |a: NodeId, b: NodeId| self.table.dist(a, b);
        let full = (1usize << n) - 1;
        let mut cost = vec![vec![f64::INFINITY; n]; 1 << n];
        let mut parent = vec![vec![usize::MAX; n]; 1 << n];
        for j in 0..n {
            cost[1 << j][j] = d(depot, nodes[j]);
        }
        for mask in 1..=full {
            for j in 0..n {
                if mask & (1 << j) == 0 || !cost[mask][j].is_finite() {
                    continue;
                }
                let base = cost[mask][j];
                for k in 0..n {
                    if mask & (1 << k) != 0 {
                        continue;
                    }
                    let next = mask | (1 << k);
                    let c = base + d(nodes[j], nodes[k]);
                    if c < cost[next][k] {
                        cost[next][k] = c;
                        parent[next][k] = j;
                    }
                }
            }
        }
        let mut last = 0;
        let mut best = f64::INFINITY;
        for j in 0..n {
            let c = cost[full][j] + d(nodes[j], depot);
            if c < best {
                best = c;
                last = j;
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut mask = full;
        let mut cur = last;
        while cur != usize::MAX {
            order.push(cur);
            let p = parent[mask][cur];
            mask &= !(1 << cur);
            cur = p;
        }
        order.reverse();
        order
    }

    fn nearest_neighbor(&self, nodes: &[NodeId]) -> Vec<usize> {
        let mut left: Vec<usize> = (0..nodes.len()).collect();
        let mut order = Vec::with_capacity(nodes.len());
        let mut at = self.graph.depot;
        while !left.is_empty() {
            let (pos, _) = left
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (p, &i)| {
                    let d = self.table.dist(at, nodes[i]);
                    if d < best.1 {
                        (p, d)
                    } else {
                        best
                    }
                });
            let i = left.remove(pos);
            at = nodes[i];
            order.push(i);
        }
        order
    }

    fn improve(&self, nodes: &[NodeId]) -> Vec<usize> {
        let nn = self.nearest_neighbor(nodes);
        let given: Vec<usize> = (0..nodes.len()).collect();
        let mut order = if self.tour_length(nodes, &given) < self.tour_length(nodes, &nn) {
            given
        } else {
            nn
        };
        two_opt(&mut order, |a, b| {
            let na = a.map_or(self.graph.depot, |i| nodes[i]);
            let nb = b.map_or(self.graph.depot, |i| nodes[i]);
            self.table.dist(na, nb)
        });
        order
    }
}

/// First-improvement 2-opt on a depot-anchored tour. `dist(None, _)` is the
/// depot. Returns the number of improving moves applied.
fn two_opt(order: &mut [usize], dist: impl Fn(Option<usize>, Option<usize>) -> f64) -> usize {
    let n = order.len();
    let mut moves = 0;
    'scan: while moves < TWO_OPT_MAX_MOVES {
        for i in 0..n {
            for j in i + 1..n {
                let before = if i == 0 { None } else { Some(order[i - 1]) };
                let after = if j + 1 == n { None } else { Some(order[j + 1]) };
                let old = dist(before, Some(order[i])) + dist(Some(order[j]), after);
                let new = dist(before, Some(order[j])) + dist(Some(order[i]), after);
                if new < old - 1e-9 {
                    order[i..=j].reverse();
                    moves += 1;
                    continue 'scan;
                }
            }
        }
        break;
    }
    moves
}

/// Routes one pick list on `graph`, building only the distance fields it needs.
pub fn optimize_pick_sequence(graph: &RouteGraph, depot: NodeId, picks: &[SlotId]) -> Result<Route> {
    if picks.is_empty() {
        return Err(Error::InvalidArgument("pick list is empty".into()));
    }
    if depot != graph.depot {
        return Err(Error::InvalidArgument(format!(
            "depot node {depot} differs from the graph depot {}",
            graph.depot
        )));
    }
    let mut sources = vec![depot];
    for s in picks {
        sources.push(graph.pick_node(*s).ok_or(Error::UnreachableSlot(*s))?);
    }
    let table = DistanceTable::new(graph, sources);
    Router::with_table(graph, table).route(picks, Sequencing::Optimized)
}

/// Picks per hour in each aisle: picks made in the aisle over the summed
/// route durations. With a single period the mean equals the rate.
pub fn picking_frequency(routes: &[Route], params: &SimParams, num_aisles: usize) -> PickingFrequency {
    let hours: f64 = routes.iter().map(|r| r.duration(params)).sum::<f64>() / 3600.0;
    let mut rates = vec![0.0; num_aisles];
    if hours > 0.0 {
        for r in routes {
            for (&a, &n) in &r.picks_per_aisle {
                if a < num_aisles {
                    rates[a] += n as f64;
                }
            }
        }
        for v in &mut rates {
            *v /= hours;
        }
    }
    PickingFrequency {
        mean: rates.clone(),
        rates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_instance, GenParams};
    use crate::graph::{build_route_graph, shortest_path};

    fn route_with(distance: f64, picks: usize, aisle: usize) -> Route {
        Route {
            slots: vec![],
            node_path: vec![],
            total_distance: distance,
            aisle_traversal_counts: BTreeMap::new(),
            pick_count: picks,
            picks_per_aisle: BTreeMap::from([(aisle, picks)]),
        }
    }

    #[test]
    fn frequency_of_no_routes_is_zero() {
        let f = picking_frequency(&[], &SimParams::default(), 3);
        assert_eq!(f.rates, vec![0.0; 3]);
    }

    #[test]
    fn frequency_direct_evaluation() {
        let params = SimParams {
            picker_speed: 1.0,
            handle_time: 5.0,
            ..SimParams::default()
        };
        let r = route_with(100.0, 10, 2);
        assert_eq!(r.duration(&params), 150.0);
        let f = picking_frequency(&[r.clone()], &params, 4);
        assert!((f.rates[2] - 240.0).abs() < 1e-9);
        assert_eq!(f.rates[0], 0.0);

        let slower = SimParams { handle_time: 10.0, ..params.clone() };
        let g = picking_frequency(&[r], &slower, 4);
        assert!(g.rates[2] < f.rates[2]);
    }

    #[test]
    fn single_pick_is_out_and_back() {
        let inst = generate_instance(1, &GenParams::default()).unwrap();
        let g = build_route_graph(&inst.layout, inst.params.cell_size).unwrap();
        let slot = inst.assignment.0.values().next().copied().unwrap();
        let r = optimize_pick_sequence(&g, g.depot, &[slot]).unwrap();
        let (d, _) = shortest_path(&g, g.depot, g.pick_node(slot).unwrap()).unwrap();
        assert!((r.total_distance - 2.0 * d).abs() < 1e-9);
        assert_eq!(r.node_path.first(), Some(&g.depot));
        assert_eq!(r.node_path.last(), Some(&g.depot));
    }

    #[test]
    fn path_length_matches_total_distance() {
        let inst = generate_instance(2, &GenParams::default()).unwrap();
        let g = build_route_graph(&inst.layout, inst.params.cell_size).unwrap();
        let router = Router::new(&g);
        let picks: Vec<SlotId> = inst.assignment.0.values().take(12).copied().collect();
        let r = router.route(&picks, Sequencing::Optimized).unwrap();
        let walked: f64 = r
            .node_path
            .windows(2)
            .map(|w| {
                g.adjacency[w[0]]
                    .iter()
                    .find(|(n, _)| *n == w[1])
                    .map(|(_, wt)| *wt)
                    .expect("consecutive path nodes are adjacent")
            })
            .sum();
        assert!((walked - r.total_distance).abs() < 1e-9);
        assert_eq!(r.slots.len(), 12);
        assert_eq!(r.pick_count, 12);
    }

    #[test]
    fn duplicates_count_as_lines_but_one_stop() {
        let inst = generate_instance(4, &GenParams::default()).unwrap();
        let g = build_route_graph(&inst.layout, inst.params.cell_size).unwrap();
        let s = *inst.assignment.0.values().next().unwrap();
        let r = Router::new(&g).route(&[s, s], Sequencing::Optimized).unwrap();
        assert_eq!(r.slots, vec![s]);
        assert_eq!(r.pick_count, 2);
    }

    #[test]
    fn two_opt_untangles_a_crossing() {
        // points on a line; the tour 0,2,1,3 crosses itself
        let pos = [1.0, 2.0, 3.0, 4.0];
        let mut order = vec![0, 2, 1, 3];
        let dist = |a: Option<usize>, b: Option<usize>| {
            let pa: f64 = a.map_or(0.0, |i| pos[i]);
            let pb = b.map_or(0.0, |i| pos[i]);
            (pa - pb).abs()
        };
        let moves = two_opt(&mut order, dist);
        assert!(moves >= 1);
        let len = |o: &[usize]| {
            let mut prev = None;
            let mut t = 0.0;
            for &i in o {
                t += dist(prev, Some(i));
                prev = Some(i);
            }
            t + dist(prev, None)
        };
        assert_eq!(len(&order), 8.0);
    }
}
