//! Walkable-cell graph over the warehouse floor.
//!
//! The floor is cut into square cells of side `cell_size`; every cell whose
//! interior does not overlap a rack footprint becomes a node. Nodes are
//! numbered in row-major order (`y` then `x`), so comparing node-id sequences
//! is a well-defined deterministic tie-breaker.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Face, Layout, Point, Rect, SlotId};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteGraph {
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    pub nodes: Vec<Cell>,
    /// Neighbors sorted by node id; weights are `cell_size`.
    pub adjacency: Vec<Vec<(NodeId, f64)>>,
    pub pick_nodes: BTreeMap<SlotId, NodeId>,
    pub aisle_of: Vec<Option<usize>>,
    pub depot: NodeId,
    cell_to_node: Vec<Option<NodeId>>,
}

impl RouteGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn node_at(&self, col: usize, row: usize) -> Option<NodeId> {
        if col >= self.cols || row >= self.rows {
            return None;
        }
        self.cell_to_node[row * self.cols + col]
    }

    /// Node whose cell contains `p`, if that cell is walkable.
    pub fn node_at_point(&self, p: Point) -> Option<NodeId> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let col = ((p.x / self.cell_size).floor() as usize).min(self.cols.saturating_sub(1));
        let row = ((p.y / self.cell_size).floor() as usize).min(self.rows.saturating_sub(1));
        self.node_at(col, row)
    }

    pub fn center(&self, node: NodeId) -> Point {
        let c = self.nodes[node];
        Point::new(
            (c.col as f64 + 0.5) * self.cell_size,
            (c.row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn pick_node(&self, slot: SlotId) -> Option<NodeId> {
        self.pick_nodes.get(&slot).copied()
    }
}

fn cell_rect(col: usize, row: usize, cell: f64) -> Rect {
    Rect {
        x0: col as f64 * cell,
        y0: row as f64 * cell,
        x1: (col + 1) as f64 * cell,
        y1: (row + 1) as f64 * cell,
    }
}

/// 4-connected graph over the walkable cells of a `cols` x `rows` grid.
/// No pick nodes or aisles; the depot is node 0.
pub fn grid_graph(cols: usize, rows: usize, cell_size: f64, walkable: impl Fn(usize, usize) -> bool) -> RouteGraph {
    let mut nodes = Vec::new();
    let mut cell_to_node = vec![None; cols * rows];
    for row in 0..rows {
        for col in 0..cols {
            if walkable(col, row) {
                cell_to_node[row * cols + col] = Some(nodes.len());
                nodes.push(Cell { col, row });
            }
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (id, c) in nodes.iter().enumerate() {
        let mut nbrs = Vec::with_capacity(4);
        if c.row > 0 {
            nbrs.extend(cell_to_node[(c.row - 1) * cols + c.col]);
        }
        if c.col > 0 {
            nbrs.extend(cell_to_node[c.row * cols + c.col - 1]);
        }
        if c.col + 1 < cols {
            nbrs.extend(cell_to_node[c.row * cols + c.col + 1]);
        }
        if c.row + 1 < rows {
            nbrs.extend(cell_to_node[(c.row + 1) * cols + c.col]);
        }
        nbrs.sort_unstable();
        adjacency[id] = nbrs.into_iter().map(|n| (n, cell_size)).collect();
    }

    RouteGraph {
        cell_size,
        cols,
        rows,
        aisle_of: vec![None; nodes.len()],
        nodes,
        adjacency,
        pick_nodes: BTreeMap::new(),
        depot: 0,
        cell_to_node,
    }
}

pub fn build_route_graph(layout: &Layout, cell_size: f64) -> Result<RouteGraph> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidArgument("cell_size must be positive".into()));
    }
    // gaps of width zero are walls flush with a rack, not aisles
    let min_aisle = layout
        .aisle_widths
        .iter()
        .copied()
        .filter(|&a| a > 0.0)
        .fold(f64::INFINITY, f64::min);
    if min_aisle.is_finite() && cell_size > min_aisle + 1e-9 {
        return Err(Error::InfeasibleDiscretization { cell_size, min_aisle });
    }

    let cols = (layout.floor_width / cell_size + 1e-9).floor() as usize;
    let rows = (layout.floor_depth / cell_size + 1e-9).floor() as usize;
    let racks: Vec<Rect> = (0..layout.rack_rows.len()).map(|r| layout.rack_rect(r)).collect();

    let mut graph = grid_graph(cols, rows, cell_size, |col, row| {
        let rc = cell_rect(col, row, cell_size);
        racks.iter().all(|r| !r.overlaps(&rc))
    });

    let bands = layout.aisle_bands();
    let span = layout.rack_span_x();
    graph.aisle_of = graph
        .nodes
        .iter()
        .map(|c| {
            let (x0, x1) = span?;
            let cx = (c.col as f64 + 0.5) * cell_size;
            let cy = (c.row as f64 + 0.5) * cell_size;
            if cx < x0 || cx > x1 {
                return None;
            }
            bands.iter().position(|&(y0, y1)| cy >= y0 && cy < y1)
        })
        .collect();

    for slot in layout.slot_ids() {
        let (x, face) = layout.slot_anchor(slot);
        let rect = layout.rack_rect(slot.row);
        let front = Point::new(x, rect.y0 - cell_size / 2.0);
        let back = Point::new(x, rect.y1 + cell_size / 2.0);
        let order = match face {
            Face::Front => [front, back],
            Face::Back => [back, front],
        };
        let node = order
            .iter()
            .filter(|p| p.y >= 0.0 && p.y < layout.floor_depth)
            .find_map(|&p| graph.node_at_point(p))
            .ok_or(Error::IsolatedSlot(slot))?;
        graph.pick_nodes.insert(slot, node);
    }

    graph.depot = graph
        .node_at_point(layout.depot)
        .ok_or_else(|| Error::InvalidLayout("depot cell is not walkable".into()))?;
    Ok(graph)
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source distances; unreachable nodes are `f64::INFINITY`.
pub fn dijkstra(graph: &RouteGraph, source: NodeId) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &graph.adjacency[node] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(HeapEntry { dist: nd, node: next });
            }
        }
    }
    dist
}

fn on_shortest(d_next: f64, w: f64, d_cur: f64) -> bool {
    (d_next + w - d_cur).abs() <= 1e-9 * d_cur.max(1.0)
}

/// Walks from `from` towards the node whose distance field is `to_dist`,
/// always taking the smallest-id neighbor that stays on a shortest path.
/// This yields the lexicographically smallest shortest node sequence.
pub fn walk_shortest(graph: &RouteGraph, to_dist: &[f64], from: NodeId) -> Vec<NodeId> {
    let mut path = vec![from];
    let mut cur = from;
    while to_dist[cur] > 0.0 {
        let next = graph.adjacency[cur]
            .iter()
            .find(|&&(n, w)| on_shortest(to_dist[n], w, to_dist[cur]))
            .map(|&(n, _)| n)
            .expect("distance field is consistent with the graph");
        path.push(next);
        cur = next;
    }
    path
}

/// Shortest distance and the lexicographically smallest shortest path.
pub fn shortest_path(graph: &RouteGraph, a: NodeId, b: NodeId) -> Result<(f64, Vec<NodeId>)> {
    let n = graph.node_count();
    if a >= n || b >= n {
        return Err(Error::InvalidArgument(format!("node out of range (graph has {n} nodes)")));
    }
    let to_b = dijkstra(graph, b);
    if !to_b[a].is_finite() {
        return Err(Error::Unreachable { from: a, to: b });
    }
    Ok((to_b[a], walk_shortest(graph, &to_b, a)))
}

/// Precomputed distance fields from a fixed set of nodes (depot and pick
/// nodes), enough to route any pick list without further searches.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    index: BTreeMap<NodeId, usize>,
    fields: Vec<Vec<f64>>,
}

impl DistanceTable {
    pub fn new(graph: &RouteGraph, sources: impl IntoIterator<Item = NodeId>) -> Self {
        let mut index = BTreeMap::new();
        let mut fields = Vec::new();
        for s in sources {
            if let std::collections::btree_map::Entry::Vacant(e) = index.entry(s) {
                e.insert(fields.len());
                fields.push(dijkstra(graph, s));
            }
        }
        Self { index, fields }
    }

    /// Table covering the depot and every slot's pick node.
    pub fn for_picking(graph: &RouteGraph) -> Self {
        let sources = std::iter::once(graph.depot).chain(graph.pick_nodes.values().copied());
        Self::new(graph, sources)
    }

    pub fn field(&self, node: NodeId) -> Option<&[f64]> {
        self.index.get(&node).map(|&i| self.fields[i].as_slice())
    }

    /// Distance between two tabled nodes (either may be the source).
    pub fn dist(&self, a: NodeId, b: NodeId) -> f64 {
        match (self.field(a), self.field(b)) {
            (Some(f), _) => f[b],
            (None, Some(f)) => f[a],
            (None, None) => panic!("neither node {a} nor {b} is in the distance table"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RackRow;

    fn open_floor(w: f64, d: f64) -> Layout {
        Layout {
            floor_width: w,
            floor_depth: d,
            rack_rows: vec![],
            aisle_widths: vec![d],
            depot: Point::new(0.0, 0.0),
        }
    }

    #[test]
    fn empty_three_by_three() {
        let g = build_route_graph(&open_floor(3.0, 3.0), 1.0).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.edge_count(), 12);
    }

    #[test]
    fn center_rack_removes_one_cell() {
        let layout = Layout {
            floor_width: 3.0,
            floor_depth: 3.0,
            rack_rows: vec![RackRow { offset: 1.0, depth: 1.0, length: 1.0, slot_count: 1 }],
            aisle_widths: vec![1.0, 1.0],
            depot: Point::new(0.0, 0.0),
        };
        let g = build_route_graph(&layout, 1.0).unwrap();
        // oracle: the 3x3 grid has 12 adjacencies, 4 of them touch the center
        let mut expected_edges = 0;
        for r in 0..3usize {
            for c in 0..3usize {
                if (r, c) == (1, 1) {
                    continue;
                }
                if c + 1 < 3 && (r, c + 1) != (1, 1) {
                    expected_edges += 1;
                }
                if r + 1 < 3 && (r + 1, c) != (1, 1) {
                    expected_edges += 1;
                }
            }
        }
        assert_eq!(g.node_count(), 8);
        assert_eq!(g.edge_count(), expected_edges);
        assert_eq!(expected_edges, 8);
        assert_eq!(g.pick_node(SlotId::new(0, 0)), g.node_at(1, 0));
    }

    #[test]
    fn wall_to_wall_rack_isolates_slots() {
        let layout = Layout {
            floor_width: 3.0,
            floor_depth: 1.0,
            rack_rows: vec![RackRow { offset: 0.0, depth: 1.0, length: 3.0, slot_count: 2 }],
            aisle_widths: vec![0.0, 0.0],
            depot: Point::new(0.0, 0.0),
        };
        assert!(matches!(build_route_graph(&layout, 1.0), Err(Error::IsolatedSlot(_))));
    }

    #[test]
    fn coarse_cells_are_rejected() {
        let layout = Layout {
            floor_width: 10.0,
            floor_depth: 4.0,
            rack_rows: vec![RackRow { offset: 1.0, depth: 1.0, length: 8.0, slot_count: 2 }],
            aisle_widths: vec![1.0, 2.0],
            depot: Point::new(0.0, 0.0),
        };
        assert!(matches!(
            build_route_graph(&layout, 1.5),
            Err(Error::InfeasibleDiscretization { .. })
        ));
    }

    #[test]
    fn identity_and_manhattan() {
        let g = build_route_graph(&open_floor(5.0, 5.0), 1.0).unwrap();
        let a = g.node_at(0, 0).unwrap();
        assert_eq!(shortest_path(&g, a, a).unwrap(), (0.0, vec![a]));
        let b = g.node_at(4, 4).unwrap();
        let (d, path) = shortest_path(&g, a, b).unwrap();
        assert_eq!(d, 8.0);
        assert_eq!(path.len(), 9);
        // smallest ids first: row 0 is walked before climbing
        assert_eq!(&path[..5], &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn disconnected_is_unreachable() {
        let layout = Layout {
            floor_width: 3.0,
            floor_depth: 3.0,
            rack_rows: vec![RackRow { offset: 1.0, depth: 1.0, length: 3.0, slot_count: 1 }],
            aisle_widths: vec![1.0, 1.0],
            depot: Point::new(0.0, 0.0),
        };
        let g = build_route_graph(&layout, 1.0).unwrap();
        let a = g.node_at(0, 0).unwrap();
        let b = g.node_at(0, 2).unwrap();
        assert!(matches!(shortest_path(&g, a, b), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn aisles_are_labelled_inside_rack_span() {
        let layout = Layout {
            floor_width: 6.0,
            floor_depth: 5.0,
            rack_rows: vec![RackRow { offset: 2.0, depth: 1.0, length: 4.0, slot_count: 4 }],
            aisle_widths: vec![2.0, 2.0],
            depot: Point::new(3.0, 0.0),
        };
        let g = build_route_graph(&layout, 1.0).unwrap();
        assert_eq!(g.aisle_of[g.node_at(2, 0).unwrap()], Some(0));
        assert_eq!(g.aisle_of[g.node_at(2, 4).unwrap()], Some(1));
        assert_eq!(g.aisle_of[g.node_at(0, 0).unwrap()], None);
        assert_eq!(g.pick_node(SlotId::new(0, 1)), g.node_at(2, 3));
    }
}
