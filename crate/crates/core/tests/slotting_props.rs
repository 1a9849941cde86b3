use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use wsdo_core::generate::{generate_instance, GenParams, LayoutTemplate};
use wsdo_core::graph::{build_route_graph, RouteGraph};
use wsdo_core::model::{Layout, Order, OrderLine, ProductId, SlotAssignment, SlotId};
use wsdo_core::slotting::{
    assign_slots, evaluate_reassignment, inertia, kmeans, lloyd, pick_frequencies, slot_distances,
    weighted_depot_distance, Clustering,
};

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn points() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (2usize..40, 1usize..4).prop_flat_map(|(n, dim)| {
        (prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), n), 1..=n.min(5))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kmeans_ends_at_a_lloyd_fixpoint(((pts, k), seed) in (points(), any::<u64>())) {
        let c = kmeans(&pts, k, seed).unwrap();
        prop_assert_eq!(c.assignment.len(), pts.len());
        prop_assert!((c.inertia - inertia(&pts, &c.assignment, &c.centroids)).abs() <= 1e-9 * c.inertia.max(1.0));
        for w in c.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        for (p, &a) in pts.iter().zip(&c.assignment) {
            let own = sq(p, &c.centroids[a]);
            for other in &c.centroids {
                prop_assert!(own <= sq(p, other) * (1.0 + 1e-9) + 1e-12);
            }
        }
        let again = lloyd(&pts, c.centroids.clone(), 300);
        prop_assert_eq!(&again.assignment, &c.assignment);
        prop_assert_eq!(kmeans(&pts, k, seed).unwrap(), c);
    }
}

fn tiny_graph(slots_per_row: usize) -> (Layout, RouteGraph) {
    let params = GenParams {
        num_products: 2,
        num_orders: 1,
        layout: LayoutTemplate { rows: 2, slots_per_row, ..LayoutTemplate::default() },
        ..GenParams::default()
    };
    let inst = generate_instance(3, &params).unwrap();
    let g = build_route_graph(&inst.layout, inst.params.cell_size).unwrap();
    (inst.layout, g)
}

fn pid(i: usize) -> ProductId {
    ProductId(format!("P{i}"))
}

fn history(counts: &[u32]) -> Vec<Order> {
    let mut orders = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let id = orders.len() as u64;
            orders.push(Order { id, timestamp: id as i64, lines: vec![OrderLine { product_id: pid(i), quantity: 1 }] });
        }
    }
    orders
}

fn clustering(labels: &[usize], k: usize) -> Clustering {
    Clustering {
        k,
        products: (0..labels.len()).map(pid).collect(),
        assignment: labels.to_vec(),
        centroids: vec![vec![0.0]; k],
        inertia: 0.0,
        inertia_history: Vec::new(),
        iterations: 0,
    }
}

/// Smallest weighted distance over every injective placement of the
/// products onto the candidate slots.
fn best_placement(products: &[ProductId], slots: &[SlotId], freq: &BTreeMap<ProductId, f64>, dist: &BTreeMap<SlotId, f64>) -> f64 {
    fn go(
        i: usize,
        products: &[ProductId],
        slots: &[SlotId],
        used: &mut Vec<bool>,
        acc: &mut BTreeMap<ProductId, SlotId>,
        freq: &BTreeMap<ProductId, f64>,
        dist: &BTreeMap<SlotId, f64>,
        best: &mut f64,
    ) {
        if i == products.len() {
            *best = best.min(weighted_depot_distance(&SlotAssignment(acc.clone()), freq, dist));
            return;
        }
        for j in 0..slots.len() {
            if !used[j] {
                used[j] = true;
                acc.insert(products[i].clone(), slots[j]);
                go(i + 1, products, slots, used, acc, freq, dist, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, products, slots, &mut vec![false; slots.len()], &mut BTreeMap::new(), freq, dist, &mut best);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_cluster_placement_is_optimal(counts in prop::collection::vec(1u32..20, 1..=5)) {
        let (layout, g) = tiny_graph(4);
        let hist = history(&counts);
        let c = clustering(&vec![0; counts.len()], 1);
        let a = assign_slots(&c, &layout, &g, &hist).unwrap();
        a.validate(&layout).unwrap();
        let freq = pick_frequencies(&hist);
        let dist = slot_distances(&g);
        let all: Vec<SlotId> = dist.keys().copied().collect();
        let got = weighted_depot_distance(&a, &freq, &dist);
        let best = best_placement(&c.products, &all, &freq, &dist);
        prop_assert!(got <= best + 1e-9, "{got} > {best}");
    }

    #[test]
    fn within_each_cluster_block_the_placement_is_optimal(
        (counts, labels) in (2usize..=6).prop_flat_map(|n| (prop::collection::vec(1u32..20, n), prop::collection::vec(0usize..2, n)))
    ) {
        let (layout, g) = tiny_graph(4);
        let hist = history(&counts);
        let c = clustering(&labels, 2);
        let a = assign_slots(&c, &layout, &g, &hist).unwrap();
        let freq = pick_frequencies(&hist);
        let dist = slot_distances(&g);
        for cluster in 0..2 {
            let members: Vec<ProductId> = c.members(cluster).into_iter().map(pid).collect();
            let block: Vec<SlotId> = members.iter().map(|p| a.get(p).unwrap()).collect();
            let sub = SlotAssignment(members.iter().map(|p| (p.clone(), a.get(p).unwrap())).collect());
            let got = weighted_depot_distance(&sub, &freq, &dist);
            prop_assert!(got <= best_placement(&members, &block, &freq, &dist) + 1e-9);
        }
        // the busier cluster gets the nearer block
        let total = |k: usize| c.members(k).iter().map(|&i| counts[i] as f64).sum::<f64>();
        let far = |k: usize| c.members(k).iter().map(|&i| dist[&a.get(&pid(i)).unwrap()]).fold(f64::NEG_INFINITY, f64::max);
        let near = |k: usize| c.members(k).iter().map(|&i| dist[&a.get(&pid(i)).unwrap()]).fold(f64::INFINITY, f64::min);
        if !c.members(0).is_empty() && !c.members(1).is_empty() {
            let (hot, cold) = if total(0) >= total(1) { (0, 1) } else { (1, 0) };
            if total(hot) > total(cold) {
                prop_assert!(far(hot) <= near(cold));
            }
        }
    }
}

fn reassignment_case() -> impl Strategy<Value = (Vec<u32>, Vec<usize>, Vec<usize>, usize)> {
    (1usize..=6).prop_flat_map(|n| {
        let slots: Vec<usize> = (0..16).collect();
        (
            prop::collection::vec(1u32..30, n),
            Just(slots.clone()).prop_shuffle().prop_map(move |s| s[..n].to_vec()),
            Just(slots).prop_shuffle().prop_map(move |s| s[..n].to_vec()),
            0usize..=n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn reassignment_respects_budget_and_occupancy((counts, from, to, budget) in reassignment_case()) {
        let (_, g) = tiny_graph(8);
        let slots: Vec<SlotId> = g.pick_nodes.keys().copied().collect();
        let hist = history(&counts);
        let current = SlotAssignment((0..counts.len()).map(|i| (pid(i), slots[from[i]])).collect());
        let proposed = SlotAssignment((0..counts.len()).map(|i| (pid(i), slots[to[i]])).collect());
        let plan = evaluate_reassignment(&current, &proposed, &hist, &g, 1.0, budget as f64).unwrap();
        prop_assert!(plan.total_cost <= budget as f64);
        let used: BTreeSet<SlotId> = plan.result.0.values().copied().collect();
        prop_assert_eq!(used.len(), counts.len(), "two products share a slot");
        let accepted: f64 = plan.accepted().map(|m| m.benefit).sum();
        prop_assert_eq!(plan.total_benefit, accepted);
        for m in plan.accepted() {
            prop_assert!(m.benefit > 0.0);
            prop_assert_eq!(plan.result.get(&m.product), Some(m.to_slot));
        }
        let freq = pick_frequencies(&hist);
        let dist = slot_distances(&g);
        let before = weighted_depot_distance(&current, &freq, &dist);
        let after = weighted_depot_distance(&plan.result, &freq, &dist);
        prop_assert!(after <= before + 1e-9);
    }

    #[test]
    fn reassignment_into_free_slots_matches_brute_force((counts, from, _, budget) in reassignment_case()) {
        let (_, g) = tiny_graph(8);
        let slots: Vec<SlotId> = g.pick_nodes.keys().copied().collect();
        let n = counts.len();
        let hist = history(&counts);
        // targets drawn from slots nobody occupies
        let free: Vec<usize> = (0..16).filter(|s| !from.contains(s)).take(n).collect();
        let current = SlotAssignment((0..n).map(|i| (pid(i), slots[from[i]])).collect());
        let proposed = SlotAssignment((0..n).map(|i| (pid(i), slots[free[i]])).collect());
        let plan = evaluate_reassignment(&current, &proposed, &hist, &g, 1.0, budget as f64).unwrap();

        let freq = pick_frequencies(&hist);
        let dist = slot_distances(&g);
        let gain = |i: usize| freq[&pid(i)] * (dist[&slots[from[i]]] - dist[&slots[free[i]]]);
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize <= budget {
                best = best.max((0..n).filter(|i| mask & (1 << i) != 0).map(gain).sum());
            }
        }
        prop_assert!((plan.total_benefit - best).abs() <= 1e-9 * best.max(1.0), "{} vs {}", plan.total_benefit, best);
    }
}
