use std::collections::BTreeMap;

use wsdo_core::generate::{generate_instance, GenParams};
use wsdo_core::model::Instance;
use wsdo_core::nhatc::warehouse::{self, decode_assignment, default_frozen, encode_assignment, warehouse_graph, WarehouseConfig};
use wsdo_core::nhatc::{configure_active_set, nhatc_solve, ActiveSet, LinkMode, NhatcOptions, NhatcStatus};

fn instance() -> Instance {
    generate_instance(42, &GenParams::default()).unwrap()
}

fn small() -> Instance {
    generate_instance(7, &GenParams { num_products: 60, num_orders: 80, ..GenParams::default() }).unwrap()
}

#[test]
fn full_graph_converges() {
    let inst = instance();
    let g = warehouse_graph(&inst, &WarehouseConfig::default()).unwrap();
    let rep = nhatc_solve(&g, &ActiveSet::all(&g), &NhatcOptions::default()).unwrap();
    assert_eq!(rep.status, NhatcStatus::Converged);
    assert!(rep.c_inf <= 1e-4);
    assert!(!rep.history.is_empty());
    for n in &rep.nodes {
        assert!(n.solution.is_some(), "{} was not solved", n.id);
    }
    // the layout's widths respect the cart clearance lower bound
    let a = &rep.link(warehouse::AISLE_WIDTHS).unwrap().r;
    let lb = inst.params.cart_width * 2.0;
    assert!(a.iter().all(|w| *w >= lb - 1e-9));
}

#[test]
fn published_assignment_is_valid() {
    let inst = instance();
    let g = warehouse_graph(&inst, &WarehouseConfig::default()).unwrap();
    let rep = nhatc_solve(&g, &ActiveSet::all(&g), &NhatcOptions::default()).unwrap();
    let slots = &rep.link(warehouse::SLOT_POSITIONS).unwrap().r;
    let a = decode_assignment(&inst, slots).unwrap();
    a.validate(&inst.layout).unwrap();
    assert_eq!(a.len(), inst.catalog.len());
}

#[test]
fn frozen_layout_scenario_runs() {
    let inst = instance();
    let cfg = WarehouseConfig::default();
    let g = warehouse_graph(&inst, &cfg).unwrap();
    let frozen = default_frozen(&inst, &cfg).unwrap();
    let ids: Vec<String> = [warehouse::ROUTING, warehouse::SLOTTING, warehouse::CLASSIFICATION].map(String::from).to_vec();
    let set = configure_active_set(&g, &ids, &frozen).unwrap();
    let rep = nhatc_solve(&g, &set, &NhatcOptions::default()).unwrap();
    assert_eq!(rep.status, NhatcStatus::Converged);
    let widths = rep.link(warehouse::AISLE_WIDTHS).unwrap();
    assert_eq!(widths.mode, LinkMode::Frozen);
    assert_eq!(widths.r, inst.layout.aisle_widths);
    assert!(rep.node(warehouse::LAYOUT).is_none());
    assert!(rep.node(warehouse::REASSIGNMENT).is_none());
    assert_eq!(rep.link(warehouse::ACCEPTED_MOVES).unwrap().mode, LinkMode::Frozen);
    assert_eq!(rep.link(warehouse::PROPOSED_SLOTS).unwrap().mode, LinkMode::Dropped);
    // every move allowed, so slotting publishes its full proposal
    let art = &rep.node(warehouse::SLOTTING).unwrap().artifacts;
    assert!(art["weighted_depot_distance"].as_f64().unwrap() < art["initial_weighted_depot_distance"].as_f64().unwrap());
}

#[test]
fn frozen_values_are_required() {
    let inst = small();
    let g = warehouse_graph(&inst, &WarehouseConfig::default()).unwrap();
    let ids = vec![warehouse::ROUTING.to_string()];
    assert!(configure_active_set(&g, &ids, &BTreeMap::new()).is_err());
}

#[test]
fn runs_are_deterministic() {
    let inst = small();
    let g = warehouse_graph(&inst, &WarehouseConfig::default()).unwrap();
    let a = nhatc_solve(&g, &ActiveSet::all(&g), &NhatcOptions::default()).unwrap();
    let b = nhatc_solve(&g, &ActiveSet::all(&g), &NhatcOptions::default()).unwrap();
    assert_eq!(a.numeric_view().unwrap(), b.numeric_view().unwrap());
}

#[test]
fn assignment_encoding_round_trips() {
    let inst = small();
    let v = encode_assignment(&inst, &inst.assignment).unwrap();
    assert_eq!(decode_assignment(&inst, &v).unwrap(), inst.assignment);
    let mut dup = v.clone();
    dup[1] = dup[0];
    assert!(decode_assignment(&inst, &dup).is_err());
    assert!(decode_assignment(&inst, &v[1..]).is_err());
}

#[test]
fn move_mask_never_collides() {
    let inst = small();
    let cfg = WarehouseConfig::default();
    let g = warehouse_graph(&inst, &cfg).unwrap();
    let rep = nhatc_solve(&g, &ActiveSet::all(&g), &NhatcOptions::default()).unwrap();
    let proposal = decode_assignment(&inst, &rep.link(warehouse::PROPOSED_SLOTS).unwrap().r).unwrap();
    let n = inst.catalog.len();
    for pattern in 0..8u32 {
        let mask: Vec<f64> = (0..n).map(|i| if (i as u32 * 7 + pattern) % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let out = warehouse::apply_move_mask(&inst, &inst.assignment, &proposal, &mask).unwrap();
        out.validate(&inst.layout).unwrap();
        for (i, p) in inst.catalog.iter().enumerate() {
            if mask[i] < 0.5 {
                assert_eq!(out.get(&p.id), inst.assignment.get(&p.id));
            }
        }
    }
    let all = warehouse::apply_move_mask(&inst, &inst.assignment, &proposal, &vec![1.0; n]).unwrap();
    assert_eq!(all, proposal);
}
