use proptest::prelude::*;
use wsdo_core::generate::{generate_instance, GenParams};
use wsdo_core::model::Instance;
use wsdo_core::routing::Sequencing;
use wsdo_core::sim::{
    compare_policies, simulate_day, BatchingPolicy, LayoutPolicy, PolicyBundle, SlottingPolicy,
};

fn instance(seed: u64, shift_hours: f64) -> Instance {
    let gen = GenParams { num_products: 50, num_orders: 120, ..GenParams::default() };
    let mut inst = generate_instance(seed, &gen).unwrap();
    inst.params.shift_length = shift_hours;
    inst
}

fn bundle() -> impl Strategy<Value = PolicyBundle> {
    (
        prop_oneof![Just(SlottingPolicy::Random), Just(SlottingPolicy::Clustered)],
        prop_oneof![Just(Sequencing::GivenOrder), Just(Sequencing::Optimized)],
        prop_oneof![Just(BatchingPolicy::OneOrderPerTrip), Just(BatchingPolicy::SvmBatched)],
        prop_oneof![Just(LayoutPolicy::Frozen), Just(LayoutPolicy::Optimized)],
    )
        .prop_map(|(slotting, sequencing, batching, layout)| PolicyBundle { slotting, sequencing, batching, layout })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn orders_and_time_are_conserved(seed in 0u64..500, shift in 0.05f64..2.0, b in bundle()) {
        let inst = instance(seed, shift);
        let r = simulate_day(&inst, &b, seed).unwrap();
        prop_assert_eq!(r.orders_offered, inst.history.len());
        prop_assert_eq!(r.orders_completed + r.orders_in_progress + r.orders_not_started, r.orders_offered);
        prop_assert_eq!(r.carts.len(), r.parallelism);
        prop_assert!(r.parallelism <= inst.params.max_carts);

        let mut completed_trips = 0;
        let mut completed_distance = 0.0;
        let mut completed_orders = 0;
        for cart in &r.carts {
            prop_assert!((cart.busy + cart.idle - r.shift_seconds).abs() <= 1e-6 * r.shift_seconds);
            prop_assert!(cart.idle >= -1e-9);
            for w in cart.trips.windows(2) {
                prop_assert!(w[0].completed);
                prop_assert!(w[1].start >= w[0].end);
            }
            for t in &cart.trips {
                prop_assert!(t.end <= r.shift_seconds);
                if t.completed {
                    completed_trips += 1;
                    completed_distance += t.distance;
                    completed_orders += t.orders;
                }
            }
        }
        prop_assert_eq!(completed_trips, r.trips_completed);
        prop_assert_eq!(completed_orders, r.orders_completed);
        prop_assert!((completed_distance - r.total_distance).abs() <= 1e-9 * r.total_distance.max(1.0));
        prop_assert!(r.total_distance <= r.planned_distance + 1e-9);
        let busy: f64 = r.carts.iter().map(|c| c.busy).sum();
        prop_assert!((busy - r.total_time).abs() <= 1e-9 * busy.max(1.0));
    }

    #[test]
    fn reports_are_byte_identical_for_a_seed(seed in 0u64..500, b in bundle()) {
        let inst = instance(seed, 1.0);
        let a = serde_json::to_string(&simulate_day(&inst, &b, seed).unwrap()).unwrap();
        let again = serde_json::to_string(&simulate_day(&inst, &b, seed).unwrap()).unwrap();
        prop_assert_eq!(a, again);
    }

    #[test]
    fn identical_bundles_show_no_improvement(seed in 0u64..500, b in bundle()) {
        let inst = instance(seed, 0.5);
        let c = compare_policies(&inst, &b, &b, seed).unwrap();
        prop_assert_eq!(c.baseline_completed, c.optimized_completed);
        if c.baseline_completed > 0 {
            prop_assert_eq!(c.improvement, Some(0.0));
        }
    }
}

#[test]
fn optimized_plans_walk_less_per_order_than_the_baseline() {
    for seed in 0..8 {
        let inst = instance(seed, 8.0);
        let c = compare_policies(&inst, &PolicyBundle::baseline(), &PolicyBundle::optimized(), seed).unwrap();
        assert!(c.optimized.planned_distance < c.baseline.planned_distance, "seed {seed}");
        assert!(c.optimized_completed >= c.baseline_completed, "seed {seed}");
    }
}
