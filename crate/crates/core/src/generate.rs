//! Seeded synthetic instances.
//!
//! Demand follows a Zipf law over popularity ranks and order sizes a shifted
//! Poisson law (`1 + Poisson(mean - 1)`). The same seed always yields the
//! same instance, down to the serialized bytes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Instance, Layout, Order, OrderLine, Point, Product, ProductId, RackRow, SimParams,
    SlotAssignment,
};

/// First order timestamp (2023-11-14T22:13:20Z).
const EPOCH_BASE: i64 = 1_700_000_000;
/// Mean spacing between consecutive order timestamps.
const ORDER_SPACING_S: i64 = 60;

/// Parallel rack rows of equal size, evenly spaced by `aisle_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutTemplate {
    pub floor_width: f64,
    pub floor_depth: f64,
    pub rows: usize,
    pub rack_depth: f64,
    pub row_length: f64,
    pub slots_per_row: usize,
    pub aisle_width: f64,
}

impl Default for LayoutTemplate {
    fn default() -> Self {
        Self {
            floor_width: 34.0,
            floor_depth: 18.5,
            rows: 4,
            rack_depth: 1.5,
            row_length: 30.0,
            slots_per_row: 60,
            aisle_width: 2.5,
        }
    }
}

impl LayoutTemplate {
    pub fn build(&self) -> Result<Layout> {
        let mut rows = Vec::with_capacity(self.rows);
        let mut y = 0.0;
        for _ in 0..self.rows {
            y += self.aisle_width;
            rows.push(RackRow {
                offset: y,
                depth: self.rack_depth,
                length: self.row_length,
                slot_count: self.slots_per_row,
            });
            y += self.rack_depth;
        }
        let back = self.floor_depth - y;
        let mut widths = vec![self.aisle_width; self.rows];
        widths.push(self.aisle_width.min(back));
        let layout = Layout {
            floor_width: self.floor_width,
            floor_depth: self.floor_depth,
            rack_rows: rows,
            aisle_widths: widths,
            depot: Point::new(self.floor_width / 2.0, 0.0),
        };
        layout.validate(f64::MIN_POSITIVE)?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub num_products: usize,
    pub num_orders: usize,
    pub zipf_exponent: f64,
    pub mean_lines_per_order: f64,
    pub layout: LayoutTemplate,
    pub params: SimParams,
}

impl Default for GenParams {
    /// The shipped benchmark: 200 products, 400 orders, 4 rack rows.
    fn default() -> Self {
        Self {
            num_products: 200,
            num_orders: 400,
            zipf_exponent: 1.0,
            mean_lines_per_order: 3.0,
            layout: LayoutTemplate::default(),
            params: SimParams::default(),
        }
    }
}

pub fn product_id(index: usize, width: usize) -> ProductId {
    ProductId(format!("p{:0width$}", index + 1, width = width))
}

pub fn generate_instance(seed: u64, gen: &GenParams) -> Result<Instance> {
    if gen.num_products == 0 || gen.num_orders == 0 {
        return Err(Error::InvalidArgument("product and order counts must be at least 1".into()));
    }
    if !(gen.zipf_exponent > 0.0) {
        return Err(Error::InvalidArgument("zipf_exponent must be positive".into()));
    }
    if !(gen.mean_lines_per_order >= 1.0) {
        return Err(Error::InvalidArgument("mean_lines_per_order must be at least 1".into()));
    }
    gen.params.validate()?;
    let layout = gen.layout.build()?;
    let slots = layout.slot_ids();
    if gen.num_products > slots.len() {
        return Err(Error::Capacity {
            products: gen.num_products,
            slots: slots.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = gen.num_products.to_string().len().max(4);
    let catalog: Vec<Product> = (0..gen.num_products)
        .map(|i| Product {
            id: product_id(i, width),
            popularity_rank: (i + 1) as u32,
        })
        .collect();

    let mut shuffled = slots;
    shuffled.shuffle(&mut rng);
    let assignment = SlotAssignment(
        catalog
            .iter()
            .zip(shuffled)
            .map(|(p, s)| (p.id.clone(), s))
            .collect(),
    );

    let zipf = Zipf::new(gen.num_products as f64, gen.zipf_exponent)
        .map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))?;
    let extra = gen.mean_lines_per_order - 1.0;
    let poisson = if extra > 0.0 {
        Some(Poisson::new(extra).map_err(|e| Error::InvalidArgument(format!("poisson: {e}")))?)
    } else {
        None
    };

    let mut history = Vec::with_capacity(gen.num_orders);
    let mut t = EPOCH_BASE;
    for id in 0..gen.num_orders {
        let n_lines = 1 + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut lines: Vec<OrderLine> = Vec::with_capacity(n_lines);
        for _ in 0..n_lines {
            let rank = zipf.sample(&mut rng) as usize;
            let pid = &catalog[rank.clamp(1, gen.num_products) - 1].id;
            let qty = rng.random_range(1..=3u32);
            // repeated products merge into one line
            match lines.iter_mut().find(|l| &l.product_id == pid) {
                Some(l) => l.quantity += qty,
                None => lines.push(OrderLine {
                    product_id: pid.clone(),
                    quantity: qty,
                }),
            }
        }
        history.push(Order {
            id: id as u64 + 1,
            timestamp: t,
            lines,
        });
        t += 1 + rng.random_range(0..2 * ORDER_SPACING_S);
    }

    let inst = Instance {
        layout,
        catalog,
        assignment,
        history,
        params: gen.params.clone(),
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let g = GenParams::default();
        let a = generate_instance(7, &g).unwrap().to_json().unwrap();
        let b = generate_instance(7, &g).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = generate_instance(8, &g).unwrap().to_json().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn more_products_than_slots_is_a_capacity_error() {
        let g = GenParams {
            num_products: 10,
            layout: LayoutTemplate {
                floor_width: 10.0,
                floor_depth: 6.0,
                rows: 1,
                rack_depth: 1.0,
                row_length: 8.0,
                slots_per_row: 5,
                aisle_width: 2.0,
            },
            ..GenParams::default()
        };
        assert!(matches!(
            generate_instance(1, &g),
            Err(Error::Capacity { products: 10, slots: 5 })
        ));
    }

    #[test]
    fn rank_one_share_matches_zipf_normalization() {
        let g = GenParams {
            num_products: 4,
            num_orders: 10_000,
            zipf_exponent: 1.0,
            mean_lines_per_order: 1.0,
            ..GenParams::default()
        };
        let inst = generate_instance(11, &g).unwrap();
        // oracle: H_4 = 1 + 1/2 + 1/3 + 1/4
        let harmonic: f64 = (1..=4).map(|r| 1.0 / r as f64).sum();
        let expected = 1.0 / harmonic;
        assert!((expected - 0.48).abs() < 0.001);
        let counts = inst.pick_counts();
        let total: usize = counts.values().sum();
        let share = counts[&inst.catalog[0].id] as f64 / total as f64;
        assert!((share - expected).abs() <= 0.05, "share {share}");
    }

    #[test]
    fn pick_counts_decrease_with_rank() {
        let g = GenParams {
            num_products: 8,
            num_orders: 2_000,
            ..GenParams::default()
        };
        let inst = generate_instance(3, &g).unwrap();
        let counts = inst.pick_counts();
        let by_rank: Vec<usize> = inst.catalog.iter().map(|p| counts[&p.id]).collect();
        assert!(by_rank.windows(2).all(|w| w[0] >= w[1]), "{by_rank:?}");
    }

    #[test]
    fn orders_are_non_empty_and_timestamps_increase() {
        let inst = generate_instance(5, &GenParams::default()).unwrap();
        assert!(inst.history.iter().all(|o| !o.lines.is_empty()));
        assert!(inst.history.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }
}
