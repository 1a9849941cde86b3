//! Warehouse domain model.
//!
//! Floor coordinates are in meters with the origin at the front-left corner:
//! `x` runs along the floor width (parallel to the rack rows) and `y` runs
//! along the floor depth (across the rows). Rack rows are centered along the
//! width so that both ends leave a cross aisle. Aisle `0` is the gap between
//! the front wall and the first row, aisle `i` the gap in front of row `i`,
//! and the last aisle the gap behind the last row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains_open(&self, p: Point) -> bool {
        p.x > self.x0 + GEOM_EPS
            && p.x < self.x1 - GEOM_EPS
            && p.y > self.y0 + GEOM_EPS
            && p.y < self.y1 - GEOM_EPS
    }

    /// Interior overlap; touching edges do not count.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 - GEOM_EPS
            && other.x0 < self.x1 - GEOM_EPS
            && self.y0 < other.y1 - GEOM_EPS
            && other.y0 < self.y1 - GEOM_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RackRow {
    /// Distance of the row's front face from the front wall.
    pub offset: f64,
    pub depth: f64,
    pub length: f64,
    pub slot_count: usize,
}

/// Which face of the rack a slot is picked from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Front,
    Back,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub floor_width: f64,
    pub floor_depth: f64,
    pub rack_rows: Vec<RackRow>,
    /// One width per gap: front wall, between consecutive rows, back wall.
    pub aisle_widths: Vec<f64>,
    pub depot: Point,
}

/// Slot address: rack row index and slot index along that row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotId {
    pub row: usize,
    pub index: usize,
}

impl SlotId {
    pub fn new(row: usize, index: usize) -> Self {
        Self { row, index }
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}s{}", self.row, self.index)
    }
}

impl Layout {
    pub fn num_aisles(&self) -> usize {
        self.rack_rows.len() + 1
    }

    pub fn slot_total(&self) -> usize {
        self.rack_rows.iter().map(|r| r.slot_count).sum()
    }

    /// All slots in row-major order. The position in this list is the slot's
    /// global index, used when assignments are encoded as numeric vectors.
    pub fn slot_ids(&self) -> Vec<SlotId> {
        self.rack_rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| (0..row.slot_count).map(move |i| SlotId::new(r, i)))
            .collect()
    }

    pub fn has_slot(&self, slot: SlotId) -> bool {
        self.rack_rows
            .get(slot.row)
            .is_some_and(|row| slot.index < row.slot_count)
    }

    pub fn slot_global_index(&self, slot: SlotId) -> Option<usize> {
        if !self.has_slot(slot) {
            return None;
        }
        let before: usize = self.rack_rows[..slot.row].iter().map(|r| r.slot_count).sum();
        Some(before + slot.index)
    }

    pub fn rack_rect(&self, row: usize) -> Rect {
        let r = &self.rack_rows[row];
        let x0 = (self.floor_width - r.length) / 2.0;
        Rect {
            x0,
            y0: r.offset,
            x1: x0 + r.length,
            y1: r.offset + r.depth,
        }
    }

    /// Slots come in back-to-back pairs: even indices face the front aisle,
    /// odd indices the aisle behind the row.
    pub fn slot_anchor(&self, slot: SlotId) -> (f64, Face) {
        let row = &self.rack_rows[slot.row];
        let positions = row.slot_count.div_ceil(2).max(1);
        let rect = self.rack_rect(slot.row);
        let pos = slot.index / 2;
        let x = rect.x0 + (pos as f64 + 0.5) * row.length / positions as f64;
        let face = if slot.index % 2 == 0 { Face::Front } else { Face::Back };
        (x, face)
    }

    /// `[y0, y1]` band of each aisle.
    pub fn aisle_bands(&self) -> Vec<(f64, f64)> {
        let mut bands = Vec::with_capacity(self.num_aisles());
        let mut start = 0.0;
        for row in &self.rack_rows {
            bands.push((start, row.offset));
            start = row.offset + row.depth;
        }
        bands.push((start, self.floor_depth));
        bands
    }

    /// `[x0, x1]` span covered by rack rows; cells outside it belong to the
    /// cross aisles.
    pub fn rack_span_x(&self) -> Option<(f64, f64)> {
        (0..self.rack_rows.len())
            .map(|r| self.rack_rect(r))
            .fold(None, |acc, rc| match acc {
                None => Some((rc.x0, rc.x1)),
                Some((a, b)) => Some((a.min(rc.x0), b.max(rc.x1))),
            })
    }

    /// Checks every geometric invariant. `min_aisle` is the configured lower
    /// bound on aisle widths.
    pub fn validate(&self, min_aisle: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLayout(m));
        if !(self.floor_width > 0.0 && self.floor_depth > 0.0) {
            return bad("floor dimensions must be positive".into());
        }
        if self.aisle_widths.len() != self.num_aisles() {
            return bad(format!(
                "expected {} aisle widths, got {}",
                self.num_aisles(),
                self.aisle_widths.len()
            ));
        }
        for (i, &a) in self.aisle_widths.iter().enumerate() {
            if !a.is_finite() || a < min_aisle - GEOM_EPS || a <= 0.0 {
                return bad(format!("aisle {i} width {a} below minimum {min_aisle}"));
            }
        }
        for (i, row) in self.rack_rows.iter().enumerate() {
            if !(row.depth > 0.0 && row.length > 0.0) || row.slot_count == 0 {
                return bad(format!("rack row {i} has non-positive dimensions or no slots"));
            }
            if row.length > self.floor_width + GEOM_EPS {
                return bad(format!("rack row {i} is longer than the floor"));
            }
        }
        let used: f64 = self.rack_rows.iter().map(|r| r.depth).sum::<f64>()
            + self.aisle_widths.iter().sum::<f64>();
        if used > self.floor_depth + GEOM_EPS {
            return bad(format!(
                "racks and aisles need {used} m but the floor is {} m deep",
                self.floor_depth
            ));
        }
        for (i, (&(y0, y1), &a)) in self.aisle_bands().iter().zip(&self.aisle_widths).enumerate() {
            if y1 - y0 < a - GEOM_EPS {
                return bad(format!("gap {i} is {} m, narrower than its aisle width {a} m", y1 - y0));
            }
        }
        let d = self.depot;
        if d.x < -GEOM_EPS
            || d.y < -GEOM_EPS
            || d.x > self.floor_width + GEOM_EPS
            || d.y > self.floor_depth + GEOM_EPS
        {
            return bad("depot lies outside the floor".into());
        }
        if (0..self.rack_rows.len()).any(|r| self.rack_rect(r).contains_open(d)) {
            return bad("depot lies inside a rack footprint".into());
        }
        Ok(())
    }

    /// Re-spaces the rows so the gaps equal `widths`; row count, depths and
    /// lengths are kept. The back gap absorbs any remaining floor depth.
    pub fn with_aisle_widths(&self, widths: &[f64]) -> Result<Layout> {
        if widths.len() != self.num_aisles() {
            return Err(Error::DimensionMismatch {
                context: "aisle widths".into(),
                expected: self.num_aisles(),
                got: widths.len(),
            });
        }
        let mut out = self.clone();
        let mut y = 0.0;
        for (row, &a) in out.rack_rows.iter_mut().zip(widths) {
            y += a;
            row.offset = y;
            y += row.depth;
        }
        out.aisle_widths = widths.to_vec();
        out.validate(f64::MIN_POSITIVE)?;
        Ok(out)
    }
}

/// Ratio of total rack footprint to floor area.
pub fn utilization(layout: &Layout) -> f64 {
    let racks: f64 = layout.rack_rows.iter().map(|r| r.depth * r.length).sum();
    racks / (layout.floor_width * layout.floor_depth)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductId(pub String);

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ProductId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: ProductId,
    pub popularity_rank: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotAssignment(pub BTreeMap<ProductId, SlotId>);

impl SlotAssignment {
    pub fn get(&self, product: &ProductId) -> Option<SlotId> {
        self.0.get(product).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn occupant_map(&self) -> BTreeMap<SlotId, ProductId> {
        self.0.iter().map(|(p, s)| (*s, p.clone())).collect()
    }

    pub fn validate(&self, layout: &Layout) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (p, s) in &self.0 {
            if !layout.has_slot(*s) {
                return Err(Error::InvalidInstance(format!("product {p} assigned to unknown slot {s}")));
            }
            if !seen.insert(*s) {
                return Err(Error::InvalidInstance(format!("slot {s} holds more than one product")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderLine {
    pub product_id: ProductId,
    pub quantity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub lines: Vec<OrderLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// m/s
    pub picker_speed: f64,
    /// seconds per pick line
    pub handle_time: f64,
    /// m
    pub cart_width: f64,
    /// hours
    pub shift_length: f64,
    /// Clearance coefficient `k`, meters per (picks/hour).
    pub clearance_coeff: f64,
    /// m
    pub cell_size: f64,
    pub max_carts: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            picker_speed: 1.0,
            handle_time: 10.0,
            cart_width: 1.0,
            shift_length: 4.0,
            clearance_coeff: 0.01,
            cell_size: 0.5,
            max_carts: 3,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("picker_speed", self.picker_speed),
            ("handle_time", self.handle_time),
            ("cart_width", self.cart_width),
            ("shift_length", self.shift_length),
            ("clearance_coeff", self.clearance_coeff),
            ("cell_size", self.cell_size),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInstance(format!("{name} must be strictly positive")));
            }
        }
        if self.max_carts == 0 {
            return Err(Error::InvalidInstance("max_carts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn shift_seconds(&self) -> f64 {
        self.shift_length * 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub layout: Layout,
    pub catalog: Vec<Product>,
    pub assignment: SlotAssignment,
    pub history: Vec<Order>,
    pub params: SimParams,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.layout.validate(f64::MIN_POSITIVE)?;
        let mut ids = BTreeSet::new();
        for p in &self.catalog {
            if !ids.insert(&p.id) {
                return Err(Error::InvalidInstance(format!("duplicate product id {}", p.id)));
            }
        }
        self.assignment.validate(&self.layout)?;
        for p in &self.catalog {
            if self.assignment.get(&p.id).is_none() {
                return Err(Error::InvalidInstance(format!("product {} has no slot", p.id)));
            }
        }
        for o in &self.history {
            if o.lines.is_empty() {
                return Err(Error::InvalidInstance(format!("order {} has no lines", o.id)));
            }
            for l in &o.lines {
                if l.quantity == 0 {
                    return Err(Error::InvalidInstance(format!("order {} has a zero-quantity line", o.id)));
                }
                if !ids.contains(&l.product_id) {
                    return Err(Error::InvalidInstance(format!(
                        "order {} references unknown product {}",
                        o.id, l.product_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Number of order lines per product over the history.
    pub fn pick_counts(&self) -> BTreeMap<ProductId, usize> {
        let mut counts: BTreeMap<ProductId, usize> =
            self.catalog.iter().map(|p| (p.id.clone(), 0)).collect();
        for o in &self.history {
            for l in &o.lines {
                *counts.entry(l.product_id.clone()).or_default() += 1;
            }
        }
        counts
    }
}
