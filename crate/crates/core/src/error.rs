use thiserror::Error;

use crate::model::SlotId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity exceeded: {products} products but only {slots} slots")]
    Capacity { products: usize, slots: usize },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cell size {cell_size} m exceeds the narrowest aisle ({min_aisle} m)")]
    InfeasibleDiscretization { cell_size: f64, min_aisle: f64 },

    #[error("slot {0} has no adjacent walkable cell")]
    IsolatedSlot(SlotId),

    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: usize, to: usize },

    #[error("slot {0} is unreachable from the depot")]
    UnreachableSlot(SlotId),

    #[error("layout infeasible: clearance {clearance} m leaves no room for a rack of depth {rack_depth} m in {floor_depth} m")]
    LayoutInfeasible {
        clearance: f64,
        rack_depth: f64,
        floor_depth: f64,
    },

    #[error("training labels are degenerate: at least two categories are required")]
    DegenerateLabels,

    #[error("no cart fits: narrowest aisle {min_aisle} m is below cart width {cart_width} m")]
    InfeasibleParallelism { min_aisle: f64, cart_width: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
