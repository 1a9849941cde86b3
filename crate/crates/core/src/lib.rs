//! Warehouse system design optimization.
//!
//! Five coupled subsystems (rack layout, picker routing, product slotting,
//! slot reassignment and order classification) coordinated by nonhierarchical
//! analytical target cascading, plus a shift simulator that measures the
//! throughput effect of a policy bundle.

pub mod error;
pub mod generate;
pub mod graph;
pub mod layout_opt;
pub mod model;
pub mod nhatc;
pub mod order_class;
pub mod routing;
pub mod sim;
pub mod slotting;
pub mod sqp;

pub use error::{Error, Result};
