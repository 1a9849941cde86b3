//! Aisle-width design: maximize floor utilization subject to the flow
//! clearance `k * rate_i - a_i <= 0` on every aisle.
//!
//! The row count is relaxed to the continuous `n(a) = (D + a) / (d_r + a)`
//! for the mean aisle width `a`, giving the smooth utilization
//! `u(a) = n(a) * d_r / D`. It falls strictly in `a` whenever `D > d_r`, so
//! every aisle ends at its lower bound; the SQP solve certifies that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sqp::{sqp_solve, Function, NlpProblem, NlpResult, NlpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowTemplate {
    pub floor_depth: f64,
    pub rack_depth: f64,
    pub row_length: f64,
}

impl RowTemplate {
    /// Continuous row count for mean aisle width `a`.
    pub fn rows(&self, a: f64) -> f64 {
        (self.floor_depth + a) / (self.rack_depth + a)
    }

    pub fn utilization(&self, widths: &[f64]) -> f64 {
        self.rows(mean(widths)) * self.rack_depth / self.floor_depth
    }

    pub fn utilization_gradient(&self, widths: &[f64]) -> Vec<f64> {
        let a = mean(widths);
        let dn = (self.rack_depth - self.floor_depth) / (self.rack_depth + a).powi(2);
        let per = dn * self.rack_depth / self.floor_depth / widths.len() as f64;
        vec![per; widths.len()]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutOptResult {
    pub aisle_widths: Vec<f64>,
    pub utilization: f64,
    pub rows_continuous: f64,
    /// Whole rows that fit at the optimized mean width.
    pub rows_integer: usize,
    pub utilization_integer: f64,
    /// Per aisle: the clearance term `k * rate` exceeds `a_lb`.
    pub clearance_binding: Vec<bool>,
    pub solver: NlpResult,
}

pub const LAYOUT_TOL: f64 = 1e-9;

pub fn optimize_layout(template: &RowTemplate, rates: &[f64], k: f64, a_lb: f64) -> Result<LayoutOptResult> {
    let RowTemplate { floor_depth, rack_depth, .. } = *template;
    if !(floor_depth > rack_depth && rack_depth > 0.0) {
        return Err(Error::InvalidArgument("floor depth must exceed rack depth".into()));
    }
    if rates.is_empty() {
        return Err(Error::InvalidArgument("at least one aisle rate is required".into()));
    }
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidArgument("aisle rates must be finite and non-negative".into()));
    }
    if !(a_lb > 0.0) || !(k > 0.0) {
        return Err(Error::InvalidArgument("a_lb and k must be positive".into()));
    }
    let room = floor_depth - rack_depth;
    let worst = rates.iter().fold(0.0f64, |m, r| m.max(k * r)).max(a_lb);
    if worst >= room {
        return Err(Error::LayoutInfeasible {
            clearance: worst,
            rack_depth,
            floor_depth,
        });
    }

    let m = rates.len();
    let tpl = *template;
    let mut problem = NlpProblem::new(
        m,
        Function::with_gradient(
            move |a| -tpl.utilization(a),
            move |a| tpl.utilization_gradient(a).into_iter().map(|g| -g).collect(),
        ),
    )
    .bounds(vec![a_lb; m], vec![room; m]);
    for (i, &rate) in rates.iter().enumerate() {
        problem = problem.inequality(Function::with_gradient(
            move |a| k * rate - a[i],
            move |a| {
                let mut g = vec![0.0; a.len()];
                g[i] = -1.0;
                g
            },
        ));
    }

    let x0 = vec![(worst + 0.5 * (room - worst)).max(a_lb); m];
    let solver = sqp_solve(&problem, &x0, LAYOUT_TOL)?;
    if solver.status == NlpStatus::Infeasible {
        return Err(Error::Solver(format!("layout solve infeasible: {solver:?}")));
    }
    let widths = solver.x.clone();
    let a = mean(&widths);
    let rows_continuous = template.rows(a);
    let rows_integer = rows_continuous.floor() as usize;
    Ok(LayoutOptResult {
        utilization: template.utilization(&widths),
        rows_continuous,
        rows_integer,
        utilization_integer: rows_integer as f64 * rack_depth / floor_depth,
        clearance_binding: rates.iter().map(|r| k * r > a_lb).collect(),
        aisle_widths: widths,
        solver,
    })
}
