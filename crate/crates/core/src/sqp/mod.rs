//! Small dense SQP solver for smooth constrained problems.
//!
//! ```text
//!     minimize f(x)  s.t.  g(x) <= 0,  h(x) = 0,  lower <= x <= upper
//! ```
//!
//! Each iteration solves a convex QP model built from a damped-BFGS
//! approximation of the Lagrangian Hessian and the linearized constraints,
//! then backtracks on the l1 merit function `f + rho * violation`. Bounds
//! enter the QP unrelaxed, so iterates never leave the box.
//!
//! Gradients come from analytic callbacks when supplied, otherwise from
//! central differences.

mod qp;

pub use qp::{solve_qp, QpError, QpProblem, QpSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative central-difference step.
pub const FD_STEP: f64 = 1e-6;

type ValueFn<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;
type GradFn<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

/// A scalar function with an optional analytic gradient.
pub struct Function<'a> {
    value: ValueFn<'a>,
    gradient: Option<GradFn<'a>>,
}

impl<'a> Function<'a> {
    pub fn new(value: impl Fn(&[f64]) -> f64 + 'a) -> Self {
        Self { value: Box::new(value), gradient: None }
    }

    pub fn with_gradient(
        value: impl Fn(&[f64]) -> f64 + 'a,
        gradient: impl Fn(&[f64]) -> Vec<f64> + 'a,
    ) -> Self {
        Self { value: Box::new(value), gradient: Some(Box::new(gradient)) }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => fd_gradient(&self.value, x),
        }
    }

    /// Largest relative disagreement between the analytic gradient and
    /// central differences, or `None` without an analytic gradient.
    pub fn gradient_error(&self, x: &[f64]) -> Option<f64> {
        let analytic = self.gradient.as_ref()?(x);
        let fd = fd_gradient(&self.value, x);
        Some(
            analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
                .fold(0.0, f64::max),
        )
    }
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = FD_STEP * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub struct NlpProblem<'a> {
    pub dim: usize,
    pub objective: Function<'a>,
    pub inequalities: Vec<Function<'a>>,
    pub equalities: Vec<Function<'a>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl<'a> NlpProblem<'a> {
    pub fn new(dim: usize, objective: Function<'a>) -> Self {
        Self {
            dim,
            objective,
            inequalities: Vec::new(),
            equalities: Vec::new(),
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// Adds `g(x) <= 0`.
    pub fn inequality(mut self, g: Function<'a>) -> Self {
        self.inequalities.push(g);
        self
    }

    /// Adds `h(x) = 0`.
    pub fn equality(mut self, h: Function<'a>) -> Self {
        self.equalities.push(h);
        self
    }

    pub fn bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.dim || self.upper.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "bounds".into(),
                expected: self.dim,
                got: self.lower.len().min(self.upper.len()),
            });
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    /// Worst relative analytic-vs-difference gradient error over all
    /// functions that carry an analytic gradient.
    pub fn gradient_check(&self, x: &[f64]) -> f64 {
        std::iter::once(&self.objective)
            .chain(&self.inequalities)
            .chain(&self.equalities)
            .filter_map(|f| f.gradient_error(x))
            .fold(0.0, f64::max)
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.inequalities.iter().map(|g| g.value(x).max(0.0)).sum::<f64>()
            + self.equalities.iter().map(|h| h.value(x).abs()).sum::<f64>()
    }

    fn max_violation(&self, x: &[f64]) -> f64 {
        self.inequalities
            .iter()
            .map(|g| g.value(x))
            .chain(self.equalities.iter().map(|h| h.value(x).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NlpStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub status: NlpStatus,
    /// Multipliers of `g <= 0`, non-negative.
    pub ineq_multipliers: Vec<f64>,
    /// Multipliers of `h = 0` in the Lagrangian `f + mu' h`.
    pub eq_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

pub fn sqp_solve(problem: &NlpProblem<'_>, x0: &[f64], tol: f64) -> Result<NlpResult> {
    sqp_solve_with(problem, x0, &SqpOptions { tol, ..SqpOptions::default() })
}

struct Eval {
    f: f64,
    df: DVector<f64>,
    g: Vec<f64>,
    dg: Vec<DVector<f64>>,
    h: Vec<f64>,
    dh: Vec<DVector<f64>>,
}

impl Eval {
    fn at(p: &NlpProblem<'_>, x: &[f64]) -> Self {
        let v = |f: &Function<'_>| DVector::from_vec(f.gradient(x));
        Self {
            f: p.objective.value(x),
            df: v(&p.objective),
            g: p.inequalities.iter().map(|g| g.value(x)).collect(),
            dg: p.inequalities.iter().map(v).collect(),
            h: p.equalities.iter().map(|h| h.value(x)).collect(),
            dh: p.equalities.iter().map(v).collect(),
        }
    }

    fn lagrangian_gradient(&self, lam: &[f64], mu: &[f64]) -> DVector<f64> {
        let mut out = self.df.clone();
        for (l, d) in lam.iter().zip(&self.dg) {
            out.axpy(*l, d, 1.0);
        }
        for (m, d) in mu.iter().zip(&self.dh) {
            out.axpy(*m, d, 1.0);
        }
        out
    }
}

struct Step {
    d: DVector<f64>,
    lam: Vec<f64>,
    mu: Vec<f64>,
    /// Bound multipliers (lower, upper) per coordinate.
    zl: Vec<f64>,
    zu: Vec<f64>,
}

fn qp_step(p: &NlpProblem<'_>, x: &[f64], e: &Eval, b: &DMatrix<f64>) -> Option<Step> {
    let n = p.dim;
    let mut theta = 1.0;
    loop {
        let mut normals = Vec::new();
        let mut rhs = Vec::new();
        // h + dh'd = 0, relaxed to theta*h
        for (h, dh) in e.h.iter().zip(&e.dh) {
            normals.push(dh.clone());
            rhs.push(-theta * h);
        }
        // g + dg'd <= 0  ->  -dg'd >= g; only violated rows are relaxed
        for (g, dg) in e.g.iter().zip(&e.dg) {
            normals.push(-dg);
            rhs.push(if *g > 0.0 { theta * g } else { *g });
        }
        let mut bound_rows = Vec::new();
        for i in 0..n {
            if p.lower[i].is_finite() {
                normals.push(DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 }));
                rhs.push(p.lower[i] - x[i]);
                bound_rows.push((i, false));
            }
            if p.upper[i].is_finite() {
                normals.push(DVector::from_fn(n, |j, _| if j == i { -1.0 } else { 0.0 }));
                rhs.push(x[i] - p.upper[i]);
                bound_rows.push((i, true));
            }
        }
        let meq = e.h.len();
        let sol = solve_qp(&QpProblem { hessian: b, linear: &e.df, normals: &normals, rhs: &rhs, meq });
        match sol {
            Ok(sol) => {
                let u = sol.multipliers;
                let mu = u[..meq].iter().map(|v| -v).collect();
                let lam = u[meq..meq + e.g.len()].to_vec();
                let mut zl = vec![0.0; n];
                let mut zu = vec![0.0; n];
                for (k, (i, upper)) in bound_rows.iter().enumerate() {
                    let val = u[meq + e.g.len() + k];
                    if *upper {
                        zu[*i] = val;
                    } else {
                        zl[*i] = val;
                    }
                }
                return Some(Step { d: sol.x, lam, mu, zl, zu });
            }
            Err(QpError::NotConvex) => return None,
            Err(_) if theta > 1e-3 => theta *= 0.5,
            Err(_) if theta > 0.0 => theta = 0.0,
            Err(_) => return None,
        }
    }
}

fn kkt_residual(p: &NlpProblem<'_>, x: &[f64], e: &Eval, s: &Step) -> f64 {
    let mut grad = e.lagrangian_gradient(&s.lam, &s.mu);
    for i in 0..p.dim {
        grad[i] += s.zu[i] - s.zl[i];
    }
    let stationarity = grad.amax();
    let mut comp: f64 = 0.0;
    for (l, g) in s.lam.iter().zip(&e.g) {
        comp = comp.max((l * g).abs());
    }
    for i in 0..p.dim {
        if s.zl[i] != 0.0 {
            comp = comp.max((s.zl[i] * (x[i] - p.lower[i])).abs());
        }
        if s.zu[i] != 0.0 {
            comp = comp.max((s.zu[i] * (p.upper[i] - x[i])).abs());
        }
    }
    let dual = s.lam.iter().chain(&s.zl).chain(&s.zu).map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    stationarity.max(comp).max(dual)
}

/// Linearized l1 violation at step `d`.
fn model_violation(e: &Eval, d: &DVector<f64>) -> f64 {
    e.g.iter().zip(&e.dg).map(|(g, dg)| (g + dg.dot(d)).max(0.0)).sum::<f64>()
        + e.h.iter().zip(&e.dh).map(|(h, dh)| (h + dh.dot(d)).abs()).sum::<f64>()
}

pub fn sqp_solve_with(problem: &NlpProblem<'_>, x0: &[f64], opts: &SqpOptions) -> Result<NlpResult> {
    problem.validate()?;
    if x0.len() != problem.dim {
        return Err(Error::DimensionMismatch {
            context: "x0".into(),
            expected: problem.dim,
            got: x0.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if x0.iter().enumerate().any(|(i, v)| !(v >= &problem.lower[i] && v <= &problem.upper[i])) {
        return Err(Error::InvalidArgument("x0 lies outside the bounds".into()));
    }

    let n = problem.dim;
    let mut x = x0.to_vec();
    let mut e = Eval::at(problem, &x);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut b_is_identity = true;
    let mut scaled = false;
    let mut rho: f64 = 0.0;
    let mut iterations = 0;

    let finish = |x: Vec<f64>, e: &Eval, s: Option<&Step>, kkt: f64, iterations: usize, tol: f64| {
        let max_violation = problem.max_violation(&x);
        let status = if max_violation > tol {
            NlpStatus::Infeasible
        } else if kkt <= tol {
            NlpStatus::Converged
        } else {
            NlpStatus::MaxIter
        };
        NlpResult {
            objective: e.f,
            kkt_residual: kkt,
            max_violation,
            iterations,
            status,
            ineq_multipliers: s.map_or_else(|| vec![0.0; e.g.len()], |s| s.lam.clone()),
            eq_multipliers: s.map_or_else(|| vec![0.0; e.h.len()], |s| s.mu.clone()),
            x,
        }
    };

    loop {
        let Some(step) = qp_step(problem, &x, &e, &b) else {
            return Ok(finish(x, &e, None, f64::INFINITY, iterations, opts.tol));
        };
        let kkt = kkt_residual(problem, &x, &e, &step);
        if (kkt <= opts.tol && problem.max_violation(&x) <= opts.tol) || iterations >= opts.max_iter {
            return Ok(finish(x, &e, Some(&step), kkt, iterations, opts.tol));
        }
        iterations += 1;

        let max_mult = step.lam.iter().chain(&step.mu).map(|v| v.abs()).fold(0.0, f64::max);
        rho = rho.max(1.5 * max_mult + 1e-8);
        let viol0 = problem.violation(&x);
        let merit0 = e.f + rho * viol0;
        let slope = e.df.dot(&step.d) + rho * (model_violation(&e, &step.d) - viol0);
        let d_small = step.d.amax() <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));

        let mut accepted = None;
        if slope < 0.0 && !d_small {
            let mut alpha = 1.0;
            while alpha >= 1e-10 {
                let trial: Vec<f64> = (0..n)
                    .map(|i| (x[i] + alpha * step.d[i]).clamp(problem.lower[i], problem.upper[i]))
                    .collect();
                let merit = problem.objective.value(&trial) + rho * problem.violation(&trial);
                if merit <= merit0 + 1e-4 * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some(x_new) = accepted else {
            if b_is_identity {
                return Ok(finish(x, &e, Some(&step), kkt, iterations, opts.tol));
            }
            log::debug!("sqp: line search failed, resetting Hessian");
            b = DMatrix::identity(n, n);
            b_is_identity = true;
            continue;
        };

        let e_new = Eval::at(problem, &x_new);
        let s = DVector::from_fn(n, |i, _| x_new[i] - x[i]);
        let mut y = e_new.lagrangian_gradient(&step.lam, &step.mu) - e.lagrangian_gradient(&step.lam, &step.mu);
        let sy = s.dot(&y);
        if !scaled && sy > 0.0 {
            b = DMatrix::identity(n, n) * (y.dot(&y) / sy);
            scaled = true;
        }
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sbs > 1e-300 {
            // Powell damping keeps B positive definite
            if sy < 0.2 * sbs {
                let t = 0.8 * sbs / (sbs - sy);
                y = &y * t + &bs * (1.0 - t);
            }
            let sy = s.dot(&y);
            b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
            b = (&b + b.transpose()) * 0.5;
            b_is_identity = false;
        }
        x = x_new;
        e = e_new;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_square() {
        let p = NlpProblem::new(1, Function::new(|x| x[0] * x[0]));
        let r = sqp_solve(&p, &[3.0], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!(r.x[0].abs() < 1e-6);
    }

    #[test]
    fn active_inequality_multiplier() {
        // min (x-3)^2 s.t. x - 1 <= 0: x* = 1, lambda = 2(3-1) = 4
        let p = NlpProblem::new(1, Function::new(|x| (x[0] - 3.0).powi(2)))
            .inequality(Function::new(|x| x[0] - 1.0));
        let r = sqp_solve(&p, &[0.0], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.ineq_multipliers[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn start_outside_inequality() {
        let p = NlpProblem::new(1, Function::new(|x| (x[0] - 3.0).powi(2)))
            .inequality(Function::new(|x| x[0] - 1.0));
        let r = sqp_solve(&p, &[5.0], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
    }

    fn rosenbrock<'a>() -> NlpProblem<'a> {
        NlpProblem::new(
            2,
            Function::with_gradient(
                |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
                |x| {
                    vec![
                        -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                        200.0 * (x[1] - x[0] * x[0]),
                    ]
                },
            ),
        )
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let p = rosenbrock();
        let r = sqp_solve(&p, &[-1.2, 1.0], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_gradient_matches_differences() {
        let p = rosenbrock();
        for x in [[-1.2, 1.0], [0.3, -0.7], [2.0, 4.0]] {
            assert!(p.gradient_check(&x) < 1e-5);
        }
    }

    #[test]
    fn equality_on_circle() {
        // min x + y s.t. x^2 + y^2 = 2 -> (-1, -1), mu = 1/2
        let p = NlpProblem::new(2, Function::new(|x| x[0] + x[1]))
            .equality(Function::new(|x| x[0] * x[0] + x[1] * x[1] - 2.0));
        let r = sqp_solve(&p, &[0.5, -1.5], 1e-7).unwrap();
        assert_eq!(r.status, NlpStatus::Converged, "{r:?}");
        assert!((r.x[0] + 1.0).abs() < 1e-5 && (r.x[1] + 1.0).abs() < 1e-5);
        assert!((r.eq_multipliers[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn bound_constrained() {
        let p = NlpProblem::new(2, Function::new(|x| (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2)))
            .bounds(vec![0.0, 0.0], vec![1.0, 1.0]);
        let r = sqp_solve(&p, &[0.5, 0.5], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Converged);
        assert!(r.x[0].abs() < 1e-10 && (r.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_constraints_report_status() {
        let p = NlpProblem::new(1, Function::new(|x| x[0] * x[0]))
            .inequality(Function::new(|x| 1.0 - x[0]))
            .inequality(Function::new(|x| x[0] + 1.0));
        let r = sqp_solve(&p, &[0.0], 1e-8).unwrap();
        assert_eq!(r.status, NlpStatus::Infeasible);
    }

    #[test]
    fn start_outside_bounds_is_rejected() {
        let p = NlpProblem::new(1, Function::new(|x| x[0])).bounds(vec![0.0], vec![1.0]);
        assert!(sqp_solve(&p, &[2.0], 1e-8).is_err());
    }
}
