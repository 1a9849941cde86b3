//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani.
//!
//! ```text
//!     minimize    1/2 d' G d + g' d
//!     subject to  a_i' d  = b_i   (i < meq)
//!                 a_i' d >= b_i   (i >= meq)
//! ```
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time, so it needs no feasible starting point and
//! reports infeasibility when a violated constraint cannot be satisfied.
//! Problem sizes here are tiny, so each step solves its small linear systems
//! directly instead of maintaining factorization updates.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// `G` is not positive definite.
    NotConvex,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint, in the sign convention of the
    /// Lagrangian `1/2 d'Gd + g'd - sum u_i (a_i'd - b_i)`. Inequality
    /// multipliers are non-negative.
    pub multipliers: Vec<f64>,
}

pub struct QpProblem<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub linear: &'a DVector<f64>,
    pub normals: &'a [DVector<f64>],
    pub rhs: &'a [f64],
    pub meq: usize,
}

struct Active {
    index: usize,
    /// -1 when an equality is enforced through its negated normal.
    sign: f64,
    u: f64,
}

pub fn solve_qp(qp: &QpProblem<'_>) -> Result<QpSolution, QpError> {
    let n = qp.linear.len();
    let m = qp.rhs.len();
    debug_assert_eq!(qp.normals.len(), m);
    let chol = qp.hessian.clone().cholesky().ok_or(QpError::NotConvex)?;
    let ginv = chol.inverse();

    let mut x = -(&ginv * qp.linear);
    let mut active: Vec<Active> = Vec::new();
    let norms: Vec<f64> = qp.normals.iter().map(|a| a.norm().max(1e-300)).collect();
    let scale = |i: usize| 1e-12 * (1.0 + qp.rhs[i].abs() + norms[i]);

    let max_steps = 10 * (n + m) + 50;
    let mut steps = 0;
    loop {
        // pick the next constraint to enforce: pending equalities first, then
        // the most violated inequality (normalized)
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..qp.meq {
            if active.iter().any(|a| a.index == i) {
                continue;
            }
            let s = qp.normals[i].dot(&x) - qp.rhs[i];
            let sign = if s > 0.0 { -1.0 } else { 1.0 };
            pick = Some((i, sign));
            break;
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for i in qp.meq..m {
                if active.iter().any(|a| a.index == i) {
                    continue;
                }
                let s = qp.normals[i].dot(&x) - qp.rhs[i];
                if s < -scale(i) && s / norms[i] < worst {
                    worst = s / norms[i];
                    pick = Some((i, 1.0));
                }
            }
        }
        let Some((p, sign)) = pick else {
            let mut multipliers = vec![0.0; m];
            for a in &active {
                multipliers[a.index] = a.sign * a.u;
            }
            return Ok(QpSolution { x, multipliers });
        };

        let np = &qp.normals[p] * sign;
        let bp = qp.rhs[p] * sign;
        let mut up = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return Err(QpError::IterationLimit);
            }
            let (z, r) = directions(&ginv, qp, &active, &np);
            let curvature = z.dot(&np);
            let z_zero = curvature <= 1e-12 * np.dot(&(&ginv * &np)).max(1e-300);

            // dual step length: first active inequality whose multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, a) in active.iter().enumerate() {
                if a.index < qp.meq {
                    continue;
                }
                if r[j] > 0.0 {
                    let t = a.u / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let sp = np.dot(&x) - bp;
            let t2 = if z_zero { f64::INFINITY } else { -sp / curvature };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }
            if !z_zero {
                x += &z * t;
            }
            for (j, a) in active.iter_mut().enumerate() {
                a.u -= t * r[j];
            }
            up += t;
            if !z_zero && t2 <= t1 {
                active.push(Active { index: p, sign, u: up });
                break;
            }
            let j = drop.expect("finite dual step has a blocking constraint");
            active.remove(j);
        }
    }
}

/// Primal direction `z` and dual direction `r` for adding normal `np`.
fn directions(
    ginv: &DMatrix<f64>,
    qp: &QpProblem<'_>,
    active: &[Active],
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let k = active.len();
    if k == 0 {
        return (ginv * np, DVector::zeros(0));
    }
    let n = np.len();
    let mut nmat = DMatrix::zeros(n, k);
    for (j, a) in active.iter().enumerate() {
        nmat.set_column(j, &(&qp.normals[a.index] * a.sign));
    }
    let gn = ginv * &nmat;
    let m = nmat.transpose() * &gn;
    let rhs = gn.transpose() * np;
    let r = m
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| m.lu().solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(k));
    let z = ginv * (np - &nmat * &r);
    (z, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(rows: &[&[f64]]) -> Vec<DVector<f64>> {
        rows.iter().map(|r| DVector::from_row_slice(r)).collect()
    }

    #[test]
    fn unconstrained_minimum() {
        let g = DMatrix::identity(2, 2);
        let c = DVector::from_row_slice(&[1.0, -2.0]);
        let sol = solve_qp(&QpProblem { hessian: &g, linear: &c, normals: &[], rhs: &[], meq: 0 }).unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-12 && (sol.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_inequality() {
        // min 1/2 x^2 + 1/2 y^2 + x  s.t.  x + 2y >= 1  ->  (-0.6, 0.8)
        let g = DMatrix::identity(2, 2);
        let c = DVector::from_row_slice(&[1.0, 0.0]);
        let a = vecs(&[&[1.0, 2.0]]);
        let sol = solve_qp(&QpProblem { hessian: &g, linear: &c, normals: &a, rhs: &[1.0], meq: 0 }).unwrap();
        assert!((sol.x[0] + 0.6).abs() < 1e-12);
        assert!((sol.x[1] - 0.8).abs() < 1e-12);
        assert!((sol.multipliers[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn equality_and_bounds() {
        // min x^2 + y^2  s.t.  x + y = 2, x >= 1.5
        let g = DMatrix::identity(2, 2) * 2.0;
        let c = DVector::zeros(2);
        let a = vecs(&[&[1.0, 1.0], &[1.0, 0.0]]);
        let sol = solve_qp(&QpProblem { hessian: &g, linear: &c, normals: &a, rhs: &[2.0, 1.5], meq: 1 }).unwrap();
        assert!((sol.x[0] - 1.5).abs() < 1e-12);
        assert!((sol.x[1] - 0.5).abs() < 1e-12);
        // stationarity: G x + c = u_eq a_eq + u_in a_in
        let grad = &g * &sol.x + &c;
        let rec = &a[0] * sol.multipliers[0] + &a[1] * sol.multipliers[1];
        assert!((grad - rec).norm() < 1e-10);
        assert!(sol.multipliers[1] >= 0.0);
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let g = DMatrix::identity(1, 1);
        let c = DVector::zeros(1);
        let a = vecs(&[&[1.0], &[-1.0]]);
        let r = solve_qp(&QpProblem { hessian: &g, linear: &c, normals: &a, rhs: &[2.0, -1.0], meq: 0 });
        assert_eq!(r.unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn redundant_constraints_are_handled() {
        // x >= 1 listed twice plus x >= 0.5
        let g = DMatrix::identity(1, 1);
        let c = DVector::from_row_slice(&[2.0]);
        let a = vecs(&[&[1.0], &[1.0], &[2.0]]);
        let sol = solve_qp(&QpProblem { hessian: &g, linear: &c, normals: &a, rhs: &[1.0, 1.0, 1.0], meq: 0 }).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }
}
