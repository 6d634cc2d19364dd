//! Independent reference solvers used only by the test suites.
//!
//! None of these share code with `srlmpc::qp`: the box oracle is accelerated
//! projected gradient, general constraints go through an augmented Lagrangian
//! wrapped around it, and tiny problems are solved exactly by enumerating
//! active sets.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use srlmpc::qp::QpProblem;

fn lipschitz(h: &DMatrix<f64>) -> f64 {
    // Gershgorin bound on the largest eigenvalue
    (0..h.nrows())
        .map(|i| h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12)
}

fn project(z: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(lo[i], hi[i]);
    }
}

/// FISTA with adaptive restart on `f` whose gradient is `grad` and Lipschitz constant `l`.
fn fista(
    mut z: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    l: f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    project(&mut z, lo, hi);
    let mut y = z.clone();
    let mut t = 1.0_f64;
    for _ in 0..max_iter {
        let mut next = &y - grad(&y) / l;
        project(&mut next, lo, hi);
        let gm = (&next - &y).amax() * l;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // restart when the step points uphill
        if (&y - &next).dot(&(&next - &z)) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            y = &next + (&next - &z) * momentum;
            t = t_next;
        }
        z = next;
        if gm < tol {
            break;
        }
    }
    z
}

/// Projected-gradient minimiser of `½zᵀHz + gᵀz` over a box.
pub fn projected_gradient_box(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> DVector<f64> {
    let l = lipschitz(h);
    fista(
        DVector::zeros(g.len()),
        lo,
        hi,
        l,
        |z| h * z + g,
        1e-13,
        2_000_000,
    )
}

/// Augmented-Lagrangian outer loop with projected-gradient inner solves.
///
/// Handles general equality and inequality rows; the box is kept as the projection set.
pub fn augmented_lagrangian(problem: &QpProblem) -> DVector<f64> {
    let n = problem.num_vars();
    let (a, b) = (&problem.eq_matrix, &problem.eq_rhs);
    let (c, d) = (&problem.ineq_matrix, &problem.ineq_rhs);
    let mut y = DVector::zeros(b.len());
    let mut lam = DVector::zeros(d.len());
    let mut z = DVector::zeros(n);
    let mut rho = 10.0;
    for _ in 0..200 {
        let l = lipschitz(&problem.hessian)
            + rho * (lipschitz(&(a.transpose() * a)) + lipschitz(&(c.transpose() * c)));
        let grad = |z: &DVector<f64>| {
            let mut gr = &problem.hessian * z + &problem.linear;
            if !b.is_empty() {
                gr += a.tr_mul(&(&y + (a * z - b) * rho));
            }
            if !d.is_empty() {
                let shifted = (&lam + (c * z - d) * rho).map(|v| v.max(0.0));
                gr += c.tr_mul(&shifted);
            }
            gr
        };
        z = fista(z, &problem.lower, &problem.upper, l, grad, 1e-11, 200_000);
        let eq_res = if !b.is_empty() {
            (a * &z - b).amax()
        } else {
            0.0
        };
        let in_res = if !d.is_empty() {
            (c * &z - d).iter().fold(0.0_f64, |m, v| m.max(*v))
        } else {
            0.0
        };
        if !b.is_empty() {
            y += (a * &z - b) * rho;
        }
        if !d.is_empty() {
            lam = (&lam + (c * &z - d) * rho).map(|v| v.max(0.0));
        }
        if eq_res.max(in_res) < 1e-10 {
            break;
        }
        rho = (rho * 2.0).min(1e6);
    }
    z
}

/// Exact solution of a tiny strictly convex QP by enumerating active sets.
///
/// Returns `None` when no KKT point exists (the problem is infeasible).
pub fn active_set_enumeration(problem: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = problem.num_vars();
    let p = problem.num_eq();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for r in 0..problem.num_ineq() {
        rows.push((problem.ineq_matrix.row(r).transpose(), problem.ineq_rhs[r]));
    }
    for i in 0..n {
        if problem.upper[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push((e, problem.upper[i]));
        }
        if problem.lower[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            rows.push((e, -problem.lower[i]));
        }
    }
    let max_active = n.saturating_sub(p);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut subset = Vec::new();
    enumerate(rows.len(), max_active, 0, &mut subset, &mut |active| {
        let k = active.len();
        let dim = n + p + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
        for r in 0..p {
            for c in 0..n {
                kkt[(n + r, c)] = problem.eq_matrix[(r, c)];
                kkt[(c, n + r)] = problem.eq_matrix[(r, c)];
            }
            rhs[n + r] = problem.eq_rhs[r];
        }
        for (j, &r) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + p + j, c)] = rows[r].0[c];
                kkt[(c, n + p + j)] = rows[r].0[c];
            }
            rhs[n + p + j] = rows[r].1;
        }
        let lu = kkt.lu();
        if lu.determinant().abs() < 1e-14 {
            return;
        }
        let Some(sol) = lu.solve(&rhs) else { return };
        let z = sol.rows(0, n).into_owned();
        if (0..k).any(|j| sol[n + p + j] < -1e-9) {
            return;
        }
        if rows.iter().any(|(a, b)| a.dot(&z) > b + 1e-9) {
            return;
        }
        if p > 0 && (&problem.eq_matrix * &z - &problem.eq_rhs).amax() > 1e-9 {
            return;
        }
        let obj = problem.objective(&z);
        if best.as_ref().is_none_or(|(_, o)| obj < *o) {
            best = Some((z, obj));
        }
    });
    best
}

fn enumerate(
    total: usize,
    max: usize,
    start: usize,
    subset: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    visit(subset);
    if subset.len() == max {
        return;
    }
    for r in start..total {
        subset.push(r);
        enumerate(total, max, r + 1, subset, visit);
        subset.pop();
    }
}

/// Random strictly convex box-constrained problem with `n` variables.
pub fn random_box_qp(rng: &mut ChaCha8Rng, n: usize) -> QpProblem {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let lo = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..0.0));
    let hi = DVector::from_fn(n, |i, _| lo[i] + rng.gen_range(0.5..3.0));
    QpProblem::new(h, g).with_bounds(lo, hi)
}
