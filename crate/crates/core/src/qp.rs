//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize     ½ zᵀ H z + gᵀ z
//!     subject to   A_eq z  = b_eq
//!                  A_in z <= b_in
//!                  lower <= z <= upper
//! ```
//!
//! and are solved with a Mehrotra predictor-corrector interior-point method.
//! Converged iterates are polished by re-solving the equality-constrained
//! problem on the detected active set, which pins equality rows (and active
//! bounds) to machine precision.
//!
//! Infeasibility is reported only with evidence: either a Farkas certificate
//! read off the diverging dual iterates, or a phase-one problem whose optimal
//! constraint violation stays bounded away from zero.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("hessian has a negative eigenvalue below -1e-8")]
    Nonconvex,
    #[error("bounds are not ordered for variable {0}")]
    Bounds(usize),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("solver settings invalid: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with free variables.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "hessian is {:?}, expected {n}x{n}",
                self.hessian.shape()
            )));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(QpError::Dimension(format!(
                "equality block is {:?} with {} right-hand sides",
                self.eq_matrix.shape(),
                self.eq_rhs.len()
            )));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(QpError::Dimension(format!(
                "inequality block is {:?} with {} right-hand sides",
                self.ineq_matrix.shape(),
                self.ineq_rhs.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension(format!(
                "bounds have lengths {} and {}, expected {n}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        let finite = |m: &[f64]| m.iter().all(|x| x.is_finite());
        if !finite(self.hessian.as_slice()) {
            return Err(QpError::NonFinite("hessian"));
        }
        if !finite(self.linear.as_slice()) {
            return Err(QpError::NonFinite("linear term"));
        }
        if !finite(self.eq_matrix.as_slice()) || !finite(self.eq_rhs.as_slice()) {
            return Err(QpError::NonFinite("equality constraints"));
        }
        if !finite(self.ineq_matrix.as_slice()) || !finite(self.ineq_rhs.as_slice()) {
            return Err(QpError::NonFinite("inequality constraints"));
        }
        for i in 0..n {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if lo.is_nan()
                || hi.is_nan()
                || lo > hi
                || lo == f64::INFINITY
                || hi == f64::NEG_INFINITY
            {
                return Err(QpError::Bounds(i));
            }
        }
        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(QpError::Asymmetric(asym));
        }
        let shifted = &self.hessian + DMatrix::identity(n, n) * 1e-8;
        if n > 0 && shifted.cholesky().is_none() {
            return Err(QpError::Nonconvex);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Lagrange multipliers; all inequality and bound multipliers are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(problem: &QpProblem) -> Self {
        let n = problem.num_vars();
        Self {
            eq: DVector::zeros(problem.num_eq()),
            ineq: DVector::zeros(problem.num_ineq()),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    /// Largest residual; NaN if any residual is NaN.
    pub fn max(&self) -> f64 {
        nan_max(
            nan_max(self.stationarity, self.primal),
            self.complementarity,
        )
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn abs_max(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| nan_max(m, x.abs()))
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub multipliers: Multipliers,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Stationarity, primal feasibility, and complementarity (including dual sign) norms.
///
/// Stationarity uses the convention `H z + g + A_eqᵀ y + A_inᵀ λ + μ_up − μ_lo = 0`.
pub fn kkt_residuals(problem: &QpProblem, z: &DVector<f64>, m: &Multipliers) -> KktResiduals {
    let mut grad = &problem.hessian * z + &problem.linear;
    if problem.num_eq() > 0 {
        grad += problem.eq_matrix.tr_mul(&m.eq);
    }
    if problem.num_ineq() > 0 {
        grad += problem.ineq_matrix.tr_mul(&m.ineq);
    }
    grad += &m.upper - &m.lower;
    let stationarity = abs_max(&grad);

    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    if problem.num_eq() > 0 {
        primal = nan_max(primal, abs_max(&(&problem.eq_matrix * z - &problem.eq_rhs)));
    }
    if problem.num_ineq() > 0 {
        let slack = &problem.ineq_rhs - &problem.ineq_matrix * z;
        for (s, l) in slack.iter().zip(m.ineq.iter()) {
            primal = nan_max(primal, -s);
            comp = nan_max(nan_max(comp, (s * l).abs()), -l);
        }
    }
    for i in 0..problem.num_vars() {
        for (bound, mult, gap) in [
            (problem.lower[i], m.lower[i], z[i] - problem.lower[i]),
            (problem.upper[i], m.upper[i], problem.upper[i] - z[i]),
        ] {
            if bound.is_finite() {
                primal = nan_max(primal, -gap);
                comp = nan_max(nan_max(comp, (gap * mult).abs()), -mult);
            } else if mult != 0.0 {
                comp = f64::INFINITY;
            }
        }
    }
    KktResiduals {
        stationarity,
        primal,
        complementarity: comp,
    }
}

/// Inequalities `G z <= h` gathered from general rows and finite bounds.
struct Stacked<'a> {
    problem: &'a QpProblem,
    upper_idx: Vec<usize>,
    lower_idx: Vec<usize>,
}

impl<'a> Stacked<'a> {
    fn new(problem: &'a QpProblem) -> Self {
        let n = problem.num_vars();
        Self {
            problem,
            upper_idx: (0..n).filter(|&i| problem.upper[i].is_finite()).collect(),
            lower_idx: (0..n).filter(|&i| problem.lower[i].is_finite()).collect(),
        }
    }

    fn rows(&self) -> usize {
        self.problem.num_ineq() + self.upper_idx.len() + self.lower_idx.len()
    }

    fn h(&self) -> DVector<f64> {
        let p = self.problem;
        let mut h = DVector::zeros(self.rows());
        let mi = p.num_ineq();
        h.rows_mut(0, mi).copy_from(&p.ineq_rhs);
        for (k, &i) in self.upper_idx.iter().enumerate() {
            h[mi + k] = p.upper[i];
        }
        let off = mi + self.upper_idx.len();
        for (k, &i) in self.lower_idx.iter().enumerate() {
            h[off + k] = -p.lower[i];
        }
        h
    }

    fn mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let p = self.problem;
        let mut out = DVector::zeros(self.rows());
        let mi = p.num_ineq();
        if mi > 0 {
            out.rows_mut(0, mi).copy_from(&(&p.ineq_matrix * z));
        }
        for (k, &i) in self.upper_idx.iter().enumerate() {
            out[mi + k] = z[i];
        }
        let off = mi + self.upper_idx.len();
        for (k, &i) in self.lower_idx.iter().enumerate() {
            out[off + k] = -z[i];
        }
        out
    }

    fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.problem;
        let mi = p.num_ineq();
        let mut out = if mi > 0 {
            p.ineq_matrix.tr_mul(&v.rows(0, mi).into_owned())
        } else {
            DVector::zeros(p.num_vars())
        };
        for (k, &i) in self.upper_idx.iter().enumerate() {
            out[i] += v[mi + k];
        }
        let off = mi + self.upper_idx.len();
        for (k, &i) in self.lower_idx.iter().enumerate() {
            out[i] -= v[off + k];
        }
        out
    }

    /// `Gᵀ diag(w) G`.
    fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let p = self.problem;
        let n = p.num_vars();
        let mi = p.num_ineq();
        let mut gram = if mi > 0 {
            let mut scaled = p.ineq_matrix.clone();
            for (r, mut row) in scaled.row_iter_mut().enumerate() {
                row *= w[r];
            }
            p.ineq_matrix.tr_mul(&scaled)
        } else {
            DMatrix::zeros(n, n)
        };
        for (k, &i) in self.upper_idx.iter().enumerate() {
            gram[(i, i)] += w[mi + k];
        }
        let off = mi + self.upper_idx.len();
        for (k, &i) in self.lower_idx.iter().enumerate() {
            gram[(i, i)] += w[off + k];
        }
        gram
    }

    fn split(&self, lam: &DVector<f64>, eq: DVector<f64>) -> Multipliers {
        let p = self.problem;
        let n = p.num_vars();
        let mi = p.num_ineq();
        let mut upper = DVector::zeros(n);
        let mut lower = DVector::zeros(n);
        for (k, &i) in self.upper_idx.iter().enumerate() {
            upper[i] = lam[mi + k];
        }
        let off = mi + self.upper_idx.len();
        for (k, &i) in self.lower_idx.iter().enumerate() {
            lower[i] = lam[off + k];
        }
        Multipliers {
            eq,
            ineq: lam.rows(0, mi).into_owned(),
            lower,
            upper,
        }
    }

    /// Explicit row `r` of `G`.
    fn row(&self, r: usize) -> DVector<f64> {
        let p = self.problem;
        let n = p.num_vars();
        let mi = p.num_ineq();
        if r < mi {
            return p.ineq_matrix.row(r).transpose();
        }
        let mut e = DVector::zeros(n);
        if r < mi + self.upper_idx.len() {
            e[self.upper_idx[r - mi]] = 1.0;
        } else {
            e[self.lower_idx[r - mi - self.upper_idx.len()]] = -1.0;
        }
        e
    }
}

enum Outcome {
    Optimal,
    Certified,
    Stalled,
}

struct Iterate {
    z: DVector<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
    lam: DVector<f64>,
    iterations: usize,
}

/// Solves `problem` to KKT tolerance `settings.tol`.
pub fn solve(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    if !(settings.tol > 0.0) {
        return Err(QpError::Settings(format!(
            "tol must be positive, got {}",
            settings.tol
        )));
    }
    if settings.max_iter == 0 {
        return Err(QpError::Settings("max_iter must be at least 1".into()));
    }
    problem.validate()?;
    let stacked = Stacked::new(problem);
    let (outcome, it) = interior_point(problem, &stacked, settings);

    let mut multipliers = stacked.split(&it.lam, it.y.clone());
    let mut z = it.z.clone();
    let mut residuals = kkt_residuals(problem, &z, &multipliers);
    let status = match outcome {
        Outcome::Optimal => {
            if let Some((pz, pm, pr)) = polish(problem, &stacked, &it, settings.tol) {
                if pr.max() <= residuals.max().max(settings.tol) {
                    z = pz;
                    multipliers = pm;
                    residuals = pr;
                }
            }
            QpStatus::Optimal
        }
        Outcome::Certified => QpStatus::Infeasible,
        Outcome::Stalled => {
            if phase_one_violation(problem, settings)
                .is_some_and(|v| v > 1e3 * settings.tol.max(1e-9))
            {
                QpStatus::Infeasible
            } else {
                QpStatus::IterationLimit
            }
        }
    };
    Ok(QpSolution {
        objective: problem.objective(&z),
        z,
        status,
        residuals,
        multipliers,
        iterations: it.iterations,
    })
}

fn interior_point(
    problem: &QpProblem,
    stacked: &Stacked<'_>,
    settings: &SolverSettings,
) -> (Outcome, Iterate) {
    let n = problem.num_vars();
    let p = problem.num_eq();
    let m = stacked.rows();
    let h = stacked.h();

    let mut z = DVector::from_fn(n, |i, _| {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            _ => 0.0_f64.clamp(lo, hi),
        }
    });
    let mut y = DVector::zeros(p);
    let mut s = (&h - stacked.mul(&z)).map(|v| v.max(1.0));
    let mut lam = DVector::from_element(m, 1.0);

    let bound_radius: f64 =
        if (0..n).all(|i| problem.lower[i].is_finite() && problem.upper[i].is_finite()) {
            (0..n)
                .map(|i| problem.lower[i].abs().max(problem.upper[i].abs()))
                .sum()
        } else {
            1e6
        };

    let mut best_primal = f64::INFINITY;
    let mut since_progress = 0usize;
    let mut iterations = 0usize;

    loop {
        let mults = stacked.split(&lam, y.clone());
        let res = kkt_residuals(problem, &z, &mults);
        if res.max() <= settings.tol {
            return (
                Outcome::Optimal,
                Iterate {
                    z,
                    y,
                    s,
                    lam,
                    iterations,
                },
            );
        }
        if res.max().is_nan() || iterations >= settings.max_iter {
            break;
        }
        if iterations >= 5 && farkas_certificate(problem, stacked, &y, &lam, &h, bound_radius) {
            return (
                Outcome::Certified,
                Iterate {
                    z,
                    y,
                    s,
                    lam,
                    iterations,
                },
            );
        }
        if res.primal < 0.9 * best_primal {
            best_primal = res.primal;
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress > 25 && res.primal > settings.tol {
                break;
            }
        }
        iterations += 1;

        let rd = &problem.hessian * &z
            + &problem.linear
            + problem.eq_matrix.tr_mul(&y)
            + stacked.tr_mul(&lam);
        let rpe = &problem.eq_matrix * &z - &problem.eq_rhs;
        let rpi = stacked.mul(&z) + &s - &h;
        let w = lam.component_div(&s);

        let mut kkt = DMatrix::zeros(n + p, n + p);
        let k = &problem.hessian + stacked.weighted_gram(&w);
        kkt.view_mut((0, 0), (n, n)).copy_from(&k);
        if p > 0 {
            kkt.view_mut((n, 0), (p, n)).copy_from(&problem.eq_matrix);
            kkt.view_mut((0, n), (n, p))
                .copy_from(&problem.eq_matrix.transpose());
        }
        let lu = kkt.clone().lu();
        let regularized;
        let solver = if lu.is_invertible() {
            &lu
        } else {
            let mut reg = kkt;
            for i in 0..n {
                reg[(i, i)] += 1e-10;
            }
            for i in n..n + p {
                reg[(i, i)] -= 1e-10;
            }
            regularized = reg.lu();
            &regularized
        };

        let newton = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = (lam.component_mul(&rpi) - rc).component_div(&s);
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&rd - stacked.tr_mul(&t)));
            if p > 0 {
                rhs.rows_mut(n, p).copy_from(&(-&rpe));
            }
            let sol = solver.solve(&rhs)?;
            let dz = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let gdz = stacked.mul(&dz);
            let dlam = t + w.component_mul(&gdz);
            let ds = -&rpi - gdz;
            Some((dz, dy, ds, dlam))
        };

        if m == 0 {
            let Some((dz, dy, _, _)) = newton(&DVector::zeros(0)) else {
                break;
            };
            z += dz;
            y += dy;
            continue;
        }

        let mu = s.dot(&lam) / m as f64;
        let rc_aff = s.component_mul(&lam);
        let Some((_, _, ds_a, dl_a)) = newton(&rc_aff) else {
            break;
        };
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a)).min(1.0);
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let rc = rc_aff + ds_a.component_mul(&dl_a) - DVector::from_element(m, sigma * mu);
        let Some((dz, dy, ds, dlam)) = newton(&rc) else {
            break;
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dlam))).min(1.0);
        z += &dz * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        lam += &dlam * alpha;
        for v in s.iter_mut().chain(lam.iter_mut()) {
            *v = v.max(1e-300);
        }
    }
    (
        Outcome::Stalled,
        Iterate {
            z,
            y,
            s,
            lam,
            iterations,
        },
    )
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Checks whether the normalised duals prove `{A_eq z = b_eq, G z <= h}` empty.
///
/// For any feasible `z`, `(A_eqᵀŷ + Gᵀλ̂)ᵀz <= b_eqᵀŷ + hᵀλ̂`; a strongly negative
/// right side with a small left side (bounded via the box radius) is a contradiction.
fn farkas_certificate(
    problem: &QpProblem,
    stacked: &Stacked<'_>,
    y: &DVector<f64>,
    lam: &DVector<f64>,
    h: &DVector<f64>,
    radius: f64,
) -> bool {
    let scale = y.amax().max(lam.amax());
    if scale < 1e4 {
        return false;
    }
    let yh = y / scale;
    let lh = lam / scale;
    let r = problem.eq_matrix.tr_mul(&yh) + stacked.tr_mul(&lh);
    let value = problem.eq_rhs.dot(&yh) + h.dot(&lh);
    value < -1e-8 && r.amax() * radius.max(1.0) < -0.5 * value
}

/// Smallest uniform violation `t` with `|A_eq z − b| <= t`, `A_in z − b <= t` inside the box.
fn phase_one_violation(problem: &QpProblem, settings: &SolverSettings) -> Option<f64> {
    let n = problem.num_vars();
    let p = problem.num_eq();
    let mi = problem.num_ineq();
    let rows = 2 * p + mi;
    let mut a = DMatrix::zeros(rows, n + 1);
    let mut b = DVector::zeros(rows);
    for r in 0..p {
        for c in 0..n {
            a[(r, c)] = problem.eq_matrix[(r, c)];
            a[(p + r, c)] = -problem.eq_matrix[(r, c)];
        }
        a[(r, n)] = -1.0;
        a[(p + r, n)] = -1.0;
        b[r] = problem.eq_rhs[r];
        b[p + r] = -problem.eq_rhs[r];
    }
    for r in 0..mi {
        for c in 0..n {
            a[(2 * p + r, c)] = problem.ineq_matrix[(r, c)];
        }
        a[(2 * p + r, n)] = -1.0;
        b[2 * p + r] = problem.ineq_rhs[r];
    }
    let mut hess = DMatrix::identity(n + 1, n + 1) * 1e-12;
    hess[(n, n)] = 0.0;
    let mut g = DVector::zeros(n + 1);
    g[n] = 1.0;
    let mut lower = DVector::from_element(n + 1, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n + 1, f64::INFINITY);
    lower.rows_mut(0, n).copy_from(&problem.lower);
    upper.rows_mut(0, n).copy_from(&problem.upper);
    lower[n] = -1.0;
    let phase = QpProblem::new(hess, g)
        .with_inequalities(a, b)
        .with_bounds(lower, upper);
    let stacked = Stacked::new(&phase);
    let inner = SolverSettings {
        tol: settings.tol.max(1e-10),
        max_iter: settings.max_iter.max(100),
    };
    match interior_point(&phase, &stacked, &inner) {
        (Outcome::Optimal, it) => Some(it.z[n]),
        _ => None,
    }
}

/// Re-solves the equality-constrained QP on the rows the interior point flags as active.
fn polish(
    problem: &QpProblem,
    stacked: &Stacked<'_>,
    it: &Iterate,
    tol: f64,
) -> Option<(DVector<f64>, Multipliers, KktResiduals)> {
    let n = problem.num_vars();
    let p = problem.num_eq();
    let active: Vec<usize> = (0..stacked.rows())
        .filter(|&r| it.lam[r] > it.s[r])
        .collect();
    let a = active.len();
    if p + a > n {
        return None;
    }
    let h = stacked.h();
    let dim = n + p + a;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
    if p > 0 {
        kkt.view_mut((n, 0), (p, n)).copy_from(&problem.eq_matrix);
        kkt.view_mut((0, n), (n, p))
            .copy_from(&problem.eq_matrix.transpose());
        rhs.rows_mut(n, p).copy_from(&problem.eq_rhs);
    }
    for (k, &r) in active.iter().enumerate() {
        let row = stacked.row(r);
        for c in 0..n {
            kkt[(n + p + k, c)] = row[c];
            kkt[(c, n + p + k)] = row[c];
        }
        rhs[n + p + k] = h[r];
    }
    let sol = kkt.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, n).into_owned();
    let y = sol.rows(n, p).into_owned();
    let mut lam = DVector::zeros(stacked.rows());
    for (k, &r) in active.iter().enumerate() {
        let v = sol[n + p + k];
        if v < -tol {
            return None;
        }
        lam[r] = v.max(0.0);
    }
    let mults = stacked.split(&lam, y);
    let res = kkt_residuals(problem, &z, &mults);
    (res.max() <= tol).then_some((z, mults, res))
}
