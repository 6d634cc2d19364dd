//! Condensed QP construction over one planning window.
//!
//! The decision vector stacks the window's inputs (plus an epigraph slack when
//! a one-norm terminal cost is present). States are eliminated by substitution:
//!
//! ```text
//! v(k) = v0 + dt·Σ_{j<k} u(j)
//! p(k) = p0 + v0·k·dt + dt²·Σ_{j<k} (k − j − ½)·u(j)
//! ```
//!
//! which is exact as long as the velocity stays nonnegative, and that is one of
//! the rows.

use nalgebra::{DMatrix, DVector};

use crate::cost::ControlParams;
use crate::dynamics::{Trajectory, VehicleState};
use crate::error::{Error, Result};
use crate::qp::QpProblem;

/// One-sided position limit at a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionLimit {
    /// `p(k) ≤ value`
    AtMost(f64),
    /// `p(k) ≥ value`
    AtLeast(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TerminalCost {
    None,
    OneNorm(f64),
}

pub(crate) struct Window<'a> {
    pub start: VehicleState,
    pub start_step: usize,
    pub len: usize,
    pub leader: &'a Trajectory,
    pub params: &'a ControlParams,
    /// Entry `k − 1` limits the state at window step `k`; may be shorter than `len`.
    pub limits: &'a [Option<PositionLimit>],
}

/// Row counts by constraint family, in the order they appear in `ineq_matrix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowLayout {
    pub ttc: usize,
    pub gap: usize,
    pub speed: usize,
    pub position: usize,
    pub terminal: usize,
}

impl RowLayout {
    pub fn total(&self) -> usize {
        self.ttc + self.gap + self.speed + self.position + self.terminal
    }
}

pub(crate) struct WindowQp {
    pub qp: QpProblem,
    /// Constant dropped from the quadratic objective.
    pub constant: f64,
    pub rows: RowLayout,
    pub len: usize,
    pos: DMatrix<f64>,
    start: VehicleState,
    dt: f64,
}

impl WindowQp {
    /// Coefficients and constant of `p(k)` for window step `k ≥ 1`.
    pub fn position_map(&self, k: usize) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; self.qp.num_vars()];
        for j in 0..self.len {
            row[j] = self.pos[(k - 1, j)];
        }
        (
            row,
            self.start.position + self.start.velocity * k as f64 * self.dt,
        )
    }

    pub fn velocity_map(&self, k: usize) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; self.qp.num_vars()];
        for r in row.iter_mut().take(k) {
            *r = self.dt;
        }
        (row, self.start.velocity)
    }

    /// Equality rows pinning the last window state to `target`.
    pub fn terminal_equalities(&self, target: &VehicleState) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.qp.num_vars();
        let (prow, pc) = self.position_map(self.len);
        let (vrow, vc) = self.velocity_map(self.len);
        let mut a = DMatrix::zeros(2, n);
        for j in 0..n {
            a[(0, j)] = prow[j];
            a[(1, j)] = vrow[j];
        }
        (
            a,
            DVector::from_vec(vec![target.position - pc, target.velocity - vc]),
        )
    }

    pub fn inputs(&self, z: &DVector<f64>) -> Vec<f64> {
        z.rows(0, self.len).iter().copied().collect()
    }
}

pub(crate) fn build(window: &Window, terminal: TerminalCost) -> Result<WindowQp> {
    let Window {
        start,
        start_step,
        len,
        leader,
        params,
        limits,
    } = *window;
    if len == 0 {
        return Err(Error::validation(
            "planning window must contain at least one step",
        ));
    }
    let required = start_step + len;
    if leader.origin > start_step || leader.last_step() < required {
        return Err(Error::Horizon {
            required,
            available: leader.last_step(),
        });
    }
    let dt = params.dt;
    let slack = matches!(terminal, TerminalCost::OneNorm(w) if w > 0.0);
    let n = len + usize::from(slack);

    let pos = DMatrix::from_fn(len, len, |r, j| {
        let k = r + 1;
        if j < k {
            dt * dt * ((k - j) as f64 - 0.5)
        } else {
            0.0
        }
    });
    let pos_const = |k: usize| start.position + start.velocity * k as f64 * dt;
    let lead = |k: usize| {
        leader
            .at(start_step + k)
            .copied()
            .expect("leader coverage checked")
    };

    // tracking residual r(k) = L(k) − gap_ref − p_const(k)
    let resid = DVector::from_fn(len, |r, _| {
        lead(r + 1).position - params.gap_ref - pos_const(r + 1)
    });
    let w_dev = params.weights.deviation();
    let w_u = params.weights.control_effort;

    let mut hessian = DMatrix::zeros(n, n);
    let mut linear = DVector::zeros(n);
    {
        let hu = pos.tr_mul(&pos) * (2.0 * w_dev) + DMatrix::identity(len, len) * (2.0 * w_u);
        hessian.view_mut((0, 0), (len, len)).copy_from(&hu);
        let gu = pos.tr_mul(&resid) * (-2.0 * w_dev);
        linear.rows_mut(0, len).copy_from(&gu);
    }
    let constant = w_dev * resid.norm_squared();

    let mut rows: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |coef: &[f64], b: f64| {
        rows.extend_from_slice(coef);
        rhs.push(b);
    };
    let mut layout = RowLayout::default();
    let mut buf = vec![0.0; n];

    // p + Γ·v ≤ L + Γ·v_L
    let gamma = params.ttc_min;
    for k in 1..=len {
        let l = lead(k);
        for j in 0..len {
            buf[j] = pos[(k - 1, j)] + if j < k { gamma * dt } else { 0.0 };
        }
        push(
            &buf,
            l.position + gamma * l.velocity - pos_const(k) - gamma * start.velocity,
        );
        layout.ttc += 1;
    }
    buf.iter_mut().for_each(|b| *b = 0.0);
    for k in 1..=len {
        for j in 0..len {
            buf[j] = pos[(k - 1, j)];
        }
        push(&buf, lead(k).position - params.min_gap - pos_const(k));
        layout.gap += 1;
    }
    // −v(k) ≤ 0
    for k in 1..=len {
        for j in 0..len {
            buf[j] = if j < k { -dt } else { 0.0 };
        }
        push(&buf, start.velocity);
        layout.speed += 1;
    }
    for (idx, limit) in limits.iter().enumerate().take(len) {
        let Some(limit) = limit else { continue };
        let k = idx + 1;
        let sign = match limit {
            PositionLimit::AtMost(_) => 1.0,
            PositionLimit::AtLeast(_) => -1.0,
        };
        let bound = match limit {
            PositionLimit::AtMost(b) | PositionLimit::AtLeast(b) => *b,
        };
        for j in 0..len {
            buf[j] = sign * pos[(k - 1, j)];
        }
        push(&buf, sign * (bound - pos_const(k)));
        layout.position += 1;
    }
    let mut lower = DVector::from_element(n, params.bounds.min);
    let mut upper = DVector::from_element(n, params.bounds.max);
    if slack {
        let TerminalCost::OneNorm(w) = terminal else {
            unreachable!()
        };
        linear[len] = w;
        // dev(N) = r(N) − φᵀu;  ±dev − s ≤ 0
        let r_n = resid[len - 1];
        for j in 0..len {
            buf[j] = -pos[(len - 1, j)];
        }
        buf[len] = -1.0;
        push(&buf, -r_n);
        for j in 0..len {
            buf[j] = pos[(len - 1, j)];
        }
        push(&buf, r_n);
        layout.terminal = 2;
        lower[len] = 0.0;
        upper[len] = f64::INFINITY;
    }

    let m = rhs.len();
    let qp = QpProblem::new(hessian, linear)
        .with_inequalities(DMatrix::from_row_slice(m, n, &rows), DVector::from_vec(rhs))
        .with_bounds(lower, upper);
    Ok(WindowQp {
        qp,
        constant,
        rows: layout,
        len,
        pos,
        start,
        dt,
    })
}
