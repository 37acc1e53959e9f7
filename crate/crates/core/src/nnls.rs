//! Dense non-negative least squares by the Lawson–Hanson active-set method.
//!
//! Solves `min ||A x - b||^2` subject to `x >= 0` for small, skinny systems
//! (a handful of columns, a few hundred rows). The passive-set subproblems are
//! solved with Householder QR; a collapsing QR diagonal marks the system
//! degenerate instead of aborting.

use crate::error::{Error, Result};

/// Outcome of an NNLS solve.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    /// The non-negative minimizer, one entry per column of `A`.
    pub x: Vec<f64>,
    /// Squared residual norm `||A x - b||^2` at the solution.
    pub residual_norm_sq: f64,
    /// Set when a rank-deficient passive set was encountered; the returned
    /// point is still feasible and stationary on the columns kept.
    pub degenerate: bool,
    /// Outer iterations used.
    pub iterations: usize,
}

/// Column-major dense matrix for the solver (each inner Vec is one column).
#[derive(Debug, Clone)]
pub struct Columns {
    pub rows: usize,
    pub cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn new(rows: usize, cols: Vec<Vec<f64>>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Dimension("system needs at least one column".into()));
        }
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension(format!(
                    "column {j} has {} rows, expected {rows}",
                    c.len()
                )));
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("column {j} contains non-finite entries")));
            }
        }
        Ok(Columns { rows, cols })
    }

    fn mat_vec(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (col, &xj) in self.cols.iter().zip(x) {
            if xj == 0.0 {
                continue;
            }
            for (o, &c) in out.iter_mut().zip(col) {
                *o += xj * c;
            }
        }
    }

    fn t_vec(&self, r: &[f64]) -> Vec<f64> {
        self.cols.iter().map(|col| col.iter().zip(r).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Relative threshold below which an R diagonal is treated as rank collapse.
const RANK_TOL: f64 = 1e-12;

/// Solves `min ||A x - b||^2, x >= 0`.
pub fn nnls(a: &Columns, b: &[f64]) -> Result<NnlsSolution> {
    if b.len() != a.rows {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, matrix has {}",
            b.len(),
            a.rows
        )));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("right-hand side contains non-finite entries".into()));
    }

    let n = a.cols.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut banned = vec![false; n];
    let mut degenerate = false;

    let col_scale = a
        .cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let b_scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dual_tol = 1e-11 * (col_scale * b_scale).max(1e-300);

    let mut residual = b.to_vec();
    let max_outer = 3 * n + 30;
    let mut iterations = 0;

    for _ in 0..max_outer {
        let w = a.t_vec(&residual);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !banned[j] && w[j] > dual_tol)
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let Some(jstar) = candidate else { break };
        passive[jstar] = true;
        iterations += 1;

        // Inner loop: restore feasibility of the passive-set LS solution.
        loop {
            let active_cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let (s_passive, min_diag, max_diag) = lstsq(a, &active_cols, b);
            if min_diag <= RANK_TOL * max_diag.max(1.0) {
                // Newly added column is linearly dependent on the passive set.
                degenerate = true;
                passive[jstar] = false;
                banned[jstar] = true;
                break;
            }
            let mut s = vec![0.0; n];
            for (&j, &v) in active_cols.iter().zip(&s_passive) {
                s[j] = v;
            }
            let feasible = active_cols.iter().all(|&j| s[j] > 0.0);
            if feasible {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &active_cols {
                if s[j] <= 0.0 {
                    let denom = x[j] - s[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                // Cannot move; treat as degenerate stall on this column.
                degenerate = true;
                passive[jstar] = false;
                banned[jstar] = true;
                break;
            }
            for &j in &active_cols {
                x[j] += alpha * (s[j] - x[j]);
                if x[j] <= 1e-14 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }

        a.mat_vec(&x, &mut residual);
        for (r, &bv) in residual.iter_mut().zip(b) {
            *r = bv - *r;
        }
    }

    a.mat_vec(&x, &mut residual);
    let residual_norm_sq = residual
        .iter()
        .zip(b)
        .map(|(ax, &bv)| {
            let d = bv - ax;
            d * d
        })
        .sum();
    Ok(NnlsSolution { x, residual_norm_sq, degenerate, iterations })
}

/// Least squares over the selected columns via Householder QR.
///
/// Returns the coefficients (in `active` order) plus the smallest and largest
/// absolute R diagonal for rank monitoring.
fn lstsq(a: &Columns, active: &[usize], b: &[f64]) -> (Vec<f64>, f64, f64) {
    let m = a.rows;
    let k = active.len();
    debug_assert!(k > 0 && k <= m);
    let mut q: Vec<Vec<f64>> = active.iter().map(|&j| a.cols[j].clone()).collect();
    let mut rhs = b.to_vec();

    let mut min_diag = f64::INFINITY;
    let mut max_diag = 0.0f64;
    for j in 0..k {
        // Householder vector for column j below row j.
        let norm: f64 = q[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            min_diag = 0.0;
            continue;
        }
        let alpha = if q[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = q[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq > 0.0 {
            for col in q.iter_mut().skip(j) {
                reflect(&mut col[j..], &v, vnorm_sq);
            }
            reflect(&mut rhs[j..], &v, vnorm_sq);
        }
        q[j][j] = alpha;
        min_diag = min_diag.min(alpha.abs());
        max_diag = max_diag.max(alpha.abs());
    }

    // Back substitution on the upper-triangular factor.
    let mut s = vec![0.0; k];
    for j in (0..k).rev() {
        let mut acc = rhs[j];
        for l in j + 1..k {
            acc -= q[l][j] * s[l];
        }
        let d = q[j][j];
        s[j] = if d.abs() > 0.0 { acc / d } else { 0.0 };
    }
    (s, min_diag, max_diag)
}

fn reflect(target: &mut [f64], v: &[f64], vnorm_sq: f64) {
    let dot: f64 = target.iter().zip(v).map(|(a, b)| a * b).sum();
    let scale = 2.0 * dot / vnorm_sq;
    for (t, &vi) in target.iter_mut().zip(v) {
        *t -= scale * vi;
    }
}
