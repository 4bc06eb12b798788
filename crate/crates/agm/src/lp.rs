//! Dense simplex solver for small standard-form linear programs.
//!
//! Minimizes `c'x` subject to `A x = b`, `x >= 0`. Two-phase with artificial
//! variables, Dantzig pricing with a Bland fallback after degenerate stalls,
//! and removal of redundant rows discovered in phase one. Sized for the small
//! programs used by the exact oracles (matrix games, transport polytopes).

use crate::error::{AgmError, Result};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const STALL_LIMIT: usize = 40;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual values, one per constraint row (rows removed as redundant get 0).
    pub duals: Vec<f64>,
}

/// Minimizes `c'x` s.t. `A x = b`, `x >= 0`. Rows of `a` are constraint rows.
pub fn solve_standard(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(AgmError::Lp("inconsistent LP shapes".into()));
    }
    if m == 0 {
        return Ok(LpSolution {
            x: vec![0.0; n],
            objective: 0.0,
            duals: Vec::new(),
        });
    }

    // Tableau layout: columns [0..n) structural, [n..n+m) artificial,
    // column n+m is the right hand side. Rows are made nonnegative first.
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][n + m] = flip * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut active_row = vec![true; m];

    // Phase 1: minimize the sum of artificials.
    let phase1_cost: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    let p1 = run_simplex(&mut t, &mut basis, &phase1_cost, n + m, &active_row)?;
    if p1 > FEAS_TOL {
        return Err(AgmError::Lp(format!("infeasible (phase-1 objective {p1:.3e})")));
    }

    // Drive leftover artificials out of the basis or mark their rows redundant.
    for i in 0..m {
        if basis[i] >= n {
            let mut pivot_col = None;
            for j in 0..n {
                if t[i][j].abs() > 1e-8 {
                    pivot_col = Some(j);
                    break;
                }
            }
            match pivot_col {
                Some(j) => pivot(&mut t, &mut basis, i, j),
                None => active_row[i] = false,
            }
        }
    }

    // Phase 2 on the structural costs; artificial columns are frozen by
    // pricing only structural columns.
    let mut phase2_cost = vec![0.0; n + m];
    phase2_cost[..n].copy_from_slice(c);
    let objective = run_simplex(&mut t, &mut basis, &phase2_cost, n, &active_row)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if active_row[i] && basis[i] < n {
            x[basis[i]] = t[i][n + m];
        }
    }

    // Simplex multipliers from the reduced costs of the artificial columns:
    // artificial i started as the identity column of row i with zero phase-2
    // cost, so its reduced cost equals -y_i.
    let mut duals = vec![0.0; m];
    for i in 0..m {
        if active_row[i] {
            duals[i] = reduced_cost(&t, &basis, &phase2_cost, n + i).map(|rc| -rc).unwrap_or(0.0);
        }
    }

    Ok(LpSolution {
        x,
        objective,
        duals,
    })
}

fn reduced_cost(t: &[Vec<f64>], basis: &[usize], cost: &[f64], col: usize) -> Option<f64> {
    let mut rc = cost[col];
    for (i, &bj) in basis.iter().enumerate() {
        rc -= cost[bj] * t[i][col];
    }
    Some(rc)
}

/// Runs the simplex loop pricing columns `[0, price_limit)`; returns the
/// objective value of `cost` at the final basis.
fn run_simplex(
    t: &mut Vec<Vec<f64>>,
    basis: &mut Vec<usize>,
    cost: &[f64],
    price_limit: usize,
    active_row: &[bool],
) -> Result<f64> {
    let m = t.len();
    let rhs_col = t[0].len() - 1;
    let mut degenerate_streak = 0usize;
    for _ in 0..MAX_PIVOTS {
        let bland = degenerate_streak >= STALL_LIMIT;
        // Pricing: most negative reduced cost (Dantzig), or first negative
        // index under Bland's rule once progress stalls.
        let mut entering = None;
        let mut best = -PIVOT_TOL;
        for j in 0..price_limit {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = cost[j];
            for i in 0..m {
                if active_row[i] {
                    rc -= cost[basis[i]] * t[i][j];
                }
            }
            if rc < -PIVOT_TOL {
                if bland {
                    entering = Some(j);
                    break;
                }
                if rc < best {
                    best = rc;
                    entering = Some(j);
                }
            }
        }
        let Some(col) = entering else {
            let mut obj = 0.0;
            for i in 0..m {
                if active_row[i] {
                    obj += cost[basis[i]] * t[i][rhs_col];
                }
            }
            return Ok(obj);
        };

        // Ratio test; Bland ties resolved toward the lowest basis index.
        let mut leaving: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            if !active_row[i] || t[i][col] <= PIVOT_TOL {
                continue;
            }
            let ratio = t[i][rhs_col] / t[i][col];
            let better = ratio < best_ratio - 1e-12
                || (ratio < best_ratio + 1e-12
                    && leaving.map_or(true, |l| basis[i] < basis[l]));
            if better {
                best_ratio = ratio;
                leaving = Some(i);
            }
        }
        let Some(row) = leaving else {
            return Err(AgmError::Lp("unbounded".into()));
        };
        if best_ratio.abs() < 1e-12 {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
        pivot(t, basis, row, col);
    }
    Err(AgmError::Lp("pivot limit exceeded".into()))
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let cols = t[0].len();
    let pv = t[row][col];
    for j in 0..cols {
        t[row][j] /= pv;
    }
    t[row][col] = 1.0;
    for i in 0..t.len() {
        if i == row {
            continue;
        }
        let factor = t[i][col];
        if factor == 0.0 {
            continue;
        }
        for j in 0..cols {
            t[i][j] -= factor * t[row][j];
        }
        t[i][col] = 0.0;
    }
    basis[row] = col;
}
