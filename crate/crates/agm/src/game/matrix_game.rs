//! Exact zero-sum matrix game solving by linear programming.
//!
//! The row player maximizes the expected payoff, the column player minimizes
//! it. Used by the exhaustive joint-game oracle and as an independent check
//! of the per-node game solver.

use ndarray::Array2;

use crate::error::{AgmError, Result};
use crate::lp;

#[derive(Debug, Clone)]
pub struct GameSolution {
    /// Value of the game for the row (maximizing) player.
    pub value: f64,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
}

/// Solves `max_p min_q p' M q` over the probability simplexes.
///
/// Shifts the payoffs positive and solves the classical pair of LPs
/// `max 1'x : Mx <= 1` / `min 1'y : M'y >= 1`; the column strategy comes from
/// the primal solution and the row strategy from the duals.
pub fn solve_matrix_game(m: &Array2<f64>) -> Result<GameSolution> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(AgmError::DimensionMismatch("empty payoff matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(AgmError::NonFinite("payoff matrix".into()));
    }
    let min_entry = m.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_entry;

    // Equality form: M~ x + s = 1 with M~ = M + shift, minimize -1'x.
    let n_vars = cols + rows;
    let mut c = vec![0.0; n_vars];
    for j in 0..cols {
        c[j] = -1.0;
    }
    let mut a = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row = vec![0.0; n_vars];
        for j in 0..cols {
            row[j] = m[[i, j]] + shift;
        }
        row[cols + i] = 1.0;
        a.push(row);
    }
    let b = vec![1.0; rows];
    let sol = lp::solve_standard(&c, &a, &b)?;

    let total_x: f64 = sol.x[..cols].iter().sum();
    if total_x <= 0.0 {
        return Err(AgmError::Lp("degenerate game LP: zero strategy mass".into()));
    }
    let shifted_value = 1.0 / total_x;
    let col_strategy = normalize(&sol.x[..cols]);
    // The multipliers of the min-form LP are nonpositive; their negation is
    // the row player's scaled strategy.
    let negated: Vec<f64> = sol.duals.iter().map(|&y| -y).collect();
    let row_strategy = normalize(&negated);

    Ok(GameSolution {
        value: shifted_value - shift,
        row_strategy,
        col_strategy,
    })
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = clamped.iter().sum();
    if s > 0.0 {
        clamped.iter().map(|&x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}
