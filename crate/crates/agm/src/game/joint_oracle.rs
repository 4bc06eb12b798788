//! Brute-force joint game over full label assignments.
//!
//! Enumerates every assignment of both players, solves the resulting zero-sum
//! matrix game by LP, and reads node and edge marginals off the joint mixed
//! strategies. Intended as a desk-scale oracle for the decomposed solvers.

use ndarray::{Array1, Array2};

use crate::error::{AgmError, Result};
use crate::features::{EncodedTruth, Potentials};
use crate::game::matrix_game::solve_matrix_game;
use crate::game::MarginalSet;
use crate::graph::TreeGraph;
use crate::loss::LossMatrix;

/// Refuses joint games with more assignments than this.
pub const ORACLE_ASSIGNMENT_CAP: usize = 729;

/// Solves `max over adversary joint distributions, min over predictor joint
/// distributions` of expected loss plus adversary potential, exactly.
///
/// With `truth` given, the truth's potential is subtracted from the value,
/// matching the per-instance objective the learner sees (before
/// regularization).
pub fn exhaustive_joint_game(
    tree: &TreeGraph,
    pots: &Potentials,
    losses: &[LossMatrix],
    truth: Option<&EncodedTruth>,
) -> Result<(f64, MarginalSet)> {
    let n = tree.node_count();
    if losses.len() != n {
        return Err(AgmError::DimensionMismatch(format!(
            "{} losses for {n} nodes",
            losses.len()
        )));
    }
    let k = losses[0].k();
    let mut assignments = 1usize;
    for _ in 0..n {
        assignments = assignments.saturating_mul(k);
    }
    if assignments > ORACLE_ASSIGNMENT_CAP {
        return Err(AgmError::InstanceTooLarge {
            assignments,
            cap: ORACLE_ASSIGNMENT_CAP,
        });
    }

    // labels[a][i-1] in 0..k for assignment id a; node 1 varies fastest.
    let labels: Vec<Vec<usize>> = (0..assignments)
        .map(|mut a| {
            (0..n)
                .map(|_| {
                    let l = a % k;
                    a /= k;
                    l
                })
                .collect()
        })
        .collect();

    let potential = |y: &[usize]| -> f64 {
        let mut s = 0.0;
        for i in 1..=n {
            s += pots.node[i - 1][y[i - 1]];
        }
        for (j, &(p, c)) in tree.edges().iter().enumerate() {
            s += pots.edge[j][[y[p - 1], y[c - 1]]];
        }
        s
    };

    // Rows: adversary assignments (maximizer). Columns: predictor assignments.
    let mut payoff = Array2::zeros((assignments, assignments));
    for (row, y_check) in labels.iter().enumerate() {
        let pot = potential(y_check);
        for (col, y_hat) in labels.iter().enumerate() {
            let mut loss = 0.0;
            for i in 0..n {
                loss += losses[i].entries()[[y_hat[i], y_check[i]]];
            }
            payoff[[row, col]] = loss + pot;
        }
    }

    let game = solve_matrix_game(&payoff)?;

    let mut adversary_node = vec![Array1::zeros(k); n];
    let mut predictor = vec![Array1::zeros(k); n];
    let mut adversary_edge = vec![Array2::zeros((k, k)); tree.edges().len()];
    for (id, y) in labels.iter().enumerate() {
        let q = game.row_strategy[id];
        let p = game.col_strategy[id];
        for i in 0..n {
            adversary_node[i][y[i]] += q;
            predictor[i][y[i]] += p;
        }
        for (j, &(pa, c)) in tree.edges().iter().enumerate() {
            adversary_edge[j][[y[pa - 1], y[c - 1]]] += q;
        }
    }

    let mut value = game.value;
    if let Some(truth) = truth {
        for i in 0..n {
            value -= pots.node[i].dot(&truth.z[i]);
        }
        for j in 0..tree.edges().len() {
            value -= (&pots.edge[j] * &truth.big_z[j]).sum();
        }
    }

    Ok((
        value,
        MarginalSet {
            predictor,
            adversary_node,
            adversary_edge,
        },
    ))
}
