//! Inner maximin machinery: per-node zero-sum games, dual decomposition over
//! marginal-consistency constraints, optimal-transport recovery of pairwise
//! adversary marginals, and an exhaustive joint-game oracle.

pub mod dual_decomp;
pub mod joint_oracle;
pub mod matrix_game;
pub mod node_game;
pub mod transport;

pub use dual_decomp::{dual_decomposition, DualSolution, SolverConfig, StepRule};
pub use joint_oracle::{exhaustive_joint_game, ORACLE_ASSIGNMENT_CAP};
pub use matrix_game::{solve_matrix_game, GameSolution};
pub use node_game::{solve_node_game, solve_node_game_matrix, NodeGameResult};
pub use transport::{exact_transport, recover_pairwise, TransportConfig, TransportMethod};

use ndarray::{Array1, Array2, Axis};

use crate::error::{AgmError, Result};
use crate::graph::TreeGraph;

/// Node and edge marginals of the two players.
#[derive(Debug, Clone)]
pub struct MarginalSet {
    /// Predictor node marginals, indexed `[i-1]`.
    pub predictor: Vec<Array1<f64>>,
    /// Adversary node marginals, indexed `[i-1]`.
    pub adversary_node: Vec<Array1<f64>>,
    /// Adversary pairwise marginals, one per `tree.edges()` entry; rows are
    /// parent labels, columns child labels.
    pub adversary_edge: Vec<Array2<f64>>,
}

impl MarginalSet {
    /// Verifies that every pairwise marginal reproduces the node marginals of
    /// its endpoints within `tol` (l1 distance).
    pub fn check_local_consistency(&self, tree: &TreeGraph, tol: f64) -> Result<()> {
        for (j, &(parent, child)) in tree.edges().iter().enumerate() {
            let q = &self.adversary_edge[j];
            let row_marg = q.sum_axis(Axis(1));
            let col_marg = q.sum_axis(Axis(0));
            let row_err: f64 = row_marg
                .iter()
                .zip(self.adversary_node[parent - 1].iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            let col_err: f64 = col_marg
                .iter()
                .zip(self.adversary_node[child - 1].iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            if row_err > tol || col_err > tol {
                return Err(AgmError::MarginalMismatch(format!(
                    "edge ({parent},{child}): row error {row_err:.3e}, column error {col_err:.3e} exceed {tol:.3e}"
                )));
            }
        }
        Ok(())
    }
}
