//! Adversarial graphical models for tree-structured prediction.
//!
//! A predictor distribution plays a zero-sum game against an adversary that
//! must match the empirical feature moments of the training data; the loss
//! metric of interest is the payoff. On trees the game reduces to node and
//! edge marginals, the inner problem splits into per-node games under dual
//! decomposition, and pairwise adversary marginals come back from an optimal
//! transport step. MAP and probabilistic decoders, CRF and structured-SVM
//! baselines on the same feature template, exhaustive desk-scale oracles, and
//! a train/eval/report harness round out the crate.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod game;
pub mod graph;
pub mod learner;
pub mod loss;
pub mod model_io;
pub mod predict;
pub mod stats;
pub mod synth;

mod lp;

pub use error::{AgmError, Result};
pub use features::{
    assemble_potentials, empirical_moments, FeatureTemplate, Instance, ModelParams, MomentVector,
    Potentials,
};
pub use game::{
    dual_decomposition, exhaustive_joint_game, recover_pairwise, solve_node_game, MarginalSet,
    NodeGameResult, SolverConfig, StepRule, TransportConfig, TransportMethod,
};
pub use graph::TreeGraph;
pub use learner::{agm_objective, agm_subgradient, train_agm, TrainConfig, TrainReport};
pub use loss::{evaluate_loss, make_loss, LossFamily, LossKind, LossMatrix, LossSpec};
pub use model_io::{load_model, save_model, ModelKind, SavedModel};
pub use predict::{predict_map, predict_probabilistic, project_simplex, PredictConfig, Prediction};
