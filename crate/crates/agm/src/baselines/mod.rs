//! Reference models sharing the feature template: a conditional random field
//! trained by maximum likelihood and a structured SVM trained on the
//! margin-rescaled hinge. Differences against the adversarial model therefore
//! isolate the training objective.

pub mod crf;
pub mod ssvm;

pub use crf::{crf_bayes_decode, crf_infer, train_crf, CrfBeliefs, CrfModel, CrfTrainConfig};
pub use ssvm::{hinge_value, loss_augmented_decode, train_ssvm, SsvmModel};
