//! Multi-objective Bayesian optimization of LLM team assignments.
//!
//! Each agent role is represented by the feature vector of the model that
//! plays it. Two Gaussian-process surrogates (accuracy and negated cost) drive
//! an expected-hypervolume-improvement search in the continuous feature box,
//! and proposals are projected back onto real pool models.

pub mod acquisition;
pub mod analysis;
pub mod configuration;
pub mod evaluator;
pub mod gp;
pub mod history;
mod linalg;
pub mod optimizer;
pub mod pareto;
pub mod pool;
