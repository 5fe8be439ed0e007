//! Gradient-based structure poisoning of GCN node classifiers with
//! margin-dependent (cost-aware) loss weighting.
//!
//! The pipeline: [`graph`] holds the adjacency and its normalization,
//! [`surrogate`] fits the linearized two-layer model the attacker
//! differentiates, [`loss`] defines the attack objectives, [`gradient`]
//! computes the closed-form adjacency gradient, [`attack`] runs the greedy
//! flip loop and the DICE baseline, [`victim`] and [`eval`] retrain a GCN on
//! the poisoned graph, and [`io`] ties it together for the command line.

pub mod attack;
pub mod error;
pub mod eval;
pub mod gradient;
pub mod graph;
pub mod io;
pub mod loss;
pub mod par;
pub mod surrogate;
pub mod synth;
pub mod victim;

pub use attack::{apply_flips, dice_attack, meta_attack, AttackConfig, AttackResult, Flip, FlipOp};
pub use error::{Error, Result};
pub use eval::{evaluate, margin_gradient_scatter, EvalReport, ScatterPoint};
pub use graph::{Features, Graph, NormalizedAdjacency};
pub use loss::{CaWeightParams, LossKind, LossSpec};
pub use surrogate::{train_surrogate, SurrogateHyper, SurrogateParams};
pub use victim::{train_victim, VictimHyper};
