//! Satisfiability checking for conjunctions of linear and ReLU constraints,
//! with a frontend for feed-forward ReLU networks.

pub mod bounds;
pub mod encoding;
pub mod export;
pub mod engine;
pub mod network;
pub mod numerics;
pub mod property;
pub mod reduction;
pub mod robustness;
pub mod simplex;
pub mod smt;

pub use engine::{Budget, Phase, Reluplex, SolveResult, SolveStats, SolverConfig, Verdict};
pub use simplex::{LinearAtom, Relation, SimplexState, VarId};
