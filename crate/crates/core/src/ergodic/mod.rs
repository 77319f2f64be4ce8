//! Ergodic pair estimation, long-run averages and verification.

mod derivative;
mod hjb;
mod longrun;
mod pair;
mod verify;

pub use derivative::{lions_derivative, DerivativeField, DerivativeSource, FiniteDifference, PoissonOracle};
pub use hjb::{
    action_grid, greedy_feedback, hamiltonian_f, hamiltonian_terms, hjb_residual, probe_ensembles, GreedyConfig,
    GreedyFeedback, HjbResidualReport, HjbRow,
};
pub use longrun::*;
pub use pair::*;
pub use verify::{verification_run, VerificationReport};
