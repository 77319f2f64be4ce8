//! Particle approximation of the controlled McKean–Vlasov dynamics.

mod coupling;
mod measure;
mod rng;
mod sim;
mod wasserstein;

pub use coupling::{second_moment_curve, synchronous_coupling_gap, GapCurve, MomentCurve};
pub use measure::{sample_initial, EmpiricalMeasure, Ensemble, InitialLaw, MeasureSummary};
pub use rng::{derive_seed, ParticleNoise, RngStream};
pub use sim::{
    run_path, simulate, step_count, step_euler, steps_covering, Observer, PathPoint, TrajectoryRecorder,
    TrajectoryRow, BLOW_UP_THRESHOLD,
};
pub use wasserstein::{w2_distance, W2Distance, SLICED_PROJECTIONS};
