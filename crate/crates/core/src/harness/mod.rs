//! Experiment driver: `eps` sweeps, error metrics, slope fits and report files.

mod config;
mod metrics;
mod run;

pub use config::{
    BoundStateConfig, ExperimentConfig, ExperimentKind, GridConfig, MeshConfig, SolverConfig,
};
pub use metrics::{fit_slope, norm_of, projector_distance, sup_error, NormKind, SlopeFit};
pub use run::{
    run_experiment, Check, EpsRow, MetricFit, SweepReport, EIGEN_TAIL_TOLERANCE,
    FALSIFICATION_FLOOR, REFLECTION_TOLERANCE, RESIDUAL_GUARD, SAMPLING_TOLERANCE,
};
