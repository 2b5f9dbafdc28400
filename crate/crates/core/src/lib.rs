//! Simulation and verification of path-distribution dependent SDEs with
//! exponentially fading memory.
//!
//! States are segments `X_t(r) = X(t + r)` of a path, measured in the
//! weighted sup norm `sup_s e^{tau s}|xi(s)|`. Laws of segments are
//! represented by equal-weight particle ensembles.

pub mod assignment;
pub mod coefficients;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod noise;
pub mod picard;
pub mod segment;
pub mod stats;

pub use coefficients::{builtin_model, CoefficientSet, Coefficients, ModelSpec};
pub use coupling::{run_coupling, CouplingConfig, CouplingRun, TestFunction, TestFunctionKind};
pub use engine::{simulate_frozen, simulate_interacting, EnsembleState, Mode, SimOptions};
pub use error::{Error, Result};
pub use experiment::{run as run_experiment, ExperimentId, RunConfig, RunSummary};
pub use grid::GridSpec;
pub use measure::{
    flow_distance_theta, wasserstein, EmpiricalMeasure, EmpiricalMeasureFlow, MeasureView,
};
pub use noise::{NoisePlan, Phase};
pub use picard::{solve_fixed_point, PicardConfig, PicardTrace};
pub use segment::{SegmentView, TailPolicy, Trajectory, WeightedSegment};
