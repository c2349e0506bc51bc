//! Synthetic instances and the batch experiments that compare recovery
//! conditions against what the solver actually returns.

mod batch;
mod generate;
mod sweep;

pub use batch::{
    evaluate_batch, instance_seed, BatchOptions, BatchPlan, BatchReport, Condition,
    ConfusionMatrix, GammaScaling, GammaTally, InstanceRecord,
};
pub use generate::{
    generate, spectral_library, DistortionSpec, Instance, InstanceSpec, Sign, MAX_REJECTIONS,
};
pub use sweep::{gamma_sweep, uniform_grid, SweepPoint, SweepSummary};
