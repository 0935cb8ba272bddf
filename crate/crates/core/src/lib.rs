//! Monte Carlo Delta engine for scalar mean-field SDEs with jumps.
//!
//! The state follows the semi-linear dynamics
//!
//! ```text
//! dX = b(t, E X) X dt + (C_t X + σ0(t, π)) dW + ∫ (F(t,z) X + λ0(t,z,η)) Ñ(dz,dt)
//! ```
//!
//! whose mean curve f solves f' = b(t,f) f. Paths are simulated with a
//! compensated Euler scheme together with the first-variation process Y,
//! the auxiliary process u and the stochastic flow ∂X/∂x = Y u. Delta of
//! path-dependent payoffs is estimated three ways:
//!
//! * Malliavin weight: Δ = E[Φ · δ(ω)] with the payoff's weight field and
//!   a pathwise Skorokhod integral,
//! * pathwise flow: Δ = E[Φ'_X flow_T + Φ'_G flow at the extremum],
//! * central finite differences with common random numbers.
//!
//! The `mfgreeks` binary exposes `simulate`, `delta`, `compare` and
//! `converge` commands over a flat key = value config; every CSV it writes
//! embeds the resolved config and is byte-reproducible from it.

pub mod config;
pub mod error;
pub mod greeks;
pub mod grid;
pub mod model;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use model::{
    builtin_example, solve_mean_ode, transform_s_to_x, transform_x_to_s, BuiltinExample,
    BuiltinModel, Coupling, MarkLaw, MeanFunction, ModelBuilder, ModelSpec,
};
pub use rng::RngConfig;
pub use simulate::{
    path_extrema, sample_jumps, JumpEvent, Noise, PathBundle, RawJump, SimContext, SimOptions,
};
pub use weights::{
    barrier_do_weight, barrier_uo_weight, d_max, d_min, european_weight, skorokhod_integral,
    JumpSumMode, SkorokhodResult, WeightField,
};
pub use greeks::{
    applicable_methods, convergence_study, delta_fd_central, delta_fd_with, delta_flow_pathwise,
    delta_malliavin, delta_malliavin_with, monte_carlo_values, variance_report, ComparisonRow,
    ConvergenceRow, ConvergenceTable, DeltaEstimate, FdMode, FdOptions, Method, PathValue, Payoff,
    Quantity, VarianceReport,
};
