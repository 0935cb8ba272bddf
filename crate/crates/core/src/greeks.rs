//! Delta estimators: Malliavin weight, pathwise flow, finite differences;
//! variance comparison and grid-convergence studies.
//!
//! All estimators drive their paths from (master_seed, path_index) streams,
//! so different estimators at the same seed see the same noise (common
//! random numbers) and results do not depend on worker count: per-path
//! values are computed in parallel, collected in path order and folded
//! through one Welford pass.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{solve_mean_ode, MeanFunction, ModelSpec};
use crate::rng::RngConfig;
use crate::simulate::{Noise, PathBundle, SimContext, SimOptions};
use crate::stats::{fit_log_slope, moments_of, RunningMoments};
use crate::weights::{
    barrier_do_weight, barrier_uo_weight, european_weight, skorokhod_integral, JumpSumMode,
    WeightField,
};

/// Payoff of the claim whose Delta is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    /// (X_T - K)^+
    EuropeanCall { strike: f64 },
    /// 1_{X_T > K}
    Digital { strike: f64 },
    /// (max X - K)^+ 1_{max X < B}
    UpAndOutCall { strike: f64, barrier: f64 },
    /// (min X - K)^+ 1_{min X > B}
    DownAndOutCall { strike: f64, barrier: f64 },
    /// Call with the kink mollified over [K - eps, K + eps]
    SmoothedCall { strike: f64, width: f64 },
}

impl Payoff {
    pub fn name(&self) -> &'static str {
        match self {
            Payoff::EuropeanCall { .. } => "european_call",
            Payoff::Digital { .. } => "digital",
            Payoff::UpAndOutCall { .. } => "up_and_out_call",
            Payoff::DownAndOutCall { .. } => "down_and_out_call",
            Payoff::SmoothedCall { .. } => "smoothed_call",
        }
    }

    pub fn strike(&self) -> f64 {
        match *self {
            Payoff::EuropeanCall { strike }
            | Payoff::Digital { strike }
            | Payoff::UpAndOutCall { strike, .. }
            | Payoff::DownAndOutCall { strike, .. }
            | Payoff::SmoothedCall { strike, .. } => strike,
        }
    }

    pub fn barrier(&self) -> Option<f64> {
        match *self {
            Payoff::UpAndOutCall { barrier, .. } | Payoff::DownAndOutCall { barrier, .. } => {
                Some(barrier)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.strike();
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidPayoff(format!(
                "strike must be positive, got {k}"
            )));
        }
        match *self {
            Payoff::UpAndOutCall { strike, barrier } => {
                if !(barrier > strike) {
                    return Err(Error::InvalidPayoff(format!(
                        "up-and-out needs barrier > strike, got B = {barrier}, K = {strike}"
                    )));
                }
            }
            Payoff::SmoothedCall { width, .. } => {
                if !(width > 0.0) {
                    return Err(Error::InvalidPayoff(format!(
                        "smoothing width must be positive, got {width}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Φ evaluated on a simulated path.
    pub fn value(&self, bundle: &PathBundle) -> f64 {
        match *self {
            Payoff::EuropeanCall { strike } => (bundle.terminal() - strike).max(0.0),
            Payoff::Digital { strike } => {
                if bundle.terminal() > strike {
                    1.0
                } else {
                    0.0
                }
            }
            Payoff::UpAndOutCall { strike, barrier } => {
                if bundle.run_max < barrier {
                    (bundle.run_max - strike).max(0.0)
                } else {
                    0.0
                }
            }
            Payoff::DownAndOutCall { strike, barrier } => {
                if bundle.run_min > barrier {
                    (bundle.run_min - strike).max(0.0)
                } else {
                    0.0
                }
            }
            Payoff::SmoothedCall { strike, width } => smoothed_call(bundle.terminal(), strike, width),
        }
    }

    /// The pathwise-flow integrand Φ'_X flow_T + Φ'_G flow_{arg extremum},
    /// using the almost-everywhere derivative.
    fn flow_integrand(&self, bundle: &PathBundle) -> f64 {
        match *self {
            Payoff::EuropeanCall { strike } => {
                if bundle.terminal() > strike {
                    bundle.terminal_flow()
                } else {
                    0.0
                }
            }
            Payoff::SmoothedCall { strike, width } => {
                smoothed_call_slope(bundle.terminal(), strike, width) * bundle.terminal_flow()
            }
            Payoff::UpAndOutCall { strike, barrier } => {
                if bundle.run_max > strike && bundle.run_max < barrier {
                    bundle.flow[bundle.argmax_index]
                } else {
                    0.0
                }
            }
            Payoff::DownAndOutCall { strike, barrier } => {
                if bundle.run_min > strike && bundle.run_min > barrier {
                    bundle.flow[bundle.argmin_index]
                } else {
                    0.0
                }
            }
            Payoff::Digital { .. } => unreachable!("digital rejected before simulation"),
        }
    }

    /// The weight constructor backing this payoff's Malliavin estimator.
    /// Terminal-value payoffs (call, digital, smoothed call) share the
    /// call field for their strike; barrier payoffs use their own fields.
    fn weight_field<'a, 'b>(
        &self,
        ctx: &'a SimContext<'a>,
        bundle: &'b PathBundle,
    ) -> Result<WeightField<'a, 'b>> {
        match *self {
            Payoff::EuropeanCall { strike }
            | Payoff::Digital { strike }
            | Payoff::SmoothedCall { strike, .. } => european_weight(ctx, bundle, strike),
            Payoff::UpAndOutCall { strike, barrier } => {
                barrier_uo_weight(ctx, bundle, strike, barrier)
            }
            Payoff::DownAndOutCall { strike, barrier } => {
                barrier_do_weight(ctx, bundle, strike, barrier)
            }
        }
    }
}

/// Call payoff with the kink replaced by a quadratic over [K-eps, K+eps].
pub fn smoothed_call(x: f64, strike: f64, width: f64) -> f64 {
    if x <= strike - width {
        0.0
    } else if x >= strike + width {
        x - strike
    } else {
        let d = x - strike + width;
        d * d / (4.0 * width)
    }
}

/// Derivative of [`smoothed_call`] in the state.
pub fn smoothed_call_slope(x: f64, strike: f64, width: f64) -> f64 {
    if x <= strike - width {
        0.0
    } else if x >= strike + width {
        1.0
    } else {
        (x - strike + width) / (2.0 * width)
    }
}

/// Estimation method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Malliavin,
    FlowPathwise,
    FdCentral,
    FdForward,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Malliavin => "malliavin",
            Method::FlowPathwise => "flow_pathwise",
            Method::FdCentral => "fd_central",
            Method::FdForward => "fd_forward",
        }
    }
}

/// One estimator run. `stderr` = sqrt(variance / n_paths).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub method: Method,
    pub payoff: Payoff,
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    pub n_paths: u64,
    pub dt: f64,
    pub seed: u64,
    pub guard_hits: u64,
    /// Wall-clock duration; diagnostic only, excluded from reproducible
    /// artifacts.
    pub runtime_ms: u64,
    pub warning: Option<String>,
}

/// Per-path contribution of an estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathValue {
    pub value: f64,
    pub guard_hits: u64,
}

/// Evaluates `per_path` for indices 0..n_paths in parallel and returns the
/// values in path order.
pub fn monte_carlo_values<F>(n_paths: usize, per_path: F) -> Result<Vec<PathValue>>
where
    F: Fn(u64) -> Result<PathValue> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| per_path(i))
        .collect()
}

fn finish(
    method: Method,
    payoff: Payoff,
    values: Vec<PathValue>,
    grid: &TimeGrid,
    seed: u64,
    started: Instant,
    warning: Option<String>,
) -> Result<DeltaEstimate> {
    if values.len() < 2 {
        return Err(Error::InvalidEstimate(
            "need at least 2 paths to estimate a variance".into(),
        ));
    }
    let samples: Vec<f64> = values.iter().map(|v| v.value).collect();
    let guard_hits: u64 = values.iter().map(|v| v.guard_hits).sum();
    let m = moments_of(&samples);
    let est = DeltaEstimate {
        method,
        payoff,
        mean: m.mean(),
        stderr: m.stderr(),
        variance: m.variance(),
        n_paths: m.count(),
        dt: grid.dt(),
        seed,
        guard_hits,
        runtime_ms: started.elapsed().as_millis() as u64,
        warning,
    };
    if !est.mean.is_finite() || !est.variance.is_finite() {
        return Err(Error::InvalidEstimate("estimate is not finite".into()));
    }
    Ok(est)
}

/// Δ = E[Φ δ(ω)] with the payoff's Malliavin weight field.
pub fn delta_malliavin(
    spec: &ModelSpec,
    mf: &MeanFunction,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<DeltaEstimate> {
    delta_malliavin_with(
        spec,
        mf,
        payoff,
        n_paths,
        grid,
        seed,
        JumpSumMode::default(),
        SimOptions::default(),
    )
}

/// [`delta_malliavin`] with explicit jump-sum and scheme options.
#[allow(clippy::too_many_arguments)]
pub fn delta_malliavin_with(
    spec: &ModelSpec,
    mf: &MeanFunction,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    mode: JumpSumMode,
    sim: SimOptions,
) -> Result<DeltaEstimate> {
    let started = Instant::now();
    payoff.validate()?;
    if spec.jump_intensity <= 0.0 {
        return Err(Error::JumpFreeWeight);
    }
    let ctx = SimContext::new(spec, mf, grid, sim)?;
    let values = monte_carlo_values(n_paths, |i| {
        let noise = ctx.noise(&RngConfig::new(seed, i));
        let bundle = ctx.simulate(&noise)?;
        let field = payoff.weight_field(&ctx, &bundle)?;
        let delta = skorokhod_integral(&field, &noise, mode)?;
        Ok(PathValue {
            value: payoff.value(&bundle) * delta.value,
            guard_hits: delta.guard_hits,
        })
    })?;
    finish(Method::Malliavin, payoff, values, grid, seed, started, None)
}

/// Δ = E[Φ'_X flow_T + Φ'_G flow_{arg extremum}]; needs an almost
/// everywhere differentiable payoff.
pub fn delta_flow_pathwise(
    spec: &ModelSpec,
    mf: &MeanFunction,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<DeltaEstimate> {
    delta_flow_pathwise_with(spec, mf, payoff, n_paths, grid, seed, SimOptions::default())
}

/// [`delta_flow_pathwise`] with explicit scheme options.
pub fn delta_flow_pathwise_with(
    spec: &ModelSpec,
    mf: &MeanFunction,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    sim: SimOptions,
) -> Result<DeltaEstimate> {
    let started = Instant::now();
    payoff.validate()?;
    if matches!(payoff, Payoff::Digital { .. }) {
        return Err(Error::PathwiseDiscontinuous);
    }
    let ctx = SimContext::new(spec, mf, grid, sim)?;
    let values = monte_carlo_values(n_paths, |i| {
        let noise = ctx.noise(&RngConfig::new(seed, i));
        let bundle = ctx.simulate(&noise)?;
        Ok(PathValue {
            value: payoff.flow_integrand(&bundle),
            guard_hits: 0,
        })
    })?;
    finish(Method::FlowPathwise, payoff, values, grid, seed, started, None)
}

/// Finite-difference flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdMode {
    #[default]
    Central,
    Forward,
}

/// Finite-difference knobs. Common random numbers across the bumped
/// initial values is the default; independent streams exist for variance
/// comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FdOptions {
    pub mode: FdMode,
    pub independent_streams: bool,
    pub sim: SimOptions,
}

/// Central finite difference with common random numbers: the mean curve is
/// re-solved at x0 ± h and both runs share every path's noise.
pub fn delta_fd_central(
    spec: &ModelSpec,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    h: f64,
) -> Result<DeltaEstimate> {
    delta_fd_with(spec, payoff, n_paths, grid, seed, h, FdOptions::default())
}

/// Finite difference with explicit options.
pub fn delta_fd_with(
    spec: &ModelSpec,
    payoff: Payoff,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    h: f64,
    opts: FdOptions,
) -> Result<DeltaEstimate> {
    let started = Instant::now();
    payoff.validate()?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidEstimate(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if spec.x0 + h == 0.0 || spec.x0 - h == 0.0 {
        return Err(Error::InvalidEstimate(
            "bumped initial value hits zero".into(),
        ));
    }
    let warning = (h < 1e-8).then(|| {
        format!("fd step h = {h:e} is below 1e-8; difference noise is amplified")
    });

    let spec_up = spec.with_x0(spec.x0 + h);
    let spec_down = spec.with_x0(spec.x0 - h);
    let mf_up = solve_mean_ode(&spec_up, grid)?;
    let mf_down = solve_mean_ode(&spec_down, grid)?;
    let ctx_up = SimContext::new(&spec_up, &mf_up, grid, opts.sim)?;
    let ctx_down = SimContext::new(&spec_down, &mf_down, grid, opts.sim)?;

    // forward mode differences against the base initial value
    let mf_base;
    let ctx_base = match opts.mode {
        FdMode::Central => None,
        FdMode::Forward => {
            mf_base = solve_mean_ode(spec, grid)?;
            Some(SimContext::new(spec, &mf_base, grid, opts.sim)?)
        }
    };

    // independent streams derive a second master seed for the lower bump
    let seed_down = if opts.independent_streams {
        seed ^ 0x5851_F42D_4C95_7F2D
    } else {
        seed
    };

    let values = monte_carlo_values(n_paths, |i| {
        let noise_up = ctx_up.noise(&RngConfig::new(seed, i));
        let up = payoff.value(&ctx_up.simulate(&noise_up)?);
        let value = match (&opts.mode, &ctx_base) {
            (FdMode::Central, _) => {
                let noise_down = if opts.independent_streams {
                    ctx_down.noise(&RngConfig::new(seed_down, i))
                } else {
                    noise_up
                };
                let down = payoff.value(&ctx_down.simulate(&noise_down)?);
                (up - down) / (2.0 * h)
            }
            (FdMode::Forward, Some(base_ctx)) => {
                let noise_base = if opts.independent_streams {
                    base_ctx.noise(&RngConfig::new(seed_down, i))
                } else {
                    noise_up
                };
                let base = payoff.value(&base_ctx.simulate(&noise_base)?);
                (up - base) / h
            }
            (FdMode::Forward, None) => unreachable!(),
        };
        Ok(PathValue {
            value,
            guard_hits: 0,
        })
    })?;
    let method = match opts.mode {
        FdMode::Central => Method::FdCentral,
        FdMode::Forward => Method::FdForward,
    };
    finish(method, payoff, values, grid, seed, started, warning)
}

/// Methods meaningful for a payoff; drives the CLI default method set.
pub fn applicable_methods(payoff: &Payoff) -> Vec<Method> {
    match payoff {
        Payoff::Digital { .. } => vec![Method::Malliavin, Method::FdCentral],
        _ => vec![Method::Malliavin, Method::FlowPathwise, Method::FdCentral],
    }
}

/// One row of the method comparison: an estimate plus its ratios against
/// the first entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub estimate: DeltaEstimate,
    pub variance_ratio: f64,
    pub stderr_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub rows: Vec<ComparisonRow>,
}

/// Per-method variance table; refuses to compare runs with different
/// (payoff, n_paths, dt, seed).
pub fn variance_report(estimates: &[DeltaEstimate]) -> Result<VarianceReport> {
    if estimates.len() < 2 {
        return Err(Error::IncomparableEstimates(
            "need at least two estimates".into(),
        ));
    }
    let first = &estimates[0];
    for e in &estimates[1..] {
        if e.payoff != first.payoff
            || e.n_paths != first.n_paths
            || e.dt != first.dt
            || e.seed != first.seed
        {
            return Err(Error::IncomparableEstimates(format!(
                "{} run does not match the {} run's (payoff, n_paths, dt, seed)",
                e.method.name(),
                first.method.name()
            )));
        }
    }
    let rows = estimates
        .iter()
        .map(|e| ComparisonRow {
            estimate: e.clone(),
            variance_ratio: e.variance / first.variance,
            stderr_ratio: e.stderr / first.stderr,
        })
        .collect();
    Ok(VarianceReport { rows })
}

/// Quantity tracked across grid refinements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    /// RMS error of X_T against the common-noise reference level.
    State,
    /// RMS error of D_{r,z}X_T at a fixed (time, mark).
    MalliavinDerivative { r_time: f64, mark: f64 },
    /// |Δ^{(dt)} - Δ^{(ref)}| for the European call Malliavin estimator.
    DeltaEuro { strike: f64 },
    /// |Δ^{(dt)} - Δ^{(ref)}| for the up-and-out Malliavin estimator.
    DeltaBarrier { strike: f64, barrier: f64 },
}

impl Quantity {
    pub fn name(&self) -> &'static str {
        match self {
            Quantity::State => "state",
            Quantity::MalliavinDerivative { .. } => "malliavin_derivative",
            Quantity::DeltaEuro { .. } => "delta_euro",
            Quantity::DeltaBarrier { .. } => "delta_barrier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub error: f64,
    /// Standard error of the level-vs-reference difference, for the Delta
    /// quantities.
    pub stderr: Option<f64>,
    pub n_paths: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub quantity: Quantity,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of log(error) against log(dt).
    pub slope: f64,
}

/// Ratio between the finest requested level and the common-noise reference.
const REFERENCE_REFINEMENT: usize = 64;

/// Per-path quantity at one refinement level.
fn level_quantity(
    quantity: &Quantity,
    ctx: &SimContext,
    noise: &Noise,
) -> Result<f64> {
    let bundle = ctx.simulate(noise)?;
    match *quantity {
        Quantity::State => Ok(bundle.terminal()),
        Quantity::MalliavinDerivative { r_time, mark } => {
            let r_index = (r_time / ctx.grid.dt()).round() as usize;
            Ok(ctx.malliavin_terminal(&bundle, r_index, mark))
        }
        Quantity::DeltaEuro { strike } => {
            let payoff = Payoff::EuropeanCall { strike };
            let field = payoff.weight_field(ctx, &bundle)?;
            let delta = skorokhod_integral(&field, noise, JumpSumMode::default())?;
            Ok(payoff.value(&bundle) * delta.value)
        }
        Quantity::DeltaBarrier { strike, barrier } => {
            let payoff = Payoff::UpAndOutCall { strike, barrier };
            let field = payoff.weight_field(ctx, &bundle)?;
            let delta = skorokhod_integral(&field, noise, JumpSumMode::default())?;
            Ok(payoff.value(&bundle) * delta.value)
        }
    }
}

/// Couples every requested level to a reference grid at min(dt)/2^6 through
/// shared Brownian increments and jump events, and fits the convergence
/// slope of the per-level errors.
pub fn convergence_study(
    spec: &ModelSpec,
    quantity: Quantity,
    dt_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    convergence_study_with(spec, quantity, dt_list, n_paths, seed, SimOptions::default())
}

/// [`convergence_study`] with explicit scheme options.
pub fn convergence_study_with(
    spec: &ModelSpec,
    quantity: Quantity,
    dt_list: &[f64],
    n_paths: usize,
    seed: u64,
    sim: SimOptions,
) -> Result<ConvergenceTable> {
    if dt_list.len() < 3 {
        return Err(Error::InsufficientLevels {
            needed: 3,
            got: dt_list.len(),
        });
    }
    let mut dts: Vec<f64> = dt_list.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    let dt_ref = dts[dts.len() - 1] / REFERENCE_REFINEMENT as f64;
    let grid_ref = TimeGrid::new(spec.horizon, dt_ref)?;
    let mf_ref = solve_mean_ode(spec, &grid_ref)?;
    let ctx_ref = SimContext::new(spec, &mf_ref, &grid_ref, sim)?;

    let mut grids = Vec::new();
    let mut mfs = Vec::new();
    for &dt in &dts {
        let grid = TimeGrid::new(spec.horizon, dt)?;
        if grid_ref.refinement_factor(&grid).is_none() {
            return Err(Error::InvalidGrid(format!(
                "dt = {dt} is not an integer multiple of the reference step {dt_ref}"
            )));
        }
        mfs.push(solve_mean_ode(spec, &grid)?);
        grids.push(grid);
    }
    let ctxs: Vec<SimContext> = grids
        .iter()
        .zip(&mfs)
        .map(|(g, m)| SimContext::new(spec, m, g, sim))
        .collect::<Result<_>>()?;

    // per path: quantity at every level plus the reference, on shared noise
    let per_path: Vec<(Vec<f64>, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64)> {
            let noise_ref = ctx_ref.noise(&RngConfig::new(seed, i));
            let q_ref = level_quantity(&quantity, &ctx_ref, &noise_ref)?;
            let mut qs = Vec::with_capacity(ctxs.len());
            for (ctx, grid) in ctxs.iter().zip(&grids) {
                let noise = noise_ref.coarsen(grid)?;
                qs.push(level_quantity(&quantity, ctx, &noise)?);
            }
            Ok((qs, q_ref))
        })
        .collect::<Result<_>>()?;

    let is_delta = matches!(
        quantity,
        Quantity::DeltaEuro { .. } | Quantity::DeltaBarrier { .. }
    );
    let mut rows = Vec::new();
    for (level, grid) in grids.iter().enumerate() {
        if is_delta {
            // error of the estimate itself: |mean(level) - mean(ref)|
            let diffs: Vec<f64> = per_path.iter().map(|(qs, q)| qs[level] - q).collect();
            let m = moments_of(&diffs);
            rows.push(ConvergenceRow {
                dt: grid.dt(),
                error: m.mean().abs(),
                stderr: Some(m.stderr()),
                n_paths: m.count(),
            });
        } else {
            let mse = per_path
                .iter()
                .map(|(qs, q)| (qs[level] - q) * (qs[level] - q))
                .sum::<f64>()
                / per_path.len() as f64;
            rows.push(ConvergenceRow {
                dt: grid.dt(),
                error: mse.sqrt(),
                stderr: None,
                n_paths: per_path.len() as u64,
            });
        }
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let slope = fit_log_slope(&xs, &ys);
    Ok(ConvergenceTable {
        quantity,
        rows,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, BuiltinExample};
    use approx::assert_relative_eq;

    fn example2() -> (ModelSpec, TimeGrid, MeanFunction) {
        let m = builtin_example(BuiltinExample::Example2);
        let grid = TimeGrid::with_steps(1.0, 512).unwrap();
        let mf = solve_mean_ode(&m.spec, &grid).unwrap();
        (m.spec, grid, mf)
    }

    #[test]
    fn payoff_values() {
        let b = crate::weights::test_support::bundle_from_path(vec![1.0, 1.8, 1.4]);
        assert_eq!(Payoff::EuropeanCall { strike: 1.0 }.value(&b), 0.4);
        assert_eq!(Payoff::Digital { strike: 1.0 }.value(&b), 1.0);
        assert_eq!(Payoff::Digital { strike: 2.0 }.value(&b), 0.0);
        assert_eq!(
            Payoff::UpAndOutCall { strike: 1.0, barrier: 2.0 }.value(&b),
            0.8
        );
        assert_eq!(
            Payoff::UpAndOutCall { strike: 1.0, barrier: 1.5 }.value(&b),
            0.0
        );
        assert_eq!(
            Payoff::DownAndOutCall { strike: 0.5, barrier: 0.9 }.value(&b),
            0.5
        );
        let s = Payoff::SmoothedCall { strike: 1.4, width: 0.01 };
        assert_eq!(s.value(&b), 0.01 * 0.01 / 0.04);
    }

    #[test]
    fn smoothed_call_is_c1() {
        let (k, eps) = (0.5, 1e-2);
        assert_eq!(smoothed_call(k - eps, k, eps), 0.0);
        assert_relative_eq!(smoothed_call(k + eps, k, eps), eps, max_relative = 1e-12);
        assert_eq!(smoothed_call_slope(k - eps, k, eps), 0.0);
        assert_eq!(smoothed_call_slope(k + eps, k, eps), 1.0);
        assert_relative_eq!(smoothed_call_slope(k, k, eps), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn flow_rejects_digital() {
        let (spec, grid, mf) = example2();
        match delta_flow_pathwise(&spec, &mf, Payoff::Digital { strike: 0.5 }, 10, &grid, 1) {
            Err(Error::PathwiseDiscontinuous) => {}
            other => panic!("expected discontinuous-payoff error, got {other:?}"),
        }
    }

    #[test]
    fn malliavin_rejects_jump_free_model() {
        let spec = ModelSpec::builder(1.0, 1.0)
            .diffusion_linear(|_| 1.0)
            .build()
            .unwrap();
        let grid = TimeGrid::with_steps(1.0, 16).unwrap();
        let mf = solve_mean_ode(&spec, &grid).unwrap();
        match delta_malliavin(&spec, &mf, Payoff::EuropeanCall { strike: 0.5 }, 10, &grid, 1) {
            Err(Error::JumpFreeWeight) => {}
            other => panic!("expected jump-free error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_paths_rejected() {
        let (spec, grid, mf) = example2();
        assert!(matches!(
            delta_flow_pathwise(
                &spec,
                &mf,
                Payoff::EuropeanCall { strike: 0.5 },
                1,
                &grid,
                1
            ),
            Err(Error::InvalidEstimate(_))
        ));
    }

    #[test]
    fn deep_itm_call_equals_identity_flow() {
        // K -> 0 turns the call's flow integrand into the raw flow on
        // every (positive) path, so the two estimates coincide exactly.
        let (spec, grid, mf) = example2();
        let deep = delta_flow_pathwise(
            &spec,
            &mf,
            Payoff::EuropeanCall { strike: 1e-12 },
            400,
            &grid,
            7,
        )
        .unwrap();
        let ctx = SimContext::new(&spec, &mf, &grid, SimOptions::default()).unwrap();
        let identity = monte_carlo_values(400, |i| {
            let bundle = ctx.simulate(&ctx.noise(&RngConfig::new(7, i)))?;
            Ok(PathValue { value: bundle.terminal_flow(), guard_hits: 0 })
        })
        .unwrap();
        let m = moments_of(&identity.iter().map(|v| v.value).collect::<Vec<_>>());
        assert_eq!(deep.mean, m.mean());
        // and the identity-payoff Delta estimates ∂x f(T) = 1/4
        assert!((m.mean() - 0.25).abs() <= 3.0 * m.stderr());
    }

    #[test]
    fn fd_identity_payoff_matches_mean_sensitivity() {
        // deep-in-the-money call is the identity on positive paths;
        // the CRN central difference then estimates ∂x f(1) = 0.25
        let (spec, grid, mf) = example2();
        let _ = &mf;
        let est = delta_fd_central(
            &spec,
            Payoff::EuropeanCall { strike: 1e-12 },
            400,
            &grid,
            7,
            1e-3,
        )
        .unwrap();
        assert!(
            (est.mean - 0.25).abs() <= 3.0 * est.stderr.max(1e-6) + 1e-4,
            "fd mean {} stderr {}",
            est.mean,
            est.stderr
        );
        assert!(est.warning.is_none());
    }

    #[test]
    fn fd_constant_like_payoff_is_zero() {
        // a strike far out of reach makes the payoff constant zero; the
        // difference quotient vanishes identically
        let (spec, grid, _mf) = example2();
        let est = delta_fd_central(
            &spec,
            Payoff::EuropeanCall { strike: 1e9 },
            64,
            &grid,
            3,
            1e-3,
        )
        .unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.variance, 0.0);
    }

    #[test]
    fn fd_small_step_warns() {
        let (spec, grid, _mf) = example2();
        let est = delta_fd_central(
            &spec,
            Payoff::EuropeanCall { strike: 0.5 },
            16,
            &grid,
            3,
            1e-9,
        )
        .unwrap();
        assert!(est.warning.is_some());
        assert!(delta_fd_central(&spec, Payoff::EuropeanCall { strike: 0.5 }, 16, &grid, 3, 0.0).is_err());
        assert!(delta_fd_central(&spec, Payoff::EuropeanCall { strike: 0.5 }, 16, &grid, 3, 1.0).is_err());
    }

    #[test]
    fn variance_report_rules() {
        let (spec, grid, mf) = example2();
        let payoff = Payoff::SmoothedCall { strike: 0.5, width: 1e-2 };
        let a = delta_flow_pathwise(&spec, &mf, payoff, 100, &grid, 5).unwrap();
        let self_report = variance_report(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(self_report.rows[1].variance_ratio, 1.0);
        assert_eq!(self_report.rows[1].stderr_ratio, 1.0);

        let b = delta_flow_pathwise(&spec, &mf, payoff, 120, &grid, 5).unwrap();
        assert!(matches!(
            variance_report(&[a.clone(), b]),
            Err(Error::IncomparableEstimates(_))
        ));
        assert!(variance_report(&[a]).is_err());
    }

    #[test]
    fn crn_fd_beats_independent_fd_variance() {
        let (spec, grid, _mf) = example2();
        let payoff = Payoff::EuropeanCall { strike: 0.5 };
        let crn = delta_fd_central(&spec, payoff, 2000, &grid, 11, 1e-3).unwrap();
        let indep = delta_fd_with(
            &spec,
            payoff,
            2000,
            &grid,
            11,
            1e-3,
            FdOptions { mode: FdMode::Central, independent_streams: true },
        )
        .unwrap();
        assert!(
            crn.variance < indep.variance,
            "CRN variance {} not below independent-stream variance {}",
            crn.variance,
            indep.variance
        );
    }

    #[test]
    fn convergence_needs_levels() {
        let m = builtin_example(BuiltinExample::Example2);
        match convergence_study(&m.spec, Quantity::State, &[0.25], 8, 1) {
            Err(Error::InsufficientLevels { .. }) => {}
            other => panic!("expected level error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_model_has_first_order_state_convergence() {
        // no noise at all: plain Euler on the mean ODE, slope ~ 1
        let spec = ModelSpec::builder(1.0, 1.0)
            .drift(|_t, rho| -rho)
            .drift_derivative(|_t, _| -1.0)
            .build()
            .unwrap();
        let table = convergence_study(
            &spec,
            Quantity::State,
            &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            4,
            1,
        )
        .unwrap();
        assert!(
            (table.slope - 1.0).abs() <= 0.1,
            "deterministic Euler slope {}",
            table.slope
        );
        for w in table.rows.windows(2) {
            assert!(w[0].error > w[1].error);
        }
    }

    #[test]
    fn estimator_is_deterministic_across_pools() {
        let (spec, grid, mf) = example2();
        let payoff = Payoff::EuropeanCall { strike: 0.5 };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| delta_malliavin(&spec, &mf, payoff, 200, &grid, 99).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        assert_eq!(a.guard_hits, b.guard_hits);
    }
}
