//! Model coefficients, the deterministic mean curve and the transform
//! between the driving process and the state.
//!
//! A model is the semi-linear coefficient set
//!
//! ```text
//! dX = b(t, ρ_t) X dt + (C_t X + σ0(t, π_t)) dW
//!      + ∫ (F(t,z) X + λ0(t,z,η_t)) Ñ(dz,dt),      X_0 = x0 ≠ 0,
//! ```
//!
//! with mean-field arguments ρ_t = E X_t, π_t = E ψ(X_t), η_t = E ξ(X_t)
//! and a finite jump measure μ(dz) = ν · density(z) dz.
//!
//! The mean curve f solves f' = b(t, f) f with f(0) = x0; its sensitivity
//! g = ∂f/∂x0 solves the forward linearization g' = (∂ρb(t,f) f + b(t,f)) g
//! with g(0) = 1. Both are integrated together by classical fourth-order
//! steps, and exp(∫ b(s,f) ds) realizes the state/driving transform.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type TimeStateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type JumpCoeffFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type StateMapFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Overflow guard for the mean ODE solver.
const MEAN_OVERFLOW_GUARD: f64 = 1e12;

/// 16-point Gauss-Legendre rule on [-1, 1] (abscissa, weight); weights sum
/// to 2. Exact for polynomial integrands up to degree 31, so in particular
/// exact for mark-independent jump coefficients.
const GL16: [(f64, f64); 16] = [
    (-0.9894009349916499, 0.02715245941175409),
    (-0.9445750230732326, 0.06225352393864789),
    (-0.8656312023878318, 0.09515851168249278),
    (-0.7554044083550030, 0.12462897125553387),
    (-0.6178762444026438, 0.14959598881657673),
    (-0.4580167776572274, 0.16915651939500254),
    (-0.2816035507792589, 0.18260341504492359),
    (-0.09501250983763744, 0.18945061045506850),
    (0.09501250983763744, 0.18945061045506850),
    (0.2816035507792589, 0.18260341504492359),
    (0.4580167776572274, 0.16915651939500254),
    (0.6178762444026438, 0.14959598881657673),
    (0.7554044083550030, 0.12462897125553387),
    (0.8656312023878318, 0.09515851168249278),
    (0.9445750230732326, 0.06225352393864789),
    (0.9894009349916499, 0.02715245941175409),
];

/// Mark (jump size) distribution. The jump measure is μ(dz) = ν ρ_Z(z) dz
/// with ρ_Z the density below, so total mass over [0,T] is Q = ν T.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkLaw {
    Uniform { lo: f64, hi: f64 },
}

impl MarkLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarkLaw::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "uniform mark law needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            MarkLaw::Uniform { lo, hi } => (*lo, *hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
        }
    }

    /// Quadrature nodes (z_i, w_i) with Σ w_i = 1 approximating E[g(Z)].
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        match self {
            MarkLaw::Uniform { lo, hi } => {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                GL16.iter()
                    .map(|&(x, w)| (mid + half * x, 0.5 * w))
                    .collect()
            }
        }
    }

    /// Expectation of `g` under the mark density.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.quadrature().iter().map(|&(z, w)| w * g(z)).sum()
    }
}

/// Mean-field coupling ψ (or ξ): π_t = E ψ(X_t) is evaluated through the
/// deterministic approximation ψ(f(t)), which is exact for the identity.
#[derive(Clone)]
pub enum Coupling {
    Identity,
    Custom { map: StateMapFn, slope: StateMapFn },
}

impl Coupling {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Coupling::Identity => v,
            Coupling::Custom { map, .. } => map(v),
        }
    }

    /// dψ/dx at v; enters ∂x π_t = ψ'(f(t)) ∂x f(t).
    pub fn slope(&self, v: f64) -> f64 {
        match self {
            Coupling::Identity => 1.0,
            Coupling::Custom { slope, .. } => slope(v),
        }
    }
}

impl std::fmt::Debug for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coupling::Identity => write!(f, "Identity"),
            Coupling::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Coefficient set of one model; the single source of truth for simulation,
/// weights and estimators.
#[derive(Clone)]
pub struct ModelSpec {
    /// b(t, ρ): drift loading on X.
    pub drift_b: TimeStateFn,
    /// ∂b/∂ρ.
    pub drift_b_drho: TimeStateFn,
    /// C_t: linear diffusion loading.
    pub diffusion_linear: TimeFn,
    /// σ0(t, π): state-free diffusion term.
    pub diffusion_affine: TimeStateFn,
    /// ∂σ0/∂π.
    pub diffusion_affine_dpi: TimeStateFn,
    /// F(t, z): linear jump loading.
    pub jump_linear: TimeStateFn,
    /// λ0(t, z, η): state-free jump term.
    pub jump_affine: JumpCoeffFn,
    /// ∂λ0/∂η.
    pub jump_affine_deta: JumpCoeffFn,
    pub coupling_psi: Coupling,
    pub coupling_xi: Coupling,
    /// ν: total mass of the jump measure per unit time.
    pub jump_intensity: f64,
    pub jump_size_law: MarkLaw,
    pub x0: f64,
    pub horizon: f64,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("jump_intensity", &self.jump_intensity)
            .field("jump_size_law", &self.jump_size_law)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn builder(x0: f64, horizon: f64) -> ModelBuilder {
        ModelBuilder::new(x0, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0 == 0.0 || !self.x0.is_finite() {
            return Err(Error::InvalidModel(format!(
                "x0 must be nonzero and finite, got {}",
                self.x0
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidModel(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.jump_intensity < 0.0 || !self.jump_intensity.is_finite() {
            return Err(Error::InvalidModel(format!(
                "jump intensity must be nonnegative, got {}",
                self.jump_intensity
            )));
        }
        self.jump_size_law.validate()
    }

    /// Same model started at a different initial state (used by the
    /// finite-difference estimator).
    pub fn with_x0(&self, x0: f64) -> ModelSpec {
        let mut spec = self.clone();
        spec.x0 = x0;
        spec
    }

    /// Total jump-measure mass over [0, T]: Q = ν T.
    pub fn q_total(&self) -> f64 {
        self.jump_intensity * self.horizon
    }

    /// λ(t, x, z, η) = F(t,z) x + λ0(t,z,η), the full jump coefficient.
    pub fn jump_coefficient(&self, t: f64, x: f64, z: f64, eta: f64) -> f64 {
        (self.jump_linear)(t, z) * x + (self.jump_affine)(t, z, eta)
    }
}

/// Builds a [`ModelSpec`], filling analytic derivatives with central
/// differences when none are supplied. Defaults: zero diffusion/jump terms,
/// identity couplings, no jumps.
pub struct ModelBuilder {
    drift_b: TimeStateFn,
    drift_b_drho: Option<TimeStateFn>,
    diffusion_linear: TimeFn,
    diffusion_affine: TimeStateFn,
    diffusion_affine_dpi: Option<TimeStateFn>,
    jump_linear: TimeStateFn,
    jump_affine: JumpCoeffFn,
    jump_affine_deta: Option<JumpCoeffFn>,
    coupling_psi: Coupling,
    coupling_xi: Coupling,
    jump_intensity: f64,
    jump_size_law: MarkLaw,
    x0: f64,
    horizon: f64,
}

/// Relative step for fallback numeric coefficient derivatives.
const FD_COEFF_STEP: f64 = 6.055454452393343e-6; // cbrt(f64::EPSILON)

impl ModelBuilder {
    pub fn new(x0: f64, horizon: f64) -> Self {
        ModelBuilder {
            drift_b: Arc::new(|_, _| 0.0),
            drift_b_drho: None,
            diffusion_linear: Arc::new(|_| 0.0),
            diffusion_affine: Arc::new(|_, _| 0.0),
            diffusion_affine_dpi: None,
            jump_linear: Arc::new(|_, _| 0.0),
            jump_affine: Arc::new(|_, _, _| 0.0),
            jump_affine_deta: None,
            coupling_psi: Coupling::Identity,
            coupling_xi: Coupling::Identity,
            jump_intensity: 0.0,
            jump_size_law: MarkLaw::Uniform { lo: -0.5, hi: 0.5 },
            x0,
            horizon,
        }
    }

    pub fn drift(mut self, b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift_b = Arc::new(b);
        self
    }

    pub fn drift_derivative(
        mut self,
        db: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.drift_b_drho = Some(Arc::new(db));
        self
    }

    pub fn diffusion_linear(mut self, c: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion_linear = Arc::new(c);
        self
    }

    pub fn diffusion_affine(
        mut self,
        sigma0: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion_affine = Arc::new(sigma0);
        self
    }

    pub fn diffusion_affine_derivative(
        mut self,
        d: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion_affine_dpi = Some(Arc::new(d));
        self
    }

    pub fn jump_linear(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.jump_linear = Arc::new(f);
        self
    }

    pub fn jump_affine(
        mut self,
        lambda0: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.jump_affine = Arc::new(lambda0);
        self
    }

    pub fn jump_affine_derivative(
        mut self,
        d: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.jump_affine_deta = Some(Arc::new(d));
        self
    }

    pub fn coupling_psi(mut self, c: Coupling) -> Self {
        self.coupling_psi = c;
        self
    }

    pub fn coupling_xi(mut self, c: Coupling) -> Self {
        self.coupling_xi = c;
        self
    }

    pub fn jumps(mut self, intensity: f64, law: MarkLaw) -> Self {
        self.jump_intensity = intensity;
        self.jump_size_law = law;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let drift_b_drho = self.drift_b_drho.unwrap_or_else(|| {
            let b = self.drift_b.clone();
            Arc::new(move |t: f64, rho: f64| {
                let h = FD_COEFF_STEP * (1.0 + rho.abs());
                (b(t, rho + h) - b(t, rho - h)) / (2.0 * h)
            })
        });
        let diffusion_affine_dpi = self.diffusion_affine_dpi.unwrap_or_else(|| {
            let s = self.diffusion_affine.clone();
            Arc::new(move |t: f64, pi: f64| {
                let h = FD_COEFF_STEP * (1.0 + pi.abs());
                (s(t, pi + h) - s(t, pi - h)) / (2.0 * h)
            })
        });
        let jump_affine_deta = self.jump_affine_deta.unwrap_or_else(|| {
            let l = self.jump_affine.clone();
            Arc::new(move |t: f64, z: f64, eta: f64| {
                let h = FD_COEFF_STEP * (1.0 + eta.abs());
                (l(t, z, eta + h) - l(t, z, eta - h)) / (2.0 * h)
            })
        });
        let spec = ModelSpec {
            drift_b: self.drift_b,
            drift_b_drho,
            diffusion_linear: self.diffusion_linear,
            diffusion_affine: self.diffusion_affine,
            diffusion_affine_dpi,
            jump_linear: self.jump_linear,
            jump_affine: self.jump_affine,
            jump_affine_deta,
            coupling_psi: self.coupling_psi,
            coupling_xi: self.coupling_xi,
            jump_intensity: self.jump_intensity,
            jump_size_law: self.jump_size_law,
            x0: self.x0,
            horizon: self.horizon,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The two benchmark models shipped with the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinExample {
    /// Drift b(t,ρ) = a (ρ + 1)/ρ with a = 1, C = 1, F = 1, ν = 0.1,
    /// uniform marks on [-1/2, 1/2], x0 = 1, T = 1. The mean curve comes
    /// from the ODE solver.
    Example1,
    /// Drift b(t,ρ) = a ρ with a = -1, same noise coefficients. The mean
    /// curve has the closed form f(t) = x0 / (x0 t + 1).
    Example2,
}

/// A builtin model plus, when one exists, the closed-form mean curve used
/// as an independent cross-check of the ODE solver.
pub struct BuiltinModel {
    pub spec: ModelSpec,
    pub closed_form_mean: Option<TimeFn>,
}

pub fn builtin_example(which: BuiltinExample) -> BuiltinModel {
    let law = MarkLaw::Uniform { lo: -0.5, hi: 0.5 };
    match which {
        BuiltinExample::Example1 => {
            let a = 1.0;
            let spec = ModelSpec::builder(1.0, 1.0)
                .drift(move |_t, rho| a * (rho + 1.0) / rho)
                .drift_derivative(move |_t, rho| -a / (rho * rho))
                .diffusion_linear(|_t| 1.0)
                .jump_linear(|_t, _z| 1.0)
                .jumps(0.1, law)
                .build()
                .expect("builtin model is valid");
            BuiltinModel {
                spec,
                closed_form_mean: None,
            }
        }
        BuiltinExample::Example2 => {
            let a = -1.0;
            let spec = ModelSpec::builder(1.0, 1.0)
                .drift(move |_t, rho| a * rho)
                .drift_derivative(move |_t, _rho| a)
                .diffusion_linear(|_t| 1.0)
                .jump_linear(|_t, _z| 1.0)
                .jumps(0.1, law)
                .build()
                .expect("builtin model is valid");
            let x0 = spec.x0;
            BuiltinModel {
                spec,
                closed_form_mean: Some(Arc::new(move |t: f64| x0 / (x0 * t + 1.0))),
            }
        }
    }
}

/// The mean curve f, its initial-value sensitivity g = ∂f/∂x0 and the
/// cumulative drift integral, all sampled on the simulation grid.
/// Immutable after construction and shared across path workers.
#[derive(Debug, Clone)]
pub struct MeanFunction {
    grid: TimeGrid,
    values: Vec<f64>,
    sensitivities: Vec<f64>,
    integral_b: Vec<f64>,
}

impl MeanFunction {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// f(t_i).
    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// ∂f/∂x0 (t_i).
    pub fn sensitivity(&self, index: usize) -> f64 {
        self.sensitivities[index]
    }

    /// ∫_0^{t_i} b(s, f(s)) ds.
    pub fn integral_b(&self, index: usize) -> f64 {
        self.integral_b[index]
    }
}

fn mean_rhs(spec: &ModelSpec, t: f64, f: f64, g: f64) -> (f64, f64) {
    let b = (spec.drift_b)(t, f);
    let db = (spec.drift_b_drho)(t, f);
    (b * f, (db * f + b) * g)
}

/// Solves the mean ODE f' = b(t,f) f, f(0) = x0, together with the forward
/// sensitivity g' = (∂ρb f + b) g, g(0) = 1, by classical RK4 with two half
/// steps per grid step. The drift integral is accumulated with Simpson's
/// rule on the half-step values so that exp(integral_b) stays consistent
/// with f/x0 to the solver's order.
pub fn solve_mean_ode(spec: &ModelSpec, grid: &TimeGrid) -> Result<MeanFunction> {
    spec.validate()?;
    let n = grid.n_steps();
    let mut values = Vec::with_capacity(n + 1);
    let mut sensitivities = Vec::with_capacity(n + 1);
    let mut integral_b = Vec::with_capacity(n + 1);

    let mut f = spec.x0;
    let mut g = 1.0;
    let mut acc = 0.0;
    values.push(f);
    sensitivities.push(g);
    integral_b.push(0.0);

    let check = |f: f64, t: f64| -> Result<()> {
        if !f.is_finite() || f.abs() > MEAN_OVERFLOW_GUARD {
            return Err(Error::MeanUnbounded {
                t,
                guard: MEAN_OVERFLOW_GUARD,
            });
        }
        Ok(())
    };

    let h = 0.5 * grid.dt();
    for k in 0..n {
        let t0 = grid.time(k);
        let sign = f.signum();
        let b_left = (spec.drift_b)(t0, f);

        // two RK4 half steps; keep the midpoint for Simpson
        let mut f_mid = 0.0;
        for sub in 0..2 {
            let t = t0 + sub as f64 * h;
            let (k1f, k1g) = mean_rhs(spec, t, f, g);
            let (k2f, k2g) = mean_rhs(spec, t + 0.5 * h, f + 0.5 * h * k1f, g + 0.5 * h * k1g);
            let (k3f, k3g) = mean_rhs(spec, t + 0.5 * h, f + 0.5 * h * k2f, g + 0.5 * h * k2g);
            let (k4f, k4g) = mean_rhs(spec, t + h, f + h * k3f, g + h * k3g);
            f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
            g += h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
            check(f, t + h)?;
            if f == 0.0 || f.signum() != sign {
                return Err(Error::MeanHitsZero { t: t + h });
            }
            if sub == 0 {
                f_mid = f;
            }
        }

        let b_mid = (spec.drift_b)(t0 + h, f_mid);
        let b_right = (spec.drift_b)(t0 + 2.0 * h, f);
        acc += grid.dt() / 6.0 * (b_left + 4.0 * b_mid + b_right);

        values.push(f);
        sensitivities.push(g);
        integral_b.push(acc);
    }

    let mf = MeanFunction {
        grid: grid.clone(),
        values,
        sensitivities,
        integral_b,
    };

    // Self-check: fourth-order central differencing of the solution against
    // b f. Differencing truncation dominates on coarse grids, so only run
    // where the stencil itself resolves 1e-8.
    if grid.dt() <= 1.0 / 256.0 {
        mf.residual_check(spec, 1e-8)?;
    }
    Ok(mf)
}

impl MeanFunction {
    /// max interior residual of the five-point first-derivative stencil
    /// against b(t,f) f, relative to 1 + |f|.
    pub fn max_residual(&self, spec: &ModelSpec) -> f64 {
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let mut worst: f64 = 0.0;
        for i in 2..n.saturating_sub(1) {
            let deriv = (-self.values[i + 2] + 8.0 * self.values[i + 1] - 8.0 * self.values[i - 1]
                + self.values[i - 2])
                / (12.0 * dt);
            let rhs = (spec.drift_b)(self.grid.time(i), self.values[i]) * self.values[i];
            let res = (deriv - rhs).abs() / (1.0 + self.values[i].abs());
            worst = worst.max(res);
        }
        worst
    }

    fn residual_check(&self, spec: &ModelSpec, tol: f64) -> Result<()> {
        let res = self.max_residual(spec);
        if res > tol {
            return Err(Error::MeanResidual {
                t: self.grid.horizon(),
                residual: res,
                tol,
            });
        }
        Ok(())
    }
}

/// X_t = exp(∫_0^t b(s, f(s)) ds) S_t.
pub fn transform_s_to_x(s_value: f64, t_index: usize, mf: &MeanFunction) -> f64 {
    mf.integral_b(t_index).exp() * s_value
}

/// Inverse of [`transform_s_to_x`].
pub fn transform_x_to_s(x_value: f64, t_index: usize, mf: &MeanFunction) -> f64 {
    (-mf.integral_b(t_index)).exp() * x_value
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::with_steps(1.0, n).unwrap()
    }

    #[test]
    fn example2_mean_matches_printed_value() {
        let m = builtin_example(BuiltinExample::Example2);
        let mf = solve_mean_ode(&m.spec, &grid(1024)).unwrap();
        // f(1) = x/(x*1 + 1) = 0.5 at x = 1
        assert_relative_eq!(mf.value(1024), 0.5, max_relative = 1e-10);
    }

    #[test]
    fn zero_drift_mean_is_constant() {
        let spec = ModelSpec::builder(3.0, 1.0).build().unwrap();
        let mf = solve_mean_ode(&spec, &grid(64)).unwrap();
        assert!(mf.values().iter().all(|&v| v == 3.0));
        assert!(mf.integral_b(64) == 0.0);
    }

    #[test]
    fn constant_drift_matches_exponential() {
        let spec = ModelSpec::builder(1.0, 1.0)
            .drift(|_t, _rho| 1.0)
            .build()
            .unwrap();
        let mf = solve_mean_ode(&spec, &grid(512)).unwrap();
        assert!((mf.value(512) - 1.0f64.exp()).abs() <= 1e-6);
        // sensitivity of f = x e^t is e^t
        assert_relative_eq!(mf.sensitivity(512), 1.0f64.exp(), max_relative = 1e-9);
    }

    #[test]
    fn example2_closed_form_sup_error() {
        let m = builtin_example(BuiltinExample::Example2);
        let g = grid(1024);
        let mf = solve_mean_ode(&m.spec, &g).unwrap();
        let cf = m.closed_form_mean.unwrap();
        let sup = (0..=1024)
            .map(|i| (mf.value(i) - cf(g.time(i))).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 1e-6, "sup error {sup}");
    }

    #[test]
    fn example2_sensitivity_matches_closed_form() {
        // ∂x [x/(xt+1)] = 1/(xt+1)^2 at x = 1
        let m = builtin_example(BuiltinExample::Example2);
        let g = grid(1024);
        let mf = solve_mean_ode(&m.spec, &g).unwrap();
        for i in [0usize, 100, 512, 1024] {
            let t = g.time(i);
            assert_relative_eq!(mf.sensitivity(i), 1.0 / ((t + 1.0) * (t + 1.0)), max_relative = 1e-9);
        }
    }

    #[test]
    fn example1_derived_closed_form_agrees() {
        // For drift a(ρ+1)/ρ the mean solves f' = a(f+1), so
        // f(t) = (x+1)e^{at} - 1; with the builtin a = x = 1: 2e^t - 1.
        let m = builtin_example(BuiltinExample::Example1);
        let g = grid(1024);
        let mf = solve_mean_ode(&m.spec, &g).unwrap();
        assert_eq!(mf.value(0), 1.0);
        for i in [256usize, 512, 1024] {
            let t = g.time(i);
            assert_relative_eq!(mf.value(i), 2.0 * t.exp() - 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn mean_ode_midpoint_residual_invariant() {
        // max_i |f(t_{i+1}) - f(t_i) - dt * b(mid) f(mid)| / (1 + |f|) <= 1e-6
        for m in [
            builtin_example(BuiltinExample::Example1).spec,
            builtin_example(BuiltinExample::Example2).spec,
        ] {
            let g = grid(1024);
            let mf = solve_mean_ode(&m, &g).unwrap();
            let fine = solve_mean_ode(&m, &grid(2048)).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..1024 {
                let f_mid = fine.value(2 * i + 1);
                let t_mid = g.time(i) + 0.5 * g.dt();
                let step = mf.value(i + 1)
                    - mf.value(i)
                    - g.dt() * (m.drift_b)(t_mid, f_mid) * f_mid;
                worst = worst.max(step.abs() / (1.0 + mf.value(i).abs()));
            }
            assert!(worst <= 1e-6, "midpoint residual {worst}");
        }
    }

    #[test]
    fn grid_refinement_is_fourth_order() {
        let m = builtin_example(BuiltinExample::Example2);
        let cf = m.closed_form_mean.as_ref().unwrap();
        let mut errors = Vec::new();
        for n in [16usize, 32, 64, 128, 256] {
            let g = grid(n);
            let mf = solve_mean_ode(&m.spec, &g).unwrap();
            let sup = (0..=n)
                .map(|i| (mf.value(i) - cf(g.time(i))).abs())
                .fold(0.0f64, f64::max);
            errors.push(sup);
        }
        for w in errors.windows(2) {
            if w[0] > 1e-13 {
                assert!(
                    w[0] / w[1] >= 8.0,
                    "refinement ratio {} below fourth-order floor (errors {:?})",
                    w[0] / w[1],
                    errors
                );
            }
        }
    }

    #[test]
    fn transform_identities() {
        let m = builtin_example(BuiltinExample::Example2);
        let g = grid(1024);
        let mf = solve_mean_ode(&m.spec, &g).unwrap();
        // t = 0: empty integral
        assert_eq!(transform_s_to_x(2.5, 0, &mf), 2.5);
        // exp(∫_0^1 -f ds) = 1/2, so S = 2 maps to X = 1
        assert_relative_eq!(transform_s_to_x(2.0, 1024, &mf), 1.0, max_relative = 1e-9);
        // the transform identity exp(∫b) = f/x0
        for i in [0usize, 17, 512, 1024] {
            assert_relative_eq!(
                mf.integral_b(i).exp() * m.spec.x0 / mf.value(i),
                1.0,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn transform_roundtrip_many_inputs() {
        let m = builtin_example(BuiltinExample::Example1);
        let g = grid(512);
        let mf = solve_mean_ode(&m.spec, &g).unwrap();
        let mut rng_state = 0x1234_5678_9abc_def0u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..10_000 {
            let x = (next() - 0.5) * 20.0;
            let idx = (next() * 512.0) as usize;
            let back = transform_s_to_x(transform_x_to_s(x, idx, &mf), idx, &mf);
            let tol = 4.0 * f64::EPSILON * x.abs().max(1.0);
            assert!(
                (back - x).abs() <= tol,
                "roundtrip failed at case {case}: {x} -> {back}"
            );
        }
        let back = transform_x_to_s(transform_s_to_x(1.7, 256, &mf), 256, &mf);
        assert!((back - 1.7).abs() <= 4.0 * f64::EPSILON * 1.7);
    }

    #[test]
    fn unbounded_mean_detected() {
        let spec = ModelSpec::builder(1.0, 1.0)
            .drift(|_t, _rho| 100.0)
            .build()
            .unwrap();
        match solve_mean_ode(&spec, &grid(1024)) {
            Err(Error::MeanUnbounded { .. }) => {}
            other => panic!("expected unbounded-mean error, got {other:?}"),
        }
    }

    #[test]
    fn zero_crossing_mean_detected() {
        // f' = b f with b = -2/ρ gives f' = -2, hitting zero at t = x/2
        let spec = ModelSpec::builder(1.0, 1.0)
            .drift(|_t, rho| -2.0 / rho)
            .build()
            .unwrap();
        match solve_mean_ode(&spec, &grid(1024)) {
            Err(Error::MeanHitsZero { t }) => assert!((t - 0.5).abs() < 0.05),
            other => panic!("expected hits-zero error, got {other:?}"),
        }
    }

    #[test]
    fn builtin_q_total() {
        let m = builtin_example(BuiltinExample::Example2);
        assert_eq!(m.spec.q_total(), 0.1);
    }

    #[test]
    fn numeric_fallback_derivatives() {
        let spec = ModelSpec::builder(1.0, 1.0)
            .drift(|_t, rho| rho * rho)
            .build()
            .unwrap();
        let d = (spec.drift_b_drho)(0.0, 1.5);
        assert_relative_eq!(d, 3.0, max_relative = 1e-8);
    }

    #[test]
    fn mark_law_quadrature_is_normalized() {
        let law = MarkLaw::Uniform { lo: -0.5, hi: 0.5 };
        let total: f64 = law.quadrature().iter().map(|&(_, w)| w).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-14);
        assert_relative_eq!(law.expect(|z| z * z), 1.0 / 12.0, max_relative = 1e-12);
        assert!(law.expect(|z| z).abs() < 1e-15);
    }
}
