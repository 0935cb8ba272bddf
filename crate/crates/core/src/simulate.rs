//! Path simulation on a shared grid with common random numbers.
//!
//! One pass of the Euler scheme advances the coupled system
//!
//! ```text
//! X_{k+1} = X_k + b_k X_k Δt + (C_k X_k + σ0_k) ΔW_k
//!           + Σ_j (F(t_k,z_j) X_k + λ0(t_k,z_j,η_k))
//!           - Δt ∫ (F(t_k,z) X_k + λ0(t_k,z,η_k)) μ(dz)
//! Y_{k+1} = Y_k (1 + b_k Δt + C_k ΔW_k + Σ_j F_j - Δt ∫ F μ)
//! u_{k+1} = u_k + (A*_k Δt + β_k ΔW_k + Σ_j γ_j/(1+F_j) - Δt ∫ γ/(1+F) μ) / Y_k
//! ```
//!
//! with A* = α - β C - ∫ F γ/(1+F) μ(dz), α = ∂ρb(t_k, f_k) X_k ∂x f_k,
//! β = ∂πσ0 · ∂x π, γ = ∂ηλ0 · ∂x η, and the stochastic flow ∂X/∂x = Y u.
//! Mean-field arguments are frozen at the deterministic curve: ρ_k = f(t_k),
//! π_k = ψ(f(t_k)), η_k = ξ(f(t_k)).
//!
//! The trailing compensator terms keep the discrete scheme consistent with
//! the compensated jump measure; `SimOptions::uncompensated` switches to the
//! plain jump sum for comparison.
//!
//! Jump events are realized once per path as (time, mark) points of the
//! underlying Poisson measure and bucketed onto whatever grid is simulated,
//! each event entering at its step's left endpoint. Coarsening a noise
//! realization preserves the Brownian path (block sums) and the jump
//! points, which couples refinement levels pathwise.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{MeanFunction, ModelSpec};
use crate::rng::{stream_rng, RngConfig, Stream};

/// Guard below which the first-variation process counts as singular.
const Y_SINGULAR_GUARD: f64 = 1e-14;

/// One jump of the driving measure, attached to the grid step owning it.
/// `time` is the step's left endpoint, where the scheme applies the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
    pub step_index: usize,
}

/// A grid-free jump point of the underlying realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawJump {
    pub time: f64,
    pub mark: f64,
}

/// One path's driving noise: Brownian increments on a grid plus the jump
/// realization. A deterministic function of (master_seed, path_index, grid).
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    grid: TimeGrid,
    pub dw: Vec<f64>,
    jumps: Vec<RawJump>,
}

impl Noise {
    pub fn generate(spec: &ModelSpec, grid: &TimeGrid, rng_cfg: &RngConfig) -> Noise {
        let n = grid.n_steps();
        let sqrt_dt = grid.dt().sqrt();
        let mut brownian = stream_rng(rng_cfg, Stream::Brownian);
        let dw: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut brownian);
                z * sqrt_dt
            })
            .collect();

        let jumps = sample_raw_jumps(spec, grid.horizon(), rng_cfg);
        Noise {
            grid: grid.clone(),
            dw,
            jumps,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn raw_jumps(&self) -> &[RawJump] {
        &self.jumps
    }

    /// Jump events bucketed onto this noise's grid.
    pub fn events(&self) -> Vec<JumpEvent> {
        bucket_events(&self.jumps, &self.grid)
    }

    /// Same Brownian path and jump points on a coarser grid dividing this
    /// one: block sums of increments, identical jump realization.
    pub fn coarsen(&self, coarser: &TimeGrid) -> Result<Noise> {
        let factor = self.grid.refinement_factor(coarser).ok_or_else(|| {
            Error::GridMismatch(format!(
                "grid with dt = {} does not refine dt = {}",
                self.grid.dt(),
                coarser.dt()
            ))
        })?;
        let dw = self
            .dw
            .chunks(factor)
            .map(|c| c.iter().sum::<f64>())
            .collect();
        Ok(Noise {
            grid: coarser.clone(),
            dw,
            jumps: self.jumps.clone(),
        })
    }

    /// This realization with jump `index` (in event order) removed.
    pub fn without_jump(&self, index: usize) -> Noise {
        let mut jumps = self.jumps.clone();
        jumps.remove(index);
        Noise {
            grid: self.grid.clone(),
            dw: self.dw.clone(),
            jumps,
        }
    }

    /// Assemble a noise realization directly; for tests and forced-jump
    /// scenarios.
    pub fn from_parts(grid: TimeGrid, dw: Vec<f64>, mut jumps: Vec<RawJump>) -> Noise {
        assert_eq!(dw.len(), grid.n_steps(), "one increment per step");
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        Noise { grid, dw, jumps }
    }
}

fn sample_raw_jumps(spec: &ModelSpec, horizon: f64, rng_cfg: &RngConfig) -> Vec<RawJump> {
    let mass = spec.jump_intensity * horizon;
    if mass <= 0.0 {
        return Vec::new();
    }
    let mut count_rng = stream_rng(rng_cfg, Stream::PoissonCount);
    let count = Poisson::new(mass).expect("positive mass").sample(&mut count_rng) as usize;
    let mut times: Vec<f64> = (0..count)
        .map(|_| count_rng.gen_range(0.0..horizon))
        .collect();
    times.sort_by(f64::total_cmp);
    let mut mark_rng = stream_rng(rng_cfg, Stream::Marks);
    times
        .into_iter()
        .map(|time| RawJump {
            time,
            mark: spec.jump_size_law.sample(&mut mark_rng),
        })
        .collect()
}

fn bucket_events(jumps: &[RawJump], grid: &TimeGrid) -> Vec<JumpEvent> {
    jumps
        .iter()
        .map(|j| {
            let step_index = grid.step_of(j.time);
            JumpEvent {
                time: grid.time(step_index),
                mark: j.mark,
                step_index,
            }
        })
        .collect()
}

/// Per-step draw of the jump events on a grid: counts are Poisson(ν Δt)
/// per step with i.i.d. marks, events placed at the step's left endpoint.
pub fn sample_jumps(spec: &ModelSpec, grid: &TimeGrid, rng_cfg: &RngConfig) -> Vec<JumpEvent> {
    bucket_events(&sample_raw_jumps(spec, grid.horizon(), rng_cfg), grid)
}

/// Deterministic per-step coefficients shared by every path of one
/// (model, mean function, grid) triple. Mark expectations are evaluated
/// once here so the per-path hot loop stays free of quadrature.
pub struct CoeffTable {
    pub(crate) steps: Vec<StepCoeffs>,
    /// Mark quadrature nodes (z_i, w_i), Σ w_i = 1.
    pub(crate) mark_nodes: Vec<(f64, f64)>,
}

pub(crate) struct StepCoeffs {
    pub t: f64,
    /// f(t_k)
    pub f: f64,
    /// ∂f/∂x0 (t_k)
    pub g: f64,
    pub b: f64,
    pub db_drho: f64,
    pub c_lin: f64,
    pub sigma0: f64,
    /// β_k = ∂πσ0 · ψ'(f) g
    pub beta: f64,
    pub eta: f64,
    /// ξ'(f) g, the sensitivity of η_t
    pub g_xi: f64,
    /// ν E[F(t_k, Z)]
    pub nu_e_f: f64,
    /// ν E[λ0(t_k, Z, η_k)]
    pub nu_e_l0: f64,
    /// ν E[γ/(1+F)]
    pub nu_e_mstar: f64,
    /// ν E[F γ/(1+F)]
    pub nu_e_fg: f64,
    /// F(t_k, z_i) at the mark quadrature nodes
    pub f_nodes: Vec<f64>,
    /// λ0(t_k, z_i, η_k) at the mark quadrature nodes
    pub l0_nodes: Vec<f64>,
    /// true when F and λ0 are constant across the quadrature nodes
    pub mark_independent: bool,
}

impl CoeffTable {
    pub fn build(spec: &ModelSpec, mf: &MeanFunction, grid: &TimeGrid) -> CoeffTable {
        let mark_nodes = spec.jump_size_law.quadrature();
        let nu = spec.jump_intensity;
        let steps = (0..grid.n_steps())
            .map(|k| {
                let t = grid.time(k);
                let f = mf.value(k);
                let g = mf.sensitivity(k);
                let pi = spec.coupling_psi.apply(f);
                let eta = spec.coupling_xi.apply(f);
                let g_psi = spec.coupling_psi.slope(f) * g;
                let g_xi = spec.coupling_xi.slope(f) * g;

                let f_nodes: Vec<f64> = mark_nodes
                    .iter()
                    .map(|&(z, _)| (spec.jump_linear)(t, z))
                    .collect();
                let l0_nodes: Vec<f64> = mark_nodes
                    .iter()
                    .map(|&(z, _)| (spec.jump_affine)(t, z, eta))
                    .collect();
                let mark_independent = f_nodes.windows(2).all(|w| w[0] == w[1])
                    && l0_nodes.windows(2).all(|w| w[0] == w[1]);

                let mut e_f = 0.0;
                let mut e_l0 = 0.0;
                let mut e_mstar = 0.0;
                let mut e_fg = 0.0;
                for (i, &(z, w)) in mark_nodes.iter().enumerate() {
                    let fz = f_nodes[i];
                    let gz = (spec.jump_affine_deta)(t, z, eta) * g_xi;
                    e_f += w * fz;
                    e_l0 += w * l0_nodes[i];
                    e_mstar += w * gz / (1.0 + fz);
                    e_fg += w * fz * gz / (1.0 + fz);
                }

                StepCoeffs {
                    t,
                    f,
                    g,
                    b: (spec.drift_b)(t, f),
                    db_drho: (spec.drift_b_drho)(t, f),
                    c_lin: (spec.diffusion_linear)(t),
                    sigma0: (spec.diffusion_affine)(t, pi),
                    beta: (spec.diffusion_affine_dpi)(t, pi) * g_psi,
                    eta,
                    g_xi,
                    nu_e_f: nu * e_f,
                    nu_e_l0: nu * e_l0,
                    nu_e_mstar: nu * e_mstar,
                    nu_e_fg: nu * e_fg,
                    f_nodes,
                    l0_nodes,
                    mark_independent,
                }
            })
            .collect();
        CoeffTable { steps, mark_nodes }
    }
}

/// Simulation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Subtract the jump compensator in the scheme (default). The
    /// uncompensated variant reproduces the plain jump-sum recursion.
    pub compensated: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { compensated: true }
    }
}

/// Everything shared across the paths of one simulation: model, mean curve,
/// grid, precomputed step coefficients. Immutable, hence freely shared by
/// parallel path workers.
pub struct SimContext<'a> {
    pub spec: &'a ModelSpec,
    pub mf: &'a MeanFunction,
    pub grid: &'a TimeGrid,
    pub opts: SimOptions,
    table: CoeffTable,
}

impl<'a> SimContext<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        mf: &'a MeanFunction,
        grid: &'a TimeGrid,
        opts: SimOptions,
    ) -> Result<Self> {
        if mf.grid() != grid {
            return Err(Error::GridMismatch(
                "mean function solved on a different grid".into(),
            ));
        }
        Ok(SimContext {
            spec,
            mf,
            grid,
            opts,
            table: CoeffTable::build(spec, mf, grid),
        })
    }

    pub(crate) fn table(&self) -> &CoeffTable {
        &self.table
    }

    pub fn noise(&self, rng_cfg: &RngConfig) -> Noise {
        Noise::generate(self.spec, self.grid, rng_cfg)
    }

    /// λ(t_k, X_k, z, η_k) evaluated on a simulated bundle.
    pub fn jump_coefficient_at(&self, bundle: &PathBundle, k: usize, z: f64) -> f64 {
        let step = &self.table.steps[k];
        self.spec.jump_coefficient(step.t, bundle.x[k], z, step.eta)
    }

    /// One Euler pass over X, Y, u and the flow on the given noise.
    pub fn simulate(&self, noise: &Noise) -> Result<PathBundle> {
        let n = self.grid.n_steps();
        let noise = if noise.grid() == self.grid {
            noise.clone()
        } else {
            noise.coarsen(self.grid)?
        };
        let dt = self.grid.dt();
        let comp = if self.opts.compensated { 1.0 } else { 0.0 };
        let events = noise.events();

        let mut x = vec![0.0; n + 1];
        let mut y = vec![0.0; n + 1];
        let mut u = vec![0.0; n + 1];
        let mut flow = vec![0.0; n + 1];
        x[0] = self.spec.x0;
        y[0] = 1.0;
        u[0] = 1.0;
        flow[0] = 1.0;

        let mut ev = 0usize;
        for k in 0..n {
            let c = &self.table.steps[k];
            let dwk = noise.dw[k];

            // jump sums over the events owned by step k
            let mut s_f = 0.0;
            let mut s_l0 = 0.0;
            let mut s_mstar = 0.0;
            while ev < events.len() && events[ev].step_index == k {
                let z = events[ev].mark;
                let fz = (self.spec.jump_linear)(c.t, z);
                if 1.0 + fz <= 0.0 {
                    return Err(Error::VariationLostPositivity {
                        step: k,
                        multiplier: 1.0 + fz,
                    });
                }
                s_f += fz;
                s_l0 += (self.spec.jump_affine)(c.t, z, c.eta);
                s_mstar += (self.spec.jump_affine_deta)(c.t, z, c.eta) * c.g_xi / (1.0 + fz);
                ev += 1;
            }

            let xk = x[k];
            let yk = y[k];
            x[k + 1] = xk
                + c.b * xk * dt
                + (c.c_lin * xk + c.sigma0) * dwk
                + (s_f * xk + s_l0)
                - comp * dt * (c.nu_e_f * xk + c.nu_e_l0);
            if !x[k + 1].is_finite() {
                return Err(Error::PathDiverged { step: k });
            }

            y[k + 1] = yk * (1.0 + c.b * dt + c.c_lin * dwk + s_f - comp * dt * c.nu_e_f);

            if yk.abs() < Y_SINGULAR_GUARD {
                return Err(Error::VariationSingular {
                    step: k,
                    magnitude: yk.abs(),
                });
            }
            let alpha = c.db_drho * xk * c.g;
            let a_star = alpha - c.beta * c.c_lin - c.nu_e_fg;
            u[k + 1] = u[k]
                + (a_star * dt + c.beta * dwk + s_mstar - comp * dt * c.nu_e_mstar) / yk;
            flow[k + 1] = y[k + 1] * u[k + 1];
        }

        let (run_max, argmax_index, run_min, argmin_index) = path_extrema(&x);
        Ok(PathBundle {
            x,
            y,
            u,
            flow,
            jumps: events,
            dw: noise.dw,
            run_max,
            run_min,
            argmax_index,
            argmin_index,
        })
    }

    /// D_{r,z}X on the grid: Y_t Y_r^{-1} λ(t_r, X_r, z, η_r) for t >= r,
    /// zero before r.
    pub fn malliavin_derivative(
        &self,
        bundle: &PathBundle,
        r_index: usize,
        z: f64,
    ) -> Result<Vec<f64>> {
        let yr = bundle.y[r_index];
        if yr.abs() < Y_SINGULAR_GUARD {
            return Err(Error::VariationSingular {
                step: r_index,
                magnitude: yr.abs(),
            });
        }
        let lam = self.jump_coefficient_at(bundle, r_index, z);
        Ok(bundle
            .y
            .iter()
            .enumerate()
            .map(|(i, &yi)| if i >= r_index { yi / yr * lam } else { 0.0 })
            .collect())
    }

    /// D_{r,z}X_T only; the weights evaluate this in their hot path.
    pub fn malliavin_terminal(&self, bundle: &PathBundle, r_index: usize, z: f64) -> f64 {
        let n = self.grid.n_steps();
        bundle.y[n] / bundle.y[r_index] * self.jump_coefficient_at(bundle, r_index, z)
    }
}

/// Per-path trajectory of the coupled system plus its noise and extrema.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub flow: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub dw: Vec<f64>,
    pub run_max: f64,
    pub run_min: f64,
    pub argmax_index: usize,
    pub argmin_index: usize,
}

impl PathBundle {
    pub fn terminal(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn terminal_flow(&self) -> f64 {
        *self.flow.last().unwrap()
    }

    /// Number of jump events owned by step k.
    pub fn jumps_in_step(&self, k: usize) -> usize {
        self.jumps.iter().filter(|e| e.step_index == k).count()
    }
}

/// Discrete extrema with first-attaining tie break:
/// (max, argmax, min, argmin).
pub fn path_extrema(x: &[f64]) -> (f64, usize, f64, usize) {
    let mut run_max = x[0];
    let mut argmax = 0usize;
    let mut run_min = x[0];
    let mut argmin = 0usize;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > run_max {
            run_max = v;
            argmax = i;
        }
        if v < run_min {
            run_min = v;
            argmin = i;
        }
    }
    (run_max, argmax, run_min, argmin)
}
