//! Malliavin weight fields and the pathwise Skorokhod integral.
//!
//! The European field on an in-the-money path is
//!
//! ```text
//! ω(t,z) = Y_T u_T / (Q [ (X_T + D_{t,z}X_T - K)^+ - (X_T - K)^+ ])
//! ```
//!
//! with Q = ν T; it vanishes out of the money. The up-and-out field is
//!
//! ```text
//! ω(t,z) = 1_{max X < B} H_K(max X) ∂x(max X)
//!          / (Q [ Φ(shifted path) - Φ(original path) ])
//! ```
//!
//! where the shifted path is X_s + 1_{t<=s} D_{t,z}X_s with its own argmax,
//! Φ is the knockout payoff and ∂x(max X) is the flow at the (first) argmax
//! index. The down-and-out field mirrors this with the running minimum.
//!
//! δ(ω) is realized pathwise as jump sum minus compensator. The jump sum
//! evaluates the field on the configuration with the jump in question
//! removed; under the Mecke identity this makes E δ(ω) = 0 exact for the
//! discrete scheme, anticipating integrands included. The on-path variant
//! (no removal) is kept for comparison. Denominators inside the guard
//! window contribute zero and are counted rather than clamped.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::simulate::{Noise, PathBundle, SimContext};

/// Denominators with magnitude below this count as guard hits.
const DENOM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum WeightKind {
    European { strike: f64 },
    UpAndOut { strike: f64, barrier: f64 },
    DownAndOut { strike: f64, barrier: f64 },
}

/// Lazy evaluator of ω(t_index, z) bound to one path bundle and one payoff
/// parameter set.
pub struct WeightField<'a, 'b> {
    ctx: &'a SimContext<'a>,
    bundle: &'b PathBundle,
    kind: WeightKind,
    /// Q = ν T.
    pub q_total: f64,
    /// max_{s<k} X_s (resp. min) for the barrier denominators.
    prefix: Vec<f64>,
    guard_hits: Cell<u64>,
}

/// ω for the call payoff (X_T - K)^+.
pub fn european_weight<'a, 'b>(
    ctx: &'a SimContext<'a>,
    bundle: &'b PathBundle,
    strike: f64,
) -> Result<WeightField<'a, 'b>> {
    WeightField::new(ctx, bundle, WeightKind::European { strike })
}

/// ω for the up-and-out payoff (max X - K)^+ 1_{max X < B}; needs K < B.
pub fn barrier_uo_weight<'a, 'b>(
    ctx: &'a SimContext<'a>,
    bundle: &'b PathBundle,
    strike: f64,
    barrier: f64,
) -> Result<WeightField<'a, 'b>> {
    if !(strike < barrier) {
        return Err(Error::InvalidPayoff(format!(
            "up-and-out needs strike < barrier, got K = {strike}, B = {barrier}"
        )));
    }
    WeightField::new(
        ctx,
        bundle,
        WeightKind::UpAndOut {
            strike,
            barrier,
        },
    )
}

/// ω for the down-and-out payoff (min X - K)^+ 1_{min X > B}.
pub fn barrier_do_weight<'a, 'b>(
    ctx: &'a SimContext<'a>,
    bundle: &'b PathBundle,
    strike: f64,
    barrier: f64,
) -> Result<WeightField<'a, 'b>> {
    WeightField::new(
        ctx,
        bundle,
        WeightKind::DownAndOut {
            strike,
            barrier,
        },
    )
}

impl<'a, 'b> WeightField<'a, 'b> {
    pub(crate) fn new(
        ctx: &'a SimContext<'a>,
        bundle: &'b PathBundle,
        kind: WeightKind,
    ) -> Result<Self> {
        let q_total = ctx.spec.q_total();
        if q_total <= 0.0 {
            return Err(Error::JumpFreeWeight);
        }
        let n = bundle.x.len();
        let prefix = match kind {
            WeightKind::European { .. } => Vec::new(),
            WeightKind::UpAndOut { .. } => {
                let mut p = Vec::with_capacity(n);
                let mut m = f64::NEG_INFINITY;
                for &v in &bundle.x {
                    p.push(m);
                    m = m.max(v);
                }
                p
            }
            WeightKind::DownAndOut { .. } => {
                let mut p = Vec::with_capacity(n);
                let mut m = f64::INFINITY;
                for &v in &bundle.x {
                    p.push(m);
                    m = m.min(v);
                }
                p
            }
        };
        Ok(WeightField {
            ctx,
            bundle,
            kind,
            q_total,
            prefix,
            guard_hits: Cell::new(0),
        })
    }

    /// Same parameters bound to another bundle (used by the jump-removal
    /// evaluation).
    pub(crate) fn rebind<'c>(&self, bundle: &'c PathBundle) -> Result<WeightField<'a, 'c>> {
        WeightField::new(self.ctx, bundle, self.kind)
    }

    pub fn guard_hits(&self) -> u64 {
        self.guard_hits.get()
    }

    /// ω(t_index, z).
    pub fn eval(&self, t_index: usize, z: f64) -> f64 {
        let lam = self.ctx.jump_coefficient_at(self.bundle, t_index, z);
        self.eval_lambda(t_index, lam)
    }

    fn guarded(&self, numer: f64, denom: f64) -> f64 {
        if denom.abs() < DENOM_GUARD {
            self.guard_hits.set(self.guard_hits.get() + 1);
            0.0
        } else {
            numer / denom
        }
    }

    /// Core evaluation given λ(t_k, X_k, z, η_k); all z-dependence of the
    /// field enters through λ.
    fn eval_lambda(&self, k: usize, lam: f64) -> f64 {
        let b = self.bundle;
        let n = b.x.len() - 1;
        match self.kind {
            WeightKind::European { strike } => {
                let x_t = b.x[n];
                if x_t <= strike {
                    return 0.0;
                }
                let d = b.y[n] / b.y[k] * lam;
                let yu = b.y[n] * b.u[n];
                let bracket = if d >= strike - x_t { d } else { strike - x_t };
                self.guarded(yu, self.q_total * bracket)
            }
            WeightKind::UpAndOut { strike, barrier } => {
                let g_max = b.run_max;
                if !(g_max < barrier) || !(g_max > strike) {
                    return 0.0;
                }
                let numer = b.flow[b.argmax_index];
                let phi_orig = g_max - strike;
                let c = lam / b.y[k];
                let mut shifted = self.prefix[k];
                for s in k..=n {
                    shifted = shifted.max(b.x[s] + c * b.y[s]);
                }
                let phi_shift = if shifted < barrier {
                    (shifted - strike).max(0.0)
                } else {
                    0.0
                };
                self.guarded(numer, self.q_total * (phi_shift - phi_orig))
            }
            WeightKind::DownAndOut { strike, barrier } => {
                let g_min = b.run_min;
                if !(g_min > barrier) || !(g_min > strike) {
                    return 0.0;
                }
                let numer = b.flow[b.argmin_index];
                let phi_orig = g_min - strike;
                let c = lam / b.y[k];
                let mut shifted = self.prefix[k];
                for s in k..=n {
                    shifted = shifted.min(b.x[s] + c * b.y[s]);
                }
                let phi_shift = if shifted > barrier {
                    (shifted - strike).max(0.0)
                } else {
                    0.0
                };
                self.guarded(numer, self.q_total * (phi_shift - phi_orig))
            }
        }
    }

    /// ν Σ_k Δt E_Z[ω(t_k, Z)], the compensator of the jump sum. Uses the
    /// context's cached mark nodes; when the jump coefficients are
    /// mark-independent one evaluation per step suffices.
    fn compensator(&self) -> f64 {
        let table = self.ctx.table();
        let dt = self.ctx.grid.dt();
        let nu = self.ctx.spec.jump_intensity;
        let mut acc = 0.0;
        for (k, sc) in table.steps.iter().enumerate() {
            let xk = self.bundle.x[k];
            let w = if sc.mark_independent {
                self.eval_lambda(k, sc.f_nodes[0] * xk + sc.l0_nodes[0])
            } else {
                table
                    .mark_nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &(_z, wq))| {
                        wq * self.eval_lambda(k, sc.f_nodes[i] * xk + sc.l0_nodes[i])
                    })
                    .sum()
            };
            acc += w;
        }
        nu * dt * acc
    }
}

/// D_{t,z} of the running maximum: sup_s {X_s + D_{t,z}X_s 1_{t<=s}} - max X.
pub fn d_max(ctx: &SimContext, bundle: &PathBundle, t_index: usize, z: f64) -> f64 {
    let c = ctx.jump_coefficient_at(bundle, t_index, z) / bundle.y[t_index];
    let mut shifted = f64::NEG_INFINITY;
    for s in 0..bundle.x.len() {
        let v = if s >= t_index {
            bundle.x[s] + c * bundle.y[s]
        } else {
            bundle.x[s]
        };
        shifted = shifted.max(v);
    }
    shifted - bundle.run_max
}

/// D_{t,z} of the running minimum.
pub fn d_min(ctx: &SimContext, bundle: &PathBundle, t_index: usize, z: f64) -> f64 {
    let c = ctx.jump_coefficient_at(bundle, t_index, z) / bundle.y[t_index];
    let mut shifted = f64::INFINITY;
    for s in 0..bundle.x.len() {
        let v = if s >= t_index {
            bundle.x[s] + c * bundle.y[s]
        } else {
            bundle.x[s]
        };
        shifted = shifted.min(v);
    }
    shifted - bundle.run_min
}

/// How the jump sum of δ(ω) evaluates the field at a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpSumMode {
    /// Evaluate on the path with the jump removed (exact pathwise
    /// realization of the Skorokhod integral; zero mean by construction).
    #[default]
    ExcludeSelf,
    /// Evaluate on the full path, dropping the anticipating correction.
    OnPath,
}

/// δ(ω) split into its jump sum and compensator; value = jump_sum -
/// compensator exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkorokhodResult {
    pub value: f64,
    pub jump_sum: f64,
    pub compensator: f64,
    pub guard_hits: u64,
}

/// Pathwise δ(ω) for a field bound to the bundle simulated from `noise`.
pub fn skorokhod_integral(
    field: &WeightField,
    noise: &Noise,
    mode: JumpSumMode,
) -> Result<SkorokhodResult> {
    let ctx = field.ctx;
    let mut jump_sum = 0.0;
    let mut extra_guards = 0u64;
    for (j, ev) in field.bundle.jumps.iter().enumerate() {
        match mode {
            JumpSumMode::OnPath => {
                jump_sum += field.eval(ev.step_index, ev.mark);
            }
            JumpSumMode::ExcludeSelf => {
                let reduced_noise = noise.without_jump(j);
                let reduced = ctx.simulate(&reduced_noise)?;
                let rf = field.rebind(&reduced)?;
                jump_sum += rf.eval(ev.step_index, ev.mark);
                extra_guards += rf.guard_hits();
            }
        }
    }
    let compensator = field.compensator();
    Ok(SkorokhodResult {
        value: jump_sum - compensator,
        jump_sum,
        compensator,
        guard_hits: field.guard_hits() + extra_guards,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::simulate::{path_extrema, PathBundle};

    /// Hand-built bundle with prescribed trajectories; flow = Y u.
    pub(crate) fn bundle(x: Vec<f64>, y: Vec<f64>, u: Vec<f64>) -> PathBundle {
        let flow: Vec<f64> = y.iter().zip(&u).map(|(a, b)| a * b).collect();
        let (run_max, argmax_index, run_min, argmin_index) = path_extrema(&x);
        let n = x.len() - 1;
        PathBundle {
            x,
            y,
            u,
            flow,
            jumps: vec![],
            dw: vec![0.0; n],
            run_max,
            run_min,
            argmax_index,
            argmin_index,
        }
    }

    pub(crate) fn bundle_from_path(x: Vec<f64>) -> PathBundle {
        let ones = vec![1.0; x.len()];
        bundle(x, ones.clone(), ones)
    }
}
