//! Flat key = value run configuration.
//!
//! Lines hold `key = value` pairs; `#` starts a comment; keys are
//! case-sensitive and unknown or repeated keys are hard errors with their
//! line number. Every field has a recorded default so an emitted CSV
//! header (the config echoed back as comments) fully determines the run.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::greeks::{applicable_methods, FdMode, Method, Payoff, Quantity};
use crate::grid::TimeGrid;
use crate::model::{
    builtin_example, solve_mean_ode, BuiltinExample, MarkLaw, MeanFunction, ModelSpec,
};

/// Default step 2^-12.
pub const DEFAULT_DT: f64 = 0.000244140625;
pub const DEFAULT_N_PATHS: usize = 1000;
pub const DEFAULT_H_FD: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Default refinement ladder 2^-5, 2^-6, 2^-7.
pub const DEFAULT_DT_LIST: [f64; 3] = [0.03125, 0.015625, 0.0078125];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    /// b(t, ρ) = a ρ
    MeanLinear,
    /// b(t, ρ) = a (ρ + 1) / ρ
    MeanAffineRatio,
    /// b(t, ρ) = a
    Constant,
}

impl DriftKind {
    fn name(&self) -> &'static str {
        match self {
            DriftKind::MeanLinear => "mean_linear",
            DriftKind::MeanAffineRatio => "mean_affine_ratio",
            DriftKind::Constant => "constant",
        }
    }
}

/// Inline semi-linear model family: constant coefficient loadings around a
/// selectable drift shape.
#[derive(Debug, Clone, PartialEq)]
pub struct InlineModel {
    pub drift: DriftKind,
    pub a: f64,
    pub c: f64,
    pub sigma0: f64,
    pub f_jump: f64,
    pub lambda0: f64,
    pub nu: f64,
    pub mark_lo: f64,
    pub mark_hi: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for InlineModel {
    fn default() -> Self {
        InlineModel {
            drift: DriftKind::Constant,
            a: 0.0,
            c: 0.0,
            sigma0: 0.0,
            f_jump: 0.0,
            lambda0: 0.0,
            nu: 0.0,
            mark_lo: -0.5,
            mark_hi: 0.5,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSelector {
    Example1,
    Example2,
    Inline(InlineModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    EuropeanCall,
    Digital,
    UpAndOutCall,
    DownAndOutCall,
    SmoothedCall,
}

impl PayoffKind {
    fn name(&self) -> &'static str {
        match self {
            PayoffKind::EuropeanCall => "european_call",
            PayoffKind::Digital => "digital",
            PayoffKind::UpAndOutCall => "up_and_out_call",
            PayoffKind::DownAndOutCall => "down_and_out_call",
            PayoffKind::SmoothedCall => "smoothed_call",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantityKind {
    State,
    MalliavinDerivative,
    DeltaEuro,
    DeltaBarrier,
}

impl QuantityKind {
    fn name(&self) -> &'static str {
        match self {
            QuantityKind::State => "state",
            QuantityKind::MalliavinDerivative => "malliavin_derivative",
            QuantityKind::DeltaEuro => "delta_euro",
            QuantityKind::DeltaBarrier => "delta_barrier",
        }
    }
}

/// Parsed run configuration; optional fields resolve against the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSelector,
    pub payoff: PayoffKind,
    /// Defaults to the mean value at the horizon (at the mean).
    pub strike: Option<f64>,
    /// Defaults to 1.5 x0.
    pub barrier: Option<f64>,
    pub epsilon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub h_fd: f64,
    pub dt_list: Vec<f64>,
    pub methods: Option<Vec<Method>>,
    pub quantity: QuantityKind,
    /// Defaults to horizon / 2.
    pub deriv_time: Option<f64>,
    pub deriv_mark: f64,
    pub trace: bool,
    pub fd_mode: FdMode,
    pub uncompensated_euler: bool,
}

impl RunConfig {
    fn with_model(model: ModelSelector) -> Self {
        RunConfig {
            model,
            payoff: PayoffKind::EuropeanCall,
            strike: None,
            barrier: None,
            epsilon: DEFAULT_EPSILON,
            dt: DEFAULT_DT,
            n_paths: DEFAULT_N_PATHS,
            seed: DEFAULT_SEED,
            h_fd: DEFAULT_H_FD,
            dt_list: DEFAULT_DT_LIST.to_vec(),
            methods: None,
            quantity: QuantityKind::State,
            deriv_time: None,
            deriv_mark: 0.25,
            trace: false,
            fd_mode: FdMode::Central,
            uncompensated_euler: false,
        }
    }

    /// Builds the model spec the selector describes.
    pub fn build_spec(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelSelector::Example1 => Ok(builtin_example(BuiltinExample::Example1).spec),
            ModelSelector::Example2 => Ok(builtin_example(BuiltinExample::Example2).spec),
            ModelSelector::Inline(m) => {
                let a = m.a;
                let builder = ModelSpec::builder(m.x0, m.horizon);
                let builder = match m.drift {
                    DriftKind::MeanLinear => builder
                        .drift(move |_t, rho| a * rho)
                        .drift_derivative(move |_t, _| a),
                    DriftKind::MeanAffineRatio => builder
                        .drift(move |_t, rho| a * (rho + 1.0) / rho)
                        .drift_derivative(move |_t, rho| -a / (rho * rho)),
                    DriftKind::Constant => builder
                        .drift(move |_t, _rho| a)
                        .drift_derivative(move |_t, _| 0.0),
                };
                let (c, s0, fj, l0) = (m.c, m.sigma0, m.f_jump, m.lambda0);
                builder
                    .diffusion_linear(move |_t| c)
                    .diffusion_affine(move |_t, _pi| s0)
                    .diffusion_affine_derivative(|_t, _pi| 0.0)
                    .jump_linear(move |_t, _z| fj)
                    .jump_affine(move |_t, _z, _eta| l0)
                    .jump_affine_derivative(|_t, _z, _eta| 0.0)
                    .jumps(
                        m.nu,
                        MarkLaw::Uniform {
                            lo: m.mark_lo,
                            hi: m.mark_hi,
                        },
                    )
                    .build()
            }
        }
    }

    /// Validates, builds the model and fills derived defaults. The type
    /// checks here guard the estimators' preconditions so the CLI can map
    /// every config problem to its own exit code.
    pub fn resolve(&self) -> Result<Resolved> {
        if !(self.dt > 0.0) {
            return Err(Error::ConfigGeneral(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::ConfigGeneral("n_paths must be positive".into()));
        }
        if !(self.h_fd > 0.0) {
            return Err(Error::ConfigGeneral(format!(
                "h_fd must be positive, got {}",
                self.h_fd
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::ConfigGeneral(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.dt_list.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::ConfigGeneral("dt_list entries must be positive".into()));
        }
        let spec = self.build_spec().map_err(|e| match e {
            Error::InvalidModel(m) => Error::ConfigGeneral(format!("invalid model: {m}")),
            other => other,
        })?;
        let grid = TimeGrid::new(spec.horizon, self.dt)
            .map_err(|e| Error::ConfigGeneral(e.to_string()))?;
        let mf = solve_mean_ode(&spec, &grid)?;

        let strike = self.strike.unwrap_or_else(|| mf.value(grid.n_steps()));
        let barrier = self.barrier.unwrap_or(1.5 * spec.x0);
        let payoff = match self.payoff {
            PayoffKind::EuropeanCall => Payoff::EuropeanCall { strike },
            PayoffKind::Digital => Payoff::Digital { strike },
            PayoffKind::UpAndOutCall => Payoff::UpAndOutCall { strike, barrier },
            PayoffKind::DownAndOutCall => Payoff::DownAndOutCall { strike, barrier },
            PayoffKind::SmoothedCall => Payoff::SmoothedCall {
                strike,
                width: self.epsilon,
            },
        };
        payoff
            .validate()
            .map_err(|e| Error::ConfigGeneral(e.to_string()))?;

        let methods = match &self.methods {
            Some(m) => m.clone(),
            None => applicable_methods(&payoff),
        };

        let deriv_time = self.deriv_time.unwrap_or(0.5 * spec.horizon);
        let quantity = match self.quantity {
            QuantityKind::State => Quantity::State,
            QuantityKind::MalliavinDerivative => Quantity::MalliavinDerivative {
                r_time: deriv_time,
                mark: self.deriv_mark,
            },
            QuantityKind::DeltaEuro => Quantity::DeltaEuro { strike },
            QuantityKind::DeltaBarrier => Quantity::DeltaBarrier { strike, barrier },
        };

        let mut cfg = self.clone();
        cfg.strike = Some(strike);
        cfg.barrier = Some(barrier);
        cfg.deriv_time = Some(deriv_time);
        Ok(Resolved {
            cfg,
            spec,
            grid,
            mf,
            payoff,
            methods,
            quantity,
        })
    }
}

/// A validated configuration with the model built, the mean curve solved
/// and every optional field filled.
pub struct Resolved {
    pub cfg: RunConfig,
    pub spec: ModelSpec,
    pub grid: TimeGrid,
    pub mf: MeanFunction,
    pub payoff: Payoff,
    pub methods: Vec<Method>,
    pub quantity: Quantity,
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Config {
        line,
        message: format!("malformed numeral for {key}: '{value}'"),
    })
}

fn parse_u64(line: usize, key: &str, value: &str) -> Result<u64> {
    value.parse::<u64>().map_err(|_| Error::Config {
        line,
        message: format!("malformed integer for {key}: '{value}'"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("expected true/false for {key}, got '{value}'"),
        }),
    }
}

fn parse_method(line: usize, value: &str) -> Result<Method> {
    match value {
        "malliavin" => Ok(Method::Malliavin),
        "flow_pathwise" => Ok(Method::FlowPathwise),
        "fd_central" => Ok(Method::FdCentral),
        "fd_forward" => Ok(Method::FdForward),
        _ => Err(Error::Config {
            line,
            message: format!("unknown method '{value}'"),
        }),
    }
}

/// Parses a flat config text into a [`RunConfig`] with defaults applied.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line: line_no,
                message: format!("expected 'key = value', got '{content}'"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config {
                line: line_no,
                message: "empty key or value".into(),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Config {
                line: line_no,
                message: format!("duplicate key '{key}'"),
            });
        }
        entries.push((line_no, key, value));
    }

    let model_entry = entries.iter().find(|(_, k, _)| k == "model");
    let Some((model_line, _, model_value)) = model_entry else {
        return Err(Error::ConfigGeneral("model selector required".into()));
    };
    let mut model = match model_value.as_str() {
        "example1" => ModelSelector::Example1,
        "example2" => ModelSelector::Example2,
        "inline" => ModelSelector::Inline(InlineModel::default()),
        other => {
            return Err(Error::Config {
                line: *model_line,
                message: format!("unknown model '{other}' (example1 | example2 | inline)"),
            })
        }
    };

    let mut cfg_fields = RunConfig::with_model(ModelSelector::Example2); // placeholder model
    for (line, key, value) in &entries {
        let line = *line;
        match key.as_str() {
            "model" => {}
            "drift" | "a" | "c" | "sigma0" | "f_jump" | "lambda0" | "nu" | "mark_lo"
            | "mark_hi" | "x0" | "horizon" => {
                let ModelSelector::Inline(ref mut inline) = model else {
                    return Err(Error::Config {
                        line,
                        message: format!("key '{key}' only applies to model = inline"),
                    });
                };
                match key.as_str() {
                    "drift" => {
                        inline.drift = match value.as_str() {
                            "mean_linear" => DriftKind::MeanLinear,
                            "mean_affine_ratio" => DriftKind::MeanAffineRatio,
                            "constant" => DriftKind::Constant,
                            other => {
                                return Err(Error::Config {
                                    line,
                                    message: format!("unknown drift kind '{other}'"),
                                })
                            }
                        }
                    }
                    "a" => inline.a = parse_f64(line, key, value)?,
                    "c" => inline.c = parse_f64(line, key, value)?,
                    "sigma0" => inline.sigma0 = parse_f64(line, key, value)?,
                    "f_jump" => inline.f_jump = parse_f64(line, key, value)?,
                    "lambda0" => inline.lambda0 = parse_f64(line, key, value)?,
                    "nu" => inline.nu = parse_f64(line, key, value)?,
                    "mark_lo" => inline.mark_lo = parse_f64(line, key, value)?,
                    "mark_hi" => inline.mark_hi = parse_f64(line, key, value)?,
                    "x0" => inline.x0 = parse_f64(line, key, value)?,
                    "horizon" => inline.horizon = parse_f64(line, key, value)?,
                    _ => unreachable!(),
                }
            }
            "payoff" => {
                cfg_fields.payoff = match value.as_str() {
                    "european_call" => PayoffKind::EuropeanCall,
                    "digital" => PayoffKind::Digital,
                    "up_and_out_call" => PayoffKind::UpAndOutCall,
                    "down_and_out_call" => PayoffKind::DownAndOutCall,
                    "smoothed_call" => PayoffKind::SmoothedCall,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown payoff '{other}'"),
                        })
                    }
                }
            }
            "strike" => cfg_fields.strike = Some(parse_f64(line, key, value)?),
            "barrier" => cfg_fields.barrier = Some(parse_f64(line, key, value)?),
            "epsilon" => cfg_fields.epsilon = parse_f64(line, key, value)?,
            "dt" => {
                cfg_fields.dt = parse_f64(line, key, value)?;
                if !(cfg_fields.dt > 0.0) {
                    return Err(Error::Config {
                        line,
                        message: format!("dt must be positive, got {}", cfg_fields.dt),
                    });
                }
            }
            "n_paths" => {
                let n = parse_u64(line, key, value)?;
                if n == 0 {
                    return Err(Error::Config {
                        line,
                        message: "n_paths must be positive".into(),
                    });
                }
                cfg_fields.n_paths = n as usize;
            }
            "seed" => cfg_fields.seed = parse_u64(line, key, value)?,
            "h_fd" => cfg_fields.h_fd = parse_f64(line, key, value)?,
            "dt_list" => {
                let mut list = Vec::new();
                for part in value.split(',') {
                    list.push(parse_f64(line, key, part.trim())?);
                }
                cfg_fields.dt_list = list;
            }
            "methods" => {
                let mut list = Vec::new();
                for part in value.split(',') {
                    list.push(parse_method(line, part.trim())?);
                }
                cfg_fields.methods = Some(list);
            }
            "quantity" => {
                cfg_fields.quantity = match value.as_str() {
                    "state" => QuantityKind::State,
                    "malliavin_derivative" => QuantityKind::MalliavinDerivative,
                    "delta_euro" => QuantityKind::DeltaEuro,
                    "delta_barrier" => QuantityKind::DeltaBarrier,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown quantity '{other}'"),
                        })
                    }
                }
            }
            "deriv_time" => cfg_fields.deriv_time = Some(parse_f64(line, key, value)?),
            "deriv_mark" => cfg_fields.deriv_mark = parse_f64(line, key, value)?,
            "trace" => cfg_fields.trace = parse_bool(line, key, value)?,
            "fd_mode" => {
                cfg_fields.fd_mode = match value.as_str() {
                    "central" => FdMode::Central,
                    "forward" => FdMode::Forward,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown fd_mode '{other}' (central | forward)"),
                        })
                    }
                }
            }
            "uncompensated_euler" => {
                cfg_fields.uncompensated_euler = parse_bool(line, key, value)?
            }
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{other}'"),
                });
            }
        }
    }
    cfg_fields.model = model;
    Ok(cfg_fields)
}

/// Echoes a resolved config as config-syntax lines (no comment prefix);
/// parsing them back reproduces the run exactly.
pub fn echo_config(cfg: &RunConfig) -> Vec<String> {
    use crate::report::fmt_float as g;
    let mut lines = Vec::new();
    match &cfg.model {
        ModelSelector::Example1 => lines.push("model = example1".to_string()),
        ModelSelector::Example2 => lines.push("model = example2".to_string()),
        ModelSelector::Inline(m) => {
            lines.push("model = inline".to_string());
            lines.push(format!("drift = {}", m.drift.name()));
            lines.push(format!("a = {}", g(m.a)));
            lines.push(format!("c = {}", g(m.c)));
            lines.push(format!("sigma0 = {}", g(m.sigma0)));
            lines.push(format!("f_jump = {}", g(m.f_jump)));
            lines.push(format!("lambda0 = {}", g(m.lambda0)));
            lines.push(format!("nu = {}", g(m.nu)));
            lines.push(format!("mark_lo = {}", g(m.mark_lo)));
            lines.push(format!("mark_hi = {}", g(m.mark_hi)));
            lines.push(format!("x0 = {}", g(m.x0)));
            lines.push(format!("horizon = {}", g(m.horizon)));
        }
    }
    lines.push(format!("payoff = {}", cfg.payoff.name()));
    if let Some(k) = cfg.strike {
        lines.push(format!("strike = {}", g(k)));
    }
    if let Some(b) = cfg.barrier {
        lines.push(format!("barrier = {}", g(b)));
    }
    lines.push(format!("epsilon = {}", g(cfg.epsilon)));
    lines.push(format!("dt = {}", g(cfg.dt)));
    lines.push(format!("n_paths = {}", cfg.n_paths));
    lines.push(format!("seed = {}", cfg.seed));
    lines.push(format!("h_fd = {}", g(cfg.h_fd)));
    lines.push(format!(
        "dt_list = {}",
        cfg.dt_list.iter().map(|&d| g(d)).collect::<Vec<_>>().join(",")
    ));
    if let Some(methods) = &cfg.methods {
        lines.push(format!(
            "methods = {}",
            methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
        ));
    }
    lines.push(format!("quantity = {}", cfg.quantity.name()));
    if let Some(t) = cfg.deriv_time {
        lines.push(format!("deriv_time = {}", g(t)));
    }
    lines.push(format!("deriv_mark = {}", g(cfg.deriv_mark)));
    lines.push(format!("trace = {}", cfg.trace));
    lines.push(format!(
        "fd_mode = {}",
        match cfg.fd_mode {
            FdMode::Central => "central",
            FdMode::Forward => "forward",
        }
    ));
    lines.push(format!("uncompensated_euler = {}", cfg.uncompensated_euler));
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_applies_documented_defaults() {
        let cfg = parse_config("model = example2").unwrap();
        assert_eq!(cfg.model, ModelSelector::Example2);
        assert_eq!(cfg.dt, 0.000244140625); // 2^-12
        assert_eq!(cfg.n_paths, 1000);
        assert_eq!(cfg.h_fd, 0.001);
        assert_eq!(cfg.payoff, PayoffKind::EuropeanCall);
    }

    #[test]
    fn empty_config_requires_model() {
        match parse_config("") {
            Err(Error::ConfigGeneral(msg)) => assert!(msg.contains("model selector required")),
            other => panic!("expected model-required error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dt_reports_line() {
        let text = "model = example2\ndt = 0";
        match parse_config(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        match parse_config("model = example2\nwhatever = 3") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("unknown key"));
            }
            other => panic!("{other:?}"),
        }
        match parse_config("model = example2\nseed = 1\nseed = 2") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_numeral_reports_line() {
        match parse_config("model = example2\nstrike = half") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("malformed numeral"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inline_keys_require_inline_model() {
        assert!(parse_config("model = example2\na = 1.0").is_err());
        let cfg = parse_config(
            "model = inline\ndrift = mean_linear\na = -1\nc = 1\nf_jump = 1\nnu = 0.1",
        )
        .unwrap();
        let spec = cfg.build_spec().unwrap();
        assert_eq!(spec.jump_intensity, 0.1);
        assert_eq!((spec.drift_b)(0.0, 2.0), -2.0);
    }

    #[test]
    fn resolve_fills_at_the_mean_strike_and_barrier() {
        let cfg = parse_config("model = example2\ndt = 0.0009765625").unwrap(); // 2^-10
        let resolved = cfg.resolve().unwrap();
        // f(1) = 0.5 at x0 = 1
        assert!((resolved.payoff.strike() - 0.5).abs() < 1e-9);
        assert_eq!(resolved.cfg.barrier, Some(1.5));
        assert_eq!(resolved.methods.len(), 3);
    }

    #[test]
    fn echo_round_trips() {
        let text = "model = inline\ndrift = mean_affine_ratio\na = 1\nnu = 0.25\n\
                    payoff = up_and_out_call\nstrike = 0.75\nbarrier = 2.5\n\
                    dt = 0.0009765625\nn_paths = 64\nseed = 9\ntrace = true";
        let cfg = parse_config(text).unwrap();
        let resolved = cfg.resolve().unwrap();
        let echoed = echo_config(&resolved.cfg).join("\n");
        let reparsed = parse_config(&echoed).unwrap();
        assert_eq!(reparsed.resolve().unwrap().cfg, resolved.cfg);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = parse_config("# a comment\n\nmodel = example1  # trailing\n").unwrap();
        assert_eq!(cfg.model, ModelSelector::Example1);
    }
}
