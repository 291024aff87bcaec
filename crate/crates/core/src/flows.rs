//! Time integrators for the nonlocal Q/R flows and the path continuation in
//! dimension three, with invariant monitors.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::curvature::{
    paneitz_operator, paneitz_preimage_positive, r_eps_field, Convention, ConformalMetric,
    CurvatureError, EpsilonParams,
};
use crate::functionals::{dim4_functional, paneitz_energy, quotient_i_eps, total_scalar_eps, FunctionalError};
use crate::geometry::{integrate_values, Background, Field};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invariant violated at t = {t}: {reason}")]
    InvariantViolated { t: f64, reason: String },
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

/// Scalar diagnostics recorded after every accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monitors {
    /// `F[u]` for the four-dimensional flow, `I_eps` for the subcritical one.
    pub energy: f64,
    pub total_q: f64,
    /// `int R dv_g` in dimension four, `int R^eps u^{-s} dv_g` otherwise.
    pub total_scalar: f64,
    pub min_r: f64,
    pub min_u: f64,
    /// `int u_t P0 u_t dv0`.
    pub ut_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub metric: ConformalMetric,
    pub r: f64,
    pub monitors: Monitors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    BudgetExceeded,
    InvariantViolated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub r: f64,
    pub monitors: Monitors,
    /// Energy and total-scalar monotonicity held on the step leading here.
    pub monotone: bool,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub samples: Vec<TraceSample>,
    pub termination: Termination,
    pub violation: Option<String>,
    pub final_state: FlowState,
    /// RMS of the Euler-Lagrange residual of the final state.
    pub residual: f64,
}

impl FlowTrace {
    pub fn steps(&self) -> usize {
        self.samples.last().map_or(0, |s| s.step)
    }

    pub fn all_monotone(&self) -> bool {
        self.samples.iter().all(|s| s.monotone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub tol: f64,
    pub max_steps: usize,
    /// Consecutive steps below `tol` required for convergence.
    pub consecutive: usize,
    pub max_halvings: usize,
    /// Record one sample every this many steps (the last step is always kept).
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-2,
            tol: 1e-12,
            max_steps: 100_000,
            consecutive: 10,
            max_halvings: 8,
            record_every: 1,
        }
    }
}

const MONOTONE_TOL: f64 = 1e-10;

fn rms(bg: &Background, values: &[f64]) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    (integrate_values(bg, &sq) / bg.volume()).sqrt()
}

fn mean(f: &Field) -> f64 {
    integrate_values(f.background(), f.values()) / f.background().volume()
}

fn violation(t: f64, reason: impl Into<String>) -> FlowError {
    FlowError::InvariantViolated {
        t,
        reason: reason.into(),
    }
}

fn rk4(u: &Field, dt: f64, mut rhs: impl FnMut(&Field) -> Result<Field, FlowError>) -> Result<Field, FlowError> {
    let k1 = rhs(u)?;
    let k2 = rhs(&u.axpby(1.0, &k1, dt / 2.0))?;
    let k3 = rhs(&u.axpby(1.0, &k2, dt / 2.0))?;
    let k4 = rhs(&u.axpby(1.0, &k3, dt))?;
    let incr = k1.axpby(1.0, &k2, 2.0).axpby(1.0, &k3, 2.0).axpby(1.0, &k4, 1.0);
    Ok(u.axpby(1.0, &incr, dt / 6.0))
}

// ---------------------------------------------------------------------------
// dimension four

/// `r(u) = int Q0 dv0 / int |R| dv_g` and the right-hand side `-u + P0^{-1}(r|R|e^{4u} - Q0)`.
fn flow4_rhs(u: &Field) -> Result<(Field, f64), FlowError> {
    let bg = u.background();
    let m = ConformalMetric::new(u.clone(), Convention::Exponential4)?;
    let q0 = bg.q_curvature();
    let weighted: Vec<f64> = m
        .scalar_curvature()
        .values()
        .iter()
        .zip(u.values())
        .map(|(r, v)| r.abs() * (4.0 * v).exp())
        .collect();
    let r = q0 * bg.volume() / integrate_values(bg, &weighted);
    let mut forcing = Field::new(bg, weighted.iter().map(|w| r * w - q0).collect());
    let shift = mean(&forcing);
    forcing = forcing.map(|v| v - shift);
    let inv = paneitz_operator(bg).apply_inverse(&forcing);
    Ok((u.axpby(-1.0, &inv, 1.0), r))
}

fn flow4_rate(u: &Field) -> Result<Field, FlowError> {
    flow4_rhs(u).map(|(f, _)| f)
}

fn check_flow4(bg: &Background) -> Result<(), FlowError> {
    if bg.dim() != 4 {
        return Err(FlowError::Precondition(format!("flow needs n = 4, got {}", bg.dim())));
    }
    let q0 = bg.q_curvature();
    if q0 < 0.0 || bg.scalar_curvature() <= 0.0 {
        return Err(FlowError::Precondition("background needs Q0 >= 0 and R0 > 0".into()));
    }
    let total = q0 * bg.volume();
    let bound = 16.0 * PI * PI;
    if !(total > 0.0 && total < bound * (1.0 - 1e-12)) {
        return Err(FlowError::Precondition(format!(
            "total Q-curvature {total} must lie in (0, 16 pi^2)"
        )));
    }
    Ok(())
}

fn zero_mean(u: &Field) -> Field {
    let mut c = u.coeffs();
    c[0] = 0.0;
    Field::from_coeffs(u.background(), c)
}

/// Builds a monitored state for the four-dimensional flow.
pub fn flow4_state(u: Field, t: f64) -> Result<FlowState, FlowError> {
    let bg = Arc::clone(u.background());
    check_flow4(&bg)?;
    let m = mean(&u);
    if m.abs() > 1e-9 {
        return Err(FlowError::Precondition(format!("flow needs mean-zero u, mean is {m:e}")));
    }
    let (rate, r) = flow4_rhs(&u)?;
    let metric = ConformalMetric::new(u, Convention::Exponential4)?;
    let min_r = metric.scalar_curvature().min();
    if min_r <= 0.0 {
        return Err(violation(t, format!("scalar curvature reaches {min_r:e}")));
    }
    let monitors = Monitors {
        energy: dim4_functional(&metric)?,
        total_q: metric.integrate_g(metric.q_curvature().values()),
        total_scalar: metric.integrate_g(metric.scalar_curvature().values()),
        min_r,
        min_u: metric.factor().map(f64::exp).min(),
        ut_norm: paneitz_operator(&bg).quadratic_form(&rate),
    };
    Ok(FlowState { t, metric, r, monitors })
}

/// One RK4 step of the four-dimensional flow.
pub fn step_flow4(s: &FlowState, dt: f64) -> Result<FlowState, FlowError> {
    let u = s.metric.factor();
    let next = zero_mean(&rk4(u, dt, flow4_rate)?);
    let out = flow4_state(next, s.t + dt)?;
    let f0 = s.monitors.energy;
    if out.monitors.energy > f0 + MONOTONE_TOL * f0.abs().max(1.0) {
        return Err(violation(
            out.t,
            format!("F increased from {f0} to {}", out.monitors.energy),
        ));
    }
    Ok(out)
}

/// RMS of `P0 u + Q0 - lambda R e^{4u}` with `lambda = int Q0 dv0 / int R dv_g`.
pub fn flow4_residual(m: &ConformalMetric) -> f64 {
    let bg = m.background();
    let u = m.factor();
    let pu = paneitz_operator(bg).apply(u);
    let lambda = bg.q_curvature() * bg.volume() / m.integrate_g(m.scalar_curvature().values());
    let res: Vec<f64> = (0..u.values().len())
        .map(|i| {
            pu.values()[i] + bg.q_curvature()
                - lambda * m.scalar_curvature().values()[i] * (4.0 * u.values()[i]).exp()
        })
        .collect();
    rms(bg, &res)
}

/// Integrates the four-dimensional flow until `u_t` stalls or the budget runs out.
pub fn run_flow4(u0: Field, cfg: &FlowConfig) -> Result<FlowTrace, FlowError> {
    let state = flow4_state(u0, 0.0)?;
    run_generic(state, cfg, false, step_flow4, |s| flow4_residual(&s.metric))
}

fn run_generic(
    mut state: FlowState,
    cfg: &FlowConfig,
    scalar_monotone: bool,
    step: impl Fn(&FlowState, f64) -> Result<FlowState, FlowError>,
    residual: impl Fn(&FlowState) -> f64,
) -> Result<FlowTrace, FlowError> {
    if !(cfg.dt > 0.0) {
        return Err(FlowError::Precondition(format!("dt must be positive, got {}", cfg.dt)));
    }
    let mut samples = vec![TraceSample {
        step: 0,
        t: 0.0,
        dt: cfg.dt,
        r: state.r,
        monitors: state.monitors,
        monotone: true,
    }];
    let every = cfg.record_every.max(1);
    let mut dt = cfg.dt;
    let mut quiet = usize::from(state.monitors.ut_norm < cfg.tol);
    let mut termination = Termination::BudgetExceeded;
    let mut reason = None;
    if quiet > 0 {
        termination = Termination::Converged;
    }
    let mut steps = 0;
    while termination != Termination::Converged && steps < cfg.max_steps {
        let mut attempt = 0;
        let next = loop {
            // A proposed state whose curvature cannot be evaluated is a breakdown of the flow.
            let proposed = step(&state, dt).map_err(|e| match e {
                FlowError::Curvature(_) | FlowError::Functional(_) => violation(state.t + dt, e.to_string()),
                other => other,
            });
            match proposed {
                Ok(s) => break Ok(s),
                Err(FlowError::InvariantViolated { t, reason }) if attempt < cfg.max_halvings => {
                    log::debug!("halving dt at t = {t}: {reason}");
                    attempt += 1;
                    dt /= 2.0;
                }
                Err(e) => break Err(e),
            }
        };
        let next = match next {
            Ok(s) => s,
            Err(FlowError::InvariantViolated { t, reason: why }) => {
                reason = Some(format!("t = {t}: {why}"));
                termination = Termination::InvariantViolated;
                break;
            }
            Err(e) => return Err(e),
        };
        steps += 1;
        let monotone = next.monitors.energy
            <= state.monitors.energy + MONOTONE_TOL * state.monitors.energy.abs().max(1.0)
            && (!scalar_monotone
                || next.monitors.total_scalar
                    >= state.monitors.total_scalar - MONOTONE_TOL * state.monitors.total_scalar.abs().max(1.0));
        quiet = if next.monitors.ut_norm < cfg.tol { quiet + 1 } else { 0 };
        if quiet >= cfg.consecutive.max(1) {
            termination = Termination::Converged;
        }
        state = next;
        if steps % every == 0 || termination == Termination::Converged || steps == cfg.max_steps {
            samples.push(TraceSample {
                step: steps,
                t: state.t,
                dt,
                r: state.r,
                monitors: state.monitors,
                monotone,
            });
        } else if !monotone {
            if let Some(last) = samples.last_mut() {
                last.monotone = false;
            }
        }
    }
    if termination == Termination::InvariantViolated && samples.last().map(|s| s.step) != Some(steps) {
        samples.push(TraceSample {
            step: steps,
            t: state.t,
            dt,
            r: state.r,
            monitors: state.monitors,
            monotone: true,
        });
    }
    let res = residual(&state);
    Ok(FlowTrace {
        samples,
        termination,
        violation: reason,
        final_state: state,
        residual: res,
    })
}

// ---------------------------------------------------------------------------
// subcritical flow, n >= 5

struct SubcriticalRate {
    rate: Field,
    r: f64,
}

fn subcritical_forcing(m: &ConformalMetric, p: &EpsilonParams) -> Result<(Field, f64), FlowError> {
    let n = m.dim() as f64;
    let s = p.weight_exponent();
    let u = m.factor();
    let re = r_eps_field(m, p)?;
    let ex = (n + 4.0) / (n - 4.0) - s;
    let forcing = u.zip_map(&re, |v, r| v.powf(ex) * r);
    let denom = total_scalar_eps(m, p);
    if !(denom > 0.0) {
        return Err(violation(0.0, format!("weighted total scalar {denom:e} is not positive")));
    }
    let total_q = 2.0 / (n - 4.0) * paneitz_energy(m);
    Ok((forcing, total_q / denom))
}

fn subcritical_rhs(u: &Field, p: &EpsilonParams) -> Result<SubcriticalRate, FlowError> {
    let n = u.background().dim() as f64;
    let m = ConformalMetric::new(u.clone(), Convention::PowerN5plus)?;
    let (forcing, r) = subcritical_forcing(&m, p)?;
    let pre = paneitz_preimage_positive(&forcing)?;
    let rate = u.axpby(-1.0, &pre, (n - 4.0) / 2.0 * r).scale((n - 4.0) / 4.0);
    Ok(SubcriticalRate { rate, r })
}

fn check_subcritical(bg: &Background, p: &EpsilonParams) -> Result<(), FlowError> {
    if bg.dim() < 5 || p.n != bg.dim() {
        return Err(FlowError::Precondition(format!(
            "subcritical flow needs n >= 5 matching the parameters, got n = {} and params for {}",
            bg.dim(),
            p.n
        )));
    }
    if bg.q_curvature() < 0.0 || bg.scalar_curvature() <= 0.0 {
        return Err(FlowError::Precondition("background needs Q0 >= 0 and R0 > 0".into()));
    }
    let max = 2.0 / (bg.dim() as f64 - 2.0);
    if !(p.eps >= 0.0 && p.eps < max) {
        return Err(FlowError::Precondition(format!("eps = {} outside [0, {max})", p.eps)));
    }
    Ok(())
}

/// Builds a monitored state for the subcritical flow.
pub fn subcritical_state(u: Field, p: &EpsilonParams, t: f64) -> Result<FlowState, FlowError> {
    let bg = Arc::clone(u.background());
    check_subcritical(&bg, p)?;
    let min_u = u.min();
    if min_u <= 0.0 {
        return Err(violation(t, format!("u reaches {min_u:e}")));
    }
    let metric = ConformalMetric::new(u.clone(), Convention::PowerN5plus)?;
    let min_r = metric.scalar_curvature().min();
    if min_r <= 0.0 {
        return Err(violation(t, format!("scalar curvature reaches {min_r:e}")));
    }
    let SubcriticalRate { rate, r } = subcritical_rhs(&u, p)?;
    let n = bg.dim() as f64;
    let monitors = Monitors {
        energy: quotient_i_eps(&metric, p)?,
        total_q: 2.0 / (n - 4.0) * paneitz_energy(&metric),
        total_scalar: total_scalar_eps(&metric, p),
        min_r,
        min_u,
        ut_norm: paneitz_operator(&bg).quadratic_form(&rate),
    };
    Ok(FlowState { t, metric, r, monitors })
}

/// One RK4 step of the subcritical flow.
pub fn step_subcritical(s: &FlowState, p: &EpsilonParams, dt: f64) -> Result<FlowState, FlowError> {
    let u = s.metric.factor();
    let next = rk4(u, dt, |v| subcritical_rhs(v, p).map(|o| o.rate))?;
    let out = subcritical_state(next, p, s.t + dt)?;
    let e0 = s.monitors.energy;
    if out.monitors.energy > e0 + MONOTONE_TOL * e0.abs().max(1.0) {
        return Err(violation(out.t, format!("I_eps increased from {e0} to {}", out.monitors.energy)));
    }
    let j0 = s.monitors.total_scalar;
    if out.monitors.total_scalar < j0 - MONOTONE_TOL * j0.abs().max(1.0) {
        return Err(violation(
            out.t,
            format!("weighted total scalar decreased from {j0} to {}", out.monitors.total_scalar),
        ));
    }
    let q0 = s.monitors.total_q;
    if (out.monitors.total_q - q0).abs() > MONOTONE_TOL * q0.abs().max(1.0) {
        return Err(violation(
            out.t,
            format!("total Q drifted from {q0} to {}", out.monitors.total_q),
        ));
    }
    Ok(out)
}

/// RMS of `P0 u - ((n-4)/2) r u^{(n+4)/(n-4)-s} R^eps`.
pub fn subcritical_residual(m: &ConformalMetric, p: &EpsilonParams) -> Result<f64, FlowError> {
    let n = m.dim() as f64;
    let (forcing, r) = subcritical_forcing(m, p)?;
    let pu = paneitz_operator(m.background()).apply(m.factor());
    let res = pu.axpby(1.0, &forcing, -(n - 4.0) / 2.0 * r);
    Ok(rms(m.background(), res.values()))
}

/// Integrates the subcritical flow, asserting `u >= e^{-(n-4)t/4} u0` at every step.
pub fn run_subcritical(u0: Field, p: &EpsilonParams, cfg: &FlowConfig) -> Result<FlowTrace, FlowError> {
    let state = subcritical_state(u0.clone(), p, 0.0)?;
    let n = u0.background().dim() as f64;
    let floor = u0.clone();
    let step = |s: &FlowState, dt: f64| -> Result<FlowState, FlowError> {
        let next = step_subcritical(s, p, dt)?;
        let decay = (-(n - 4.0) * next.t / 4.0).exp();
        let worst = next
            .metric
            .factor()
            .values()
            .iter()
            .zip(floor.values())
            .map(|(u, f)| u - decay * f)
            .fold(f64::INFINITY, f64::min);
        if worst < -1e-9 {
            return Err(violation(next.t, format!("lower bound e^(-(n-4)t/4) u0 broken by {worst:e}")));
        }
        Ok(next)
    };
    run_generic(state, cfg, true, step, |s| subcritical_residual(&s.metric, p).unwrap_or(f64::NAN))
}

/// Closed-form `I_eps` of a constant factor.
pub fn constant_quotient_eps(bg: &Background, p: &EpsilonParams) -> f64 {
    let n = bg.dim() as f64;
    let kappa = (n - 4.0) / 2.0 * bg.q_curvature();
    let v = bg.volume();
    let q = (n - 4.0) / (n - 2.0) / (1.0 - p.eps);
    kappa * v / (bg.scalar_curvature() * v).powf(q)
}

/// Closed-form multiplier `r` of the constant factor `c`.
pub fn constant_multiplier_eps(bg: &Background, p: &EpsilonParams, c: f64) -> f64 {
    let n = bg.dim() as f64;
    let kappa = (n - 4.0) / 2.0 * bg.q_curvature();
    let e = 2.0 * (n - 2.0) / (n - 4.0) - p.weight_exponent();
    2.0 / (n - 4.0) * kappa * c * c / ((1.0 - p.eps) * bg.scalar_curvature() * c.powf(e))
}

// ---------------------------------------------------------------------------
// continuation in eps

#[derive(Debug, Clone)]
pub struct EpsilonStage {
    pub eps: f64,
    pub limit: Field,
    pub r_bar: f64,
    pub quotient: f64,
    pub residual: f64,
    pub termination: Termination,
    /// Sup-norm ratio or spectral tail flags a blow-up.
    pub unbounded: bool,
    pub failure: Option<String>,
}

/// Ratio and tail thresholds above which a stage limit is flagged unbounded.
pub const BLOWUP_RATIO: f64 = 1e6;
pub const BLOWUP_TAIL: f64 = 1e-2;

fn looks_unbounded(u: &Field) -> bool {
    let lo = u.min();
    !(lo > 0.0) || u.max() / lo > BLOWUP_RATIO || u.tail_energy_fraction() > BLOWUP_TAIL
}

/// Runs the subcritical flow for each `eps` in a strictly decreasing schedule, warm-starting.
pub fn epsilon_continuation(u0: Field, schedule: &[f64], cfg: &FlowConfig) -> Result<Vec<EpsilonStage>, FlowError> {
    let n = u0.background().dim();
    let max = 2.0 / (n as f64 - 2.0);
    for w in schedule.windows(2) {
        if !(w[1] < w[0]) {
            return Err(FlowError::Precondition("schedule must be strictly decreasing".into()));
        }
    }
    if let Some(bad) = schedule.iter().find(|e| !(**e > 0.0 && **e < max)) {
        return Err(FlowError::Precondition(format!("eps = {bad} outside (0, {max})")));
    }
    let mut out = Vec::with_capacity(schedule.len());
    let mut start = u0;
    for &eps in schedule {
        let p = EpsilonParams::new(n, eps)?;
        match run_subcritical(start.clone(), &p, cfg) {
            Ok(trace) => {
                let limit = trace.final_state.metric.factor().clone();
                let unbounded = looks_unbounded(&limit);
                let stop = trace.termination != Termination::Converged || unbounded;
                out.push(EpsilonStage {
                    eps,
                    r_bar: trace.final_state.r,
                    quotient: trace.final_state.monitors.energy,
                    residual: trace.residual,
                    termination: trace.termination,
                    unbounded,
                    failure: trace.violation.clone(),
                    limit: limit.clone(),
                });
                if stop {
                    break;
                }
                start = limit;
            }
            Err(e) => {
                out.push(EpsilonStage {
                    eps,
                    limit: start.clone(),
                    r_bar: f64::NAN,
                    quotient: f64::NAN,
                    residual: f64::NAN,
                    termination: Termination::InvariantViolated,
                    unbounded: false,
                    failure: Some(e.to_string()),
                });
                break;
            }
        }
    }
    Ok(out)
}

/// Linear Richardson extrapolation to `eps = 0` from the last two stages.
pub fn richardson_to_zero(stages: &[EpsilonStage]) -> Option<f64> {
    let k = stages.len();
    if k < 2 {
        return None;
    }
    let (a, b) = (&stages[k - 2], &stages[k - 1]);
    Some((a.eps * b.quotient - b.eps * a.quotient) / (a.eps - b.eps))
}

// ---------------------------------------------------------------------------
// path continuation in dimension three

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-10,
            max_iterations: 50,
            max_halvings: 30,
            min_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub t: f64,
    pub u: Field,
    pub residual: f64,
    pub iterations: usize,
    pub min_u: f64,
    pub max_u: f64,
    pub min_r: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationPath {
    pub points: Vec<PathPoint>,
    /// Set when the t-step fell below the minimum; holds the last solved t.
    pub stalled_at: Option<f64>,
}

/// Scalar curvature of `g = u^{-4} g0` in dimension three.
pub fn path_scalar_curvature(u: &Field) -> Field {
    let bg = u.background();
    let lap = crate::geometry::laplacian_g0(u);
    let du = u.derivative();
    let gf = bg.metric_factor();
    let r0 = bg.scalar_curvature();
    Field::new(
        bg,
        (0..gf.len())
            .map(|i| {
                let v = u.values()[i];
                r0 * v.powi(4) + 8.0 * v.powi(3) * lap.values()[i] - 16.0 * v * v * gf[i] * du[i] * du[i]
            })
            .collect(),
    )
}

/// Q-curvature of `g = u^{-4} g0` in dimension three, `-2 u^7 P0 u`.
pub fn path_q_curvature(u: &Field) -> Field {
    let pu = paneitz_operator(u.background()).apply(u);
    u.zip_map(&pu, |v, p| -2.0 * v.powi(7) * p)
}

/// Nodal residual `P0 u + (1-t) u^{-3} + t u^{-7} R_u / 2`.
fn path_residual(u: &Field, t: f64) -> Field {
    let pu = paneitz_operator(u.background()).apply(u);
    let r = path_scalar_curvature(u);
    let vals = (0..pu.values().len())
        .map(|i| {
            let v = u.values()[i];
            pu.values()[i] + (1.0 - t) * v.powi(-3) + 0.5 * t * v.powi(-7) * r.values()[i]
        })
        .collect();
    Field::new(u.background(), vals)
}

fn residual_coeffs(u: &Field, t: f64) -> DVector<f64> {
    let bg = u.background();
    DVector::from_vec(bg.project(path_residual(u, t).values()))
}

fn path_jacobian(u: &Field, t: f64) -> DMatrix<f64> {
    let bg = u.background();
    let size = bg.degree() + 1;
    let lap = crate::geometry::laplacian_g0(u);
    let du = u.derivative();
    let gf = bg.metric_factor();
    let r0 = bg.scalar_curvature();
    let count = gf.len();
    let mut zeroth = vec![0.0; count];
    let mut second = vec![0.0; count];
    let mut first = vec![0.0; count];
    for i in 0..count {
        let v = u.values()[i];
        let grad = gf[i] * du[i] * du[i];
        zeroth[i] = -3.0 * (1.0 - t) * v.powi(-4)
            + 0.5 * t * (-32.0 * v.powi(-5) * lap.values()[i] + 80.0 * v.powi(-6) * grad - 3.0 * r0 * v.powi(-4));
        second[i] = 4.0 * t * v.powi(-4);
        first[i] = -16.0 * t * v.powi(-5) * gf[i] * du[i];
    }
    let mults = crate::curvature::paneitz_multipliers(bg);
    let eig = bg.eigenvalues();
    let mut jac = DMatrix::zeros(size, size);
    for j in 0..size {
        let mut e = vec![0.0; size];
        e[j] = 1.0;
        let phi = bg.synthesize(&e);
        let dphi = bg.synthesize_derivative(&e);
        let col: Vec<f64> = (0..count)
            .map(|i| zeroth[i] * phi[i] - second[i] * eig[j] * phi[i] + first[i] * dphi[i])
            .collect();
        let proj = bg.project(&col);
        for (k, v) in proj.iter().enumerate() {
            jac[(k, j)] = *v;
        }
        jac[(j, j)] += mults[j];
    }
    jac
}

/// Damped Gauss-Newton solve at fixed `t`; returns the solution and iteration count.
fn newton_solve(u0: &Field, t: f64, cfg: &NewtonConfig) -> Option<(Field, f64, usize)> {
    let bg = Arc::clone(u0.background());
    let mut coeffs = DVector::from_vec(u0.coeffs());
    let field_of = |c: &DVector<f64>| Field::from_coeffs(&bg, c.as_slice().to_vec());
    let mut u = field_of(&coeffs);
    let mut g = residual_coeffs(&u, t);
    let mut norm = g.norm();
    for iter in 0..=cfg.max_iterations {
        if !norm.is_finite() {
            return None;
        }
        if norm <= cfg.tol {
            return Some((u, norm, iter));
        }
        if iter == cfg.max_iterations {
            break;
        }
        let jac = path_jacobian(&u, t);
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let delta = svd.solve(&(-&g), 1e-10 * smax).ok()?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial_c = &coeffs + &delta * step;
            let trial = field_of(&trial_c);
            if trial.min() > 0.0 {
                let tg = residual_coeffs(&trial, t);
                let tn = tg.norm();
                if tn.is_finite() && tn * tn <= (1.0 - 1e-4 * step) * norm * norm {
                    coeffs = trial_c;
                    u = trial;
                    g = tg;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    None
}

fn check_path(bg: &Background) -> Result<(), FlowError> {
    if bg.dim() != 3 {
        return Err(FlowError::Precondition(format!("path equation needs n = 3, got {}", bg.dim())));
    }
    if bg.q_curvature() < 0.0 || bg.scalar_curvature() <= 0.0 {
        return Err(FlowError::Precondition("background needs Q0 >= 0 and R0 > 0".into()));
    }
    Ok(())
}

/// Follows the path equation over an increasing grid in `[0, 1]`, bisecting failed steps.
pub fn newton_continuation_3d(
    bg: &Arc<Background>,
    t_grid: &[f64],
    initial: Option<Field>,
    cfg: &NewtonConfig,
) -> Result<ContinuationPath, FlowError> {
    check_path(bg)?;
    if t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(FlowError::Precondition("t grid must lie in [0, 1]".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FlowError::Precondition("t grid must be increasing".into()));
    }
    let mut u = initial.unwrap_or_else(|| Field::constant(bg, 1.0));
    if u.min() <= 0.0 {
        return Err(FlowError::Precondition("initial guess must be positive".into()));
    }
    let mut points = Vec::with_capacity(t_grid.len());
    let mut last_t: Option<f64> = None;
    for &target in t_grid {
        let mut t_now = last_t.unwrap_or(target);
        let mut trial = target;
        loop {
            match newton_solve(&u, trial, cfg) {
                Some((sol, residual, iterations)) => {
                    u = sol;
                    t_now = trial;
                    if trial == target {
                        let r = path_scalar_curvature(&u);
                        points.push(PathPoint {
                            t: target,
                            residual,
                            iterations,
                            min_u: u.min(),
                            max_u: u.max(),
                            min_r: r.min(),
                            u: u.clone(),
                        });
                        break;
                    }
                    trial = target;
                }
                None => {
                    let step = trial - t_now;
                    if last_t.is_none() || step / 2.0 < cfg.min_step {
                        return Ok(ContinuationPath {
                            points,
                            stalled_at: Some(last_t.map_or(f64::NAN, |_| t_now)),
                        });
                    }
                    trial = t_now + step / 2.0;
                }
            }
        }
        last_t = Some(target);
        if let Some(p) = points.last() {
            if p.min_r <= 0.0 {
                return Err(violation(target, format!("scalar curvature reaches {:e}", p.min_r)));
            }
        }
    }
    Ok(ContinuationPath {
        points,
        stalled_at: None,
    })
}

/// Constant solution `c = (16 (1 + 2t) / 15)^{1/4}` of the path equation on the round `S^3`.
pub fn sphere_path_constant(t: f64) -> f64 {
    (16.0 * (1.0 + 2.0 * t) / 15.0).powf(0.25)
}
