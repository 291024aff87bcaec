//! Named experiment recipes producing one table each.

use std::sync::Arc;

use qrlab_core::curvature::{ConformalMetric, Convention, EpsilonParams};
use qrlab_core::flows::{
    constant_multiplier_eps, constant_quotient_eps, epsilon_continuation, newton_continuation_3d,
    path_q_curvature, path_scalar_curvature, richardson_to_zero, run_flow4, run_subcritical,
    sphere_path_constant, flow4_state, subcritical_state, FlowConfig, FlowError, FlowTrace, NewtonConfig, Termination,
};
use qrlab_core::functionals::{
    paneitz_energy, quotient_i, sigma2_sigma1_margin, sobolev_deficit, sobolev_sharp_constant,
    y42_vs_y_gap, yamabe_quotient, duality_product, ConstantsTable,
};
use qrlab_core::geometry::{build_background, integrate, Background, BackgroundKind, Field};
use qrlab_core::rigidity::{
    coefficient_certificate, conformal_laplacian, convexity_check, default_alpha_grid,
    obata_identity_residual, optimizer_family,
};
use qrlab_core::sampling::{indexed_rng, random_log_normal_factor, sample_admissible, MAX_ATTEMPTS};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::config::{Experiment, Resolved};
use crate::output::{json_f64, Cell, Table};
use crate::RunError;

/// Optimizer grid used by the Sobolev scan.
pub const OPTIMIZER_AMPLITUDES: [f64; 3] = [0.5, 1.0, 2.0];
pub const OPTIMIZER_SHIFTS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];

/// Result of one experiment before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: Table,
    pub summary: Map<String, Value>,
    /// Human-readable report written next to the payload.
    pub report: Option<String>,
    /// Set when a flow invariant broke; the run still emits its trace.
    pub violation: Option<String>,
}

impl Outcome {
    fn new(table: Table) -> Outcome {
        Outcome {
            table,
            summary: Map::new(),
            report: None,
            violation: None,
        }
    }

    fn note(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    fn note_f64(&mut self, key: &str, v: f64) {
        self.summary.insert(key.to_string(), json_f64(v));
    }
}

pub fn run(r: &Resolved) -> Result<Outcome, RunError> {
    match r.experiment {
        Experiment::Constants => constants(r),
        Experiment::SobolevScan => sobolev_scan(r),
        Experiment::ObataCheck => obata_check(r),
        Experiment::Flow4 => flow4(r),
        Experiment::Subcritical => subcritical(r),
        Experiment::EpsContinuation => eps_continuation(r),
        Experiment::Continue3d => continue3d(r),
        Experiment::CoeffCertificate => coeff_certificate(r),
        Experiment::DualityScan => duality_scan(r),
        Experiment::ConvexityScan => convexity_scan(r),
    }
}

fn background(r: &Resolved, n: usize) -> Result<Arc<Background>, RunError> {
    Ok(build_background(n, r.kind.background_kind(), r.nodes, r.degree)?)
}

fn sphere(r: &Resolved, n: usize) -> Result<Arc<Background>, RunError> {
    Ok(build_background(n, BackgroundKind::RoundSphere, r.nodes, r.degree)?)
}

/// Evaluates `f` for every index in parallel; results and the reported error follow index order.
fn par_indexed<T: Send>(count: usize, f: impl Fn(usize) -> Result<T, RunError> + Sync + Send) -> Result<Vec<T>, RunError> {
    let results: Vec<Result<T, RunError>> = (0..count).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn spread(f: &Field) -> f64 {
    (f.max() - f.min()) / f.max().abs().max(f64::MIN_POSITIVE)
}

fn mean_value(f: &Field) -> f64 {
    integrate(f) / f.background().volume()
}

fn no_sample(index: usize) -> RunError {
    RunError::Precondition(format!("no admissible sample for index {index} after {MAX_ATTEMPTS} draws"))
}

// ---------------------------------------------------------------------------

fn constants(r: &Resolved) -> Result<Outcome, RunError> {
    let mut table = Table::new(&[
        "n",
        "omega_n",
        "R0",
        "Q0",
        "Q0_over_R0",
        "Y_sphere",
        "Y_sigma2",
        "Y_sigma2_over_sigma1",
        "Y42_sphere",
        "c_n",
        "c_n_Y_pow",
        "identity_rel_err",
        "R0_grid",
        "Q0_grid",
        "Y_sphere_grid",
        "Y42_sphere_grid",
    ]);
    for n in r.n..=r.n_max {
        let t = ConstantsTable::new(n)?;
        let bg = sphere(r, n)?;
        let one = Field::constant(&bg, 1.0);
        let m = ConformalMetric::new(one.clone(), Convention::PowerN5plus)?;
        let nf = n as f64;
        let c_pow = t.c_y42_vs_y * t.y_sphere.powf(nf / (nf - 2.0));
        table.push(vec![
            n.into(),
            t.omega_n.into(),
            t.r0.into(),
            t.q0.into(),
            t.q_over_r.into(),
            t.y_sphere.into(),
            t.y_sigma2.into(),
            t.y_sigma2_over_sigma1.into(),
            t.y42.into(),
            t.c_y42_vs_y.into(),
            c_pow.into(),
            ((c_pow - t.y42) / t.y42).abs().into(),
            mean_value(m.scalar_curvature()).into(),
            mean_value(m.q_curvature()).into(),
            yamabe_quotient(&one).into(),
            quotient_i(&m)?.into(),
        ]);
    }
    let mut out = Outcome::new(table);
    out.note_f64("max_identity_rel_err", max_of(&out.table.column_f64("identity_rel_err")));
    Ok(out)
}

struct SobolevRow {
    energy: f64,
    deficit: f64,
    quotient: f64,
    gap: f64,
    sigma1: f64,
    sigma2: f64,
    margin: f64,
}

fn sobolev_row(m: &ConformalMetric) -> Result<SobolevRow, RunError> {
    let (s1, s2, _) = m.sigma_curvatures();
    Ok(SobolevRow {
        energy: paneitz_energy(m),
        deficit: sobolev_deficit(m, 2, 1)?,
        quotient: quotient_i(m)?,
        gap: y42_vs_y_gap(m)?,
        sigma1: m.integrate_g(s1.values()),
        sigma2: m.integrate_g(s2.values()),
        margin: sigma2_sigma1_margin(m)?,
    })
}

fn sobolev_scan(r: &Resolved) -> Result<Outcome, RunError> {
    let n = r.n;
    let table0 = ConstantsTable::new(n)?;
    let bg = background(r, n)?;
    let mut table = Table::new(&[
        "source",
        "index",
        "a",
        "b",
        "energy",
        "deficit",
        "quotient_i",
        "y42_gap",
        "sigma1_total",
        "sigma2_total",
        "sigma_margin",
    ]);
    let push = |table: &mut Table, source: &str, index: usize, a: f64, b: f64, s: &SobolevRow| {
        table.push(vec![
            source.into(),
            index.into(),
            a.into(),
            b.into(),
            s.energy.into(),
            s.deficit.into(),
            s.quotient.into(),
            s.gap.into(),
            s.sigma1.into(),
            s.sigma2.into(),
            s.margin.into(),
        ]);
    };

    let pairs: Vec<(f64, f64)> = OPTIMIZER_AMPLITUDES
        .iter()
        .flat_map(|&a| OPTIMIZER_SHIFTS.iter().map(move |&b| (a, b)))
        .collect();
    let optimizers = par_indexed(pairs.len(), |k| {
        let (a, b) = pairs[k];
        sobolev_row(&optimizer_family(&bg, a, b)?)
    })?;
    let samples = par_indexed(r.samples, |k| {
        let mut rng = indexed_rng(r.seed, k as u64);
        let m = sample_admissible(&bg, Convention::PowerN5plus, &mut rng, |m| sobolev_row(m).is_ok())
            .ok_or_else(|| no_sample(k))?;
        sobolev_row(&m)
    })?;

    for (k, (s, &(a, b))) in optimizers.iter().zip(&pairs).enumerate() {
        push(&mut table, "optimizer", k, a, b, s);
    }
    for (k, s) in samples.iter().enumerate() {
        push(&mut table, "sample", k, f64::NAN, f64::NAN, s);
    }

    let mut out = Outcome::new(table);
    out.note_f64("Y42_sphere", table0.y42);
    out.note_f64("Y_sigma2_over_sigma1", table0.y_sigma2_over_sigma1);
    out.note_f64("sharp_constant", sobolev_sharp_constant(n, 2, 1));
    out.note_f64(
        "max_optimizer_abs_deficit",
        max_of(&optimizers.iter().map(|s| s.deficit.abs()).collect::<Vec<_>>()),
    );
    out.note_f64(
        "max_optimizer_abs_quotient_err",
        max_of(&optimizers.iter().map(|s| (s.quotient - table0.y42).abs()).collect::<Vec<_>>()),
    );
    out.note_f64("min_sample_deficit", min_of(&samples.iter().map(|s| s.deficit).collect::<Vec<_>>()));
    out.note_f64("min_sample_sigma_margin", min_of(&samples.iter().map(|s| s.margin).collect::<Vec<_>>()));
    out.note_f64("min_sample_y42_gap", min_of(&samples.iter().map(|s| s.gap).collect::<Vec<_>>()));
    Ok(out)
}

fn obata_check(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let rows = par_indexed(r.samples, |k| {
        let mut rng = indexed_rng(r.seed, k as u64);
        let m = sample_admissible(&bg, Convention::PowerScalar, &mut rng, |_| true).ok_or_else(|| no_sample(k))?;
        let alpha: f64 = rng.random_range(0.01..=1.0);
        let res = obata_identity_residual(&m, alpha)?;
        Ok((alpha, res.res_lemma, res.res_main))
    })?;
    let mut table = Table::new(&["index", "alpha", "res_lemma", "res_main"]);
    for (k, (alpha, lemma, main)) in rows.iter().enumerate() {
        table.push(vec![k.into(), (*alpha).into(), (*lemma).into(), (*main).into()]);
    }
    let mut out = Outcome::new(table);
    out.note_f64("max_res_lemma", max_of(&rows.iter().map(|r| r.1).collect::<Vec<_>>()));
    out.note_f64("max_res_main", max_of(&rows.iter().map(|r| r.2).collect::<Vec<_>>()));
    Ok(out)
}

fn flow_config(r: &Resolved) -> FlowConfig {
    FlowConfig {
        dt: r.dt,
        tol: r.tol,
        max_steps: r.max_steps,
        record_every: r.record_every,
        max_halvings: r.max_halvings,
        ..FlowConfig::default()
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::BudgetExceeded => "budget-exceeded",
        Termination::InvariantViolated => "invariant-violated",
    }
}

fn trace_summary(out: &mut Outcome, trace: &FlowTrace) {
    out.note("termination", termination_name(trace.termination));
    out.note("steps", trace.steps());
    out.note_f64("final_t", trace.final_state.t);
    out.note_f64("residual", trace.residual);
    out.note("all_monotone", trace.all_monotone());
    let q: Vec<f64> = trace.samples.iter().map(|s| s.monitors.total_q).collect();
    if let Some(&q0) = q.first() {
        let drift = max_of(&q.iter().map(|v| ((v - q0) / q0).abs()).collect::<Vec<_>>());
        out.note_f64("max_total_q_rel_drift", drift);
    }
    out.note_f64("min_r", min_of(&trace.samples.iter().map(|s| s.monitors.min_r).collect::<Vec<_>>()));
    if trace.termination == Termination::InvariantViolated {
        out.violation = Some(trace.violation.clone().unwrap_or_else(|| "invariant violated".into()));
    }
}

/// Initial data that already breaks a flow invariant lies outside the admissible set.
fn initial_data(e: FlowError) -> RunError {
    RunError::Precondition(format!("initial data: {e}"))
}

fn flow4(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let u0 = Field::basis(&bg, r.mode).scale(r.amplitude);
    flow4_state(u0.clone(), 0.0).map_err(initial_data)?;
    let trace = run_flow4(u0, &flow_config(r))?;
    let mut table = Table::new(&["step", "t", "dt", "F", "totalQ", "totalR", "minR", "ut_norm", "monotone"]);
    for s in &trace.samples {
        table.push(vec![
            s.step.into(),
            s.t.into(),
            s.dt.into(),
            s.monitors.energy.into(),
            s.monitors.total_q.into(),
            s.monitors.total_scalar.into(),
            s.monitors.min_r.into(),
            s.monitors.ut_norm.into(),
            s.monotone.into(),
        ]);
    }
    let mut out = Outcome::new(table);
    trace_summary(&mut out, &trace);
    out.note_f64("background_total_q", bg.q_curvature() * bg.volume());
    Ok(out)
}

fn subcritical(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let p = EpsilonParams::new(r.n, r.eps)?;
    let u0 = Field::constant(&bg, 1.0).axpby(1.0, &Field::basis(&bg, r.mode), r.amplitude);
    subcritical_state(u0.clone(), &p, 0.0).map_err(initial_data)?;
    let trace = run_subcritical(u0, &p, &flow_config(r))?;
    let mut table = Table::new(&[
        "step",
        "t",
        "dt",
        "r",
        "I_eps",
        "totalQ",
        "weighted_total_scalar",
        "minR",
        "min_u",
        "ut_norm",
        "monotone",
    ]);
    for s in &trace.samples {
        table.push(vec![
            s.step.into(),
            s.t.into(),
            s.dt.into(),
            s.r.into(),
            s.monitors.energy.into(),
            s.monitors.total_q.into(),
            s.monitors.total_scalar.into(),
            s.monitors.min_r.into(),
            s.monitors.min_u.into(),
            s.monitors.ut_norm.into(),
            s.monotone.into(),
        ]);
    }
    let mut out = Outcome::new(table);
    trace_summary(&mut out, &trace);
    let u = trace.final_state.metric.factor();
    out.note_f64("final_spread", spread(u));
    out.note_f64("final_I_eps", trace.final_state.monitors.energy);
    out.note_f64("final_r", trace.final_state.r);
    out.note_f64("constant_I_eps", constant_quotient_eps(&bg, &p));
    out.note_f64("constant_r", constant_multiplier_eps(&bg, &p, mean_value(u)));
    Ok(out)
}

fn eps_continuation(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let u0 = Field::constant(&bg, 1.0).axpby(1.0, &Field::basis(&bg, r.mode), r.amplitude);
    let stages = epsilon_continuation(u0, &r.schedule, &flow_config(r))?;
    let mut table = Table::new(&[
        "eps",
        "quotient",
        "constant_quotient",
        "r_bar",
        "residual",
        "spread",
        "termination",
        "unbounded",
        "failure",
    ]);
    for s in &stages {
        let p = EpsilonParams::new(r.n, s.eps)?;
        table.push(vec![
            s.eps.into(),
            s.quotient.into(),
            constant_quotient_eps(&bg, &p).into(),
            s.r_bar.into(),
            s.residual.into(),
            spread(&s.limit).into(),
            termination_name(s.termination).into(),
            s.unbounded.into(),
            s.failure.clone().unwrap_or_default().into(),
        ]);
    }
    let mut out = Outcome::new(table);
    out.note_f64("richardson_limit", richardson_to_zero(&stages).unwrap_or(f64::NAN));
    if bg.is_sphere() {
        if let Ok(t) = ConstantsTable::new(r.n) {
            out.note_f64("Y42_sphere", t.y42);
        }
    }
    Ok(out)
}

fn continue3d(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let initial = (r.amplitude != 0.0).then(|| {
        Field::constant(&bg, sphere_path_constant(0.0)).axpby(1.0, &Field::basis(&bg, r.mode), r.amplitude)
    });
    let cfg = NewtonConfig {
        tol: r.tol,
        max_iterations: r.max_steps,
        ..NewtonConfig::default()
    };
    let path = newton_continuation_3d(&bg, &r.schedule, initial, &cfg)?;
    let mut table = Table::new(&[
        "t",
        "residual",
        "iterations",
        "min_u",
        "max_u",
        "min_r",
        "constant_solution",
        "q_over_r_dev",
    ]);
    for p in &path.points {
        let q = path_q_curvature(&p.u);
        let s = path_scalar_curvature(&p.u);
        let dev = q.zip_map(&s, |a, b| (a / b - 1.0).abs()).max();
        table.push(vec![
            p.t.into(),
            p.residual.into(),
            p.iterations.into(),
            p.min_u.into(),
            p.max_u.into(),
            p.min_r.into(),
            sphere_path_constant(p.t).into(),
            dev.into(),
        ]);
    }
    let mut out = Outcome::new(table);
    out.note("stalled_at", path.stalled_at.map_or(Value::Null, json_f64));
    out.note_f64("final_t", path.points.last().map_or(f64::NAN, |p| p.t));
    Ok(out)
}

fn coeff_certificate(r: &Resolved) -> Result<Outcome, RunError> {
    let grid = default_alpha_grid(r.alpha_points);
    let dims: Vec<usize> = (r.n..=r.n_max).collect();
    let reports = par_indexed(dims.len(), |k| Ok(coefficient_certificate(dims[k], &grid)?))?;
    let mut table = Table::new(&[
        "n",
        "identity_holds",
        "e_nonnegative",
        "e_roots_in_unit",
        "windows",
        "windows_nonempty",
        "min_window_width",
        "c1",
        "i1",
        "c0",
        "i0",
        "succeeded",
    ]);
    let mut report = String::new();
    for rep in &reports {
        let width = min_of(&rep.windows.iter().map(|w| w.upper - w.lower).collect::<Vec<_>>());
        table.push(vec![
            rep.n.into(),
            rep.identity_holds.into(),
            rep.e_nonnegative.into(),
            rep.roots_in_unit.len().into(),
            rep.windows.len().into(),
            rep.all_windows_nonempty().into(),
            width.into(),
            rep.c1.to_string().into(),
            rep.i1.to_string().into(),
            rep.c0.to_string().into(),
            rep.i0.to_string().into(),
            rep.succeeded().into(),
        ]);
        report.push_str(&rep.to_string());
        report.push('\n');
    }
    let mut out = Outcome::new(table);
    out.note("all_succeeded", reports.iter().all(|r| r.succeeded()));
    out.note("alpha_points", r.alpha_points);
    out.report = Some(report);
    Ok(out)
}

fn duality_scan(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let constant = duality_product(&Field::constant(&bg, 1.0))?;
    let samples = par_indexed(r.samples, |k| {
        let mut rng = indexed_rng(r.seed, k as u64);
        (0..MAX_ATTEMPTS)
            .find_map(|_| duality_product(&random_log_normal_factor(&bg, &mut rng)).ok())
            .ok_or_else(|| no_sample(k))
    })?;
    let mut table = Table::new(&["source", "index", "theta_hat", "ytilde_hat", "product"]);
    table.push(vec![
        "constant".into(),
        0usize.into(),
        constant.theta_hat.into(),
        constant.ytilde_hat.into(),
        constant.product.into(),
    ]);
    for (k, d) in samples.iter().enumerate() {
        table.push(vec![
            "sample".into(),
            k.into(),
            d.theta_hat.into(),
            d.ytilde_hat.into(),
            d.product.into(),
        ]);
    }
    let mut out = Outcome::new(table);
    out.note_f64("constant_product_err", (constant.product - 1.0).abs());
    out.note_f64("max_sample_product", max_of(&samples.iter().map(|d| d.product).collect::<Vec<_>>()));
    Ok(out)
}

fn convexity_scan(r: &Resolved) -> Result<Outcome, RunError> {
    let bg = background(r, r.n)?;
    let op = conformal_laplacian(&bg);
    let rows = par_indexed(r.samples, |k| {
        let mut rng = indexed_rng(r.seed, k as u64);
        for _ in 0..MAX_ATTEMPTS {
            let u = random_log_normal_factor(&bg, &mut rng);
            let v = random_log_normal_factor(&bg, &mut rng);
            let t: f64 = rng.random_range(0.0..=1.0);
            if let Ok(min_h) = convexity_check(&u, &v, t) {
                let h = u.zip_map(&v, |a, b| a.powf(t) * b.powf(1.0 - t));
                let scale = op.apply(&h).max_abs();
                return Ok([t, op.apply(&u).min(), op.apply(&v).min(), min_h, scale]);
            }
        }
        Err(no_sample(k))
    })?;
    let mut table = Table::new(&["index", "t", "min_l0_u", "min_l0_v", "min_l0_h", "scale"]);
    for (k, row) in rows.iter().enumerate() {
        let mut cells: Vec<Cell> = vec![k.into()];
        cells.extend(row.iter().map(|v| Cell::from(*v)));
        table.push(cells);
    }
    let mut out = Outcome::new(table);
    out.note_f64(
        "min_relative_l0",
        min_of(&rows.iter().map(|r| r[3] / r[4]).collect::<Vec<_>>()),
    );
    Ok(out)
}

