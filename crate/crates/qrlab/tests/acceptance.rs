//! Acceptance run: one PASS/FAIL line per criterion, exit status reflects the verdict.
//!
//! Criterion 11b is a known counterexample: random admissible metrics push the
//! Y42-versus-Yamabe gap below zero. It is reported as FAIL and the run instead
//! asserts that the negative gap is real (it survives a grid refinement).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qrlab::{run_experiment, Experiment, ExperimentConfig, KindSpec, Outcome, Table};
use qrlab_core::curvature::{paneitz_multipliers, ConformalMetric, Convention};
use qrlab_core::functionals::{
    quotient_i, sigma2_sigma1_margin, sobolev_deficit, y42_vs_y_gap,
};
use qrlab_core::geometry::{build_background, BackgroundKind, Field};
use qrlab_core::sampling::{indexed_rng, sample_admissible, SAMPLE_DEGREE};

const SEED: u64 = 7;

// ---------------------------------------------------------------------------
// closed forms written out independently of the library

fn omega(n: usize) -> f64 {
    // |S^n| = 2 pi / (n - 1) |S^{n-2}|
    let mut w = if n % 2 == 1 { 2.0 * PI } else { 4.0 * PI };
    let mut k = if n % 2 == 1 { 1 } else { 2 };
    while k < n {
        k += 2;
        w *= 2.0 * PI / (k as f64 - 1.0);
    }
    w
}

struct Closed {
    r0: f64,
    q0: f64,
    y: f64,
    y_sigma2: f64,
    y_ratio: f64,
    y42: f64,
    c: f64,
}

fn closed(n: usize) -> Closed {
    let nf = n as f64;
    let w = omega(n);
    let e = 1.0 / (nf - 2.0);
    Closed {
        r0: nf * (nf - 1.0),
        q0: nf * (nf * nf - 4.0) / 8.0,
        y: nf * (nf - 2.0) / 4.0 * w.powf(2.0 / nf),
        y_sigma2: nf * (nf - 1.0) / 8.0 * w.powf(4.0 / nf),
        y_ratio: nf * (nf - 1.0) / 8.0 * w.powf(2.0 * e) / (nf / 2.0).powf((nf - 4.0) * e),
        y42: (nf - 4.0) * (nf * nf - 4.0) / 16.0
            * nf.powf(2.0 * e)
            * (nf - 1.0).powf((4.0 - nf) * e)
            * w.powf(2.0 * e),
        c: (nf - 4.0) * (nf + 2.0) / (nf * (nf - 2.0).powf(2.0 * e) * (4.0 * (nf - 1.0)).powf((nf - 4.0) * e)),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// table helpers

fn column(t: &Table, name: &str) -> Vec<f64> {
    let v = t.column_f64(name);
    assert_eq!(v.len(), t.rows.len(), "column {name} missing or non-numeric");
    v
}

/// Numeric column restricted to rows whose `source` cell equals `source`.
fn column_for(t: &Table, name: &str, source: &str) -> Vec<f64> {
    let s = t.column_index("source").expect("source column");
    let c = t.column_index(name).expect("column");
    t.rows
        .iter()
        .filter(|r| matches!(&r[s], qrlab::Cell::Text(x) if x == source))
        .map(|r| r[c].as_f64().expect("numeric"))
        .collect()
}

fn texts(t: &Table, name: &str) -> Vec<String> {
    let c = t.column_index(name).expect("column");
    t.rows
        .iter()
        .map(|r| match &r[c] {
            qrlab::Cell::Text(s) => s.clone(),
            qrlab::Cell::Bool(b) => b.to_string(),
            other => panic!("unexpected cell {other:?}"),
        })
        .collect()
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn run(experiment: Experiment, cfg: ExperimentConfig) -> Outcome {
    let r = cfg.resolve(experiment).expect("config resolves");
    run_experiment(&r).unwrap_or_else(|e| panic!("{experiment} failed: {e}"))
}

fn summary_f64(o: &Outcome, key: &str) -> f64 {
    o.summary.get(key).and_then(|v| v.as_f64()).unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// verdict bookkeeping

struct Verdicts {
    failed: BTreeSet<&'static str>,
}

impl Verdicts {
    fn record(&mut self, id: &'static str, title: &str, pass: bool, elapsed: Duration, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:<4} {title:<28} [{:>7.2} s] {detail}", elapsed.as_secs_f64());
        if !pass {
            self.failed.insert(id);
        }
    }
}

// ---------------------------------------------------------------------------

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(
        Experiment::Constants,
        ExperimentConfig {
            n: Some(5),
            n_max: Some(10),
            ..Default::default()
        },
    );
    let t = &out.table;
    let ns = column(t, "n");
    let mut worst: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for (i, n) in ns.iter().enumerate() {
        let c = closed(*n as usize);
        let pairs = [
            ("R0", c.r0),
            ("R0_grid", c.r0),
            ("Q0", c.q0),
            ("Q0_grid", c.q0),
            ("Q0_over_R0", c.q0 / c.r0),
            ("Y_sphere", c.y),
            ("Y_sphere_grid", c.y),
            ("Y_sigma2", c.y_sigma2),
            ("Y_sigma2_over_sigma1", c.y_ratio),
            ("Y42_sphere", c.y42),
            ("Y42_sphere_grid", c.y42),
        ];
        for (name, want) in pairs {
            worst = worst.max(rel(column(t, name)[i], want));
        }
        worst_identity = worst_identity.max(rel(c.c * c.y.powf(n / (n - 2.0)), column(t, "Y42_sphere")[i]));
        worst_identity = worst_identity.max(rel(column(t, "c_n")[i], c.c));
    }
    let elapsed = start.elapsed();
    let pass = ns.len() == 6 && worst <= 1e-10 && worst_identity <= 1e-12 && elapsed < Duration::from_secs(1);
    v.record(
        "1",
        "constants",
        pass,
        elapsed,
        format!("max rel err {worst:.2e}, identity {worst_identity:.2e}"),
    );
}

fn criterion_2(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in 5..=8usize {
        let bg = build_background(n, BackgroundKind::RoundSphere, 80, 32).unwrap();
        let h = n as f64 / 2.0;
        for (l, got) in paneitz_multipliers(&bg).iter().enumerate() {
            let lam = (l * (l + n - 1)) as f64;
            let want = (lam + h * (h - 1.0)) * (lam + (h + 1.0) * (h - 2.0));
            worst = worst.max(rel(*got, want));
        }
    }
    let bg4 = build_background(4, BackgroundKind::RoundSphere, 80, 32).unwrap();
    let mut worst4: f64 = 0.0;
    for (l, got) in paneitz_multipliers(&bg4).iter().enumerate() {
        let lam = (l * (l + 3)) as f64;
        worst4 = worst4.max((got - lam * (lam + 2.0)).abs() / (lam * (lam + 2.0)).max(1.0));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && worst4 <= 1e-9 && elapsed < Duration::from_secs(1);
    v.record(
        "2",
        "Paneitz spectrum",
        pass,
        elapsed,
        format!("GJMS rel err {worst:.2e}, S^4 {worst4:.2e}"),
    );
}

/// Sobolev scans for n = 5..8 shared by criteria 3, 4 and 11b.
fn sobolev_scans() -> Vec<(usize, Outcome, Duration)> {
    (5..=8)
        .map(|n| {
            let start = Instant::now();
            let out = run(
                Experiment::SobolevScan,
                ExperimentConfig {
                    n: Some(n),
                    samples: Some(1000),
                    seed: Some(SEED),
                    nodes: Some(256),
                    degree: Some(96),
                    ..Default::default()
                },
            );
            (n, out, start.elapsed())
        })
        .collect()
}

fn criterion_3(v: &mut Verdicts, scans: &[(usize, Outcome, Duration)]) {
    let mut pass = true;
    let mut details = Vec::new();
    let mut total = Duration::ZERO;
    for (n, out, elapsed) in scans {
        let t = &out.table;
        let y42 = closed(*n).y42;
        let deficits = column_for(t, "deficit", "sample");
        let opt_def = max(&column_for(t, "deficit", "optimizer").iter().map(|d| d.abs()).collect::<Vec<_>>());
        let opt_q = max(&column_for(t, "quotient_i", "optimizer")
            .iter()
            .map(|q| (q - y42).abs())
            .collect::<Vec<_>>());
        let low = min(&deficits);
        let ok = deficits.len() == 1000
            && column_for(t, "deficit", "optimizer").len() == 15
            && low >= -1e-7
            && opt_def <= 1e-7
            && opt_q <= 1e-7
            && *elapsed < Duration::from_secs(120);
        pass &= ok;
        total += *elapsed;
        details.push(format!("n={n}: min {low:.2e}, opt {opt_def:.1e}/{opt_q:.1e}"));
    }
    v.record("3", "Sobolev inequality", pass, total, details.join("; "));
}

fn criterion_4(v: &mut Verdicts, scans: &[(usize, Outcome, Duration)]) {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (n, out, _) in scans {
        let margins = column_for(&out.table, "sigma_margin", "sample");
        let low = min(&margins);
        pass &= margins.len() == 1000 && low >= -1e-7;
        details.push(format!("n={n}: min {low:.2e}"));
    }
    v.record("4", "sigma2/sigma1 inequality", pass, start.elapsed(), details.join("; "));
}

fn criterion_5(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 5..=7 {
        let out = run(
            Experiment::ObataCheck,
            ExperimentConfig {
                n: Some(n),
                samples: Some(100),
                seed: Some(SEED),
                ..Default::default()
            },
        );
        worst = worst.max(max(&column(&out.table, "res_lemma")));
        worst = worst.max(max(&column(&out.table, "res_main")));
        count += out.table.rows.len();
    }
    let elapsed = start.elapsed();
    let pass = count == 300 && worst <= 1e-6 && elapsed < Duration::from_secs(60);
    v.record("5", "Obata identities", pass, elapsed, format!("max residual {worst:.2e} over {count}"));
}

fn criterion_6(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(
        Experiment::CoeffCertificate,
        ExperimentConfig {
            n: Some(5),
            n_max: Some(50),
            alpha_points: Some(101),
            ..Default::default()
        },
    );
    let t = &out.table;
    let all = |name: &str| texts(t, name).iter().all(|s| s == "true");
    let roots = max(&column(t, "e_roots_in_unit"));
    let windows = column(t, "windows");
    let n5 = &t.rows[0];
    let exact5 = [("c1", "4/3"), ("i1", "20/9"), ("c0", "-11/15"), ("i0", "64/45")]
        .iter()
        .all(|(col, want)| matches!(&n5[t.column_index(col).unwrap()], qrlab::Cell::Text(s) if s == want));
    let elapsed = start.elapsed();
    let pass = t.rows.len() == 46
        && all("identity_holds")
        && all("e_nonnegative")
        && all("windows_nonempty")
        && all("succeeded")
        && roots == 0.0
        && windows.iter().all(|w| *w == 101.0)
        && exact5
        && elapsed < Duration::from_secs(10);
    v.record(
        "6",
        "coefficient certificate",
        pass,
        elapsed,
        format!("n = 5..50, 101 alphas, report {} bytes", out.report.as_ref().map_or(0, String::len)),
    );
}

fn criterion_7(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(
        Experiment::Flow4,
        ExperimentConfig {
            kind: Some(KindSpec::Product { p: 2, q: 2 }),
            dt: Some(1e-2),
            max_steps: Some(100_000),
            amplitude: Some(0.1),
            mode: Some(2),
            record_every: Some(1),
            ..Default::default()
        },
    );
    let t = &out.table;
    let steps = column(t, "step");
    let f = column(t, "F");
    let q = column(t, "totalQ");
    let min_r = min(&column(t, "minR"));
    let every_step = steps.windows(2).all(|w| w[1] == w[0] + 1.0);
    let monotone = f.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs());
    let q_drift = max(&q.iter().map(|x| rel(*x, q[0])).collect::<Vec<_>>());
    let total_q0 = summary_f64(&out, "background_total_q");
    let hypothesis = rel(total_q0, 32.0 * PI * PI / 3.0) < 1e-12 && total_q0 < 16.0 * PI * PI;
    let residual = summary_f64(&out, "residual");
    let converged = out.summary.get("termination").and_then(|v| v.as_str()) == Some("converged");
    let elapsed = start.elapsed();
    let pass = every_step
        && monotone
        && q_drift <= 1e-8
        && min_r > 0.0
        && hypothesis
        && converged
        && residual <= 1e-5
        && *steps.last().unwrap() <= 1e5
        && elapsed < Duration::from_secs(300);
    v.record(
        "7",
        "4-dim flow on S2xS2",
        pass,
        elapsed,
        format!(
            "{} steps, residual {residual:.2e}, Q drift {q_drift:.1e}, min R {min_r:.3}",
            steps.last().unwrap()
        ),
    );
}

fn criterion_8(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(
        Experiment::Subcritical,
        ExperimentConfig {
            n: Some(5),
            eps: Some(0.2),
            record_every: Some(1),
            ..Default::default()
        },
    );
    let t = &out.table;
    let q = column(t, "totalQ");
    let j = column(t, "weighted_total_scalar");
    let i = column(t, "I_eps");
    let q_step = max(&q.windows(2).map(|w| rel(w[1], w[0])).collect::<Vec<_>>());
    let j_up = j.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs());
    let i_down = i.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs());
    let spread = summary_f64(&out, "final_spread");
    let i_err = rel(summary_f64(&out, "final_I_eps"), summary_f64(&out, "constant_I_eps"));
    let r_err = rel(summary_f64(&out, "final_r"), summary_f64(&out, "constant_r"));
    let converged = out.summary.get("termination").and_then(|v| v.as_str()) == Some("converged");
    let elapsed = start.elapsed();
    let pass = q_step <= 1e-9
        && j_up
        && i_down
        && converged
        && spread <= 1e-5
        && i_err <= 1e-5
        && r_err <= 1e-5
        && elapsed < Duration::from_secs(300);
    v.record(
        "8",
        "subcritical flow on S5",
        pass,
        elapsed,
        format!("Q step {q_step:.1e}, spread {spread:.1e}, I err {i_err:.1e}, r err {r_err:.1e}"),
    );
}

fn criterion_9(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(Experiment::Continue3d, ExperimentConfig::default());
    let t = &out.table;
    let ts = column(t, "t");
    let c0 = (16.0f64 / 15.0).powf(0.25);
    let start_err = (column(t, "min_u")[0] - c0).abs().max((column(t, "max_u")[0] - c0).abs());
    let last = t.rows.len() - 1;
    let residual = column(t, "residual")[last];
    let dev = column(t, "q_over_r_dev")[last];
    let elapsed = start.elapsed();
    let pass = ts[0] == 0.0
        && ts[last] == 1.0
        && start_err <= 1e-10
        && residual <= 1e-8
        && dev <= 1e-6
        && elapsed < Duration::from_secs(60);
    v.record(
        "9",
        "n=3 path continuation",
        pass,
        elapsed,
        format!("t=0 err {start_err:.1e}, t=1 residual {residual:.1e}, |Q/R-1| {dev:.1e}"),
    );
}

fn criterion_10(v: &mut Verdicts) {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for n in [5, 6] {
        let out = run(
            Experiment::DualityScan,
            ExperimentConfig {
                n: Some(n),
                samples: Some(500),
                seed: Some(SEED),
                ..Default::default()
            },
        );
        let samples = column_for(&out.table, "product", "sample");
        let constant = column_for(&out.table, "product", "constant")[0];
        let top = max(&samples);
        pass &= samples.len() == 500 && top <= 1.0 + 1e-10 && (constant - 1.0).abs() <= 1e-10;
        details.push(format!("n={n}: max {top:.6}, constant err {:.1e}", (constant - 1.0).abs()));
    }
    v.record("10", "duality product", pass, start.elapsed(), details.join("; "));
}

fn criterion_11a(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in 5..=8 {
        let bg = build_background(n, BackgroundKind::RoundSphere, 64, 16).unwrap();
        let m = ConformalMetric::new(Field::constant(&bg, 1.0), Convention::PowerN5plus).unwrap();
        worst = worst.max(y42_vs_y_gap(&m).unwrap().abs());
    }
    let prod = build_background(
        6,
        KindSpec::Product { p: 3, q: 3 }.background_kind(),
        64,
        16,
    )
    .unwrap();
    let m = ConformalMetric::new(Field::constant(&prod, 1.0), Convention::PowerN5plus).unwrap();
    let prod_gap = y42_vs_y_gap(&m).unwrap().abs();
    worst = worst.max(prod_gap);
    v.record(
        "11a",
        "Y42 gap equality case",
        worst <= 1e-10,
        start.elapsed(),
        format!("max |gap| {worst:.2e} (S3xS3: {prod_gap:.2e})"),
    );
}

/// Rebuilds sample `index` of the `n`-dimensional scan, then re-evaluates it on a finer grid.
fn refine_sample(n: usize, index: usize) -> (f64, f64) {
    let coarse = build_background(n, BackgroundKind::RoundSphere, 256, 96).unwrap();
    let mut rng = indexed_rng(SEED, index as u64);
    let m = sample_admissible(&coarse, Convention::PowerN5plus, &mut rng, |m| {
        sobolev_deficit(m, 2, 1).is_ok()
            && quotient_i(m).is_ok()
            && y42_vs_y_gap(m).is_ok()
            && sigma2_sigma1_margin(m).is_ok()
    })
    .unwrap();
    let coarse_gap = y42_vs_y_gap(&m).unwrap();
    // The sampled log-factor is a degree-SAMPLE_DEGREE zonal polynomial, so it transfers exactly.
    let log_coeffs: Vec<f64> = m.factor().map(f64::ln).coeffs().into_iter().take(SAMPLE_DEGREE + 1).collect();
    let fine = build_background(n, BackgroundKind::RoundSphere, 512, 192).unwrap();
    let mut c = vec![0.0; fine.degree() + 1];
    c[..log_coeffs.len()].copy_from_slice(&log_coeffs);
    let u = Field::from_coeffs(&fine, c).to_nodal().map(f64::exp);
    let fine_gap = y42_vs_y_gap(&ConformalMetric::new(u, Convention::PowerN5plus).unwrap()).unwrap();
    (coarse_gap, fine_gap)
}

fn criterion_11b(v: &mut Verdicts, scans: &[(usize, Outcome, Duration)]) -> bool {
    let start = Instant::now();
    let mut pass = true;
    let mut confirmed = true;
    let mut details = Vec::new();
    for (n, out, _) in scans.iter().filter(|(n, _, _)| *n <= 6) {
        let gaps: Vec<f64> = column_for(&out.table, "y42_gap", "sample").into_iter().take(500).collect();
        let (index, low) = gaps
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, g)| if g < acc.1 { (i, g) } else { acc });
        let negatives = gaps.iter().filter(|g| **g < -1e-7).count();
        pass &= gaps.len() == 500 && low >= -1e-7;
        let (coarse, fine) = refine_sample(*n, index);
        confirmed &= low < -1e-7 && rel(coarse, low) < 1e-12 && fine < -1e-7 && (fine - coarse).abs() < 1e-6 * coarse.abs();
        details.push(format!(
            "n={n}: min {low:.3e} at sample {index} ({negatives}/500 below -1e-7), refined {fine:.3e}"
        ));
    }
    v.record("11b", "Y42 gap on random samples", pass, start.elapsed(), details.join("; "));
    confirmed
}

fn criterion_12(v: &mut Verdicts) {
    let start = Instant::now();
    let out = run(
        Experiment::ConvexityScan,
        ExperimentConfig {
            n: Some(5),
            samples: Some(200),
            seed: Some(SEED),
            ..Default::default()
        },
    );
    let t = &out.table;
    let ratios: Vec<f64> = column(t, "min_l0_h")
        .iter()
        .zip(column(t, "scale"))
        .map(|(m, s)| m / s)
        .collect();
    let low = min(&ratios);
    let pass = ratios.len() == 200 && low >= -1e-9;
    v.record("12", "convexity lemma", pass, start.elapsed(), format!("min L0 h / scale {low:.3e}"));
}

fn run_binary(dir: &Path, name: &str, experiment: &str, config: &str, threads: &str) -> Vec<u8> {
    let cfg = dir.join(format!("{name}.conf"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("{name}.csv"));
    let status = Command::new(env!("CARGO_BIN_EXE_qrlab"))
        .arg(experiment)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("QRLAB_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out).unwrap()
}

fn criterion_13(v: &mut Verdicts) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let scan = "n = 6\nsamples = 120\nseed = 7\n";
    let a = run_binary(dir.path(), "scan_a", "sobolev-scan", scan, "1");
    let b = run_binary(dir.path(), "scan_b", "sobolev-scan", scan, "4");
    let flow = "{\"kind\": \"product(2,2)\", \"max_steps\": 300}";
    let c = run_binary(dir.path(), "flow_a", "flow4", flow, "1");
    let d = run_binary(dir.path(), "flow_b", "flow4", flow, "2");
    let pass = a == b && c == d && a.starts_with(b"# schema-version=1\n");
    v.record(
        "13",
        "determinism",
        pass,
        start.elapsed(),
        format!("scan {} bytes, flow {} bytes, byte-identical across thread counts", a.len(), c.len()),
    );
}

fn main() {
    let mut v = Verdicts {
        failed: BTreeSet::new(),
    };
    criterion_1(&mut v);
    criterion_2(&mut v);
    let scans = sobolev_scans();
    criterion_3(&mut v, &scans);
    criterion_4(&mut v, &scans);
    criterion_5(&mut v);
    criterion_6(&mut v);
    criterion_7(&mut v);
    criterion_8(&mut v);
    criterion_9(&mut v);
    criterion_10(&mut v);
    criterion_11a(&mut v);
    let counterexample = criterion_11b(&mut v, &scans);
    criterion_12(&mut v);
    criterion_13(&mut v);

    let expected: BTreeSet<&str> = ["11b"].into_iter().collect();
    println!(
        "acceptance: {} failing ({}), expected failing: 11b (counterexample {})",
        v.failed.len(),
        v.failed.iter().copied().collect::<Vec<_>>().join(", "),
        if counterexample { "confirmed" } else { "NOT confirmed" }
    );
    if v.failed != expected || !counterexample {
        std::process::exit(1);
    }
}

