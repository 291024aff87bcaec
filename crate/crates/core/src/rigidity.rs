//! Optimizer family, integral identities behind the rigidity argument,
//! an exact certificate for the coefficient inequalities, and the
//! log-convexity property of the conformal Laplacian.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::curvature::{Convention, ConformalMetric, CurvatureError};
use crate::geometry::{Background, Field, SpectralOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigidityError {
    #[error("Mobius parameter {0} is outside (-1, 1)")]
    MobiusParameter(f64),
    #[error("amplitude {0} is not positive")]
    Amplitude(f64),
    #[error("operation needs the round sphere background")]
    NotSphere,
    #[error("scalar curvature reaches {0:e}; the weights S^-alpha need S > 0")]
    NonPositiveScalar(f64),
    #[error("alpha {0} is outside (0, 1]")]
    Alpha(f64),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

/// Round metrics `a (1 + b mu)^{-(n-4)/2}` in the power convention (`n >= 5`).
///
/// For `n = 3` the factor `a (1 + b mu)^{-1}` of `g = u^2 g0` is used, and for
/// `n = 4` the exponential factor `ln a - ln(1 + b mu)`.
pub fn optimizer_family(bg: &Arc<Background>, a: f64, b: f64) -> Result<ConformalMetric, RigidityError> {
    if !(b.abs() < 1.0) {
        return Err(RigidityError::MobiusParameter(b));
    }
    if !(a > 0.0) {
        return Err(RigidityError::Amplitude(a));
    }
    if !bg.is_sphere() {
        return Err(RigidityError::NotSphere);
    }
    let n = bg.dim();
    let nf = n as f64;
    let m = match n {
        3 => ConformalMetric::new(
            Field::from_fn(bg, |x| (a / (1.0 + b * x)).sqrt()),
            Convention::PowerScalar,
        )?,
        4 => ConformalMetric::new(
            Field::from_fn(bg, |x| a.ln() - (1.0 + b * x).ln()),
            Convention::Exponential4,
        )?,
        _ => ConformalMetric::new(
            Field::from_fn(bg, |x| a * (1.0 + b * x).powf(-(nf - 4.0) / 2.0)),
            Convention::PowerN5plus,
        )?,
    };
    Ok(m)
}

/// Floating-point coefficients of the rigidity argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObataCoefficients {
    pub n: usize,
    pub alpha: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub b: f64,
    pub c: f64,
    pub i: f64,
}

impl ObataCoefficients {
    pub fn new(n: usize, alpha: f64) -> ObataCoefficients {
        let nf = n as f64;
        let alpha1 = 4.0 * (nf - 1.0) / ((nf - 2.0) * (nf - 2.0));
        let alpha2 = (nf * nf - 4.0) / (4.0 * (nf - 1.0) * nf);
        let b = 2.0 * nf / ((nf - 2.0) * (nf - 2.0))
            * (1.0 / nf + alpha2 * (2.0 - alpha) * (nf - 1.0) / nf)
            - alpha1 / (2.0 * nf);
        let c = (nf - 1.0) / (nf - 2.0)
            - 2.0 * (1.0 - alpha) / (nf - 2.0) * (1.0 + alpha2 * (2.0 - alpha) * (nf - 1.0));
        let i = (1.0 - alpha) * alpha1 * (nf - 1.0) / nf + 2.0 * alpha * (nf - 1.0) * b;
        ObataCoefficients {
            n,
            alpha,
            alpha1,
            alpha2,
            b,
            c,
            i,
        }
    }
}

/// Normalised residuals of the two integral identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObataResidual {
    pub res_lemma: f64,
    pub res_main: f64,
}

/// Nodal quantities of `g = u^2 g0` entering the identities.
struct ObataFields {
    u: Vec<f64>,
    s: Vec<f64>,
    lap_u: Vec<f64>,
    lap_s: Vec<f64>,
    grad_u_sq: Vec<f64>,
    grad_s_sq: Vec<f64>,
    grad_us: Vec<f64>,
    e_us: Vec<f64>,
    e_sq: Vec<f64>,
    grad_u_qs: Vec<f64>,
}

fn obata_fields(m: &ConformalMetric, alpha: f64) -> ObataFields {
    let bg = m.background();
    let n = m.dim() as f64;
    let phi = m.log_scale();
    let dphi = m.log_scale_derivative();
    let lap_phi = m.log_scale_laplacian();
    let gf = bg.metric_factor();
    let s_field = m.scalar_curvature().to_spectral();
    let ds = s_field.derivative();
    let q = m.q_curvature();
    let qs = Field::new(
        bg,
        q.values()
            .iter()
            .zip(s_field.values())
            .map(|(q, s)| q * s.powf(-alpha))
            .collect(),
    );
    let dqs = qs.derivative();
    let tr = m.traceless_ricci();
    let count = phi.len();
    let mut f = ObataFields {
        u: Vec::with_capacity(count),
        s: s_field.values().to_vec(),
        lap_u: Vec::with_capacity(count),
        lap_s: m.scalar_laplacian().values().to_vec(),
        grad_u_sq: Vec::with_capacity(count),
        grad_s_sq: Vec::with_capacity(count),
        grad_us: Vec::with_capacity(count),
        e_us: Vec::with_capacity(count),
        e_sq: tr.norm_sq.clone(),
        grad_u_qs: Vec::with_capacity(count),
    };
    for i in 0..count {
        let u = phi[i].exp();
        let du = u * dphi[i];
        let k = (-2.0 * phi[i]).exp() * gf[i];
        f.u.push(u);
        f.lap_u
            .push(u * (-2.0 * phi[i]).exp() * (lap_phi[i] + (n - 1.0) * gf[i] * dphi[i] * dphi[i]));
        f.grad_u_sq.push(k * du * du);
        f.grad_s_sq.push(k * ds[i] * ds[i]);
        f.grad_us.push(k * du * ds[i]);
        f.e_us.push(tr.radial[i] * k * du * ds[i]);
        f.grad_u_qs.push(k * du * dqs[i]);
    }
    f
}

fn normalised(terms: &[f64], rhs: f64) -> f64 {
    let scale = terms.iter().fold(rhs.abs(), |m, t| m.max(t.abs()));
    let total: f64 = terms.iter().sum::<f64>() - rhs;
    if scale == 0.0 {
        0.0
    } else {
        total.abs() / scale
    }
}

/// Constituent integrals of the first identity, in order.
pub fn obata_lemma_terms(m: &ConformalMetric, alpha: f64) -> Result<Vec<f64>, RigidityError> {
    check_obata(m, alpha)?;
    let f = obata_fields(m, alpha);
    Ok(lemma_terms(m, &f, alpha))
}

fn lemma_terms(m: &ConformalMetric, f: &ObataFields, alpha: f64) -> Vec<f64> {
    let n = m.dim() as f64;
    let integ = |g: &dyn Fn(usize) -> f64| -> f64 {
        let v: Vec<f64> = (0..f.u.len()).map(g).collect();
        m.integrate_g(&v)
    };
    vec![
        (n - 2.0) * (1.0 - n) / n * integ(&|i| f.lap_u[i] * f.lap_s[i] * f.s[i].powf(-alpha)),
        (n - 2.0) * (n - 1.0) / n
            * alpha
            * integ(&|i| f.lap_u[i] * f.grad_s_sq[i] * f.s[i].powf(-alpha - 1.0)),
        (n - 1.0) * integ(&|i| f.e_us[i] * f.s[i].powf(-alpha)),
        (n - 2.0) / (2.0 * n) * integ(&|i| f.u[i] * f.grad_s_sq[i] * f.s[i].powf(-alpha)),
        (n - 2.0) / n * integ(&|i| f.s[i].powf(1.0 - alpha) * f.grad_us[i]),
    ]
}

/// Constituent integrals of the main equality: left-hand terms then the right-hand side.
pub fn obata_main_terms(m: &ConformalMetric, alpha: f64) -> Result<(Vec<f64>, f64), RigidityError> {
    check_obata(m, alpha)?;
    let f = obata_fields(m, alpha);
    Ok(main_terms(m, &f, alpha))
}

fn main_terms(m: &ConformalMetric, f: &ObataFields, alpha: f64) -> (Vec<f64>, f64) {
    let n = m.dim() as f64;
    let co = ObataCoefficients::new(m.dim(), alpha);
    let r0 = m.background().scalar_curvature();
    let integ = |g: &dyn Fn(usize) -> f64| -> f64 {
        let v: Vec<f64> = (0..f.u.len()).map(g).collect();
        m.integrate_g(&v)
    };
    let sa = |i: usize| f.s[i].powf(-alpha);
    let terms = vec![
        (n - 1.0) * co.alpha1 / 2.0 * integ(&|i| f.e_sq[i] * sa(i) * f.grad_u_sq[i] / f.u[i]),
        1.0 / (2.0 * n)
            * integ(&|i| {
                r0 / f.u[i]
                    * (co.alpha1 * f.e_sq[i] * sa(i) + alpha * f.grad_s_sq[i] * sa(i) / f.s[i])
            }),
        alpha * (n - 1.0) / 2.0 * integ(&|i| f.grad_s_sq[i] * sa(i) / f.s[i] * f.grad_u_sq[i] / f.u[i]),
        (1.0 - alpha) / (2.0 * n) * integ(&|i| f.u[i] * f.grad_s_sq[i] * sa(i)),
        co.b * integ(&|i| f.u[i] * f.e_sq[i] * f.s[i].powf(1.0 - alpha)),
        co.c * integ(&|i| f.e_us[i] * sa(i)),
    ];
    let rhs = 2.0 * (n - 1.0) * (n - 1.0) / n * integ(&|i| f.grad_u_qs[i]);
    (terms, rhs)
}

fn check_obata(m: &ConformalMetric, alpha: f64) -> Result<(), RigidityError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(RigidityError::Alpha(alpha));
    }
    let low = m.scalar_curvature().min();
    if low <= 0.0 {
        return Err(RigidityError::NonPositiveScalar(low));
    }
    Ok(())
}

/// Residuals of both identities, each normalised by its largest term.
pub fn obata_identity_residual(m: &ConformalMetric, alpha: f64) -> Result<ObataResidual, RigidityError> {
    check_obata(m, alpha)?;
    let f = obata_fields(m, alpha);
    let lemma = lemma_terms(m, &f, alpha);
    let (main, rhs) = main_terms(m, &f, alpha);
    Ok(ObataResidual {
        res_lemma: normalised(&lemma, 0.0),
        res_main: normalised(&main, rhs),
    })
}

/// `L0 = -Delta + a` with the background's conformal-Laplacian shift.
pub fn conformal_laplacian(bg: &Arc<Background>) -> SpectralOperator {
    let a = bg.conformal_laplacian_shift();
    SpectralOperator::new(bg, bg.eigenvalues().iter().map(|l| l + a).collect())
}

/// Minimum over nodes of `L0(u^t v^{1-t})`.
pub fn convexity_check(u: &Field, v: &Field, t: f64) -> Result<f64, RigidityError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RigidityError::Precondition(format!("t = {t} outside [0, 1]")));
    }
    if u.min() <= 0.0 || v.min() <= 0.0 {
        return Err(RigidityError::Precondition("factors must be positive".into()));
    }
    let op = conformal_laplacian(u.background());
    let lu = op.apply(u).min();
    let lv = op.apply(v).min();
    if lu < 0.0 || lv < 0.0 {
        return Err(RigidityError::Precondition(format!(
            "L0 u and L0 v must be nonnegative, got minima {lu:e}, {lv:e}"
        )));
    }
    let h = u.zip_map(v, |a, b| a.powf(t) * b.powf(1.0 - t));
    Ok(op.apply(&h).min())
}

/// Polynomial in one variable with rational coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalPoly(pub Vec<BigRational>);

impl RationalPoly {
    pub fn constant(c: BigRational) -> RationalPoly {
        RationalPoly(vec![c]).trimmed()
    }

    /// `a + b x`.
    pub fn linear(a: BigRational, b: BigRational) -> RationalPoly {
        RationalPoly(vec![a, b]).trimmed()
    }

    fn trimmed(mut self) -> RationalPoly {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, o: &RationalPoly) -> RationalPoly {
        let len = self.0.len().max(o.0.len());
        let zero = BigRational::zero();
        RationalPoly(
            (0..len)
                .map(|i| self.0.get(i).unwrap_or(&zero) + o.0.get(i).unwrap_or(&zero))
                .collect(),
        )
        .trimmed()
    }

    pub fn scale(&self, c: &BigRational) -> RationalPoly {
        RationalPoly(self.0.iter().map(|v| v * c).collect()).trimmed()
    }

    pub fn sub(&self, o: &RationalPoly) -> RationalPoly {
        self.add(&o.scale(&-BigRational::one()))
    }

    pub fn mul(&self, o: &RationalPoly) -> RationalPoly {
        if self.is_zero() || o.is_zero() {
            return RationalPoly(Vec::new());
        }
        let mut out = vec![BigRational::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        RationalPoly(out).trimmed()
    }

    pub fn derivative(&self) -> RationalPoly {
        RationalPoly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
                .collect(),
        )
        .trimmed()
    }

    pub fn eval(&self, x: &BigRational) -> BigRational {
        self.0
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, c| acc * x + c)
    }

    /// Remainder of Euclidean division by a nonzero divisor.
    pub fn rem(&self, d: &RationalPoly) -> RationalPoly {
        let dd = d.degree().expect("division by the zero polynomial");
        let lead = d.0[dd].clone();
        let mut r = self.clone();
        while let Some(rd) = r.degree() {
            if rd < dd {
                break;
            }
            let factor = &r.0[rd] / &lead;
            let shift = rd - dd;
            for (i, c) in d.0.iter().enumerate() {
                let v = &r.0[i + shift] - &factor * c;
                r.0[i + shift] = v;
            }
            r.0[rd] = BigRational::zero();
            r = r.trimmed();
        }
        r
    }

    /// Sturm chain `p, p', -rem(...)`.
    pub fn sturm_chain(&self) -> Vec<RationalPoly> {
        let mut chain = vec![self.clone(), self.derivative()];
        while let Some(last) = chain.last() {
            if last.is_zero() {
                chain.pop();
                break;
            }
            let prev = &chain[chain.len() - 2];
            let r = prev.rem(last).scale(&-BigRational::one());
            if r.is_zero() {
                break;
            }
            chain.push(r);
        }
        chain
    }

    /// Number of distinct real roots in `(a, b]`.
    pub fn count_roots(&self, a: &BigRational, b: &BigRational) -> usize {
        let chain = self.sturm_chain();
        sign_changes(&chain, a) - sign_changes(&chain, b)
    }

    /// Disjoint intervals `(lo, hi]` each containing one root in `(a, b]`.
    pub fn isolate_roots(&self, a: &BigRational, b: &BigRational) -> Vec<(BigRational, BigRational)> {
        let mut out = Vec::new();
        let mut stack = vec![(a.clone(), b.clone())];
        let two = BigRational::from_integer(BigInt::from(2));
        while let Some((lo, hi)) = stack.pop() {
            let k = self.count_roots(&lo, &hi);
            if k == 0 {
                continue;
            }
            if k == 1 {
                out.push((lo, hi));
                continue;
            }
            let mid = (&lo + &hi) / &two;
            stack.push((mid.clone(), hi));
            stack.push((lo, mid));
        }
        out.sort();
        out
    }
}

fn sign_changes(chain: &[RationalPoly], x: &BigRational) -> usize {
    let signs: Vec<i32> = chain
        .iter()
        .map(|p| p.eval(x))
        .filter(|v| !v.is_zero())
        .map(|v| if v.is_positive() { 1 } else { -1 })
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Exact coefficient polynomials in `alpha` for dimension `n`.
#[derive(Debug, Clone)]
pub struct ExactCoefficients {
    pub alpha1: BigRational,
    pub alpha2: BigRational,
    pub b: RationalPoly,
    pub c: RationalPoly,
    pub i: RationalPoly,
    pub e: RationalPoly,
}

impl ExactCoefficients {
    pub fn new(n: usize) -> ExactCoefficients {
        let nn = n as i64;
        let alpha1 = rat(4 * (nn - 1), (nn - 2) * (nn - 2));
        let alpha2 = rat(nn * nn - 4, 4 * (nn - 1) * nn);
        let one = BigRational::one();
        let nq = int(nn);
        let two_minus = RationalPoly::linear(int(2), -one.clone());
        let one_minus = RationalPoly::linear(one.clone(), -one.clone());
        let x = RationalPoly::linear(BigRational::zero(), one.clone());
        // 1/n + alpha2 (2 - alpha)(n - 1)/n
        let inner_b = RationalPoly::constant(one.clone() / &nq)
            .add(&two_minus.scale(&(&alpha2 * int(nn - 1) / &nq)));
        let b = inner_b
            .scale(&rat(2 * nn, (nn - 2) * (nn - 2)))
            .sub(&RationalPoly::constant(&alpha1 / int(2 * nn)));
        // 1 + alpha2 (2 - alpha)(n - 1)
        let inner_c = RationalPoly::constant(one.clone()).add(&two_minus.scale(&(&alpha2 * int(nn - 1))));
        let c = RationalPoly::constant(rat(nn - 1, nn - 2))
            .sub(&one_minus.mul(&inner_c).scale(&rat(2, nn - 2)));
        let i = one_minus
            .scale(&(&alpha1 * int(nn - 1) / &nq))
            .add(&x.mul(&b).scale(&int(2 * (nn - 1))));
        let e = RationalPoly(vec![
            int(4 * (nn - 2) * (nn - 2) * (3 * nn - 4)),
            int(8 * (nn * nn + nn - 4) * (nn * nn + 2 * nn - 4)),
            int(-(nn - 2) * (nn + 2) * (5 * nn * nn + 8 * nn - 20)),
            int((nn * nn - 4) * (nn * nn - 4)),
        ])
        .trimmed();
        ExactCoefficients {
            alpha1,
            alpha2,
            b,
            c,
            i,
            e,
        }
    }
}

/// Admissible interval of `A_alpha` at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub alpha: BigRational,
    pub lower: f64,
    pub upper: f64,
    /// Exact witness satisfying both conditions, if found.
    pub witness: Option<BigRational>,
    pub b_positive: bool,
}

/// Exact verification of the coefficient inequalities for one dimension.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub n: usize,
    pub identity_holds: bool,
    pub e_at_zero: BigRational,
    pub e_at_one: BigRational,
    pub roots_in_unit: Vec<(BigRational, BigRational)>,
    pub e_nonnegative: bool,
    pub c1: BigRational,
    pub i1: BigRational,
    pub c0: BigRational,
    pub i0: BigRational,
    pub windows: Vec<WindowSample>,
}

impl CertificateReport {
    pub fn all_windows_nonempty(&self) -> bool {
        self.windows.iter().all(|w| w.witness.is_some() && w.b_positive)
    }

    pub fn succeeded(&self) -> bool {
        self.identity_holds && self.e_nonnegative && self.all_windows_nonempty()
    }
}

impl fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[n = {}]", self.n)?;
        writeln!(f, "identity = {}", self.identity_holds)?;
        writeln!(f, "E(0) = {}", self.e_at_zero)?;
        writeln!(f, "E(1) = {}", self.e_at_one)?;
        writeln!(f, "roots_in_[0,1] = {}", self.roots_in_unit.len())?;
        for (lo, hi) in &self.roots_in_unit {
            writeln!(f, "  root in ({lo}, {hi}]")?;
        }
        writeln!(f, "E_nonnegative = {}", self.e_nonnegative)?;
        writeln!(f, "C1 = {}  I1 = {}  C0 = {}  I0 = {}", self.c1, self.i1, self.c0, self.i0)?;
        let filled = self.windows.iter().filter(|w| w.witness.is_some()).count();
        writeln!(f, "windows_nonempty = {}/{}", filled, self.windows.len())?;
        let step = (self.windows.len() / 4).max(1);
        let last = self.windows.len().saturating_sub(1);
        let shown = self
            .windows
            .iter()
            .enumerate()
            .filter(|(k, _)| k % step == 0 || *k == last)
            .map(|(_, w)| w);
        for w in shown {
            writeln!(
                f,
                "  alpha = {}  A in [{:.17e}, {:.17e}]  witness = {}",
                w.alpha,
                w.lower,
                w.upper,
                w.witness
                    .as_ref()
                    .map(|v| format!("{:.17e}", v.to_f64().unwrap_or(f64::NAN)))
                    .unwrap_or_else(|| "none".into())
            )?;
        }
        Ok(())
    }
}

/// Grid `k / (points)` for `k = 1..=points`, all in `(0, 1]`.
pub fn default_alpha_grid(points: usize) -> Vec<BigRational> {
    (1..=points as i64).map(|k| rat(k, points as i64)).collect()
}

fn exact_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(BigRational::zero)
}

/// Checks both conditions exactly for a candidate `A`.
fn conditions_hold(
    a: &BigRational,
    alpha: &BigRational,
    n: usize,
    alpha1: &BigRational,
    b: &BigRational,
    c_abs: &BigRational,
) -> bool {
    let nq = int(n as i64);
    let nm1 = int(n as i64 - 1);
    let one = BigRational::one();
    if a.is_negative() {
        return false;
    }
    // A^2 / (2 (n-1) alpha1) <= (1 - alpha) / (2n)
    let first = a * a * &nq <= (&one - alpha) * &nm1 * alpha1;
    // (|C| - A)^2 <= 2 alpha (n-1) B
    let diff = c_abs - a;
    let second = &diff * &diff <= int(2) * alpha * &nm1 * b;
    first && second
}

fn find_window(n: usize, alpha: &BigRational, co: &ExactCoefficients) -> WindowSample {
    let b = co.b.eval(alpha);
    let c_abs = co.c.eval(alpha).abs();
    let nf = n as f64;
    let af = alpha.to_f64().unwrap_or(f64::NAN);
    let bf = b.to_f64().unwrap_or(f64::NAN);
    let cf = c_abs.to_f64().unwrap_or(f64::NAN);
    let a1 = co.alpha1.to_f64().unwrap_or(f64::NAN);
    let x = ((1.0 - af) * (nf - 1.0) * a1 / nf).max(0.0).sqrt();
    let y = (2.0 * af * (nf - 1.0) * bf).max(0.0).sqrt();
    let lower = (cf - y).max(0.0);
    let upper = x.min(cf + y);
    let mut witness = None;
    let mut candidates = Vec::new();
    if x + y > 0.0 {
        candidates.push(cf * x / (x + y));
    }
    candidates.push(0.5 * (lower + upper));
    candidates.push(lower);
    candidates.push(upper);
    for cand in candidates {
        if !cand.is_finite() {
            continue;
        }
        let a = exact_from_f64(cand);
        if conditions_hold(&a, alpha, n, &co.alpha1, &b, &c_abs) {
            witness = Some(a);
            break;
        }
    }
    WindowSample {
        alpha: alpha.clone(),
        lower,
        upper,
        witness,
        b_positive: b.is_positive(),
    }
}

/// Exact certificate for dimension `n >= 5` over the given grid of `alpha`.
pub fn coefficient_certificate(n: usize, alpha_grid: &[BigRational]) -> Result<CertificateReport, RigidityError> {
    if n < 5 {
        return Err(RigidityError::Precondition(format!("certificate needs n >= 5, got {n}")));
    }
    let co = ExactCoefficients::new(n);
    let nn = n as i64;
    let one = BigRational::one();
    let zero = BigRational::zero();
    let lhs = co.i.sub(&co.c.mul(&co.c));
    let i1 = co.i.eval(&one);
    let c1 = co.c.eval(&one);
    let one_minus = RationalPoly::linear(one.clone(), -one.clone());
    let rhs = RationalPoly::constant(&i1 - &c1 * &c1)
        .add(&one_minus.mul(&co.e).scale(&rat(1, 4 * nn * nn * (nn - 2) * (nn - 2))));
    let identity_holds = lhs.sub(&rhs).is_zero();
    let e_at_zero = co.e.eval(&zero);
    let e_at_one = co.e.eval(&one);
    // roots in [0, 1]: (-tiny, 1] catches a root at 0 too
    let below = rat(-1, 1_000_000);
    let roots_in_unit = co.e.isolate_roots(&below, &one);
    let e_nonnegative = roots_in_unit.is_empty() && e_at_zero.is_positive();
    let windows = alpha_grid.iter().map(|a| find_window(n, a, &co)).collect();
    Ok(CertificateReport {
        n,
        identity_holds,
        e_at_zero,
        e_at_one,
        roots_in_unit,
        e_nonnegative,
        c1,
        i1,
        c0: co.c.eval(&zero),
        i0: co.i.eval(&zero),
        windows,
    })
}
