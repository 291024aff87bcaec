//! Conformal transformation laws for zonal conformal factors.
//!
//! Every convention is reduced internally to a log-scale `phi` with
//! `g = e^{2 phi} g0`; curvature fields are computed once at construction.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{einstein_q_coefficient, integrate_values, laplacian_g0, Background, Field, SpectralOperator};

/// Relative size of a negative Einstein-route `|E|^2` that is reported as an error.
pub const INCONSISTENCY_TOL: f64 = 1e-5;

/// Nodes below this value make a power-type factor inadmissible.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("convention {convention:?} is not available in dimension {n}")]
    ConventionMismatch { convention: Convention, n: usize },
    #[error("conformal factor drops to {min:e} at node {node}; positivity lost")]
    NonPositive { min: f64, node: usize },
    #[error("conformal factor has non-finite values")]
    NonFinite,
    #[error("kernel violation: input has mean {0:e} but the Paneitz kernel is the constants")]
    KernelViolation(f64),
    #[error("operator has a zero multiplier at degree {0}")]
    Singular(usize),
    #[error("GJMS order {k} must satisfy 1 <= k < n/2 with n = {n}")]
    GjmsOrder { k: usize, n: usize },
    #[error("operation needs the round sphere background")]
    NotSphere,
    #[error("curvature inconsistency: |E|^2 reaches {0:e}")]
    CurvatureInconsistency(f64),
    #[error("Mobius parameter {0} is outside (-1, 1)")]
    MobiusParameter(f64),
    #[error("epsilon {eps} is outside (0, {max})")]
    EpsilonRange { eps: f64, max: f64 },
    #[error("operation needs n >= 5 and the power convention")]
    NeedsPowerConvention,
    #[error("maximum principle violated: preimage of a positive field has minimum {0:e}")]
    MaximumPrinciple(f64),
}

/// How the conformal factor parametrises the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `g = u^{4/(n-4)} g0`, any `n != 4` (for `n = 3` this is `u^{-4} g0`).
    PowerN5plus,
    /// `g = e^{2u} g0`, `n = 4`.
    Exponential4,
    /// `g = w^{4/(n-2)} g0`.
    PowerScalar,
}

impl Convention {
    /// `d phi / d log(factor)` for the power conventions.
    fn log_weight(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Convention::PowerN5plus => 2.0 / (n - 4.0),
            Convention::PowerScalar => 2.0 / (n - 2.0),
            Convention::Exponential4 => 1.0,
        }
    }
}

/// Multipliers of the Paneitz operator of an Einstein background.
pub fn paneitz_multipliers(bg: &Background) -> Vec<f64> {
    let (first, zeroth) = paneitz_coefficients(bg);
    bg.eigenvalues()
        .iter()
        .map(|&l| l * l + first * l + zeroth)
        .collect()
}

/// `(c1, c0)` with `P0 = Delta^2 - c1 Delta + c0`.
fn paneitz_coefficients(bg: &Background) -> (f64, f64) {
    let n = bg.dim() as f64;
    let sigma1 = bg.scalar_curvature() / (2.0 * (n - 1.0));
    let first = (n - 2.0) * sigma1 - 4.0 * bg.schouten_coeff();
    let zeroth = if bg.dim() == 4 {
        0.0
    } else {
        (n - 4.0) / 2.0 * bg.q_curvature()
    };
    (first, zeroth)
}

pub fn paneitz_operator(bg: &Arc<Background>) -> SpectralOperator {
    SpectralOperator::new(bg, paneitz_multipliers(bg))
}

pub fn paneitz_apply(f: &Field) -> Field {
    paneitz_operator(f.background()).apply(f)
}

/// Inverse Paneitz operator; in dimension four the input must have mean zero.
pub fn paneitz_invert(f: &Field) -> Result<Field, CurvatureError> {
    let bg = f.background();
    let op = paneitz_operator(bg);
    if bg.dim() == 4 {
        let mean = integrate_values(bg, f.values()) / bg.volume();
        if mean.abs() > 1e-10 * f.max_abs().max(1.0) {
            return Err(CurvatureError::KernelViolation(mean));
        }
    } else if let Some(l) = op.multipliers().iter().position(|m| *m == 0.0) {
        return Err(CurvatureError::Singular(l));
    }
    Ok(op.apply_inverse(f))
}

/// Paneitz preimage of a positive field, with the maximum-principle monitor.
pub fn paneitz_preimage_positive(f: &Field) -> Result<Field, CurvatureError> {
    let u = paneitz_invert(f)?;
    let bg = f.background();
    if bg.q_curvature() >= 0.0 && bg.scalar_curvature() > 0.0 && f.min() > 0.0 && bg.dim() != 4 {
        let m = u.min();
        if m <= 0.0 {
            return Err(CurvatureError::MaximumPrinciple(m));
        }
    }
    Ok(u)
}

/// Multipliers of the order-`2k` GJMS operator on the round sphere.
pub fn gjms_multipliers(bg: &Background, k: usize) -> Result<Vec<f64>, CurvatureError> {
    if !bg.is_sphere() {
        return Err(CurvatureError::NotSphere);
    }
    let n = bg.dim();
    if k == 0 || 2 * k >= n {
        return Err(CurvatureError::GjmsOrder { k, n });
    }
    let nf = n as f64;
    Ok(bg
        .eigenvalues()
        .iter()
        .map(|&l| {
            (1..=k)
                .map(|j| {
                    let j = j as f64;
                    l + (nf - 2.0 * j) * (nf + 2.0 * j - 2.0) / 4.0
                })
                .product()
        })
        .collect())
}

pub fn gjms_apply(k: usize, f: &Field) -> Result<Field, CurvatureError> {
    let bg = f.background();
    Ok(SpectralOperator::new(bg, gjms_multipliers(bg, k)?).apply(f))
}

/// Perturbation parameters of the subcritical problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonParams {
    pub n: usize,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub d: f64,
}

impl EpsilonParams {
    pub fn new(n: usize, eps: f64) -> Result<EpsilonParams, CurvatureError> {
        let max = 2.0 / (n as f64 - 2.0);
        if n < 5 || !(eps > 0.0 && eps < max) {
            return Err(CurvatureError::EpsilonRange { eps, max });
        }
        Ok(EpsilonParams::unchecked(n, eps))
    }

    /// The unperturbed problem, `eps = 0`.
    pub fn zero(n: usize) -> EpsilonParams {
        EpsilonParams::unchecked(n, 0.0)
    }

    fn unchecked(n: usize, eps: f64) -> EpsilonParams {
        let nf = n as f64;
        let k = (nf - 4.0) * (nf - 4.0);
        EpsilonParams {
            n,
            eps,
            a: 2.0 * (nf - 2.0) * (nf - 2.0) * eps * (1.0 - 2.0 * eps) / k,
            b: (nf - 2.0) * eps / (2.0 * (nf - 1.0)),
            h: (1.0 - 2.0 * eps) * (1.0 - eps) * 4.0 * (nf - 1.0) * (nf - 2.0) / k,
            d: 1.0 - eps,
        }
    }

    /// Exponent `2(n-2)eps/(n-4)` of the weight `u^{-...}`.
    pub fn weight_exponent(&self) -> f64 {
        let nf = self.n as f64;
        2.0 * (nf - 2.0) * self.eps / (nf - 4.0)
    }
}

/// Traceless Ricci data of a zonal conformal metric.
#[derive(Debug, Clone)]
pub struct TracelessRicci {
    /// `E(e, e)` for the unit radial vector `e` of `g`.
    pub radial: Vec<f64>,
    /// `|E|_g^2` from the Hessian of the log-scale.
    pub norm_sq: Vec<f64>,
}

/// A background together with a positive conformal factor and its curvatures.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    bg: Arc<Background>,
    convention: Convention,
    factor: Field,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    d2phi: Vec<f64>,
    lap_phi: Vec<f64>,
    scalar: Field,
    q: Field,
    lap_g_scalar: Field,
    e_sq: Field,
}

impl ConformalMetric {
    pub fn new(factor: Field, convention: Convention) -> Result<ConformalMetric, CurvatureError> {
        let bg = Arc::clone(factor.background());
        let n = bg.dim();
        let ok = match convention {
            Convention::PowerN5plus => n != 4,
            Convention::Exponential4 => n == 4,
            Convention::PowerScalar => true,
        };
        if !ok {
            return Err(CurvatureError::ConventionMismatch { convention, n });
        }
        if !factor.is_finite() {
            return Err(CurvatureError::NonFinite);
        }
        if convention != Convention::Exponential4 {
            let (node, min) = factor
                .values()
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
            if min < POSITIVITY_FLOOR {
                return Err(CurvatureError::NonPositive { min, node });
            }
        }
        let factor = factor.to_spectral();
        let k = convention.log_weight(n);
        // Differentiating the log-scale itself avoids the dynamic range of the factor.
        let log_field = match convention {
            Convention::Exponential4 => factor.clone(),
            _ => factor.map(|v| k * v.ln()).to_spectral(),
        };
        let phi = log_field.values().to_vec();
        let dphi = log_field.derivative();
        let d2phi = log_field.second_derivative();
        let m = bg.symmetric_dim() as f64;
        let r2 = bg.radius() * bg.radius();
        let lap_phi: Vec<f64> = bg
            .nodes()
            .iter()
            .zip(dphi.iter().zip(&d2phi))
            .map(|(x, (d, d2))| ((1.0 - x * x) * d2 - m * x * d) / r2)
            .collect();
        let gf = bg.metric_factor();
        let nf = n as f64;
        let r0 = bg.scalar_curvature();
        let scalar: Vec<f64> = (0..phi.len())
            .map(|i| {
                let grad = gf[i] * dphi[i] * dphi[i];
                (-2.0 * phi[i]).exp()
                    * (r0 - 2.0 * (nf - 1.0) * lap_phi[i] - (nf - 2.0) * (nf - 1.0) * grad)
            })
            .collect();
        let scalar = Field::new(&bg, scalar);

        let pan = paneitz_operator(&bg);
        let q = if n == 4 {
            let psi = match convention {
                Convention::Exponential4 => factor.clone(),
                _ => log_field.clone(),
            };
            let p = pan.apply(&psi);
            let q0 = bg.q_curvature();
            Field::new(
                &bg,
                p.values()
                    .iter()
                    .zip(&phi)
                    .map(|(pv, ph)| (-4.0 * ph).exp() * (pv + q0))
                    .collect(),
            )
        } else {
            // With u = e^w and w = (n-4) phi / 2, e^{-w} Delta e^w = A := Delta w + |grad w|^2
            // and e^{-w} Delta^2 e^w = Delta A + 2 <grad w, grad A> + A^2.
            let half = (nf - 4.0) / 2.0;
            let a = Field::new(
                &bg,
                (0..phi.len())
                    .map(|i| half * lap_phi[i] + half * half * gf[i] * dphi[i] * dphi[i])
                    .collect(),
            )
            .to_spectral();
            let lap_a = laplacian_g0(&a);
            let da = a.derivative();
            let (first, zeroth) = paneitz_coefficients(&bg);
            Field::new(
                &bg,
                (0..phi.len())
                    .map(|i| {
                        let av = a.values()[i];
                        let ratio = lap_a.values()[i] + 2.0 * gf[i] * half * dphi[i] * da[i] + av * av
                            - first * av
                            + zeroth;
                        2.0 / (nf - 4.0) * (-4.0 * phi[i]).exp() * ratio
                    })
                    .collect(),
            )
        };

        let mut metric = ConformalMetric {
            bg: Arc::clone(&bg),
            convention,
            factor,
            phi,
            dphi,
            d2phi,
            lap_phi,
            scalar: scalar.clone(),
            q,
            lap_g_scalar: Field::constant(&bg, 0.0),
            e_sq: Field::constant(&bg, 0.0),
        };
        let lap_r = metric.laplacian_g(&scalar.to_spectral());
        let dn = einstein_q_coefficient(n);
        let weight = (nf - 2.0) * (nf - 2.0) / 2.0;
        // The three terms cancel, so noise is measured against their size.
        let scale = (0..lap_r.values().len())
            .map(|i| {
                let r = scalar.values()[i];
                weight * (metric.q.values()[i].abs() + lap_r.values()[i].abs() / (2.0 * (nf - 1.0)) + dn * r * r)
            })
            .fold(scalar.max_abs().powi(2), f64::max)
            .max(1.0);
        let mut e_sq = Vec::with_capacity(lap_r.values().len());
        for i in 0..lap_r.values().len() {
            let r = scalar.values()[i];
            let e = weight * (-metric.q.values()[i] - lap_r.values()[i] / (2.0 * (nf - 1.0)) + dn * r * r);
            if e < -INCONSISTENCY_TOL * scale {
                return Err(CurvatureError::CurvatureInconsistency(e));
            }
            e_sq.push(e.max(0.0));
        }
        metric.lap_g_scalar = lap_r;
        metric.e_sq = Field::new(&bg, e_sq);
        Ok(metric)
    }

    pub fn background(&self) -> &Arc<Background> {
        &self.bg
    }
    pub fn convention(&self) -> Convention {
        self.convention
    }
    pub fn dim(&self) -> usize {
        self.bg.dim()
    }
    /// The conformal factor in the metric's own convention.
    pub fn factor(&self) -> &Field {
        &self.factor
    }
    /// `phi` with `g = e^{2 phi} g0`.
    pub fn log_scale(&self) -> &[f64] {
        &self.phi
    }
    pub fn log_scale_derivative(&self) -> &[f64] {
        &self.dphi
    }
    pub fn log_scale_laplacian(&self) -> &[f64] {
        &self.lap_phi
    }
    pub fn scalar_curvature(&self) -> &Field {
        &self.scalar
    }
    pub fn q_curvature(&self) -> &Field {
        &self.q
    }
    /// `Delta_g R_g`.
    pub fn scalar_laplacian(&self) -> &Field {
        &self.lap_g_scalar
    }
    /// `|E|_g^2` recovered from the Q-curvature identity.
    pub fn traceless_ricci_sq(&self) -> &Field {
        &self.e_sq
    }

    /// Density of `dv_g` against `dv_0`.
    pub fn volume_density(&self) -> Vec<f64> {
        let n = self.dim() as f64;
        self.phi.iter().map(|p| (n * p).exp()).collect()
    }

    /// `int f dv_g`.
    pub fn integrate_g(&self, values: &[f64]) -> f64 {
        let n = self.dim() as f64;
        values
            .iter()
            .zip(&self.phi)
            .zip(self.bg.weights())
            .map(|((v, p), w)| v * (n * p).exp() * w)
            .sum()
    }

    pub fn volume(&self) -> f64 {
        self.integrate_g(&vec![1.0; self.phi.len()])
    }

    /// Factor of the power convention, `e^{(n-4) phi / 2}`.
    pub fn paneitz_factor(&self) -> Field {
        if self.convention == Convention::PowerN5plus {
            return self.factor.clone();
        }
        let n = self.dim() as f64;
        Field::new(&self.bg, self.phi.iter().map(|p| ((n - 4.0) * p / 2.0).exp()).collect())
    }

    /// Factor of the scalar convention, `e^{(n-2) phi / 2}`.
    pub fn yamabe_factor(&self) -> Field {
        if self.convention == Convention::PowerScalar {
            return self.factor.clone();
        }
        let n = self.dim() as f64;
        Field::new(&self.bg, self.phi.iter().map(|p| ((n - 2.0) * p / 2.0).exp()).collect())
    }

    /// Gradient inner product with respect to `g` of two zonal fields.
    pub fn grad_dot_g(&self, a: &Field, b: &Field) -> Vec<f64> {
        let da = a.derivative();
        let db = b.derivative();
        let gf = self.bg.metric_factor();
        (0..gf.len())
            .map(|i| (-2.0 * self.phi[i]).exp() * gf[i] * da[i] * db[i])
            .collect()
    }

    /// Laplace-Beltrami operator of `g` applied to a zonal field.
    pub fn laplacian_g(&self, f: &Field) -> Field {
        let n = self.dim() as f64;
        let c = f.coeffs();
        let lap0: Vec<f64> = self
            .bg
            .synthesize(&c.iter().zip(self.bg.eigenvalues()).map(|(c, l)| -c * l).collect::<Vec<_>>());
        let df = self.bg.synthesize_derivative(&c);
        let gf = self.bg.metric_factor();
        Field::new(
            &self.bg,
            (0..gf.len())
                .map(|i| {
                    (-2.0 * self.phi[i]).exp()
                        * (lap0[i] + (n - 2.0) * gf[i] * self.dphi[i] * df[i])
                })
                .collect(),
        )
    }

    /// Traceless Ricci tensor computed from the Hessian of the log-scale.
    pub fn traceless_ricci(&self) -> TracelessRicci {
        let n = self.dim();
        let nf = n as f64;
        let m = self.bg.symmetric_dim();
        let mf = m as f64;
        let r2 = self.bg.radius() * self.bg.radius();
        let mut radial = Vec::with_capacity(self.phi.len());
        let mut norm_sq = Vec::with_capacity(self.phi.len());
        for (i, &x) in self.bg.nodes().iter().enumerate() {
            let s = 1.0 - x * x;
            let d = self.dphi[i];
            let t1 = (s * self.d2phi[i] - x * d - s * d * d) / r2;
            let t2 = -x * d / r2;
            let tr = t1 + (mf - 1.0) * t2;
            let c = -(nf - 2.0) * (-2.0 * self.phi[i]).exp();
            let e1 = c * (t1 - tr / nf);
            let e2 = c * (t2 - tr / nf);
            let e3 = c * (-tr / nf);
            radial.push(e1);
            norm_sq.push(e1 * e1 + (mf - 1.0) * e2 * e2 + (nf - mf) * e3 * e3);
        }
        TracelessRicci { radial, norm_sq }
    }

    /// `(sigma_1, sigma_2, |E|^2)` of the Schouten tensor.
    pub fn sigma_curvatures(&self) -> (Field, Field, Field) {
        let n = self.dim() as f64;
        let s1 = self.scalar.map(|r| r / (2.0 * (n - 1.0)));
        let s2 = s1.zip_map(&self.e_sq, |s, e| {
            let a_sq = e / ((n - 2.0) * (n - 2.0)) + s * s / n;
            0.5 * (s * s - a_sq)
        });
        (s1, s2, self.e_sq.clone())
    }

    /// Paneitz operator of `g` applied to a zonal field, from its divergence form.
    pub fn paneitz_g_apply(&self, f: &Field) -> Field {
        let n = self.dim() as f64;
        let f = f.to_spectral();
        let lap = self.laplacian_g(&f).to_spectral();
        let lap2 = self.laplacian_g(&lap);
        let e = self.traceless_ricci();
        let s1: Vec<f64> = self.scalar.values().iter().map(|r| r / (2.0 * (n - 1.0))).collect();
        // radial Schouten component minus the trace term
        let coeff: Vec<f64> = e
            .radial
            .iter()
            .zip(&s1)
            .map(|(e, s)| 4.0 * (e / (n - 2.0) + s / n) - (n - 2.0) * s)
            .collect();
        let coeff_field = Field::new(&self.bg, coeff.clone());
        let cross = self.grad_dot_g(&coeff_field, &f);
        let zeroth = if self.dim() == 4 { 0.0 } else { (n - 4.0) / 2.0 };
        Field::new(
            &self.bg,
            (0..coeff.len())
                .map(|i| {
                    lap2.values()[i]
                        + coeff[i] * lap.values()[i]
                        + cross[i]
                        + zeroth * self.q.values()[i] * f.values()[i]
                })
                .collect(),
        )
    }
}

/// Scalar curvature of the metric.
pub fn scalar_curvature(m: &ConformalMetric) -> Field {
    m.scalar_curvature().clone()
}

/// Q-curvature of the metric.
pub fn q_curvature(m: &ConformalMetric) -> Field {
    m.q_curvature().clone()
}

pub fn sigma_curvatures(m: &ConformalMetric) -> (Field, Field, Field) {
    m.sigma_curvatures()
}

/// Pullback by the axis Mobius map `mu -> (mu + b)/(1 + b mu)`.
pub fn conformal_pullback(m: &ConformalMetric, b: f64) -> Result<ConformalMetric, CurvatureError> {
    if !(b.abs() < 1.0) {
        return Err(CurvatureError::MobiusParameter(b));
    }
    let bg = m.background();
    if !bg.is_sphere() {
        return Err(CurvatureError::NotSphere);
    }
    let n = bg.dim() as f64;
    let coeffs = m.factor().coeffs();
    let conv = m.convention();
    let values = bg
        .nodes()
        .iter()
        .map(|&x| {
            let moved = (x + b) / (1.0 + b * x);
            let psi = (1.0 - b * b).sqrt() / (1.0 + b * x);
            let f = bg.evaluate(&coeffs, moved);
            match conv {
                Convention::PowerN5plus => psi.powf((n - 4.0) / 2.0) * f,
                Convention::PowerScalar => psi.powf((n - 2.0) / 2.0) * f,
                Convention::Exponential4 => f + psi.ln(),
            }
        })
        .collect();
    ConformalMetric::new(Field::new(bg, values), conv)
}

/// The perturbed scalar curvature `R^eps` of a power-convention metric.
pub fn r_eps_field(m: &ConformalMetric, p: &EpsilonParams) -> Result<Field, CurvatureError> {
    let n = m.dim();
    if n < 5 || m.convention() != Convention::PowerN5plus {
        return Err(CurvatureError::NeedsPowerConvention);
    }
    let nf = n as f64;
    let u = m.factor();
    let du = u.derivative();
    let gf = m.background().metric_factor();
    let r0 = m.background().scalar_curvature();
    let ka = 2.0 * (nf - 1.0) * p.a / (nf - 2.0);
    let kb = 2.0 * (nf - 1.0) * p.b / (nf - 2.0);
    let e = -4.0 / (nf - 4.0);
    Ok(Field::new(
        m.background(),
        (0..gf.len())
            .map(|i| {
                let ui = u.values()[i];
                (1.0 - 2.0 * p.eps) * m.scalar_curvature().values()[i]
                    + ka * ui.powf(e - 2.0) * gf[i] * du[i] * du[i]
                    + kb * r0 * ui.powf(e)
            })
            .collect(),
    ))
}
