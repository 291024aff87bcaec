//! Energies, conformal quotients, sphere constants and Sobolev deficits.

use thiserror::Error;

use crate::curvature::{
    gjms_multipliers, paneitz_apply, r_eps_field, Convention, ConformalMetric, CurvatureError,
    EpsilonParams,
};
use crate::geometry::{einstein_q_coefficient, integrate, sphere_volume, Background, Field, SpectralOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("outside C1 cone: total scalar curvature {0:e} is not positive")]
    OutsideScalarCone(f64),
    #[error("outside admissible cone: lower-order curvature reaches {0:e}")]
    OutsideAdmissibleCone(f64),
    #[error("outside dual cone: Paneitz image reaches {0:e}")]
    OutsideDualCone(f64),
    #[error("sphere constants need n >= 5, got {0}")]
    DimensionTooSmall(usize),
    #[error("Sobolev orders must satisfy 1 <= l < k < n/2, got k = {k}, l = {l}, n = {n}")]
    Orders { k: usize, l: usize, n: usize },
    #[error("operation needs the round sphere background")]
    NotSphere,
    #[error("operation needs the exponential convention in dimension four")]
    NotDimFour,
    #[error("logarithm argument {0:e} is not positive")]
    LogArgument(f64),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

/// Closed-form constants of the round sphere `S^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsTable {
    pub n: usize,
    pub omega_n: f64,
    pub r0: f64,
    pub q0: f64,
    pub q_over_r: f64,
    pub y_sphere: f64,
    pub y_sigma2: f64,
    pub y_sigma2_over_sigma1: f64,
    pub y42: f64,
    pub d_n: f64,
    pub c_y42_vs_y: f64,
}

impl ConstantsTable {
    pub fn new(n: usize) -> Result<ConstantsTable, FunctionalError> {
        if n < 5 {
            return Err(FunctionalError::DimensionTooSmall(n));
        }
        let nf = n as f64;
        let w = sphere_volume(n);
        let r0 = nf * (nf - 1.0);
        let q0 = nf * (nf * nf - 4.0) / 8.0;
        Ok(ConstantsTable {
            n,
            omega_n: w,
            r0,
            q0,
            q_over_r: (nf * nf - 4.0) / (8.0 * (nf - 1.0)),
            y_sphere: nf * (nf - 2.0) * w.powf(2.0 / nf) / 4.0,
            y_sigma2: nf * (nf - 1.0) * w.powf(4.0 / nf) / 8.0,
            y_sigma2_over_sigma1: nf * (nf - 1.0) / 8.0 * w.powf(2.0 / (nf - 2.0))
                / (nf / 2.0).powf((nf - 4.0) / (nf - 2.0)),
            y42: (nf - 4.0) * (nf * nf - 4.0) * nf.powf(2.0 / (nf - 2.0))
                * (nf - 1.0).powf((4.0 - nf) / (nf - 2.0))
                * w.powf(2.0 / (nf - 2.0))
                / 16.0,
            d_n: einstein_q_coefficient(n),
            c_y42_vs_y: y42_vs_y_factor(n),
        })
    }
}

/// Factor `c(n)` with `Y42(S^n) = c(n) Y(S^n)^{n/(n-2)}`.
pub fn y42_vs_y_factor(n: usize) -> f64 {
    let nf = n as f64;
    (nf - 4.0) * (nf + 2.0)
        / (nf * (nf - 2.0).powf(2.0 / (nf - 2.0)) * (4.0 * (nf - 1.0)).powf((nf - 4.0) / (nf - 2.0)))
}

/// `Gamma(n/2 + k) / Gamma(n/2 - k)`, the GJMS multiplier on constants.
pub fn gjms_constant(n: usize, k: usize) -> f64 {
    let h = n as f64 / 2.0;
    (0..2 * k).map(|i| h - k as f64 + i as f64).product()
}

/// Sharp constant of the `(k, l)` Sobolev inequality on `S^n`.
pub fn sobolev_sharp_constant(n: usize, k: usize, l: usize) -> f64 {
    let nf = n as f64;
    let (kf, lf) = (k as f64, l as f64);
    gjms_constant(n, k)
        * gjms_constant(n, l).powf(-(nf - 2.0 * kf) / (nf - 2.0 * lf))
        * sphere_volume(n).powf(2.0 * (kf - lf) / (nf - 2.0 * lf))
}

fn dot_weighted(bg: &Background, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(bg.weights()).map(|((x, y), w)| x * y * w).sum()
}

/// `(int |f|^p dv0)^{2/p}`.
pub fn lp_norm_sq(f: &Field, p: f64) -> f64 {
    let bg = f.background();
    let s: f64 = f
        .values()
        .iter()
        .zip(bg.weights())
        .map(|(v, w)| v.abs().powf(p) * w)
        .sum();
    s.powf(2.0 / p)
}

/// `int u P0 u dv0` for the power-convention factor of the metric.
pub fn paneitz_energy(m: &ConformalMetric) -> f64 {
    let v = m.paneitz_factor();
    let pv = paneitz_apply(&v);
    dot_weighted(m.background(), v.values(), pv.values())
}

/// `int R_g dv_g`.
pub fn total_scalar(m: &ConformalMetric) -> f64 {
    m.integrate_g(m.scalar_curvature().values())
}

/// Gradient form of `int R^eps u^{-2(n-2)eps/(n-4)} dv_g`.
pub fn total_scalar_eps(m: &ConformalMetric, p: &EpsilonParams) -> f64 {
    let n = m.dim() as f64;
    let u = m.paneitz_factor();
    let du = u.derivative();
    let bg = m.background();
    let gf = bg.metric_factor();
    let r0 = bg.scalar_curvature();
    let e_grad = 2.0 / (n - 4.0) * (2.0 - (n - 2.0) * p.eps);
    let e_zero = 2.0 * (n - 2.0) * (1.0 - p.eps) / (n - 4.0);
    u.values()
        .iter()
        .zip(&du)
        .zip(&gf)
        .zip(bg.weights())
        .map(|(((v, d), g), w)| (p.h * g * d * d * v.powf(e_grad) + p.d * r0 * v.powf(e_zero)) * w)
        .sum()
}

/// Curvature-side evaluation of `int R^eps u^{-2(n-2)eps/(n-4)} dv_g`.
pub fn total_scalar_eps_quadrature(m: &ConformalMetric, p: &EpsilonParams) -> Result<f64, FunctionalError> {
    let re = r_eps_field(m, p)?;
    let s = p.weight_exponent();
    let vals: Vec<f64> = re
        .values()
        .iter()
        .zip(m.factor().values())
        .map(|(r, u)| r * u.powf(-s))
        .collect();
    Ok(m.integrate_g(&vals))
}

/// `J_eps = int R_g u^{-2(n-2)eps/(n-4)} dv_g`.
pub fn weighted_total_scalar(m: &ConformalMetric, p: &EpsilonParams) -> f64 {
    let s = p.weight_exponent();
    let u = m.paneitz_factor();
    let vals: Vec<f64> = m
        .scalar_curvature()
        .values()
        .iter()
        .zip(u.values())
        .map(|(r, u)| r * u.powf(-s))
        .collect();
    m.integrate_g(&vals)
}

/// `((n-4)/2) int Q dv_g / (int R dv_g)^{(n-4)/(n-2)}`.
pub fn quotient_i(m: &ConformalMetric) -> Result<f64, FunctionalError> {
    let n = m.dim();
    if n < 5 {
        return Err(FunctionalError::DimensionTooSmall(n));
    }
    let nf = n as f64;
    let j = total_scalar(m);
    if j <= 0.0 {
        return Err(FunctionalError::OutsideScalarCone(j));
    }
    let tq = m.integrate_g(m.q_curvature().values());
    Ok((nf - 4.0) / 2.0 * tq / j.powf((nf - 4.0) / (nf - 2.0)))
}

/// Perturbed quotient `E(u) / J_eps^{((n-4)/(n-2))/(1-eps)}`.
pub fn quotient_i_eps(m: &ConformalMetric, p: &EpsilonParams) -> Result<f64, FunctionalError> {
    let n = m.dim();
    if n < 5 {
        return Err(FunctionalError::DimensionTooSmall(n));
    }
    let nf = n as f64;
    let j = weighted_total_scalar(m, p);
    if j <= 0.0 {
        return Err(FunctionalError::OutsideScalarCone(j));
    }
    Ok(paneitz_energy(m) / j.powf((nf - 4.0) / (nf - 2.0) / (1.0 - p.eps)))
}

/// Deficit of the `(k, l)` GJMS Sobolev inequality on the round sphere.
pub fn sobolev_deficit(m: &ConformalMetric, k: usize, l: usize) -> Result<f64, FunctionalError> {
    let bg = m.background();
    if !bg.is_sphere() {
        return Err(FunctionalError::NotSphere);
    }
    let n = bg.dim();
    if l == 0 || l >= k || 2 * k >= n {
        return Err(FunctionalError::Orders { k, l, n });
    }
    let nf = n as f64;
    let factor_for = |order: usize| -> Field {
        let e = (nf - 2.0 * order as f64) / 2.0;
        if order == 2 && m.convention() == Convention::PowerN5plus {
            return m.factor().clone();
        }
        if order == 1 && m.convention() == Convention::PowerScalar {
            return m.factor().clone();
        }
        Field::new(bg, m.log_scale().iter().map(|p| (e * p).exp()).collect())
    };
    let uk = factor_for(k);
    let wl = factor_for(l);
    let lk = SpectralOperator::new(bg, gjms_multipliers(bg, k)?).apply(&uk);
    let ll = SpectralOperator::new(bg, gjms_multipliers(bg, l)?).apply(&wl);
    let lowest = ll.min();
    if lowest <= 0.0 {
        return Err(FunctionalError::OutsideAdmissibleCone(lowest));
    }
    let top = dot_weighted(bg, uk.values(), lk.values());
    let low = dot_weighted(bg, wl.values(), ll.values());
    let power = (nf - 2.0 * k as f64) / (nf - 2.0 * l as f64);
    Ok(top - sobolev_sharp_constant(n, k, l) * low.powf(power))
}

/// `int sigma_2 dv_g - Y_{sigma2/sigma1}(S^n) (int sigma_1 dv_g)^{(n-4)/(n-2)}`.
pub fn sigma2_sigma1_margin(m: &ConformalMetric) -> Result<f64, FunctionalError> {
    let n = m.dim();
    let table = ConstantsTable::new(n)?;
    let (s1, s2, _) = m.sigma_curvatures();
    let i1 = m.integrate_g(s1.values());
    if i1 <= 0.0 {
        return Err(FunctionalError::OutsideScalarCone(i1));
    }
    let i2 = m.integrate_g(s2.values());
    let nf = n as f64;
    Ok(i2 - table.y_sigma2_over_sigma1 * i1.powf((nf - 4.0) / (nf - 2.0)))
}

/// Hölder pair of the dual Paneitz quotients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityProduct {
    pub theta_hat: f64,
    pub ytilde_hat: f64,
    pub product: f64,
}

pub fn duality_product(u: &Field) -> Result<DualityProduct, FunctionalError> {
    let bg = u.background();
    let n = bg.dim();
    if n < 5 {
        return Err(FunctionalError::DimensionTooSmall(n));
    }
    let low = u.min();
    if low <= 0.0 {
        return Err(FunctionalError::OutsideDualCone(low));
    }
    let pu = paneitz_apply(u);
    let low = pu.min();
    if low <= 0.0 {
        return Err(FunctionalError::OutsideDualCone(low));
    }
    let nf = n as f64;
    let energy = dot_weighted(bg, u.values(), pu.values());
    let theta_hat = energy / lp_norm_sq(&pu, 2.0 * nf / (nf + 4.0));
    let ytilde_hat = energy / lp_norm_sq(u, 2.0 * nf / (nf - 4.0));
    Ok(DualityProduct {
        theta_hat,
        ytilde_hat,
        product: theta_hat * ytilde_hat,
    })
}

/// Yamabe quotient `int w L0 w dv0 / ||w||^2_{2n/(n-2)}`.
pub fn yamabe_quotient(w: &Field) -> f64 {
    let bg = w.background();
    let nf = bg.dim() as f64;
    let shift = bg.conformal_laplacian_shift();
    let mult = bg.eigenvalues().iter().map(|l| l + shift).collect();
    let lw = SpectralOperator::new(bg, mult).apply(w);
    dot_weighted(bg, w.values(), lw.values()) / lp_norm_sq(w, 2.0 * nf / (nf - 2.0))
}

/// `c(n) Yhat(w)^{n/(n-2)} - I(u)` with `w = u^{(n-2)/(n-4)}`.
pub fn y42_vs_y_gap(m: &ConformalMetric) -> Result<f64, FunctionalError> {
    let n = m.dim();
    if n < 5 {
        return Err(FunctionalError::DimensionTooSmall(n));
    }
    let low = m.scalar_curvature().min();
    if low <= 0.0 {
        return Err(FunctionalError::OutsideScalarCone(low));
    }
    let nf = n as f64;
    let y = yamabe_quotient(&m.yamabe_factor());
    Ok(y42_vs_y_factor(n) * y.powf(nf / (nf - 2.0)) - quotient_i(m)?)
}

/// `int R_u dv_u` in gradient form for the exponential convention.
pub fn dim4_total_scalar(u: &Field) -> f64 {
    let bg = u.background();
    let du = u.derivative();
    let gf = bg.metric_factor();
    let r0 = bg.scalar_curvature();
    u.values()
        .iter()
        .zip(&du)
        .zip(&gf)
        .zip(bg.weights())
        .map(|(((v, d), g), w)| (6.0 * g * d * d + r0) * (2.0 * v).exp() * w)
        .sum()
}

/// The four-dimensional functional `F[u]`.
pub fn dim4_functional(m: &ConformalMetric) -> Result<f64, FunctionalError> {
    if m.convention() != Convention::Exponential4 {
        return Err(FunctionalError::NotDimFour);
    }
    let u = m.factor();
    let bg = m.background();
    let q0 = bg.q_curvature();
    let total_q0 = q0 * bg.volume();
    let r0 = bg.scalar_curvature();
    let du = u.derivative();
    let gf = bg.metric_factor();
    // ratio - 1 accumulated directly so that F keeps relative accuracy near u = 0
    let excess: f64 = u
        .values()
        .iter()
        .zip(&du)
        .zip(&gf)
        .zip(bg.weights())
        .map(|(((v, d), g), w)| (6.0 * g * d * d * (2.0 * v).exp() + r0 * (2.0 * v).exp_m1()) * w)
        .sum::<f64>()
        / (r0 * bg.volume());
    if !(excess > -1.0) {
        return Err(FunctionalError::LogArgument(1.0 + excess));
    }
    let pu = paneitz_apply(u);
    Ok(dot_weighted(bg, u.values(), pu.values()) + 2.0 * q0 * integrate(u) - total_q0 * excess.ln_1p())
}
