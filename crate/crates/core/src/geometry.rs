//! Symmetric backgrounds and zonal calculus.
//!
//! A zonal field depends on one latitude `mu = cos(theta)` of a round factor
//! `S^m(r)`. Integration uses Gauss quadrature against `(1 - mu^2)^((m-2)/2)`
//! and the spectral basis is the orthonormal ultraspherical family, which
//! diagonalises the Laplace-Beltrami operator on zonal functions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension {0} is below 3")]
    DimensionTooSmall(usize),
    #[error("truncation degree {0} is below 8")]
    DegreeTooSmall(usize),
    #[error("{nodes} nodes alias degree {degree}; need at least {needed}")]
    TooFewNodes {
        nodes: usize,
        degree: usize,
        needed: usize,
    },
    #[error("product factors need dimension at least 2, got ({p}, {q})")]
    FactorTooSmall { p: usize, q: usize },
    #[error("factor dimensions {p} + {q} do not add up to n = {n}")]
    DimensionMismatch { n: usize, p: usize, q: usize },
    #[error("radii ({r1}, {r2}) do not satisfy the Einstein matching (p-1)/r1^2 = (q-1)/r2^2")]
    NotEinstein { r1: f64, r2: f64 },
}

/// Which symmetric model a background is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackgroundKind {
    RoundSphere,
    /// `S^p(r1) x S^q(r2)`; fields depend on the latitude of the first factor.
    EinsteinProduct { p: usize, q: usize, radii: (f64, f64) },
}

impl fmt::Display for BackgroundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundKind::RoundSphere => write!(f, "sphere"),
            BackgroundKind::EinsteinProduct { p, q, radii } => {
                write!(f, "product({},{},{},{})", p, q, radii.0, radii.1)
            }
        }
    }
}

/// Volume of the unit round sphere `S^n`.
pub fn sphere_volume(n: usize) -> f64 {
    let half = (n as f64 + 1.0) / 2.0;
    2.0 * PI.powf(half) / gamma(half)
}

/// Coefficient of `R^2` in the Einstein part of the Q-curvature.
pub fn einstein_q_coefficient(n: usize) -> f64 {
    let n = n as f64;
    (n * n - 4.0) / (8.0 * n * (n - 1.0) * (n - 1.0))
}

/// Immutable grid, constants and basis tables for one symmetric background.
#[derive(Debug, Clone)]
pub struct Background {
    n: usize,
    kind: BackgroundKind,
    degree: usize,
    sym_dim: usize,
    radius: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    volume: f64,
    r0: f64,
    q0: f64,
    schouten_coeff: f64,
    eigs: Vec<f64>,
    // off-diagonal entries of the Jacobi matrix, index k couples degrees k-1 and k
    jacobi: Vec<f64>,
    // node-major tables of basis values and mu-derivatives, shape N x (L+1)
    basis: Vec<f64>,
    dbasis: Vec<f64>,
    d2basis: Vec<f64>,
}

/// Builds a background with `nodes` quadrature points and spectral degree `degree`.
pub fn build_background(
    n: usize,
    kind: BackgroundKind,
    nodes: usize,
    degree: usize,
) -> Result<Arc<Background>, GeometryError> {
    if n < 3 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    if degree < 8 {
        return Err(GeometryError::DegreeTooSmall(degree));
    }
    let needed = 2 * degree + 2;
    if nodes < needed {
        return Err(GeometryError::TooFewNodes {
            nodes,
            degree,
            needed,
        });
    }
    let (sym_dim, radius, r0, volume) = match kind {
        BackgroundKind::RoundSphere => {
            let nf = n as f64;
            (n, 1.0, nf * (nf - 1.0), sphere_volume(n))
        }
        BackgroundKind::EinsteinProduct { p, q, radii } => {
            if p < 2 || q < 2 {
                return Err(GeometryError::FactorTooSmall { p, q });
            }
            if p + q != n {
                return Err(GeometryError::DimensionMismatch { n, p, q });
            }
            let (r1, r2) = radii;
            if !(r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
                return Err(GeometryError::NotEinstein { r1, r2 });
            }
            let k1 = (p as f64 - 1.0) / (r1 * r1);
            let k2 = (q as f64 - 1.0) / (r2 * r2);
            if (k1 - k2).abs() > 1e-12 * k1.abs().max(k2.abs()) {
                return Err(GeometryError::NotEinstein { r1, r2 });
            }
            let r0 = p as f64 * k1 + q as f64 * k2;
            let vol = sphere_volume(p) * r1.powi(p as i32) * sphere_volume(q) * r2.powi(q as i32);
            (p, r1, r0, vol)
        }
    };
    let nf = n as f64;
    let q0 = einstein_q_coefficient(n) * r0 * r0;
    let schouten_coeff = r0 / (2.0 * nf * (nf - 1.0));

    let lam = (sym_dim as f64 - 1.0) / 2.0;
    let top = nodes.max(degree + 1) + 1;
    let jacobi: Vec<f64> = (0..=top)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                let k = k as f64;
                (k * (k + 2.0 * lam - 1.0) / (4.0 * (k + lam) * (k + lam - 1.0))).sqrt()
            }
        })
        .collect();

    let (mu, weights) = gauss_rule(nodes, &jacobi, volume);
    let eigs = (0..=degree)
        .map(|l| {
            let l = l as f64;
            l * (l + sym_dim as f64 - 1.0) / (radius * radius)
        })
        .collect();

    let width = degree + 1;
    let mut basis = vec![0.0; nodes * width];
    let mut dbasis = vec![0.0; nodes * width];
    let mut d2basis = vec![0.0; nodes * width];
    let p0 = 1.0 / volume.sqrt();
    for (i, &x) in mu.iter().enumerate() {
        let row = i * width;
        let (v, d, d2) = orthonormal_table(x, degree, &jacobi, p0);
        basis[row..row + width].copy_from_slice(&v);
        dbasis[row..row + width].copy_from_slice(&d);
        d2basis[row..row + width].copy_from_slice(&d2);
    }

    Ok(Arc::new(Background {
        n,
        kind,
        degree,
        sym_dim,
        radius,
        nodes: mu,
        weights,
        volume,
        r0,
        q0,
        schouten_coeff,
        eigs,
        jacobi,
        basis,
        dbasis,
        d2basis,
    }))
}

/// Values, first and second derivatives of the orthonormal family up to `degree`.
fn orthonormal_table(x: f64, degree: usize, jacobi: &[f64], p0: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; degree + 1];
    let mut d = vec![0.0; degree + 1];
    let mut d2 = vec![0.0; degree + 1];
    v[0] = p0;
    if degree >= 1 {
        v[1] = x * p0 / jacobi[1];
        d[1] = p0 / jacobi[1];
    }
    for k in 1..degree {
        let b_next = jacobi[k + 1];
        let b = jacobi[k];
        v[k + 1] = (x * v[k] - b * v[k - 1]) / b_next;
        d[k + 1] = (v[k] + x * d[k] - b * d[k - 1]) / b_next;
        d2[k + 1] = (2.0 * d[k] + x * d2[k] - b * d2[k - 1]) / b_next;
    }
    (v, d, d2)
}

/// Value and derivative of the degree-`k` orthonormal polynomial (unit mass).
fn orthonormal_with_derivative(x: f64, k: usize, jacobi: &[f64]) -> (f64, f64) {
    let (mut pm, mut p) = (0.0, 1.0);
    let (mut dm, mut dp) = (0.0, 0.0);
    for j in 0..k {
        let b = jacobi[j];
        let pn = (x * p - b * pm) / jacobi[j + 1];
        let dn = (p + x * dp - b * dm) / jacobi[j + 1];
        pm = p;
        p = pn;
        dm = dp;
        dp = dn;
    }
    (p, dp)
}

/// Golub-Welsch nodes polished by Newton, Christoffel weights scaled to `mass`.
fn gauss_rule(count: usize, jacobi: &[f64], mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut t = DMatrix::<f64>::zeros(count, count);
    for k in 1..count {
        t[(k - 1, k)] = jacobi[k];
        t[(k, k - 1)] = jacobi[k];
    }
    let eig = SymmetricEigen::new(t);
    let mut x: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = orthonormal_with_derivative(*xi, count, jacobi);
            if dp != 0.0 {
                let step = p / dp;
                if step.abs() < 1e-6 {
                    *xi -= step;
                }
            }
        }
    }
    let w = x
        .iter()
        .map(|&xi| {
            let (v, _, _) = orthonormal_table(xi, count - 1, jacobi, 1.0);
            mass / v.iter().map(|p| p * p).sum::<f64>()
        })
        .collect();
    (x, w)
}

impl Background {
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }
    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, BackgroundKind::RoundSphere)
    }
    /// Number of quadrature nodes.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
    /// Spectral truncation degree `L`.
    pub fn degree(&self) -> usize {
        self.degree
    }
    /// Dimension of the round factor carrying the latitude.
    pub fn symmetric_dim(&self) -> usize {
        self.sym_dim
    }
    /// Radius of the round factor carrying the latitude.
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn volume(&self) -> f64 {
        self.volume
    }
    pub fn scalar_curvature(&self) -> f64 {
        self.r0
    }
    pub fn q_curvature(&self) -> f64 {
        self.q0
    }
    /// `A0 = schouten_coeff * g0`.
    pub fn schouten_coeff(&self) -> f64 {
        self.schouten_coeff
    }
    /// Laplace eigenvalue of the degree-`l` zonal mode.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigs
    }
    /// Zeroth-order coefficient of the conformal Laplacian.
    pub fn conformal_laplacian_shift(&self) -> f64 {
        let n = self.n as f64;
        (n - 2.0) * self.r0 / (4.0 * (n - 1.0))
    }

    fn width(&self) -> usize {
        self.degree + 1
    }

    /// Quadrature projection onto the orthonormal basis.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut c = vec![0.0; w];
        for (i, (&v, &wt)) in values.iter().zip(&self.weights).enumerate() {
            let s = v * wt;
            let row = &self.basis[i * w..(i + 1) * w];
            for (cl, &b) in c.iter_mut().zip(row) {
                *cl += s * b;
            }
        }
        c
    }

    fn synth(&self, table: &[f64], coeffs: &[f64]) -> Vec<f64> {
        let w = self.width();
        (0..self.nodes.len())
            .map(|i| {
                table[i * w..(i + 1) * w]
                    .iter()
                    .zip(coeffs)
                    .map(|(b, c)| b * c)
                    .sum()
            })
            .collect()
    }

    /// Nodal values of the series with the given coefficients.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(&self.basis, coeffs)
    }

    /// Nodal `d/dmu` of the series.
    pub fn synthesize_derivative(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(&self.dbasis, coeffs)
    }

    /// Nodal `d^2/dmu^2` of the series.
    pub fn synthesize_second_derivative(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(&self.d2basis, coeffs)
    }

    /// Evaluates the series at an arbitrary latitude.
    pub fn evaluate(&self, coeffs: &[f64], x: f64) -> f64 {
        let (v, _, _) = orthonormal_table(x, self.degree, &self.jacobi, 1.0 / self.volume.sqrt());
        v.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    /// Value of the degree-`l` basis function at `x`.
    pub fn basis_value(&self, l: usize, x: f64) -> f64 {
        let (v, _, _) = orthonormal_table(x, self.degree.max(l), &self.jacobi_extended(l), 1.0 / self.volume.sqrt());
        v[l]
    }

    fn jacobi_extended(&self, l: usize) -> Vec<f64> {
        if l < self.jacobi.len() {
            return self.jacobi.clone();
        }
        let lam = (self.sym_dim as f64 - 1.0) / 2.0;
        (0..=l + 1)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let k = k as f64;
                    (k * (k + 2.0 * lam - 1.0) / (4.0 * (k + lam) * (k + lam - 1.0))).sqrt()
                }
            })
            .collect()
    }

    /// `(1 - mu^2) / r^2` at each node; converts `(d/dmu)^2` into `|grad|^2`.
    pub fn metric_factor(&self) -> Vec<f64> {
        let r2 = self.radius * self.radius;
        self.nodes.iter().map(|x| (1.0 - x * x) / r2).collect()
    }
}

/// Projected coefficients below this fraction of the largest one are treated as roundoff.
pub const TAIL_FLOOR: f64 = 1e-15;

/// A zonal scalar function on a background.
#[derive(Debug, Clone)]
pub struct Field {
    bg: Arc<Background>,
    values: Vec<f64>,
    coeffs: Option<Vec<f64>>,
}

impl Field {
    pub fn new(bg: &Arc<Background>, values: Vec<f64>) -> Field {
        assert_eq!(values.len(), bg.node_count(), "field length does not match the grid");
        Field {
            bg: Arc::clone(bg),
            values,
            coeffs: None,
        }
    }

    pub fn constant(bg: &Arc<Background>, c: f64) -> Field {
        let mut coeffs = vec![0.0; bg.degree() + 1];
        coeffs[0] = c * bg.volume().sqrt();
        Field {
            bg: Arc::clone(bg),
            values: vec![c; bg.node_count()],
            coeffs: Some(coeffs),
        }
    }

    pub fn from_fn(bg: &Arc<Background>, f: impl Fn(f64) -> f64) -> Field {
        Field::new(bg, bg.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn from_coeffs(bg: &Arc<Background>, coeffs: Vec<f64>) -> Field {
        assert_eq!(coeffs.len(), bg.degree() + 1, "coefficient length does not match the degree");
        Field {
            bg: Arc::clone(bg),
            values: bg.synthesize(&coeffs),
            coeffs: Some(coeffs),
        }
    }

    /// The orthonormal degree-`l` zonal mode.
    pub fn basis(bg: &Arc<Background>, l: usize) -> Field {
        let mut c = vec![0.0; bg.degree() + 1];
        c[l] = 1.0;
        Field::from_coeffs(bg, c)
    }

    pub fn background(&self) -> &Arc<Background> {
        &self.bg
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Cached coefficients if present, otherwise a fresh projection with
    /// roundoff-level modes removed.
    pub fn coeffs(&self) -> Vec<f64> {
        match &self.coeffs {
            Some(c) => c.clone(),
            None => {
                let mut c = self.bg.project(&self.values);
                let floor = TAIL_FLOOR * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for v in c.iter_mut() {
                    if v.abs() <= floor {
                        *v = 0.0;
                    }
                }
                c
            }
        }
    }

    pub fn has_coeffs(&self) -> bool {
        self.coeffs.is_some()
    }

    /// Populates the spectral view.
    pub fn to_spectral(&self) -> Field {
        Field {
            bg: Arc::clone(&self.bg),
            values: self.values.clone(),
            coeffs: Some(self.coeffs()),
        }
    }

    /// Resamples the nodal values from the spectral view.
    pub fn to_nodal(&self) -> Field {
        let c = self.coeffs();
        Field {
            bg: Arc::clone(&self.bg),
            values: self.bg.synthesize(&c),
            coeffs: Some(c),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(&self.bg, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field::new(
            &self.bg,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Linear combination `a*self + b*other`, keeping the spectral view when both have one.
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Field {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let coeffs = match (&self.coeffs, &other.coeffs) {
            (Some(c1), Some(c2)) => Some(c1.iter().zip(c2).map(|(x, y)| a * x + b * y).collect()),
            _ => None,
        };
        Field {
            bg: Arc::clone(&self.bg),
            values,
            coeffs,
        }
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            bg: Arc::clone(&self.bg),
            values: self.values.iter().map(|v| a * v).collect(),
            coeffs: self.coeffs.as_ref().map(|c| c.iter().map(|v| a * v).collect()),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Share of spectral energy carried by the top sixth of the modes.
    pub fn tail_energy_fraction(&self) -> f64 {
        let c = self.coeffs();
        let total: f64 = c.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let start = c.len() - (c.len() / 6).max(1);
        c[start..].iter().map(|v| v * v).sum::<f64>() / total
    }

    /// Nodal `df/dmu`.
    pub fn derivative(&self) -> Vec<f64> {
        self.bg.synthesize_derivative(&self.coeffs())
    }

    /// Nodal `d^2f/dmu^2`.
    pub fn second_derivative(&self) -> Vec<f64> {
        self.bg.synthesize_second_derivative(&self.coeffs())
    }
}

fn warn_on_tail(f: &Field) {
    let tail = f.tail_energy_fraction();
    if tail > 1e-6 {
        log::warn!("top-mode energy fraction {tail:.3e} exceeds 1e-6; derivatives may alias");
    }
}

/// Spectral coefficients of `f`; idempotent.
pub fn to_spectral(f: &Field) -> Field {
    f.to_spectral()
}

/// Laplace-Beltrami operator of the background applied to a zonal field.
pub fn laplacian_g0(f: &Field) -> Field {
    warn_on_tail(f);
    let bg = f.background();
    let c: Vec<f64> = f
        .coeffs()
        .iter()
        .zip(bg.eigenvalues())
        .map(|(c, l)| -c * l)
        .collect();
    Field::from_coeffs(bg, c)
}

/// `|grad f|^2` with respect to the background metric.
pub fn grad_sq_g0(f: &Field) -> Field {
    warn_on_tail(f);
    let d = f.derivative();
    let bg = f.background();
    let g = bg.metric_factor();
    Field::new(bg, d.iter().zip(&g).map(|(d, g)| g * d * d).collect())
}

/// Background inner product of gradients of two zonal fields.
pub fn grad_dot_g0(f: &Field, h: &Field) -> Field {
    let df = f.derivative();
    let dh = h.derivative();
    let bg = f.background();
    let g = bg.metric_factor();
    Field::new(
        bg,
        df.iter().zip(&dh).zip(&g).map(|((a, b), g)| g * a * b).collect(),
    )
}

/// Quadrature integral against the background volume form.
pub fn integrate(f: &Field) -> f64 {
    integrate_values(f.background(), f.values())
}

pub fn integrate_values(bg: &Background, values: &[f64]) -> f64 {
    values.iter().zip(bg.weights()).map(|(v, w)| v * w).sum()
}

/// A diagonal operator on the zonal basis.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    bg: Arc<Background>,
    multipliers: Vec<f64>,
    kernel_dim: usize,
}

impl SpectralOperator {
    pub fn new(bg: &Arc<Background>, multipliers: Vec<f64>) -> SpectralOperator {
        assert_eq!(multipliers.len(), bg.degree() + 1);
        let scale = multipliers.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let kernel_dim = multipliers.iter().filter(|m| m.abs() <= 1e-13 * scale).count();
        SpectralOperator {
            bg: Arc::clone(bg),
            multipliers,
            kernel_dim,
        }
    }

    /// `-Delta` on the background.
    pub fn neg_laplacian(bg: &Arc<Background>) -> SpectralOperator {
        SpectralOperator::new(bg, bg.eigenvalues().to_vec())
    }

    pub fn background(&self) -> &Arc<Background> {
        &self.bg
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn apply(&self, f: &Field) -> Field {
        let c = f
            .coeffs()
            .iter()
            .zip(&self.multipliers)
            .map(|(c, m)| c * m)
            .collect();
        Field::from_coeffs(&self.bg, c)
    }

    /// Inverse on the complement of the kernel; kernel components are dropped.
    pub fn apply_inverse(&self, f: &Field) -> Field {
        let scale = self.multipliers.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let c = f
            .coeffs()
            .iter()
            .zip(&self.multipliers)
            .map(|(c, m)| if m.abs() <= 1e-13 * scale { 0.0 } else { c / m })
            .collect();
        Field::from_coeffs(&self.bg, c)
    }

    /// Quadratic form `<f, A f>` evaluated spectrally.
    pub fn quadratic_form(&self, f: &Field) -> f64 {
        f.coeffs()
            .iter()
            .zip(&self.multipliers)
            .map(|(c, m)| c * c * m)
            .sum()
    }
}
