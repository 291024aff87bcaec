//! Rejection sampling of admissible conformal factors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::curvature::{ConformalMetric, Convention};
use crate::geometry::{Background, Field};

/// Highest zonal degree present in a random field.
pub const SAMPLE_DEGREE: usize = 6;
/// Amplitude range of the exponent.
pub const AMPLITUDE_RANGE: (f64, f64) = (0.05, 0.5);
/// Rejections tolerated before giving up on one sample.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Gaussian field on degrees `1..=max_degree`, scaled to unit sup norm at the nodes.
pub fn random_zonal_field<R: Rng + ?Sized>(bg: &Arc<Background>, rng: &mut R, max_degree: usize) -> Field {
    let top = max_degree.min(bg.degree());
    let mut c = vec![0.0; bg.degree() + 1];
    for (l, cl) in c.iter_mut().enumerate().take(top + 1).skip(1) {
        let z: f64 = StandardNormal.sample(rng);
        *cl = z / (1.0 + l as f64);
    }
    let f = Field::from_coeffs(bg, c);
    let s = f.max_abs();
    if s > 0.0 {
        f.scale(1.0 / s)
    } else {
        f
    }
}

/// `exp(s G)` with `G` from [`random_zonal_field`] and `s` drawn from [`AMPLITUDE_RANGE`].
pub fn random_log_normal_factor<R: Rng + ?Sized>(bg: &Arc<Background>, rng: &mut R) -> Field {
    let g = random_zonal_field(bg, rng, SAMPLE_DEGREE);
    let s = rng.random_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1);
    g.map(|v| (s * v).exp())
}

/// Draws metrics until one has positive scalar curvature and passes `accept`.
pub fn sample_admissible<R: Rng + ?Sized>(
    bg: &Arc<Background>,
    convention: Convention,
    rng: &mut R,
    accept: impl Fn(&ConformalMetric) -> bool,
) -> Option<ConformalMetric> {
    for _ in 0..MAX_ATTEMPTS {
        let factor = random_log_normal_factor(bg, rng);
        let factor = if convention == Convention::Exponential4 {
            factor.map(f64::ln)
        } else {
            factor
        };
        let Ok(m) = ConformalMetric::new(factor, convention) else {
            continue;
        };
        if m.scalar_curvature().min() > 0.0 && accept(&m) {
            return Some(m);
        }
    }
    None
}

/// Generator for sample `index` of a run seeded with `seed`, independent of evaluation order.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
