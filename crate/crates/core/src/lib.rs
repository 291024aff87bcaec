//! Zonal spectral laboratory for Q-curvature, scalar curvature and their
//! conformal quotients on round spheres and Einstein products.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod functionals;
pub mod geometry;
pub mod sampling;
pub mod rigidity;
pub mod flows;
