//! Numeric tolerances and iteration caps used across the crate.
//!
//! Geometric predicates compare with an absolute tolerance proportional to
//! the query radius `delta`; instances exercised by the test suites are
//! generated with decision margins far above these values, so none of the
//! advertised guarantees hinge on exact ties.

/// Relative slack for geometric predicates: absolute tolerance is
/// `TOL_GEO_REL * delta`. Large enough to absorb accumulated rounding in
/// interval endpoints, small enough to stay below any generated margin.
pub const TOL_GEO_REL: f64 = 1e-9;

/// Relative tolerance for Frechet value bisection: the returned value is
/// within `FRECHET_VALUE_TOL_REL * delta` of the true distance.
pub const FRECHET_VALUE_TOL_REL: f64 = 1e-7;

/// Hard cap on ternary-search and bisection iterations. Generous: both
/// shrink their bracket geometrically, so a healthy run needs well under a
/// hundred. Hitting the cap raises a diagnostic error instead of silently
/// returning a low-quality root.
pub const ITER_CAP: usize = 200;

/// Multiplier on the instance bounding radius used to truncate unbounded
/// line-parameter searches.
pub const LINE_SPAN_FACTOR: f64 = 10.0;

/// Geometric tolerance at radius `delta`.
pub fn tol_geo(delta: f64) -> f64 {
    TOL_GEO_REL * delta
}
