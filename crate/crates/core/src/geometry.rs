//! Points, segments, polygonal curves, axis-aligned boxes, and the convex
//! visibility regions used by the segment-query structure.
//!
//! Distances to boxes and visibility regions reduce to minimizing a sum of
//! squared positive parts of affine functions, which is piecewise quadratic;
//! those minimizations are done in closed form. Generic fattened-hit
//! intervals on a segment use ternary search plus bisection on the convex
//! distance profile.

use thiserror::Error;

use crate::tolerances::ITER_CAP;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("curve needs at least one vertex")]
    EmptyCurve,
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("point is {dist} off the segment carrier, beyond tolerance")]
    PointOffSegment { dist: f64 },
    #[error("box needs lo <= hi on every axis")]
    BadBox,
    #[error("iteration cap hit in {0}; tolerance too small for the bracket")]
    IterationCap(&'static str),
}

/// A point in `R^d`, `d >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::DimensionMismatch { expected: 1, got: 0 });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Point { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        dist(&self.coords, &other.coords)
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// A directed segment; zero length is allowed and callers that cannot
/// tolerate it say so in their own preconditions.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedSegment {
    pub start: Point,
    pub end: Point,
}

impl OrientedSegment {
    pub fn new(start: Point, end: Point) -> Result<Self, GeometryError> {
        if start.dim() != end.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: start.dim(),
                got: end.dim(),
            });
        }
        Ok(OrientedSegment { start, end })
    }

    pub fn dim(&self) -> usize {
        self.start.dim()
    }

    pub fn len(&self) -> f64 {
        self.start.dist(&self.end)
    }

    pub fn eval(&self, t: f64) -> Point {
        Point {
            coords: lerp(&self.start.coords, &self.end.coords, t),
        }
    }
}

/// Parameter of `p` on the segment, clamped to `[0, 1]`.
///
/// Errors with `PointOffSegment` when `p` is farther than `tol` from the
/// clamped foot point; the degenerate segment accepts only its own endpoint.
pub fn param_of_point(
    seg: &OrientedSegment,
    p: &Point,
    tol: f64,
) -> Result<f64, GeometryError> {
    if p.dim() != seg.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: seg.dim(),
            got: p.dim(),
        });
    }
    let d = seg.dim();
    let mut e_sq = 0.0;
    let mut dot = 0.0;
    for i in 0..d {
        let e = seg.end[i] - seg.start[i];
        e_sq += e * e;
        dot += e * (p[i] - seg.start[i]);
    }
    let t = if e_sq > 0.0 {
        (dot / e_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let foot = seg.eval(t);
    let off = foot.dist(p);
    if off > tol {
        return Err(GeometryError::PointOffSegment { dist: off });
    }
    Ok(t)
}

/// A nonempty polygonal curve. All vertices share one dimension; a single
/// vertex stands for a point curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCurve {
    pub vertices: Vec<Point>,
}

impl PolyCurve {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let first = vertices.first().ok_or(GeometryError::EmptyCurve)?;
        let d = first.dim();
        for v in &vertices {
            if v.dim() != d {
                return Err(GeometryError::DimensionMismatch { expected: d, got: v.dim() });
            }
        }
        Ok(PolyCurve { vertices })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let vertices = rows
            .iter()
            .map(|r| Point::new(r.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        PolyCurve::new(vertices)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].dim()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Subcurve spanned by vertices `a..=b` (0-based, `a <= b`).
    pub fn slice(&self, a: usize, b: usize) -> PolyCurve {
        PolyCurve {
            vertices: self.vertices[a..=b].to_vec(),
        }
    }

    /// Duplicates the last vertex until the curve has `target` vertices.
    pub fn pad_to(&self, target: usize) -> PolyCurve {
        let mut vertices = self.vertices.clone();
        while vertices.len() < target {
            vertices.push(vertices.last().unwrap().clone());
        }
        PolyCurve { vertices }
    }
}

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(GeometryError::BadBox);
        }
        Ok(Aabb { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((al, ah), (bl, bh))| al <= bh && bl <= ah)
    }
}

/// Euclidean distance between two closed boxes; zero when they meet.
pub fn dist_box_box(a: &Aabb, b: &Aabb) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let g = (a.lo[i] - b.hi[i]).max(b.lo[i] - a.hi[i]).max(0.0);
        acc += g * g;
    }
    acc.sqrt()
}

/// Euclidean distance from a point to a closed box; zero inside.
pub fn dist_point_box(p: &[f64], b: &Aabb) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let g = (b.lo[i] - p[i]).max(p[i] - b.hi[i]).max(0.0);
        acc += g * g;
    }
    acc.sqrt()
}

/// Parameter window of `seg` inside the closed ball `(center, r)`, clipped
/// to `[0, 1]`. Closed-form quadratic; `None` when the segment misses.
pub fn segment_ball_interval(
    seg_start: &[f64],
    seg_end: &[f64],
    center: &[f64],
    r: f64,
) -> Option<(f64, f64)> {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = -r * r;
    for i in 0..seg_start.len() {
        let e = seg_end[i] - seg_start[i];
        let s = seg_start[i] - center[i];
        a += e * e;
        b += 2.0 * e * s;
        c += s * s;
    }
    if a == 0.0 {
        return if c <= 0.0 { Some((0.0, 1.0)) } else { None };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / (2.0 * a);
    let t1 = (-b + sq) / (2.0 * a);
    if t0 > 1.0 || t1 < 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1.min(1.0)))
}

/// Parameter window where the line `origin + t * dir` meets the closed box,
/// intersected with `[t_lo, t_hi]` (either end may be infinite). Standard
/// slab clipping; `None` when empty.
pub fn line_box_clip(
    origin: &[f64],
    dir: &[f64],
    b: &Aabb,
    t_lo: f64,
    t_hi: f64,
) -> Option<(f64, f64)> {
    let mut lo = t_lo;
    let mut hi = t_hi;
    for i in 0..origin.len() {
        if dir[i] == 0.0 {
            if origin[i] < b.lo[i] || origin[i] > b.hi[i] {
                return None;
            }
            continue;
        }
        let mut a = (b.lo[i] - origin[i]) / dir[i];
        let mut z = (b.hi[i] - origin[i]) / dir[i];
        if a > z {
            std::mem::swap(&mut a, &mut z);
        }
        lo = lo.max(a);
        hi = hi.min(z);
        if lo > hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// Parameter window of `seg` inside the closed box, clipped to `[0, 1]`.
pub fn segment_box_clip(seg_start: &[f64], seg_end: &[f64], b: &Aabb) -> Option<(f64, f64)> {
    let dir: Vec<f64> = seg_end.iter().zip(seg_start).map(|(e, s)| e - s).collect();
    line_box_clip(seg_start, &dir, b, 0.0, 1.0)
}

/// Minimizes `sum_i max(0, p_i(t), q_i(t))^2` over `t in [t_lo, t_hi]`,
/// where `p_i(t) = axes[i].0 + axes[i].1 * t` and `q_i` likewise. The
/// objective is convex piecewise quadratic; candidates are the affine roots,
/// the finite bracket ends, and each piece's interior stationary point.
/// Returns `(min value, argmin)`.
fn min_sum_pos_sq(axes: &[(f64, f64, f64, f64)], t_lo: f64, t_hi: f64) -> (f64, f64) {
    let eval = |t: f64| -> f64 {
        let mut acc = 0.0;
        for &(p0, p1, q0, q1) in axes {
            let g = (p0 + p1 * t).max(q0 + q1 * t).max(0.0);
            acc += g * g;
        }
        acc
    };

    let mut breaks: Vec<f64> = Vec::with_capacity(2 * axes.len() + 2);
    for &(p0, p1, q0, q1) in axes {
        if p1 != 0.0 {
            breaks.push(-p0 / p1);
        }
        if q1 != 0.0 {
            breaks.push(-q0 / q1);
        }
    }
    breaks.retain(|t| t.is_finite() && *t > t_lo && *t < t_hi);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();

    let mut best = (f64::INFINITY, 0.0);
    let mut consider = |t: f64| {
        let v = eval(t);
        if v < best.0 {
            best = (v, t);
        }
    };

    if t_lo.is_finite() {
        consider(t_lo);
    }
    if t_hi.is_finite() {
        consider(t_hi);
    }
    for &t in &breaks {
        consider(t);
    }

    // One representative and one stationary candidate per piece.
    let mut edges: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    edges.push(t_lo);
    edges.extend_from_slice(&breaks);
    edges.push(t_hi);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let rep = if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo + 1.0
        } else if hi.is_finite() {
            hi - 1.0
        } else {
            0.0
        };
        consider(rep);
        // Quadratic coefficients of the active pieces at `rep`.
        let mut qa = 0.0;
        let mut qb = 0.0;
        for &(p0, p1, q0, q1) in axes {
            let pv = p0 + p1 * rep;
            let qv = q0 + q1 * rep;
            let m = pv.max(qv).max(0.0);
            if m <= 0.0 {
                continue;
            }
            let (c0, c1) = if pv >= qv { (p0, p1) } else { (q0, q1) };
            qa += c1 * c1;
            qb += 2.0 * c0 * c1;
        }
        if qa > 0.0 {
            let t = (-qb / (2.0 * qa)).clamp(
                if lo.is_finite() { lo } else { f64::NEG_INFINITY },
                if hi.is_finite() { hi } else { f64::INFINITY },
            );
            if t.is_finite() {
                consider(t);
            }
        }
    }
    best
}

/// Distance from the line `origin + t * dir` (restricted to `[t_lo, t_hi]`)
/// to a closed box, exact up to rounding.
pub fn dist_line_box(origin: &[f64], dir: &[f64], b: &Aabb, t_lo: f64, t_hi: f64) -> f64 {
    let axes: Vec<(f64, f64, f64, f64)> = (0..origin.len())
        .map(|i| {
            (
                b.lo[i] - origin[i],
                -dir[i],
                origin[i] - b.hi[i],
                dir[i],
            )
        })
        .collect();
    min_sum_pos_sq(&axes, t_lo, t_hi).0.max(0.0).sqrt()
}

/// Distance from a segment to a closed box.
pub fn dist_segment_box(seg_start: &[f64], seg_end: &[f64], b: &Aabb) -> f64 {
    let dir: Vec<f64> = seg_end.iter().zip(seg_start).map(|(e, s)| e - s).collect();
    dist_line_box(seg_start, &dir, b, 0.0, 1.0)
}

/// Maximal parameter window `[t0, t1] <= [0, 1]` where `dist_fn(seg(t)) <= r`,
/// or `None`. `dist_fn` must be convex along the segment (true for distances
/// to convex sets). Ternary search brackets the minimizer, bisection finds
/// each crossing; endpoints are within `tol` of the true window and certified
/// on the inside.
pub fn fattened_hit_interval(
    seg: &OrientedSegment,
    dist_fn: &dyn Fn(&[f64]) -> f64,
    r: f64,
    tol: f64,
) -> Result<Option<(f64, f64)>, GeometryError> {
    let g = |t: f64| dist_fn(&lerp(&seg.start.coords, &seg.end.coords, t));
    let len = seg.len();
    // Parameter tolerance equivalent to a spatial tolerance of `tol`.
    let tol_t = if len > tol { tol / len } else { 0.5 }.max(1e-15);

    let g0 = g(0.0);
    let g1 = g(1.0);

    // Ternary search for the minimizer of the convex profile.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut iters = 0;
    while hi - lo > tol_t {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) <= g(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
        iters += 1;
        if iters > ITER_CAP {
            return Err(GeometryError::IterationCap("fattened_hit_interval ternary"));
        }
    }
    let tm = 0.5 * (lo + hi);
    let gm = g(tm).min(g0).min(g1);
    if gm > r {
        return Ok(None);
    }
    let t_star = if g0 <= gm + 1e-300 && g0 <= g1 {
        0.0
    } else if g1 <= gm + 1e-300 {
        1.0
    } else {
        tm
    };

    let bisect = |mut out: f64, mut ins: f64| -> Result<f64, GeometryError> {
        // g(out) > r, g(ins) <= r; returns a point on the <= r side.
        let mut iters = 0;
        while (out - ins).abs() > tol_t {
            let mid = 0.5 * (out + ins);
            if g(mid) <= r {
                ins = mid;
            } else {
                out = mid;
            }
            iters += 1;
            if iters > ITER_CAP {
                return Err(GeometryError::IterationCap("fattened_hit_interval bisect"));
            }
        }
        Ok(ins)
    };

    let t0 = if g0 <= r { 0.0 } else { bisect(0.0, t_star)? };
    let t1 = if g1 <= r { 1.0 } else { bisect(1.0, t_star)? };
    Ok(Some((t0, t1)))
}

/// The set of points that can see the box `c` through some point of the box
/// `gamma`: all `x` such that a segment from `x` to a point of `gamma`
/// meets `c`. Convex; equals the whole space exactly when the boxes overlap.
///
/// Parametrically, `x` belongs iff `x in c (+) t*K` for some `t >= 0`, where
/// `K` is the box `c (+) (-gamma)`: writing the meeting point as
/// `p = (1-s) x + s y` with `p in c`, `y in gamma`, and `t = s / (1-s)`
/// turns the slice at fraction `s` into the box `c (+) t*K`, and the
/// remaining `s = 1` boundary case is absorbed by the overlap test.
#[derive(Debug, Clone, PartialEq)]
pub struct FRegion {
    pub c: Aabb,
    pub gamma: Aabb,
}

impl FRegion {
    pub fn new(c: Aabb, gamma: Aabb) -> Result<Self, GeometryError> {
        if c.dim() != gamma.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: c.dim(),
                got: gamma.dim(),
            });
        }
        Ok(FRegion { c, gamma })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    fn k_lo(&self, i: usize) -> f64 {
        self.c.lo[i] - self.gamma.hi[i]
    }

    fn k_hi(&self, i: usize) -> f64 {
        self.c.hi[i] - self.gamma.lo[i]
    }

    /// Feasible slab of `t >= 0` with `q in c (+) t*K`, slackened by `tol`.
    fn feasible_t(&self, q: &[f64], tol: f64) -> Option<(f64, f64)> {
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        for i in 0..q.len() {
            // c.lo[i] + t*k_lo <= q[i]  and  q[i] <= c.hi[i] + t*k_hi.
            for (a, b) in [
                (self.k_lo(i), q[i] - self.c.lo[i] + tol),
                (-self.k_hi(i), self.c.hi[i] - q[i] + tol),
            ] {
                if a > 0.0 {
                    hi = hi.min(b / a);
                } else if a < 0.0 {
                    lo = lo.max(b / a);
                } else if b < 0.0 {
                    return None;
                }
            }
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// Membership in the visibility region, with absolute slack `tol` on the
/// face inequalities.
pub fn f_membership(q: &[f64], f: &FRegion, tol: f64) -> bool {
    if f.c.overlaps(&f.gamma) {
        return true;
    }
    f.feasible_t(q, tol).is_some()
}

/// Distance from `q` to the visibility region: `min over t >= 0` of the
/// distance to `c (+) t*K`, a convex piecewise-quadratic profile minimized
/// in closed form. Zero exactly on the region (up to rounding).
pub fn f_distance(q: &[f64], f: &FRegion) -> f64 {
    if f.c.overlaps(&f.gamma) {
        return 0.0;
    }
    let axes: Vec<(f64, f64, f64, f64)> = (0..q.len())
        .map(|i| {
            (
                f.c.lo[i] - q[i],
                f.k_lo(i),
                q[i] - f.c.hi[i],
                -f.k_hi(i),
            )
        })
        .collect();
    min_sum_pos_sq(&axes, 0.0, f64::INFINITY).0.max(0.0).sqrt()
}

/// Constructive membership witness: a point `y in gamma` whose segment from
/// `q` meets `c` at the returned hit point. `None` when `q` is not a member.
pub fn f_witness(q: &[f64], f: &FRegion, tol: f64) -> Option<(Point, Point)> {
    let d = q.len();
    if f.c.overlaps(&f.gamma) {
        // A shared point serves as both target and hit.
        let z: Vec<f64> = (0..d)
            .map(|i| {
                let lo = f.c.lo[i].max(f.gamma.lo[i]);
                let hi = f.c.hi[i].min(f.gamma.hi[i]);
                0.5 * (lo + hi.max(lo))
            })
            .collect();
        return Some((Point { coords: z.clone() }, Point { coords: z }));
    }
    let (t_lo, _) = f.feasible_t(q, tol)?;
    let t = t_lo.max(0.0);
    let s = t / (1.0 + t);
    if s == 0.0 {
        // q itself lies in c.
        let y = Point { coords: f.gamma.center() };
        return Some((y, Point { coords: q.to_vec() }));
    }
    // Hit point axis-wise: p in c intersect ((1-s) q (+) s*gamma).
    let mut p = Vec::with_capacity(d);
    for i in 0..d {
        let lo = f.c.lo[i].max((1.0 - s) * q[i] + s * f.gamma.lo[i]);
        let hi = f.c.hi[i].min((1.0 - s) * q[i] + s * f.gamma.hi[i]);
        p.push(0.5 * (lo + hi.max(lo)));
    }
    let y: Vec<f64> = (0..d)
        .map(|i| {
            let raw = (p[i] - (1.0 - s) * q[i]) / s;
            raw.clamp(f.gamma.lo[i], f.gamma.hi[i])
        })
        .collect();
    Some((Point { coords: y }, Point { coords: p }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bx(lo: &[f64], hi: &[f64]) -> Aabb {
        Aabb::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    fn seg(a: &[f64], b: &[f64]) -> OrientedSegment {
        OrientedSegment::new(
            Point::new(a.to_vec()).unwrap(),
            Point::new(b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn param_of_point_basics() {
        let s = seg(&[0.0, 0.0], &[2.0, 0.0]);
        assert_eq!(param_of_point(&s, &Point::new(vec![1.0, 0.0]).unwrap(), 1e-9), Ok(0.5));
        assert_eq!(param_of_point(&s, &Point::new(vec![0.0, 0.0]).unwrap(), 1e-9), Ok(0.0));
        match param_of_point(&s, &Point::new(vec![1.0, 1.0]).unwrap(), 1e-9) {
            Err(GeometryError::PointOffSegment { dist }) => assert!((dist - 1.0).abs() < 1e-12),
            other => panic!("expected PointOffSegment, got {other:?}"),
        }
        // Degenerate carrier accepts only its endpoint.
        let z = seg(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(param_of_point(&z, &Point::new(vec![1.0, 1.0]).unwrap(), 1e-9), Ok(0.0));
        assert!(param_of_point(&z, &Point::new(vec![2.0, 1.0]).unwrap(), 1e-9).is_err());
    }

    #[test]
    fn dist_point_box_cases() {
        let b = bx(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(dist_point_box(&[0.5, 0.5], &b), 0.0);
        assert_eq!(dist_point_box(&[1.0, 1.0], &b), 0.0);
        assert!((dist_point_box(&[2.0, 0.5], &b) - 1.0).abs() < 1e-15);
        assert!((dist_point_box(&[2.0, 2.0], &b) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn segment_ball_interval_cases() {
        // Through-center chord.
        let (t0, t1) =
            segment_ball_interval(&[-2.0, 0.0], &[2.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((t0 - 0.25).abs() < 1e-12 && (t1 - 0.75).abs() < 1e-12);
        // Miss.
        assert!(segment_ball_interval(&[-2.0, 2.0], &[2.0, 2.0], &[0.0, 0.0], 1.0).is_none());
        // Degenerate segment inside and outside.
        assert_eq!(
            segment_ball_interval(&[0.1, 0.0], &[0.1, 0.0], &[0.0, 0.0], 1.0),
            Some((0.0, 1.0))
        );
        assert!(segment_ball_interval(&[5.0, 0.0], &[5.0, 0.0], &[0.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn fattened_hit_interval_unit_box_crossing() {
        let b = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let f = |p: &[f64]| dist_point_box(p, &b);
        let s = seg(&[-1.0, 0.5], &[2.0, 0.5]);
        let (t0, t1) = fattened_hit_interval(&s, &f, 0.0, 1e-9).unwrap().unwrap();
        assert!((t0 - 1.0 / 3.0).abs() < 1e-6 && (t1 - 2.0 / 3.0).abs() < 1e-6);
        let high = seg(&[0.0, 5.0], &[1.0, 5.0]);
        assert_eq!(fattened_hit_interval(&high, &f, 1.0, 1e-9).unwrap(), None);
    }

    #[test]
    fn f_membership_crossing_cases() {
        let f = FRegion::new(bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[2.0, 2.0], &[3.0, 3.0])).unwrap();
        assert!(f_membership(&[-1.0, -1.0], &f, 0.0));
        assert!(!f_membership(&[5.0, 0.0], &f, 0.0));
        assert!(f_membership(&[0.5, 0.5], &f, 0.0));
    }

    #[test]
    fn fattened_hit_interval_matches_dense_scan() {
        let b = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let s = seg(&[-1.0, 0.0], &[3.0, 0.0]);
        let f = |p: &[f64]| dist_point_box(p, &b);
        let (t0, t1) = fattened_hit_interval(&s, &f, 0.5, 1e-9).unwrap().unwrap();
        assert!((t0 - 0.125).abs() < 1e-6, "t0 = {t0}");
        assert!((t1 - 0.625).abs() < 1e-6, "t1 = {t1}");
        // Dense scan oracle at step 1e-4 agrees about the sublevel window.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..=40_000 {
            let t = k as f64 / 40_000.0;
            if f(&s.eval(t).coords) <= 0.5 {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        assert!((t0 - lo).abs() < 1e-4 && (t1 - hi).abs() < 1e-4);
        // Radius too small for the offset row: empty.
        let s_off = seg(&[-1.0, 2.0], &[3.0, 2.0]);
        assert_eq!(fattened_hit_interval(&s_off, &f, 0.5, 1e-9).unwrap(), None);
    }

    #[test]
    fn f_region_all_space_on_overlap() {
        let c = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let f = FRegion::new(c.clone(), c).unwrap();
        for q in [[5.0, -3.0], [100.0, 100.0], [0.5, 0.5]] {
            assert!(f_membership(&q, &f, 0.0));
            assert_eq!(f_distance(&q, &f), 0.0);
        }
        // Touching boxes still cover the whole space.
        let f2 = FRegion::new(bx(&[0.0], &[1.0]), bx(&[-1.0], &[0.0])).unwrap();
        assert!(f_membership(&[-5.0], &f2, 0.0));
    }

    #[test]
    fn f_distance_frozen_value_and_monte_carlo() {
        let f = FRegion::new(bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[4.0, 0.0], &[5.0, 1.0])).unwrap();
        let q = [2.0, 0.0];
        let exact = f_distance(&q, &f);
        assert!((exact - 1.0).abs() < 1e-9, "exact = {exact}");
        assert!(!f_membership(&q, &f, 1e-9));
        // Monte-Carlo over x = p' + t*(p - y), which ranges over the whole
        // region; every sample certifies the exact value as a lower bound,
        // and the best sample should come close to it. The optimum here
        // sits at t = 0, so t is drawn cubed toward it.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut best = f64::INFINITY;
        for _ in 0..1_000_000 {
            let p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let base = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let y = [rng.random_range(4.0..5.0), rng.random_range(0.0..1.0)];
            let u: f64 = rng.random_range(0.0..1.0);
            let t = 4.0 * u * u * u;
            let x = [base[0] + t * (p[0] - y[0]), base[1] + t * (p[1] - y[1])];
            let dq = dist(&q, &x);
            assert!(dq >= exact - 1e-9, "sampled region point beats the distance: {dq}");
            best = best.min(dq);
        }
        assert!(best - exact < 1e-2, "mc = {best}, exact = {exact}");
    }

    #[test]
    fn f_membership_witness_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let d = rng.random_range(2..=4usize);
            let mk = |rng: &mut ChaCha8Rng| {
                let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let hi: Vec<f64> =
                    lo.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
                Aabb::new(lo, hi).unwrap()
            };
            let f = FRegion::new(mk(&mut rng), mk(&mut rng)).unwrap();
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-8.0..8.0)).collect();
            let member = f_membership(&q, &f, 1e-12);
            let dist_v = f_distance(&q, &f);
            if member {
                let (y, hit) = f_witness(&q, &f, 1e-12).expect("member needs witness");
                // The witness segment q -> y passes through the hit point,
                // and the hit point lies in c.
                assert!(f.c.contains(&hit.coords, 1e-7));
                assert!(f.gamma.contains(&y.coords, 1e-7));
                let t = param_of_point(
                    &OrientedSegment::new(
                        Point::new(q.clone()).unwrap(),
                        y.clone(),
                    )
                    .unwrap(),
                    &hit,
                    1e-6,
                );
                assert!(t.is_ok(), "witness hit off segment: {t:?}");
                assert!(dist_v < 1e-6, "member but distance {dist_v}");
            } else {
                assert!(dist_v > -1e-12);
            }
        }
    }

    #[test]
    fn dist_segment_box_matches_dense_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d = rng.random_range(2..=4usize);
            let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
            let b = Aabb::new(lo, hi).unwrap();
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fast = dist_segment_box(&a, &z, &b);
            let mut dense = f64::INFINITY;
            for k in 0..=2000 {
                let t = k as f64 / 2000.0;
                dense = dense.min(dist_point_box(&lerp(&a, &z, t), &b));
            }
            assert!(fast <= dense + 1e-9, "fast {fast} > dense {dense}");
            assert!(dense - fast < 6e-3, "fast {fast} vs dense {dense}");
        }
    }

    #[test]
    fn line_box_clip_agrees_with_segment_clip() {
        let b = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let (t0, t1) = segment_box_clip(&[-1.0, 0.5], &[3.0, 0.5], &b).unwrap();
        assert!((t0 - 0.25).abs() < 1e-12 && (t1 - 0.5).abs() < 1e-12);
        assert!(segment_box_clip(&[-1.0, 2.0], &[3.0, 2.0], &b).is_none());
        // Axis-parallel segment inside the slab of a flat axis.
        let (u0, u1) = segment_box_clip(&[0.5, 0.0], &[0.5, 1.0], &b).unwrap();
        assert!((u0 - 0.0).abs() < 1e-12 && (u1 - 1.0).abs() < 1e-12);
    }
}
