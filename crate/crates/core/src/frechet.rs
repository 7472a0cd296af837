//! Continuous Fréchet distance decisions and values, the discrete baseline,
//! and subsegment matchability.
//!
//! The decision procedure is free-space reachability: per cell of the
//! parameter grid, the free part of each boundary edge is an interval
//! (a segment-ball intersection), and reachable intervals propagate
//! monotonically column by column. Cells are convex, so entering from the
//! bottom exposes the whole free right boundary, while entering from the
//! left at height `t` exposes only the part at height `t` or above.

use crate::geometry::{
    dist, dist_sq, lerp, segment_ball_interval, GeometryError, OrientedSegment, PolyCurve,
};

/// Touching configurations (distance exactly equal to the radius) must not
/// flip to "no" over rounding in the quadratic; decision margins in callers
/// sit many orders of magnitude above this.
const DECIDE_REL_SLACK: f64 = 1e-12;

fn inflate(r: f64) -> f64 {
    r + r * DECIDE_REL_SLACK
}

fn check_dims(a: &PolyCurve, b: &PolyCurve) -> Result<(), GeometryError> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// `d_F(point, curve) <= r`: the matching pins the point, so the maximum over
/// the curve decides, and on each edge the maximum sits at a vertex.
fn point_curve_within(p: &[f64], c: &PolyCurve, r: f64) -> bool {
    let rr = r * r;
    c.vertices.iter().all(|v| dist_sq(p, &v.coords) <= rr)
}

type Iv = Option<(f64, f64)>;

fn step_interval(from_bottom: Iv, from_left: Iv, free: Iv) -> Iv {
    match (from_bottom, from_left, free) {
        (_, _, None) => None,
        (Some(_), _, Some(f)) => Some(f),
        (None, Some((lo, _)), Some((flo, fhi))) => {
            let s = flo.max(lo);
            if s <= fhi {
                Some((s, fhi))
            } else {
                None
            }
        }
        (None, None, _) => None,
    }
}

/// True iff the continuous Fréchet distance is at most `r`.
pub fn frechet_decide(a: &PolyCurve, b: &PolyCurve, r: f64) -> Result<bool, GeometryError> {
    check_dims(a, b)?;
    if r < 0.0 {
        return Ok(false);
    }
    let r = inflate(r);
    let av = &a.vertices;
    let bv = &b.vertices;
    let (p, q) = (av.len(), bv.len());
    if p == 1 {
        return Ok(point_curve_within(&av[0].coords, b, r));
    }
    if q == 1 {
        return Ok(point_curve_within(&bv[0].coords, a, r));
    }
    let rr = r * r;
    if dist_sq(&av[0].coords, &bv[0].coords) > rr
        || dist_sq(&av[p - 1].coords, &bv[q - 1].coords) > rr
    {
        return Ok(false);
    }

    let ball = |s: &crate::geometry::Point, e: &crate::geometry::Point, c: &crate::geometry::Point| {
        segment_ball_interval(&s.coords, &e.coords, &c.coords, r)
    };

    // Reachable interval per vertical boundary of the current column, plus
    // the reachable part of the bottom outer boundary under it.
    let mut lr: Vec<Iv> = vec![None; q - 1];
    let mut climbing = true;
    for j in 0..q - 1 {
        if !climbing {
            break;
        }
        match ball(&bv[j], &bv[j + 1], &av[0]) {
            Some((lo, hi)) if lo == 0.0 => {
                lr[j] = Some((0.0, hi));
                climbing = hi >= 1.0;
            }
            _ => climbing = false,
        }
    }
    let mut bot: Iv = match ball(&av[0], &av[1], &bv[0]) {
        Some((lo, hi)) if lo == 0.0 => Some((0.0, hi)),
        _ => None,
    };

    let mut new_lr: Vec<Iv> = vec![None; q - 1];
    for i in 0..p - 1 {
        let next_bot: Iv = if i + 1 < p - 1 {
            match bot {
                Some((_, hi)) if hi >= 1.0 => match ball(&av[i + 1], &av[i + 2], &bv[0]) {
                    Some((lo, h2)) if lo == 0.0 => Some((0.0, h2)),
                    _ => None,
                },
                _ => None,
            }
        } else {
            None
        };
        let mut b_cur = bot;
        for j in 0..q - 1 {
            let free_right = ball(&bv[j], &bv[j + 1], &av[i + 1]);
            let free_top = ball(&av[i], &av[i + 1], &bv[j + 1]);
            new_lr[j] = step_interval(b_cur, lr[j], free_right);
            b_cur = step_interval(lr[j], b_cur, free_top);
        }
        if i == p - 2 {
            let top = b_cur.is_some_and(|(_, hi)| hi >= 1.0);
            let right = new_lr[q - 2].is_some_and(|(_, hi)| hi >= 1.0);
            return Ok(top || right);
        }
        std::mem::swap(&mut lr, &mut new_lr);
        new_lr.fill(None);
        bot = next_bot;
        if bot.is_none() && lr.iter().all(Iv::is_none) {
            return Ok(false);
        }
    }
    unreachable!("loop returns at the last column");
}

/// Fréchet value to within `tol` by bisection. The lower bracket is the
/// larger endpoint-pair distance; the upper bracket is the maximum pairwise
/// vertex distance, which dominates every matching by convexity of the
/// distance along edges.
pub fn frechet_value(a: &PolyCurve, b: &PolyCurve, tol: f64) -> Result<f64, GeometryError> {
    check_dims(a, b)?;
    debug_assert!(tol > 0.0);
    let av = &a.vertices;
    let bv = &b.vertices;
    let lb = dist(&av[0].coords, &bv[0].coords)
        .max(dist(&av[av.len() - 1].coords, &bv[bv.len() - 1].coords));
    if frechet_decide(a, b, lb)? {
        return Ok(lb);
    }
    let mut hi = 0.0_f64;
    for u in av {
        for v in bv {
            hi = hi.max(dist_sq(&u.coords, &v.coords));
        }
    }
    let mut hi = hi.sqrt();
    let mut lo = lb;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if frechet_decide(a, b, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `d_F(seg, c) <= r`, specialized to a segment on one side.
///
/// A matching pins each curve vertex to a segment parameter; between pinned
/// parameters both sides are affine, so the distance along the piece is
/// convex and maximal at its ends. Feasibility is therefore a monotone
/// choice of parameters from the per-vertex ball windows, with the segment
/// endpoints pinned to the curve endpoints. Allocation-free.
pub fn segment_curve_decide(
    seg: &OrientedSegment,
    c: &PolyCurve,
    r: f64,
) -> Result<bool, GeometryError> {
    if seg.dim() != c.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: seg.dim(),
            got: c.dim(),
        });
    }
    if r < 0.0 {
        return Ok(false);
    }
    let r = inflate(r);
    let s = &seg.start.coords;
    let e = &seg.end.coords;
    let m = c.vertices.len();
    let mut t_min = 0.0_f64;
    for (j, v) in c.vertices.iter().enumerate() {
        match segment_ball_interval(s, e, &v.coords, r) {
            None => return Ok(false),
            Some((lo, hi)) => {
                if j == 0 && lo > 0.0 {
                    return Ok(false);
                }
                if j == m - 1 && hi < 1.0 {
                    return Ok(false);
                }
                t_min = t_min.max(lo);
                if t_min > hi {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Whether some subsegment `x'y'` of `xy` (with `x'` before `y'`) matches
/// the whole curve within `r`.
///
/// The maximal candidate suffices: take `p` as the first point of `xy`
/// within `r` of the curve's start and `q` as the last point within `r` of
/// its end. Any feasible subsegment lies inside `[p, q]`, and its matching
/// extends to `[p, q]` by holding the curve at an endpoint while sliding
/// along `xy` (the slid-over stretch stays inside the respective ball
/// window because windows are intervals).
pub fn subsegment_matchable(
    xy: &OrientedSegment,
    c: &PolyCurve,
    r: f64,
) -> Result<bool, GeometryError> {
    if xy.dim() != c.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: xy.dim(),
            got: c.dim(),
        });
    }
    if r < 0.0 {
        return Ok(false);
    }
    let ri = inflate(r);
    let s = &xy.start.coords;
    let e = &xy.end.coords;
    let first = &c.vertices[0].coords;
    let last = &c.vertices[c.vertices.len() - 1].coords;
    let p = match segment_ball_interval(s, e, first, ri) {
        Some((lo, _)) => lo,
        None => return Ok(false),
    };
    let q = match segment_ball_interval(s, e, last, ri) {
        Some((_, hi)) => hi,
        None => return Ok(false),
    };
    if p > q {
        return Ok(false);
    }
    let sub = OrientedSegment::new(xy.eval(p), xy.eval(q))?;
    // The window endpoints sit at distance ri from the curve's endpoints
    // when the balls are tangency-limited; decide one slack level above
    // the window radius so that boundary is not a coin flip.
    segment_curve_decide(&sub, c, ri)
}

/// Exact discrete Fréchet distance (vertices matched to vertices); an upper
/// bound on the continuous value.
pub fn discrete_frechet(a: &PolyCurve, b: &PolyCurve) -> Result<f64, GeometryError> {
    check_dims(a, b)?;
    let av = &a.vertices;
    let bv = &b.vertices;
    let q = bv.len();
    let mut prev = vec![0.0_f64; q];
    let mut cur = vec![0.0_f64; q];
    for (i, u) in av.iter().enumerate() {
        for (j, v) in bv.iter().enumerate() {
            let d = dist(&u.coords, &v.coords);
            let reach = if i == 0 && j == 0 {
                0.0
            } else if i == 0 {
                cur[j - 1]
            } else if j == 0 {
                prev[0]
            } else {
                prev[j].min(prev[j - 1]).min(cur[j - 1])
            };
            cur[j] = reach.max(d);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[q - 1])
}

/// Splits every edge into pieces no longer than `h`; endpoints and the
/// Fréchet distance to anything are unchanged.
pub fn densify(c: &PolyCurve, h: f64) -> PolyCurve {
    assert!(h > 0.0);
    let mut vertices = Vec::with_capacity(c.vertices.len());
    vertices.push(c.vertices[0].clone());
    for w in c.vertices.windows(2) {
        let len = w[0].dist(&w[1]);
        let pieces = (len / h).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            let t = k as f64 / pieces as f64;
            vertices.push(crate::geometry::Point {
                coords: lerp(&w[0].coords, &w[1].coords, t),
            });
        }
    }
    PolyCurve { vertices }
}
