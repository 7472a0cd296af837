//! Coarse encodings: the (A, B, C) cell tuple that stands in for how a
//! k-vertex query curve threads the input vertices' neighborhoods.
//!
//! C pairs up first-hit cells of the query edges (forward and backward),
//! A and B place surrogate cells for the input edges that bridge
//! consecutive non-null C entries. The preprocessing side asks whether an
//! input curve admits a vertex partition consistent with an encoding (four
//! tests); the query side enumerates every encoding of a concrete curve.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{
    dist_box_box, dist_point_box, fattened_hit_interval, segment_box_clip, GeometryError,
    OrientedSegment, PolyCurve,
};
use crate::grids::{locate, GridCell, GridSet};
use crate::frechet::subsegment_matchable;
use crate::segquery::{SegQueryOutcome, SegmentOracle};
use crate::tolerances::tol_geo;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("need m >= 2 and k >= 3, got m={m}, k={k}")]
    BadArity { m: usize, k: usize },
    #[error("query curve must have at least 3 vertices, got {got}")]
    ArityMismatch { got: usize },
    #[error("invalid encoding: {0}")]
    InvalidEncoding(&'static str),
    #[error("window pair references null cells")]
    NullCells,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The (A, B, C) tuple. Entries are 1-indexed j in [1, k-1] stored at
/// index j-1. C holds (first-hit forward, first-hit backward) cell pairs
/// from the fine grid; A and B hold coarse-grid cells. A[j] is meaningful
/// for j in [1, k-2] plus the fixed A[k-1]; B[j] for j in [2, k-1] plus
/// the fixed B[1]; nullity always mirrors C.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEncoding {
    pub c: Vec<Option<(GridCell, GridCell)>>,
    pub a: Vec<Option<GridCell>>,
    pub b: Vec<Option<GridCell>>,
}

impl CoarseEncoding {
    pub fn k(&self) -> usize {
        self.c.len() + 1
    }

    /// Consecutive non-null C indices (r, s): r < s with only nulls
    /// strictly between. Every non-null j <= k-2 appears as some r, every
    /// non-null j >= 2 as some s.
    pub fn j_set(&self) -> Vec<(usize, usize)> {
        let nonnull: Vec<usize> = (1..self.k())
            .filter(|&j| self.c[j - 1].is_some())
            .collect();
        nonnull.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Structural invariants: ends of C non-null and in the fine grid,
    /// nullity of A/B mirroring C, non-null A/B in the coarse grid within
    /// the (1+11*eps)*delta reach of their C mates.
    pub fn validate(
        &self,
        g1: &GridSet,
        g2: &GridSet,
        eps: f64,
        delta: f64,
    ) -> Result<(), EncodingError> {
        let k = self.k();
        if k < 3 {
            return Err(EncodingError::InvalidEncoding("fewer than 3 query vertices"));
        }
        if self.a.len() != k - 1 || self.b.len() != k - 1 {
            return Err(EncodingError::InvalidEncoding("component length mismatch"));
        }
        if self.c[0].is_none() || self.c[k - 2].is_none() {
            return Err(EncodingError::InvalidEncoding("terminal C entry is null"));
        }
        let bound = (1.0 + 11.0 * eps) * delta + tol_geo(delta);
        for j in 1..k {
            match (&self.c[j - 1], &self.a[j - 1], &self.b[j - 1]) {
                (None, None, None) => {}
                (None, _, _) => {
                    return Err(EncodingError::InvalidEncoding("null C with non-null A/B"));
                }
                (Some((c1, c2)), Some(a), Some(b)) => {
                    if g1.get(&c1.lattice).is_none() || g1.get(&c2.lattice).is_none() {
                        return Err(EncodingError::InvalidEncoding("C cell outside fine grid"));
                    }
                    if g2.get(&a.lattice).is_none() || g2.get(&b.lattice).is_none() {
                        return Err(EncodingError::InvalidEncoding("A/B cell outside coarse grid"));
                    }
                    if dist_box_box(&c2.to_box(), &a.to_box()) > bound {
                        return Err(EncodingError::InvalidEncoding("A cell too far from C mate"));
                    }
                    if dist_box_box(&c1.to_box(), &b.to_box()) > bound {
                        return Err(EncodingError::InvalidEncoding("B cell too far from C mate"));
                    }
                }
                _ => {
                    return Err(EncodingError::InvalidEncoding("non-null C with null A/B"));
                }
            }
        }
        Ok(())
    }
}

/// A partition of an m-vertex curve into k ordered blocks, encoded by the
/// last 1-based vertex index of each prefix: ends[j] closes block j.
/// Block 0 owns the first vertex, block k-1 the last; middle blocks may
/// be empty (ends[j] == ends[j-1]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub ends: Vec<usize>,
}

impl Partition {
    pub fn block_empty(&self, j: usize) -> bool {
        j >= 1 && self.ends[j] == self.ends[j - 1]
    }

    /// 1-based (first, last) vertex indices of a nonempty block j >= 1.
    pub fn block_range(&self, j: usize) -> (usize, usize) {
        (self.ends[j - 1] + 1, self.ends[j])
    }
}

pub struct PartitionIter {
    m: usize,
    k: usize,
    ends: Vec<usize>,
    done: bool,
}

/// All partitions in lexicographic break order. Fewer than m^(k-1) of
/// them.
pub fn enumerate_partitions(m: usize, k: usize) -> Result<PartitionIter, EncodingError> {
    if m < 2 || k < 3 {
        return Err(EncodingError::BadArity { m, k });
    }
    let mut ends = vec![1usize; k];
    ends[k - 1] = m;
    Ok(PartitionIter { m, k, ends, done: false })
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let out = Partition { ends: self.ends.clone() };
        // Advance the rightmost movable break; the tail resets to the
        // smallest monotone continuation.
        let mut i = self.k - 1;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.ends[i] < self.m - 1 {
                self.ends[i] += 1;
                let v = self.ends[i];
                for j in i + 1..self.k - 1 {
                    self.ends[j] = v;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Partitions of `tau` passing the tests that do not depend on the
/// enumerated A/B cells: the nullity test, the clipped-segment matching
/// test against the C pairs, and the endpoint location test against the
/// fixed end cells. Empty when the endpoint test already fails.
pub(crate) fn partitions_passing_static_tests(
    tau: &PolyCurve,
    c_row: &[Option<(GridCell, GridCell)>],
    b1: &GridCell,
    ak1: &GridCell,
    eps: f64,
    delta: f64,
) -> Result<Vec<Partition>, EncodingError> {
    let m = tau.num_vertices();
    let k = c_row.len() + 1;
    if m < 2 {
        return Err(EncodingError::BadArity { m, k });
    }
    let tol = tol_geo(delta);
    let first = &tau.vertices[0].coords;
    let last = &tau.vertices[m - 1].coords;
    if dist_point_box(first, &b1.to_box()) > delta + tol
        || dist_point_box(last, &ak1.to_box()) > delta + tol
    {
        return Ok(Vec::new());
    }
    let r_match = (1.0 + 12.0 * eps) * delta;
    let mut segs: Vec<Option<OrientedSegment>> = Vec::with_capacity(k - 1);
    for entry in c_row {
        segs.push(match entry {
            Some((c1, c2)) => Some(OrientedSegment::new(c1.min_vertex(), c2.min_vertex())?),
            None => None,
        });
    }
    let mut memo: HashMap<(usize, usize, usize), bool> = HashMap::new();
    let mut out = Vec::new();
    'parts: for part in enumerate_partitions(m, k)? {
        for j in 2..k {
            if part.block_empty(j) != c_row[j - 1].is_none() {
                continue 'parts;
            }
        }
        for j in 1..k {
            if part.block_empty(j) {
                continue;
            }
            let (a_j, b_j) = part.block_range(j);
            let pass = match memo.get(&(j, a_j, b_j)) {
                Some(&p) => p,
                None => {
                    let seg = segs[j - 1].as_ref().expect("nullity checked above");
                    let sub = tau.slice(a_j - 1, b_j - 1);
                    let p = subsegment_matchable(seg, &sub, r_match)?;
                    memo.insert((j, a_j, b_j), p);
                    p
                }
            };
            if !pass {
                continue 'parts;
            }
        }
        out.push(part);
    }
    Ok(out)
}

/// Entry-order slack for the edge-through-cells test, in edge parameter
/// units.
pub(crate) const CELL_WALK_TOL: f64 = 1e-12;

/// The remaining test: for each bridged gap (r, s), the input edge leaving
/// the last vertex of block r must pass through A[r] and B[s], entering
/// A[r] no later.
pub(crate) fn partition_passes_cell_walk(
    tau: &PolyCurve,
    e: &CoarseEncoding,
    part: &Partition,
) -> bool {
    for (r, s) in e.j_set() {
        let b_r = if r == 1 && part.block_empty(1) {
            1
        } else {
            part.ends[r]
        };
        let v0 = &tau.vertices[b_r - 1].coords;
        let v1 = &tau.vertices[b_r].coords;
        let abox = e.a[r - 1].as_ref().expect("j_set implies non-null").to_box();
        let bbox = e.b[s - 1].as_ref().expect("j_set implies non-null").to_box();
        match (
            segment_box_clip(v0, v1, &abox),
            segment_box_clip(v0, v1, &bbox),
        ) {
            (Some((ta, _)), Some((tb, _))) => {
                if ta.max(0.0) > tb.max(0.0) + CELL_WALK_TOL {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Whether some partition of `tau`'s vertices passes all four tests for
/// `e`. Independent of enumeration order: the result is an existence
/// statement over partitions.
pub fn curve_matches_encoding(
    tau: &PolyCurve,
    e: &CoarseEncoding,
    g1: &GridSet,
    g2: &GridSet,
    eps: f64,
    delta: f64,
) -> Result<bool, EncodingError> {
    e.validate(g1, g2, eps, delta)?;
    let k = e.k();
    let b1 = e.b[0].as_ref().expect("validated");
    let ak1 = e.a[k - 2].as_ref().expect("validated");
    let parts = partitions_passing_static_tests(tau, &e.c, b1, ak1, eps, delta)?;
    Ok(parts.iter().any(|p| partition_passes_cell_walk(tau, e, p)))
}

/// Constraint 3(c) for one bridged gap: some subsegment of the segment
/// joining the smallest vertices of A[r] and B[s] matches the query
/// subcurve w_{r+1}..w_s within (1+eps)*delta.
pub fn check_matchable_window(
    e: &CoarseEncoding,
    sigma: &PolyCurve,
    rs: (usize, usize),
    eps: f64,
    delta: f64,
) -> Result<bool, EncodingError> {
    let (r, s) = rs;
    if !e.j_set().contains(&rs) {
        return Err(EncodingError::NullCells);
    }
    let xa = e.a[r - 1].as_ref().ok_or(EncodingError::NullCells)?.min_vertex();
    let xb = e.b[s - 1].as_ref().ok_or(EncodingError::NullCells)?.min_vertex();
    let seg = OrientedSegment::new(xa, xb)?;
    let sub = sigma.slice(r, s - 1);
    Ok(subsegment_matchable(&seg, &sub, (1.0 + eps) * delta)?)
}

/// Coarse-grid cells within `radius` of a box, as ascending indices into
/// the set.
pub(crate) fn g2_neighborhood(g2: &GridSet, around: &crate::geometry::Aabb, radius: f64) -> Vec<u32> {
    // Same comparison as encoding validation, so every candidate the
    // enumeration admits also validates.
    g2.cells
        .iter()
        .enumerate()
        .filter(|(_, c)| dist_box_box(&c.to_box(), around) <= radius)
        .map(|(i, _)| i as u32)
        .collect()
}

pub enum QueryEncodingStream<'a> {
    /// The oracle certified that the query is globally far; no search is
    /// needed.
    NoForAnn,
    Iter(QueryEncodings<'a>),
}

struct Slot {
    j: usize,
    is_a: bool,
    cands: Vec<u32>,
}

struct ComboState {
    c_row: Vec<Option<(GridCell, GridCell)>>,
    jset: Vec<(usize, usize)>,
    slots: Vec<Slot>,
    pos: Vec<usize>,
    fresh: bool,
}

pub struct QueryEncodings<'a> {
    g2: &'a GridSet,
    sigma: &'a PolyCurve,
    eps: f64,
    delta: f64,
    k: usize,
    u: Vec<Option<(GridCell, GridCell)>>,
    b1: Option<GridCell>,
    ak1: Option<GridCell>,
    middles: Vec<usize>,
    cand_a: HashMap<usize, Vec<u32>>,
    cand_b: HashMap<usize, Vec<u32>>,
    sub_sigma: HashMap<(usize, usize), PolyCurve>,
    window_cache: HashMap<(usize, usize, u32, u32), bool>,
    mask: u32,
    combo: Option<ComboState>,
    total: u128,
    dead: bool,
}

/// Enumerates every coarse encoding of `sigma`, lazily and in a fixed
/// order: C combinations by ascending null-mask, then the A/B slots in
/// index order with coarse-grid candidates ascending. Short-circuits when
/// the oracle certifies a global miss. Yields nothing when a terminal C
/// pair is null or an endpoint fails point location (no encoding exists).
pub(crate) enum UPairs {
    NoForAnn,
    Pairs(Vec<Option<(GridCell, GridCell)>>),
}

/// The per-edge first-hit cell pairs: forward and backward (11*eps*delta)
/// queries on every edge, with a pair reset to null when the two fattened
/// windows come out of order. A certified global miss short-circuits.
pub(crate) fn compute_u(
    sigma: &PolyCurve,
    oracle: &dyn SegmentOracle,
    eps: f64,
    delta: f64,
) -> Result<UPairs, EncodingError> {
    let k = sigma.num_vertices();
    if k < 3 {
        return Err(EncodingError::ArityMismatch { got: k });
    }
    let lambda = 11.0 * eps * delta;
    let tol = tol_geo(delta);
    let mut u: Vec<Option<(GridCell, GridCell)>> = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let fwd = OrientedSegment::new(sigma.vertices[j].clone(), sigma.vertices[j + 1].clone())?;
        let bwd = OrientedSegment::new(sigma.vertices[j + 1].clone(), sigma.vertices[j].clone())?;
        let r1 = oracle.segment_query(&fwd);
        if r1 == SegQueryOutcome::NoForAnn {
            return Ok(UPairs::NoForAnn);
        }
        let r2 = oracle.segment_query(&bwd);
        if r2 == SegQueryOutcome::NoForAnn {
            return Ok(UPairs::NoForAnn);
        }
        u.push(match (r1, r2) {
            (SegQueryOutcome::Cell(c1), SegQueryOutcome::Cell(c2)) => {
                if ordering_holds(&fwd, &c1, &c2, lambda, tol) {
                    Some((c1, c2))
                } else {
                    // The cells cannot both be matched along this edge, so
                    // the pair is reset.
                    None
                }
            }
            _ => None,
        });
    }
    Ok(UPairs::Pairs(u))
}

pub fn generate_query_encodings<'a>(
    sigma: &'a PolyCurve,
    g1: &GridSet,
    g2: &'a GridSet,
    oracle: &dyn SegmentOracle,
    eps: f64,
    delta: f64,
) -> Result<QueryEncodingStream<'a>, EncodingError> {
    let k = sigma.num_vertices();
    let tol = tol_geo(delta);
    let u = match compute_u(sigma, oracle, eps, delta)? {
        UPairs::NoForAnn => return Ok(QueryEncodingStream::NoForAnn),
        UPairs::Pairs(u) => u,
    };
    let _ = g1;

    let mut out = QueryEncodings {
        g2,
        sigma,
        eps,
        delta,
        k,
        u,
        b1: None,
        ak1: None,
        middles: Vec::new(),
        cand_a: HashMap::new(),
        cand_b: HashMap::new(),
        sub_sigma: HashMap::new(),
        window_cache: HashMap::new(),
        mask: 0,
        combo: None,
        total: 0,
        dead: true,
    };
    if out.u[0].is_none() || out.u[k - 2].is_none() {
        return Ok(QueryEncodingStream::Iter(out));
    }
    let Some(b1) = locate(g2, &sigma.vertices[0].coords).cloned() else {
        return Ok(QueryEncodingStream::Iter(out));
    };
    let Some(ak1) = locate(g2, &sigma.vertices[k - 1].coords).cloned() else {
        return Ok(QueryEncodingStream::Iter(out));
    };
    // The fixed end cells must still respect the reach constraint on
    // their C mates; otherwise no valid encoding exists.
    let bound = (1.0 + 11.0 * eps) * delta + tol;
    let c11 = &out.u[0].as_ref().unwrap().0;
    let ck2 = &out.u[k - 2].as_ref().unwrap().1;
    if dist_box_box(&c11.to_box(), &b1.to_box()) > bound
        || dist_box_box(&ck2.to_box(), &ak1.to_box()) > bound
    {
        return Ok(QueryEncodingStream::Iter(out));
    }

    out.middles = (2..k.saturating_sub(1))
        .filter(|&j| out.u[j - 1].is_some())
        .collect();
    for j in 1..k {
        let Some((c1, c2)) = &out.u[j - 1] else { continue };
        if j <= k - 2 {
            out.cand_a.insert(j, g2_neighborhood(g2, &c2.to_box(), bound));
        }
        if j >= 2 {
            out.cand_b.insert(j, g2_neighborhood(g2, &c1.to_box(), bound));
        }
    }
    out.b1 = Some(b1);
    out.ak1 = Some(ak1);
    out.dead = false;
    out.total = out.count_all();
    Ok(QueryEncodingStream::Iter(out))
}

/// The edge-direction windows of the two first-hit cells must overlap in
/// order: entry into the forward cell's fattening no later than the exit
/// from the backward cell's. Degenerate edges pass trivially (both
/// fattenings contain the point).
fn ordering_holds(
    fwd: &OrientedSegment,
    c1: &GridCell,
    c2: &GridCell,
    lambda: f64,
    tol: f64,
) -> bool {
    if fwd.len() == 0.0 {
        return true;
    }
    let b1 = c1.to_box();
    let b2 = c2.to_box();
    let d1 = |p: &[f64]| dist_point_box(p, &b1);
    let d2 = |p: &[f64]| dist_point_box(p, &b2);
    let w1 = fattened_hit_interval(fwd, &d1, lambda, tol);
    let w2 = fattened_hit_interval(fwd, &d2, lambda, tol);
    match (w1, w2) {
        (Ok(Some((enter, _))), Ok(Some((_, exit)))) => {
            enter <= exit + tol / fwd.len().max(tol)
        }
        _ => false,
    }
}

impl<'a> QueryEncodings<'a> {
    /// Total assignments across all C combinations, before the matchable
    /// window filter.
    pub fn candidate_count(&self) -> u128 {
        self.total
    }

    fn count_all(&self) -> u128 {
        let mut total: u128 = 0;
        for mask in 0u32..(1u32 << self.middles.len()) {
            let mut prod: u128 = 1;
            for j in 1..self.k {
                if !self.entry_active(j, mask) {
                    continue;
                }
                if j <= self.k - 2 {
                    prod = prod.saturating_mul(self.cand_a[&j].len() as u128);
                }
                if j >= 2 {
                    prod = prod.saturating_mul(self.cand_b[&j].len() as u128);
                }
            }
            total = total.saturating_add(prod);
        }
        total
    }

    fn entry_active(&self, j: usize, mask: u32) -> bool {
        if self.u[j - 1].is_none() {
            return false;
        }
        match self.middles.iter().position(|&mj| mj == j) {
            Some(bit) => mask & (1 << bit) == 0,
            None => true,
        }
    }

    fn build_combo(&mut self, mask: u32) -> ComboState {
        let c_row: Vec<Option<(GridCell, GridCell)>> = (1..self.k)
            .map(|j| {
                if self.entry_active(j, mask) {
                    self.u[j - 1].clone()
                } else {
                    None
                }
            })
            .collect();
        let nonnull: Vec<usize> = (1..self.k).filter(|&j| c_row[j - 1].is_some()).collect();
        let jset: Vec<(usize, usize)> = nonnull.windows(2).map(|w| (w[0], w[1])).collect();
        for &(r, s) in &jset {
            self.sub_sigma
                .entry((r, s))
                .or_insert_with(|| self.sigma.slice(r, s - 1));
        }
        let mut slots = Vec::new();
        for &j in &nonnull {
            if j <= self.k - 2 {
                slots.push(Slot { j, is_a: true, cands: self.cand_a[&j].clone() });
            }
            if j >= 2 {
                slots.push(Slot { j, is_a: false, cands: self.cand_b[&j].clone() });
            }
        }
        let pos = vec![0usize; slots.len()];
        ComboState { c_row, jset, slots, pos, fresh: true }
    }

    /// Current slot assignment for entry (j, is_a), as a coarse-grid index.
    fn slot_value(combo: &ComboState, j: usize, is_a: bool) -> Option<u32> {
        combo
            .slots
            .iter()
            .position(|s| s.j == j && s.is_a == is_a)
            .map(|i| combo.slots[i].cands[combo.pos[i]])
    }

    /// Constraint 3(c) for one gap and one (A, B) assignment, cached.
    fn window_pair(&mut self, r: usize, s: usize, ai: u32, bi: u32) -> bool {
        let key = (r, s, ai, bi);
        if let Some(&p) = self.window_cache.get(&key) {
            return p;
        }
        let xa = self.g2.cells[ai as usize].min_vertex();
        let xb = self.g2.cells[bi as usize].min_vertex();
        let seg = OrientedSegment::new(xa, xb).expect("grid dims agree");
        let sub = &self.sub_sigma[&(r, s)];
        let p = subsegment_matchable(&seg, sub, (1.0 + self.eps) * self.delta)
            .expect("dimensions checked at construction");
        self.window_cache.insert(key, p);
        p
    }

    fn windows_pass(&mut self) -> bool {
        let combo = self.combo.take().unwrap();
        let mut ok = true;
        for &(r, s) in &combo.jset {
            let ai = Self::slot_value(&combo, r, true).expect("r <= k-2 has an A slot");
            let bi = Self::slot_value(&combo, s, false).expect("s >= 2 has a B slot");
            if !self.window_pair(r, s, ai, bi) {
                ok = false;
                break;
            }
        }
        self.combo = Some(combo);
        ok
    }

    fn emit_with(&self, combo: &ComboState) -> CoarseEncoding {
        let k = self.k;
        let mut a: Vec<Option<GridCell>> = vec![None; k - 1];
        let mut b: Vec<Option<GridCell>> = vec![None; k - 1];
        for (i, slot) in combo.slots.iter().enumerate() {
            let cell = self.g2.cells[slot.cands[combo.pos[i]] as usize].clone();
            if slot.is_a {
                a[slot.j - 1] = Some(cell);
            } else {
                b[slot.j - 1] = Some(cell);
            }
        }
        if combo.c_row[k - 2].is_some() {
            a[k - 2] = Some(self.ak1.clone().unwrap());
        }
        if combo.c_row[0].is_some() {
            b[0] = Some(self.b1.clone().unwrap());
        }
        CoarseEncoding { c: combo.c_row.clone(), a, b }
    }

    /// Advances the slot odometer; false when this combination is spent.
    fn advance(combo: &mut ComboState) -> bool {
        if combo.fresh {
            combo.fresh = false;
            return !combo.slots.iter().any(|s| s.cands.is_empty());
        }
        let n = combo.slots.len();
        if n == 0 {
            return false;
        }
        let mut i = n;
        while i > 0 {
            i -= 1;
            combo.pos[i] += 1;
            if combo.pos[i] < combo.slots[i].cands.len() {
                return true;
            }
            combo.pos[i] = 0;
        }
        false
    }

    /// The first encoding in enumeration order matched by some curve,
    /// with the smallest matching curve index, found without walking the
    /// full candidate product. The edge-through-cells test confines
    /// matching A/B cells per gap to cells the relevant input edge clips,
    /// and each slot belongs to exactly one gap, so the minimal matching
    /// assignment decomposes per gap (minimal A candidate with an
    /// admissible partner, then its minimal partner); minimizing across
    /// curves and partitions and C combinations in order gives exactly
    /// the first encoding a full scan would report.
    pub(crate) fn first_match(
        &mut self,
        curves: &[PolyCurve],
    ) -> Result<Option<(CoarseEncoding, u32)>, EncodingError> {
        if self.dead {
            return Ok(None);
        }
        let eps = self.eps;
        let delta = self.delta;
        let b1 = self.b1.clone().expect("live stream has end cells");
        let ak1 = self.ak1.clone().expect("live stream has end cells");
        for mask in 0u32..(1u32 << self.middles.len()) {
            let combo = self.build_combo(mask);
            if combo.slots.iter().any(|s| s.cands.is_empty()) {
                continue;
            }
            let slot_of = |j: usize, is_a: bool| -> usize {
                combo
                    .slots
                    .iter()
                    .position(|s| s.j == j && s.is_a == is_a)
                    .expect("every gap endpoint has a slot")
            };
            let mut parts_per_curve: Vec<Vec<Partition>> = Vec::with_capacity(curves.len());
            for tau in curves {
                parts_per_curve.push(partitions_passing_static_tests(
                    tau, &combo.c_row, &b1, &ak1, eps, delta,
                )?);
            }
            let mut best: Option<Vec<usize>> = None;
            for (ci, tau) in curves.iter().enumerate() {
                'parts: for p in &parts_per_curve[ci] {
                    let mut pos = vec![usize::MAX; combo.slots.len()];
                    for &(r, s) in &combo.jset {
                        let b_r = if r == 1 && p.block_empty(1) { 1 } else { p.ends[r] };
                        let v0 = tau.vertices[b_r - 1].coords.clone();
                        let v1 = tau.vertices[b_r].coords.clone();
                        let a_slot = slot_of(r, true);
                        let b_slot = slot_of(s, false);
                        let mut hit: Option<(usize, usize)> = None;
                        'fa: for (apos, &ai) in combo.slots[a_slot].cands.iter().enumerate() {
                            let abox = self.g2.cells[ai as usize].to_box();
                            let Some((ta, _)) = segment_box_clip(&v0, &v1, &abox) else {
                                continue;
                            };
                            let ta = ta.max(0.0);
                            for (bpos, &bi) in combo.slots[b_slot].cands.iter().enumerate() {
                                let bbox = self.g2.cells[bi as usize].to_box();
                                let Some((tb, _)) = segment_box_clip(&v0, &v1, &bbox) else {
                                    continue;
                                };
                                if ta > tb.max(0.0) + CELL_WALK_TOL {
                                    continue;
                                }
                                if !self.window_pair(r, s, ai, bi) {
                                    continue;
                                }
                                hit = Some((apos, bpos));
                                break 'fa;
                            }
                        }
                        match hit {
                            Some((apos, bpos)) => {
                                pos[a_slot] = apos;
                                pos[b_slot] = bpos;
                            }
                            None => continue 'parts,
                        }
                    }
                    if best.as_ref().map_or(true, |b| pos < *b) {
                        best = Some(pos);
                    }
                }
            }
            if let Some(pos) = best {
                let mut chosen = combo;
                chosen.pos = pos;
                let e = self.emit_with(&chosen);
                for (ci, tau) in curves.iter().enumerate() {
                    if parts_per_curve[ci]
                        .iter()
                        .any(|p| partition_passes_cell_walk(tau, &e, p))
                    {
                        return Ok(Some((e, ci as u32)));
                    }
                }
                unreachable!("minimal assignment came from a matching curve");
            }
        }
        Ok(None)
    }
}

impl<'a> Iterator for QueryEncodings<'a> {
    type Item = CoarseEncoding;

    fn next(&mut self) -> Option<CoarseEncoding> {
        if self.dead {
            return None;
        }
        loop {
            if self.combo.is_none() {
                if self.mask >= (1u32 << self.middles.len()) {
                    self.dead = true;
                    return None;
                }
                let combo = self.build_combo(self.mask);
                self.mask += 1;
                self.combo = Some(combo);
            }
            if !Self::advance(self.combo.as_mut().unwrap()) {
                self.combo = None;
                continue;
            }
            if self.windows_pass() {
                return Some(self.emit_with(self.combo.as_ref().unwrap()));
            }
        }
    }
}

/// Canonical trie key: k and the ambient dimension, then per entry the C
/// pair, A, and B, each as a null flag followed by the lattice tuple in
/// little-endian i64. Equal encodings produce equal bytes and conversely.
pub fn encode_key(e: &CoarseEncoding) -> Vec<u8> {
    let k = e.k();
    let d = e.c[0].as_ref().map_or(0, |(c1, _)| c1.dim());
    let mut buf = Vec::with_capacity(8 + (k - 1) * (4 * d * 8 + 4));
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    let push_cell = |buf: &mut Vec<u8>, c: Option<&GridCell>| match c {
        None => buf.push(0),
        Some(cell) => {
            buf.push(1);
            for &x in &cell.lattice {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    };
    for j in 0..k - 1 {
        match &e.c[j] {
            None => buf.push(0),
            Some((c1, c2)) => {
                buf.push(1);
                for &x in &c1.lattice {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                for &x in &c2.lattice {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        push_cell(&mut buf, e.a[j].as_ref());
        push_cell(&mut buf, e.b[j].as_ref());
    }
    buf
}

/// Inverse of `encode_key`; the grid widths are externally known context.
pub fn decode_key(bytes: &[u8], w1: f64, w2: f64) -> Result<CoarseEncoding, EncodingError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<usize, EncodingError> {
        let p = *pos;
        if p + n > bytes.len() {
            return Err(EncodingError::InvalidEncoding("truncated key"));
        }
        *pos = p + n;
        Ok(p)
    };
    let p = take(&mut pos, 4)?;
    let k = u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    let p = take(&mut pos, 4)?;
    let d = u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    if k < 3 || d == 0 {
        return Err(EncodingError::InvalidEncoding("bad key header"));
    }
    let read_lattice = |pos: &mut usize| -> Result<Vec<i64>, EncodingError> {
        let p = take(pos, 8 * d)?;
        Ok((0..d)
            .map(|i| i64::from_le_bytes(bytes[p + 8 * i..p + 8 * i + 8].try_into().unwrap()))
            .collect())
    };
    let mut c = Vec::with_capacity(k - 1);
    let mut a = Vec::with_capacity(k - 1);
    let mut b = Vec::with_capacity(k - 1);
    for _ in 0..k - 1 {
        let p = take(&mut pos, 1)?;
        c.push(if bytes[p] == 1 {
            let l1 = read_lattice(&mut pos)?;
            let l2 = read_lattice(&mut pos)?;
            Some((
                GridCell { lattice: l1, width: w1 },
                GridCell { lattice: l2, width: w1 },
            ))
        } else {
            None
        });
        for out in [&mut a, &mut b] {
            let p = take(&mut pos, 1)?;
            out.push(if bytes[p] == 1 {
                Some(GridCell { lattice: read_lattice(&mut pos)?, width: w2 })
            } else {
                None
            });
        }
    }
    if pos != bytes.len() {
        return Err(EncodingError::InvalidEncoding("trailing bytes in key"));
    }
    Ok(CoarseEncoding { c, a, b })
}
