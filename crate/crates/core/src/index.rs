//! The two near-neighbor structures over a fixed corpus: a trie of coarse
//! encodings answering at factor 1+24*eps, and a trie of cell-center
//! polylines answering at factor 3+24*eps. Both come in an eager build
//! (enumerate every candidate up front, refuse past a budget) and a lazy
//! build (evaluate only what queries touch).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{
    compute_u, curve_matches_encoding, encode_key, g2_neighborhood, generate_query_encodings,
    CoarseEncoding, EncodingError, QueryEncodingStream, UPairs,
};
use crate::frechet::frechet_decide;
use crate::geometry::{GeometryError, PolyCurve};
use crate::grids::{build_grids, GridCell, GridError, GridRole, GridSet};
use crate::segquery::{
    build_canonical_structure, BruteOracle, SegQueryError, SegQueryStructure, SegmentOracle,
};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("eager build needs {estimated} candidate evaluations, budget is {budget}")]
    FeasibilityRefused { estimated: u128, budget: u128 },
    #[error("bad parameters: {0}")]
    BadParams(&'static str),
    #[error("query has {got} vertices, index arity is {k}")]
    ArityMismatch { got: usize, k: usize },
    #[error("index file does not match: {0}")]
    CorpusMismatch(String),
    #[error("malformed index file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    SegQuery(#[from] SegQueryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    OneEps,
    ThreeEps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    LazyMemo,
    Eager,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleKind {
    Brute,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Curve(usize),
    No,
}

/// Key-to-representative map. Collisions keep the smaller curve index, so
/// insertion order never shows in the content.
#[derive(Debug, Default, Clone)]
pub struct Trie {
    map: HashMap<Vec<u8>, u32>,
}

impl Trie {
    pub fn insert(&mut self, key: Vec<u8>, index: u32) {
        self.map
            .entry(key)
            .and_modify(|v| *v = (*v).min(index))
            .or_insert(index);
    }

    pub fn lookup(&self, key: &[u8]) -> Option<u32> {
        self.map.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries sorted by key, for stable serialization and sweeps.
    pub fn entries_sorted(&self) -> Vec<(&[u8], u32)> {
        let mut v: Vec<(&[u8], u32)> = self.map.iter().map(|(k, &i)| (k.as_slice(), i)).collect();
        v.sort();
        v
    }
}

/// Dense store for the eager cell-sequence variant: one flat table per
/// sequence length, indexed by the mixed-radix tuple of coarse-grid cell
/// positions. Four bytes per candidate, so a budget-sized enumeration
/// stays storable where a keyed map would not.
struct SeqTable {
    n1: usize,
    /// `tables[l - 2]` covers length-`2l` sequences, `n1^(2l)` slots.
    tables: Vec<Vec<u32>>,
}

const SEQ_MISS: u32 = u32::MAX;

impl SeqTable {
    fn new(n1: usize, k: usize) -> SeqTable {
        let tables = (2..k)
            .map(|l| {
                let size = if n1 == 0 {
                    0
                } else {
                    (0..2 * l).fold(1usize, |a, _| a * n1)
                };
                vec![SEQ_MISS; size]
            })
            .collect();
        SeqTable { n1, tables }
    }

    fn offset(&self, positions: &[usize]) -> usize {
        positions.iter().fold(0usize, |acc, &p| acc * self.n1 + p)
    }

    fn decode(&self, len: usize, offset: usize) -> Vec<usize> {
        let mut pos = vec![0usize; len];
        let mut rem = offset;
        for slot in (0..len).rev() {
            pos[slot] = rem % self.n1;
            rem /= self.n1;
        }
        pos
    }

    fn get(&self, positions: &[usize]) -> Option<u32> {
        if positions.len() % 2 != 0 || positions.len() < 4 {
            return None;
        }
        let l = positions.len() / 2;
        let t = self.tables.get(l - 2)?;
        match *t.get(self.offset(positions))? {
            SEQ_MISS => None,
            v => Some(v),
        }
    }
}

/// Result of running the per-edge queries and connecting cell centers.
#[derive(Debug, Clone)]
pub enum Sigma0 {
    /// The oracle certified a global miss.
    NoForAnn,
    /// A terminal pair was null; no surrogate exists.
    Absent,
    Built {
        /// Center polyline with consecutive duplicate centers collapsed.
        polyline: PolyCurve,
        /// The uncollapsed cell sequence, the trie key material.
        cells: Vec<GridCell>,
    },
}

/// Runs the per-edge first-hit queries for `sigma` and, when both
/// terminal pairs survive, connects the cell centers in order.
pub fn build_sigma0(
    sigma: &PolyCurve,
    oracle: &dyn SegmentOracle,
    eps: f64,
    delta: f64,
) -> Result<Sigma0, EncodingError> {
    let u = match compute_u(sigma, oracle, eps, delta)? {
        UPairs::NoForAnn => return Ok(Sigma0::NoForAnn),
        UPairs::Pairs(u) => u,
    };
    let k = sigma.num_vertices();
    if u[0].is_none() || u[k - 2].is_none() {
        return Ok(Sigma0::Absent);
    }
    let mut cells = Vec::new();
    for pair in u.into_iter().flatten() {
        cells.push(pair.0);
        cells.push(pair.1);
    }
    Ok(Sigma0::Built {
        polyline: centers_polyline(&cells),
        cells,
    })
}

/// Polyline through the cell centers, consecutive duplicates collapsed.
/// Duplicated vertices do not move the Frechet distance, so the collapse
/// is free; it keeps degenerate center runs from bloating the curve.
fn centers_polyline(cells: &[GridCell]) -> PolyCurve {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cells.len());
    for c in cells {
        let ctr = c.center();
        if rows.last().map_or(true, |prev| prev != &ctr.coords) {
            rows.push(ctr.coords);
        }
    }
    PolyCurve::from_rows(&rows).expect("at least one center")
}

/// Trie key for a cell sequence: count, dimension, then lattices in
/// little-endian i64.
fn sequence_key(cells: &[GridCell]) -> Vec<u8> {
    let d = cells.first().map_or(0, |c| c.dim());
    let mut buf = Vec::with_capacity(8 + cells.len() * d * 8);
    buf.extend_from_slice(&(cells.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for c in cells {
        for &x in &c.lattice {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub const DEFAULT_BUDGET: u128 = 100_000_000;

/// The eager evaluation budget: FANN_BUDGET overrides the default.
pub fn budget_from_env() -> u128 {
    std::env::var("FANN_BUDGET")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_BUDGET)
}

pub struct AnnIndex {
    pub variant: Variant,
    pub mode: Mode,
    pub oracle_kind: OracleKind,
    pub eps: f64,
    pub delta: f64,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    curves: Vec<PolyCurve>,
    g1: GridSet,
    g2: GridSet,
    g3: GridSet,
    canonical: Option<SegQueryStructure>,
    trie: Trie,
    seq: Option<SeqTable>,
    memo: Mutex<HashMap<Vec<u8>, Option<u32>>>,
}

impl AnnIndex {
    pub fn build(
        curves: &[PolyCurve],
        variant: Variant,
        mode: Mode,
        oracle_kind: OracleKind,
        eps: f64,
        delta: f64,
        k: usize,
    ) -> Result<AnnIndex, IndexError> {
        Self::build_with_budget(curves, variant, mode, oracle_kind, eps, delta, k, budget_from_env())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build_with_budget(
        curves: &[PolyCurve],
        variant: Variant,
        mode: Mode,
        oracle_kind: OracleKind,
        eps: f64,
        delta: f64,
        k: usize,
        budget: u128,
    ) -> Result<AnnIndex, IndexError> {
        if k < 3 {
            return Err(IndexError::BadParams("query arity must be at least 3"));
        }
        if let Some(first) = curves.first() {
            if curves.iter().any(|c| c.dim() != first.dim()) {
                return Err(IndexError::BadParams("curves have mixed dimensions"));
            }
        }
        let m = curves.iter().map(|c| c.num_vertices()).max().unwrap_or(0);
        let padded: Vec<PolyCurve> = curves.iter().map(|c| c.pad_to(m)).collect();
        let (g1, g2, g3) = build_grids(&padded, eps, delta)?;
        let d = padded.first().map_or(0, |c| c.dim());
        let canonical = match oracle_kind {
            OracleKind::Canonical => Some(build_canonical_structure(&padded, eps, delta)?),
            OracleKind::Brute => None,
        };
        let mut idx = AnnIndex {
            variant,
            mode,
            oracle_kind,
            eps,
            delta,
            k,
            d,
            m,
            curves: padded,
            g1,
            g2,
            g3,
            canonical,
            trie: Trie::default(),
            seq: None,
            memo: Mutex::new(HashMap::new()),
        };
        if mode == Mode::Eager {
            match variant {
                Variant::OneEps => idx.build_eager_one_eps(budget)?,
                Variant::ThreeEps => idx.build_eager_three_eps(budget)?,
            }
        }
        Ok(idx)
    }

    pub fn curves(&self) -> &[PolyCurve] {
        &self.curves
    }

    pub fn grid_sizes(&self) -> (usize, usize, usize) {
        (self.g1.len(), self.g2.len(), self.g3.len())
    }

    /// Number of stored key-to-representative entries, across either
    /// representation.
    pub fn trie_len(&self) -> usize {
        match &self.seq {
            Some(seq) => seq
                .tables
                .iter()
                .map(|t| t.iter().filter(|&&v| v != SEQ_MISS).count())
                .sum(),
            None => self.trie.len(),
        }
    }

    pub fn trie(&self) -> &Trie {
        &self.trie
    }

    fn with_oracle<R>(&self, f: impl FnOnce(&dyn SegmentOracle) -> R) -> R {
        match self.oracle_kind {
            OracleKind::Brute => f(&BruteOracle { g1: &self.g1 }),
            OracleKind::Canonical => f(self.canonical.as_ref().expect("built with structure")),
        }
    }

    /// Pads short queries up to the index arity; longer queries are a
    /// caller error.
    fn prepare_query(&self, sigma: &PolyCurve) -> Result<PolyCurve, IndexError> {
        let got = sigma.num_vertices();
        if got > self.k {
            return Err(IndexError::ArityMismatch { got, k: self.k });
        }
        if self.d != 0 && sigma.dim() != self.d {
            return Err(IndexError::Geometry(GeometryError::DimensionMismatch {
                expected: self.d,
                got: sigma.dim(),
            }));
        }
        Ok(sigma.pad_to(self.k))
    }

    pub fn query(&self, sigma: &PolyCurve) -> Result<Answer, IndexError> {
        let sigma = self.prepare_query(sigma)?;
        if self.curves.is_empty() {
            return Ok(Answer::No);
        }
        match self.variant {
            Variant::OneEps => self.query_one_eps(&sigma),
            Variant::ThreeEps => self.query_three_eps(&sigma),
        }
    }

    fn query_one_eps(&self, sigma: &PolyCurve) -> Result<Answer, IndexError> {
        let stream = self.with_oracle(|oracle| {
            generate_query_encodings(sigma, &self.g1, &self.g2, oracle, self.eps, self.delta)
        })?;
        let mut encs = match stream {
            QueryEncodingStream::NoForAnn => return Ok(Answer::No),
            QueryEncodingStream::Iter(it) => it,
        };
        match self.mode {
            Mode::Eager => {
                for e in encs {
                    if let Some(i) = self.trie.lookup(&encode_key(&e)) {
                        return Ok(Answer::Curve(i as usize));
                    }
                }
                Ok(Answer::No)
            }
            Mode::LazyMemo => match encs.first_match(&self.curves)? {
                Some((e, leaf)) => {
                    self.memo
                        .lock()
                        .expect("memo lock")
                        .insert(encode_key(&e), Some(leaf));
                    Ok(Answer::Curve(leaf as usize))
                }
                None => Ok(Answer::No),
            },
        }
    }

    fn query_three_eps(&self, sigma: &PolyCurve) -> Result<Answer, IndexError> {
        let s0 = self.with_oracle(|oracle| build_sigma0(sigma, oracle, self.eps, self.delta))?;
        let (polyline, cells) = match s0 {
            Sigma0::NoForAnn | Sigma0::Absent => return Ok(Answer::No),
            Sigma0::Built { polyline, cells } => (polyline, cells),
        };
        if !frechet_decide(sigma, &polyline, (2.0 + 12.0 * self.eps) * self.delta)? {
            return Ok(Answer::No);
        }
        match self.mode {
            Mode::Eager => {
                let seq = self.seq.as_ref().expect("eager build populated");
                let mut positions = Vec::with_capacity(cells.len());
                for c in &cells {
                    // The oracle only ever hands back stored cells; a miss
                    // means no stored sequence can match.
                    match self.g1.position(&c.lattice) {
                        Some(p) => positions.push(p),
                        None => return Ok(Answer::No),
                    }
                }
                Ok(match seq.get(&positions) {
                    Some(i) => Answer::Curve(i as usize),
                    None => Answer::No,
                })
            }
            Mode::LazyMemo => {
                let key = sequence_key(&cells);
                if let Some(cached) = self.memo.lock().expect("memo lock").get(&key) {
                    return Ok(match cached {
                        Some(i) => Answer::Curve(*i as usize),
                        None => Answer::No,
                    });
                }
                let hit = self.scan_curves_against(&polyline)?;
                self.memo.lock().expect("memo lock").insert(key, hit);
                Ok(match hit {
                    Some(i) => Answer::Curve(i as usize),
                    None => Answer::No,
                })
            }
        }
    }

    /// Smallest curve index within the storage threshold of a surrogate.
    fn scan_curves_against(&self, surrogate: &PolyCurve) -> Result<Option<u32>, IndexError> {
        let threshold = (1.0 + 12.0 * self.eps) * self.delta;
        for (i, tau) in self.curves.iter().enumerate() {
            if frechet_decide(surrogate, tau, threshold)? {
                return Ok(Some(i as u32));
            }
        }
        Ok(None)
    }

    /// Candidate count for the eager coarse-encoding enumeration. Writing
    /// S for the total coarse-cell neighborhood mass over the fine grid,
    /// each non-null entry contributes a factor S^2 (pair of fine cells
    /// with an A and a B choice each), terminals are forced non-null, and
    /// each middle entry may also be null.
    fn one_eps_estimate(&self) -> u128 {
        let reach = (1.0 + 11.0 * self.eps) * self.delta;
        let s: u128 = self
            .g1
            .cells
            .iter()
            .map(|c| g2_neighborhood(&self.g2, &c.to_box(), reach).len() as u128)
            .sum();
        let s2 = s.saturating_mul(s);
        let mut total = s2.saturating_mul(s2);
        for _ in 0..self.k.saturating_sub(3) {
            total = total.saturating_mul(s2.saturating_add(1));
        }
        total
    }

    fn build_eager_one_eps(&mut self, budget: u128) -> Result<(), IndexError> {
        let estimated = self.one_eps_estimate();
        if estimated > budget {
            return Err(IndexError::FeasibilityRefused { estimated, budget });
        }
        let k = self.k;
        let reach = (1.0 + 11.0 * self.eps) * self.delta;
        let nb: Vec<Vec<u32>> = self
            .g1
            .cells
            .iter()
            .map(|c| g2_neighborhood(&self.g2, &c.to_box(), reach))
            .collect();
        // Null patterns over the middle entries, then a full product over
        // (c1, c2, a, b) per non-null entry.
        let middles = k.saturating_sub(3);
        for mask in 0u64..(1u64 << middles) {
            let active: Vec<bool> = (1..k)
                .map(|j| {
                    if j == 1 || j == k - 1 {
                        true
                    } else {
                        mask & (1 << (j - 2)) == 0
                    }
                })
                .collect();
            self.eager_one_eps_combo(&active, &nb)?;
        }
        Ok(())
    }

    /// Depth-first product over the active entries; each leaf is a full
    /// candidate encoding tested against every curve.
    fn eager_one_eps_combo(&mut self, active: &[bool], nb: &[Vec<u32>]) -> Result<(), IndexError> {
        let k = self.k;
        let n1 = self.g1.cells.len();
        if active.iter().any(|&a| a) && n1 == 0 {
            return Ok(());
        }
        let mut e = CoarseEncoding {
            c: vec![None; k - 1],
            a: vec![None; k - 1],
            b: vec![None; k - 1],
        };
        self.eager_fill(0, active, nb, &mut e)
    }

    fn eager_fill(
        &mut self,
        slot: usize,
        active: &[bool],
        nb: &[Vec<u32>],
        e: &mut CoarseEncoding,
    ) -> Result<(), IndexError> {
        if slot == active.len() {
            let mut leaf: Option<u32> = None;
            for (i, tau) in self.curves.iter().enumerate() {
                if curve_matches_encoding(tau, e, &self.g1, &self.g2, self.eps, self.delta)? {
                    leaf = Some(i as u32);
                    break;
                }
            }
            if let Some(i) = leaf {
                self.trie.insert(encode_key(e), i);
            }
            return Ok(());
        }
        if !active[slot] {
            return self.eager_fill(slot + 1, active, nb, e);
        }
        for i1 in 0..self.g1.cells.len() {
            for i2 in 0..self.g1.cells.len() {
                let c1 = self.g1.cells[i1].clone();
                let c2 = self.g1.cells[i2].clone();
                for &ai in &nb[i2] {
                    for &bi in &nb[i1] {
                        e.c[slot] = Some((c1.clone(), c2.clone()));
                        e.a[slot] = Some(self.g2.cells[ai as usize].clone());
                        e.b[slot] = Some(self.g2.cells[bi as usize].clone());
                        self.eager_fill(slot + 1, active, nb, e)?;
                    }
                }
            }
        }
        e.c[slot] = None;
        e.a[slot] = None;
        e.b[slot] = None;
        Ok(())
    }

    fn build_eager_three_eps(&mut self, budget: u128) -> Result<(), IndexError> {
        let n1 = self.g1.cells.len() as u128;
        let mut estimated: u128 = 0;
        for l in 2..self.k {
            let mut p: u128 = 1;
            for _ in 0..2 * l {
                p = p.saturating_mul(n1);
            }
            estimated = estimated.saturating_add(p);
        }
        if estimated > budget {
            return Err(IndexError::FeasibilityRefused { estimated, budget });
        }
        let threshold = (1.0 + 12.0 * self.eps) * self.delta;
        let mut seq = SeqTable::new(self.g1.cells.len(), self.k);
        for l in 2..self.k {
            let len = 2 * l;
            let size = seq.tables[l - 2].len();
            for offset in 0..size {
                let pos = seq.decode(len, offset);
                let cells: Vec<GridCell> =
                    pos.iter().map(|&i| self.g1.cells[i].clone()).collect();
                let surrogate = centers_polyline(&cells);
                for (i, tau) in self.curves.iter().enumerate() {
                    if frechet_decide(&surrogate, tau, threshold)? {
                        seq.tables[l - 2][offset] = i as u32;
                        break;
                    }
                }
            }
        }
        self.seq = Some(seq);
        Ok(())
    }
}

// Serialization: a versioned JSON file holding parameters as decimal
// strings, grids as lattice tuples, eager trie entries as hex keys, and a
// corpus digest so a load against the wrong curves fails loudly.

#[derive(Serialize, Deserialize)]
struct GridFileV1 {
    width: String,
    role: String,
    cells: Vec<Vec<i64>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFileV1 {
    version: u32,
    variant: Variant,
    mode: Mode,
    oracle: OracleKind,
    d: usize,
    k: usize,
    m: usize,
    eps: String,
    delta: String,
    corpus_digest: String,
    grids: Vec<GridFileV1>,
    trie: Vec<(String, u32)>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Digest over the padded corpus: dimensions, then every vertex as raw
/// f64 bits.
pub fn corpus_digest(curves: &[PolyCurve]) -> String {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(curves.len() as u64).to_le_bytes());
    for c in curves {
        buf.extend_from_slice(&(c.num_vertices() as u64).to_le_bytes());
        for v in &c.vertices {
            for &x in &v.coords {
                buf.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
    }
    format!("{:016x}", fnv1a64(&buf))
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn hex_decode(s: &str) -> Result<Vec<u8>, IndexError> {
    if s.len() % 2 != 0 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(IndexError::Malformed("bad hex key".into()));
    }
    Ok((0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap())
        .collect())
}

fn role_name(role: GridRole) -> &'static str {
    match role {
        GridRole::G1 => "g1",
        GridRole::G2 => "g2",
        GridRole::G3 => "g3",
    }
}

fn role_parse(s: &str) -> Result<GridRole, IndexError> {
    match s {
        "g1" => Ok(GridRole::G1),
        "g2" => Ok(GridRole::G2),
        "g3" => Ok(GridRole::G3),
        other => Err(IndexError::Malformed(format!("unknown grid role {other:?}"))),
    }
}

fn grid_to_file(g: &GridSet) -> GridFileV1 {
    GridFileV1 {
        width: format!("{:?}", g.width),
        role: role_name(g.role).into(),
        cells: g.cells.iter().map(|c| c.lattice.clone()).collect(),
    }
}

fn grid_from_file(f: &GridFileV1) -> Result<GridSet, IndexError> {
    let width: f64 = f
        .width
        .parse()
        .map_err(|_| IndexError::Malformed("bad grid width".into()))?;
    let role = role_parse(&f.role)?;
    let cells = f
        .cells
        .iter()
        .map(|l| GridCell { lattice: l.clone(), width })
        .collect();
    Ok(GridSet::from_cells(cells, width, role))
}

impl AnnIndex {
    /// Stored entries as (key bytes, representative), sorted by key,
    /// regardless of the in-memory representation.
    fn stored_entries(&self) -> Vec<(Vec<u8>, u32)> {
        match &self.seq {
            Some(seq) => {
                let mut v = Vec::new();
                for (ti, table) in seq.tables.iter().enumerate() {
                    let len = 2 * (ti + 2);
                    for (offset, &leaf) in table.iter().enumerate() {
                        if leaf == SEQ_MISS {
                            continue;
                        }
                        let pos = seq.decode(len, offset);
                        let cells: Vec<GridCell> =
                            pos.iter().map(|&p| self.g1.cells[p].clone()).collect();
                        v.push((sequence_key(&cells), leaf));
                    }
                }
                v.sort();
                v
            }
            None => self
                .trie
                .entries_sorted()
                .into_iter()
                .map(|(k, i)| (k.to_vec(), i))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let file = IndexFileV1 {
            version: 1,
            variant: self.variant,
            mode: self.mode,
            oracle: self.oracle_kind,
            d: self.d,
            k: self.k,
            m: self.m,
            eps: format!("{:?}", self.eps),
            delta: format!("{:?}", self.delta),
            corpus_digest: corpus_digest(&self.curves),
            grids: vec![
                grid_to_file(&self.g1),
                grid_to_file(&self.g2),
                grid_to_file(&self.g3),
            ],
            trie: self
                .stored_entries()
                .into_iter()
                .map(|(k, i)| (hex_encode(&k), i))
                .collect(),
        };
        let out = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Loads an index against the corpus it was built from; the canonical
    /// oracle structure is rebuilt rather than read (documented format
    /// property), which keeps the file small and the structure versionless.
    pub fn load(path: &Path, curves: &[PolyCurve]) -> Result<AnnIndex, IndexError> {
        let text = std::fs::read_to_string(path)?;
        let file: IndexFileV1 = serde_json::from_str(&text)?;
        if file.version != 1 {
            return Err(IndexError::Malformed(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let eps: f64 = file
            .eps
            .parse()
            .map_err(|_| IndexError::Malformed("bad eps".into()))?;
        let delta: f64 = file
            .delta
            .parse()
            .map_err(|_| IndexError::Malformed("bad delta".into()))?;
        if curves.iter().any(|c| c.num_vertices() > file.m) {
            return Err(IndexError::CorpusMismatch(
                "corpus has longer curves than the index was built for".into(),
            ));
        }
        let padded: Vec<PolyCurve> = curves.iter().map(|c| c.pad_to(file.m)).collect();
        let digest = corpus_digest(&padded);
        if digest != file.corpus_digest {
            return Err(IndexError::CorpusMismatch(format!(
                "digest {digest} != stored {}",
                file.corpus_digest
            )));
        }
        if file.grids.len() != 3 {
            return Err(IndexError::Malformed("expected three grids".into()));
        }
        let g1 = grid_from_file(&file.grids[0])?;
        let g2 = grid_from_file(&file.grids[1])?;
        let g3 = grid_from_file(&file.grids[2])?;
        let canonical = match file.oracle {
            OracleKind::Canonical => Some(build_canonical_structure(&padded, eps, delta)?),
            OracleKind::Brute => None,
        };
        let mut trie = Trie::default();
        let mut seq = None;
        if file.variant == Variant::ThreeEps && file.mode == Mode::Eager {
            let n1 = g1.len() as u128;
            let mut estimated: u128 = 0;
            for l in 2..file.k {
                let mut p: u128 = 1;
                for _ in 0..2 * l {
                    p = p.saturating_mul(n1);
                }
                estimated = estimated.saturating_add(p);
            }
            let budget = budget_from_env();
            if estimated > budget {
                return Err(IndexError::FeasibilityRefused { estimated, budget });
            }
            let mut table = SeqTable::new(g1.len(), file.k);
            for (hexkey, leaf) in &file.trie {
                let cells = decode_sequence_key(&hex_decode(hexkey)?, g1.width)?;
                if cells.len() % 2 != 0 || cells.len() < 4 || cells.len() / 2 >= file.k {
                    return Err(IndexError::Malformed("bad sequence length".into()));
                }
                let mut positions = Vec::with_capacity(cells.len());
                for c in &cells {
                    positions.push(g1.position(&c.lattice).ok_or_else(|| {
                        IndexError::Malformed("sequence cell not in stored grid".into())
                    })?);
                }
                let l = cells.len() / 2;
                let off = table.offset(&positions);
                table.tables[l - 2][off] = (*leaf).min(table.tables[l - 2][off]);
            }
            seq = Some(table);
        } else {
            for (hexkey, leaf) in &file.trie {
                trie.insert(hex_decode(hexkey)?, *leaf);
            }
        }
        Ok(AnnIndex {
            variant: file.variant,
            mode: file.mode,
            oracle_kind: file.oracle,
            eps,
            delta,
            k: file.k,
            d: file.d,
            m: file.m,
            curves: padded,
            g1,
            g2,
            g3,
            canonical,
            trie,
            seq,
            memo: Mutex::new(HashMap::new()),
        })
    }
}

/// Inverse of `sequence_key`.
fn decode_sequence_key(bytes: &[u8], width: f64) -> Result<Vec<GridCell>, IndexError> {
    if bytes.len() < 8 {
        return Err(IndexError::Malformed("short sequence key".into()));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if count > 1 << 20 || d > 64 || bytes.len() != 8 + count * d * 8 {
        return Err(IndexError::Malformed("sequence key length mismatch".into()));
    }
    let mut cells = Vec::with_capacity(count);
    for i in 0..count {
        let base = 8 + i * d * 8;
        let lattice: Vec<i64> = (0..d)
            .map(|j| {
                i64::from_le_bytes(bytes[base + 8 * j..base + 8 * j + 8].try_into().unwrap())
            })
            .collect();
        cells.push(GridCell { lattice, width });
    }
    Ok(cells)
}
