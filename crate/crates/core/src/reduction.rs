//! Threshold-free approximate nearest-neighbor search: a geometric ladder
//! of fixed-threshold structures searched by scale, plus the exact
//! brute-force baseline that randomized tests measure against.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frechet::frechet_value;
use crate::geometry::{GeometryError, PolyCurve};
use crate::index::{AnnIndex, Answer, IndexError, Mode, OracleKind, Variant};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("every scale answered No; the query is farther than the ladder top")]
    AllScalesNo,
    #[error("malformed ladder manifest: {0}")]
    Malformed(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Increasing thresholds delta_0 < delta_1 < ... with ratio 1+eps, one
/// fixed-threshold structure per rung. The bottom rung sits below any
/// meaningful distance in the corpus, the top rung above twice its
/// diameter, so a query near the corpus always finds a scale that says yes.
pub struct ScaleLadder {
    pub eps: f64,
    pub k: usize,
    pub variant: Variant,
    pub mode: Mode,
    pub oracle_kind: OracleKind,
    pub deltas: Vec<f64>,
    pub scales: Vec<AnnIndex>,
}

/// The per-scale answer factor: a Curve answer at threshold delta comes
/// with distance at most `kappa_prime * delta`.
pub fn kappa_prime(variant: Variant, eps: f64) -> f64 {
    match variant {
        Variant::OneEps => 1.0 + 24.0 * eps,
        Variant::ThreeEps => 3.0 + 24.0 * eps,
    }
}

/// Smallest positive pairwise vertex distance and the vertex diameter,
/// over all vertices of all curves.
fn vertex_stats(curves: &[PolyCurve]) -> (Option<f64>, f64) {
    let verts: Vec<&[f64]> = curves
        .iter()
        .flat_map(|c| c.vertices.iter().map(|v| v.coords.as_slice()))
        .collect();
    let mut min_pos: Option<f64> = None;
    let mut diameter = 0.0f64;
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            let d = crate::geometry::dist(verts[i], verts[j]);
            diameter = diameter.max(d);
            if d > 0.0 && min_pos.map_or(true, |m| d < m) {
                min_pos = Some(d);
            }
        }
    }
    (min_pos, diameter)
}

pub fn build_ladder(
    curves: &[PolyCurve],
    eps: f64,
    variant: Variant,
    mode: Mode,
    oracle_kind: OracleKind,
    k: usize,
) -> Result<ScaleLadder, ReductionError> {
    if curves.is_empty() {
        return Err(ReductionError::EmptyCorpus);
    }
    let (min_pos, diameter) = vertex_stats(curves);
    let delta0 = match min_pos {
        Some(mp) => (mp / 4.0).max(1e-12 * diameter),
        // Every vertex coincides; any positive base works, distances to
        // this corpus are point distances.
        None => 1e-6,
    };
    let target = 2.0 * diameter;
    let mut deltas = vec![delta0];
    while *deltas.last().unwrap() < target {
        let next = deltas.last().unwrap() * (1.0 + eps);
        deltas.push(next);
    }
    if deltas.len() < 2 {
        deltas.push(delta0 * (1.0 + eps));
    }
    let mut scales = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        scales.push(AnnIndex::build(
            curves,
            variant,
            mode,
            oracle_kind,
            eps,
            delta,
            k,
        )?);
    }
    Ok(ScaleLadder {
        eps,
        k,
        variant,
        mode,
        oracle_kind,
        deltas,
        scales,
    })
}

impl ScaleLadder {
    pub fn delta0(&self) -> f64 {
        self.deltas[0]
    }

    /// Binary search for the smallest scale that answers with a curve.
    /// Returns that curve and the chosen threshold.
    ///
    /// Write d* for the true nearest distance and kp for the per-scale
    /// factor. Two facts carry the bound: a No at threshold delta means
    /// d* > delta, and a Curve at delta comes within kp * delta. If the
    /// bottom rung answers Curve, the result is within kp * delta_0.
    /// Otherwise the returned rung's predecessor answered No, so
    /// d* > delta_star / (1+eps) and the curve satisfies
    /// d <= kp * delta_star < kp * (1+eps) * d*. Either way
    /// d <= kp * (1+eps) * max(d*, delta_0).
    pub fn ann_query(&self, sigma: &PolyCurve) -> Result<(usize, f64), ReductionError> {
        let top = self.scales.len() - 1;
        let top_curve = match self.scales[top].query(sigma)? {
            Answer::Curve(i) => i,
            Answer::No => return Err(ReductionError::AllScalesNo),
        };
        if let Answer::Curve(i) = self.scales[0].query(sigma)? {
            return Ok((i, self.deltas[0]));
        }
        // Invariant: lo answered No, hi answered Curve (with hi_curve).
        let mut lo = 0;
        let mut hi = top;
        let mut hi_curve = top_curve;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            match self.scales[mid].query(sigma)? {
                Answer::Curve(i) => {
                    hi = mid;
                    hi_curve = i;
                }
                Answer::No => lo = mid,
            }
        }
        Ok((hi_curve, self.deltas[hi]))
    }
}

/// Exact argmin of the Frechet distance over the corpus; ties go to the
/// smaller index.
pub fn brute_force_nn(
    curves: &[PolyCurve],
    sigma: &PolyCurve,
    tol: f64,
) -> Result<(usize, f64), ReductionError> {
    if curves.is_empty() {
        return Err(ReductionError::EmptyCorpus);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, tau) in curves.iter().enumerate() {
        let d = frechet_value(sigma, tau, tol)?;
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    Ok(best.unwrap())
}

#[derive(Serialize, Deserialize)]
struct LadderManifestV1 {
    version: u32,
    eps: String,
    k: usize,
    variant: Variant,
    mode: Mode,
    oracle: OracleKind,
    deltas: Vec<String>,
    files: Vec<String>,
}

impl ScaleLadder {
    /// Writes one index file per scale plus a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ReductionError> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.scales.len());
        for (i, idx) in self.scales.iter().enumerate() {
            let name = format!("scale_{i:03}.json");
            idx.save(&dir.join(&name))?;
            files.push(name);
        }
        let manifest = LadderManifestV1 {
            version: 1,
            eps: format!("{:?}", self.eps),
            k: self.k,
            variant: self.variant,
            mode: self.mode,
            oracle: self.oracle_kind,
            deltas: self.deltas.iter().map(|d| format!("{d:?}")).collect(),
            files,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, curves: &[PolyCurve]) -> Result<ScaleLadder, ReductionError> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let man: LadderManifestV1 = serde_json::from_str(&text)?;
        if man.version != 1 {
            return Err(ReductionError::Malformed(format!(
                "unsupported version {}",
                man.version
            )));
        }
        if man.files.is_empty() || man.files.len() != man.deltas.len() {
            return Err(ReductionError::Malformed(
                "file and delta lists disagree".into(),
            ));
        }
        let eps: f64 = man
            .eps
            .parse()
            .map_err(|_| ReductionError::Malformed("bad eps".into()))?;
        let mut deltas = Vec::with_capacity(man.deltas.len());
        for s in &man.deltas {
            deltas.push(
                s.parse::<f64>()
                    .map_err(|_| ReductionError::Malformed("bad delta".into()))?,
            );
        }
        if deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReductionError::Malformed("deltas not increasing".into()));
        }
        let mut scales = Vec::with_capacity(man.files.len());
        for (i, name) in man.files.iter().enumerate() {
            let idx = AnnIndex::load(&dir.join(name), curves)?;
            if idx.delta != deltas[i] {
                return Err(ReductionError::Malformed(
                    "scale file threshold differs from manifest".into(),
                ));
            }
            scales.push(idx);
        }
        Ok(ScaleLadder {
            eps,
            k: man.k,
            variant: man.variant,
            mode: man.mode,
            oracle_kind: man.oracle,
            deltas,
            scales,
        })
    }
}
