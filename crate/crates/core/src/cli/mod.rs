//! Command-line front end: ingestion, build, query, bench, selftest.
//!
//! Exit codes: 0 ok, 2 bad input, 3 feasibility refused, 4 query arity.
//! Reports on stdout are pure functions of (config, dataset, seed); wall
//! times go to stderr so identical runs stay byte-identical.

pub mod suites;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frechet::frechet_value;
use crate::geometry::PolyCurve;
use crate::index::{AnnIndex, Answer, IndexError, Mode, OracleKind, Variant};
use crate::reduction::{build_ladder, kappa_prime, ReductionError, ScaleLadder};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {what}")]
    ParseError { line: usize, what: String },
    #[error("line {line}: dimension {got}, corpus dimension {expected}")]
    DimensionMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("{0}")]
    BadInput(String),
    #[error("refused: estimated {estimated} stored entries over budget {budget}")]
    Feasibility { estimated: u128, budget: u128 },
    #[error("query {id:?} has {got} vertices, the index holds k = {k}")]
    Arity { id: String, got: usize, k: usize },
    #[error("self-test failed")]
    SuiteFailure,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Feasibility { .. } => 3,
            CliError::Arity { .. } => 4,
            CliError::SuiteFailure => 1,
            _ => 2,
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> CliError {
        match e {
            IndexError::FeasibilityRefused { estimated, budget } => {
                CliError::Feasibility { estimated, budget }
            }
            other => CliError::BadInput(other.to_string()),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> CliError {
        match e {
            ReductionError::Index(inner) => CliError::from(inner),
            other => CliError::BadInput(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::BadInput(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    #[value(name = "one-eps")]
    OneEps,
    #[value(name = "three-eps")]
    ThreeEps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Lazy,
    Eager,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    Brute,
    Canonical,
}

impl VariantArg {
    fn into_variant(self) -> Variant {
        match self {
            VariantArg::OneEps => Variant::OneEps,
            VariantArg::ThreeEps => Variant::ThreeEps,
        }
    }
}

impl ModeArg {
    fn into_mode(self) -> Mode {
        match self {
            ModeArg::Lazy => Mode::LazyMemo,
            ModeArg::Eager => Mode::Eager,
        }
    }
}

impl OracleArg {
    fn into_oracle(self) -> OracleKind {
        match self {
            OracleArg::Brute => OracleKind::Brute,
            OracleArg::Canonical => OracleKind::Canonical,
        }
    }
}

#[derive(Debug)]
pub struct Dataset {
    pub curves: Vec<(String, PolyCurve)>,
    pub d: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonlCurve {
    id: String,
    points: Vec<Vec<f64>>,
}

/// Reads a curve file, checks id uniqueness and uniform dimension, and pads
/// every curve to the corpus-max vertex count (duplicating the last vertex
/// moves no distances).
pub fn ingest(path: &Path, format: Format) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut curves: Vec<(String, PolyCurve)> = Vec::new();
    let mut d = 0usize;
    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, rows) = match format {
            Format::Jsonl => {
                let rec: JsonlCurve =
                    serde_json::from_str(raw).map_err(|e| CliError::ParseError {
                        line,
                        what: e.to_string(),
                    })?;
                (rec.id, rec.points)
            }
            Format::Csv => parse_csv_line(raw, line)?,
        };
        if rows.is_empty() {
            return Err(CliError::ParseError { line, what: "curve has no vertices".into() });
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(CliError::ParseError { line, what: "vertex has no coordinates".into() });
        }
        for r in &rows {
            if r.len() != dim {
                return Err(CliError::DimensionMismatch { line, expected: dim, got: r.len() });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(CliError::ParseError { line, what: "non-finite coordinate".into() });
            }
        }
        if d == 0 {
            d = dim;
        } else if dim != d {
            return Err(CliError::DimensionMismatch { line, expected: d, got: dim });
        }
        if !seen.insert(id.clone()) {
            return Err(CliError::DuplicateId { line, id });
        }
        let curve = PolyCurve::from_rows(&rows)
            .map_err(|e| CliError::ParseError { line, what: e.to_string() })?;
        curves.push((id, curve));
    }
    let m = curves.iter().map(|(_, c)| c.num_vertices()).max().unwrap_or(0);
    for (_, c) in &mut curves {
        *c = c.pad_to(m);
    }
    Ok(Dataset { curves, d })
}

/// `id,x1,y1;x2,y2` with `;` between vertices; the id rides in front of the
/// first vertex.
fn parse_csv_line(raw: &str, line: usize) -> Result<(String, Vec<Vec<f64>>), CliError> {
    let mut chunks = raw.split(';');
    let head = chunks.next().expect("split yields at least one");
    let mut fields = head.split(',');
    let id = fields
        .next()
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| CliError::ParseError { line, what: "missing id".into() })?
        .trim()
        .to_string();
    let parse_coords = |s: &[&str]| -> Result<Vec<f64>, CliError> {
        s.iter()
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::ParseError { line, what: format!("bad number {t:?}") })
            })
            .collect()
    };
    let first: Vec<&str> = fields.collect();
    if first.is_empty() {
        return Err(CliError::ParseError { line, what: "first vertex missing".into() });
    }
    let mut rows = vec![parse_coords(&first)?];
    for chunk in chunks {
        let parts: Vec<&str> = chunk.split(',').collect();
        rows.push(parse_coords(&parts)?);
    }
    Ok((id, rows))
}

fn write_jsonl(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    let mut out = Vec::new();
    for (id, c) in &ds.curves {
        let rec = JsonlCurve {
            id: id.clone(),
            points: c.vertices.iter().map(|p| p.coords.clone()).collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| CliError::BadInput(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eps: f64,
    pub delta: Option<f64>,
    pub k: usize,
    pub variant: Variant,
    pub mode: Mode,
    pub oracle: OracleKind,
    pub seed: u64,
    pub budget: Option<u128>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(CliError::BadInput(format!("eps {} outside (0, 0.5)", self.eps)));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::BadInput(format!("delta {d} must be positive")));
            }
        }
        if self.k < 3 {
            return Err(CliError::BadInput(format!("k {} below 3", self.k)));
        }
        if self.budget == Some(0) {
            return Err(CliError::BadInput("budget must be positive".into()));
        }
        Ok(())
    }
}

/// Single-threshold index or, without a threshold, the full scale ladder
/// (written as a directory of per-scale files).
pub fn cmd_build(config: &RunConfig, dataset: &Dataset, out: &Path) -> Result<(), CliError> {
    config.validate()?;
    if dataset.curves.is_empty() {
        return Err(CliError::BadInput("empty dataset".into()));
    }
    let curves: Vec<PolyCurve> = dataset.curves.iter().map(|(_, c)| c.clone()).collect();
    let started = Instant::now();
    match config.delta {
        Some(delta) => {
            let idx = match config.budget {
                Some(b) => AnnIndex::build_with_budget(
                    &curves, config.variant, config.mode, config.oracle, config.eps, delta,
                    config.k, b,
                )?,
                None => AnnIndex::build(
                    &curves, config.variant, config.mode, config.oracle, config.eps, delta,
                    config.k,
                )?,
            };
            idx.save(out)?;
            let (g1, g2, g3) = idx.grid_sizes();
            println!("g1={g1} g2={g2} g3={g3} keys={}", idx.trie_len());
        }
        None => {
            let ladder = build_ladder(
                &curves, config.eps, config.variant, config.mode, config.oracle, config.k,
            )?;
            ladder.save(out)?;
            let bottom = &ladder.scales[0];
            let (g1, g2, g3) = bottom.grid_sizes();
            println!(
                "scales={} delta0={:?} g1={g1} g2={g2} g3={g3} keys={}",
                ladder.scales.len(),
                ladder.delta0(),
                bottom.trie_len()
            );
        }
    }
    println!("built in {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

enum LoadedIndex {
    Single(AnnIndex),
    Ladder(ScaleLadder),
}

fn load_index(path: &Path, curves: &[PolyCurve]) -> Result<LoadedIndex, CliError> {
    if path.is_dir() {
        Ok(LoadedIndex::Ladder(ScaleLadder::load(path, curves)?))
    } else {
        Ok(LoadedIndex::Single(AnnIndex::load(path, curves)?))
    }
}

/// One line per query: id and the matched curve id (or "no"). With
/// `--verify` the exact distance is recomputed and the headline bound
/// checked on every line.
pub fn cmd_query(
    index_path: &Path,
    dataset: &Dataset,
    queries: &Dataset,
    verify: bool,
) -> Result<(), CliError> {
    let curves: Vec<PolyCurve> = dataset.curves.iter().map(|(_, c)| c.clone()).collect();
    let loaded = load_index(index_path, &curves)?;
    let k = match &loaded {
        LoadedIndex::Single(idx) => idx.k,
        LoadedIndex::Ladder(l) => l.k,
    };
    for (id, sigma) in &queries.curves {
        if sigma.num_vertices() > k {
            return Err(CliError::Arity { id: id.clone(), got: sigma.num_vertices(), k });
        }
        let (answer, threshold) = match &loaded {
            LoadedIndex::Single(idx) => (idx.query(sigma)?, idx.delta),
            LoadedIndex::Ladder(l) => match l.ann_query(sigma) {
                Ok((i, delta_star)) => (Answer::Curve(i), delta_star),
                Err(ReductionError::AllScalesNo) => (Answer::No, f64::NAN),
                Err(e) => return Err(e.into()),
            },
        };
        let label = match answer {
            Answer::Curve(i) => dataset.curves[i].0.clone(),
            Answer::No => "no".to_string(),
        };
        if !verify {
            println!("{id} {label}");
            continue;
        }
        let (eps, variant) = match &loaded {
            LoadedIndex::Single(idx) => (idx.eps, idx.variant),
            LoadedIndex::Ladder(l) => (l.eps, l.variant),
        };
        match answer {
            Answer::Curve(i) => {
                let v = frechet_value(sigma, &curves[i], 1e-9)
                    .map_err(|e| CliError::BadInput(e.to_string()))?;
                let bound = kappa_prime(variant, eps) * threshold + suites::BOUND_SLACK;
                let status = if v <= bound { "ok" } else { "VIOLATION" };
                println!("{id} {label} dF={v:?} bound={bound:?} {status}");
            }
            Answer::No => {
                // A refusal promises no curve within the threshold.
                let mut min_v = f64::INFINITY;
                for c in &curves {
                    let v = frechet_value(sigma, c, 1e-9)
                        .map_err(|e| CliError::BadInput(e.to_string()))?;
                    min_v = min_v.min(v);
                }
                let ok = threshold.is_nan() || min_v > threshold - suites::BOUND_SLACK;
                let status = if ok { "ok" } else { "VIOLATION" };
                println!("{id} {label} dOpt={min_v:?} {status}");
            }
        }
    }
    Ok(())
}

/// Builds once, answers seeded random queries, and prints a deterministic
/// summary; timings go to stderr.
pub fn cmd_bench(config: &RunConfig, dataset: &Dataset, count: usize) -> Result<(), CliError> {
    config.validate()?;
    if dataset.curves.is_empty() {
        return Err(CliError::BadInput("empty dataset".into()));
    }
    let delta = config
        .delta
        .ok_or_else(|| CliError::BadInput("bench needs --delta".into()))?;
    let curves: Vec<PolyCurve> = dataset.curves.iter().map(|(_, c)| c.clone()).collect();
    let t0 = Instant::now();
    let idx = AnnIndex::build(
        &curves, config.variant, config.mode, config.oracle, config.eps, delta, config.k,
    )?;
    let build_secs = t0.elapsed().as_secs_f64();

    // Query box: the corpus bounding box inflated by one threshold.
    let d = dataset.d.max(1);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (_, c) in &dataset.curves {
        for p in &c.vertices {
            for i in 0..d {
                lo[i] = lo[i].min(p.coords[i]);
                hi[i] = hi[i].max(p.coords[i]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut times = Vec::with_capacity(count);
    let mut hits = 0usize;
    let mut digest: u64 = 0xcbf29ce484222325;
    for _ in 0..count {
        let rows: Vec<Vec<f64>> = (0..config.k)
            .map(|_| {
                (0..d)
                    .map(|i| rng.random_range(lo[i] - delta..hi[i] + delta))
                    .collect()
            })
            .collect();
        let sigma = PolyCurve::from_rows(&rows).expect("rows");
        let t = Instant::now();
        let ans = idx.query(&sigma)?;
        times.push(t.elapsed().as_secs_f64());
        let code = match ans {
            Answer::Curve(i) => {
                hits += 1;
                i as u64 + 1
            }
            Answer::No => 0,
        };
        digest = (digest ^ code).wrapping_mul(0x100000001b3);
    }
    times.sort_by(f64::total_cmp);
    let pct = |q: f64| -> f64 {
        if times.is_empty() {
            0.0
        } else {
            times[((times.len() - 1) as f64 * q) as usize]
        }
    };
    let (g1, _, _) = idx.grid_sizes();
    println!(
        "n={} d={} k={} g1={g1} keys={} queries={} answered={} refused={} digest={:016x}",
        curves.len(),
        dataset.d,
        config.k,
        idx.trie_len(),
        count,
        hits,
        count - hits,
        digest
    );
    eprintln!(
        "build {:.3}s, query p50 {:.6}s p95 {:.6}s max {:.6}s",
        build_secs,
        pct(0.5),
        pct(0.95),
        times.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

/// Runs the acceptance suites and emits the JSON report (stdout or `--out`).
/// `perturb_tol` loosens the canary tolerance a million-fold; the resulting
/// failure proves the harness still bites.
pub fn cmd_selftest(
    seed: u64,
    scale: f64,
    perturb_tol: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::BadInput(format!("scale {scale} must be positive")));
    }
    let tol_scale = if perturb_tol { 1e6 } else { 1.0 };
    let started = Instant::now();
    let report = suites::run_all(seed, scale, tol_scale, true);
    for s in &report.suites {
        eprintln!("suite {}: {}", s.name, if s.passed { "pass" } else { "FAIL" });
    }
    eprintln!("selftest finished in {:.1}s", started.elapsed().as_secs_f64());
    let text = suites::report_json(&report);
    match out {
        Some(p) => std::fs::write(p, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
        }
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::SuiteFailure)
    }
}

#[derive(Parser)]
#[command(name = "fann", version, about = "Approximate nearest-neighbor search for polygonal curves under the continuous Frechet distance")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Approximation knob, 0 < eps < 0.5.
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    /// Distance threshold; omit to build the threshold-free scale ladder.
    #[arg(long)]
    delta: Option<f64>,
    /// Query complexity (vertices per query curve), at least 3.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::ThreeEps)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Lazy)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = OracleArg::Brute)]
    oracle: OracleArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cap on materialized entries for eager builds (also via FANN_BUDGET).
    #[arg(long)]
    budget: Option<u128>,
}

impl ConfigArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            eps: self.eps,
            delta: self.delta,
            k: self.k,
            variant: self.variant.into_variant(),
            mode: self.mode.into_mode(),
            oracle: self.oracle.into_oracle(),
            seed: self.seed,
            budget: self.budget,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Normalize a curve file to jsonl.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an index (or ladder) and write it out.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Answer a query file against a saved index.
    Query {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Recompute exact distances and check the headline bound per line.
        #[arg(long)]
        verify: bool,
    },
    /// Build and time seeded random queries.
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Number of random queries.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the randomized acceptance suites and print the JSON report.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Case-count multiplier; 1.0 is the full run.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Loosen the canary tolerance a million-fold (must fail).
        #[arg(long)]
        perturb_tol: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Ingest { input, format, out } => {
            let ds = ingest(&input, format)?;
            write_jsonl(&ds, &out)?;
            let m = ds.curves.first().map_or(0, |(_, c)| c.num_vertices());
            println!("curves={} d={} m={}", ds.curves.len(), ds.d, m);
            Ok(())
        }
        Cmd::Build { input, format, out, config } => {
            let ds = ingest(&input, format)?;
            cmd_build(&config.to_config(), &ds, &out)
        }
        Cmd::Query { input, format, index, queries, verify } => {
            let ds = ingest(&input, format)?;
            let qs = ingest(&queries, format)?;
            if !qs.curves.is_empty() && !ds.curves.is_empty() && qs.d != ds.d {
                return Err(CliError::BadInput(format!(
                    "query dimension {} does not match corpus dimension {}",
                    qs.d, ds.d
                )));
            }
            cmd_query(&index, &ds, &qs, verify)
        }
        Cmd::Bench { input, format, count, config } => {
            let ds = ingest(&input, format)?;
            cmd_bench(&config.to_config(), &ds, count)
        }
        Cmd::Selftest { seed, scale, perturb_tol, out } => {
            cmd_selftest(seed, scale, perturb_tol, out.as_deref())
        }
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frechet::frechet_decide;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fann-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).expect("temp dir");
        dir.join(name)
    }

    #[test]
    fn ingest_jsonl_pads_to_corpus_max() {
        let p = tmp("pad.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"points\":[[0,0],[1,0]]}\n{\"id\":\"b\",\"points\":[[0,1],[1,1],[2,1],[3,1]]}\n",
        )
        .expect("write");
        let ds = ingest(&p, Format::Jsonl).expect("ingest");
        assert_eq!(ds.d, 2);
        assert_eq!(ds.curves.len(), 2);
        assert_eq!(ds.curves[0].1.num_vertices(), 4);
        assert_eq!(ds.curves[1].1.num_vertices(), 4);
        // Padding duplicates the last vertex, so distances are unchanged.
        let orig = PolyCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).expect("rows");
        assert!(frechet_decide(&orig, &ds.curves[0].1, 1e-9).expect("decide"));
    }

    #[test]
    fn ingest_rejects_mixed_dimensions_and_duplicates() {
        let p = tmp("mixed.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"points\":[[0,0]]}\n{\"id\":\"b\",\"points\":[[0,0,0]]}\n",
        )
        .expect("write");
        match ingest(&p, Format::Jsonl) {
            Err(CliError::DimensionMismatch { line: 2, expected: 2, got: 3 }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
        let p2 = tmp("dup.jsonl");
        std::fs::write(
            &p2,
            "{\"id\":\"a\",\"points\":[[0,0]]}\n{\"id\":\"a\",\"points\":[[1,1]]}\n",
        )
        .expect("write");
        match ingest(&p2, Format::Jsonl) {
            Err(CliError::DuplicateId { line: 2, id }) => assert_eq!(id, "a"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
        let p3 = tmp("bad.jsonl");
        std::fs::write(&p3, "not json\n").expect("write");
        match ingest(&p3, Format::Jsonl) {
            Err(CliError::ParseError { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_csv_vertices_split_on_semicolons() {
        let p = tmp("curves.csv");
        std::fs::write(&p, "a,0,0;1,0\nb,0,1;1,1;2,1\n").expect("write");
        let ds = ingest(&p, Format::Csv).expect("ingest");
        assert_eq!(ds.d, 2);
        assert_eq!(ds.curves[0].1.num_vertices(), 3); // padded to b's count
        assert_eq!(ds.curves[1].1.vertices[2].coords, vec![2.0, 1.0]);
        let p2 = tmp("bad.csv");
        std::fs::write(&p2, "a,0,0;1\n").expect("write");
        match ingest(&p2, Format::Csv) {
            Err(CliError::DimensionMismatch { line: 1, .. }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn build_exit_codes_for_empty_and_refused() {
        let empty = Dataset { curves: Vec::new(), d: 0 };
        let cfg = RunConfig {
            eps: 0.4,
            delta: Some(1.0),
            k: 3,
            variant: Variant::ThreeEps,
            mode: Mode::LazyMemo,
            oracle: OracleKind::Brute,
            seed: 1,
            budget: None,
        };
        let err = cmd_build(&cfg, &empty, &tmp("never.json")).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        // A planar one-threshold eager build blows any sane budget.
        let ds = Dataset {
            curves: vec![(
                "a".into(),
                PolyCurve::from_rows(&[vec![0.2, 0.1], vec![0.2, 0.1]]).expect("rows"),
            )],
            d: 2,
        };
        let cfg = RunConfig {
            eps: 0.45,
            delta: Some(1.0),
            k: 3,
            variant: Variant::OneEps,
            mode: Mode::Eager,
            oracle: OracleKind::Brute,
            seed: 1,
            budget: Some(100_000_000),
        };
        let err = cmd_build(&cfg, &ds, &tmp("never2.json")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        match err {
            CliError::Feasibility { estimated, budget } => assert!(estimated > budget),
            other => panic!("expected feasibility refusal, got {other:?}"),
        }
    }

    #[test]
    fn query_arity_over_k_exits_four() {
        let ds = Dataset {
            curves: vec![(
                "a".into(),
                PolyCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).expect("rows"),
            )],
            d: 2,
        };
        let cfg = RunConfig {
            eps: 0.4,
            delta: Some(1.0),
            k: 3,
            variant: Variant::ThreeEps,
            mode: Mode::LazyMemo,
            oracle: OracleKind::Brute,
            seed: 1,
            budget: None,
        };
        let idx_path = tmp("arity.json");
        cmd_build(&cfg, &ds, &idx_path).expect("build");
        let queries = Dataset {
            curves: vec![(
                "q".into(),
                PolyCurve::from_rows(&[
                    vec![0.0, 0.0],
                    vec![0.3, 0.0],
                    vec![0.6, 0.0],
                    vec![1.0, 0.0],
                ])
                .expect("rows"),
            )],
            d: 2,
        };
        let err = cmd_query(&idx_path, &ds, &queries, false).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn lazy_index_file_ignores_query_history() {
        let corpus = vec![
            PolyCurve::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).expect("rows"),
            PolyCurve::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.5]]).expect("rows"),
        ];
        let idx = AnnIndex::build(
            &corpus,
            Variant::ThreeEps,
            Mode::LazyMemo,
            OracleKind::Brute,
            0.4,
            1.0,
            3,
        )
        .expect("build");
        let before = tmp("history-before.json");
        idx.save(&before).expect("save");
        for i in 0..10 {
            let y = i as f64 * 0.1;
            let sigma = PolyCurve::from_rows(&[
                vec![0.0, y],
                vec![0.5, y],
                vec![1.0, y],
            ])
            .expect("rows");
            let _ = idx.query(&sigma).expect("query");
        }
        let after = tmp("history-after.json");
        idx.save(&after).expect("save");
        let a = std::fs::read(&before).expect("read");
        let b = std::fs::read(&after).expect("read");
        assert_eq!(a, b);
    }

    #[test]
    fn query_lines_name_curves_by_id() {
        let ds_path = tmp("named.jsonl");
        std::fs::write(
            &ds_path,
            "{\"id\":\"left\",\"points\":[[0,0],[1,0]]}\n",
        )
        .expect("write");
        let ds = ingest(&ds_path, Format::Jsonl).expect("ingest");
        let cfg = RunConfig {
            eps: 0.4,
            delta: Some(0.5),
            k: 3,
            variant: Variant::ThreeEps,
            mode: Mode::LazyMemo,
            oracle: OracleKind::Brute,
            seed: 1,
            budget: None,
        };
        let idx_path = tmp("named-index.json");
        cmd_build(&cfg, &ds, &idx_path).expect("build");
        let queries = Dataset {
            curves: vec![
                (
                    "near".into(),
                    PolyCurve::from_rows(&[vec![0.0, 0.1], vec![0.5, 0.1], vec![1.0, 0.1]])
                        .expect("rows"),
                ),
                (
                    "far".into(),
                    PolyCurve::from_rows(&[vec![0.0, 9.0], vec![0.5, 9.0], vec![1.0, 9.0]])
                        .expect("rows"),
                ),
            ],
            d: 2,
        };
        // Exercise both the plain and the verifying printer.
        cmd_query(&idx_path, &ds, &queries, false).expect("query");
        cmd_query(&idx_path, &ds, &queries, true).expect("verify query");
    }
}
