//! Python bindings for the curve index: the Fréchet engine plus the two
//! index flavors. Curves cross the boundary as `list[list[float]]`, one
//! inner list per vertex.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fann::frechet;
use fann::geometry::PolyCurve;
use fann::index::{AnnIndex, Answer, IndexError, Mode, OracleKind, Variant};
use fann::reduction::{build_ladder, ReductionError, ScaleLadder};

fn curve_from(rows: &[Vec<f64>]) -> PyResult<PolyCurve> {
    PolyCurve::from_rows(rows).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn corpus_from(rows: &[Vec<Vec<f64>>]) -> PyResult<Vec<PolyCurve>> {
    rows.iter().map(|c| curve_from(c)).collect()
}

fn variant_from(s: &str) -> PyResult<Variant> {
    match s {
        "one-eps" => Ok(Variant::OneEps),
        "three-eps" => Ok(Variant::ThreeEps),
        _ => Err(PyValueError::new_err(format!(
            "unknown variant {s:?}; expected \"one-eps\" or \"three-eps\""
        ))),
    }
}

fn mode_from(s: &str) -> PyResult<Mode> {
    match s {
        "lazy" => Ok(Mode::LazyMemo),
        "eager" => Ok(Mode::Eager),
        _ => Err(PyValueError::new_err(format!(
            "unknown mode {s:?}; expected \"lazy\" or \"eager\""
        ))),
    }
}

fn oracle_from(s: &str) -> PyResult<OracleKind> {
    match s {
        "brute" => Ok(OracleKind::Brute),
        "canonical" => Ok(OracleKind::Canonical),
        _ => Err(PyValueError::new_err(format!(
            "unknown oracle {s:?}; expected \"brute\" or \"canonical\""
        ))),
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::OneEps => "one-eps",
        Variant::ThreeEps => "three-eps",
    }
}

fn index_err(e: IndexError) -> PyErr {
    match e {
        IndexError::Io(io) => PyIOError::new_err(io.to_string()),
        IndexError::FeasibilityRefused { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn ladder_err(e: ReductionError) -> PyErr {
    match e {
        ReductionError::Io(io) => PyIOError::new_err(io.to_string()),
        ReductionError::Index(inner) => index_err(inner),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Continuous Fréchet distance between two polygonal curves, bisected to
/// an absolute tolerance.
#[pyfunction]
#[pyo3(signature = (a, b, tol = 1e-9))]
fn frechet_value(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, tol: f64) -> PyResult<f64> {
    let (ca, cb) = (curve_from(&a)?, curve_from(&b)?);
    frechet::frechet_value(&ca, &cb, tol).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// True when the continuous Fréchet distance between the curves is at
/// most `r`.
#[pyfunction]
fn frechet_decide(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, r: f64) -> PyResult<bool> {
    let (ca, cb) = (curve_from(&a)?, curve_from(&b)?);
    frechet::frechet_decide(&ca, &cb, r).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Discrete Fréchet distance over the vertex sequences. Upper-bounds the
/// continuous value.
#[pyfunction]
fn discrete_frechet(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let (ca, cb) = (curve_from(&a)?, curve_from(&b)?);
    frechet::discrete_frechet(&ca, &cb).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Single-scale near-neighbor index. `query` answers with a corpus
/// position or `None` for a certified miss at this scale.
#[pyclass]
struct Index {
    inner: AnnIndex,
}

#[pymethods]
impl Index {
    #[staticmethod]
    #[pyo3(signature = (curves, eps, delta, k = 3, variant = "three-eps", mode = "lazy", oracle = "brute", budget = None))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        curves: Vec<Vec<Vec<f64>>>,
        eps: f64,
        delta: f64,
        k: usize,
        variant: &str,
        mode: &str,
        oracle: &str,
        budget: Option<u128>,
    ) -> PyResult<Index> {
        let corpus = corpus_from(&curves)?;
        let (v, m, o) = (variant_from(variant)?, mode_from(mode)?, oracle_from(oracle)?);
        let inner = match budget {
            Some(b) => AnnIndex::build_with_budget(&corpus, v, m, o, eps, delta, k, b),
            None => AnnIndex::build(&corpus, v, m, o, eps, delta, k),
        }
        .map_err(index_err)?;
        Ok(Index { inner })
    }

    fn query(&self, curve: Vec<Vec<f64>>) -> PyResult<Option<usize>> {
        let sigma = curve_from(&curve)?;
        match self.inner.query(&sigma).map_err(index_err)? {
            Answer::Curve(i) => Ok(Some(i)),
            Answer::No => Ok(None),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(index_err)
    }

    /// Reload a saved index. The corpus is not stored in the file and must
    /// be passed again, identical to the one the index was built from.
    #[staticmethod]
    fn load(path: PathBuf, curves: Vec<Vec<Vec<f64>>>) -> PyResult<Index> {
        let corpus = corpus_from(&curves)?;
        let inner = AnnIndex::load(&path, &corpus).map_err(index_err)?;
        Ok(Index { inner })
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn variant(&self) -> &'static str {
        variant_name(self.inner.variant)
    }

    fn __repr__(&self) -> String {
        format!(
            "Index(variant={:?}, eps={}, delta={}, k={})",
            variant_name(self.inner.variant),
            self.inner.eps,
            self.inner.delta,
            self.inner.k
        )
    }
}

/// Scale-free wrapper: a geometric ladder of single-scale indexes searched
/// by bisection. `query` returns `(position, scale)` for the coarsest
/// accepting rung, or `None` when even the top scale rejects.
#[pyclass]
struct Ladder {
    inner: ScaleLadder,
}

#[pymethods]
impl Ladder {
    #[staticmethod]
    #[pyo3(signature = (curves, eps, k = 3, variant = "three-eps", mode = "lazy", oracle = "brute"))]
    fn build(
        curves: Vec<Vec<Vec<f64>>>,
        eps: f64,
        k: usize,
        variant: &str,
        mode: &str,
        oracle: &str,
    ) -> PyResult<Ladder> {
        let corpus = corpus_from(&curves)?;
        let (v, m, o) = (variant_from(variant)?, mode_from(mode)?, oracle_from(oracle)?);
        let inner = build_ladder(&corpus, eps, v, m, o, k).map_err(ladder_err)?;
        Ok(Ladder { inner })
    }

    fn query(&self, curve: Vec<Vec<f64>>) -> PyResult<Option<(usize, f64)>> {
        let sigma = curve_from(&curve)?;
        match self.inner.ann_query(&sigma) {
            Ok(hit) => Ok(Some(hit)),
            Err(ReductionError::AllScalesNo) => Ok(None),
            Err(e) => Err(ladder_err(e)),
        }
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(ladder_err)
    }

    #[staticmethod]
    fn load(dir: PathBuf, curves: Vec<Vec<Vec<f64>>>) -> PyResult<Ladder> {
        let corpus = corpus_from(&curves)?;
        let inner = ScaleLadder::load(&dir, &corpus).map_err(ladder_err)?;
        Ok(Ladder { inner })
    }

    /// Base scale of the ladder; query answers are never finer than this.
    fn delta0(&self) -> f64 {
        self.inner.delta0()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn num_scales(&self) -> usize {
        self.inner.deltas.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Ladder(variant={:?}, eps={}, k={}, scales={})",
            variant_name(self.inner.variant),
            self.inner.eps,
            self.inner.k,
            self.inner.deltas.len()
        )
    }
}

#[pymodule]
fn fann_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(frechet_value, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_decide, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_frechet, m)?)?;
    m.add_class::<Index>()?;
    m.add_class::<Ladder>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
