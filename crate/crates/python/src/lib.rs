//! Python bindings for the `taxomap` core library.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use taxomap::align::{self, AlignmentConfig, MappingMatrix, SeedDictionary};
use taxomap::embeddings::{self, NormStep};
use taxomap::eval::{self, ContingencyTable};
use taxomap::matching::{self, Retrieval, Scorer, TokenBag};
use taxomap::pipeline::{self, PipelineConfig};
use taxomap::taxonomy::{self, CategoryCode, FormatConfig, OrphanPolicy, Scheme};
use taxomap::{Error, ErrorKind, Matrix};

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn scheme(name: &str) -> PyResult<Scheme> {
    name.parse().map_err(py_err)
}

fn to_matrix(rows: Rows) -> PyResult<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(Matrix::from_row_iterator(n, d, rows.into_iter().flatten()))
}

fn from_matrix(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dictionary(pairs: Option<Vec<(usize, usize)>>, n: usize) -> SeedDictionary {
    pairs.map_or_else(|| SeedDictionary::identity(n), SeedDictionary::new)
}

/// Parse a category code; returns its segments.
#[pyfunction]
#[pyo3(signature = (raw, scheme_name = "dotted"))]
fn parse_code(raw: &str, scheme_name: &str) -> PyResult<Vec<String>> {
    let c = CategoryCode::parse(raw, scheme(scheme_name)?).map_err(py_err)?;
    Ok(c.segments().to_vec())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    embeddings::tokenize(text)
}

/// Bag-of-words similarity of two descriptions.
#[pyfunction]
fn string_sim(a: &str, b: &str) -> PyResult<f64> {
    let code = CategoryCode::parse("0", Scheme::Dotted).map_err(py_err)?;
    Ok(matching::string_sim(
        &TokenBag::new(code.clone(), a),
        &TokenBag::new(code, b),
    ))
}

#[pyclass(name = "Taxonomy", module = "taxomap", frozen)]
struct PyTaxonomy {
    inner: taxonomy::Taxonomy,
}

#[pymethods]
impl PyTaxonomy {
    /// Build from `(code, description)` pairs.
    #[new]
    #[pyo3(signature = (entries, scheme_name = "dotted", strict = false))]
    fn new(entries: Vec<(String, String)>, scheme_name: &str, strict: bool) -> PyResult<Self> {
        let s = scheme(scheme_name)?;
        let parsed = entries
            .into_iter()
            .map(|(c, d)| Ok((CategoryCode::parse(&c, s).map_err(py_err)?, d)))
            .collect::<PyResult<Vec<_>>>()?;
        let orphans = if strict { OrphanPolicy::Strict } else { OrphanPolicy::NearestAncestor };
        let inner = taxonomy::Taxonomy::from_entries(s, parsed, orphans).map_err(py_err)?;
        Ok(PyTaxonomy { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, scheme_name = "dotted", header = false))]
    fn load(path: PathBuf, scheme_name: &str, header: bool) -> PyResult<Self> {
        let cfg = FormatConfig {
            header,
            ..FormatConfig::new(scheme(scheme_name)?)
        };
        let inner = taxonomy::load_taxonomy(path, &cfg).map_err(py_err)?;
        Ok(PyTaxonomy { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, code: &str) -> bool {
        self.inner.lookup(code).is_some()
    }

    fn __repr__(&self) -> String {
        format!(
            "Taxonomy(scheme={}, categories={}, depth={})",
            self.inner.scheme(),
            self.inner.len(),
            self.inner.max_depth()
        )
    }

    #[getter]
    fn max_depth(&self) -> usize {
        self.inner.max_depth()
    }

    fn level_counts(&self) -> Vec<usize> {
        self.inner.level_counts()
    }

    fn codes(&self) -> Vec<String> {
        self.inner.codes().map(|c| c.to_string()).collect()
    }

    fn description(&self, code: &str) -> Option<String> {
        self.inner.lookup(code).map(|c| c.description.clone())
    }

    fn parent(&self, code: &str) -> Option<String> {
        self.inner.lookup(code)?.parent.as_ref().map(|p| p.to_string())
    }

    fn children(&self, code: &str) -> Vec<String> {
        match self.inner.lookup(code) {
            Some(c) => self.inner.children(&c.code).iter().map(|c| c.to_string()).collect(),
            None => Vec::new(),
        }
    }

    /// Codes at one level (1 = roots).
    fn level(&self, level: usize) -> PyResult<Vec<String>> {
        let cats = self.inner.level_slice(level).map_err(py_err)?;
        Ok(cats.into_iter().map(|c| c.code.to_string()).collect())
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

/// Best string match in `target` for each source category.
/// Returns `(source, target, score)` triples.
#[pyfunction]
fn match_strings(source: &PyTaxonomy, target: &PyTaxonomy) -> PyResult<Vec<(String, String, f64)>> {
    let recs = matching::match_strings(
        &matching::bags_from_taxonomy(&source.inner),
        &matching::bags_from_taxonomy(&target.inner),
    )
    .map_err(py_err)?;
    Ok(recs
        .into_iter()
        .map(|r| (r.source.to_string(), r.target.to_string(), r.score))
        .collect())
}

/// Two-sided p-value for the 2×2 table `[[a, b], [c, d]]`.
#[pyfunction]
fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> PyResult<f64> {
    let t = ContingencyTable::new([[a, b], [c, d]]).map_err(py_err)?;
    Ok(eval::fisher_exact(&t).p)
}

/// Accuracy from labels (`true`, `partial`, `false`); partial counts as wrong.
#[pyfunction]
fn accuracy(labels: Vec<String>) -> PyResult<HashMap<String, f64>> {
    let mut counts = [0usize; 3];
    for l in &labels {
        let label: eval::Label = l.parse().map_err(py_err)?;
        counts[label as usize] += 1;
    }
    let r = eval::EvalReport::from_counts("py", counts[0], counts[1], counts[2]).map_err(py_err)?;
    Ok(HashMap::from([
        ("correct".to_string(), r.correct as f64),
        ("partial".to_string(), r.partial as f64),
        ("wrong".to_string(), r.wrong as f64),
        ("accuracy".to_string(), r.accuracy),
    ]))
}

/// Orthogonal `W` minimising `||X_D Wᵀ − Y_D||`; `pairs` defaults to row i ↔ row i.
#[pyfunction]
#[pyo3(signature = (x, y, pairs = None))]
fn procrustes(x: Rows, y: Rows, pairs: Option<Vec<(usize, usize)>>) -> PyResult<Rows> {
    let (x, y) = (to_matrix(x)?, to_matrix(y)?);
    let dict = dictionary(pairs, x.nrows().min(y.nrows()));
    Ok(from_matrix(&align::procrustes_solve(&x, &y, &dict).map_err(py_err)?.w))
}

fn alignment_config(iterations: usize, csls_k: usize, seed: u64, normalize: bool) -> AlignmentConfig {
    AlignmentConfig {
        refinement_iterations: iterations,
        csls_k,
        seed,
        normalization: if normalize { embeddings::default_norm_steps() } else { Vec::<NormStep>::new() },
        ..AlignmentConfig::default()
    }
}

fn mapping_result(m: MappingMatrix) -> (Rows, Vec<f64>) {
    (from_matrix(&m.w), m.meta.history)
}

/// Procrustes refinement from a seed dictionary. Returns `(W, score history)`.
#[pyfunction]
#[pyo3(signature = (x, y, pairs, iterations = 5, csls_k = 10, seed = 0, normalize = true))]
fn refine(
    x: Rows,
    y: Rows,
    pairs: Vec<(usize, usize)>,
    iterations: usize,
    csls_k: usize,
    seed: u64,
    normalize: bool,
) -> PyResult<(Rows, Vec<f64>)> {
    let (x, y) = (to_matrix(x)?, to_matrix(y)?);
    let cfg = alignment_config(iterations, csls_k, seed, normalize);
    let m = align::refine(&x, &y, &SeedDictionary::new(pairs), &cfg).map_err(py_err)?;
    Ok(mapping_result(m))
}

/// Unsupervised alignment. Returns `(W, score history)`.
#[pyfunction]
#[pyo3(signature = (x, y, iterations = 5, csls_k = 10, seed = 0, normalize = true))]
fn self_learn(
    x: Rows,
    y: Rows,
    iterations: usize,
    csls_k: usize,
    seed: u64,
    normalize: bool,
) -> PyResult<(Rows, Vec<f64>)> {
    let (x, y) = (to_matrix(x)?, to_matrix(y)?);
    let cfg = alignment_config(iterations, csls_k, seed, normalize);
    Ok(mapping_result(align::self_learn(&x, &y, &cfg).map_err(py_err)?))
}

/// CSLS score matrix between the rows of `x` and `y`.
#[pyfunction]
#[pyo3(signature = (x, y, k = 10))]
fn csls(x: Rows, y: Rows, k: usize) -> PyResult<Rows> {
    let (x, y) = (to_matrix(x)?, to_matrix(y)?);
    let r = Retrieval::new(&x, &y, Scorer::Csls { k }).map_err(py_err)?;
    Ok((0..x.nrows())
        .map(|i| (0..y.nrows()).map(|j| r.score(i, j)).collect())
        .collect())
}

/// Returns `(coords, explained_variance)` for the top `k` components.
#[pyfunction]
#[pyo3(signature = (x, k = 2))]
fn pca(x: Rows, k: usize) -> PyResult<(Rows, Vec<f64>)> {
    let p = embeddings::pca_project(&to_matrix(x)?, k).map_err(py_err)?;
    Ok((from_matrix(&p.coords), p.explained_variance))
}

/// Returns `(whitened, transform)`.
#[pyfunction]
#[pyo3(signature = (x, epsilon = 0.0))]
fn whiten(x: Rows, epsilon: f64) -> PyResult<(Rows, Rows)> {
    let (w, t) = embeddings::whiten(&to_matrix(x)?, epsilon).map_err(py_err)?;
    Ok((from_matrix(&w), from_matrix(&t)))
}

/// Run the full pipeline from a TOML config; returns the output directory.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, threads = None))]
fn run_pipeline(py: Python<'_>, config: PathBuf, out_dir: Option<PathBuf>, threads: Option<usize>) -> PyResult<String> {
    let mut cfg = PipelineConfig::load(&config).map_err(py_err)?;
    if let Some(o) = out_dir {
        cfg.out_dir = o;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    py.detach(|| pipeline::cmd_run(&cfg)).map_err(py_err)?;
    Ok(cfg.out_path().display().to_string())
}

#[pymodule]
#[pyo3(name = "taxomap")]
fn taxomap_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTaxonomy>()?;
    m.add_function(wrap_pyfunction!(parse_code, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(string_sim, m)?)?;
    m.add_function(wrap_pyfunction!(match_strings, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_exact, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(self_learn, m)?)?;
    m.add_function(wrap_pyfunction!(csls, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(whiten, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
