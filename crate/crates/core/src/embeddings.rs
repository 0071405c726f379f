//! Word vectors, category vectors, and the linear-algebra transforms applied
//! to them before alignment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{CategoryCode, Scheme, Taxonomy};
use crate::{Error, Matrix, Result, Vector};

/// Token-indexed dense vectors, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Matrix,
}

impl VectorTable {
    pub fn new(tokens: Vec<String>, matrix: Matrix) -> Result<Self> {
        if tokens.len() != matrix.nrows() {
            return Err(Error::Dimension(format!(
                "{} tokens for {} rows",
                tokens.len(),
                matrix.nrows()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite vector component".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(VectorTable {
            tokens,
            index,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, token: &str) -> Option<Vector> {
        self.index_of(token)
            .map(|i| self.matrix.row(i).transpose())
    }

    /// Write in word2vec text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len(), self.dim());
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in self.matrix.row(i).iter() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub duplicates: usize,
}

/// Read word2vec text format: a `count dim` header, then `token v1 .. vd`.
/// Blank and `#` lines before the header are skipped.
/// Duplicate tokens keep their first row.
pub fn read_vectors<R: Read>(reader: R, origin: &str) -> Result<(VectorTable, LoadStats)> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (count, dim) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::parse(origin, 1, "missing `count dim` header"));
        };
        let line = line.map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parsed = (
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next().and_then(|s| s.parse::<usize>().ok()),
        );
        match (parsed, parts.next()) {
            ((Some(c), Some(d)), None) if d > 0 => break (c, d),
            _ => return Err(Error::parse(origin, idx + 1, "expected `count dim` header")),
        }
    };

    let mut tokens = Vec::with_capacity(count);
    let mut seen = HashMap::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    let mut stats = LoadStats::default();
    let mut rows_read = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let token = parts.next().unwrap_or_default();
        let mut values = Vec::with_capacity(dim);
        for part in parts {
            let v: f64 = part.parse().map_err(|_| {
                Error::parse(origin, lineno, format!("non-numeric component {part:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(origin, lineno, "non-finite component"));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("{} components, header declares {dim}", values.len()),
            ));
        }
        rows_read += 1;
        if seen.contains_key(token) {
            stats.duplicates += 1;
            continue;
        }
        seen.insert(token.to_string(), tokens.len());
        tokens.push(token.to_string());
        data.extend(values);
    }
    if rows_read != count {
        return Err(Error::parse(
            origin,
            1,
            format!("header declares {count} rows, found {rows_read}"),
        ));
    }
    let matrix = Matrix::from_row_slice(tokens.len(), dim, &data);
    Ok((
        VectorTable {
            tokens,
            index: seen,
            matrix,
        },
        stats,
    ))
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<(VectorTable, LoadStats)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors(file, &path.display().to_string())
}

/// Lowercase, then split on anything that is not a Unicode letter or digit.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Mean of the in-vocabulary token vectors. Rows are summed in vocabulary
/// order, so the result does not depend on token order.
pub fn average_tokens<S: AsRef<str>>(tokens: &[S], table: &VectorTable) -> (Vector, bool) {
    let mut rows: Vec<usize> = tokens
        .iter()
        .filter_map(|t| table.index_of(t.as_ref()))
        .collect();
    let mut sum = Vector::zeros(table.dim());
    if rows.is_empty() {
        return (sum, false);
    }
    rows.sort_unstable();
    for &r in &rows {
        sum += table.matrix.row(r).transpose();
    }
    sum /= rows.len() as f64;
    (sum, true)
}

/// One row per category of a taxonomy, with a coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryVectorSet {
    pub scheme: Scheme,
    pub codes: Vec<CategoryCode>,
    pub matrix: Matrix,
    pub mask: Vec<bool>,
}

impl CategoryVectorSet {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c.as_str() == code)
    }

    pub fn usable_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn uncovered(&self) -> Vec<CategoryCode> {
        self.codes
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| !m)
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// Rows for the taxonomy's categories looked up by code in `table`
    /// (e.g. trained document vectors keyed by category code).
    pub fn from_table(t: &Taxonomy, table: &VectorTable) -> Self {
        let codes: Vec<CategoryCode> = t.codes().cloned().collect();
        let mut matrix = Matrix::zeros(codes.len(), table.dim());
        let mut mask = vec![false; codes.len()];
        for (i, code) in codes.iter().enumerate() {
            if let Some(r) = table.index_of(code.as_str()) {
                matrix.set_row(i, &table.matrix.row(r));
                mask[i] = true;
            }
        }
        CategoryVectorSet {
            scheme: t.scheme(),
            codes,
            matrix,
            mask,
        }
    }

    /// Covered rows as a vector table keyed by code.
    pub fn to_table(&self) -> VectorTable {
        let rows = self.usable_rows();
        let tokens = rows.iter().map(|&i| self.codes[i].to_string()).collect();
        let matrix = self.matrix.select_rows(&rows);
        VectorTable::new(tokens, matrix).expect("codes are unique and rows finite")
    }

    /// Apply `f` to the covered rows only; uncovered rows stay zero.
    pub fn map_usable(&self, f: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<Self> {
        let rows = self.usable_rows();
        let sub = f(&self.matrix.select_rows(&rows))?;
        if sub.nrows() != rows.len() {
            return Err(Error::Dimension("row count changed by transform".into()));
        }
        let mut matrix = Matrix::zeros(self.len(), sub.ncols());
        for (k, &i) in rows.iter().enumerate() {
            matrix.set_row(i, &sub.row(k));
        }
        Ok(CategoryVectorSet {
            matrix,
            ..self.clone()
        })
    }
}

/// Average the description tokens of every category. Uncovered categories get
/// a zero row and a false mask entry; their codes are returned separately.
pub fn build_category_vectors(
    t: &Taxonomy,
    table: &VectorTable,
) -> (CategoryVectorSet, Vec<CategoryCode>) {
    let mut codes = Vec::with_capacity(t.len());
    let mut matrix = Matrix::zeros(t.len(), table.dim());
    let mut mask = Vec::with_capacity(t.len());
    let mut uncovered = Vec::new();
    for (i, cat) in t.iter().enumerate() {
        let (v, covered) = average_tokens(&tokenize(&cat.description), table);
        matrix.set_row(i, &v.transpose());
        mask.push(covered);
        if !covered {
            uncovered.push(cat.code.clone());
        }
        codes.push(cat.code.clone());
    }
    (
        CategoryVectorSet {
            scheme: t.scheme(),
            codes,
            matrix,
            mask,
        },
        uncovered,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormStep {
    /// Scale each nonzero row to unit Euclidean norm.
    Unit,
    /// Subtract the column mean.
    Center,
}

pub fn default_norm_steps() -> Vec<NormStep> {
    vec![NormStep::Unit, NormStep::Center, NormStep::Unit]
}

fn unit_rows(x: &mut Matrix) {
    for mut row in x.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

fn column_means(x: &Matrix) -> Vector {
    let mut mean = Vector::zeros(x.ncols());
    for row in x.row_iter() {
        mean += row.transpose();
    }
    if x.nrows() > 0 {
        mean /= x.nrows() as f64;
    }
    mean
}

pub fn normalize(x: &Matrix, steps: &[NormStep]) -> Result<Matrix> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("no normalization steps".into()));
    }
    let mut out = x.clone();
    for step in steps {
        match step {
            NormStep::Unit => unit_rows(&mut out),
            NormStep::Center => {
                let mean = column_means(&out).transpose();
                for mut row in out.row_iter_mut() {
                    row -= &mean;
                }
            }
        }
    }
    Ok(out)
}

/// Sphering transform `(XᵀX + εI)^(-1/2)` and the whitened data `X·T`.
pub fn whiten(x: &Matrix, epsilon: f64) -> Result<(Matrix, Matrix)> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let d = x.ncols();
    let mut gram = x.transpose() * x;
    for i in 0..d {
        gram[(i, i)] += epsilon;
    }
    gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram);
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let smallest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if d > 0 && (smallest <= largest * 1e-12 || smallest <= 0.0) {
        return Err(Error::RankDeficient { smallest });
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let transform = v * Matrix::from_diagonal(&inv_sqrt) * v.transpose();
    let transform = (&transform + transform.transpose()) * 0.5;
    Ok((x * &transform, transform))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// n×k coordinates.
    pub coords: Matrix,
    pub explained_variance: Vec<f64>,
    /// d×k principal axes as columns.
    pub components: Matrix,
    pub mean: Vector,
}

impl PcaProjection {
    pub fn explained_variance_ratio(&self, total_variance: f64) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
            .collect()
    }
}

/// Project column-centered `x` onto its top-`k` principal axes.
///
/// Axes come from the eigendecomposition of the sample covariance, sorted by
/// decreasing variance; each axis is signed so that its largest-magnitude
/// entry is positive.
pub fn pca_project(x: &Matrix, k: usize) -> Result<PcaProjection> {
    let (n, d) = x.shape();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("k must be in 1..={d}, got {k}")));
    }
    if n < 2 {
        return Err(Error::Empty(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mean = column_means(x);
    let mut centered = x.clone();
    let mean_row = mean.transpose();
    for mut row in centered.row_iter_mut() {
        row -= &mean_row;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut components = Matrix::zeros(d, k);
    let mut explained_variance = Vec::with_capacity(k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let mut axis = eig.eigenvectors.column(idx).into_owned();
        let mut pivot = 0;
        for i in 1..d {
            if axis[i].abs() > axis[pivot].abs() {
                pivot = i;
            }
        }
        if axis[pivot] < 0.0 {
            axis = -axis;
        }
        components.set_column(j, &axis);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    let coords = centered * &components;
    Ok(PcaProjection {
        coords,
        explained_variance,
        components,
        mean,
    })
}

/// Total variance (trace of the sample covariance) of `x`.
pub fn total_variance(x: &Matrix) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 0.0;
    }
    let mean = column_means(x);
    x.row_iter()
        .map(|r| (r.transpose() - &mean).norm_squared())
        .sum::<f64>()
        / (n as f64 - 1.0)
}
