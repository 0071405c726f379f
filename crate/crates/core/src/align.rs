//! Orthogonal mappings between two category-vector spaces.
//!
//! Conventions: spaces are matrices with one vector per row; a mapping `W`
//! sends a source vector `x` to `W·x`, so a whole source matrix maps to
//! `X·Wᵀ`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{default_norm_steps, normalize, whiten, CategoryVectorSet, NormStep};
use crate::matching::{Retrieval, Scorer};
use crate::synthetic::rng;
use crate::{Error, Matrix, Result};

/// Source/target row pairs, optionally weighted. Many-to-one is allowed in
/// both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedDictionary {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Option<Vec<f64>>,
}

impl SeedDictionary {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        SeedDictionary {
            pairs,
            weights: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| (i, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn weight(&self, p: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[p])
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Empty("seed dictionary has no pairs".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.pairs.len() {
                return Err(Error::Dimension(format!(
                    "{} weights for {} pairs",
                    w.len(),
                    self.pairs.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
            }
        }
        for &(i, j) in &self.pairs {
            if i >= n || j >= m {
                return Err(Error::InvalidArgument(format!(
                    "pair ({i}, {j}) out of range for {n}x{m} spaces"
                )));
            }
        }
        Ok(())
    }
}

/// Resolve `source_code<TAB>target_code` lines against two category sets.
/// Unknown codes are an error; pairs touching uncovered (masked) categories
/// are dropped and returned.
pub fn parse_dictionary(
    text: &str,
    origin: &str,
    src: &CategoryVectorSet,
    tgt: &CategoryVectorSet,
) -> Result<(SeedDictionary, Vec<(String, String)>)> {
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((s, t)) = line.split_once('\t') else {
            return Err(Error::parse(origin, lineno, "expected source_code<TAB>target_code"));
        };
        let (s, t) = (s.trim(), t.trim());
        let i = src.row_of(s).ok_or_else(|| Error::UnknownCode {
            code: s.to_string(),
            context: format!("{origin}:{lineno} (source)"),
        })?;
        let j = tgt.row_of(t).ok_or_else(|| Error::UnknownCode {
            code: t.to_string(),
            context: format!("{origin}:{lineno} (target)"),
        })?;
        if src.mask[i] && tgt.mask[j] {
            pairs.push((i, j));
        } else {
            dropped.push((s.to_string(), t.to_string()));
        }
    }
    Ok((SeedDictionary::new(pairs), dropped))
}

pub fn load_dictionary(
    path: impl AsRef<Path>,
    src: &CategoryVectorSet,
    tgt: &CategoryVectorSet,
) -> Result<(SeedDictionary, Vec<(String, String)>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, &path.display().to_string(), src, tgt)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MappingMeta {
    pub method: String,
    pub iterations: usize,
    /// Mean dictionary score recorded after each round.
    pub history: Vec<f64>,
}

/// Orthogonal `d×d` map from source to target space.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    pub w: Matrix,
    pub meta: MappingMeta,
}

impl MappingMatrix {
    pub fn identity(d: usize) -> Self {
        MappingMatrix {
            w: Matrix::identity(d, d),
            meta: MappingMeta {
                method: "identity".into(),
                ..Default::default()
            },
        }
    }

    /// `max |WᵀW − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.w.ncols();
        (self.w.transpose() * &self.w - Matrix::identity(d, d)).abs().max()
    }

    /// Best recorded round score, if any.
    pub fn best_score(&self) -> Option<f64> {
        self.meta.history.iter().cloned().reduce(f64::max)
    }

    /// Map source rows: `X·Wᵀ`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        x * self.w.transpose()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# method={}", self.meta.method);
        let _ = writeln!(out, "# iterations={}", self.meta.iterations);
        let history: Vec<String> = self.meta.history.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "# scores={}", history.join(","));
        let _ = writeln!(out, "# dim={}", self.w.nrows());
        for row in self.w.row_iter() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut meta = MappingMeta::default();
        let mut dim = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if let Some(kv) = line.strip_prefix('#') {
                let Some((k, v)) = kv.trim().split_once('=') else { continue };
                let bad = |what: &str| Error::parse(origin, lineno, format!("bad {what}"));
                match k.trim() {
                    "method" => meta.method = v.trim().to_string(),
                    "iterations" => meta.iterations = v.trim().parse().map_err(|_| bad("iterations"))?,
                    "dim" => dim = Some(v.trim().parse::<usize>().map_err(|_| bad("dim"))?),
                    "scores" => {
                        meta.history = v
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("scores")))
                            .collect::<Result<_>>()?
                    }
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split('\t')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(origin, lineno, format!("bad value {s:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let d = dim.unwrap_or(rows.len());
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::parse(origin, 1, format!("expected a {d}x{d} matrix")));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(MappingMatrix {
            w: Matrix::from_row_slice(d, d, &flat),
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub refinement_iterations: usize,
    pub csls_k: usize,
    /// Whiten each space after normalization.
    pub whitening: bool,
    pub whitening_epsilon: f64,
    /// Applied to each space before alignment. Vectors are not re-normalized
    /// between refinement rounds.
    pub normalization: Vec<NormStep>,
    /// Stop refining once the mean dictionary score improves by less.
    pub convergence_tol: f64,
    pub seed: u64,
    /// Self-learning restarts; restart 0 uses the full initial dictionary,
    /// later ones a random half of it.
    pub restarts: usize,
    /// Length of the sorted similarity profile used to seed self-learning.
    pub profile_len: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            refinement_iterations: 5,
            csls_k: 10,
            whitening: false,
            whitening_epsilon: 0.0,
            normalization: default_norm_steps(),
            convergence_tol: 1e-6,
            seed: 0,
            restarts: 3,
            profile_len: 256,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refinement_iterations == 0 {
            return Err(Error::Config("refinement_iterations must be >= 1".into()));
        }
        if self.csls_k == 0 {
            return Err(Error::Config("csls_k must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.profile_len == 0 {
            return Err(Error::Config("profile_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Normalize (and optionally whiten) one space.
    pub fn preprocess(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = if self.normalization.is_empty() {
            x.clone()
        } else {
            normalize(x, &self.normalization)?
        };
        if self.whitening {
            out = whiten(&out, self.whitening_epsilon)?.0;
        }
        Ok(out)
    }
}

fn check_dims(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "source has {} columns, target {}",
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// Dictionary-restricted cross-covariance `Σ w·a_i b_jᵀ` (rows of `a` and
/// `b` selected by the pairs, in the given order).
fn cross_covariance(a: &Matrix, b: &Matrix, pairs: impl Iterator<Item = (usize, usize, f64)>) -> Matrix {
    let d = a.ncols();
    let mut m = Matrix::zeros(d, d);
    for (i, j, w) in pairs {
        let ai = a.row(i);
        let bj = b.row(j);
        for r in 0..d {
            let s = w * ai[r];
            if s == 0.0 {
                continue;
            }
            for c in 0..d {
                m[(r, c)] += s * bj[c];
            }
        }
    }
    m
}

fn checked_pairs<'a>(
    x: &'a Matrix,
    y: &'a Matrix,
    dict: &'a SeedDictionary,
) -> Result<impl Iterator<Item = (usize, usize, f64)> + 'a> {
    check_dims(x, y)?;
    dict.validate(x.nrows(), y.nrows())?;
    for &(i, j) in &dict.pairs {
        if x.row(i).iter().all(|v| *v == 0.0) || y.row(j).iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(format!("pair ({i}, {j}) references a zero row")));
        }
    }
    Ok(dict
        .pairs
        .iter()
        .enumerate()
        .map(|(p, &(i, j))| (i, j, dict.weight(p))))
}

fn svd_factors(m: Matrix) -> Result<(Matrix, Matrix)> {
    if m.iter().all(|v| *v == 0.0) {
        return Err(Error::Numerical("cross-covariance is all zero".into()));
    }
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok((u, v_t)),
        _ => Err(Error::Numerical("SVD did not converge".into())),
    }
}

/// Orthogonal Procrustes: the orthogonal `W` minimizing `Σ‖W·x_i − y_j‖²`
/// over dictionary pairs, `W = U·Vᵀ` with `U·Σ·Vᵀ = Σ y_j x_iᵀ`.
pub fn procrustes_solve(x: &Matrix, y: &Matrix, dict: &SeedDictionary) -> Result<MappingMatrix> {
    let pairs = checked_pairs(x, y, dict)?;
    let m = cross_covariance(y, x, pairs.map(|(i, j, w)| (j, i, w)));
    let (u, v_t) = svd_factors(m)?;
    Ok(MappingMatrix {
        w: u * v_t,
        meta: MappingMeta {
            method: "procrustes".into(),
            iterations: 1,
            history: Vec::new(),
        },
    })
}

/// Joint orthogonal transform: with `U·Σ·Vᵀ = X_dᵀ·Y_d`, returns
/// `(X·U, Y·V)`.
///
/// Cosines between transformed spaces equal those between `X·(V·Uᵀ)ᵀ` and
/// `Y`, i.e. the Procrustes mapping for the same dictionary.
pub fn vecmap_transform(x: &Matrix, y: &Matrix, dict: &SeedDictionary) -> Result<(Matrix, Matrix)> {
    let pairs = checked_pairs(x, y, dict)?;
    let m = cross_covariance(x, y, pairs);
    let (u, v_t) = svd_factors(m)?;
    Ok((x * u, y * v_t.transpose()))
}

/// Source-side mapping equivalent to [`vecmap_transform`]: `W = V·Uᵀ`.
pub fn vecmap_mapping(x: &Matrix, y: &Matrix, dict: &SeedDictionary) -> Result<MappingMatrix> {
    let pairs = checked_pairs(x, y, dict)?;
    let m = cross_covariance(x, y, pairs);
    let (u, v_t) = svd_factors(m)?;
    Ok(MappingMatrix {
        w: v_t.transpose() * u.transpose(),
        meta: MappingMeta {
            method: "vecmap".into(),
            iterations: 1,
            history: Vec::new(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InductionMode {
    /// Every usable source row paired with its argmax target.
    Forward,
    /// Only pairs that are each other's argmax.
    Mutual,
}

/// Dictionary induction plus the score of every induced pair.
pub fn induce_scored(
    x: &Matrix,
    y: &Matrix,
    scorer: Scorer,
    mode: InductionMode,
) -> Result<(SeedDictionary, Vec<f64>)> {
    check_dims(x, y)?;
    let retrieval = Retrieval::new(x, y, scorer)?;
    let forward = retrieval.forward();
    let backward = match mode {
        InductionMode::Forward => None,
        InductionMode::Mutual => Some(retrieval.backward()),
    };
    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    for (i, best) in forward.into_iter().enumerate() {
        let Some((j, s)) = best else { continue };
        if let Some(back) = &backward {
            if back[j].map(|(bi, _)| bi) != Some(i) {
                continue;
            }
        }
        pairs.push((i, j));
        scores.push(s);
    }
    Ok((SeedDictionary::new(pairs), scores))
}

/// Pair rows of two (already aligned) spaces by argmax retrieval. Zero rows
/// are excluded on both sides; ties go to the lowest target index.
pub fn induce_dictionary(
    x: &Matrix,
    y: &Matrix,
    scorer: Scorer,
    mode: InductionMode,
) -> Result<SeedDictionary> {
    induce_scored(x, y, scorer, mode).map(|(d, _)| d)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NEG_INFINITY;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean forward CSLS score of `X·Wᵀ` against `Y`.
pub fn mean_csls_score(x: &Matrix, y: &Matrix, w: &Matrix, k: usize) -> Result<f64> {
    let (_, scores) = induce_scored(&(x * w.transpose()), y, Scorer::Csls { k }, InductionMode::Forward)?;
    Ok(mean(&scores))
}

/// Alternate Procrustes and forward CSLS dictionary induction.
///
/// Stops after `refinement_iterations` rounds, or earlier once the mean
/// dictionary score improves by less than `convergence_tol`. Returns the
/// mapping of the best-scoring round; `meta.history` holds every round's
/// score.
pub fn refine(x: &Matrix, y: &Matrix, seed: &SeedDictionary, cfg: &AlignmentConfig) -> Result<MappingMatrix> {
    cfg.validate()?;
    let scorer = Scorer::Csls { k: cfg.csls_k };
    let mut dict = seed.clone();
    let mut history = Vec::new();
    let mut best: Option<(f64, Matrix)> = None;
    for round in 0..cfg.refinement_iterations {
        let w = procrustes_solve(x, y, &dict)?.w;
        let (next, scores) = induce_scored(&(x * w.transpose()), y, scorer, InductionMode::Forward)?;
        let score = mean(&scores);
        let improvement = history.last().map(|prev| score - prev);
        history.push(score);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, w));
        }
        if round > 0 && improvement.is_some_and(|d| d < cfg.convergence_tol) {
            break;
        }
        if next.is_empty() {
            break;
        }
        dict = next;
    }
    let (_, w) = best.expect("at least one round ran");
    Ok(MappingMatrix {
        w,
        meta: MappingMeta {
            method: "refine".into(),
            iterations: history.len(),
            history,
        },
    })
}

fn unit_usable(x: &Matrix) -> (Matrix, Vec<usize>) {
    let rows: Vec<usize> = (0..x.nrows())
        .filter(|&i| x.row(i).iter().any(|v| *v != 0.0))
        .collect();
    let mut sub = x.select_rows(&rows);
    for mut r in sub.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    (sub, rows)
}

/// For every row, its `len` largest cosines to the other rows of the same
/// space, sorted descending.
fn similarity_profiles(xn: &Matrix, len: usize) -> Matrix {
    let n = xn.nrows();
    let sims = xn * xn.transpose();
    let mut out = Matrix::zeros(n, len);
    let mut buf = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend((0..n).filter(|&j| j != i).map(|j| sims[(i, j)]));
        buf.sort_by(|a, b| b.total_cmp(a));
        for (c, v) in buf.iter().take(len).enumerate() {
            out[(i, c)] = *v;
        }
    }
    out
}

/// Initial dictionary for self-learning: rows are paired across spaces by the
/// Euclidean distance between their sorted intra-space similarity profiles.
/// Orthogonal maps preserve intra-space cosines, so a rotated copy of a
/// space has identical profiles.
pub fn profile_dictionary(x: &Matrix, y: &Matrix, profile_len: usize) -> Result<SeedDictionary> {
    check_dims(x, y)?;
    let (xn, xrows) = unit_usable(x);
    let (yn, yrows) = unit_usable(y);
    if xrows.len() < 2 || yrows.len() < 2 {
        return Err(Error::Empty("need at least 2 usable rows per space".into()));
    }
    let len = profile_len.min(xrows.len() - 1).min(yrows.len() - 1);
    let px = similarity_profiles(&xn, len);
    let py = similarity_profiles(&yn, len);
    // nearest profile = argmax of p·q − |q|²/2
    let half_sq: Vec<f64> = py.row_iter().map(|r| 0.5 * r.norm_squared()).collect();
    let dots = &px * py.transpose();
    let mut pairs = Vec::with_capacity(xrows.len());
    for i in 0..xrows.len() {
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..yrows.len() {
            let s = dots[(i, j)] - half_sq[j];
            if s > best.1 {
                best = (j, s);
            }
        }
        pairs.push((xrows[i], yrows[best.0]));
    }
    Ok(SeedDictionary::new(pairs))
}

/// Unsupervised alignment: profile-based initial dictionary, then
/// [`refine`], repeated over `cfg.restarts` seeded restarts; the restart
/// with the highest final mean CSLS score wins.
///
/// Inputs are expected to be preprocessed already (see
/// [`AlignmentConfig::preprocess`]).
pub fn self_learn(x: &Matrix, y: &Matrix, cfg: &AlignmentConfig) -> Result<MappingMatrix> {
    cfg.validate()?;
    check_dims(x, y)?;
    let usable = |m: &Matrix| m.row_iter().filter(|r| r.iter().any(|v| *v != 0.0)).count();
    let need = 2 * cfg.csls_k;
    if usable(x) < need || usable(y) < need {
        return Err(Error::Empty(format!(
            "self-learning needs at least {need} usable rows per space (2·csls_k)"
        )));
    }
    let init = profile_dictionary(x, y, cfg.profile_len)?;
    let mut best: Option<MappingMatrix> = None;
    for restart in 0..cfg.restarts {
        let dict = if restart == 0 {
            init.clone()
        } else {
            let mut r = rng(cfg.seed.wrapping_add(restart as u64));
            let pairs: Vec<_> = init.pairs.iter().copied().filter(|_| r.random_bool(0.5)).collect();
            if pairs.is_empty() {
                continue;
            }
            SeedDictionary::new(pairs)
        };
        let mapping = refine(x, y, &dict, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => mapping.best_score() > b.best_score(),
        };
        if better {
            best = Some(mapping);
        }
    }
    let mut best = best.expect("restart 0 always runs");
    best.meta.method = "self-learn".into();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_matrix, random_orthogonal, rotated_clone};

    #[test]
    fn identity_case() {
        let x = gaussian_matrix(20, 5, 1);
        let m = procrustes_solve(&x, &x, &SeedDictionary::identity(20)).unwrap();
        assert!((m.w - Matrix::identity(5, 5)).abs().max() < 1e-10);
    }

    #[test]
    fn quarter_turn() {
        let x = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let m = procrustes_solve(&x, &y, &SeedDictionary::identity(2)).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((m.w - expected).abs().max() < 1e-12);
    }

    #[test]
    fn procrustes_errors() {
        let x = gaussian_matrix(4, 3, 1);
        assert!(procrustes_solve(&x, &x, &SeedDictionary::default()).is_err());
        assert!(procrustes_solve(&x, &x, &SeedDictionary::new(vec![(9, 0)])).is_err());
        let mut z = x.clone();
        z.row_mut(2).fill(0.0);
        assert!(procrustes_solve(&z, &x, &SeedDictionary::new(vec![(2, 2)])).is_err());
        let y = gaussian_matrix(4, 2, 1);
        assert!(procrustes_solve(&x, &y, &SeedDictionary::identity(4)).is_err());
        let weighted = SeedDictionary {
            pairs: vec![(0, 0)],
            weights: Some(vec![1.0, 2.0]),
        };
        assert!(procrustes_solve(&x, &x, &weighted).is_err());
        // orthogonal vectors paired -> zero cross-covariance
        let a = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let m = procrustes_solve(&a, &b, &SeedDictionary::identity(1)).unwrap();
        assert!(m.orthogonality_error() < 1e-12);
        let zero_w = SeedDictionary {
            pairs: vec![(0, 0)],
            weights: Some(vec![0.0]),
        };
        assert!(matches!(procrustes_solve(&a, &a, &zero_w), Err(Error::Numerical(_))));
    }

    #[test]
    fn weights_shift_the_solution() {
        let c = rotated_clone(30, 4, 0.0, 3);
        let mut y = c.y.clone();
        // corrupt one pair; a zero weight removes its influence
        y.set_row(0, &(-c.y.row(0)));
        let mut weights = vec![1.0; 30];
        weights[0] = 0.0;
        let dict = SeedDictionary {
            pairs: (0..30).map(|i| (i, i)).collect(),
            weights: Some(weights),
        };
        let m = procrustes_solve(&c.x, &y, &dict).unwrap();
        assert!((m.w - &c.rotation).abs().max() < 1e-10);
    }

    #[test]
    fn vecmap_single_pair_aligns_that_pair() {
        let x = gaussian_matrix(6, 4, 7);
        let y = gaussian_matrix(6, 4, 8);
        let (xp, yp) = vecmap_transform(&x, &y, &SeedDictionary::new(vec![(2, 4)])).unwrap();
        let a = xp.row(2);
        let b = yp.row(4);
        let cos = a.dot(&b) / (a.norm() * b.norm());
        assert!((cos - 1.0).abs() < 1e-8, "{cos}");
    }

    #[test]
    fn vecmap_matches_procrustes_mapping() {
        let c = rotated_clone(40, 6, 0.05, 2);
        let dict = SeedDictionary::identity(40);
        let w1 = procrustes_solve(&c.x, &c.y, &dict).unwrap().w;
        let w2 = vecmap_mapping(&c.x, &c.y, &dict).unwrap().w;
        assert!((w1 - w2).abs().max() < 1e-10);
    }

    #[test]
    fn induction_modes() {
        let x = gaussian_matrix(10, 4, 5);
        let d = induce_dictionary(&x, &x, Scorer::Cosine, InductionMode::Mutual).unwrap();
        assert_eq!(d, SeedDictionary::identity(10));
        // two sources sharing a target: forward keeps both, mutual keeps one
        let src = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 1.0, 0.2]);
        let tgt = Matrix::from_row_slice(2, 2, &[1.0, 0.15, -1.0, 0.0]);
        let f = induce_dictionary(&src, &tgt, Scorer::Cosine, InductionMode::Forward).unwrap();
        assert_eq!(f.pairs, [(0, 0), (1, 0)]);
        let m = induce_dictionary(&src, &tgt, Scorer::Cosine, InductionMode::Mutual).unwrap();
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn induction_tie_break() {
        let x = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let mut y = Matrix::from_element(8, 2, 0.0);
        y.set_row(0, &Matrix::from_row_slice(1, 2, &[-1.0, 0.0]).row(0));
        for j in 1..8 {
            y[(j, 1)] = 1.0;
        }
        y[(3, 0)] = 1.0;
        y[(3, 1)] = 1.0;
        y[(7, 0)] = 1.0;
        y[(7, 1)] = 1.0;
        let d = induce_dictionary(&x, &y, Scorer::Cosine, InductionMode::Forward).unwrap();
        assert_eq!(d.pairs, [(0, 3)]);
        let zero = Matrix::zeros(2, 2);
        assert!(induce_dictionary(&zero, &y, Scorer::Cosine, InductionMode::Forward).is_err());
    }

    #[test]
    fn refine_single_round() {
        let c = rotated_clone(60, 5, 0.01, 4);
        let cfg = AlignmentConfig {
            refinement_iterations: 1,
            csls_k: 5,
            ..Default::default()
        };
        let m = refine(&c.x, &c.y, &SeedDictionary::identity(10), &cfg).unwrap();
        assert_eq!(m.meta.history.len(), 1);
        assert_eq!(m.meta.iterations, 1);
    }

    #[test]
    fn refine_fixed_point_stops_early() {
        let x = gaussian_matrix(50, 4, 9);
        let cfg = AlignmentConfig {
            csls_k: 5,
            ..Default::default()
        };
        let seed = SeedDictionary::new((0..6).map(|i| (i, i)).collect());
        let m = refine(&x, &x, &seed, &cfg).unwrap();
        assert!((m.w.clone() - Matrix::identity(4, 4)).abs().max() < 1e-6);
        assert!(m.meta.iterations < cfg.refinement_iterations, "{:?}", m.meta);
        assert!(m.orthogonality_error() <= 1e-8);
    }

    #[test]
    fn mapping_text_round_trip() {
        let m = MappingMatrix {
            w: random_orthogonal(4, 1),
            meta: MappingMeta {
                method: "refine".into(),
                iterations: 3,
                history: vec![0.25, 0.5, 0.125],
            },
        };
        let back = MappingMatrix::parse(&m.to_text(), "m").unwrap();
        assert_eq!(back, m);
        assert!(MappingMatrix::parse("# dim=2\n1\t0\n", "m").is_err());
    }

    #[test]
    fn self_learn_requires_enough_rows() {
        let x = gaussian_matrix(15, 3, 1);
        let cfg = AlignmentConfig::default();
        assert!(matches!(self_learn(&x, &x, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn config_validation() {
        let bad = AlignmentConfig {
            refinement_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlignmentConfig {
            csls_k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
