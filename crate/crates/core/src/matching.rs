//! Category-to-category matching.
//!
//! Vector matchers retrieve, for every usable source row, the target row with
//! the highest cosine or CSLS score. The string matcher compares description
//! token bags. [`hierarchical_match`] runs a base matcher level by level,
//! restricting deeper levels to the descendants of the target chosen for an
//! ancestor.
//!
//! Ties are always broken towards the lowest target index; category vector
//! sets and bag lists are kept in code order, so that is the lowest code.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{tokenize, CategoryVectorSet};
use crate::taxonomy::{CategoryCode, Scheme, Taxonomy};
use crate::{Error, Matrix, Result, Vector};

const BLOCK_ROWS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scorer {
    Cosine,
    Csls { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cosine,
    Csls,
    String,
    HierString,
    HierVector,
    HierCsls,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cosine => "cosine",
            Method::Csls => "csls",
            Method::String => "string",
            Method::HierString => "hier-string",
            Method::HierVector => "hier-vector",
            Method::HierCsls => "hier-csls",
        }
    }

    pub fn is_string(self) -> bool {
        matches!(self, Method::String | Method::HierString)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Method::HierString | Method::HierVector | Method::HierCsls)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cosine" => Method::Cosine,
            "csls" => Method::Csls,
            "string" => Method::String,
            "hier-string" => Method::HierString,
            "hier-vector" => Method::HierVector,
            "hier-csls" => Method::HierCsls,
            other => return Err(Error::Config(format!("unknown match method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchFlags {
    /// Constrained candidate set was empty; matched against the full level.
    pub fallback: bool,
    /// Score is zero: no evidence for the chosen target.
    pub low_confidence: bool,
}

impl fmt::Display for MatchFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.fallback, self.low_confidence) {
            (false, false) => f.write_str("-"),
            (true, false) => f.write_str("fallback"),
            (false, true) => f.write_str("low-confidence"),
            (true, true) => f.write_str("fallback,low-confidence"),
        }
    }
}

impl FromStr for MatchFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = MatchFlags::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "-") {
            match part {
                "fallback" => flags.fallback = true,
                "low-confidence" => flags.low_confidence = true,
                other => return Err(Error::InvalidArgument(format!("unknown flag {other:?}"))),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub source: CategoryCode,
    pub target: CategoryCode,
    pub score: f64,
    pub method: Method,
    pub flags: MatchFlags,
}

/// Matches plus the source categories that could not be matched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutput {
    pub records: Vec<MatchRecord>,
    pub skipped: Vec<CategoryCode>,
}

/// Descending score, then source code, then target code.
pub fn sort_records(records: &mut [MatchRecord]) {
    records.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.target.cmp(&b.target))
    });
}

pub fn records_to_tsv(records: &[MatchRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.source, r.target, r.score, r.method, r.flags
        ));
    }
    out
}

/// Parse `source<TAB>target<TAB>score<TAB>method<TAB>flags` lines.
pub fn parse_records(text: &str, origin: &str, source: Scheme, target: Scheme) -> Result<Vec<MatchRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(Error::parse(origin, lineno, "expected at least 4 tab-separated columns"));
        }
        let err = |e: Error| Error::parse(origin, lineno, e.to_string());
        let score: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad score {:?}", cols[2])))?;
        out.push(MatchRecord {
            source: CategoryCode::parse(cols[0], source).map_err(err)?,
            target: CategoryCode::parse(cols[1], target).map_err(err)?,
            score,
            method: cols[3].trim().parse().map_err(err)?,
            flags: cols.get(4).copied().unwrap_or("-").parse().map_err(err)?,
        });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>, source: Scheme, target: Scheme) -> Result<Vec<MatchRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string(), source, target)
}

// ---------------------------------------------------------------------------
// Neighborhoods and CSLS

/// The `k` nearest rows of the opposite space by cosine, and their mean cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub row: usize,
    pub neighbors: Vec<usize>,
    pub cosines: Vec<f64>,
    pub mean_cos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    /// For each source row, its neighborhood among target rows.
    pub source: Vec<Neighborhood>,
    /// For each target row, its neighborhood among source rows.
    pub target: Vec<Neighborhood>,
}

fn unit_rows(x: &Matrix) -> (Matrix, Vec<bool>) {
    let mut out = x.clone();
    let mut usable = Vec::with_capacity(x.nrows());
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 && n.is_finite() {
            row /= n;
            usable.push(true);
        } else {
            row.fill(0.0);
            usable.push(false);
        }
    }
    (out, usable)
}

/// Run `f(row, scores)` for every row of `a`, where `scores[j] = a_row · b_j`.
/// Rows are processed in fixed blocks; results come back in row order.
fn for_each_row<T, F>(a: &Matrix, b: &Matrix, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    let n = a.nrows();
    let bt = b.transpose();
    let blocks: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
    blocks
        .into_par_iter()
        .map(|start| {
            let len = BLOCK_ROWS.min(n - start);
            let prod = a.rows(start, len) * &bt;
            let mut row = vec![0.0; b.nrows()];
            (0..len)
                .map(|r| {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = prod[(r, j)];
                    }
                    f(start + r, &row)
                })
                .collect::<Vec<T>>()
        })
        .collect::<Vec<Vec<T>>>()
        .into_iter()
        .flatten()
        .collect()
}

fn top_k(row: usize, scores: &[f64], usable: &[bool], k: usize) -> Neighborhood {
    let mut cands: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| usable[*j])
        .map(|(j, &s)| (j, s))
        .collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let k = k.min(cands.len());
    if k == 0 {
        return Neighborhood {
            row,
            neighbors: Vec::new(),
            cosines: Vec::new(),
            mean_cos: 0.0,
        };
    }
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, by_rank);
        cands.truncate(k);
    }
    cands.sort_by(by_rank);
    let mean_cos = cands.iter().map(|c| c.1).sum::<f64>() / k as f64;
    Neighborhood {
        row,
        neighbors: cands.iter().map(|c| c.0).collect(),
        cosines: cands.iter().map(|c| c.1).collect(),
        mean_cos,
    }
}

/// Exact k-nearest-neighbor sets by cosine in both directions. Zero rows are
/// neither queried nor returned as neighbors (their neighborhood is empty).
pub fn build_neighborhoods(x: &Matrix, y: &Matrix, k: usize) -> Result<Neighborhoods> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!("{} vs {} columns", x.ncols(), y.ncols())));
    }
    let (xn, xu) = unit_rows(x);
    let (yn, yu) = unit_rows(y);
    let nx = xu.iter().filter(|&&u| u).count();
    let ny = yu.iter().filter(|&&u| u).count();
    if k == 0 || k > nx.min(ny) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range 1..={}",
            nx.min(ny)
        )));
    }
    let source = for_each_row(&xn, &yn, |i, s| {
        top_k(i, s, &yu, if xu[i] { k } else { 0 })
    });
    let target = for_each_row(&yn, &xn, |j, s| {
        top_k(j, s, &xu, if yu[j] { k } else { 0 })
    });
    Ok(Neighborhoods { source, target })
}

/// `2·cos(x, y) − mean_cos(x) − mean_cos(y)`.
pub fn csls_score(x: &Vector, y: &Vector, nx: &Neighborhood, ny: &Neighborhood) -> Result<f64> {
    let (a, b) = (x.norm(), y.norm());
    if a == 0.0 || b == 0.0 {
        return Err(Error::InvalidArgument("zero vector in CSLS".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} vs {}", x.len(), y.len())));
    }
    let cos = x.dot(y) / (a * b);
    Ok(2.0 * cos - nx.mean_cos - ny.mean_cos)
}

/// Scoring state over two row spaces: unit-normalized rows, usability masks,
/// and per-row CSLS penalties (zero for cosine).
///
/// For CSLS the neighborhood size is clamped to the number of usable rows of
/// the opposite space.
#[derive(Debug, Clone)]
pub struct Retrieval {
    xn: Matrix,
    yn: Matrix,
    x_usable: Vec<bool>,
    y_usable: Vec<bool>,
    x_penalty: Vec<f64>,
    y_penalty: Vec<f64>,
    scorer: Scorer,
}

impl Retrieval {
    pub fn new(x: &Matrix, y: &Matrix, scorer: Scorer) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Dimension(format!("{} vs {} columns", x.ncols(), y.ncols())));
        }
        let (xn, x_usable) = unit_rows(x);
        let (yn, y_usable) = unit_rows(y);
        let nx = x_usable.iter().filter(|&&u| u).count();
        let ny = y_usable.iter().filter(|&&u| u).count();
        if nx == 0 || ny == 0 {
            return Err(Error::Empty("no usable (nonzero) rows".into()));
        }
        let (x_penalty, y_penalty) = match scorer {
            Scorer::Cosine => (vec![0.0; xn.nrows()], vec![0.0; yn.nrows()]),
            Scorer::Csls { k } => {
                if k == 0 {
                    return Err(Error::InvalidArgument("CSLS k must be >= 1".into()));
                }
                let xp = for_each_row(&xn, &yn, |i, s| {
                    top_k(i, s, &y_usable, if x_usable[i] { k } else { 0 }).mean_cos
                });
                let yp = for_each_row(&yn, &xn, |j, s| {
                    top_k(j, s, &x_usable, if y_usable[j] { k } else { 0 }).mean_cos
                });
                (xp, yp)
            }
        };
        Ok(Retrieval {
            xn,
            yn,
            x_usable,
            y_usable,
            x_penalty,
            y_penalty,
            scorer,
        })
    }

    pub fn scorer(&self) -> Scorer {
        self.scorer
    }

    pub fn source_usable(&self, i: usize) -> bool {
        self.x_usable[i]
    }

    pub fn target_usable(&self, j: usize) -> bool {
        self.y_usable[j]
    }

    pub fn source_penalty(&self, i: usize) -> f64 {
        self.x_penalty[i]
    }

    pub fn target_penalty(&self, j: usize) -> f64 {
        self.y_penalty[j]
    }

    fn combine(&self, cos: f64, i: usize, j: usize) -> f64 {
        match self.scorer {
            Scorer::Cosine => cos,
            Scorer::Csls { .. } => 2.0 * cos - self.x_penalty[i] - self.y_penalty[j],
        }
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        let cos = self.xn.row(i).dot(&self.yn.row(j));
        self.combine(cos, i, j)
    }

    /// Best usable candidate for source `i`; `candidates` must be ascending.
    pub fn best_among(&self, i: usize, candidates: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &j in candidates {
            if !self.y_usable[j] {
                continue;
            }
            let s = self.score(i, j);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        best
    }

    /// Forward argmax for every source row (`None` for unusable rows).
    pub fn forward(&self) -> Vec<Option<(usize, f64)>> {
        for_each_row(&self.xn, &self.yn, |i, cos| {
            if !self.x_usable[i] {
                return None;
            }
            argmax(cos, &self.y_usable, |j, c| self.combine(c, i, j))
        })
    }

    /// Argmax over source rows for every target row.
    pub fn backward(&self) -> Vec<Option<(usize, f64)>> {
        for_each_row(&self.yn, &self.xn, |j, cos| {
            if !self.y_usable[j] {
                return None;
            }
            argmax(cos, &self.x_usable, |i, c| self.combine(c, i, j))
        })
    }
}

fn argmax(cos: &[f64], usable: &[bool], score: impl Fn(usize, f64) -> f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &c) in cos.iter().enumerate() {
        if !usable[j] {
            continue;
        }
        let s = score(j, c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best
}

/// Map sources by `w` (row form `X·Wᵀ`) and pair each usable source category
/// with its best target. Records are sorted by descending score; masked
/// source rows are reported in `skipped`.
pub fn match_vectors(
    xs: &CategoryVectorSet,
    yt: &CategoryVectorSet,
    w: &Matrix,
    scorer: Scorer,
) -> Result<MatchOutput> {
    if w.shape() != (xs.dim(), yt.dim()) {
        return Err(Error::Dimension(format!(
            "mapping is {:?}, spaces are {} and {}",
            w.shape(),
            xs.dim(),
            yt.dim()
        )));
    }
    let mapped = masked(&(&xs.matrix * w.transpose()), &xs.mask);
    let target = masked(&yt.matrix, &yt.mask);
    let retrieval = Retrieval::new(&mapped, &target, scorer)?;
    let method = match scorer {
        Scorer::Cosine => Method::Cosine,
        Scorer::Csls { .. } => Method::Csls,
    };
    let mut out = MatchOutput::default();
    for (i, best) in retrieval.forward().into_iter().enumerate() {
        match best {
            Some((j, score)) => out.records.push(MatchRecord {
                source: xs.codes[i].clone(),
                target: yt.codes[j].clone(),
                score,
                method,
                flags: MatchFlags::default(),
            }),
            None => out.skipped.push(xs.codes[i].clone()),
        }
    }
    sort_records(&mut out.records);
    Ok(out)
}

/// Zero the rows whose mask entry is false.
pub(crate) fn masked(x: &Matrix, mask: &[bool]) -> Matrix {
    let mut out = x.clone();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Bags of words

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBag {
    pub code: CategoryCode,
    pub tokens: BTreeSet<String>,
}

impl TokenBag {
    pub fn new(code: CategoryCode, text: &str) -> Self {
        TokenBag {
            code,
            tokens: tokenize(text).into_iter().collect(),
        }
    }
}

/// One bag per category, in code order.
pub fn bags_from_taxonomy(t: &Taxonomy) -> Vec<TokenBag> {
    t.iter()
        .map(|c| TokenBag::new(c.code.clone(), &c.description))
        .collect()
}

fn overlap_score(inter: usize, a: usize, b: usize) -> f64 {
    if a == 0 || b == 0 {
        return 0.0;
    }
    let inter = inter as f64;
    inter / (2.0 * a as f64) + inter / (2.0 * b as f64)
}

/// Size-normalized overlap `|A∩B|/(2|A|) + |A∩B|/(2|B|)`, zero when either
/// bag is empty.
pub fn string_sim(a: &TokenBag, b: &TokenBag) -> f64 {
    let inter = a.tokens.intersection(&b.tokens).count();
    overlap_score(inter, a.tokens.len(), b.tokens.len())
}

/// Interned bags with an inverted index over the target side.
struct BagIndex {
    src: Vec<Vec<u32>>,
    tgt_len: Vec<usize>,
    postings: Vec<Vec<u32>>,
}

impl BagIndex {
    fn new<'a>(src: &'a [TokenBag], tgt: &'a [TokenBag]) -> Self {
        let mut ids: HashMap<&str, u32> = HashMap::new();
        let mut intern = |bag: &'a TokenBag| -> Vec<u32> {
            bag.tokens
                .iter()
                .map(|t| {
                    let n = ids.len() as u32;
                    *ids.entry(t.as_str()).or_insert(n)
                })
                .collect()
        };
        let tgt_ids: Vec<Vec<u32>> = tgt.iter().map(&mut intern).collect();
        let src_ids = src.iter().map(&mut intern).collect();
        let mut postings = vec![Vec::new(); ids.len()];
        for (j, toks) in tgt_ids.iter().enumerate() {
            for &t in toks {
                postings[t as usize].push(j as u32);
            }
        }
        BagIndex {
            src: src_ids,
            tgt_len: tgt.iter().map(|b| b.tokens.len()).collect(),
            postings,
        }
    }

    /// Best target for source `i`: `(index, score)`; zero-overlap sources get
    /// the first target with score 0.
    fn best(&self, i: usize) -> (usize, f64) {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for &t in &self.src[i] {
            for &j in &self.postings[t as usize] {
                *counts.entry(j).or_default() += 1;
            }
        }
        let a = self.src[i].len();
        let mut best = (0usize, 0.0f64);
        let mut hits: Vec<(u32, usize)> = counts.into_iter().collect();
        hits.sort_unstable();
        for (j, inter) in hits {
            let s = overlap_score(inter, a, self.tgt_len[j as usize]);
            if s > best.1 {
                best = (j as usize, s);
            }
        }
        best
    }
}

/// Pair every source bag with its most similar target bag.
pub fn match_strings(src: &[TokenBag], tgt: &[TokenBag]) -> Result<Vec<MatchRecord>> {
    if src.is_empty() {
        return Err(Error::Empty("no source categories".into()));
    }
    if tgt.is_empty() {
        return Err(Error::Empty("no target categories".into()));
    }
    let mut tgt_sorted: Vec<&TokenBag> = tgt.iter().collect();
    tgt_sorted.sort_by(|a, b| a.code.cmp(&b.code));
    let tgt_owned: Vec<TokenBag> = tgt_sorted.into_iter().cloned().collect();
    let index = BagIndex::new(src, &tgt_owned);
    let mut records: Vec<MatchRecord> = (0..src.len())
        .into_par_iter()
        .map(|i| {
            let (j, score) = index.best(i);
            MatchRecord {
                source: src[i].code.clone(),
                target: tgt_owned[j].code.clone(),
                score,
                method: Method::String,
                flags: MatchFlags {
                    fallback: false,
                    low_confidence: score == 0.0,
                },
            }
        })
        .collect();
    sort_records(&mut records);
    Ok(records)
}

// ---------------------------------------------------------------------------
// Hierarchy-constrained matching

/// A scorer that picks the best target category among a candidate list.
pub trait BaseMatcher: Sync {
    /// Method tag for records produced under the hierarchy constraint.
    fn method(&self) -> Method;

    /// Whether the source category can be matched at all.
    fn accepts(&self, source: &CategoryCode) -> bool;

    /// Best candidate as `(position in candidates, score)`, or `None` if no
    /// candidate is usable. Candidates are in code order; ties go to the
    /// earliest.
    fn best(&self, source: &CategoryCode, candidates: &[&CategoryCode]) -> Option<(usize, f64)>;
}

/// Bag-of-words base matcher.
pub struct StringBase {
    src: HashMap<CategoryCode, BTreeSet<String>>,
    tgt: HashMap<CategoryCode, BTreeSet<String>>,
}

impl StringBase {
    pub fn new(src: &[TokenBag], tgt: &[TokenBag]) -> Self {
        let map = |bags: &[TokenBag]| bags.iter().map(|b| (b.code.clone(), b.tokens.clone())).collect();
        StringBase {
            src: map(src),
            tgt: map(tgt),
        }
    }

    pub fn from_taxonomies(src: &Taxonomy, tgt: &Taxonomy) -> Self {
        Self::new(&bags_from_taxonomy(src), &bags_from_taxonomy(tgt))
    }
}

impl BaseMatcher for StringBase {
    fn method(&self) -> Method {
        Method::HierString
    }

    fn accepts(&self, source: &CategoryCode) -> bool {
        self.src.contains_key(source)
    }

    fn best(&self, source: &CategoryCode, candidates: &[&CategoryCode]) -> Option<(usize, f64)> {
        let a = self.src.get(source)?;
        let mut best: Option<(usize, f64)> = None;
        for (pos, code) in candidates.iter().enumerate() {
            let Some(b) = self.tgt.get(*code) else { continue };
            let s = overlap_score(a.intersection(b).count(), a.len(), b.len());
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((pos, s));
            }
        }
        best
    }
}

/// Cosine or CSLS base matcher over mapped category vectors. CSLS
/// neighborhoods are computed once over the full spaces.
pub struct VectorBase {
    retrieval: Retrieval,
    src_rows: HashMap<CategoryCode, usize>,
    tgt_rows: HashMap<CategoryCode, usize>,
}

impl VectorBase {
    pub fn new(xs: &CategoryVectorSet, yt: &CategoryVectorSet, w: &Matrix, scorer: Scorer) -> Result<Self> {
        if w.shape() != (xs.dim(), yt.dim()) {
            return Err(Error::Dimension(format!("mapping is {:?}", w.shape())));
        }
        let mapped = masked(&(&xs.matrix * w.transpose()), &xs.mask);
        let target = masked(&yt.matrix, &yt.mask);
        let retrieval = Retrieval::new(&mapped, &target, scorer)?;
        let rows = |codes: &[CategoryCode]| codes.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        Ok(VectorBase {
            retrieval,
            src_rows: rows(&xs.codes),
            tgt_rows: rows(&yt.codes),
        })
    }
}

impl BaseMatcher for VectorBase {
    fn method(&self) -> Method {
        match self.retrieval.scorer() {
            Scorer::Cosine => Method::HierVector,
            Scorer::Csls { .. } => Method::HierCsls,
        }
    }

    fn accepts(&self, source: &CategoryCode) -> bool {
        self.src_rows
            .get(source)
            .is_some_and(|&i| self.retrieval.source_usable(i))
    }

    fn best(&self, source: &CategoryCode, candidates: &[&CategoryCode]) -> Option<(usize, f64)> {
        let i = *self.src_rows.get(source)?;
        if !self.retrieval.source_usable(i) {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (pos, code) in candidates.iter().enumerate() {
            let Some(&j) = self.tgt_rows.get(*code) else { continue };
            if !self.retrieval.target_usable(j) {
                continue;
            }
            let s = self.retrieval.score(i, j);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((pos, s));
            }
        }
        best
    }
}

/// Level-by-level matching.
///
/// Source categories at level ℓ are matched against target categories at
/// level `min(ℓ, target depth)`. The candidates are the descendants of the
/// target chosen for the nearest source ancestor whose chosen target sits
/// above that level; level-1 categories (and categories with no matched
/// ancestor) see the whole level. An empty constrained set falls back to the
/// whole level and the record is flagged.
///
/// `bases[ℓ-1]` is the matcher for source level ℓ; the last entry covers all
/// deeper levels.
pub fn hierarchical_match(
    src: &Taxonomy,
    tgt: &Taxonomy,
    bases: &[&dyn BaseMatcher],
) -> Result<MatchOutput> {
    if bases.is_empty() {
        return Err(Error::InvalidArgument("no base matcher".into()));
    }
    if src.is_empty() {
        return Err(Error::Empty("source taxonomy has no categories".into()));
    }
    if tgt.is_empty() {
        return Err(Error::Empty("target taxonomy has no categories".into()));
    }
    let tgt_levels: Vec<Vec<&CategoryCode>> = (1..=tgt.max_depth())
        .map(|l| Ok(tgt.level_slice(l)?.into_iter().map(|c| &c.code).collect()))
        .collect::<Result<_>>()?;

    let mut chosen: HashMap<CategoryCode, CategoryCode> = HashMap::new();
    let mut out = MatchOutput::default();
    for level in 1..=src.max_depth() {
        let base = bases[(level - 1).min(bases.len() - 1)];
        let tgt_level = level.min(tgt.max_depth());
        let full = &tgt_levels[tgt_level - 1];
        let sources = src.level_slice(level)?;
        let results: Vec<Option<MatchRecord>> = sources
            .par_iter()
            .map(|cat| {
                if !base.accepts(&cat.code) {
                    return None;
                }
                let anchor = anchor_target(src, &chosen, &cat.code, tgt_level);
                let mut flags = MatchFlags::default();
                let constrained: Vec<&CategoryCode> = match anchor {
                    Some(a) => tgt
                        .descendants(a)
                        .filter(|c| c.code.level() == tgt_level)
                        .map(|c| &c.code)
                        .collect(),
                    None => full.clone(),
                };
                let mut pick = base
                    .best(&cat.code, &constrained)
                    .map(|(p, s)| (constrained[p], s));
                if pick.is_none() && anchor.is_some() {
                    flags.fallback = true;
                    pick = base.best(&cat.code, full).map(|(p, s)| (full[p], s));
                }
                let (target, score) = pick?;
                flags.low_confidence = base.method().is_string() && score == 0.0;
                Some(MatchRecord {
                    source: cat.code.clone(),
                    target: target.clone(),
                    score,
                    method: base.method(),
                    flags,
                })
            })
            .collect();
        for (cat, rec) in sources.iter().zip(results) {
            match rec {
                Some(r) => {
                    chosen.insert(r.source.clone(), r.target.clone());
                    out.records.push(r);
                }
                None => out.skipped.push(cat.code.clone()),
            }
        }
    }
    sort_records(&mut out.records);
    Ok(out)
}

/// Target chosen for the nearest source ancestor of `code` whose target lies
/// above `tgt_level`.
pub fn anchor_target<'a>(
    src: &Taxonomy,
    chosen: &'a HashMap<CategoryCode, CategoryCode>,
    code: &CategoryCode,
    tgt_level: usize,
) -> Option<&'a CategoryCode> {
    let mut parent = src.get(code).and_then(|c| c.parent.clone());
    while let Some(p) = parent {
        if let Some(t) = chosen.get(&p) {
            if t.level() < tgt_level {
                return Some(t);
            }
        }
        parent = src.get(&p).and_then(|c| c.parent.clone());
    }
    None
}
