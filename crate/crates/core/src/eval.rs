//! Annotation-based evaluation: top-n selection for annotation, early
//! screening, accuracy, and Fisher's exact test for comparing two methods.
//!
//! Labels come from human assessors; nothing here labels matches itself.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::matching::{sort_records, MatchRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Partial,
    Wrong,
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(Label::Correct),
            "partial" => Ok(Label::Partial),
            "false" => Ok(Label::Wrong),
            other => Err(Error::InvalidArgument(format!(
                "label {other:?} is not one of true, partial, false"
            ))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Correct => "true",
            Label::Partial => "partial",
            Label::Wrong => "false",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub source: String,
    pub target: String,
    pub label: Label,
    pub method: String,
}

/// Parse `source_code<TAB>target_code<TAB>label` lines, in rank order.
pub fn parse_annotations(text: &str, origin: &str, method: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::parse(origin, lineno, "expected source<TAB>target<TAB>label"));
        }
        let label = cols[2]
            .parse()
            .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
        out.push(AnnotationRecord {
            source: cols[0].trim().to_string(),
            target: cols[1].trim().to_string(),
            label,
            method: method.to_string(),
        });
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>, method: &str) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string(), method)
}

/// Counts and accuracy for one method. Partial matches count as wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub correct: usize,
    pub partial: usize,
    pub wrong: usize,
    pub n_annotated: usize,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn from_counts(method: &str, correct: usize, partial: usize, wrong: usize) -> Result<Self> {
        let n = correct + partial + wrong;
        if n == 0 {
            return Err(Error::Empty("no annotations".into()));
        }
        Ok(EvalReport {
            method: method.to_string(),
            correct,
            partial,
            wrong,
            n_annotated: n,
            accuracy: correct as f64 / n as f64,
        })
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.accuracy
    }

    pub fn summary_tsv_header() -> &'static str {
        "method\tcorrect\tpartial\twrong\tn\taccuracy"
    }

    pub fn summary_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.method, self.correct, self.partial, self.wrong, self.n_annotated, self.accuracy
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} correct, {} partial, {} wrong of {} -> accuracy {:.1}% (partial counted as wrong)",
            self.method,
            self.correct,
            self.partial,
            self.wrong,
            self.n_annotated,
            self.percent()
        )
    }
}

pub fn accuracy(annotations: &[AnnotationRecord]) -> Result<EvalReport> {
    let mut counts = [0usize; 3];
    for a in annotations {
        counts[match a.label {
            Label::Correct => 0,
            Label::Partial => 1,
            Label::Wrong => 2,
        }] += 1;
    }
    let method = annotations.first().map(|a| a.method.as_str()).unwrap_or("");
    EvalReport::from_counts(method, counts[0], counts[1], counts[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum TopN {
    /// `ceil(fraction · n)` records, fraction in (0, 1].
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub records: Vec<MatchRecord>,
    /// A count policy asked for more records than exist.
    pub short_input: bool,
}

/// Highest-scoring records by policy; equal scores are ordered by codes.
pub fn select_topn(matches: &[MatchRecord], policy: TopN) -> Result<Selection> {
    if matches.is_empty() {
        return Err(Error::Empty("no match records".into()));
    }
    let n = matches.len();
    let (take, short_input) = match policy {
        TopN::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {f}")));
            }
            // 0.05 · 4620 must give 231, not 232
            let want = (f * n as f64 - 1e-9).ceil().max(1.0) as usize;
            (want.min(n), false)
        }
        TopN::Count(c) => {
            if c == 0 {
                return Err(Error::InvalidArgument("count must be >= 1".into()));
            }
            (c.min(n), c > n)
        }
    };
    let mut records = matches.to_vec();
    sort_records(&mut records);
    records.truncate(take);
    Ok(Selection {
        records,
        short_input,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOutcome {
    pub dropped: bool,
    /// Number of annotations the decision was based on.
    pub window: usize,
    pub accuracy: f64,
}

/// Drop a method when accuracy over its first `k` annotations (fewer if
/// fewer exist) is below `threshold`.
pub fn screen_first_k(annotations: &[AnnotationRecord], k: usize, threshold: f64) -> Result<ScreenOutcome> {
    if annotations.is_empty() {
        return Err(Error::Empty("no annotations".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("screening window must be >= 1".into()));
    }
    let window = k.min(annotations.len());
    let report = accuracy(&annotations[..window])?;
    Ok(ScreenOutcome {
        dropped: report.accuracy < threshold,
        window,
        accuracy: report.accuracy,
    })
}

/// 2×2 counts: rows are methods A and B, columns are correct / not correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    cells: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn new(cells: [[u64; 2]; 2]) -> Result<Self> {
        if cells.iter().flatten().all(|&c| c == 0) {
            return Err(Error::InvalidArgument("contingency table is all zero".into()));
        }
        Ok(ContingencyTable { cells })
    }

    /// Correct vs. not correct (partial and wrong merged) for two methods.
    pub fn from_reports(a: &EvalReport, b: &EvalReport) -> Result<Self> {
        Self::new([
            [a.correct as u64, (a.n_annotated - a.correct) as u64],
            [b.correct as u64, (b.n_annotated - b.correct) as u64],
        ])
    }

    pub fn cells(&self) -> [[u64; 2]; 2] {
        self.cells
    }

    pub fn transposed(&self) -> Self {
        let [[a, b], [c, d]] = self.cells;
        ContingencyTable { cells: [[a, c], [b, d]] }
    }

    pub fn swapped_rows(&self) -> Self {
        let [r0, r1] = self.cells;
        ContingencyTable { cells: [r1, r0] }
    }

    pub fn swapped_columns(&self) -> Self {
        let [[a, b], [c, d]] = self.cells;
        ContingencyTable { cells: [[b, a], [d, c]] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    /// Two-sided p-value.
    pub p: f64,
    /// A margin was zero; `p` is 1 by convention.
    pub degenerate: bool,
}

/// Relative slack when comparing a table's probability with the observed one.
pub const FISHER_SLACK: f64 = 1e-12;

/// Two-sided Fisher's exact test by the point-probability rule: sum the
/// hypergeometric probabilities of every table with the observed margins
/// whose probability does not exceed the observed table's.
///
/// Log-probabilities are accumulated from the observed table with the exact
/// ratio `P(a+1)/P(a) = (r1−a)(c1−a) / ((a+1)(r2−c1+a+1))`, which keeps ties
/// between equally likely tables within [`FISHER_SLACK`].
pub fn fisher_exact(t: &ContingencyTable) -> FisherResult {
    let [[a, b], [c, d]] = t.cells;
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let c2 = b + d;
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return FisherResult {
            p: 1.0,
            degenerate: true,
        };
    }
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let len = (hi - lo + 1) as usize;
    // log P(x) − log P(observed) for x in lo..=hi
    let mut rel = vec![0.0f64; len];
    let obs = (a - lo) as usize;
    let step_up = |x: u64| -> f64 {
        let num = ((r1 - x) as f64) * ((c1 - x) as f64);
        let den = ((x + 1) as f64) * ((r2 + x + 1 - c1) as f64);
        (num / den).ln()
    };
    for idx in obs + 1..len {
        let x = lo + idx as u64 - 1;
        rel[idx] = rel[idx - 1] + step_up(x);
    }
    for idx in (0..obs).rev() {
        let x = lo + idx as u64;
        rel[idx] = rel[idx + 1] - step_up(x);
    }
    let top = rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = FISHER_SLACK.ln_1p();
    let mut total = 0.0;
    let mut tail = 0.0;
    for &r in &rel {
        let w = (r - top).exp();
        total += w;
        if r <= cutoff {
            tail += w;
        }
    }
    FisherResult {
        p: (tail / total).clamp(f64::MIN_POSITIVE, 1.0),
        degenerate: false,
    }
}

/// Fraction of `predicted` pairs that agree with `truth` (source → target).
/// Sources without a truth entry are ignored.
pub fn precision_at_1<K: Eq + std::hash::Hash>(predicted: &[(K, K)], truth: &HashMap<K, K>) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (s, t) in predicted {
        if let Some(expected) = truth.get(s) {
            total += 1;
            if expected == t {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{MatchFlags, Method};
    use crate::taxonomy::{CategoryCode, Scheme};

    fn ann(labels: &[Label]) -> Vec<AnnotationRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| AnnotationRecord {
                source: format!("{i}"),
                target: "1".into(),
                label,
                method: "m".into(),
            })
            .collect()
    }

    fn records(n: usize) -> Vec<MatchRecord> {
        (0..n)
            .map(|i| MatchRecord {
                source: CategoryCode::parse(&format!("{i}"), Scheme::Dotted).unwrap(),
                target: CategoryCode::parse("1", Scheme::Dotted).unwrap(),
                score: (i % 17) as f64,
                method: Method::Cosine,
                flags: MatchFlags::default(),
            })
            .collect()
    }

    #[test]
    fn labels_parse() {
        assert_eq!("True".parse::<Label>().unwrap(), Label::Correct);
        assert_eq!("partial".parse::<Label>().unwrap(), Label::Partial);
        assert_eq!("false".parse::<Label>().unwrap(), Label::Wrong);
        assert!("maybe".parse::<Label>().is_err());
        let err = parse_annotations("1\t2\ttrue\n1\t2\tnope\n", "a", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn accuracy_counts_partial_as_wrong() {
        let r = accuracy(&ann(&[Label::Correct, Label::Partial, Label::Wrong, Label::Correct])).unwrap();
        assert_eq!((r.correct, r.partial, r.wrong, r.n_annotated), (2, 1, 1, 4));
        assert_eq!(r.accuracy, 0.5);
        assert!(accuracy(&[]).is_err());
        let r = EvalReport::from_counts("x", 0, 0, 50).unwrap();
        assert_eq!(r.percent(), 0.0);
    }

    #[test]
    fn topn_fraction_and_count() {
        let recs = records(4620);
        let sel = select_topn(&recs, TopN::Fraction(0.05)).unwrap();
        assert_eq!(sel.records.len(), 231);
        let sel = select_topn(&records(40), TopN::Count(50)).unwrap();
        assert_eq!(sel.records.len(), 40);
        assert!(sel.short_input);
        assert!(select_topn(&recs, TopN::Fraction(0.0)).is_err());
        assert!(select_topn(&recs, TopN::Fraction(1.5)).is_err());
        assert!(select_topn(&[], TopN::Count(3)).is_err());
    }

    #[test]
    fn topn_is_idempotent_and_sorted() {
        let recs = records(100);
        let once = select_topn(&recs, TopN::Count(30)).unwrap().records;
        let twice = select_topn(&once, TopN::Count(30)).unwrap().records;
        assert_eq!(once, twice);
        assert!(once.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn screening() {
        let all_wrong = ann(&[Label::Wrong; 50]);
        assert!(screen_first_k(&all_wrong, 50, 0.01).unwrap().dropped);
        let mut one = ann(&[Label::Wrong; 50]);
        one[10].label = Label::Correct;
        let s = screen_first_k(&one, 50, 0.01).unwrap();
        assert!(!s.dropped);
        assert_eq!(s.accuracy, 0.02);
        let short = screen_first_k(&ann(&[Label::Wrong; 30]), 50, 0.01).unwrap();
        assert!(short.dropped);
        assert_eq!(short.window, 30);
        assert!(screen_first_k(&[], 50, 0.01).is_err());
        // only the first k count
        let mut late = ann(&[Label::Wrong; 60]);
        late[55].label = Label::Correct;
        assert!(screen_first_k(&late, 50, 0.01).unwrap().dropped);
    }

    #[test]
    fn fisher_simple_cases() {
        let t = ContingencyTable::new([[10, 10], [10, 10]]).unwrap();
        let r = fisher_exact(&t);
        assert!((r.p - 1.0).abs() < 1e-12);
        // classic tea-tasting table: p = 34/70 two-sided for [[3,1],[1,3]]
        let t = ContingencyTable::new([[3, 1], [1, 3]]).unwrap();
        assert!((fisher_exact(&t).p - 34.0 / 70.0).abs() < 1e-14);
        let t = ContingencyTable::new([[0, 5], [0, 3]]).unwrap();
        let r = fisher_exact(&t);
        assert!(r.degenerate && r.p == 1.0);
        assert!(ContingencyTable::new([[0, 0], [0, 0]]).is_err());
    }

    #[test]
    fn fisher_from_reports() {
        let a = EvalReport::from_counts("a", 48, 40, 143).unwrap();
        let b = EvalReport::from_counts("b", 126, 31, 74).unwrap();
        let t = ContingencyTable::from_reports(&a, &b).unwrap();
        assert_eq!(t.cells(), [[48, 183], [126, 105]]);
        assert!(fisher_exact(&t).p < 1e-3);
    }

    #[test]
    fn precision_counts_only_known_sources() {
        let truth = HashMap::from([(1, 1), (2, 2)]);
        assert_eq!(precision_at_1(&[(1, 1), (2, 3), (9, 9)], &truth), 0.5);
    }
}
