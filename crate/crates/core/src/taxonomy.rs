//! Hierarchical classification schemes.
//!
//! Two code shapes are supported: dotted multi-level codes (`01.11.11.112`)
//! and class-item codes (`620-80`, or a bare class `620`). A category's parent
//! is the nearest ancestor code present in the same file.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Any number of `.`-separated numeric segments.
    Dotted,
    /// A numeric class optionally followed by `-item`.
    ClassItem,
}

impl Scheme {
    pub fn separator(self) -> char {
        match self {
            Scheme::Dotted => '.',
            Scheme::ClassItem => '-',
        }
    }

    fn max_segments(self) -> Option<usize> {
        match self {
            Scheme::Dotted => None,
            Scheme::ClassItem => Some(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dotted => "dotted",
            Scheme::ClassItem => "class-item",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dotted" => Ok(Scheme::Dotted),
            "class-item" => Ok(Scheme::ClassItem),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected dotted or class-item)"
            ))),
        }
    }
}

/// A parsed category code. Ordering is segment-wise numeric, so `95` sorts
/// before `620` and `01` before `01.11`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CategoryCode {
    scheme: Scheme,
    segments: Vec<String>,
    raw: String,
}

impl CategoryCode {
    pub fn parse(raw: &str, scheme: Scheme) -> Result<Self> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(Error::Code {
                raw: raw.to_string(),
                reason: "empty code".into(),
            });
        }
        let segments: Vec<String> = trimmed
            .split(scheme.separator())
            .map(str::to_string)
            .collect();
        for (pos, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::Code {
                    raw: raw.to_string(),
                    reason: format!("empty segment at position {}", pos + 1),
                });
            }
            if !seg.chars().all(|c| c.is_ascii_digit()) {
                return Err(Error::Code {
                    raw: raw.to_string(),
                    reason: format!("non-numeric segment {seg:?} at position {}", pos + 1),
                });
            }
        }
        if let Some(max) = scheme.max_segments() {
            if segments.len() > max {
                return Err(Error::Code {
                    raw: raw.to_string(),
                    reason: format!(
                        "{} segments at position {}, {scheme} codes have at most {max}",
                        segments.len(),
                        max + 1
                    ),
                });
            }
        }
        Ok(CategoryCode {
            scheme,
            segments,
            raw: trimmed.to_string(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn level(&self) -> usize {
        self.segments.len()
    }

    /// Code made of the first `level` segments.
    pub fn truncated(&self, level: usize) -> CategoryCode {
        let segments = self.segments[..level.min(self.segments.len())].to_vec();
        let raw = segments.join(&self.scheme.separator().to_string());
        CategoryCode {
            scheme: self.scheme,
            segments,
            raw,
        }
    }

    /// Strict-prefix test without a scheme check.
    pub fn is_prefix_of(&self, other: &CategoryCode) -> bool {
        self.segments.len() < other.segments.len()
            && other.segments[..self.segments.len()] == self.segments[..]
    }
}

fn segment_key(s: &str) -> (usize, &str, usize) {
    let stripped = s.trim_start_matches('0');
    (stripped.len(), stripped, s.len())
}

impl Ord for CategoryCode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.scheme.cmp(&other.scheme).then_with(|| {
            for (a, b) in self.segments.iter().zip(&other.segments) {
                match segment_key(a).cmp(&segment_key(b)) {
                    Ordering::Equal => {}
                    ord => return ord,
                }
            }
            self.segments.len().cmp(&other.segments.len())
        })
    }
}

impl PartialOrd for CategoryCode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CategoryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// True iff `a` is a strict prefix of `b`.
pub fn is_ancestor(a: &CategoryCode, b: &CategoryCode) -> Result<bool> {
    if a.scheme != b.scheme {
        return Err(Error::SchemeMismatch(
            a.scheme.to_string(),
            b.scheme.to_string(),
        ));
    }
    Ok(a.is_prefix_of(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub code: CategoryCode,
    pub description: String,
    pub parent: Option<CategoryCode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrphanPolicy {
    /// Attach to the nearest existing ancestor, or make the category a root.
    #[default]
    NearestAncestor,
    /// Require the immediate parent code to be present.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub scheme: Scheme,
    pub delimiter: char,
    pub header: bool,
    pub orphans: OrphanPolicy,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            scheme: Scheme::Dotted,
            delimiter: '\t',
            header: false,
            orphans: OrphanPolicy::NearestAncestor,
        }
    }
}

impl FormatConfig {
    pub fn new(scheme: Scheme) -> Self {
        FormatConfig {
            scheme,
            ..Default::default()
        }
    }
}

/// An immutable, indexed classification scheme.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    scheme: Scheme,
    categories: BTreeMap<CategoryCode, Category>,
    children: BTreeMap<CategoryCode, Vec<CategoryCode>>,
    by_raw: HashMap<String, CategoryCode>,
    max_depth: usize,
}

impl Taxonomy {
    /// Build from `(code, description)` entries, inferring parents.
    pub fn from_entries<I>(scheme: Scheme, entries: I, orphans: OrphanPolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (CategoryCode, String)>,
    {
        let mut descriptions: BTreeMap<CategoryCode, String> = BTreeMap::new();
        for (code, description) in entries {
            if code.scheme != scheme {
                return Err(Error::SchemeMismatch(
                    scheme.to_string(),
                    code.scheme.to_string(),
                ));
            }
            if descriptions.contains_key(&code) {
                return Err(Error::DuplicateCode(code.raw));
            }
            descriptions.insert(code, description);
        }

        let mut categories = BTreeMap::new();
        let mut children: BTreeMap<CategoryCode, Vec<CategoryCode>> = BTreeMap::new();
        let mut max_depth = 0;
        for (code, description) in &descriptions {
            let parent = (1..code.level())
                .rev()
                .map(|l| code.truncated(l))
                .find(|p| descriptions.contains_key(p));
            if orphans == OrphanPolicy::Strict && code.level() > 1 {
                let expected = code.truncated(code.level() - 1);
                if parent.as_ref() != Some(&expected) {
                    return Err(Error::MissingAncestor {
                        code: code.raw.clone(),
                        missing: expected.raw,
                    });
                }
            }
            if let Some(p) = &parent {
                children.entry(p.clone()).or_default().push(code.clone());
            }
            max_depth = max_depth.max(code.level());
            categories.insert(
                code.clone(),
                Category {
                    code: code.clone(),
                    description: description.clone(),
                    parent,
                },
            );
        }
        let by_raw = categories
            .keys()
            .map(|c| (c.raw.clone(), c.clone()))
            .collect();
        Ok(Taxonomy {
            scheme,
            categories,
            children,
            by_raw,
            max_depth,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn get(&self, code: &CategoryCode) -> Option<&Category> {
        self.categories.get(code)
    }

    pub fn lookup(&self, raw: &str) -> Option<&Category> {
        self.by_raw
            .get(raw.trim())
            .and_then(|c| self.categories.get(c))
    }

    /// Categories in code order.
    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.values()
    }

    pub fn codes(&self) -> impl Iterator<Item = &CategoryCode> {
        self.categories.keys()
    }

    pub fn children(&self, code: &CategoryCode) -> &[CategoryCode] {
        self.children.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn roots(&self) -> impl Iterator<Item = &Category> {
        self.iter().filter(|c| c.parent.is_none())
    }

    /// All categories with exactly `level` segments, in code order.
    pub fn level_slice(&self, level: usize) -> Result<Vec<&Category>> {
        if level == 0 || level > self.max_depth {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.max_depth,
            });
        }
        Ok(self.iter().filter(|c| c.code.level() == level).collect())
    }

    /// Category counts for levels `1..=max_depth`.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_depth];
        for code in self.codes() {
            counts[code.level() - 1] += 1;
        }
        counts
    }

    /// Strict descendants of `code` present in the taxonomy, in code order.
    pub fn descendants<'a>(&'a self, code: &'a CategoryCode) -> impl Iterator<Item = &'a Category> {
        self.categories
            .range(code.clone()..)
            .skip(1)
            .take_while(move |(c, _)| code.is_prefix_of(c))
            .map(|(_, cat)| cat)
    }

    /// Copy with descriptions replaced where `translations` has an entry.
    /// Returns the codes in `translations` that are not in the taxonomy.
    pub fn with_translations(&self, translations: &HashMap<String, String>) -> (Taxonomy, Vec<String>) {
        let mut out = self.clone();
        for cat in out.categories.values_mut() {
            if let Some(text) = translations.get(cat.code.as_str()) {
                cat.description = text.clone();
            }
        }
        let mut unknown: Vec<String> = translations
            .keys()
            .filter(|k| !self.by_raw.contains_key(k.as_str()))
            .cloned()
            .collect();
        unknown.sort();
        (out, unknown)
    }

    /// Serialize as `code<TAB>description` lines in code order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for cat in self.iter() {
            out.push_str(cat.code.as_str());
            out.push('\t');
            out.push_str(&cat.description);
            out.push('\n');
        }
        out
    }
}

/// Read `(code, text)` rows from a delimited file: `#` comments and blank
/// lines are skipped, the first data row is skipped when `header` is set.
pub(crate) fn read_code_rows<R: Read>(
    reader: R,
    origin: &str,
    delimiter: char,
    header: bool,
) -> Result<Vec<(usize, String, String)>> {
    let mut rows = Vec::new();
    let mut header_pending = header;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let Some((code, text)) = line.split_once(delimiter) else {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected code{delimiter:?}description"),
            ));
        };
        rows.push((lineno, code.to_string(), text.trim().to_string()));
    }
    Ok(rows)
}

pub fn parse_taxonomy<R: Read>(reader: R, origin: &str, cfg: &FormatConfig) -> Result<Taxonomy> {
    let rows = read_code_rows(reader, origin, cfg.delimiter, cfg.header)?;
    let mut entries = Vec::with_capacity(rows.len());
    for (lineno, code, text) in rows {
        let code = CategoryCode::parse(&code, cfg.scheme)
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        entries.push((code, text));
    }
    Taxonomy::from_entries(cfg.scheme, entries, cfg.orphans)
}

pub fn load_taxonomy(path: impl AsRef<Path>, cfg: &FormatConfig) -> Result<Taxonomy> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_taxonomy(file, &path.display().to_string(), cfg)
}

/// Load `code<TAB>translated description` rows.
pub fn load_translations(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = HashMap::new();
    for (lineno, code, text) in read_code_rows(file, &origin, '\t', false)? {
        if out.insert(code.trim().to_string(), text).is_some() {
            return Err(Error::parse(&origin, lineno, format!("duplicate code {}", code.trim())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(raw: &str) -> CategoryCode {
        CategoryCode::parse(raw, Scheme::Dotted).unwrap()
    }

    fn toy(rows: &str, orphans: OrphanPolicy) -> Result<Taxonomy> {
        let cfg = FormatConfig {
            orphans,
            ..FormatConfig::new(Scheme::Dotted)
        };
        parse_taxonomy(rows.as_bytes(), "toy", &cfg)
    }

    #[test]
    fn parses_dotted_code() {
        let c = code("01.11.11.112");
        assert_eq!(c.segments(), ["01", "11", "11", "112"]);
        assert_eq!(c.level(), 4);
        assert_eq!(c.as_str(), "01.11.11.112");
    }

    #[test]
    fn parses_class_item_code() {
        let c = CategoryCode::parse("620-80", Scheme::ClassItem).unwrap();
        assert_eq!(c.segments(), ["620", "80"]);
        assert_eq!(c.level(), 2);
        let class = CategoryCode::parse("620", Scheme::ClassItem).unwrap();
        assert_eq!(class.level(), 1);
    }

    #[test]
    fn rejects_bad_codes() {
        assert!(matches!(CategoryCode::parse("", Scheme::Dotted), Err(Error::Code { .. })));
        assert!(CategoryCode::parse("   ", Scheme::Dotted).is_err());
        let err = CategoryCode::parse("01.1a", Scheme::Dotted).unwrap_err();
        assert!(err.to_string().contains("position 2"), "{err}");
        assert!(CategoryCode::parse("01..2", Scheme::Dotted).is_err());
        let err = CategoryCode::parse("620-80-1", Scheme::ClassItem).unwrap_err();
        assert!(err.to_string().contains("position 3"), "{err}");
    }

    #[test]
    fn keeps_trailing_zero_segments() {
        assert_eq!(code("84.11.19.110").level(), 4);
        assert_eq!(code("33.12.23.000").segments()[3], "000");
    }

    #[test]
    fn numeric_segment_order() {
        let a = CategoryCode::parse("95", Scheme::ClassItem).unwrap();
        let b = CategoryCode::parse("620", Scheme::ClassItem).unwrap();
        assert!(a < b);
        assert!(code("01") < code("01.11"));
        assert!(code("01.2") < code("01.11"), "segments compare numerically");
    }

    #[test]
    fn ancestor_queries() {
        assert!(is_ancestor(&code("64.12"), &code("64.12.1")).unwrap());
        assert!(!is_ancestor(&code("64.12"), &code("64.12")).unwrap());
        assert!(!is_ancestor(&code("64.12"), &code("64.13.1")).unwrap());
        let other = CategoryCode::parse("64-12", Scheme::ClassItem).unwrap();
        assert!(matches!(
            is_ancestor(&code("64"), &other),
            Err(Error::SchemeMismatch(..))
        ));
    }

    #[test]
    fn prefix_chain_builds_parents() {
        let t = toy("01\tA\n01.11\tB\n01.11.1\tC\n", OrphanPolicy::Strict).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(&code("01.11.1")).unwrap().parent, Some(code("01.11")));
        assert_eq!(t.get(&code("01.11")).unwrap().parent, Some(code("01")));
        assert_eq!(t.get(&code("01")).unwrap().parent, None);
        assert_eq!(t.children(&code("01")), [code("01.11")]);
        assert_eq!(t.max_depth(), 3);
    }

    #[test]
    fn strict_mode_rejects_orphans() {
        let err = toy("01.11.1\tC\n", OrphanPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::MissingAncestor { .. }), "{err}");
        // skipped level is also an error in strict mode
        assert!(toy("01\tA\n01.11.1\tC\n", OrphanPolicy::Strict).is_err());
    }

    #[test]
    fn lenient_mode_attaches_to_nearest_ancestor() {
        let t = toy("01\tA\n01.11.1\tC\n02.1\tD\n", OrphanPolicy::NearestAncestor).unwrap();
        assert_eq!(t.get(&code("01.11.1")).unwrap().parent, Some(code("01")));
        assert_eq!(t.get(&code("02.1")).unwrap().parent, None);
        assert_eq!(t.roots().count(), 2);
    }

    #[test]
    fn duplicate_code_is_an_error() {
        let cfg = FormatConfig::new(Scheme::ClassItem);
        let err = parse_taxonomy("620-80\tPens\n620-80\tPens again\n".as_bytes(), "x", &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateCode(ref c) if c == "620-80"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = toy("# comment\n01\tA\nno-delimiter-here\n", OrphanPolicy::NearestAncestor)
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = toy("01\tA\n0x.1\tB\n", OrphanPolicy::NearestAncestor).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn header_comments_and_delimiter() {
        let cfg = FormatConfig {
            delimiter: ';',
            header: true,
            ..FormatConfig::new(Scheme::Dotted)
        };
        let t = parse_taxonomy("# exported\ncode;description\n\n01;A\n01.1;B\n".as_bytes(), "x", &cfg)
            .unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn level_slices() {
        let t = toy("01\tA\n02\tB\n01.11\tC\n", OrphanPolicy::NearestAncestor).unwrap();
        let l1: Vec<_> = t.level_slice(1).unwrap().iter().map(|c| c.code.as_str().to_string()).collect();
        assert_eq!(l1, ["01", "02"]);
        let l2: Vec<_> = t.level_slice(2).unwrap().iter().map(|c| c.code.as_str().to_string()).collect();
        assert_eq!(l2, ["01.11"]);
        assert!(matches!(t.level_slice(5), Err(Error::LevelOutOfRange { .. })));
        assert!(t.level_slice(0).is_err());
    }

    #[test]
    fn descendants_in_code_order() {
        let t = toy(
            "64\ta\n64.1\tb\n64.12\tc\n64.12.1\td\n64.12.2\te\n64.13.1\tf\n65\tg\n",
            OrphanPolicy::NearestAncestor,
        )
        .unwrap();
        let d: Vec<_> = t.descendants(&code("64.12")).map(|c| c.code.to_string()).collect();
        assert_eq!(d, ["64.12.1", "64.12.2"]);
        assert_eq!(t.descendants(&code("64")).count(), 5);
    }

    #[test]
    fn translations_replace_descriptions() {
        let t = toy("01\tА\n01.1\tБ\n", OrphanPolicy::NearestAncestor).unwrap();
        let tr = HashMap::from([
            ("01".to_string(), "Wheat".to_string()),
            ("99".to_string(), "Nothing".to_string()),
        ]);
        let (out, unknown) = t.with_translations(&tr);
        assert_eq!(out.lookup("01").unwrap().description, "Wheat");
        assert_eq!(out.lookup("01.1").unwrap().description, "Б");
        assert_eq!(unknown, ["99"]);
    }
}
