//! Batch driver: ingestion, category vectors, alignment, matching,
//! evaluation and projection, configured by one TOML file.
//!
//! Relative paths in the config are resolved against the config file's
//! directory. Every command writes into `out_dir` and finishes with a
//! `manifest.json` listing the files it wrote (with SHA-256 digests), the
//! input files, the config hash and the seed. Each written text file starts
//! with a `# manifest=manifest.json` line.
//!
//! The top-level `seed` drives all randomness (trainer and self-learning);
//! `threads` and `out_dir` do not influence results and are left out of the
//! config hash.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{
    load_dictionary, procrustes_solve, refine, self_learn, vecmap_mapping, AlignmentConfig, MappingMatrix,
    SeedDictionary,
};
use crate::embeddings::{build_category_vectors, load_vectors, pca_project, tokenize, CategoryVectorSet};
use crate::eval::{
    accuracy, fisher_exact, load_annotations, screen_first_k, select_topn, AnnotationRecord, ContingencyTable,
    EvalReport, FisherResult, Label, ScreenOutcome, TopN,
};
use crate::matching::{
    bags_from_taxonomy, hierarchical_match, match_strings, match_vectors, records_to_tsv, BaseMatcher, MatchOutput,
    MatchRecord, Method, Scorer, StringBase, VectorBase,
};
use crate::taxonomy::{load_taxonomy, load_translations, CategoryCode, FormatConfig, OrphanPolicy, Scheme, Taxonomy};
use crate::trainer::{train_pvdbow, Corpus, TrainerConfig};
use crate::{Error, Matrix, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_REF: &str = "# manifest=manifest.json";

fn default_delimiter() -> char {
    '\t'
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideConfig {
    pub taxonomy: PathBuf,
    pub scheme: Scheme,
    #[serde(default)]
    pub header: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub orphans: OrphanPolicy,
    /// `code<TAB>translated description`; replaces descriptions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translations: Option<PathBuf>,
    /// Word vectors (`average`) or category vectors keyed by code (`category`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
    /// Training corpus for `pvdbow`, document ids are category codes. When
    /// absent the category descriptions are the documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

impl SideConfig {
    pub fn new(taxonomy: impl Into<PathBuf>, scheme: Scheme) -> Self {
        SideConfig {
            taxonomy: taxonomy.into(),
            scheme,
            header: false,
            delimiter: '\t',
            orphans: OrphanPolicy::default(),
            translations: None,
            vectors: None,
            corpus: None,
        }
    }

    fn format(&self) -> FormatConfig {
        FormatConfig {
            scheme: self.scheme,
            delimiter: self.delimiter,
            header: self.header,
            orphans: self.orphans,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorSource {
    /// Vectors keyed by category code.
    Category,
    /// Mean of word vectors over description tokens.
    #[default]
    Average,
    /// PV-DBOW document vectors trained per side.
    Pvdbow,
}

impl VectorSource {
    pub fn name(self) -> &'static str {
        match self {
            VectorSource::Category => "category",
            VectorSource::Average => "average",
            VectorSource::Pvdbow => "pvdbow",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorsStage {
    pub source: VectorSource,
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMethod {
    /// Spaces are already shared; identity mapping.
    #[default]
    None,
    Procrustes,
    Vecmap,
    Refine,
    SelfLearn,
}

impl AlignMethod {
    pub fn name(self) -> &'static str {
        match self {
            AlignMethod::None => "none",
            AlignMethod::Procrustes => "procrustes",
            AlignMethod::Vecmap => "vecmap",
            AlignMethod::Refine => "refine",
            AlignMethod::SelfLearn => "self-learn",
        }
    }

    pub fn needs_dictionary(self) -> bool {
        matches!(self, AlignMethod::Procrustes | AlignMethod::Vecmap | AlignMethod::Refine)
    }
}

impl std::str::FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AlignMethod::None,
            "procrustes" => AlignMethod::Procrustes,
            "vecmap" => AlignMethod::Vecmap,
            "refine" => AlignMethod::Refine,
            "self-learn" => AlignMethod::SelfLearn,
            other => return Err(Error::Config(format!("unknown alignment method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignStage {
    pub method: AlignMethod,
    /// `source_code<TAB>target_code` seed pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(flatten)]
    pub config: AlignmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchStage {
    pub method: Method,
}

impl Default for MatchStage {
    fn default() -> Self {
        MatchStage { method: Method::Csls }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    /// Human labels for this run's matches, in rank order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Labels of a competing method, compared with Fisher's exact test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<PathBuf>,
    /// Known correspondences `source<TAB>target`; matches are labelled
    /// true (same code), partial (same branch) or false.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    /// Restrict evaluation to the top matches and write them out for
    /// annotation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topn: Option<TopN>,
    pub screen_k: usize,
    pub screen_threshold: f64,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage {
            annotations: None,
            compare: None,
            gold: None,
            topn: None,
            screen_k: 50,
            screen_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub source: SideConfig,
    pub target: SideConfig,
    #[serde(default)]
    pub vectors: VectorsStage,
    #[serde(default)]
    pub align: AlignStage,
    #[serde(default, rename = "match")]
    pub matching: MatchStage,
    #[serde(default)]
    pub eval: EvalStage,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(source: SideConfig, target: SideConfig) -> Self {
        PipelineConfig {
            seed: 0,
            threads: 0,
            out_dir: default_out_dir(),
            source,
            target,
            vectors: VectorsStage::default(),
            align: AlignStage::default(),
            matching: MatchStage::default(),
            eval: EvalStage::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    fn uses_vectors(&self) -> bool {
        !self.matching.method.is_string()
    }

    /// Input files the configured commands will read, by config key.
    fn inputs(&self) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        for (name, side) in [("source", &self.source), ("target", &self.target)] {
            out.push((format!("{name}.taxonomy"), side.taxonomy.clone()));
            if let Some(p) = &side.translations {
                out.push((format!("{name}.translations"), p.clone()));
            }
            if let Some(p) = &side.vectors {
                out.push((format!("{name}.vectors"), p.clone()));
            }
            if let Some(p) = &side.corpus {
                out.push((format!("{name}.corpus"), p.clone()));
            }
        }
        if let Some(p) = &self.align.dictionary {
            out.push(("align.dictionary".into(), p.clone()));
        }
        for (name, p) in [
            ("eval.annotations", &self.eval.annotations),
            ("eval.compare", &self.eval.compare),
            ("eval.gold", &self.eval.gold),
        ] {
            if let Some(p) = p {
                out.push((name.into(), p.clone()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.inputs() {
            let full = self.resolve(&p);
            if !full.is_file() {
                return Err(Error::Config(format!("{name}: no such file {}", full.display())));
            }
        }
        if self.uses_vectors() {
            for (name, side) in [("source", &self.source), ("target", &self.target)] {
                match self.vectors.source {
                    VectorSource::Category | VectorSource::Average if side.vectors.is_none() => {
                        return Err(Error::Config(format!(
                            "{name}.vectors is required for vector source {:?}",
                            self.vectors.source.name()
                        )));
                    }
                    _ => {}
                }
            }
            if self.align.method.needs_dictionary() && self.align.dictionary.is_none() {
                return Err(Error::Config(format!(
                    "align.dictionary is required for {}",
                    self.align.method.name()
                )));
            }
            self.align.config.validate()?;
            if self.vectors.source == VectorSource::Pvdbow {
                self.vectors.trainer.validate()?;
            }
        }
        if let Some(TopN::Fraction(f)) = self.eval.topn {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("eval.topn fraction must be in (0, 1], got {f}")));
            }
        }
        if self.eval.compare.is_some() && self.eval.annotations.is_none() {
            return Err(Error::Config("eval.compare needs eval.annotations".into()));
        }
        Ok(())
    }

    /// SHA-256 of the config with `out_dir`, `threads` and `base_dir`
    /// cleared.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.threads = 0;
        let text = toml::to_string(&c).map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex_digest(text.as_bytes()))
    }

    fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            seed: self.seed,
            ..self.align.config.clone()
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Attach a stage name to errors.
fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

/// Run `f` on a pool of `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

// ---------------------------------------------------------------------------
// Output tree and manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path.display().to_string(), e.line(), e.to_string()))
    }
}

struct OutputTree {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputTree {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputTree {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let mut text = String::with_capacity(body.len() + MANIFEST_REF.len() + 1);
        text.push_str(MANIFEST_REF);
        text.push('\n');
        text.push_str(body);
        let path = self.dir.join(name);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), hex_digest(text.as_bytes()));
        Ok(())
    }

    fn finish(self, cfg: &PipelineConfig, command: &str) -> Result<Manifest> {
        let mut inputs = Vec::new();
        for (name, p) in cfg.inputs() {
            let full = cfg.resolve(&p);
            let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
            inputs.push(FileDigest {
                name,
                sha256: hex_digest(&bytes),
            });
        }
        let manifest = Manifest {
            tool: "taxomap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            config_sha256: cfg.hash()?,
            inputs,
            outputs: self
                .files
                .into_iter()
                .map(|(name, sha256)| FileDigest { name, sha256 })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numerical(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, PartialEq)]
pub struct SideSummary {
    pub path: PathBuf,
    pub scheme: Scheme,
    pub categories: usize,
    pub depth: usize,
    pub level_counts: Vec<usize>,
    /// Translation entries whose code is not in the taxonomy.
    pub unknown_translations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub source: SideSummary,
    pub target: SideSummary,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, s) in [("source", &self.source), ("target", &self.target)] {
            writeln!(
                f,
                "{name}\t{}\t{}\tcategories={}\tdepth={}",
                s.path.display(),
                s.scheme,
                s.categories,
                s.depth
            )?;
            for (l, n) in s.level_counts.iter().enumerate() {
                writeln!(f, "{name}\tlevel {}\t{n}", l + 1)?;
            }
            if !s.unknown_translations.is_empty() {
                writeln!(f, "{name}\tunknown translation codes\t{}", s.unknown_translations.len())?;
            }
        }
        Ok(())
    }
}

struct Taxonomies {
    source: Taxonomy,
    target: Taxonomy,
    summary: IngestSummary,
}

fn load_side(cfg: &PipelineConfig, side: &SideConfig) -> Result<(Taxonomy, SideSummary)> {
    let t = load_taxonomy(cfg.resolve(&side.taxonomy), &side.format())?;
    let (t, unknown) = match &side.translations {
        Some(p) => t.with_translations(&load_translations(cfg.resolve(p))?),
        None => (t, Vec::new()),
    };
    let summary = SideSummary {
        path: side.taxonomy.clone(),
        scheme: t.scheme(),
        categories: t.len(),
        depth: t.max_depth(),
        level_counts: t.level_counts(),
        unknown_translations: unknown,
    };
    Ok((t, summary))
}

fn ingest(cfg: &PipelineConfig) -> Result<Taxonomies> {
    stage("ingest", (|| {
        let (source, s) = load_side(cfg, &cfg.source)?;
        let (target, t) = load_side(cfg, &cfg.target)?;
        Ok(Taxonomies {
            source,
            target,
            summary: IngestSummary { source: s, target: t },
        })
    })())
}

pub struct CategoryVectors {
    pub source: CategoryVectorSet,
    pub target: CategoryVectorSet,
}

fn side_vectors(
    cfg: &PipelineConfig,
    side: &SideConfig,
    t: &Taxonomy,
    seed: u64,
) -> Result<CategoryVectorSet> {
    let path = |p: &Option<PathBuf>| {
        p.as_ref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| Error::Config("missing vector file".into()))
    };
    match cfg.vectors.source {
        VectorSource::Category => {
            let (table, _) = load_vectors(path(&side.vectors)?)?;
            Ok(CategoryVectorSet::from_table(t, &table))
        }
        VectorSource::Average => {
            let (table, _) = load_vectors(path(&side.vectors)?)?;
            Ok(build_category_vectors(t, &table).0)
        }
        VectorSource::Pvdbow => {
            let corpus = match &side.corpus {
                Some(p) => Corpus::load(cfg.resolve(p))?,
                None => Corpus::new(
                    t.iter()
                        .map(|c| (c.code.as_str().to_string(), tokenize(&c.description)))
                        .filter(|(_, toks)| !toks.is_empty())
                        .collect(),
                )?,
            };
            let trainer = TrainerConfig {
                seed,
                ..cfg.vectors.trainer.clone()
            };
            let (table, _) = train_pvdbow(&corpus, &trainer)?;
            Ok(CategoryVectorSet::from_table(t, &table))
        }
    }
}

/// Build and preprocess both sides' category vectors.
fn vectors(cfg: &PipelineConfig, tx: &Taxonomies) -> Result<CategoryVectors> {
    stage("vectors", (|| {
        let acfg = cfg.alignment();
        let source = side_vectors(cfg, &cfg.source, &tx.source, cfg.seed)?;
        let target = side_vectors(cfg, &cfg.target, &tx.target, cfg.seed.wrapping_add(1))?;
        for (name, set) in [("source", &source), ("target", &target)] {
            if set.usable_rows().is_empty() {
                return Err(Error::Empty(format!("no {name} category has a vector")));
            }
        }
        Ok(CategoryVectors {
            source: source.map_usable(|m| acfg.preprocess(m))?,
            target: target.map_usable(|m| acfg.preprocess(m))?,
        })
    })())
}

fn align(cfg: &PipelineConfig, v: &CategoryVectors) -> Result<(MappingMatrix, Vec<(String, String)>)> {
    stage("align", (|| {
        let (x, y) = (&v.source.matrix, &v.target.matrix);
        if x.ncols() != y.ncols() {
            return Err(Error::Dimension(format!(
                "source vectors have {} dimensions, target {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let acfg = cfg.alignment();
        let (dict, dropped) = match (&cfg.align.dictionary, cfg.align.method.needs_dictionary()) {
            (Some(p), true) => load_dictionary(cfg.resolve(p), &v.source, &v.target)?,
            _ => (SeedDictionary::default(), Vec::new()),
        };
        let mut m = match cfg.align.method {
            AlignMethod::None => MappingMatrix::identity(x.ncols()),
            AlignMethod::Procrustes => procrustes_solve(x, y, &dict)?,
            AlignMethod::Vecmap => vecmap_mapping(x, y, &dict)?,
            AlignMethod::Refine => refine(x, y, &dict, &acfg)?,
            AlignMethod::SelfLearn => self_learn(x, y, &acfg)?,
        };
        m.meta.method = cfg.align.method.name().into();
        Ok((m, dropped))
    })())
}

fn run_matching(
    cfg: &PipelineConfig,
    tx: &Taxonomies,
    v: Option<&CategoryVectors>,
    w: Option<&Matrix>,
) -> Result<MatchOutput> {
    stage("match", (|| {
        let method = cfg.matching.method;
        let scorer = match method {
            Method::Cosine | Method::HierVector => Scorer::Cosine,
            _ => Scorer::Csls {
                k: cfg.align.config.csls_k,
            },
        };
        let vectors = || -> Result<(&CategoryVectors, &Matrix)> {
            match (v, w) {
                (Some(v), Some(w)) => Ok((v, w)),
                _ => Err(Error::Config(format!("method {method} needs vectors"))),
            }
        };
        match method {
            Method::String => {
                let src = bags_from_taxonomy(&tx.source);
                let (usable, skipped): (Vec<_>, Vec<_>) = src.into_iter().partition(|b| !b.tokens.is_empty());
                Ok(MatchOutput {
                    records: match_strings(&usable, &bags_from_taxonomy(&tx.target))?,
                    skipped: skipped.into_iter().map(|b| b.code).collect(),
                })
            }
            Method::Cosine | Method::Csls => {
                let (v, w) = vectors()?;
                match_vectors(&v.source, &v.target, w, scorer)
            }
            Method::HierString => {
                let base = StringBase::from_taxonomies(&tx.source, &tx.target);
                hierarchical_match(&tx.source, &tx.target, &[&base as &dyn BaseMatcher])
            }
            Method::HierVector | Method::HierCsls => {
                let (v, w) = vectors()?;
                let base = VectorBase::new(&v.source, &v.target, w, scorer)?;
                hierarchical_match(&tx.source, &tx.target, &[&base as &dyn BaseMatcher])
            }
        }
    })())
}

fn skipped_tsv(out: &MatchOutput, uncovered: &[CategoryCode]) -> String {
    let mut rows: BTreeMap<&CategoryCode, &str> = BTreeMap::new();
    for c in &out.skipped {
        rows.insert(c, "no-candidate");
    }
    for c in uncovered {
        rows.insert(c, "no-vector");
    }
    let mut s = String::from("code\treason\n");
    for (c, r) in rows {
        let _ = writeln!(s, "{c}\t{r}");
    }
    s
}

/// Load `source<TAB>target` gold pairs.
pub fn load_gold(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, idx + 1, "expected source<TAB>target"))?;
        out.insert(s.trim().to_string(), t.trim().to_string());
    }
    Ok(out)
}

/// Label matches against known correspondences. Matches whose source has no
/// gold entry are left out.
pub fn label_against_gold(
    records: &[MatchRecord],
    gold: &HashMap<String, String>,
    target_scheme: Scheme,
) -> Vec<AnnotationRecord> {
    records
        .iter()
        .filter_map(|r| {
            let g = gold.get(r.source.as_str())?;
            let label = if g == r.target.as_str() {
                Label::Correct
            } else {
                match CategoryCode::parse(g, target_scheme) {
                    Ok(gc) if gc.is_prefix_of(&r.target) || r.target.is_prefix_of(&gc) => Label::Partial,
                    _ => Label::Wrong,
                }
            };
            Some(AnnotationRecord {
                source: r.source.as_str().to_string(),
                target: r.target.as_str().to_string(),
                label,
                method: r.method.name().to_string(),
            })
        })
        .collect()
}

fn annotations_tsv(ann: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for a in ann {
        let _ = writeln!(s, "{}\t{}\t{}", a.source, a.target, a.label);
    }
    s
}

fn topn_sample_tsv(records: &[MatchRecord], tx: &Taxonomies) -> String {
    let mut s = String::from("source\ttarget\tscore\tsource_description\ttarget_description\tlabel\n");
    let desc = |t: &Taxonomy, c: &CategoryCode| t.get(c).map(|c| c.description.clone()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t",
            r.source,
            r.target,
            r.score,
            desc(&tx.source, &r.source),
            desc(&tx.target, &r.target)
        );
    }
    s
}

/// Everything the evaluation stage computed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOutcome {
    pub reports: Vec<EvalReport>,
    pub screen: Option<ScreenOutcome>,
    pub fisher: Option<FisherResult>,
}

impl EvalOutcome {
    pub fn text(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            let _ = writeln!(s, "{r}");
        }
        if let Some(sc) = &self.screen {
            let _ = writeln!(
                s,
                "screening: accuracy {:.3} over the first {} -> {}",
                sc.accuracy,
                sc.window,
                if sc.dropped { "dropped" } else { "pass" }
            );
        }
        if let Some(f) = &self.fisher {
            let _ = writeln!(
                s,
                "fisher exact (two-sided, point-probability rule): p = {}{}",
                f.p,
                if f.degenerate { " (degenerate table)" } else { "" }
            );
        }
        s
    }

    pub fn tsv(&self) -> String {
        let mut s = String::from(EvalReport::summary_tsv_header());
        s.push('\n');
        for r in &self.reports {
            s.push_str(&r.summary_tsv_row());
            s.push('\n');
        }
        s
    }
}

/// Accuracy for each annotation list; Fisher's test when there are two;
/// screening of the first list.
pub fn evaluate(lists: &[Vec<AnnotationRecord>], screen_k: usize, threshold: f64) -> Result<EvalOutcome> {
    let mut out = EvalOutcome::default();
    for l in lists {
        out.reports.push(accuracy(l)?);
    }
    if let Some(first) = lists.first() {
        out.screen = Some(screen_first_k(first, screen_k, threshold)?);
    }
    if let [a, b] = out.reports.as_slice() {
        out.fisher = Some(fisher_exact(&ContingencyTable::from_reports(a, b)?));
    }
    Ok(out)
}

fn run_eval(cfg: &PipelineConfig, tx: &Taxonomies, records: &[MatchRecord], tree: &mut OutputTree) -> Result<Option<EvalOutcome>> {
    stage("eval", (|| {
        let e = &cfg.eval;
        let selected: Vec<MatchRecord> = match e.topn {
            Some(policy) if !records.is_empty() => {
                let sel = select_topn(records, policy)?.records;
                tree.write("annotation_sample.tsv", &topn_sample_tsv(&sel, tx))?;
                sel
            }
            _ => records.to_vec(),
        };
        let method = cfg.matching.method.name();
        let mut lists = Vec::new();
        if let Some(p) = &e.gold {
            let labelled = label_against_gold(&selected, &load_gold(cfg.resolve(p))?, tx.target.scheme());
            tree.write("gold_labels.tsv", &annotations_tsv(&labelled))?;
            lists.push(labelled);
        }
        if let Some(p) = &e.annotations {
            let ann = load_annotations(cfg.resolve(p), method)?;
            lists.push(ann);
            if let Some(c) = &e.compare {
                lists.push(load_annotations(cfg.resolve(c), "compare")?);
            }
        }
        if lists.is_empty() {
            return Ok(None);
        }
        let outcome = evaluate(&lists, e.screen_k, e.screen_threshold)?;
        tree.write("eval.txt", &outcome.text())?;
        tree.write("eval.tsv", &outcome.tsv())?;
        Ok(Some(outcome))
    })())
}

// ---------------------------------------------------------------------------
// Commands

fn prepare(cfg: &PipelineConfig) -> Result<OutputTree> {
    stage("validate", cfg.validate())?;
    OutputTree::create(cfg.out_path())
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let mut tree = prepare(cfg)?;
    let tx = ingest(cfg)?;
    tree.write("ingest.txt", &tx.summary.to_string())?;
    tree.finish(cfg, "ingest")?;
    Ok(tx.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorsSummary {
    pub dim: usize,
    pub source_usable: usize,
    pub target_usable: usize,
    pub source_uncovered: Vec<CategoryCode>,
    pub target_uncovered: Vec<CategoryCode>,
}

/// Build category vectors and write them in word2vec text format.
pub fn cmd_vectors(cfg: &PipelineConfig) -> Result<VectorsSummary> {
    let mut tree = prepare(cfg)?;
    with_threads(cfg.threads, || {
        let tx = ingest(cfg)?;
        let v = vectors(cfg, &tx)?;
        tree.write("source.vec", &v.source.to_table().to_text())?;
        tree.write("target.vec", &v.target.to_table().to_text())?;
        let mut unc = String::from("side\tcode\n");
        for (name, set) in [("source", &v.source), ("target", &v.target)] {
            for c in set.uncovered() {
                let _ = writeln!(unc, "{name}\t{c}");
            }
        }
        tree.write("uncovered.tsv", &unc)?;
        Ok(VectorsSummary {
            dim: v.source.dim(),
            source_usable: v.source.usable_rows().len(),
            target_usable: v.target.usable_rows().len(),
            source_uncovered: v.source.uncovered(),
            target_uncovered: v.target.uncovered(),
        })
    })
    .and_then(|s| {
        tree.finish(cfg, "vectors")?;
        Ok(s)
    })
}

pub fn cmd_align(cfg: &PipelineConfig) -> Result<MappingMatrix> {
    let mut tree = prepare(cfg)?;
    let m = with_threads(cfg.threads, || {
        let tx = ingest(cfg)?;
        let v = vectors(cfg, &tx)?;
        let (m, dropped) = align(cfg, &v)?;
        tree.write("mapping.tsv", &m.to_text())?;
        if !dropped.is_empty() {
            let mut s = String::from("source\ttarget\n");
            for (a, b) in &dropped {
                let _ = writeln!(s, "{a}\t{b}");
            }
            tree.write("dictionary_dropped.tsv", &s)?;
        }
        Ok(m)
    })?;
    tree.finish(cfg, "align")?;
    Ok(m)
}

/// Result of [`cmd_run`] / [`cmd_match`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub matches: MatchOutput,
    pub mapping: Option<MappingMatrix>,
    pub eval: Option<EvalOutcome>,
    pub manifest: Manifest,
}

fn match_and_maybe_eval(cfg: &PipelineConfig, command: &str, with_eval: bool) -> Result<RunOutput> {
    let mut tree = prepare(cfg)?;
    let (matches, mapping, eval) = with_threads(cfg.threads, || {
        let tx = ingest(cfg)?;
        let (v, mapping, uncovered) = if cfg.uses_vectors() {
            let v = vectors(cfg, &tx)?;
            let (m, _) = align(cfg, &v)?;
            let uncovered = v.source.uncovered();
            (Some(v), Some(m), uncovered)
        } else {
            (None, None, Vec::new())
        };
        let out = run_matching(cfg, &tx, v.as_ref(), mapping.as_ref().map(|m| &m.w))?;
        tree.write("matches.tsv", &records_to_tsv(&out.records))?;
        tree.write("skipped.tsv", &skipped_tsv(&out, &uncovered))?;
        if let Some(m) = &mapping {
            tree.write("mapping.tsv", &m.to_text())?;
        }
        let eval = if with_eval {
            run_eval(cfg, &tx, &out.records, &mut tree)?
        } else {
            None
        };
        Ok((out, mapping, eval))
    })?;
    let manifest = tree.finish(cfg, command)?;
    Ok(RunOutput {
        matches,
        mapping,
        eval,
        manifest,
    })
}

pub fn cmd_match(cfg: &PipelineConfig) -> Result<RunOutput> {
    match_and_maybe_eval(cfg, "match", false)
}

/// Full pipeline: matches, skip report, mapping, optional evaluation and the
/// run manifest.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunOutput> {
    match_and_maybe_eval(cfg, "run", true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Accuracy,
    Fisher,
    Screen,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(EvalMode::Accuracy),
            "fisher" => Ok(EvalMode::Fisher),
            "screen" => Ok(EvalMode::Screen),
            other => Err(Error::Config(format!("unknown eval mode {other:?}"))),
        }
    }
}

/// Evaluate annotation files directly (no matching).
pub fn cmd_eval(cfg: &PipelineConfig, mode: EvalMode) -> Result<EvalOutcome> {
    let mut tree = prepare(cfg)?;
    let outcome = stage("eval", (|| {
        let e = &cfg.eval;
        let path = e
            .annotations
            .as_ref()
            .ok_or_else(|| Error::Config("eval.annotations is required".into()))?;
        let first = load_annotations(cfg.resolve(path), cfg.matching.method.name())?;
        let mut out = EvalOutcome::default();
        match mode {
            EvalMode::Accuracy => out.reports.push(accuracy(&first)?),
            EvalMode::Screen => {
                out.reports.push(accuracy(&first)?);
                out.screen = Some(screen_first_k(&first, e.screen_k, e.screen_threshold)?);
            }
            EvalMode::Fisher => {
                let c = e
                    .compare
                    .as_ref()
                    .ok_or_else(|| Error::Config("eval.compare is required for fisher".into()))?;
                let second = load_annotations(cfg.resolve(c), "compare")?;
                out = evaluate(&[first, second], e.screen_k, e.screen_threshold)?;
                out.screen = None;
            }
        }
        Ok(out)
    })())?;
    tree.write("eval.txt", &outcome.text())?;
    tree.write("eval.tsv", &outcome.tsv())?;
    tree.finish(cfg, "eval")?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Source => "source",
            Side::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub code: CategoryCode,
    pub x: f64,
    pub y: f64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

/// Joint 2-D PCA of the mapped source vectors and the target vectors.
pub fn project_sets(xs: &CategoryVectorSet, yt: &CategoryVectorSet, w: &Matrix) -> Result<Projection> {
    let mapped = xs.map_usable(|m| Ok(m * w.transpose()))?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (set, side) in [(&mapped, Side::Source), (yt, Side::Target)] {
        for i in set.usable_rows() {
            labels.push((set.codes[i].clone(), side));
            rows.push(set.matrix.row(i).clone_owned());
        }
    }
    if rows.len() < 2 {
        return Err(Error::Empty("projection needs at least 2 usable rows".into()));
    }
    let stacked = Matrix::from_rows(&rows);
    let total = crate::embeddings::total_variance(&stacked);
    let p = pca_project(&stacked, 2)?;
    let points = labels
        .into_iter()
        .enumerate()
        .map(|(i, (code, side))| ProjectedPoint {
            code,
            x: p.coords[(i, 0)],
            y: if p.coords.ncols() > 1 { p.coords[(i, 1)] } else { 0.0 },
            side,
        })
        .collect();
    Ok(Projection {
        points,
        explained_ratio: p.explained_variance_ratio(total),
        explained_variance: p.explained_variance,
    })
}

/// Write `projection.tsv` (`code x y taxonomy`) and
/// `projection_variance.tsv`.
pub fn cmd_project(cfg: &PipelineConfig) -> Result<Projection> {
    let mut tree = prepare(cfg)?;
    let p = with_threads(cfg.threads, || {
        let tx = ingest(cfg)?;
        let v = vectors(cfg, &tx)?;
        let (m, _) = align(cfg, &v)?;
        let p = stage("project", project_sets(&v.source, &v.target, &m.w))?;
        let mut s = String::from("code\tx\ty\ttaxonomy\n");
        for pt in &p.points {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", pt.code, pt.x, pt.y, pt.side.name());
        }
        tree.write("projection.tsv", &s)?;
        let mut s = String::from("component\texplained_variance\tratio\n");
        for (i, (v, r)) in p.explained_variance.iter().zip(&p.explained_ratio).enumerate() {
            let _ = writeln!(s, "{}\t{v}\t{r}", i + 1);
        }
        tree.write("projection_variance.tsv", &s)?;
        Ok(p)
    })?;
    tree.finish(cfg, "project")?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = PipelineConfig::parse(
            r#"
seed = 3
[source]
taxonomy = "a.tsv"
scheme = "dotted"
[target]
taxonomy = "b.tsv"
scheme = "class-item"
[match]
method = "hier-csls"
[align]
method = "refine"
csls_k = 7
dictionary = "seed.tsv"
[eval]
topn = { policy = "fraction", value = 0.05 }
"#,
            "/base",
        )
        .unwrap();
        assert_eq!(cfg.matching.method, Method::HierCsls);
        assert_eq!(cfg.align.config.csls_k, 7);
        assert_eq!(cfg.align.config.refinement_iterations, 5);
        assert_eq!(cfg.eval.topn, Some(TopN::Fraction(0.05)));
        assert_eq!(cfg.resolve(Path::new("a.tsv")), PathBuf::from("/base/a.tsv"));
        assert_eq!(cfg.alignment().seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::parse(
            "[source]\ntaxonomy = \"a\"\nscheme = \"dotted\"\nbogus = 1\n[target]\ntaxonomy = \"b\"\nscheme = \"dotted\"\n",
            "",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn hash_ignores_threads_and_out_dir() {
        let mut a = PipelineConfig::new(SideConfig::new("a", Scheme::Dotted), SideConfig::new("b", Scheme::Dotted));
        let h = a.hash().unwrap();
        a.threads = 8;
        a.out_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), h);
        a.seed = 1;
        assert_ne!(a.hash().unwrap(), h);
    }

    #[test]
    fn gold_labels() {
        let code = |s: &str| CategoryCode::parse(s, Scheme::Dotted).unwrap();
        let rec = |s: &str, t: &str| MatchRecord {
            source: code(s),
            target: code(t),
            score: 1.0,
            method: Method::String,
            flags: Default::default(),
        };
        let gold: HashMap<String, String> = [("1", "1.2"), ("2", "3"), ("3", "4.1")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let labels: Vec<Label> = label_against_gold(
            &[rec("1", "1.2"), rec("2", "3.1"), rec("3", "5"), rec("9", "1")],
            &gold,
            Scheme::Dotted,
        )
        .into_iter()
        .map(|a| a.label)
        .collect();
        assert_eq!(labels, [Label::Correct, Label::Partial, Label::Wrong]);
    }

    #[test]
    fn stage_names_wrap_once() {
        let e = stage::<()>("align", Err(Error::Numerical("x".into()))).unwrap_err();
        let e = stage::<()>("run", Err(e)).unwrap_err();
        assert_eq!(e.to_string(), "align: numerical failure: x");
        assert_eq!(e.kind(), crate::ErrorKind::Numerical);
    }
}
