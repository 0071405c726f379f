#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use taxomap::embeddings::VectorTable;
use taxomap::matching::Method;
use taxomap::pipeline::{AlignMethod, PipelineConfig, SideConfig, VectorSource};
use taxomap::synthetic::{nested_taxonomy, rotated_clone};
use taxomap::taxonomy::{Scheme, Taxonomy};
use rand::Rng;
use taxomap::synthetic::rng;
use taxomap::trainer::{train_cbow, Corpus, SoftmaxMode, TrainerConfig};
use taxomap::{Matrix, Vector};

pub fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Taxonomy lines in reverse order, so loaders cannot rely on file order.
pub fn reversed_tsv(t: &Taxonomy) -> String {
    let tsv = t.to_tsv();
    let mut lines: Vec<&str> = tsv.lines().collect();
    lines.reverse();
    lines.join("\n") + "\n"
}

fn vectors_for(t: &Taxonomy, m: &Matrix) -> String {
    let codes: Vec<String> = t.codes().map(|c| c.as_str().to_string()).collect();
    VectorTable::new(codes, m.clone()).unwrap().to_text()
}

fn identity_gold(t: &Taxonomy) -> String {
    let mut s = String::new();
    for c in t.codes() {
        let _ = writeln!(s, "{c}\t{c}");
    }
    s
}

/// Two copies of one taxonomy; gold pairs are the identity.
pub fn duplicated_string_fixture(dir: &Path) -> PipelineConfig {
    let t = nested_taxonomy(Scheme::Dotted, &[4, 3, 3], "item");
    write(dir, "src.tsv", &t.to_tsv());
    write(dir, "tgt.tsv", &reversed_tsv(&t));
    write(dir, "gold.tsv", &identity_gold(&t));
    let mut cfg = PipelineConfig::new(
        SideConfig::new("src.tsv", Scheme::Dotted),
        SideConfig::new("tgt.tsv", Scheme::Dotted),
    );
    cfg.base_dir = dir.to_path_buf();
    cfg.matching.method = Method::String;
    cfg.eval.gold = Some("gold.tsv".into());
    cfg
}

/// Category vectors of a depth-4 taxonomy and a rotated, noisy copy keyed
/// by the same codes; every tenth category is in the seed dictionary.
pub fn rotated_clone_fixture(dir: &Path, noise: f64, seed: u64) -> PipelineConfig {
    let t = nested_taxonomy(Scheme::Dotted, &[5, 4, 4, 5], "c");
    let c = rotated_clone(t.len(), 20, noise, seed);
    write(dir, "src.tsv", &t.to_tsv());
    write(dir, "tgt.tsv", &t.to_tsv());
    write(dir, "src.vec", &vectors_for(&t, &c.x));
    write(dir, "tgt.vec", &vectors_for(&t, &c.y));
    let mut dict = String::new();
    for code in t.codes().step_by(10) {
        let _ = writeln!(dict, "{code}\t{code}");
    }
    write(dir, "seed.tsv", &dict);
    write(dir, "gold.tsv", &identity_gold(&t));
    let side = |tax: &str, vec: &str| SideConfig {
        vectors: Some(vec.into()),
        ..SideConfig::new(tax, Scheme::Dotted)
    };
    let mut cfg = PipelineConfig::new(side("src.tsv", "src.vec"), side("tgt.tsv", "tgt.vec"));
    cfg.base_dir = dir.to_path_buf();
    cfg.seed = seed;
    cfg.vectors.source = VectorSource::Category;
    cfg.align.method = AlignMethod::Refine;
    cfg.align.dictionary = Some("seed.tsv".into());
    cfg.matching.method = Method::Csls;
    cfg.eval.gold = Some("gold.tsv".into());
    cfg
}

/// All files under `dir`, relative path → bytes, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}


pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// `p` and `q` occur in the same contexts (a0..a5), `r` only among b0..b5.
pub fn identity_corpus(seed: u64) -> Corpus {
    let mut r = rng(seed);
    let mut docs = Vec::new();
    for i in 0..300 {
        let (pool, middle) = match i % 3 {
            0 => ("a", "p"),
            1 => ("a", "q"),
            _ => ("b", "r"),
        };
        let mut toks: Vec<String> = (0..4).map(|_| format!("{pool}{}", r.random_range(0..6))).collect();
        toks.insert(2, middle.to_string());
        docs.push((format!("s{i}"), toks));
    }
    Corpus::new(docs).unwrap()
}

pub fn identity_holds(mode: SoftmaxMode, seed: u64) -> bool {
    let cfg = TrainerConfig {
        dim: 16,
        window: 2,
        epochs: 10,
        seed,
        mode,
        ..Default::default()
    };
    let (t, _) = train_cbow(&identity_corpus(seed), &cfg).unwrap();
    let (p, q, r) = (t.row("p").unwrap(), t.row("q").unwrap(), t.row("r").unwrap());
    cosine(&p, &q) > cosine(&p, &r)
}

pub mod oracle {
    use num_bigint::BigUint;
    use num_traits::{One, ToPrimitive, Zero};

    use taxomap::matching::{string_sim, TokenBag};
    use taxomap::Matrix;

    /// Exact binomial coefficients up to `n`.
    pub struct Binomials(Vec<Vec<BigUint>>);

    impl Binomials {
        pub fn new(max_n: usize) -> Self {
            let mut rows: Vec<Vec<BigUint>> = vec![vec![BigUint::one()]];
            for n in 1..=max_n {
                let prev = &rows[n - 1];
                let mut row = vec![BigUint::one(); n + 1];
                for k in 1..n {
                    row[k] = &prev[k - 1] + &prev[k];
                }
                rows.push(row);
            }
            Binomials(rows)
        }

        pub fn get(&self, n: u64, k: u64) -> &BigUint {
            &self.0[n as usize][k as usize]
        }
    }

    /// Two-sided point-probability Fisher p-value for every table with row
    /// sums `r1`, `r2` and first column sum `c1`, indexed by the top-left
    /// cell. Probabilities are compared exactly as integers over the common
    /// denominator `C(n, c1)`.
    pub fn fisher_by_margins(b: &Binomials, r1: u64, r2: u64, c1: u64) -> Vec<(u64, f64)> {
        let lo = c1.saturating_sub(r2);
        let hi = r1.min(c1);
        let nums: Vec<BigUint> = (lo..=hi).map(|x| b.get(r1, x) * b.get(r2, c1 - x)).collect();
        let den = b.get(r1 + r2, c1).to_f64().unwrap();
        let mut sorted: Vec<&BigUint> = nums.iter().collect();
        sorted.sort();
        nums.iter()
            .enumerate()
            .map(|(i, obs)| {
                let mut tail = BigUint::zero();
                for v in sorted.iter().take_while(|v| **v <= obs) {
                    tail += *v;
                }
                (lo + i as u64, tail.to_f64().unwrap() / den)
            })
            .collect()
    }

    fn cos(x: &Matrix, i: usize, y: &Matrix, j: usize) -> f64 {
        let (a, b) = (x.row(i), y.row(j));
        a.dot(&b) / (a.norm() * b.norm())
    }

    fn mean_top_k(mut v: Vec<f64>, k: usize) -> f64 {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v.iter().take(k).sum::<f64>() / k.min(v.len()) as f64
    }

    /// CSLS by definition: `2cos − r_T(x) − r_S(y)`.
    pub fn csls_matrix(x: &Matrix, y: &Matrix, k: usize) -> Matrix {
        let (n, m) = (x.nrows(), y.nrows());
        let rt: Vec<f64> = (0..n).map(|i| mean_top_k((0..m).map(|j| cos(x, i, y, j)).collect(), k)).collect();
        let rs: Vec<f64> = (0..m).map(|j| mean_top_k((0..n).map(|i| cos(x, i, y, j)).collect(), k)).collect();
        Matrix::from_fn(n, m, |i, j| 2.0 * cos(x, i, y, j) - rt[i] - rs[j])
    }

    /// Argmax per row, ties to the lowest column.
    pub fn argmax_rows(s: &Matrix) -> Vec<usize> {
        s.row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Best target per source by exhaustive `string_sim`, targets in code
    /// order, ties to the first.
    pub fn brute_string_match(src: &[TokenBag], tgt: &[TokenBag]) -> Vec<(String, String, f64)> {
        let mut tgt: Vec<&TokenBag> = tgt.iter().collect();
        tgt.sort_by(|a, b| a.code.cmp(&b.code));
        src.iter()
            .map(|s| {
                let mut best = (0, f64::NEG_INFINITY);
                for (j, t) in tgt.iter().enumerate() {
                    let v = string_sim(s, t);
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                (s.code.to_string(), tgt[best.0].code.to_string(), best.1)
            })
            .collect()
    }
}
