mod common;

use std::collections::BTreeSet;

use common::oracle::{argmax_rows, brute_string_match, csls_matrix, fisher_by_margins, Binomials};
use rand::Rng;
use taxomap::align::{procrustes_solve, SeedDictionary};
use taxomap::embeddings::whiten;
use taxomap::eval::{fisher_exact, ContingencyTable};
use taxomap::matching::{build_neighborhoods, csls_score, match_strings, Retrieval, Scorer, TokenBag};
use taxomap::synthetic::{gaussian_matrix, random_orthogonal, rng};
use taxomap::taxonomy::{CategoryCode, Scheme};
use taxomap::Matrix;

#[test]
fn fisher_matches_rational_oracle_on_random_margins() {
    let b = Binomials::new(160);
    let mut r = rng(7);
    for _ in 0..300 {
        let r1 = r.random_range(1..80u64);
        let r2 = r.random_range(1..80u64);
        let c1 = r.random_range(1..r1 + r2);
        for (a, expected) in fisher_by_margins(&b, r1, r2, c1) {
            let t = ContingencyTable::new([[a, r1 - a], [c1 - a, r2 + a - c1]]).unwrap();
            let p = fisher_exact(&t).p;
            assert!(((p - expected) / expected).abs() <= 1e-12, "{:?}: {p} vs {expected}", t.cells());
        }
    }
}

#[test]
fn fisher_known_values() {
    // hypergeometric with margins 4/4/4/4: tables 0..4 have weights 1,16,36,16,1
    let t = ContingencyTable::new([[3, 1], [1, 3]]).unwrap();
    assert!((fisher_exact(&t).p - 34.0 / 70.0).abs() < 1e-15);
    let t = ContingencyTable::new([[2, 2], [2, 2]]).unwrap();
    assert!((fisher_exact(&t).p - 1.0).abs() < 1e-15);
    let t = ContingencyTable::new([[4, 0], [0, 4]]).unwrap();
    assert!((fisher_exact(&t).p - 2.0 / 70.0).abs() < 1e-15);
}

#[test]
fn csls_matches_definition() {
    for seed in 0..5 {
        let x = gaussian_matrix(37, 6, seed);
        let y = gaussian_matrix(29, 6, seed + 100);
        let k = 1 + seed as usize * 2;
        let oracle = csls_matrix(&x, &y, k);
        let ret = Retrieval::new(&x, &y, Scorer::Csls { k }).unwrap();
        for i in 0..37 {
            for j in 0..29 {
                assert!((ret.score(i, j) - oracle[(i, j)]).abs() < 1e-12);
            }
        }
        let fwd: Vec<usize> = ret.forward().into_iter().map(|b| b.unwrap().0).collect();
        assert_eq!(fwd, argmax_rows(&oracle));
        let nb = build_neighborhoods(&x, &y, k).unwrap();
        let s = csls_score(
            &x.row(3).transpose(),
            &y.row(5).transpose(),
            &nb.source[3],
            &nb.target[5],
        )
        .unwrap();
        assert!((s - oracle[(3, 5)]).abs() < 1e-12);
    }
}

#[test]
fn knn_sets_match_brute_force() {
    let x = gaussian_matrix(25, 4, 1);
    let y = gaussian_matrix(30, 4, 2);
    let nb = build_neighborhoods(&x, &y, 5).unwrap();
    for i in 0..25 {
        let mut all: Vec<(usize, f64)> = (0..30)
            .map(|j| (j, x.row(i).dot(&y.row(j)) / (x.row(i).norm() * y.row(j).norm())))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let expect: Vec<usize> = all.iter().take(5).map(|p| p.0).collect();
        assert_eq!(nb.source[i].neighbors, expect);
    }
}

fn random_bags(n: usize, vocab: usize, seed: u64, prefix: &str) -> Vec<TokenBag> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| TokenBag {
            code: CategoryCode::parse(&format!("{:02}", i + 1), Scheme::Dotted).unwrap(),
            tokens: (0..r.random_range(0..5))
                .map(|_| format!("{prefix}{}", r.random_range(0..vocab)))
                .collect::<BTreeSet<_>>(),
        })
        .collect()
}

#[test]
fn string_matching_matches_exhaustive_search() {
    for seed in 0..50 {
        let src = random_bags(5, 6, seed, "t");
        let tgt = random_bags(5, 6, seed + 1000, "t");
        let got: Vec<(String, String, f64)> = {
            let mut v: Vec<_> = match_strings(&src, &tgt)
                .unwrap()
                .into_iter()
                .map(|r| (r.source.to_string(), r.target.to_string(), r.score))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let mut want = brute_string_match(&src, &tgt);
        want.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn whitening_gives_identity_covariance() {
    let x = gaussian_matrix(200, 10, 3);
    let (xw, t) = whiten(&x, 0.0).unwrap();
    let err = (xw.transpose() * &xw - Matrix::identity(10, 10)).abs().max();
    assert!(err <= 1e-8, "{err}");
    assert!((&x * t - xw).abs().max() < 1e-12);
}

#[test]
fn procrustes_beats_random_rotations() {
    let x = gaussian_matrix(60, 5, 1);
    let y = gaussian_matrix(60, 5, 2);
    let dict = SeedDictionary::identity(60);
    let w = procrustes_solve(&x, &y, &dict).unwrap().w;
    let loss = |w: &Matrix| (&x * w.transpose() - &y).norm_squared();
    let best = loss(&w);
    for s in 0..200 {
        assert!(best <= loss(&random_orthogonal(5, s)) + 1e-9);
    }
}
