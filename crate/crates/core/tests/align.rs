use std::time::Instant;

use taxomap::align::{
    induce_dictionary, mean_csls_score, procrustes_solve, refine, self_learn, vecmap_mapping,
    AlignmentConfig, InductionMode, MappingMatrix, SeedDictionary,
};
use taxomap::matching::Scorer;
use taxomap::synthetic::{gaussian_matrix, rotated_clone};
use taxomap::Matrix;

fn p_at_1(w: &Matrix, x: &Matrix, y: &Matrix, rows: &[usize]) -> f64 {
    let dict = induce_dictionary(&(x * w.transpose()), y, Scorer::Csls { k: 10 }, InductionMode::Forward).unwrap();
    let hits = dict.pairs.iter().filter(|(i, j)| i == j && rows.contains(i)).count();
    hits as f64 / rows.len() as f64
}

#[test]
fn refine_from_partial_seed() {
    let c = rotated_clone(2000, 50, 0.01, 11);
    let seed = SeedDictionary::new((0..200).map(|i| (i, i)).collect());
    let t = Instant::now();
    let m = refine(&c.x, &c.y, &seed, &AlignmentConfig::default()).unwrap();
    let held: Vec<usize> = (200..2000).collect();
    let p = p_at_1(&m.w, &c.x, &c.y, &held);
    eprintln!("refine p@1 {p} in {:?} history {:?}", t.elapsed(), m.meta.history);
    assert!(p >= 0.95);
}

#[test]
fn self_learning_identity_and_clone() {
    let cfg = AlignmentConfig::default();
    let x = gaussian_matrix(500, 20, 5);
    let m = self_learn(&x, &x, &cfg).unwrap();
    let all: Vec<usize> = (0..500).collect();
    assert_eq!(p_at_1(&m.w, &x, &x, &all), 1.0);

    let c = rotated_clone(2000, 50, 0.01, 12);
    let t = Instant::now();
    let m = self_learn(&c.x, &c.y, &cfg).unwrap();
    let all: Vec<usize> = (0..2000).collect();
    let p = p_at_1(&m.w, &c.x, &c.y, &all);
    eprintln!("self-learn clone p@1 {p} in {:?}", t.elapsed());
    assert!(p >= 0.9);
}

#[test]
fn vecmap_and_procrustes_agree_on_clone() {
    let c = rotated_clone(300, 12, 0.02, 4);
    let dict = SeedDictionary::identity(300);
    let a: MappingMatrix = procrustes_solve(&c.x, &c.y, &dict).unwrap();
    let b = vecmap_mapping(&c.x, &c.y, &dict).unwrap();
    assert!((a.w - b.w).abs().max() < 1e-9);
    let s = mean_csls_score(&c.x, &c.y, &c.rotation, 10).unwrap();
    assert!(s > 0.5, "{s}");
}
