//! Seeded synthetic fixtures: Gaussian clouds, random rotations, rotated
//! clones with planted correspondences, hub fixtures, nested taxonomies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::taxonomy::{CategoryCode, OrphanPolicy, Scheme, Taxonomy};
use crate::{Matrix, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// n×d matrix of independent standard normal entries.
pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = rng(seed);
    gaussian_with(&mut rng, n, d)
}

fn gaussian_with<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    // fill row by row so that the draw order is independent of storage order
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
pub fn random_orthogonal(d: usize, seed: u64) -> Matrix {
    let g = gaussian_matrix(d, d, seed);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q
}

/// Source cloud `x`, target `y = x·Rᵀ + noise`; row i of `x` corresponds to
/// row i of `y`.
#[derive(Debug, Clone)]
pub struct RotatedClone {
    pub x: Matrix,
    pub y: Matrix,
    pub rotation: Matrix,
}

/// `noise` is the standard deviation of the additive Gaussian noise relative
/// to the unit-variance entries of `x`.
pub fn rotated_clone(n: usize, d: usize, noise: f64, seed: u64) -> RotatedClone {
    let mut rng = rng(seed);
    let x = gaussian_with(&mut rng, n, d);
    let rotation = random_orthogonal(d, seed.wrapping_add(0x9e37_79b9));
    let mut y = &x * rotation.transpose();
    if noise > 0.0 {
        y += gaussian_with(&mut rng, n, d) * noise;
    }
    RotatedClone { x, y, rotation }
}

/// Source and target clouds scattered around a shared direction, plus one
/// extra target row (the last one) sitting exactly on that direction.
#[derive(Debug, Clone)]
pub struct HubFixture {
    pub x: Matrix,
    pub y: Matrix,
    pub hub: usize,
}

pub fn planted_hub(n_source: usize, n_target: usize, d: usize, seed: u64) -> HubFixture {
    let mut rng = rng(seed);
    let mut center = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    center /= center.norm();
    let spread = 1.0 / (d as f64).sqrt();
    let mut x = gaussian_with(&mut rng, n_source, d) * spread;
    for mut row in x.row_iter_mut() {
        row += center.transpose();
    }
    let mut y = Matrix::zeros(n_target + 1, d);
    let noise = gaussian_with(&mut rng, n_target, d) * spread;
    for i in 0..n_target {
        y.set_row(i, &(noise.row(i) + center.transpose()));
    }
    y.set_row(n_target, &center.transpose());
    HubFixture {
        x,
        y,
        hub: n_target,
    }
}

/// A complete taxonomy with `branching[l]` children under every node of
/// level `l` (level-1 count is `branching[0]`). Dotted codes use two-digit
/// segments; class-item codes use three-digit classes and two-digit items.
/// Descriptions are `"<prefix> <code-words>"` where the code words are unique
/// per category.
pub fn nested_taxonomy(scheme: Scheme, branching: &[usize], prefix: &str) -> Taxonomy {
    let sep = scheme.separator().to_string();
    let mut entries = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for (level, &b) in branching.iter().enumerate() {
        let mut next = Vec::new();
        for parent in &frontier {
            for k in 1..=b {
                let seg = if scheme == Scheme::ClassItem && level == 0 {
                    format!("{:03}", k * 5)
                } else {
                    format!("{k:02}")
                };
                let mut segs = parent.clone();
                segs.push(seg);
                let raw = segs.join(&sep);
                let words: Vec<String> = segs
                    .iter()
                    .enumerate()
                    .map(|(l, s)| format!("w{l}x{s}"))
                    .collect();
                let code = CategoryCode::parse(&raw, scheme).expect("generated code is valid");
                entries.push((code, format!("{prefix} {}", words.join(" "))));
                next.push(segs);
            }
        }
        frontier = next;
    }
    Taxonomy::from_entries(scheme, entries, OrphanPolicy::Strict).expect("generated taxonomy is valid")
}
