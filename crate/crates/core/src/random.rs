//! Seeded random operators for property checks and probes.

use faer::{c64, Col, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::opalg::{real, trace, CMat, CVec};

pub const DEFAULT_SEED: u64 = 0x5EED;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut impl Rng) -> c64 {
    c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random unit vector.
pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> CVec {
    let v = Col::from_fn(dim, |_| gaussian(rng));
    let norm = v.norm_l2();
    Col::from_fn(dim, |i| v[i] / norm)
}

/// Ginibre matrix with `cols` columns.
pub fn ginibre(rng: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    Mat::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// `G G† / tr(G G†)` with `G` a `dim × rank` Ginibre matrix.
pub fn density(rng: &mut impl Rng, dim: usize, rank: usize) -> CMat {
    let g = ginibre(rng, dim, rank.max(1));
    let m = &g * g.adjoint();
    let t = trace(m.as_ref()).re;
    Mat::from_fn(dim, dim, |i, j| m[(i, j)] / t)
}

/// Density operator of random rank `1..=dim`.
pub fn density_any_rank(rng: &mut impl Rng, dim: usize) -> CMat {
    let rank = rng.gen_range(1..=dim);
    density(rng, dim, rank)
}

/// Density operator supported on the span of the orthonormal columns `w`.
pub fn density_on(rng: &mut impl Rng, w: faer::MatRef<'_, c64>) -> CMat {
    let r = w.ncols();
    let inner = density(rng, r, r);
    w * inner * w.adjoint()
}

pub fn hermitian(rng: &mut impl Rng, dim: usize) -> CMat {
    let g = ginibre(rng, dim, dim);
    Mat::from_fn(dim, dim, |i, j| (g[(i, j)] + g[(j, i)].conj()) * 0.5)
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix.
pub fn unitary(rng: &mut impl Rng, dim: usize) -> CMat {
    let g = ginibre(rng, dim, dim);
    let qr = g.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    // Fix the phase ambiguity so the distribution is Haar.
    Mat::from_fn(dim, dim, |i, j| {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { real(1.0) };
        q[(i, j)] * phase
    })
}

/// `U diag(levels) U†` with each level repeated by its multiplicity and `U` Haar.
pub fn operator_with_levels(rng: &mut impl Rng, levels: &[(f64, usize)]) -> CMat {
    let values: Vec<f64> = levels.iter().flat_map(|&(v, m)| std::iter::repeat(v).take(m)).collect();
    let n = values.len();
    let u = unitary(rng, n);
    let d = Mat::from_fn(n, n, |i, j| if i == j { real(values[i]) } else { real(0.0) });
    &u * d * u.adjoint()
}

/// A random ground-set instance: a Hermitian `A` of dimension 3..=6 with 3..=5
/// strictly increasing levels, lowest level 0 of multiplicity at most 3, and a
/// random state of random rank.
pub struct GradedInstance {
    pub a: CMat,
    pub levels: Vec<(f64, usize)>,
    pub rho: CMat,
}

pub fn graded_instance(rng: &mut impl Rng) -> GradedInstance {
    let dim = rng.gen_range(3..=6);
    let clusters = rng.gen_range(3..=dim.min(5));
    // Split dim into `clusters` positive parts with the first at most 3.
    let mut sizes = vec![1usize; clusters];
    for _ in 0..dim - clusters {
        loop {
            let k = rng.gen_range(0..clusters);
            if k != 0 || sizes[0] < 3 {
                sizes[k] += 1;
                break;
            }
        }
    }
    let mut level = 0.0;
    let mut levels = Vec::with_capacity(clusters);
    for (k, &m) in sizes.iter().enumerate() {
        if k > 0 {
            level += rng.gen_range(0.2..2.0);
        }
        levels.push((level, m));
    }
    let a = operator_with_levels(rng, &levels);
    let rho = density_any_rank(rng, dim);
    GradedInstance { a, levels, rho }
}
