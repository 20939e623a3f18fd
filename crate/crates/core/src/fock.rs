//! Truncated single-mode Fock space: ladder operators, quadratures, coherent
//! and cat vectors.

use faer::{c64, Col, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::{real, CMat, CVec};

pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

/// Highest retained number state and the Poisson tail mass tolerated when
/// building coherent and cat vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockTruncation {
    pub n_max: usize,
    pub tail_tol: f64,
}

impl FockTruncation {
    pub fn new(dim: usize, tail_tol: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidInput(format!("Fock dimension must be >= 2, got {dim}")));
        }
        if !(tail_tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tail_tol must be positive, got {tail_tol}"
            )));
        }
        Ok(Self {
            n_max: dim - 1,
            tail_tol,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    /// Levels `n_max − 1` and `n_max`, where `a†` is wrong by construction.
    pub fn boundary_levels(&self) -> [usize; 2] {
        [self.n_max - 1, self.n_max]
    }
}

/// Annihilation operator, `a|n⟩ = √n |n−1⟩`.
pub fn ladder(dim: usize) -> Result<CMat> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!("ladder needs dim >= 2, got {dim}")));
    }
    Ok(Mat::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            real((j as f64).sqrt())
        } else {
            real(0.0)
        }
    }))
}

pub fn creation(dim: usize) -> Result<CMat> {
    Ok(ladder(dim)?.adjoint().to_owned())
}

pub fn number(dim: usize) -> CMat {
    Mat::from_fn(dim, dim, |i, j| if i == j { real(i as f64) } else { real(0.0) })
}

pub fn number_state(dim: usize, n: usize) -> Result<CVec> {
    if n >= dim {
        return Err(Error::InvalidInput(format!("number state |{n}⟩ outside dim {dim}")));
    }
    Ok(Col::from_fn(dim, |k| if k == n { real(1.0) } else { real(0.0) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureConvention {
    /// `q = a + a†`, `p = −i(a − a†)`, so `[q, p] = 2i`.
    #[default]
    Unscaled,
    /// `q = (a + a†)/√2`, `p = −i(a − a†)/√2`, so `[q, p] = i`.
    Symmetric,
}

impl QuadratureConvention {
    pub fn scale(self) -> f64 {
        match self {
            Self::Unscaled => 1.0,
            Self::Symmetric => std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::Unscaled => "q = a + a†, p = -i(a - a†)",
            Self::Symmetric => "q = (a + a†)/√2, p = -i(a - a†)/√2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Quadratures {
    pub q: CMat,
    pub p: CMat,
    pub convention: QuadratureConvention,
}

pub fn quadratures(dim: usize, convention: QuadratureConvention) -> Result<Quadratures> {
    let a = ladder(dim)?;
    let s = convention.scale();
    let q = Mat::from_fn(dim, dim, |i, j| (a[(i, j)] + a[(j, i)].conj()) * s);
    let p = Mat::from_fn(dim, dim, |i, j| (a[(i, j)] - a[(j, i)].conj()) * c64::new(0.0, -s));
    Ok(Quadratures { q, p, convention })
}

/// `αⁿ/√n!` for `n < dim`, by recurrence.
fn poisson_amplitudes(dim: usize, alpha: c64) -> Vec<c64> {
    let mut out = Vec::with_capacity(dim);
    let mut c = real(1.0);
    for n in 0..dim {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        out.push(c);
    }
    out
}

/// Probability mass `Σ_{n ≥ dim} e^{−|α|²}|α|^{2n}/n!` lost by truncation.
pub fn coherent_tail_mass(dim: usize, alpha: c64) -> f64 {
    let x = alpha.norm_sqr();
    if x == 0.0 {
        return 0.0;
    }
    // log of the first omitted Poisson weight, then sum forward until negligible.
    let ln_fact: f64 = (1..=dim).map(|k| (k as f64).ln()).sum();
    let mut term = (-x + dim as f64 * x.ln() - ln_fact).exp();
    let mut total = 0.0;
    let mut n = dim;
    loop {
        total += term;
        n += 1;
        term *= x / n as f64;
        if term < 1e-18 * total.max(1e-300) && (n as f64) > x {
            break;
        }
        if n > dim + 100_000 {
            break;
        }
    }
    total
}

/// Smallest dimension whose coherent tail mass is within `tail_tol`.
pub fn required_dim(alpha: c64, tail_tol: f64) -> usize {
    let mut d = 2;
    while coherent_tail_mass(d, alpha) > tail_tol {
        d += 1;
    }
    d
}

fn check_tail(dim: usize, alpha: c64, tail_tol: f64) -> Result<()> {
    let tail_mass = coherent_tail_mass(dim, alpha);
    if tail_mass > tail_tol {
        return Err(Error::TruncationTooSmall {
            dim,
            required_dim: required_dim(alpha, tail_tol),
            tail_mass,
            tail_tol,
        });
    }
    Ok(())
}

/// Normalized truncation of `|α⟩ = e^{−|α|²/2} Σ αⁿ/√n! |n⟩`.
pub fn coherent_vector(dim: usize, alpha: c64, tail_tol: f64) -> Result<CVec> {
    if dim < 1 {
        return Err(Error::InvalidInput("dim must be positive".into()));
    }
    check_tail(dim, alpha, tail_tol)?;
    let amps = poisson_amplitudes(dim, alpha);
    let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(Col::from_fn(dim, |n| amps[n] / norm))
}

/// Even/odd cat vectors spanning `ker(a² − α²)`.
#[derive(Debug, Clone)]
pub struct CatPair {
    /// `∝ |α⟩ + |−α⟩`.
    pub even: CVec,
    /// `∝ |α⟩ − |−α⟩`; absent when `α = 0`.
    pub odd: Option<CVec>,
    /// Coefficient in `|z⟩ = c₀ Σ_even αⁿ/√n! |n⟩` normalizing the even vector.
    pub c0: f64,
    /// Same for the odd vector; zero when degenerate.
    pub c1: f64,
}

impl CatPair {
    pub fn odd_degenerate(&self) -> bool {
        self.odd.is_none()
    }

    /// Projector onto the cat span (rank 1 when the odd vector is degenerate).
    pub fn span_projector(&self) -> CMat {
        let mut p = crate::opalg::pure_state(self.even.as_ref());
        if let Some(odd) = &self.odd {
            p += crate::opalg::pure_state(odd.as_ref());
        }
        p
    }
}

pub fn cat_vectors(dim: usize, alpha: c64, tail_tol: f64) -> Result<CatPair> {
    check_tail(dim, alpha, tail_tol)?;
    let amps = poisson_amplitudes(dim, alpha);
    let parity_norm = |parity: usize| {
        amps.iter()
            .enumerate()
            .filter(|(n, _)| n % 2 == parity)
            .map(|(_, z)| z.norm_sqr())
            .sum::<f64>()
    };
    let even_sq = parity_norm(0);
    let odd_sq = parity_norm(1);
    let c0 = 1.0 / even_sq.sqrt();
    let even = Col::from_fn(dim, |n| if n % 2 == 0 { amps[n] * c0 } else { real(0.0) });
    let (odd, c1) = if odd_sq > 0.0 {
        let c1 = 1.0 / odd_sq.sqrt();
        let v = Col::from_fn(dim, |n| if n % 2 == 1 { amps[n] * c1 } else { real(0.0) });
        (Some(v), c1)
    } else {
        (None, 0.0)
    };
    Ok(CatPair { even, odd, c0, c1 })
}

/// Probability mass of a state on the two highest retained levels.
pub fn boundary_mass(rho: faer::MatRef<'_, c64>) -> f64 {
    let d = rho.nrows();
    if d < 2 {
        return 0.0;
    }
    rho[(d - 1, d - 1)].re.abs() + rho[(d - 2, d - 2)].re.abs()
}
