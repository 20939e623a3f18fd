//! Dense complex-matrix kernel.
//!
//! Everything here is a thin layer over `faer`: spectral decompositions of
//! Hermitian matrices, singular values, the trace norm, positivity checks and
//! clustering of eigenvalues into distinct spectral levels with their
//! orthogonal projectors.

use faer::{c64, Col, Mat, MatRef, Side};
use log::debug;

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;
pub type CVec = Col<c64>;

/// Relative asymmetry accepted by [`eig_hermitian`] before it refuses input.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub fn ensure_square(m: MatRef<'_, c64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: MatRef<'_, c64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

pub fn ensure_dim(m: MatRef<'_, c64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: if m.nrows() != dim { m.nrows() } else { m.ncols() },
        });
    }
    Ok(())
}

pub fn identity(dim: usize) -> CMat {
    Mat::identity(dim, dim)
}

pub fn zeros(dim: usize) -> CMat {
    Mat::zeros(dim, dim)
}

pub fn real(x: f64) -> c64 {
    c64::new(x, 0.0)
}

pub fn scale(m: MatRef<'_, c64>, s: c64) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

pub fn dagger(m: MatRef<'_, c64>) -> CMat {
    m.adjoint().to_owned()
}

/// Symmetric part `(M + M†)/2`.
pub fn hermitian_part(m: MatRef<'_, c64>) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// Frobenius norm of `M − M†`.
pub fn asymmetry(m: MatRef<'_, c64>) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += (m[(i, j)] - m[(j, i)].conj()).norm_sqr();
        }
    }
    acc.sqrt()
}

pub fn is_hermitian(m: MatRef<'_, c64>, rel_tol: f64) -> bool {
    m.nrows() == m.ncols() && asymmetry(m) <= rel_tol * m.norm_l2().max(f64::MIN_POSITIVE)
}

pub fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn commutator(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    a * b + b * a
}

pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |r, c| {
        a[(r / p, c / q)] * b[(r % p, c % q)]
    })
}

/// Column-stacking vectorization, `vec(X)[i + j·n] = X[i, j]`.
pub fn vectorize(m: MatRef<'_, c64>) -> CVec {
    let n = m.nrows();
    Col::from_fn(n * m.ncols(), |k| m[(k % n, k / n)])
}

pub fn unvectorize(v: faer::ColRef<'_, c64>, dim: usize) -> CMat {
    Mat::from_fn(dim, dim, |i, j| v[i + j * dim])
}

pub fn outer(u: faer::ColRef<'_, c64>, v: faer::ColRef<'_, c64>) -> CMat {
    Mat::from_fn(u.nrows(), v.nrows(), |i, j| u[i] * v[j].conj())
}

pub fn pure_state(psi: faer::ColRef<'_, c64>) -> CMat {
    outer(psi, psi)
}

pub fn inner(u: faer::ColRef<'_, c64>, v: faer::ColRef<'_, c64>) -> c64 {
    (0..u.nrows()).map(|i| u[i].conj() * v[i]).sum()
}

/// `⟨ψ|M|ψ⟩`.
pub fn expectation(m: MatRef<'_, c64>, psi: faer::ColRef<'_, c64>) -> c64 {
    let mv = m * psi;
    inner(psi, mv.as_ref())
}

/// Largest singular value, the uniform norm ‖M‖∞.
pub fn op_norm(m: MatRef<'_, c64>) -> Result<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let sv = m
        .singular_values()
        .map_err(|e| Error::Numerical(format!("singular values did not converge: {e:?}")))?;
    Ok(sv.first().copied().unwrap_or(0.0))
}

pub fn singular_values(m: MatRef<'_, c64>) -> Result<Vec<f64>> {
    ensure_finite(m)?;
    m.singular_values()
        .map_err(|e| Error::Numerical(format!("singular values did not converge: {e:?}")))
}

/// Trace norm `tr √(M†M)`: the sum of singular values.
pub fn trace_norm(m: MatRef<'_, c64>) -> Result<f64> {
    ensure_square(m)?;
    Ok(singular_values(m)?.iter().sum())
}

/// Trace norm of a Hermitian matrix as `Σ|λᵢ|`; hermitizes first.
pub fn trace_norm_hermitian(m: MatRef<'_, c64>) -> Result<f64> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let values = hermitian_eigenvalues(hermitian_part(m).as_ref())?;
    Ok(values.iter().map(|x| x.abs()).sum())
}

#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered like `values`.
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Projector onto the span of eigenvectors whose eigenvalue satisfies `keep`.
    pub fn projector_where(&self, keep: impl Fn(f64) -> bool) -> CMat {
        let cols: Vec<usize> = (0..self.values.len()).filter(|&k| keep(self.values[k])).collect();
        projector_from_columns(self.vectors.as_ref(), &cols)
    }
}

fn hermitian_eigenvalues(m: MatRef<'_, c64>) -> Result<Vec<f64>> {
    let vals = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed: {e:?}")))?;
    Ok(vals)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Refuses input whose asymmetry exceeds `HERMITIAN_TOL` relative to its
/// Frobenius norm; call [`eig_hermitized`] for matrices that picked up
/// floating-point drift.
pub fn eig_hermitian(m: MatRef<'_, c64>) -> Result<HermitianEigen> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let asym = asymmetry(m);
    let norm = m.norm_l2();
    if asym > HERMITIAN_TOL * norm {
        return Err(Error::ContractViolation(format!(
            "matrix is not Hermitian: ‖M − M†‖ = {asym:.3e} against ‖M‖ = {norm:.3e}"
        )));
    }
    eig_hermitized(m)
}

/// Eigendecomposition of `(M + M†)/2`; the discarded asymmetry is logged.
pub fn eig_hermitized(m: MatRef<'_, c64>) -> Result<HermitianEigen> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let asym = asymmetry(m);
    if asym > 0.0 {
        debug!("hermitizing matrix with asymmetry {asym:.3e}");
    }
    let h = hermitian_part(m);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed: {e:?}")))?;
    let values = evd.S().column_vector().iter().map(|z| z.re).collect();
    Ok(HermitianEigen {
        values,
        vectors: evd.U().to_owned(),
    })
}

/// `U_S U_S†` for the listed columns of `u` (assumed orthonormal).
pub fn projector_from_columns(u: MatRef<'_, c64>, cols: &[usize]) -> CMat {
    let n = u.nrows();
    let mut p = Mat::zeros(n, n);
    for &k in cols {
        let v = u.col(k);
        for j in 0..n {
            let vj = v[j].conj();
            for i in 0..n {
                p[(i, j)] += v[i] * vj;
            }
        }
    }
    p
}

/// Orthonormal basis (as columns) of the range of a projector.
pub fn projector_basis(p: MatRef<'_, c64>) -> Result<CMat> {
    let evd = eig_hermitized(p)?;
    let cols: Vec<usize> = (0..evd.values.len()).filter(|&k| evd.values[k] > 0.5).collect();
    Ok(Mat::from_fn(p.nrows(), cols.len(), |i, j| evd.vectors[(i, cols[j])]))
}

pub fn projector_rank(p: MatRef<'_, c64>) -> usize {
    trace(p).re.round().max(0.0) as usize
}

/// Projector onto the span of eigenvectors of Hermitian `m` with eigenvalue above `tol`.
pub fn range_projector(m: MatRef<'_, c64>, tol: f64) -> Result<CMat> {
    Ok(eig_hermitized(m)?.projector_where(|x| x > tol))
}

/// Projector onto the span of eigenvectors of Hermitian `m` with `|λ| ≤ tol`.
pub fn kernel_projector(m: MatRef<'_, c64>, tol: f64) -> Result<CMat> {
    Ok(eig_hermitized(m)?.projector_where(|x| x.abs() <= tol))
}

/// Projector onto the intersection-free span of the columns of `m`, via SVD.
pub fn column_space_projector(m: MatRef<'_, c64>, rel_tol: f64) -> Result<CMat> {
    let n = m.nrows();
    if m.ncols() == 0 {
        return Ok(zeros(n));
    }
    let svd = m
        .svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let cols: Vec<usize> = (0..s.len()).filter(|&k| s[k] > rel_tol * smax.max(1.0)).collect();
    Ok(projector_from_columns(svd.U(), &cols))
}

/// `‖P − Q‖∞` for two orthogonal projectors.
pub fn subspace_distance(p: MatRef<'_, c64>, q: MatRef<'_, c64>) -> Result<f64> {
    let diff = p - q;
    Ok(eig_hermitized(diff.as_ref())?.max_abs())
}

/// Scale-aware clustering tolerance `1e-8·max(1, ‖M‖∞)`.
pub fn default_gap_tol(m: MatRef<'_, c64>) -> Result<f64> {
    let norm = eig_hermitized(m)?.max_abs();
    Ok(1e-8 * norm.max(1.0))
}

/// Distinct spectral levels `p₀ < p₁ < ⋯` of a Hermitian operator together
/// with the orthogonal projectors onto their eigenspaces.
#[derive(Debug, Clone)]
pub struct SpectrumClusters {
    pub levels: Vec<f64>,
    pub projectors: Vec<CMat>,
    pub ranks: Vec<usize>,
    pub gap_tol: f64,
}

impl SpectrumClusters {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `Σ pᵢ Pᵢ`.
    pub fn reconstruct(&self) -> CMat {
        let n = self.projectors.first().map_or(0, |p| p.nrows());
        let mut m = zeros(n);
        for (p, &l) in self.projectors.iter().zip(&self.levels) {
            m += scale(p.as_ref(), real(l));
        }
        m
    }
}

/// Group the spectrum of a Hermitian matrix into clusters. Adjacent
/// eigenvalues closer than `gap_tol` always land in the same cluster, so the
/// reported levels are strictly increasing with gaps above `gap_tol`.
pub fn cluster_spectrum(m: MatRef<'_, c64>, gap_tol: f64) -> Result<SpectrumClusters> {
    if !(gap_tol > 0.0) {
        return Err(Error::InvalidInput(format!("gap_tol must be positive, got {gap_tol}")));
    }
    let evd = eig_hermitian(m)?;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in 0..evd.values.len() {
        match groups.last_mut() {
            Some(g) if evd.values[k] - evd.values[*g.last().unwrap()] <= gap_tol => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    let levels = groups
        .iter()
        .map(|g| g.iter().map(|&k| evd.values[k]).sum::<f64>() / g.len() as f64)
        .collect();
    let projectors = groups
        .iter()
        .map(|g| projector_from_columns(evd.vectors.as_ref(), g))
        .collect();
    let ranks = groups.iter().map(Vec::len).collect();
    Ok(SpectrumClusters {
        levels,
        projectors,
        ranks,
        gap_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdCheck {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
}

/// `λ_min(M) ≥ −tol`, with the minimum eigenvalue always reported.
pub fn psd_check(m: MatRef<'_, c64>, tol: f64) -> Result<PsdCheck> {
    let evd = eig_hermitian(m)?;
    let min_eigenvalue = evd.min();
    Ok(PsdCheck {
        is_psd: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: MatRef<'_, c64>) -> Result<f64> {
    Ok(hermitian_eigenvalues(hermitian_part(m).as_ref())?
        .first()
        .copied()
        .unwrap_or(0.0))
}

/// `P M P` restricted to the range of `P`, expressed in the orthonormal basis `w`
/// (columns spanning the range).
pub fn compress(m: MatRef<'_, c64>, w: MatRef<'_, c64>) -> CMat {
    w.adjoint() * m * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(values: &[f64]) -> CMat {
        Mat::from_fn(values.len(), values.len(), |i, j| {
            if i == j {
                real(values[i])
            } else {
                c64::new(0.0, 0.0)
            }
        })
    }

    fn number(dim: usize) -> CMat {
        diag(&(0..dim).map(|n| n as f64).collect::<Vec<_>>())
    }

    #[test]
    fn trace_norm_of_orthogonal_pure_states() {
        let m = diag(&[1.0, -1.0]);
        assert_abs_diff_eq!(trace_norm(m.as_ref()).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_norm_of_overlapping_pure_states() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = Col::from_fn(2, |i| if i == 0 { real(1.0) } else { real(0.0) });
        let phi = Col::from_fn(2, |_| real(s));
        let m = pure_state(psi.as_ref()) - pure_state(phi.as_ref());
        assert_abs_diff_eq!(trace_norm(m.as_ref()).unwrap(), 2f64.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(trace_norm_hermitian(m.as_ref()).unwrap(), 2f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn trace_norm_rejects_nan() {
        let mut m = identity(2);
        m[(0, 1)] = c64::new(f64::NAN, 0.0);
        assert!(matches!(trace_norm(m.as_ref()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_sorts_ascending() {
        let e = eig_hermitian(diag(&[2.0, -1.0, 0.0]).as_ref()).unwrap();
        assert_eq!(e.values.len(), 3);
        for (got, want) in e.values.iter().zip([-1.0, 0.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        let e = eig_hermitian(identity(3).as_ref()).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let e = eig_hermitian(number(5).as_ref()).unwrap();
        for (k, v) in e.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, k as f64, epsilon = 1e-13);
        }
    }

    #[test]
    fn eig_residuals_are_small() {
        let m = Mat::from_fn(6, 6, |i, j| {
            let x = c64::new((i * j) as f64 * 0.3 + 1.0, i as f64 - j as f64);
            if i == j {
                real(x.re)
            } else {
                x
            }
        });
        let e = eig_hermitian(m.as_ref()).unwrap();
        let norm = e.max_abs();
        for k in 0..6 {
            let v = e.vectors.col(k);
            let r = &m * v - scale(v.as_mat(), real(e.values[k])).col(0);
            assert!(r.norm_l2() <= 1e-9 * norm);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut m = identity(2);
        m[(0, 1)] = real(1.0);
        assert!(matches!(eig_hermitian(m.as_ref()), Err(Error::ContractViolation(_))));
        assert!(eig_hermitized(m.as_ref()).is_ok());
    }

    #[test]
    fn clusters_of_number_operator() {
        let c = cluster_spectrum(number(4).as_ref(), 1e-8).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.ranks, vec![1, 1, 1, 1]);
        for (k, l) in c.levels.iter().enumerate() {
            assert_abs_diff_eq!(*l, k as f64, epsilon = 1e-13);
        }
    }

    #[test]
    fn identity_is_one_cluster() {
        for tol in [1e-12, 1e-3, 10.0] {
            let c = cluster_spectrum(identity(3).as_ref(), tol).unwrap();
            assert_eq!(c.levels.len(), 1);
            assert_abs_diff_eq!(c.levels[0], 1.0, epsilon = 1e-14);
            let d = &c.projectors[0] - identity(3);
            assert!(d.norm_max() < 1e-13);
        }
    }

    #[test]
    fn quadratic_number_operator_has_degenerate_ground() {
        let n = number(5);
        let v = &n * &n - &n;
        let c = cluster_spectrum(v.as_ref(), 1e-8).unwrap();
        assert_eq!(c.levels.len(), 4);
        for (got, want) in c.levels.iter().zip([0.0, 2.0, 6.0, 12.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(c.ranks[0], 2);
        let p0 = &c.projectors[0];
        assert_abs_diff_eq!(p0[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p0[(1, 1)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn close_eigenvalues_merge() {
        let c = cluster_spectrum(diag(&[0.0, 1e-9, 2e-9, 1.0]).as_ref(), 1e-8).unwrap();
        assert_eq!(c.ranks, vec![3, 1]);
        assert!(c.levels.windows(2).all(|w| w[1] - w[0] > c.gap_tol));
    }

    #[test]
    fn cluster_rejects_nonpositive_gap() {
        assert!(cluster_spectrum(identity(2).as_ref(), 0.0).is_err());
    }

    #[test]
    fn psd_witness() {
        let mut ket0 = zeros(2);
        ket0[(0, 0)] = real(1.0);
        let r = psd_check(ket0.as_ref(), 1e-12).unwrap();
        assert!(r.is_psd);
        assert_abs_diff_eq!(r.min_eigenvalue, 0.0, epsilon = 1e-15);
        let r = psd_check(diag(&[1.0, -1e-6]).as_ref(), 1e-9).unwrap();
        assert!(!r.is_psd);
        assert_abs_diff_eq!(r.min_eigenvalue, -1e-6, epsilon = 1e-15);
    }

    #[test]
    fn vectorization_is_column_major() {
        let m = Mat::from_fn(2, 2, |i, j| real((i + 2 * j) as f64));
        let v = vectorize(m.as_ref());
        assert_eq!(v[1], real(1.0));
        assert_eq!(v[2], real(2.0));
        let back = unvectorize(v.as_ref(), 2);
        assert_eq!(back, m);
    }

    #[test]
    fn kron_matches_vec_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let a = Mat::from_fn(3, 3, |i, j| c64::new(i as f64 + 0.5, j as f64));
        let b = Mat::from_fn(3, 3, |i, j| c64::new((i * j) as f64, 1.0 - i as f64));
        let x = Mat::from_fn(3, 3, |i, j| c64::new(j as f64, i as f64 * 0.25));
        let lhs = vectorize((&a * &x * &b).as_ref());
        let rhs = kron(b.transpose(), a.as_ref()) * vectorize(x.as_ref());
        assert!((lhs - rhs).norm_max() < 1e-12);
    }
}
