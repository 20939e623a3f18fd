//! Quantum dynamical semigroup generators in GKSL form.
//!
//! For a Hamiltonian `H` and couplings `L_k`, the Heisenberg-picture
//! generator acting on observables is
//!
//! ```text
//! 𝓛(X)  = i[H, X] + Σ_k ( L_k† X L_k − ½{L_k† L_k, X} )
//! ```
//!
//! and its predual, the master equation acting on states, is
//!
//! ```text
//! 𝓛*(ρ) = −i[H, ρ] + Σ_k ( L_k ρ L_k† − ½{L_k† L_k, ρ} )
//! ```
//!
//! with `tr(X 𝓛*(ρ)) = tr(𝓛(X) ρ)`.

use faer::{c64, Mat, MatRef};
use log::debug;

use crate::error::{Error, Result};
use crate::fock::{self, FockTruncation};
use crate::opalg::{self, dagger, ensure_dim, ensure_finite, ensure_square, real, scale, CMat, HERMITIAN_TOL};
use crate::random;

/// Largest Hilbert dimension for which the dense superoperator is built.
pub const MAX_SUPEROPERATOR_DIM: usize = 64;

pub const DEFAULT_NULL_REL_TOL: f64 = 1e-8;

/// Eigenvalues of `Σ|Bᵢ|` below this are treated as zero when forming the support.
pub const SUPPORT_EIGEN_TOL: f64 = 1e-8;

/// Mass on the top two Fock levels above which stationary operators are flagged.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SystemModel {
    dim: usize,
    hamiltonian: CMat,
    couplings: Vec<CMat>,
    label: String,
    truncation: Option<FockTruncation>,
    /// `Σ_k L_k† L_k`
    dissipation: CMat,
}

impl SystemModel {
    pub fn new(label: impl Into<String>, hamiltonian: CMat, couplings: Vec<CMat>) -> Result<Self> {
        let dim = ensure_square(hamiltonian.as_ref())?;
        if dim == 0 {
            return Err(Error::InvalidInput("model dimension must be positive".into()));
        }
        ensure_finite(hamiltonian.as_ref())?;
        if !opalg::is_hermitian(hamiltonian.as_ref(), HERMITIAN_TOL) {
            return Err(Error::InvalidInput(format!(
                "Hamiltonian is not Hermitian (asymmetry {:.3e})",
                opalg::asymmetry(hamiltonian.as_ref())
            )));
        }
        let mut dissipation = opalg::zeros(dim);
        for l in &couplings {
            ensure_dim(l.as_ref(), dim)?;
            ensure_finite(l.as_ref())?;
            dissipation += l.adjoint() * l;
        }
        Ok(Self {
            dim,
            hamiltonian: opalg::hermitian_part(hamiltonian.as_ref()),
            couplings,
            label: label.into(),
            truncation: None,
            dissipation,
        })
    }

    /// Marks the model as living on a truncated Fock space.
    pub fn with_truncation(mut self, truncation: FockTruncation) -> Result<Self> {
        if truncation.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: truncation.dim(),
            });
        }
        self.truncation = Some(truncation);
        Ok(self)
    }

    /// `H = (a − α)†(a − α)`, `L = √κ (a − α)`: a damped oscillator whose
    /// unique invariant state is the coherent state `|α⟩`.
    pub fn displaced_oscillator(dim: usize, alpha: c64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
        }
        let b = fock::ladder(dim)? - scale(opalg::identity(dim).as_ref(), alpha);
        let h = b.adjoint() * &b;
        let l = scale(b.as_ref(), real(kappa.sqrt()));
        Self::new(
            format!("displaced oscillator (alpha={alpha}, kappa={kappa})"),
            h,
            vec![l],
        )?
        .with_truncation(FockTruncation::new(dim, fock::DEFAULT_TAIL_TOL)?)
    }

    /// `H = 0`, `L = a² − α²`: two-photon loss with a two-photon drive, whose
    /// invariant states live on the even/odd cat span.
    pub fn two_photon_loss(dim: usize, alpha: c64) -> Result<Self> {
        let a = fock::ladder(dim)?;
        let l = &a * &a - scale(opalg::identity(dim).as_ref(), alpha * alpha);
        Self::new(format!("two-photon loss (alpha={alpha})"), opalg::zeros(dim), vec![l])?
            .with_truncation(FockTruncation::new(dim, fock::DEFAULT_TAIL_TOL)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMat {
        &self.hamiltonian
    }

    pub fn couplings(&self) -> &[CMat] {
        &self.couplings
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn truncation(&self) -> Option<&FockTruncation> {
        self.truncation.as_ref()
    }

    pub fn dissipation(&self) -> &CMat {
        &self.dissipation
    }

    /// `H − (i/2) Σ L_k† L_k`.
    pub fn effective_hamiltonian(&self) -> CMat {
        &self.hamiltonian + scale(self.dissipation.as_ref(), c64::new(0.0, -0.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMat,
    psd_tol: f64,
    trace_tol: f64,
}

impl DensityOperator {
    pub const DEFAULT_PSD_TOL: f64 = 1e-9;
    pub const DEFAULT_TRACE_TOL: f64 = 1e-9;

    pub fn new(matrix: CMat) -> Result<Self> {
        Self::with_tolerances(matrix, Self::DEFAULT_PSD_TOL, Self::DEFAULT_TRACE_TOL)
    }

    pub fn with_tolerances(matrix: CMat, psd_tol: f64, trace_tol: f64) -> Result<Self> {
        ensure_square(matrix.as_ref())?;
        ensure_finite(matrix.as_ref())?;
        let asym = opalg::asymmetry(matrix.as_ref());
        if asym > HERMITIAN_TOL * matrix.norm_l2().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "density operator is not Hermitian (asymmetry {asym:.3e})"
            )));
        }
        let matrix = opalg::hermitian_part(matrix.as_ref());
        let tr = opalg::trace(matrix.as_ref()).re;
        if (tr - 1.0).abs() > trace_tol {
            return Err(Error::InvalidInput(format!("density operator has trace {tr}")));
        }
        let min = opalg::min_eigenvalue(matrix.as_ref())?;
        if min < -psd_tol {
            return Err(Error::InvalidInput(format!(
                "density operator has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self {
            matrix,
            psd_tol,
            trace_tol,
        })
    }

    /// For callers that have already checked trace and spectrum.
    pub(crate) fn from_checked(matrix: CMat, psd_tol: f64, trace_tol: f64) -> Self {
        Self {
            matrix,
            psd_tol,
            trace_tol,
        }
    }

    /// `|ψ⟩⟨ψ|` for a vector normalized within 1e-12.
    pub fn pure(psi: faer::ColRef<'_, c64>) -> Result<Self> {
        let norm = psi.norm_l2();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("state vector has norm {norm}")));
        }
        Self::new(opalg::pure_state(psi))
    }

    pub fn number(dim: usize, n: usize) -> Result<Self> {
        Self::pure(fock::number_state(dim, n)?.as_ref())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: scale(opalg::identity(dim).as_ref(), real(1.0 / dim as f64)),
            psd_tol: Self::DEFAULT_PSD_TOL,
            trace_tol: Self::DEFAULT_TRACE_TOL,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn psd_tol(&self) -> f64 {
        self.psd_tol
    }

    pub fn trace_tol(&self) -> f64 {
        self.trace_tol
    }

    /// `⟨ψ|ρ|ψ⟩`
    pub fn fidelity_with_pure(&self, psi: faer::ColRef<'_, c64>) -> f64 {
        opalg::expectation(self.matrix.as_ref(), psi).re
    }
}

/// Heisenberg-picture generator `𝓛(X)`.
pub fn adjoint_generator(model: &SystemModel, x: MatRef<'_, c64>) -> Result<CMat> {
    ensure_dim(x, model.dim)?;
    let h = model.hamiltonian.as_ref();
    let mut out = scale(opalg::commutator(h, x).as_ref(), c64::new(0.0, 1.0));
    for l in &model.couplings {
        out += l.adjoint() * x * l;
    }
    let k = model.dissipation.as_ref();
    out -= scale(opalg::anticommutator(k, x).as_ref(), real(0.5));
    Ok(out)
}

/// Master-equation right-hand side `𝓛*(M)` for an arbitrary square matrix.
pub fn apply_predual(model: &SystemModel, m: MatRef<'_, c64>) -> Result<CMat> {
    ensure_dim(m, model.dim)?;
    let h = model.hamiltonian.as_ref();
    let mut out = scale(opalg::commutator(h, m).as_ref(), c64::new(0.0, -1.0));
    for l in &model.couplings {
        out += l * m * l.adjoint();
    }
    let k = model.dissipation.as_ref();
    out -= scale(opalg::anticommutator(k, m).as_ref(), real(0.5));
    Ok(out)
}

/// `𝓛*(ρ)`, the master equation evaluated at a state.
pub fn predual_generator(model: &SystemModel, rho: &DensityOperator) -> Result<CMat> {
    apply_predual(model, rho.matrix().as_ref())
}

/// Dense matrix of `𝓛*` acting on column-stacked operators.
#[derive(Debug, Clone)]
pub struct Superoperator {
    dim: usize,
    matrix: CMat,
    self_test_error: f64,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Largest relative mismatch seen by the construction self-test.
    pub fn self_test_error(&self) -> f64 {
        self.self_test_error
    }

    pub fn apply(&self, m: MatRef<'_, c64>) -> Result<CMat> {
        ensure_dim(m, self.dim)?;
        let v = &self.matrix * opalg::vectorize(m);
        Ok(opalg::unvectorize(v.as_ref(), self.dim))
    }
}

/// Assembles `−i(1⊗H − Hᵀ⊗1) + Σ_k (L̄_k⊗L_k) − ½(1⊗K + Kᵀ⊗1)` and checks it
/// against [`apply_predual`] on 20 random states.
pub fn superoperator(model: &SystemModel) -> Result<Superoperator> {
    let d = model.dim;
    if d > MAX_SUPEROPERATOR_DIM {
        return Err(Error::Resource(format!(
            "superoperator for dim {d} exceeds the dim {MAX_SUPEROPERATOR_DIM} cap"
        )));
    }
    let n = d * d;
    let h = &model.hamiltonian;
    let k = &model.dissipation;
    // Left multiplication by A: 1⊗A; right multiplication by B: Bᵀ⊗1.
    let mut s: CMat = Mat::from_fn(n, n, |r, c| {
        let (i, j) = (r % d, r / d);
        let (p, q) = (c % d, c / d);
        let mut z = c64::new(0.0, 0.0);
        if j == q {
            // (1⊗A)[(i,j),(p,q)] = A[i,p] δ_jq
            z += h[(i, p)] * c64::new(0.0, -1.0) - k[(i, p)] * 0.5;
        }
        if i == p {
            // (Bᵀ⊗1)[(i,j),(p,q)] = B[q,j] δ_ip
            z += h[(q, j)] * c64::new(0.0, 1.0) - k[(q, j)] * 0.5;
        }
        z
    });
    for l in &model.couplings {
        // (L̄⊗L)[(i,j),(p,q)] = conj(L[j,q]) L[i,p]
        for q in 0..d {
            for j in 0..d {
                let lbar = l[(j, q)].conj();
                if lbar == c64::new(0.0, 0.0) {
                    continue;
                }
                for p in 0..d {
                    for i in 0..d {
                        let lv = l[(i, p)];
                        if lv != c64::new(0.0, 0.0) {
                            s[(i + j * d, p + q * d)] += lbar * lv;
                        }
                    }
                }
            }
        }
    }
    let mut sup = Superoperator {
        dim: d,
        matrix: s,
        self_test_error: 0.0,
    };
    sup.self_test_error = self_test(model, &sup, 20, random::DEFAULT_SEED)?;
    Ok(sup)
}

fn self_test(model: &SystemModel, sup: &Superoperator, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = random::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let rho = random::density_any_rank(&mut rng, model.dim);
        let direct = apply_predual(model, rho.as_ref())?;
        let via = sup.apply(rho.as_ref())?;
        let err = (&direct - &via).norm_max() / direct.norm_max().max(1.0);
        worst = worst.max(err);
    }
    if worst > 1e-12 {
        return Err(Error::Numerical(format!(
            "superoperator self-test mismatch {worst:.3e} exceeds 1e-12"
        )));
    }
    Ok(worst)
}

/// Invariant operators of the semigroup: a Hermitian basis of `ker 𝓛*`.
#[derive(Debug, Clone)]
pub struct StationarySet {
    /// Frobenius-orthonormal Hermitian matrices spanning `ker 𝓛* ∩ Herm`.
    pub operator_basis: Vec<CMat>,
    /// Projector onto the union of supports of the invariant states.
    pub support_projector: CMat,
    /// Absolute singular-value threshold used to decide the null space.
    pub null_tol: f64,
    /// Largest singular value of the superoperator.
    pub sigma_max: f64,
    /// Smallest singular value kept out of the null space, if any.
    pub first_excluded_singular_value: Option<f64>,
    /// Normalized `Σ|Bᵢ|`, an invariant state of maximal support.
    pub representative: Option<DensityOperator>,
    /// `‖𝓛*(representative)‖₁`.
    pub representative_residual: f64,
    /// Some basis element puts more than 1e-6 of its mass on the top two Fock levels.
    pub truncation_suspect: bool,
}

impl StationarySet {
    pub fn dimension(&self) -> usize {
        self.operator_basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operator_basis.is_empty()
    }

    pub fn support_rank(&self) -> usize {
        opalg::projector_rank(self.support_projector.as_ref())
    }

    /// Invariant density operators extracted from the basis: normalized
    /// positive and negative parts of each element, plus the representative.
    pub fn densities(&self) -> Result<Vec<CMat>> {
        let mut out = Vec::new();
        for b in &self.operator_basis {
            let evd = opalg::eig_hermitized(b.as_ref())?;
            for sign in [1.0, -1.0] {
                let part = positive_part(&evd, sign);
                let tr = opalg::trace(part.as_ref()).re;
                if tr > 1e-8 {
                    out.push(scale(part.as_ref(), real(1.0 / tr)));
                }
            }
        }
        if let Some(rep) = &self.representative {
            out.push(rep.matrix().clone());
        }
        Ok(out)
    }
}

/// Positive part of `sign · B` given the eigendecomposition of `B`.
fn positive_part(evd: &opalg::HermitianEigen, sign: f64) -> CMat {
    let n = evd.vectors.nrows();
    let mut out = opalg::zeros(n);
    for (k, &v) in evd.values.iter().enumerate() {
        let w = sign * v;
        if w > 0.0 {
            let u = evd.vectors.col(k);
            out += scale(opalg::outer(u, u).as_ref(), real(w));
        }
    }
    out
}

/// Orthonormal real coordinates of a Hermitian matrix (diagonal, then √2·Re/Im
/// of the strict upper triangle).
fn hermitian_coordinates(m: MatRef<'_, c64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    let s = std::f64::consts::SQRT_2;
    for i in 0..d {
        out.push(m[(i, i)].re);
    }
    for j in 0..d {
        for i in 0..j {
            out.push(s * m[(i, j)].re);
            out.push(s * m[(i, j)].im);
        }
    }
    out
}

fn from_hermitian_coordinates(x: &[f64], d: usize) -> CMat {
    let mut m = opalg::zeros(d);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        m[(i, i)] = real(x[i]);
    }
    let mut k = d;
    for j in 0..d {
        for i in 0..j {
            let z = c64::new(s * x[k], s * x[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Invariant operators from a full SVD of the superoperator.
///
/// `null_rel_tol` defaults to 1e-8; singular values at or below
/// `null_rel_tol · σ_max` span the null space.
pub fn stationary_states(model: &SystemModel, sup: &Superoperator, null_rel_tol: Option<f64>) -> Result<StationarySet> {
    if sup.dim != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: sup.dim,
        });
    }
    let d = model.dim;
    let rel = null_rel_tol.unwrap_or(DEFAULT_NULL_REL_TOL);
    let svd = sup
        .matrix
        .svd()
        .map_err(|e| Error::Numerical(format!("superoperator SVD failed: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let null_tol = rel * sigma_max;
    let null_cols: Vec<usize> = (0..s.len()).filter(|&k| s[k] <= null_tol).collect();
    let first_excluded_singular_value = s.iter().rev().find(|&&x| x > null_tol).copied();
    debug!(
        "stationary_states: {} null directions below {null_tol:.3e}, next singular value {:?}",
        null_cols.len(),
        first_excluded_singular_value
    );

    // Split each null vector into Hermitian and anti-Hermitian parts and
    // re-orthogonalize in the real space of Hermitian matrices.
    let k = null_cols.len();
    let mut coords = Mat::<f64>::zeros(d * d, 2 * k);
    for (c, &col) in null_cols.iter().enumerate() {
        let b = opalg::unvectorize(svd.V().col(col), d);
        let bd = dagger(b.as_ref());
        let herm = Mat::from_fn(d, d, |i, j| (b[(i, j)] + bd[(i, j)]) * 0.5);
        let anti = Mat::from_fn(d, d, |i, j| (b[(i, j)] - bd[(i, j)]) * c64::new(0.0, -0.5));
        for (slot, m) in [(2 * c, herm), (2 * c + 1, anti)] {
            for (r, x) in hermitian_coordinates(m.as_ref()).into_iter().enumerate() {
                coords[(r, slot)] = x;
            }
        }
    }
    let mut operator_basis = Vec::with_capacity(k);
    if k > 0 {
        let basis_svd = coords
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("Hermitian basis SVD failed: {e:?}")))?;
        let u = basis_svd.U();
        for c in 0..k {
            let x: Vec<f64> = (0..d * d).map(|r| u[(r, c)]).collect();
            operator_basis.push(from_hermitian_coordinates(&x, d));
        }
    }

    let mut abs_sum = opalg::zeros(d);
    let mut truncation_suspect = false;
    for b in &operator_basis {
        let evd = opalg::eig_hermitized(b.as_ref())?;
        let abs = positive_part(&evd, 1.0) + positive_part(&evd, -1.0);
        if model.truncation.is_some() {
            let total = opalg::trace(abs.as_ref()).re;
            if fock::boundary_mass(abs.as_ref()) > BOUNDARY_MASS_TOL * total {
                truncation_suspect = true;
            }
        }
        abs_sum += abs;
    }
    let support_projector = opalg::range_projector(abs_sum.as_ref(), SUPPORT_EIGEN_TOL)?;

    let tr = opalg::trace(abs_sum.as_ref()).re;
    let (representative, representative_residual) = if k > 0 && tr > 0.0 {
        let m = scale(abs_sum.as_ref(), real(1.0 / tr));
        let rho = DensityOperator::with_tolerances(m, 1e-8, 1e-8)?;
        let res = opalg::trace_norm_hermitian(predual_generator(model, &rho)?.as_ref())?;
        (Some(rho), res)
    } else {
        (None, f64::INFINITY)
    };

    Ok(StationarySet {
        operator_basis,
        support_projector,
        null_tol,
        sigma_max,
        first_excluded_singular_value,
        representative,
        representative_residual,
        truncation_suspect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGap {
    /// `−max{Re λ : Re λ < −decay_tol}`, zero if no eigenvalue decays.
    pub gap: f64,
    /// Eigenvalue attaining the gap.
    pub slowest_mode: Option<c64>,
    pub decay_tol: f64,
}

/// Spectral gap of the superoperator. `decay_tol` defaults to
/// `1e-8 · max(1, ‖S‖_F)`.
pub fn spectral_gap(sup: &Superoperator, decay_tol: Option<f64>) -> Result<SpectralGap> {
    let decay_tol = decay_tol.unwrap_or_else(|| 1e-8 * sup.matrix.norm_l2().max(1.0));
    let ev = sup
        .matrix
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("superoperator eigenvalues failed: {e:?}")))?;
    let slowest = ev
        .iter()
        .filter(|z| z.re < -decay_tol)
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .copied();
    Ok(SpectralGap {
        gap: slowest.map_or(0.0, |z| -z.re),
        slowest_mode: slowest,
        decay_tol,
    })
}

/// All eigenvalues of the superoperator.
pub fn superoperator_spectrum(sup: &Superoperator) -> Result<Vec<c64>> {
    sup.matrix
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("superoperator eigenvalues failed: {e:?}")))
}
