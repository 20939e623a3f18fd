//! Lyapunov certificates for the invariant set of a semigroup.
//!
//! Every trace inequality over all states is decided at operator level:
//! `tr(Mρ) ≤ 0` for all states `ρ` iff `M ⪯ 0`. Verdicts are sufficient
//! conditions; an inconclusive verdict says nothing about instability.

use faer::{c64, MatRef};
use log::debug;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gksl::{self, DensityOperator, StationarySet, SystemModel};
use crate::opalg::{self, real, scale, CMat, HERMITIAN_TOL};
use crate::random;
use crate::search;

/// Projector comparisons for subspaces use this operator-norm tolerance.
pub const SUBSPACE_TOL: f64 = 1e-7;

/// Lowest spectral cluster of a Hermitian operator and the gap above it.
#[derive(Debug, Clone)]
pub struct GroundSet {
    pub projector: CMat,
    pub rank: usize,
    pub p0: f64,
    pub p1: f64,
    /// `(p1 − p0)/4`, the quadratic growth constant away from the ground set.
    pub kappa: f64,
    pub gap_tol: f64,
}

/// Ground set of `a`; `gap_tol` defaults to `1e-8 · max(1, ‖a‖)`.
pub fn ground_set(a: MatRef<'_, c64>, gap_tol: Option<f64>) -> Result<GroundSet> {
    opalg::ensure_square(a)?;
    if !opalg::is_hermitian(a, HERMITIAN_TOL) {
        return Err(Error::InvalidInput(format!(
            "ground set needs a Hermitian operator (asymmetry {:.3e})",
            opalg::asymmetry(a)
        )));
    }
    let gap_tol = match gap_tol {
        Some(t) => t,
        None => opalg::default_gap_tol(a)?,
    };
    let clusters = opalg::cluster_spectrum(a, gap_tol)?;
    if clusters.len() < 2 {
        return Err(Error::DegenerateGroundSet {
            level: clusters.levels[0],
        });
    }
    let (p0, p1) = (clusters.levels[0], clusters.levels[1]);
    Ok(GroundSet {
        projector: clusters.projectors[0].clone(),
        rank: clusters.ranks[0],
        p0,
        p1,
        kappa: (p1 - p0) / 4.0,
        gap_tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StrictMinimumReport {
    pub holds: bool,
    pub stationary_support_rank: usize,
    pub ground_rank: usize,
    /// `‖P_stationary − P0‖` in operator norm.
    pub projector_distance: f64,
}

/// Compares the stationary support with the ground set of `A`.
pub fn strict_minimum_check_with(stationary: &StationarySet, gs: &GroundSet) -> Result<StrictMinimumReport> {
    let distance = opalg::subspace_distance(stationary.support_projector.as_ref(), gs.projector.as_ref())?;
    Ok(StrictMinimumReport {
        holds: distance <= SUBSPACE_TOL,
        stationary_support_rank: stationary.support_rank(),
        ground_rank: gs.rank,
        projector_distance: distance,
    })
}

/// Builds the superoperator and stationary set, then runs the comparison.
pub fn strict_minimum_check(
    model: &SystemModel,
    a: MatRef<'_, c64>,
    gap_tol: Option<f64>,
    null_rel_tol: Option<f64>,
) -> Result<StrictMinimumReport> {
    let gs = ground_set(a, gap_tol)?;
    let sup = gksl::superoperator(model)?;
    let set = gksl::stationary_states(model, &sup, null_rel_tol)?;
    strict_minimum_check_with(&set, &gs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Lyapunov,
    GlobalAsymptotic,
    GlobalExponential,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Lyapunov => "lyapunov",
            Verdict::GlobalAsymptotic => "global_asymptotic",
            Verdict::GlobalExponential => "global_exponential",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateTolerances {
    /// PSD slack relative to `max(1, ‖𝓛(V)‖)`.
    pub psd_rel_tol: f64,
    /// Eigenvalues of `−𝓛(V)` below this (relative) span its kernel.
    pub kernel_rel_tol: f64,
    /// Smallest decay rate reported as exponential.
    pub min_gamma: f64,
    pub bisection_steps: usize,
    pub gap_tol: Option<f64>,
    pub null_rel_tol: Option<f64>,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        Self {
            psd_rel_tol: 1e-9,
            kernel_rel_tol: 1e-8,
            min_gamma: 1e-6,
            bisection_steps: 40,
            gap_tol: None,
            null_rel_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertificateScope {
    FullSpace,
    /// Fock levels `0..levels`, excluding the two truncation-boundary levels.
    InteriorLevels {
        levels: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Witnesses {
    pub scope: CertificateScope,
    /// Smallest eigenvalue of `−𝓛(V)` on the full truncated space.
    pub min_eigenvalue_full: f64,
    /// Smallest eigenvalue of `−𝓛(V)` on the certified scope.
    pub min_eigenvalue: f64,
    pub psd_tol: f64,
    pub lyapunov_holds: bool,
    pub kernel_rank: usize,
    /// `‖(1 − P0) K‖` for an orthonormal basis `K` of `ker 𝓛(V)`.
    pub kernel_leak: f64,
    pub asymptotic_holds: bool,
    pub exponential_holds: bool,
    pub strict_minimum: StrictMinimumReport,
    pub p0: f64,
    pub p1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// Decay rate with `𝓛(V) ⪯ −γ(V − p0)` (exponential branch only).
    pub gamma: Option<f64>,
    /// `γ · p0`, the offset restoring the unshifted inequality.
    pub zeta: Option<f64>,
    pub witnesses: Witnesses,
    pub caveats: Vec<String>,
}

struct ScopedTests {
    min_eigenvalue: f64,
    lyapunov: bool,
    kernel_rank: usize,
    kernel_leak: f64,
    asymptotic: bool,
    gamma: f64,
    gs: GroundSet,
}

fn scoped_tests(neg_lv: &CMat, v: &CMat, tols: &CertificateTolerances) -> Result<ScopedTests> {
    let scale_lv = neg_lv.norm_l2().max(1.0);
    let psd_tol = tols.psd_rel_tol * scale_lv;
    let evd = opalg::eig_hermitized(neg_lv.as_ref())?;
    let min_eigenvalue = evd.min();
    let lyapunov = min_eigenvalue >= -psd_tol;
    let gs = ground_set(v.as_ref(), tols.gap_tol)?;

    let kernel_tol = tols.kernel_rel_tol * scale_lv;
    let kernel_cols: Vec<usize> = (0..evd.values.len())
        .filter(|&k| evd.values[k].abs() <= kernel_tol)
        .collect();
    let mut kernel_leak = 0.0;
    if !kernel_cols.is_empty() {
        let k = faer::Mat::from_fn(evd.vectors.nrows(), kernel_cols.len(), |i, j| {
            evd.vectors[(i, kernel_cols[j])]
        });
        let outside = opalg::identity(v.nrows()) - &gs.projector;
        kernel_leak = opalg::op_norm((&outside * &k).as_ref())?;
    }
    let asymptotic = lyapunov && kernel_leak <= SUBSPACE_TOL;

    let gamma = if asymptotic {
        let shifted = v - scale(opalg::identity(v.nrows()).as_ref(), real(gs.p0));
        let feasible = |g: f64| -> Result<bool> {
            let m = neg_lv - scale(shifted.as_ref(), real(g));
            Ok(opalg::min_eigenvalue(opalg::hermitian_part(m.as_ref()).as_ref())? >= -psd_tol)
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while feasible(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                break;
            }
        }
        for _ in 0..tols.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    } else {
        0.0
    };
    Ok(ScopedTests {
        min_eigenvalue,
        lyapunov,
        kernel_rank: kernel_cols.len(),
        kernel_leak,
        asymptotic,
        gamma,
        gs,
    })
}

/// Classifies the stability of the invariant set with Lyapunov operator `v`.
pub fn classify_stability(
    model: &SystemModel,
    v: MatRef<'_, c64>,
    tols: &CertificateTolerances,
) -> Result<StabilityReport> {
    let sup = gksl::superoperator(model)?;
    let set = gksl::stationary_states(model, &sup, tols.null_rel_tol)?;
    classify_stability_with(model, v, &set, tols)
}

/// As [`classify_stability`], reusing a computed stationary set.
pub fn classify_stability_with(
    model: &SystemModel,
    v: MatRef<'_, c64>,
    stationary: &StationarySet,
    tols: &CertificateTolerances,
) -> Result<StabilityReport> {
    opalg::ensure_dim(v, model.dim())?;
    if !opalg::is_hermitian(v, HERMITIAN_TOL) {
        return Err(Error::InvalidInput(format!(
            "Lyapunov operator is not Hermitian (asymmetry {:.3e})",
            opalg::asymmetry(v)
        )));
    }
    let v = opalg::hermitian_part(v);
    let gs_full = ground_set(v.as_ref(), tols.gap_tol)?;
    let strict = strict_minimum_check_with(stationary, &gs_full)?;
    let neg_lv = scale(gksl::adjoint_generator(model, v.as_ref())?.as_ref(), real(-1.0));
    let neg_lv = opalg::hermitian_part(neg_lv.as_ref());

    let mut caveats = Vec::new();
    let full = scoped_tests(&neg_lv, &v, tols)?;
    let min_eigenvalue_full = full.min_eigenvalue;
    let mut scope = CertificateScope::FullSpace;
    let mut tests = full;

    let d = model.dim();
    if !tests.lyapunov && model.truncation().is_some() && d > 3 {
        let levels = d - 2;
        let w = faer::Mat::from_fn(d, levels, |i, j| if i == j { real(1.0) } else { real(0.0) });
        let neg_int = opalg::compress(neg_lv.as_ref(), w.as_ref());
        let v_int = opalg::compress(v.as_ref(), w.as_ref());
        match scoped_tests(&neg_int, &v_int, tols) {
            Ok(interior) if interior.lyapunov => {
                debug!("certificate holds on interior levels 0..{levels}");
                caveats.push(format!(
                    "boundary-affected: the operator inequality fails on the full truncated space \
                     (smallest eigenvalue of -L(V) is {min_eigenvalue_full:.3e}) and is certified on \
                     Fock levels 0..{} only; the failure comes from the two truncation-boundary levels",
                    levels - 1
                ));
                scope = CertificateScope::InteriorLevels { levels };
                tests = interior;
            }
            Ok(_) => {}
            Err(e) => debug!("interior retry failed: {e}"),
        }
    }

    let exponential = tests.asymptotic && tests.gamma >= tols.min_gamma;
    let mut verdict = if exponential {
        Verdict::GlobalExponential
    } else if tests.asymptotic {
        Verdict::GlobalAsymptotic
    } else if tests.lyapunov {
        Verdict::Lyapunov
    } else {
        Verdict::Inconclusive
    };
    if !strict.holds {
        caveats.push(format!(
            "strict minimum fails: the stationary support (rank {}) differs from the ground set of V \
             (rank {}), distance {:.3e}; the operator tests are reported but certify nothing",
            strict.stationary_support_rank, strict.ground_rank, strict.projector_distance
        ));
        verdict = Verdict::Inconclusive;
    }
    if stationary.truncation_suspect {
        caveats.push("stationary operators carry mass on the truncation boundary; increase dim".into());
    }
    if verdict != Verdict::Inconclusive {
        caveats.push(
            "sufficient-condition certificate; global because the local and global notions coincide \
             for this invariant set"
                .into(),
        );
    }

    let (gamma, zeta) = if verdict == Verdict::GlobalExponential {
        (Some(tests.gamma), Some(tests.gamma * tests.gs.p0))
    } else {
        (None, None)
    };
    let psd_tol = tols.psd_rel_tol * neg_lv.norm_l2().max(1.0);
    Ok(StabilityReport {
        verdict,
        gamma,
        zeta,
        witnesses: Witnesses {
            scope,
            min_eigenvalue_full,
            min_eigenvalue: tests.min_eigenvalue,
            psd_tol,
            lyapunov_holds: tests.lyapunov,
            kernel_rank: tests.kernel_rank,
            kernel_leak: tests.kernel_leak,
            asymptotic_holds: tests.asymptotic,
            exponential_holds: exponential,
            strict_minimum: strict,
            p0: gs_full.p0,
            p1: gs_full.p1,
        },
        caveats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// `2·tr((1 − P0)ρ)`
    ProjectorWitness,
    /// `√((tr(Aρ) − p0)/κ)`
    EnergyGap,
    /// `‖ρ − P0ρP0/tr(P0ρP0)‖₁`
    Renormalized,
    /// The trivial bound 2.
    Diameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceBracket {
    pub lower: f64,
    pub upper: f64,
    pub lower_method: BoundMethod,
    pub upper_method: BoundMethod,
}

/// Bounds on `min ‖ρ − σ‖₁` over states `σ` supported on the ground set.
pub fn distance_bracket(rho: &DensityOperator, gs: &GroundSet, a: MatRef<'_, c64>) -> Result<DistanceBracket> {
    let r = rho.matrix();
    opalg::ensure_dim(a, r.nrows())?;
    opalg::ensure_dim(gs.projector.as_ref(), r.nrows())?;
    let energy = opalg::trace_product(a, r.as_ref()).re;
    if energy < gs.p0 - 1e-10 {
        return Err(Error::Precondition(format!(
            "tr(A rho) = {energy} lies below the ground level {}; A and the ground set do not match",
            gs.p0
        )));
    }
    let inside = opalg::trace_product(gs.projector.as_ref(), r.as_ref()).re;
    let lower = (2.0 * (1.0 - inside)).clamp(0.0, 2.0);

    let mut upper = 2.0;
    let mut upper_method = BoundMethod::Diameter;
    let gap = ((energy - gs.p0).max(0.0) / gs.kappa).sqrt();
    if gap < upper {
        upper = gap;
        upper_method = BoundMethod::EnergyGap;
    }
    if inside >= 1e-12 {
        let p = &gs.projector;
        let proj = scale((p * r * p).as_ref(), real(1.0 / inside));
        let renorm = opalg::trace_norm_hermitian((r - proj).as_ref())?;
        if renorm < upper {
            upper = renorm;
            upper_method = BoundMethod::Renormalized;
        }
    }
    if lower > upper + 1e-9 {
        return Err(Error::Numerical(format!(
            "distance bracket inverted: lower {lower} > upper {upper}"
        )));
    }
    Ok(DistanceBracket {
        lower: lower.min(upper),
        upper,
        lower_method: BoundMethod::ProjectorWitness,
        upper_method,
    })
}

/// Eigenvalue mass of `ρ` that may be dropped when compressing.
const COMPRESSION_MASS: f64 = 1e-14;

/// Restricts `ρ` and `W` to the span of `range ρ ∪ range W`, where `ρ − WσW†`
/// lives. Eigenvectors of `ρ` carrying total weight below 1e-14 are dropped,
/// which moves the trace norm by at most that much.
fn reduce_to_joint_support(rho: &CMat, w: &CMat) -> Result<(CMat, CMat)> {
    let d = rho.nrows();
    let evd = opalg::eig_hermitized(rho.as_ref())?;
    let mut dropped = 0.0;
    let mut first_kept = 0;
    while first_kept < d && dropped + evd.values[first_kept].abs() <= COMPRESSION_MASS {
        dropped += evd.values[first_kept].abs();
        first_kept += 1;
    }
    let kept = d - first_kept;
    if kept + w.ncols() >= d {
        return Ok((rho.clone(), w.clone()));
    }
    let joint = faer::Mat::from_fn(d, kept + w.ncols(), |i, j| {
        if j < kept {
            evd.vectors[(i, first_kept + j)]
        } else {
            w[(i, j - kept)]
        }
    });
    let q = opalg::projector_basis(opalg::column_space_projector(joint.as_ref(), 1e-12)?.as_ref())?;
    let vk = evd.vectors.get(.., first_kept..);
    let lam = faer::Mat::from_fn(kept, kept, |i, j| {
        if i == j {
            real(evd.values[first_kept + i])
        } else {
            real(0.0)
        }
    });
    let trimmed = vk * lam * vk.adjoint();
    Ok((q.adjoint() * trimmed * &q, q.adjoint() * w))
}

/// Largest ground-set rank accepted by [`brute_force_distance`].
pub const BRUTE_FORCE_MAX_RANK: usize = 3;
pub const BRUTE_FORCE_STARTS: usize = 32;

/// `min ‖ρ − σ‖₁` over states `σ` supported on the range of `p0`, by
/// Nelder–Mead from 32 seeded starts. `budget` caps evaluations per start.
///
/// `σ = W (BB†/tr BB†) W†` with `B` lower triangular, which covers every state
/// on the subspace.
pub fn brute_force_distance(rho: &DensityOperator, p0: MatRef<'_, c64>, seed: u64, budget: usize) -> Result<f64> {
    let d = rho.dim();
    opalg::ensure_dim(p0, d)?;
    let w = opalg::projector_basis(p0)?;
    let r = w.ncols();
    if r == 0 {
        return Err(Error::InvalidInput("ground projector is zero".into()));
    }
    if r > BRUTE_FORCE_MAX_RANK {
        return Err(Error::Resource(format!(
            "brute-force distance supports rank <= {BRUTE_FORCE_MAX_RANK}, got {r}"
        )));
    }
    let (rm, w) = reduce_to_joint_support(rho.matrix(), &w)?;
    let d = rm.nrows();
    let mut buf = vec![c64::new(0.0, 0.0); d * d];
    let mut objective = |x: &[f64]| -> f64 {
        // Unpack the lower-triangular factor.
        let mut b = vec![c64::new(0.0, 0.0); r * r];
        let mut k = 0;
        for i in 0..r {
            b[i * r + i] = c64::new(x[k], 0.0);
            k += 1;
        }
        for i in 0..r {
            for j in 0..i {
                b[i * r + j] = c64::new(x[k], x[k + 1]);
                k += 2;
            }
        }
        // s = B B†, normalized.
        let mut s = vec![c64::new(0.0, 0.0); r * r];
        let mut tr = 0.0;
        for i in 0..r {
            for j in 0..r {
                let mut z = c64::new(0.0, 0.0);
                for m in 0..r {
                    z += b[i * r + m] * b[j * r + m].conj();
                }
                s[i * r + j] = z;
            }
            tr += s[i * r + i].re;
        }
        if !(tr > 1e-300) {
            return f64::INFINITY;
        }
        // buf = ρ − W s W† / tr (row-major).
        for i in 0..d {
            for j in 0..d {
                let mut z = c64::new(0.0, 0.0);
                for p in 0..r {
                    for q in 0..r {
                        z += w[(i, p)] * s[p * r + q] * w[(j, q)].conj();
                    }
                }
                buf[i * d + j] = rm[(i, j)] - z / tr;
            }
        }
        search::jacobi_eigenvalues(&mut buf, d).iter().map(|e| e.abs()).sum()
    };

    let n_params = r * r;
    if r == 1 {
        return Ok(objective(&[1.0]));
    }
    let mut rng = random::rng(seed);
    let mut best = search::Minimum {
        x: vec![],
        value: f64::INFINITY,
    };
    for _ in 0..BRUTE_FORCE_STARTS {
        let x0: Vec<f64> = (0..n_params).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = search::nelder_mead(&mut objective, &x0, 0.3, budget, 1e-13);
        if m.value < best.value {
            best = m;
        }
    }
    // Polish from the best point with a fresh small simplex.
    for step in [1e-2, 1e-4] {
        let m = search::nelder_mead(&mut objective, &best.x.clone(), step, budget, 1e-15);
        if m.value < best.value {
            best = m;
        }
    }
    Ok(best.value)
}
