//! Invariance-principle tools: weak convergence probes through observable
//! seminorms, the zero set of `𝓛(V)`, and the largest invariant support
//! inside it.

use faer::{c64, Mat, MatRef};
use log::{debug, warn};
use serde::Serialize;

use crate::dynamics::{self, Trajectory};
use crate::error::{Error, Result};
use crate::fock::{self, QuadratureConvention};
use crate::gksl::{self, DensityOperator, StationarySet, SystemModel};
use crate::lyapunov::SUBSPACE_TOL;
use crate::opalg::{self, real, scale, CMat, HERMITIAN_TOL};
use crate::random;

/// Relative threshold for leakage singular values.
pub const LEAK_REL_TOL: f64 = 1e-8;
/// Mass allowed outside an invariant support during the simulation probe.
pub const PROBE_TOL: f64 = 1e-6;
/// Dimension up to which the default dictionary includes a full Hermitian basis.
pub const COMPLETE_DICTIONARY_MAX_DIM: usize = 8;

/// Named Hermitian test observables.
#[derive(Debug, Clone)]
pub struct ObservableDictionary {
    entries: Vec<(String, CMat)>,
    complete: bool,
}

impl ObservableDictionary {
    pub fn new(entries: Vec<(String, CMat)>) -> Result<Self> {
        let Some((_, first)) = entries.first() else {
            return Err(Error::InvalidInput("observable dictionary is empty".into()));
        };
        let d = opalg::ensure_square(first.as_ref())?;
        for (name, a) in &entries {
            opalg::ensure_dim(a.as_ref(), d)?;
            if !opalg::is_hermitian(a.as_ref(), HERMITIAN_TOL) {
                return Err(Error::InvalidInput(format!("observable {name} is not Hermitian")));
            }
        }
        let complete = spans_hermitian_space(&entries, d)?;
        Ok(Self { entries, complete })
    }

    /// `{1, q, p, N, N², V}`, plus the matrix units of the Hermitian space
    /// when the dimension is at most 8.
    pub fn default_for(dim: usize, v: Option<&CMat>) -> Result<Self> {
        let qp = fock::quadratures(dim, QuadratureConvention::default())?;
        let n = fock::number(dim);
        let mut entries = vec![
            ("1".to_string(), opalg::identity(dim)),
            ("q".to_string(), qp.q),
            ("p".to_string(), qp.p),
            ("N".to_string(), n.clone()),
            ("N2".to_string(), &n * &n),
        ];
        if let Some(v) = v {
            entries.push(("V".to_string(), v.clone()));
        }
        if dim <= COMPLETE_DICTIONARY_MAX_DIM {
            entries.extend(hermitian_basis(dim));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(String, CMat)] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The observables span all Hermitian operators of their dimension.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.nrows()
    }
}

/// Diagonal units `E_ii` and symmetric/antisymmetric pairs for `i < j`.
fn hermitian_basis(dim: usize) -> Vec<(String, CMat)> {
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let mut m = opalg::zeros(dim);
        m[(i, i)] = real(1.0);
        out.push((format!("E{i}{i}"), m));
    }
    for j in 0..dim {
        for i in 0..j {
            let mut x = opalg::zeros(dim);
            x[(i, j)] = real(1.0);
            x[(j, i)] = real(1.0);
            out.push((format!("X{i}{j}"), x));
            let mut y = opalg::zeros(dim);
            y[(i, j)] = c64::new(0.0, -1.0);
            y[(j, i)] = c64::new(0.0, 1.0);
            out.push((format!("Y{i}{j}"), y));
        }
    }
    out
}

fn spans_hermitian_space(entries: &[(String, CMat)], d: usize) -> Result<bool> {
    if entries.len() < d * d {
        return Ok(false);
    }
    let mut m = Mat::<f64>::zeros(d * d, entries.len());
    for (c, (_, a)) in entries.iter().enumerate() {
        let mut r = 0;
        for j in 0..d {
            for i in 0..=j {
                m[(r, c)] = a[(i, j)].re;
                r += 1;
                if i != j {
                    m[(r, c)] = a[(i, j)].im;
                    r += 1;
                }
            }
        }
    }
    let s = m
        .singular_values()
        .map_err(|e| Error::Numerical(format!("dictionary rank: {e:?}")))?;
    let smax = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x > 1e-10 * smax).count() == d * d)
}

/// `p_A(ρ − σ) = |tr(A(ρ − σ))|` for each dictionary entry.
pub fn seminorms(rho: MatRef<'_, c64>, sigma: MatRef<'_, c64>, dict: &ObservableDictionary) -> Result<Vec<f64>> {
    opalg::ensure_dim(rho, dict.dim())?;
    opalg::ensure_dim(sigma, dict.dim())?;
    let diff = rho.to_owned() - sigma.to_owned();
    Ok(dict
        .entries
        .iter()
        .map(|(_, a)| opalg::trace_product(a.as_ref(), diff.as_ref()).norm())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeminormTable {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[j][i]`: observable `j` at time `i`.
    pub values: Vec<Vec<f64>>,
    /// Maximum over the dictionary at each time.
    pub max_series: Vec<f64>,
}

/// Seminorm distances from each trajectory state to `sigma`.
pub fn seminorm_series(
    traj: &Trajectory,
    dict: &ObservableDictionary,
    sigma: &DensityOperator,
) -> Result<SeminormTable> {
    let mut values = vec![Vec::with_capacity(traj.len()); dict.len()];
    let mut max_series = Vec::with_capacity(traj.len());
    for rho in traj.states() {
        let row = seminorms(rho.matrix().as_ref(), sigma.matrix().as_ref(), dict)?;
        max_series.push(row.iter().copied().fold(0.0, f64::max));
        for (j, v) in row.into_iter().enumerate() {
            values[j].push(v);
        }
    }
    Ok(SeminormTable {
        times: traj.times().to_vec(),
        names: dict.entries.iter().map(|(n, _)| n.clone()).collect(),
        values,
        max_series,
    })
}

fn neg_generator(model: &SystemModel, v: MatRef<'_, c64>) -> Result<CMat> {
    let lv = gksl::adjoint_generator(model, v)?;
    Ok(opalg::hermitian_part(scale(lv.as_ref(), real(-1.0)).as_ref()))
}

/// Projector onto `ker 𝓛(V)`. Requires `−𝓛(V) ⪰ 0` within `rel_tol`
/// (default 1e-9, relative to `max(1, ‖𝓛(V)‖)`); then the states with
/// `tr(𝓛(V)ρ) = 0` are exactly those supported on the returned subspace.
pub fn e_set_support(model: &SystemModel, v: MatRef<'_, c64>, rel_tol: Option<f64>) -> Result<CMat> {
    opalg::ensure_dim(v, model.dim())?;
    let neg = neg_generator(model, v)?;
    let s = neg.norm_l2().max(1.0);
    let psd_tol = rel_tol.unwrap_or(1e-9) * s;
    let evd = opalg::eig_hermitized(neg.as_ref())?;
    if evd.min() < -psd_tol {
        return Err(Error::Precondition(format!(
            "-L(V) is not positive semidefinite (smallest eigenvalue {:.3e}); the zero set of L(V) \
             does not describe where V stops decreasing",
            evd.min()
        )));
    }
    let kernel_tol = 1e-8 * s;
    Ok(evd.projector_where(|x| x.abs() <= kernel_tol))
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantSupport {
    #[serde(skip)]
    pub projector: CMat,
    pub rank: usize,
    pub iterations: usize,
    /// Largest mass found outside the support by the simulation probe.
    pub probe_leak: Option<f64>,
}

/// Orthonormal basis (columns) of the range of a projector.
fn basis(p: &CMat) -> Result<CMat> {
    opalg::projector_basis(p.as_ref())
}

/// Largest subspace of `s0` whose states remain supported on it under the
/// master equation. Directions are removed while `(1 − P)L_k P` or
/// `(1 − P)(H − (i/2)ΣL_k†L_k)P` is nonzero on them.
pub fn invariant_support(model: &SystemModel, s0: MatRef<'_, c64>) -> Result<InvariantSupport> {
    let d = model.dim();
    opalg::ensure_dim(s0, d)?;
    let mut ops: Vec<CMat> = model.couplings().to_vec();
    ops.push(model.effective_hamiltonian());
    let op_scale = ops.iter().map(|m| m.norm_l2()).fold(1.0, f64::max);

    let mut w = basis(&s0.to_owned())?;
    let mut iterations = 0;
    while w.ncols() > 0 && iterations <= d {
        iterations += 1;
        let p = &w * w.adjoint();
        let outside = opalg::identity(d) - &p;
        let r = w.ncols();
        let mut stacked = Mat::<c64>::zeros(ops.len() * d, r);
        for (k, m) in ops.iter().enumerate() {
            let leak = &outside * m * &w;
            for i in 0..d {
                for j in 0..r {
                    stacked[(k * d + i, j)] = leak[(i, j)];
                }
            }
        }
        let svd = stacked
            .svd()
            .map_err(|e| Error::Numerical(format!("leakage SVD failed: {e:?}")))?;
        let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
        let thr = LEAK_REL_TOL * op_scale;
        let leaking = s.iter().filter(|&&x| x > thr).count();
        if leaking == 0 {
            break;
        }
        debug!("invariant_support: removing {leaking} leaking directions from rank {r}");
        // Keep the right singular vectors with (numerically) zero leakage.
        let v = svd.V();
        let keep = Mat::from_fn(r, r - leaking, |i, j| v[(i, leaking + j)]);
        w = &w * keep;
    }
    let projector = &w * w.adjoint();
    let rank = w.ncols();
    let probe_leak = if rank == 0 || rank == d || d > gksl::MAX_SUPEROPERATOR_DIM {
        None
    } else {
        Some(probe(model, &w)?)
    };
    if let Some(leak) = probe_leak {
        if leak > PROBE_TOL {
            warn!("invariant support probe found mass {leak:.3e} outside the support");
        }
    }
    Ok(InvariantSupport {
        projector: if rank == 0 { opalg::zeros(d) } else { projector },
        rank,
        iterations,
        probe_leak,
    })
}

/// Propagates a random state on the support to t = 0.25, 0.5, 1 and returns
/// the largest mass found outside.
fn probe(model: &SystemModel, w: &CMat) -> Result<f64> {
    let sup = gksl::superoperator(model)?;
    let mut rng = random::rng(random::DEFAULT_SEED);
    let rho = DensityOperator::new(random::density_on(&mut rng, w.as_ref()))?;
    let traj = dynamics::propagate_expm_with(model, &sup, &rho, &[0.25, 0.5, 0.75, 1.0])?;
    let p = w * w.adjoint();
    let mut worst: f64 = 0.0;
    for (t, s) in traj.times().iter().zip(traj.states()) {
        if [0.25, 0.5, 1.0].contains(t) {
            let inside = opalg::trace_product(p.as_ref(), s.matrix().as_ref()).re;
            worst = worst.max(1.0 - inside);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceVerdict {
    #[serde(skip)]
    pub e_support: CMat,
    #[serde(skip)]
    pub stationary_in_e_support: CMat,
    #[serde(skip)]
    pub forward_invariant_support: CMat,
    pub e_support_rank: usize,
    pub stationary_in_e_rank: usize,
    pub forward_invariant_rank: usize,
    /// Every operator on the forward-invariant support is stationary.
    pub support_fully_stationary: bool,
    pub corollary2_applies: bool,
    pub probe_leak: Option<f64>,
    pub caveats: Vec<String>,
}

/// Dominant Fock level of each unit vector in the range of `extra`, used to
/// name directions in caveats.
fn describe_directions(extra: &CMat) -> Result<String> {
    let w = opalg::projector_basis(extra.as_ref())?;
    let mut names = Vec::new();
    for j in 0..w.ncols() {
        let (level, weight) = (0..w.nrows())
            .map(|i| (i, w[(i, j)].norm_sqr()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        names.push(format!("|{level}> (weight {weight:.3})"));
    }
    Ok(names.join(", "))
}

fn all_stationary(model: &SystemModel, w: &CMat) -> Result<bool> {
    let r = w.ncols();
    let scale_ops = model.effective_hamiltonian().norm_l2().max(1.0);
    for i in 0..r {
        for j in 0..r {
            let m = opalg::outer(w.col(i), w.col(j));
            let out = gksl::apply_predual(model, m.as_ref())?;
            if out.norm_l2() > 1e-8 * scale_ops {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Compares the stationary states inside the zero set of `𝓛(V)` with the
/// largest forward-invariant support there. The convergence conclusion is
/// certified only when the two coincide and every operator on that support
/// is stationary.
pub fn corollary2_verdict(
    model: &SystemModel,
    v: MatRef<'_, c64>,
    stationary: &StationarySet,
) -> Result<InvarianceVerdict> {
    let d = model.dim();
    let e = e_set_support(model, v, None)?;
    let mut abs_sum = opalg::zeros(d);
    for b in &stationary.operator_basis {
        let c = &e * b * &e;
        let evd = opalg::eig_hermitized(c.as_ref())?;
        for (k, &x) in evd.values.iter().enumerate() {
            let u = evd.vectors.col(k);
            abs_sum += scale(opalg::outer(u, u).as_ref(), real(x.abs()));
        }
    }
    let stat_in_e = opalg::range_projector(abs_sum.as_ref(), gksl::SUPPORT_EIGEN_TOL)?;
    let inv = invariant_support(model, e.as_ref())?;
    let forward = inv.projector.clone();

    let e_rank = opalg::projector_rank(e.as_ref());
    let stat_rank = opalg::projector_rank(stat_in_e.as_ref());
    let fwd_rank = inv.rank;
    let same = opalg::subspace_distance(stat_in_e.as_ref(), forward.as_ref())? <= SUBSPACE_TOL;
    let fully_stationary = if fwd_rank == 0 {
        true
    } else {
        all_stationary(model, &basis(&forward)?)?
    };

    let mut caveats = Vec::new();
    if e_rank == 0 {
        caveats.push("L(V) is negative definite: the zero set is empty".into());
    }
    if !same && fwd_rank > stat_rank {
        let extra = &forward - &stat_in_e;
        let extra = opalg::range_projector(opalg::hermitian_part(extra.as_ref()).as_ref(), 0.5)?;
        caveats.push(format!(
            "the forward-invariant support inside the zero set (rank {fwd_rank}) is larger than the \
             stationary support there (rank {stat_rank}); extra directions: {}",
            describe_directions(&extra)?
        ));
        caveats.push(
            "two readings of invariance disagree here. Requiring only that trajectories starting in the \
             set stay there for all later times keeps the extra directions, so the largest invariant set \
             exceeds the stationary states and convergence to them is not certified. Requiring in \
             addition that every state in the set be reachable from inside the set at all earlier times \
             removes them, which leaves only the stationary states and supports the convergence claim. \
             This tool reports both supports and certifies only under the first reading"
                .into(),
        );
    }
    if same && !fully_stationary {
        caveats.push(
            "the forward-invariant support coincides with the stationary support but carries \
             non-stationary operators (for example rotating coherences), so the invariant set is \
             larger than the set of stationary states"
                .into(),
        );
    }
    if let Some(leak) = inv.probe_leak {
        if leak > PROBE_TOL {
            caveats.push(format!(
                "simulation probe found mass {leak:.3e} leaving the invariant support"
            ));
        }
    }
    let applies = same && fully_stationary && e_rank > 0;
    Ok(InvarianceVerdict {
        e_support: e,
        stationary_in_e_support: stat_in_e,
        forward_invariant_support: forward,
        e_support_rank: e_rank,
        stationary_in_e_rank: stat_rank,
        forward_invariant_rank: fwd_rank,
        support_fully_stationary: fully_stationary,
        corollary2_applies: applies,
        probe_leak: inv.probe_leak,
        caveats,
    })
}

/// Empirical positive-limit candidates: the last `tail_fraction` of the
/// trajectory clustered greedily at trace-distance `radius`. A diagnostic,
/// not a certificate.
pub fn positive_limit_candidates(traj: &Trajectory, tail_fraction: f64, radius: f64) -> Result<Vec<DensityOperator>> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "tail fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let n = traj.len();
    let start = n - ((n as f64 * tail_fraction).ceil() as usize).clamp(1, n);
    let mut reps: Vec<DensityOperator> = Vec::new();
    for s in &traj.states()[start..] {
        let mut near = false;
        for r in &reps {
            let diff = s.matrix() - r.matrix();
            if opalg::trace_norm_hermitian(diff.as_ref())? <= radius {
                near = true;
                break;
            }
        }
        if !near {
            reps.push(s.clone());
        }
    }
    Ok(reps)
}
