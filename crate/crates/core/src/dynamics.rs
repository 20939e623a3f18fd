//! Propagation of states under the master equation and observable series.

use std::collections::HashMap;

use faer::linalg::solvers::Solve;
use faer::{c64, Mat, MatRef};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock;
use crate::gksl::{self, DensityOperator, Superoperator, SystemModel};
use crate::opalg::{self, real, scale, CMat};

/// States along a trajectory must keep `λ_min ≥ −POSITIVITY_TOL`.
pub const POSITIVITY_TOL: f64 = 1e-7;
/// Trace drift above this is logged.
pub const TRACE_WARN_TOL: f64 = 1e-9;
/// Trace drift above this aborts the run.
pub const TRACE_FAIL_TOL: f64 = 1e-6;
/// Boundary mass above this flags a state as truncation-affected.
pub const BOUNDARY_FLAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Expm,
    Rk,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepInfo {
    /// Propagators applied between fixed sample times; `dt` is set for uniform grids.
    Grid { dt: Option<f64> },
    Adaptive {
        rel_tol: f64,
        abs_tol: f64,
        accepted: usize,
        rejected: usize,
        min_step: f64,
        max_step: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DensityOperator>,
    method: Method,
    step: StepInfo,
    boundary_flags: Vec<bool>,
    max_trace_drift: f64,
    min_eigenvalue: f64,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DensityOperator] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn step_info(&self) -> &StepInfo {
        &self.step
    }

    /// Per-state flag: more than 1e-6 of the mass sits on the top two Fock levels.
    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    pub fn any_boundary_flag(&self) -> bool {
        self.boundary_flags.iter().any(|&f| f)
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.max_trace_drift
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn final_state(&self) -> &DensityOperator {
        self.states.last().expect("trajectories are never empty")
    }

    /// Uniform spacing, if the samples are uniformly spaced within 1e-9 relative.
    pub fn uniform_dt(&self) -> Option<f64> {
        uniform_spacing(&self.times)
    }
}

/// `steps + 1` equally spaced points on `[t0, t1]`.
pub fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "grid needs t1 > t0 and at least one step, got [{t0}, {t1}] with {steps}"
        )));
    }
    let h = (t1 - t0) / steps as f64;
    Ok((0..=steps)
        .map(|i| if i == steps { t1 } else { t0 + i as f64 * h })
        .collect())
}

fn uniform_spacing(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let ok = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300));
    ok.then_some(h)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if !(times[0] >= 0.0) {
        return Err(Error::InvalidInput(format!("first time {} is negative", times[0])));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("time grid contains non-finite values".into()));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(format!(
            "times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn one_norm(m: MatRef<'_, c64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

fn lin(terms: &[(f64, &CMat)], n: usize) -> CMat {
    let mut out = Mat::<c64>::zeros(n, n);
    for (c, m) in terms {
        if *c != 0.0 {
            out += scale(m.as_ref(), real(*c));
        }
    }
    out
}

/// Matrix exponential by Padé scaling and squaring (degrees 3 to 13, chosen
/// from the 1-norm).
pub fn expm(a: MatRef<'_, c64>) -> Result<CMat> {
    let n = opalg::ensure_square(a)?;
    opalg::ensure_finite(a)?;
    let id = opalg::identity(n);
    let a = a.to_owned();
    let norm = one_norm(a.as_ref());
    if norm == 0.0 {
        return Ok(id);
    }
    let a2 = &a * &a;

    let (u, v, squarings) = if let Some(&(m, _)) = THETA.iter().find(|(_, th)| norm <= *th) {
        let b: &[f64] = match m {
            3 => &PADE3,
            5 => &PADE5,
            7 => &PADE7,
            _ => &PADE9,
        };
        // Even and odd powers up to a^(m-1).
        let mut pows = vec![id.clone(), a2.clone()];
        while pows.len() * 2 < m + 1 {
            let next = pows.last().unwrap() * &a2;
            pows.push(next);
        }
        let mut odd = Mat::<c64>::zeros(n, n);
        let mut even = Mat::<c64>::zeros(n, n);
        for (k, p) in pows.iter().enumerate() {
            odd += scale(p.as_ref(), real(b[2 * k + 1]));
            even += scale(p.as_ref(), real(b[2 * k]));
        }
        (&a * odd, even, 0)
    } else {
        let s = ((norm / THETA13).log2().ceil()).max(0.0) as i32;
        let f = 0.5f64.powi(s);
        let a1 = scale(a.as_ref(), real(f));
        let a2 = scale(a2.as_ref(), real(f * f));
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let b = &PADE13;
        let u_inner = &a6 * lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], n)
            + lin(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)], n);
        let u = &a1 * u_inner;
        let v = &a6 * lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], n)
            + lin(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)], n);
        (u, v, s)
    };

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    opalg::ensure_finite(r.as_ref()).map_err(|_| Error::Numerical("matrix exponential overflowed".into()))?;
    Ok(r)
}

/// `exp(t·S)`, the propagator of the master equation over time `t`.
pub fn propagator(sup: &Superoperator, t: f64) -> Result<CMat> {
    expm(scale(sup.matrix().as_ref(), real(t)).as_ref())
}

/// Choi matrix `Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)` of a vectorized map on `d × d` matrices.
pub fn choi_matrix(map: MatRef<'_, c64>, d: usize) -> Result<CMat> {
    if map.nrows() != d * d || map.ncols() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: map.nrows(),
        });
    }
    Ok(Mat::from_fn(d * d, d * d, |r, c| {
        let (i, k) = (r / d, r % d);
        let (j, l) = (c / d, c % d);
        map[(k + l * d, i + j * d)]
    }))
}

/// Hermitizes, checks trace and positivity, and wraps one propagated state.
struct StateChecker {
    truncated: bool,
    max_drift: f64,
    min_eig: f64,
    flags: Vec<bool>,
}

impl StateChecker {
    fn new(model: &SystemModel) -> Self {
        Self {
            truncated: model.truncation().is_some(),
            max_drift: 0.0,
            min_eig: f64::INFINITY,
            flags: Vec::new(),
        }
    }

    fn accept(&mut self, m: MatRef<'_, c64>, t: f64) -> Result<DensityOperator> {
        let h = opalg::hermitian_part(m);
        let drift = (opalg::trace(h.as_ref()).re - 1.0).abs();
        if drift > TRACE_FAIL_TOL {
            return Err(Error::Numerical(format!(
                "trace drift {drift:.3e} at t = {t} exceeds {TRACE_FAIL_TOL:.0e}"
            )));
        }
        if drift > TRACE_WARN_TOL {
            warn!("trace drift {drift:.3e} at t = {t}");
        }
        let min = opalg::min_eigenvalue(h.as_ref())?;
        if min < -POSITIVITY_TOL {
            return Err(Error::Numerical(format!(
                "state lost positivity at t = {t}: eigenvalue {min:.3e}"
            )));
        }
        self.max_drift = self.max_drift.max(drift);
        self.min_eig = self.min_eig.min(min);
        self.flags
            .push(self.truncated && fock::boundary_mass(h.as_ref()) > BOUNDARY_FLAG_TOL);
        Ok(DensityOperator::from_checked(h, POSITIVITY_TOL, TRACE_FAIL_TOL))
    }

    fn finish(self, times: Vec<f64>, states: Vec<DensityOperator>, method: Method, step: StepInfo) -> Trajectory {
        Trajectory {
            times,
            states,
            method,
            step,
            boundary_flags: self.flags,
            max_trace_drift: self.max_drift,
            min_eigenvalue: self.min_eig,
        }
    }
}

/// Exact propagation `vec(ρ_t) = exp(t·S) vec(ρ0)` sampled at `times`.
pub fn propagate_expm(model: &SystemModel, rho0: &DensityOperator, times: &[f64]) -> Result<Trajectory> {
    let sup = gksl::superoperator(model)?;
    propagate_expm_with(model, &sup, rho0, times)
}

pub fn propagate_expm_with(
    model: &SystemModel,
    sup: &Superoperator,
    rho0: &DensityOperator,
    times: &[f64],
) -> Result<Trajectory> {
    let mut out = propagate_expm_batch(model, sup, std::slice::from_ref(rho0), times)?;
    Ok(out.pop().expect("one trajectory per initial state"))
}

/// Propagates several initial states on a shared grid, reusing propagators.
pub fn propagate_expm_batch(
    model: &SystemModel,
    sup: &Superoperator,
    rho0s: &[DensityOperator],
    times: &[f64],
) -> Result<Vec<Trajectory>> {
    check_times(times)?;
    let d = model.dim();
    if sup.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sup.dim(),
        });
    }
    for rho in rho0s {
        opalg::ensure_dim(rho.matrix().as_ref(), d)?;
    }
    let m = rho0s.len();
    let mut x = Mat::<c64>::from_fn(d * d, m, |r, c| rho0s[c].matrix()[(r % d, r / d)]);

    let dt = uniform_spacing(times);
    let mut cache: HashMap<u64, CMat> = HashMap::new();
    let mut step = |h: f64| -> Result<CMat> {
        let key = h.to_bits();
        if let Some(e) = cache.get(&key) {
            return Ok(e.clone());
        }
        debug!("building propagator for dt = {h}");
        let e = propagator(sup, h)?;
        cache.insert(key, e.clone());
        Ok(e)
    };

    let mut checkers: Vec<StateChecker> = (0..m).map(|_| StateChecker::new(model)).collect();
    let mut states: Vec<Vec<DensityOperator>> = vec![Vec::with_capacity(times.len()); m];
    let uniform_e = match dt {
        Some(h) => Some(step(h)?),
        None => None,
    };
    for (i, &t) in times.iter().enumerate() {
        let h = if i == 0 { t } else { t - times[i - 1] };
        if h > 0.0 {
            x = match (&uniform_e, i) {
                (Some(e), i) if i > 0 => e * &x,
                _ => step(h)? * &x,
            };
        }
        for c in 0..m {
            let rho = opalg::unvectorize(x.col(c), d);
            states[c].push(checkers[c].accept(rho.as_ref(), t)?);
        }
    }
    Ok(checkers
        .into_iter()
        .zip(states)
        .map(|(chk, s)| chk.finish(times.to_vec(), s, Method::Expm, StepInfo::Grid { dt }))
        .collect())
}

// Dormand–Prince 5(4) tableau. The generator is time-independent, so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
const MAX_RK_STEPS: usize = 5_000_000;
/// `h·|λ|` bound well inside the Dormand–Prince stability region.
const STABLE_STEP: f64 = 2.5;

/// Adaptive Dormand–Prince integration of the master equation in operator
/// form. Records every accepted step; no superoperator is built.
pub fn propagate_rk(model: &SystemModel, rho0: &DensityOperator, t_end: f64, rel_tol: f64) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end must be positive, got {t_end}")));
    }
    rk_integrate(model, rho0, t_end, rel_tol, None)
}

/// Same integrator, with steps clipped to land on `times` and only those
/// states recorded.
pub fn propagate_rk_sampled(
    model: &SystemModel,
    rho0: &DensityOperator,
    times: &[f64],
    rel_tol: f64,
) -> Result<Trajectory> {
    check_times(times)?;
    let t_end = *times.last().expect("check_times rejects empty grids");
    rk_integrate(model, rho0, t_end, rel_tol, Some(times))
}

fn rk_integrate(
    model: &SystemModel,
    rho0: &DensityOperator,
    t_end: f64,
    rel_tol: f64,
    stops: Option<&[f64]>,
) -> Result<Trajectory> {
    if !(1e-12..=1e-3).contains(&rel_tol) {
        return Err(Error::InvalidInput(format!("rel_tol {rel_tol} outside [1e-12, 1e-3]")));
    }
    let d = model.dim();
    opalg::ensure_dim(rho0.matrix().as_ref(), d)?;
    let abs_tol = rel_tol * 1e-3;
    let f = |y: &CMat| gksl::apply_predual(model, y.as_ref());

    let mut checker = StateChecker::new(model);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut next_stop = 0;
    if stops.is_none_or(|s| s[0] == 0.0) {
        times.push(0.0);
        states.push(checker.accept(rho0.matrix().as_ref(), 0.0)?);
        next_stop = 1;
    }
    let mut y = rho0.matrix().clone();
    let mut k1 = f(&y)?;
    let mut t = 0.0;
    // |λ(𝓛*)| ≤ 2‖H‖ + 2‖ΣL†L‖; staying inside the stability region keeps
    // components the error estimate cannot see from being amplified.
    let radius = 2.0 * opalg::eig_hermitized(model.hamiltonian().as_ref())?.max_abs()
        + 2.0 * opalg::eig_hermitized(model.dissipation().as_ref())?.max_abs();
    let h_max = if radius > 0.0 {
        STABLE_STEP / radius
    } else {
        f64::INFINITY
    };
    let mut h = (1e-2f64).min(t_end).min(h_max);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let (mut min_step, mut max_step) = (f64::INFINITY, 0.0f64);

    while t < t_end {
        let target = stops.map_or(t_end, |s| s[next_stop]);
        if accepted + rejected > MAX_RK_STEPS {
            return Err(Error::Resource(format!("more than {MAX_RK_STEPS} integrator steps")));
        }
        if h < 1e-12 {
            return Err(Error::Stiffness { time: t, step: h });
        }
        let h_try = h.min(target - t);
        let mut k: Vec<CMat> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    ys += scale(kj.as_ref(), real(h_try * A[s][j]));
                }
            }
            if s == 6 {
                // Stage 7 is evaluated at the fifth-order solution.
                k.push(f(&ys)?);
                let y5 = ys;
                let mut err = Mat::<c64>::zeros(d, d);
                for (j, kj) in k.iter().enumerate() {
                    let w = A[6].get(j).copied().unwrap_or(0.0) - B4[j];
                    if w != 0.0 {
                        err += scale(kj.as_ref(), real(h_try * w));
                    }
                }
                let sc = abs_tol + rel_tol * y.norm_max().max(y5.norm_max());
                let err_norm = err.norm_max() / sc;
                let factor = if err_norm == 0.0 {
                    5.0
                } else {
                    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                if err_norm <= 1.0 {
                    let y_new = opalg::hermitian_part(y5.as_ref());
                    let min = opalg::min_eigenvalue(y_new.as_ref())?;
                    if min < -POSITIVITY_TOL {
                        rejected += 1;
                        h = h_try * 0.5;
                        break;
                    }
                    let landed = target - t <= h_try;
                    t = if landed { target } else { t + h_try };
                    min_step = min_step.min(h_try);
                    max_step = max_step.max(h_try);
                    accepted += 1;
                    if stops.is_none() || landed {
                        states.push(checker.accept(y_new.as_ref(), t)?);
                        times.push(t);
                        next_stop += 1;
                    }
                    k1 = f(&y_new)?;
                    y = y_new;
                    // A step clipped to hit a sample time says nothing about the next one.
                    if !(landed && h_try < h) {
                        h = (h_try * factor).min(h_max);
                    }
                } else {
                    rejected += 1;
                    h = h_try * factor.min(0.9);
                }
            } else {
                k.push(f(&ys)?);
            }
        }
    }
    debug!("rk: {accepted} accepted, {rejected} rejected steps");
    Ok(checker.finish(
        times,
        states,
        Method::Rk,
        StepInfo::Adaptive {
            rel_tol,
            abs_tol,
            accepted,
            rejected,
            min_step,
            max_step,
        },
    ))
}

/// Time series of `tr(A ρ_t)` for named observables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationTable {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `values[j][i]` is observable `j` at time `i`.
    pub values: Vec<Vec<c64>>,
}

impl ExpectationTable {
    pub fn series(&self, name: &str) -> Option<&[c64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.values[j].as_slice())
    }

    pub fn real_series(&self, name: &str) -> Option<Vec<f64>> {
        self.series(name).map(|s| s.iter().map(|z| z.re).collect())
    }
}

/// `tr(A ρ_t)` for each observable. Hermitian observables must give real
/// values (imaginary part below 1e-10 relative).
pub fn expectations(traj: &Trajectory, observables: &[(String, CMat)]) -> Result<ExpectationTable> {
    let d = traj.final_state().dim();
    let mut values = Vec::with_capacity(observables.len());
    for (name, a) in observables {
        opalg::ensure_dim(a.as_ref(), d)?;
        let hermitian = opalg::is_hermitian(a.as_ref(), opalg::HERMITIAN_TOL);
        let series: Vec<c64> = traj
            .states
            .iter()
            .map(|rho| opalg::trace_product(a.as_ref(), rho.matrix().as_ref()))
            .collect();
        if hermitian {
            if let Some(z) = series.iter().find(|z| z.im.abs() > 1e-10 * z.re.abs().max(1.0)) {
                return Err(Error::Numerical(format!(
                    "Hermitian observable {name} has complex expectation {z}"
                )));
            }
        }
        values.push(series);
    }
    Ok(ExpectationTable {
        times: traj.times.clone(),
        names: observables.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// `|d/dt tr(Xρ_t) − tr(𝓛(X)ρ_t)|` at interior samples, with the derivative
/// from central differences. Returns `(t, residual)` pairs.
pub fn drift_residual(model: &SystemModel, traj: &Trajectory, x: MatRef<'_, c64>) -> Result<Vec<(f64, f64)>> {
    if traj.len() < 3 {
        return Err(Error::InvalidInput("drift residual needs at least 3 samples".into()));
    }
    let h = traj
        .uniform_dt()
        .ok_or_else(|| Error::InvalidInput("drift residual needs uniformly spaced samples".into()))?;
    let lx = gksl::adjoint_generator(model, x)?;
    let ex: Vec<c64> = traj
        .states
        .iter()
        .map(|r| opalg::trace_product(x, r.matrix().as_ref()))
        .collect();
    Ok((1..traj.len() - 1)
        .map(|i| {
            let deriv = (ex[i + 1] - ex[i - 1]) / (2.0 * h);
            let gen = opalg::trace_product(lx.as_ref(), traj.states[i].matrix().as_ref());
            (traj.times[i], (deriv - gen).norm())
        })
        .collect())
}

/// Trace-norm distance between two trajectories sampled on the same grid.
pub fn max_trace_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        let diff = x.matrix() - y.matrix();
        worst = worst.max(opalg::trace_norm_hermitian(diff.as_ref())?);
    }
    Ok(worst)
}
