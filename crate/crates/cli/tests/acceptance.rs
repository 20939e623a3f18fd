//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs the shipped scenarios through the same entry points as the binary,
//! then checks the emitted files and a set of seeded property suites.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, ensure, Context, Result};
use faer::c64;
use qds_cli::scenario::{self, Scenario};
use qds_cli::{parse_scenario, run, Command, Outcome, Status};
use qds_core::dynamics::propagator;
use qds_core::fock::{self, cat_vectors, number};
use qds_core::gksl::{self, DensityOperator, SystemModel};
use qds_core::lasalle;
use qds_core::lyapunov::{brute_force_distance, distance_bracket, ground_set};
use qds_core::opalg::{self, real};
use qds_core::random;
use serde_json::Value;

struct Run {
    dir: tempfile::TempDir,
    outcome: Outcome,
}

impl Run {
    fn report(&self) -> &Value {
        &self.outcome.report.details
    }

    fn csv(&self, name: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        read_csv(&self.dir.path().join(name))
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let header = rd.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        rows.push(rec?.iter().map(|x| x.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

fn shipped(name: &str) -> Result<Scenario> {
    Ok(parse_scenario(
        scenario::shipped(name).ok_or_else(|| anyhow!("no scenario {name}"))?,
    )?)
}

fn execute(cmd: Command, sc: &Scenario) -> Result<Run> {
    let dir = tempfile::tempdir()?;
    let outcome = run(cmd, sc, dir.path())?;
    Ok(Run { dir, outcome })
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("missing column {name}"))
}

fn check(field: &Value, path: &str) -> Result<f64> {
    field
        .pointer(path)
        .and_then(Value::as_f64)
        .ok_or_else(|| anyhow!("missing number at {path}"))
}

struct Shipped {
    reproduce: [Run; 3],
    certify: [Run; 3],
    distance: [Run; 3],
}

fn generator_residual(run: &Run, name: &str) -> Result<(f64, bool)> {
    let checks = run.report()["certify"]["generator_checks"]
        .as_array()
        .ok_or_else(|| anyhow!("no checks"))?;
    let c = checks
        .iter()
        .find(|c| c["name"] == name)
        .ok_or_else(|| anyhow!("no check {name}"))?;
    Ok((c["residual_inf_norm"].as_f64().unwrap_or(f64::NAN), c["holds"] == true))
}

fn criterion_1(s: &Shipped) -> Result<(bool, String)> {
    let (r1, ok1) = generator_residual(&s.reproduce[0], "decay_identity")?;
    let (r2, ok2) = generator_residual(&s.reproduce[1], "decay_identity")?;
    let (r3, ok3) = generator_residual(&s.reproduce[2], "decay_identity")?;
    let (variant, variant_holds) = generator_residual(&s.reproduce[0], "half_linear_variant")?;
    let recorded = s.reproduce[0].report()["notes"].as_array().is_some_and(|n| {
        n.iter()
            .any(|x| x.as_str().is_some_and(|t| t.contains("one-half factor")))
    });
    let pass = ok1 && r1 <= 1e-8 && ok2 && r2 <= 1e-9 && ok3 && r3 <= 1e-8 && !variant_holds && recorded;
    Ok((
        pass,
        format!(
            "interior residuals ex1 {r1:.2e} (<= 1e-8), ex2 {r2:.2e} (<= 1e-9), ex3 {r3:.2e} (<= 1e-8); \
             half-factor variant residual {variant:.2e}, discrepancy recorded: {recorded}"
        ),
    ))
}

fn criterion_2(s: &Shipped) -> Result<(bool, String)> {
    let st = &s.reproduce[0].report()["stationary"];
    let dim1 = st["operator_space_dimension"].as_u64().unwrap_or(0);
    let fid = check(st, "/fidelity_table/0/fidelity_with_representative")?;

    let alpha = real(2.0);
    let model = SystemModel::two_photon_loss(40, alpha)?;
    let sup = gksl::superoperator(&model)?;
    let set = gksl::stationary_states(&model, &sup, None)?;
    let cats = cat_vectors(40, alpha, fock::DEFAULT_TAIL_TOL)?.span_projector();
    let gap = opalg::op_norm((&set.support_projector - &cats).as_ref())?;
    let pass = dim1 == 1 && fid >= 1.0 - 1e-6 && set.dimension() == 4 && gap <= 1e-6;
    Ok((
        pass,
        format!(
            "ex1: dimension {dim1}, fidelity to |alpha> {fid:.12}; two-photon alpha=2: dimension {}, \
             support vs cat span {gap:.2e}",
            set.dimension()
        ),
    ))
}

fn criterion_3(s: &Shipped) -> Result<(bool, String)> {
    let verdict = |r: &Run| r.outcome.report.verdict.clone().unwrap_or_default();
    let gamma = |r: &Run| r.outcome.report.witnesses.as_ref().and_then(|w| w["gamma"].as_f64());
    let g1 = gamma(&s.certify[0]).unwrap_or(f64::NAN);
    let g3 = gamma(&s.certify[2]).unwrap_or(f64::NAN);
    let strict2 = s.certify[1]
        .outcome
        .report
        .witnesses
        .as_ref()
        .map(|w| w["strict_minimum"]["holds"] == false);

    // The same model at alpha = 2.
    let alpha = real(2.0);
    let model = SystemModel::two_photon_loss(40, alpha)?;
    let l = &model.couplings()[0];
    let v = l.adjoint() * l;
    let rep = qds_core::lyapunov::classify_stability(&model, v.as_ref(), &Default::default())?;
    let g_alpha2 = rep.gamma.unwrap_or(f64::NAN);

    let pass = verdict(&s.certify[0]) == "global_exponential"
        && (0.999..=1.001).contains(&g1)
        && verdict(&s.certify[2]) == "global_exponential"
        && g3 >= 2.0 - 1e-6
        && rep.verdict.as_str() == "global_exponential"
        && g_alpha2 >= 2.0 - 1e-6
        && verdict(&s.certify[1]) == "inconclusive"
        && s.certify[1].outcome.status == Status::Inconclusive
        && strict2 == Some(true);
    Ok((
        pass,
        format!(
            "ex1 {} gamma {g1:.9}; ex3 {} gamma {g3:.6} (alpha=2: {g_alpha2:.6}); ex2 {} (exit {}, strict minimum fails: {})",
            verdict(&s.certify[0]),
            verdict(&s.certify[2]),
            verdict(&s.certify[1]),
            s.certify[1].outcome.status.code(),
            strict2 == Some(true)
        ),
    ))
}

fn criterion_4(s: &Shipped) -> Result<(bool, String)> {
    let (header, rows) = s.reproduce[0].csv("lyapunov.csv")?;
    let c = column(&header, "V[vacuum]")?;
    ensure!(rows.len() == 501, "expected 501 grid points, got {}", rows.len());
    let v0 = rows[0][c];
    let mut worst: f64 = 0.0;
    for r in &rows {
        worst = worst.max(r[c] / (v0 * (-r[0]).exp()) - 1.0);
    }
    // Least-squares slope of log V against t.
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[c].ln())).collect();
    let n = pts.len() as f64;
    let (mt, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope =
        pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let pass = worst <= 1e-3 && (slope + 1.0).abs() <= 0.01;
    Ok((
        pass,
        format!("max relative excess over envelope {worst:.2e} (<= 1e-3); fitted log-slope {slope:.6}"),
    ))
}

struct SuiteStats {
    growth: f64,
    lower: f64,
    upper: f64,
}

fn lemma_suite() -> Result<SuiteStats> {
    let mut rng = random::rng(random::DEFAULT_SEED);
    let mut st = SuiteStats {
        growth: f64::NEG_INFINITY,
        lower: f64::NEG_INFINITY,
        upper: f64::NEG_INFINITY,
    };
    for k in 0..1000u64 {
        let inst = random::graded_instance(&mut rng);
        let gs = ground_set(inst.a.as_ref(), None)?;
        let rho = DensityOperator::new(inst.rho)?;
        let d = brute_force_distance(&rho, gs.projector.as_ref(), random::DEFAULT_SEED + k, 4000)?;
        let excess = opalg::trace_product(inst.a.as_ref(), rho.matrix().as_ref()).re - gs.p0;
        st.growth = st.growth.max(gs.kappa * d * d - excess);
        let b = distance_bracket(&rho, &gs, inst.a.as_ref())?;
        st.lower = st.lower.max(b.lower - d);
        st.upper = st.upper.max(d - b.upper);
    }
    Ok(st)
}

fn criterion_5(st: &SuiteStats) -> Result<(bool, String)> {
    Ok((
        st.growth <= 1e-6,
        format!(
            "1000 instances, worst (p1/4) d^2 - (tr(A rho) - p0) = {:.2e}",
            st.growth
        ),
    ))
}

fn criterion_6(st: &SuiteStats, s: &Shipped) -> Result<(bool, String)> {
    let (mut lower, mut upper) = (st.lower, st.upper);
    let mut shipped_rows = 0;
    for r in &s.distance {
        let (header, rows) = r.csv("distances.csv")?;
        let (lo, up, or) = (
            column(&header, "lower")?,
            column(&header, "upper")?,
            column(&header, "oracle")?,
        );
        for row in rows {
            ensure!(row[or].is_finite(), "oracle missing in shipped distance table");
            lower = lower.max(row[lo] - row[or]);
            upper = upper.max(row[or] - row[up]);
            shipped_rows += 1;
        }
    }
    let gs = ground_set(number(10).as_ref(), None)?;
    let b = distance_bracket(&DensityOperator::number(10, 1)?, &gs, number(10).as_ref())?;
    let exact = (b.lower - 2.0).abs() <= 1e-9 && (b.upper - 2.0).abs() <= 1e-9;
    let pass = lower <= 1e-4 && upper <= 1e-4 && exact;
    Ok((
        pass,
        format!(
            "1000 instances + {shipped_rows} shipped states: worst lower - d {lower:.2e}, d - upper {upper:.2e} \
             (slack 1e-4); |1><1| vs vacuum [{}, {}]",
            b.lower, b.upper
        ),
    ))
}

fn criterion_7() -> Result<(bool, String)> {
    let mut rng = random::rng(random::DEFAULT_SEED);
    let mut worst: f64 = 0.0;
    for k in 0..500 {
        let d = 2 + k % 7;
        let psi = random::unit_vector(&mut rng, d);
        let phi = random::unit_vector(&mut rng, d);
        let diff = opalg::pure_state(psi.as_ref()) - opalg::pure_state(phi.as_ref());
        let tn = opalg::trace_norm(diff.as_ref())?;
        let overlap = opalg::inner(psi.as_ref(), phi.as_ref()).norm_sqr();
        worst = worst.max((tn - 2.0 * (1.0 - overlap).max(0.0).sqrt()).abs());
    }
    Ok((worst <= 1e-10, format!("500 pairs, max error {worst:.2e}")))
}

fn criterion_8(s: &Shipped) -> Result<(bool, String)> {
    // Diagnostics recorded along every shipped trajectory.
    let (mut drift, mut min_eig) = (0.0f64, f64::INFINITY);
    let mut n_traj = 0;
    for r in &s.reproduce {
        for st in r.report()["simulate"]["states"]
            .as_array()
            .ok_or_else(|| anyhow!("no states"))?
        {
            drift = drift.max(check(st, "/max_trace_drift")?);
            min_eig = min_eig.min(check(st, "/min_eigenvalue")?);
            n_traj += 1;
        }
    }

    // Semigroup and contraction checks on the shipped models at dim 20.
    let models = [
        SystemModel::displaced_oscillator(20, real(1.0), 1.0)?,
        SystemModel::displaced_oscillator(20, real(0.0), 1.0)?,
        SystemModel::two_photon_loss(20, c64::new(1.5, 0.0))?,
    ];
    let mut rng = random::rng(random::DEFAULT_SEED);
    let (mut semigroup, mut contraction): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for model in &models {
        let sup = gksl::superoperator(model)?;
        let e1 = propagator(&sup, 0.3)?;
        let e2 = propagator(&sup, 0.7)?;
        let e = propagator(&sup, 1.0)?;
        semigroup = semigroup.max((&e1 * &e2 - &e).norm_max());
        for _ in 0..50 {
            let a = random::density_any_rank(&mut rng, 20);
            let b = random::density_any_rank(&mut rng, 20);
            let before = opalg::trace_norm_hermitian((&a - &b).as_ref())?;
            let diff = opalg::vectorize((&a - &b).as_ref());
            let after = opalg::unvectorize((&e * diff).as_ref(), 20);
            let after = opalg::trace_norm_hermitian(opalg::hermitian_part(after.as_ref()).as_ref())?;
            contraction = contraction.max(after - before);
        }
    }
    let pass = semigroup <= 1e-9 && min_eig >= -1e-7 && drift <= 1e-9 && contraction <= 1e-10;
    Ok((
        pass,
        format!(
            "{n_traj} shipped trajectories: min eigenvalue {min_eig:.2e}, trace drift {drift:.2e}; \
             semigroup gap {semigroup:.2e}; worst contraction excess {contraction:.2e} over 150 pairs"
        ),
    ))
}

fn criterion_9(s: &Shipped) -> Result<(bool, String)> {
    let sc = shipped("example2")?;
    let (_, v) = &sc.lyapunov[0];
    let sup = gksl::superoperator(&sc.model)?;
    let set = gksl::stationary_states(&sc.model, &sup, None)?;
    let verdict = lasalle::corollary2_verdict(&sc.model, v.as_ref(), &set)?;
    let d = sc.dim;
    let low = faer::Mat::from_fn(d, d, |i, j| if i == j && i < 2 { real(1.0) } else { real(0.0) });
    let vac = faer::Mat::from_fn(d, d, |i, j| if i == j && i == 0 { real(1.0) } else { real(0.0) });
    let e_gap = opalg::op_norm((&verdict.e_support - &low).as_ref())?;
    let s_gap = opalg::op_norm((&verdict.stationary_in_e_support - &vac).as_ref())?;

    let ls = &s.reproduce[1].report()["lasalle"];
    let states = ls["details"]["states"]
        .as_array()
        .ok_or_else(|| anyhow!("no lasalle states"))?;
    let fock1 = states
        .iter()
        .find(|x| x["name"] == "fock1")
        .ok_or_else(|| anyhow!("no fock1 row"))?;
    let seminorm = check(fock1, "/final_max_seminorm")?;
    let t_end = sc.grid.t1;
    let caveat = s.reproduce[1]
        .outcome
        .report
        .caveats
        .iter()
        .any(|c| c.contains("two readings of invariance"));
    let pass = e_gap <= 1e-7 && s_gap <= 1e-7 && seminorm < 1e-3 && t_end == 8.0 && caveat;
    Ok((
        pass,
        format!(
            "E support vs span{{|0>,|1>}} {e_gap:.2e}; stationary-in-E vs vacuum {s_gap:.2e}; \
             max seminorm at t = {t_end} from |1><1|: {seminorm:.3e}; invariance-reading caveat in JSON: {caveat}"
        ),
    ))
}

fn criterion_10(s: &Shipped) -> Result<(bool, String)> {
    let run = &s.reproduce[2];
    let sc = shipped("example3")?;
    let (header, rows) = run.csv("trajectories.csv")?;
    let last = rows.last().ok_or_else(|| anyhow!("empty trajectories"))?;
    ensure!(last[0] == 8.0, "trajectory ends at {}", last[0]);
    let target = 2.25;
    let mut worst_a2: f64 = 0.0;
    for (name, _) in &sc.initial_states {
        column(&header, &format!("re_q[{name}]"))?;
        column(&header, &format!("re_p[{name}]"))?;
        let re = last[column(&header, &format!("re_a2[{name}]"))?];
        let im = last[column(&header, &format!("im_a2[{name}]"))?];
        worst_a2 = worst_a2.max(((re - target).powi(2) + im * im).sqrt());
    }
    let (lheader, lrows) = run.csv("lyapunov.csv")?;
    let (mut uptick, mut final_v): (f64, f64) = (f64::NEG_INFINITY, 0.0);
    for c in 1..lheader.len() {
        for w in lrows.windows(2) {
            uptick = uptick.max(w[1][c] - w[0][c]);
        }
        final_v = final_v.max(lrows[lrows.len() - 1][c]);
    }
    let pass = sc.initial_states.len() == 8 && worst_a2 <= 1e-2 && uptick <= 1e-8 && final_v <= 1e-3;
    Ok((
        pass,
        format!(
            "{} trajectories; max |<a^2>_T - alpha^2| {worst_a2:.2e}; Lyapunov max uptick {uptick:.2e}, \
             largest final value {final_v:.2e}",
            sc.initial_states.len()
        ),
    ))
}

fn main() {
    faer::set_global_parallelism(faer::Par::Seq);
    let start = Instant::now();
    let prepare = || -> Result<Shipped> {
        let names = ["example1", "example2", "example3"];
        let scs: Vec<Scenario> = names.iter().map(|n| shipped(n)).collect::<Result<_>>()?;
        let each = |cmd: Command| -> Result<[Run; 3]> {
            let runs: Vec<Run> = scs.iter().map(|sc| execute(cmd, sc)).collect::<Result<_>>()?;
            runs.try_into().map_err(|_| anyhow!("three runs expected"))
        };
        Ok(Shipped {
            reproduce: each(Command::Reproduce)?,
            certify: each(Command::Certify)?,
            distance: each(Command::Distance)?,
        })
    };
    let shipped_runs = prepare();
    let suite = lemma_suite();

    let mut failures = 0;
    let mut report = |n: usize, title: &str, result: Result<(bool, String)>| {
        let (pass, msg) = result.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        if !pass {
            failures += 1;
        }
        println!("{} {n:>2} {title}: {msg}", if pass { "PASS" } else { "FAIL" });
    };
    let with = |f: fn(&Shipped) -> Result<(bool, String)>| match &shipped_runs {
        Ok(s) => f(s),
        Err(e) => Err(anyhow!("shipped scenarios failed: {e:#}")),
    };
    report(1, "generator identities", with(criterion_1));
    report(2, "stationary sets", with(criterion_2));
    report(3, "certificates", with(criterion_3));
    report(4, "exponential envelope", with(criterion_4));
    report(
        5,
        "quadratic growth suite",
        suite.as_ref().map_err(|e| anyhow!("{e:#}")).and_then(criterion_5),
    );
    report(
        6,
        "distance brackets",
        match (&suite, &shipped_runs) {
            (Ok(st), Ok(s)) => criterion_6(st, s),
            _ => Err(anyhow!("prerequisite failed")),
        },
    );
    report(7, "pure-state trace distance", criterion_7());
    report(8, "semigroup and positivity", with(criterion_8));
    report(9, "invariance analysis", with(criterion_9));
    report(10, "two-photon ring trajectories", with(criterion_10));
    println!(
        "{} of 10 criteria passed in {:.1} s",
        10 - failures,
        start.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
