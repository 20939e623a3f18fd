//! Command dispatch: each command computes one section and writes its files.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use qds_core::dynamics::{self, Trajectory};
use qds_core::gksl::{self, MAX_SUPEROPERATOR_DIM};
use qds_core::lasalle::{self, ObservableDictionary};
use qds_core::lyapunov::{self, CertificateTolerances, Verdict};
use qds_core::opalg;
use qds_core::{CMat, StationarySet, Superoperator};
use serde_json::{json, Map, Value};

use crate::report::{num, Artifacts, Report, TOOL_VERSION};
use crate::scenario::{weight_on, MethodChoice, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Stationary,
    Certify,
    Distance,
    Lasalle,
    Reproduce,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Stationary => "stationary",
            Command::Certify => "certify",
            Command::Distance => "distance",
            Command::Lasalle => "lasalle",
            Command::Reproduce => "reproduce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The certificate could not be established; distinct from failure.
    Inconclusive,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub report: Report,
}

/// Oracle slack when checking distance brackets.
const BRACKET_SLACK: f64 = 1e-4;
/// Tail fraction and clustering radius for positive-limit candidates.
const LIMIT_TAIL: f64 = 0.05;
const LIMIT_RADIUS: f64 = 1e-3;

#[derive(Debug, Default)]
struct Section {
    verdict: Option<String>,
    witnesses: Option<Value>,
    caveats: Vec<String>,
    details: Value,
    inconclusive: bool,
}

/// Lazily computed quantities shared between sections.
struct Shared<'a> {
    sc: &'a Scenario,
    sup: Option<Superoperator>,
    set: Option<StationarySet>,
    trajectories: Option<Vec<Trajectory>>,
}

impl<'a> Shared<'a> {
    fn new(sc: &'a Scenario) -> Self {
        Self {
            sc,
            sup: None,
            set: None,
            trajectories: None,
        }
    }

    fn ensure_sup(&mut self) -> Result<()> {
        if self.sup.is_none() {
            info!("building superoperator (dim {})", self.sc.dim);
            self.sup = Some(gksl::superoperator(&self.sc.model)?);
        }
        Ok(())
    }

    fn sup(&mut self) -> Result<&Superoperator> {
        self.ensure_sup()?;
        Ok(self.sup.as_ref().expect("built above"))
    }

    fn ensure_set(&mut self) -> Result<()> {
        if self.set.is_none() {
            self.ensure_sup()?;
            info!("computing stationary set");
            let sup = self.sup.as_ref().expect("built above");
            self.set = Some(gksl::stationary_states(
                &self.sc.model,
                sup,
                self.sc.tolerances.null_rel_tol,
            )?);
        }
        Ok(())
    }

    fn set(&mut self) -> Result<&StationarySet> {
        self.ensure_set()?;
        Ok(self.set.as_ref().expect("computed above"))
    }

    fn use_expm(&self) -> bool {
        match self.sc.tolerances.method {
            MethodChoice::Auto => self.sc.dim <= MAX_SUPEROPERATOR_DIM,
            MethodChoice::Expm => true,
            MethodChoice::Rk => false,
        }
    }

    fn trajectories(&mut self) -> Result<&[Trajectory]> {
        if self.trajectories.is_none() {
            let sc = self.sc;
            if sc.initial_states.is_empty() {
                bail!("scenario {:?} defines no initial states", sc.name);
            }
            let times = sc.grid.points()?;
            let rho0s: Vec<_> = sc.initial_states.iter().map(|(_, r)| r.clone()).collect();
            let trajs = if self.use_expm() {
                info!("propagating {} states with the exact propagator", rho0s.len());
                self.ensure_sup()?;
                dynamics::propagate_expm_batch(&sc.model, self.sup.as_ref().expect("built above"), &rho0s, &times)?
            } else {
                info!("propagating {} states with Runge-Kutta", rho0s.len());
                rho0s
                    .iter()
                    .map(|r| dynamics::propagate_rk_sampled(&sc.model, r, &times, sc.tolerances.rk_rel_tol))
                    .collect::<qds_core::Result<Vec<_>>>()?
            };
            self.trajectories = Some(trajs);
        }
        Ok(self.trajectories.as_deref().expect("computed above"))
    }

    fn first_candidate(&self) -> Result<&'a (String, CMat)> {
        self.sc
            .lyapunov
            .first()
            .ok_or_else(|| anyhow!("scenario {:?} defines no Lyapunov candidate", self.sc.name))
    }
}

fn certificate_tolerances(sc: &Scenario) -> CertificateTolerances {
    CertificateTolerances {
        psd_rel_tol: sc.tolerances.psd_rel_tol,
        kernel_rel_tol: sc.tolerances.kernel_rel_tol,
        gap_tol: sc.tolerances.gap_tol,
        null_rel_tol: sc.tolerances.null_rel_tol,
        ..CertificateTolerances::default()
    }
}

fn complex_json(z: faer::c64) -> Value {
    json!([z.re, z.im])
}

fn simulate(ctx: &mut Shared, art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    let expm = ctx.use_expm();
    let trajs = ctx.trajectories()?;
    let obs: Vec<(String, CMat)> = sc
        .observables
        .iter()
        .map(|o| (o.name.clone(), o.matrix.clone()))
        .collect();
    let tables = trajs
        .iter()
        .map(|t| dynamics::expectations(t, &obs))
        .collect::<qds_core::Result<Vec<_>>>()?;
    let lyap = trajs
        .iter()
        .map(|t| dynamics::expectations(t, &sc.lyapunov))
        .collect::<qds_core::Result<Vec<_>>>()?;
    let times = trajs[0].times().to_vec();

    let mut header = vec!["t".to_string()];
    for (s, _) in &sc.initial_states {
        for o in &sc.observables {
            header.push(format!("re_{}[{s}]", o.name));
            if !o.hermitian {
                header.push(format!("im_{}[{s}]", o.name));
            }
        }
    }
    let rows = (0..times.len()).map(|i| {
        let mut row = vec![num(times[i])];
        for table in &tables {
            for o in &sc.observables {
                let z = table.series(&o.name).expect("observable table")[i];
                row.push(num(z.re));
                if !o.hermitian {
                    row.push(num(z.im));
                }
            }
        }
        row
    });
    art.csv("trajectories.csv", &header, rows)?;

    if !sc.lyapunov.is_empty() {
        let mut header = vec!["t".to_string()];
        for (s, _) in &sc.initial_states {
            for (v, _) in &sc.lyapunov {
                header.push(format!("{v}[{s}]"));
            }
        }
        let rows = (0..times.len()).map(|i| {
            let mut row = vec![num(times[i])];
            for table in &lyap {
                for (v, _) in &sc.lyapunov {
                    row.push(num(table.series(v).expect("lyapunov table")[i].re));
                }
            }
            row
        });
        art.csv("lyapunov.csv", &header, rows)?;
    }

    let mut caveats = Vec::new();
    let mut states = Vec::new();
    for (((name, _), traj), (table, ltable)) in sc.initial_states.iter().zip(trajs).zip(tables.iter().zip(&lyap)) {
        if traj.any_boundary_flag() {
            caveats.push(format!(
                "state {name}: population on the top two Fock levels exceeded 1e-6; results near the truncation are unreliable"
            ));
        }
        if traj.max_trace_drift() > dynamics::TRACE_WARN_TOL {
            caveats.push(format!("state {name}: trace drift {:.3e}", traj.max_trace_drift()));
        }
        let mut finals = Map::new();
        for o in &sc.observables {
            finals.insert(
                o.name.clone(),
                complex_json(*table.series(&o.name).expect("observable").last().expect("non-empty")),
            );
        }
        let mut lyap_json = Map::new();
        for (v, _) in &sc.lyapunov {
            let series = ltable.real_series(v).expect("lyapunov series");
            let uptick = series.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
            lyap_json.insert(
                v.clone(),
                json!({"initial": series[0], "final": series[series.len() - 1], "max_uptick": uptick}),
            );
        }
        states.push(json!({
            "name": name,
            "max_trace_drift": traj.max_trace_drift(),
            "min_eigenvalue": traj.min_eigenvalue(),
            "boundary_flagged": traj.any_boundary_flag(),
            "final_expectations": finals,
            "lyapunov": lyap_json,
        }));
    }
    let details = json!({
        "method": if expm { "expm" } else { "rk" },
        "grid": {"t0": sc.grid.t0, "t1": sc.grid.t1, "steps": sc.grid.steps, "points": times.len()},
        "states": states,
    });
    Ok(Section {
        caveats,
        details,
        ..Section::default()
    })
}

fn stationary(ctx: &mut Shared, art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    let self_test = ctx.sup()?.self_test_error();
    info!("computing spectral gap");
    let gap = gksl::spectral_gap(ctx.sup()?, None)?;
    let set = ctx.set()?;
    let mut caveats = Vec::new();
    if set.truncation_suspect {
        caveats.push(
            "an invariant operator carries more than 1e-6 of its mass on the top two Fock levels; enlarge dim".into(),
        );
    }
    if set.is_empty() {
        caveats.push("no invariant state found at this tolerance".into());
    }
    let table: Vec<Value> = sc
        .reference_states
        .iter()
        .map(|(name, psi)| {
            json!({
                "name": name,
                "support_weight": weight_on(&set.support_projector, psi),
                "fidelity_with_representative": set.representative.as_ref().map(|r| r.fidelity_with_pure(psi.as_ref())),
            })
        })
        .collect();
    if let Some(rep) = &set.representative {
        let d = rep.dim();
        let m = rep.matrix();
        let rows = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| vec![i.to_string(), j.to_string(), num(m[(i, j)].re), num(m[(i, j)].im)]);
        let header = ["i", "j", "re", "im"].map(String::from);
        art.csv("stationary_state.csv", &header, rows)?;
    }
    let details = json!({
        "dim": sc.dim,
        "operator_space_dimension": set.dimension(),
        "support_rank": set.support_rank(),
        "null_tol": set.null_tol,
        "sigma_max": set.sigma_max,
        "first_excluded_singular_value": set.first_excluded_singular_value,
        "representative_residual": set.representative_residual,
        "truncation_suspect": set.truncation_suspect,
        "superoperator_self_test_error": self_test,
        "spectral_gap": {
            "gap": gap.gap,
            "slowest_mode": gap.slowest_mode.map(complex_json),
            "decay_tol": gap.decay_tol,
        },
        "fidelity_table": table,
    });
    Ok(Section {
        caveats,
        details,
        ..Section::default()
    })
}

/// Row-sum norm of `𝓛(V) − expected` on the levels below the top `boundary_levels`.
fn generator_checks(sc: &Scenario) -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for check in &sc.generator_checks {
        let (_, v) = sc
            .lyapunov
            .iter()
            .find(|(n, _)| n == &check.operator)
            .expect("validated at parse");
        let lv = gksl::adjoint_generator(&sc.model, v.as_ref())?;
        let diff = lv - &check.expected;
        let k = sc.dim - check.boundary_levels;
        let residual = (0..k)
            .map(|i| (0..k).map(|j| diff[(i, j)].norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        out.push(json!({
            "name": check.name,
            "operator": check.operator,
            "interior_levels": k,
            "residual_inf_norm": residual,
            "tol": check.tol,
            "holds": residual <= check.tol,
        }));
    }
    Ok(out)
}

fn certify(ctx: &mut Shared, _art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    ctx.first_candidate()?;
    let tols = certificate_tolerances(sc);
    let set = ctx.set()?;
    let mut certificates = Vec::new();
    let mut section = Section::default();
    for (k, (name, v)) in sc.lyapunov.iter().enumerate() {
        info!("classifying candidate {name}");
        let report = lyapunov::classify_stability_with(&sc.model, v.as_ref(), set, &tols)
            .with_context(|| format!("certifying candidate {name}"))?;
        let mut witnesses = serde_json::to_value(&report.witnesses)?;
        if let Value::Object(m) = &mut witnesses {
            m.insert("candidate".into(), json!(name));
            m.insert("gamma".into(), json!(report.gamma));
            m.insert("zeta".into(), json!(report.zeta));
        }
        if k == 0 {
            section.verdict = Some(report.verdict.as_str().to_string());
            section.witnesses = Some(witnesses.clone());
            section.inconclusive = report.verdict == Verdict::Inconclusive;
            section.caveats.extend(report.caveats.iter().cloned());
        } else {
            section
                .caveats
                .extend(report.caveats.iter().map(|c| format!("{name}: {c}")));
        }
        certificates.push(json!({
            "candidate": name,
            "verdict": report.verdict.as_str(),
            "gamma": report.gamma,
            "zeta": report.zeta,
            "witnesses": witnesses,
            "caveats": report.caveats,
        }));
    }
    section.details = json!({
        "tolerances": tols,
        "certificates": certificates,
        "generator_checks": generator_checks(sc)?,
    });
    Ok(section)
}

fn distance(ctx: &mut Shared, art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    let (vname, v) = ctx.first_candidate()?;
    let gs = lyapunov::ground_set(v.as_ref(), sc.tolerances.gap_tol)?;
    let use_oracle = gs.rank <= lyapunov::BRUTE_FORCE_MAX_RANK;
    let mut caveats = Vec::new();
    if !use_oracle {
        caveats.push(format!(
            "ground set rank {} exceeds {}; brute-force oracle skipped",
            gs.rank,
            lyapunov::BRUTE_FORCE_MAX_RANK
        ));
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (k, (name, rho)) in sc.initial_states.iter().enumerate() {
        let energy = opalg::trace_product(v.as_ref(), rho.matrix().as_ref()).re;
        let b = lyapunov::distance_bracket(rho, &gs, v.as_ref()).with_context(|| format!("state {name}"))?;
        let oracle = if use_oracle {
            info!("oracle distance for {name}");
            Some(lyapunov::brute_force_distance(
                rho,
                gs.projector.as_ref(),
                sc.seed.wrapping_add(k as u64),
                sc.tolerances.oracle_budget,
            )?)
        } else {
            None
        };
        if let Some(d) = oracle {
            if d < b.lower - BRACKET_SLACK || d > b.upper + BRACKET_SLACK {
                caveats.push(format!(
                    "state {name}: oracle distance {d:.6e} outside bracket [{:.6e}, {:.6e}]",
                    b.lower, b.upper
                ));
            }
        }
        let method = |m: lyapunov::BoundMethod| serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from));
        rows.push(vec![
            name.clone(),
            num(energy),
            num(b.lower),
            num(b.upper),
            oracle.map(num).unwrap_or_default(),
            method(b.lower_method).unwrap_or_default(),
            method(b.upper_method).unwrap_or_default(),
        ]);
        table.push(json!({
            "state": name,
            "energy": energy,
            "bracket": b,
            "oracle": oracle,
        }));
    }
    let header = [
        "state",
        "energy",
        "lower",
        "upper",
        "oracle",
        "lower_method",
        "upper_method",
    ]
    .map(String::from);
    art.csv("distances.csv", &header, rows)?;
    let details = json!({
        "candidate": vname,
        "ground_set": {"rank": gs.rank, "p0": gs.p0, "p1": gs.p1, "kappa": gs.kappa, "gap_tol": gs.gap_tol},
        "oracle_budget": if use_oracle { Some(sc.tolerances.oracle_budget) } else { None },
        "states": table,
    });
    Ok(Section {
        caveats,
        details,
        ..Section::default()
    })
}

fn lasalle_section(ctx: &mut Shared, art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    let (vname, v) = ctx.first_candidate()?;
    let verdict = {
        let set = ctx.set()?;
        lasalle::corollary2_verdict(&sc.model, v.as_ref(), set)?
    };
    let (unique, sigma) = {
        let set = ctx.set()?;
        (set.dimension() == 1, set.representative.clone())
    };
    let dict = ObservableDictionary::default_for(sc.dim, Some(v))?;
    let trajs = ctx.trajectories()?;
    let mut caveats = verdict.caveats.clone();

    // Seminorm distances are measured against the stationary state, so they
    // need one to be unique.
    let tables = match (&sigma, unique) {
        (Some(sigma), true) => Some(
            trajs
                .iter()
                .map(|t| lasalle::seminorm_series(t, &dict, sigma))
                .collect::<qds_core::Result<Vec<_>>>()?,
        ),
        _ => {
            caveats.push("stationary state not unique; seminorm distances to it are not reported".into());
            None
        }
    };
    if let Some(tables) = &tables {
        let times = trajs[0].times().to_vec();
        let mut header = vec!["t".to_string()];
        for (s, _) in &sc.initial_states {
            header.push(format!("max[{s}]"));
            for o in dict.names() {
                header.push(format!("{o}[{s}]"));
            }
        }
        let rows = (0..times.len()).map(|i| {
            let mut row = vec![num(times[i])];
            for t in tables {
                row.push(num(t.max_series[i]));
                row.extend(t.values.iter().map(|series| num(series[i])));
            }
            row
        });
        art.csv("seminorms.csv", &header, rows)?;
    }

    let mut states = Vec::new();
    for (k, ((name, _), traj)) in sc.initial_states.iter().zip(trajs).enumerate() {
        let limits = lasalle::positive_limit_candidates(traj, LIMIT_TAIL, LIMIT_RADIUS)?;
        let residuals = limits
            .iter()
            .map(|c| {
                let r = gksl::predual_generator(&sc.model, c)?;
                opalg::trace_norm_hermitian(r.as_ref())
            })
            .collect::<qds_core::Result<Vec<_>>>()?;
        let final_max = tables.as_ref().and_then(|t| t[k].max_series.last().copied());
        states.push(json!({
            "name": name,
            "final_max_seminorm": final_max,
            "limit_candidates": limits.len(),
            "limit_candidate_residuals": residuals,
        }));
    }

    let applies = verdict.corollary2_applies;
    let witnesses = serde_json::to_value(&verdict)?;
    let details = json!({
        "candidate": vname,
        "dictionary": dict.names(),
        "dictionary_complete": dict.is_complete(),
        "seminorm_reference": if tables.is_some() { Some("unique stationary state") } else { None },
        "limit_tail_fraction": LIMIT_TAIL,
        "limit_radius": LIMIT_RADIUS,
        "states": states,
    });
    Ok(Section {
        verdict: Some(if applies { "corollary_applies" } else { "inconclusive" }.to_string()),
        witnesses: Some(witnesses),
        caveats,
        details,
        inconclusive: !applies,
    })
}

fn reproduce(ctx: &mut Shared, art: &mut Artifacts) -> Result<Section> {
    let sc = ctx.sc;
    let mut details = Map::new();
    let mut caveats = Vec::new();
    let sim = simulate(ctx, art)?;
    caveats.extend(sim.caveats);
    details.insert("simulate".into(), sim.details);

    let st = stationary(ctx, art)?;
    caveats.extend(st.caveats);
    details.insert("stationary".into(), st.details);

    let mut verdict = None;
    let mut witnesses = None;
    if !sc.lyapunov.is_empty() {
        let cert = certify(ctx, art)?;
        caveats.extend(cert.caveats);
        verdict = cert.verdict;
        witnesses = cert.witnesses;
        details.insert("certify".into(), cert.details);
        match lasalle_section(ctx, art) {
            Ok(ls) => {
                caveats.extend(ls.caveats);
                details.insert(
                    "lasalle".into(),
                    json!({"verdict": ls.verdict, "witnesses": ls.witnesses, "details": ls.details}),
                );
            }
            Err(e) => {
                warn!("invariance analysis skipped: {e:#}");
                caveats.push(format!("invariance analysis skipped: {e:#}"));
            }
        }
    }
    details.insert("notes".into(), json!(sc.notes));
    Ok(Section {
        verdict,
        witnesses,
        caveats,
        details: Value::Object(details),
        inconclusive: false,
    })
}

/// Runs `command` on `sc`, writing artifacts and `<command>.json` into `out`.
pub fn run(command: Command, sc: &Scenario, out: &Path) -> Result<Outcome> {
    let mut art = Artifacts::new(out)?;
    let mut ctx = Shared::new(sc);
    let section = match command {
        Command::Simulate => simulate(&mut ctx, &mut art),
        Command::Stationary => stationary(&mut ctx, &mut art),
        Command::Certify => certify(&mut ctx, &mut art),
        Command::Distance => distance(&mut ctx, &mut art),
        Command::Lasalle => lasalle_section(&mut ctx, &mut art),
        Command::Reproduce => reproduce(&mut ctx, &mut art),
    }?;
    let report = Report {
        scenario: sc.name.clone(),
        command: command.as_str().to_string(),
        verdict: section.verdict,
        witnesses: section.witnesses,
        files: Vec::new(),
        tool_version: TOOL_VERSION.to_string(),
        seed: sc.seed,
        caveats: section.caveats,
        details: section.details,
    };
    let report = art.finish(report)?;
    let status = if section.inconclusive {
        Status::Inconclusive
    } else {
        Status::Success
    };
    Ok(Outcome { status, report })
}
