//! JSON scenario format and its expansion into matrices.

use faer::c64;
use qds_core::fock::{self, FockTruncation};
use qds_core::opalg;
use qds_core::{CMat, CVec, DensityOperator, SystemModel};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{path}:{line}:{column}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Token {
    #[serde(rename = "a")]
    Annihilation,
    #[serde(rename = "ad")]
    Creation,
    #[serde(rename = "n")]
    Number,
    #[serde(rename = "id")]
    Identity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: [f64; 2],
    pub ops: Vec<Token>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTerms {
    name: String,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawState {
    Number {
        name: String,
        n: usize,
    },
    Coherent {
        name: String,
        alpha: [f64; 2],
    },
    Cat {
        name: String,
        alpha: [f64; 2],
        parity: Parity,
    },
    Matrix {
        name: String,
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl RawState {
    fn name(&self) -> &str {
        match self {
            RawState::Number { name, .. }
            | RawState::Coherent { name, .. }
            | RawState::Cat { name, .. }
            | RawState::Matrix { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub t0: f64,
    pub t1: f64,
    /// Number of intervals; the grid has `steps + 1` points.
    pub steps: usize,
}

impl Grid {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        anyhow::ensure!(parts.len() == 3, "grid must look like t0:t1:steps, got {text:?}");
        Ok(Self {
            t0: parts[0].trim().parse()?,
            t1: parts[1].trim().parse()?,
            steps: parts[2].trim().parse()?,
        })
    }

    pub fn points(&self) -> qds_core::Result<Vec<f64>> {
        qds_core::dynamics::uniform_grid(self.t0, self.t1, self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Exact propagator up to the superoperator size cap, Runge–Kutta beyond.
    #[default]
    Auto,
    Expm,
    Rk,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub null_rel_tol: Option<f64>,
    pub gap_tol: Option<f64>,
    pub psd_rel_tol: f64,
    pub kernel_rel_tol: f64,
    pub rk_rel_tol: f64,
    pub method: MethodChoice,
    /// Nelder–Mead evaluations per start in the distance oracle.
    pub oracle_budget: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            null_rel_tol: None,
            gap_tol: None,
            psd_rel_tol: 1e-9,
            kernel_rel_tol: 1e-8,
            rk_rel_tol: 1e-9,
            method: MethodChoice::Auto,
            oracle_budget: 4000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheck {
    name: String,
    operator: String,
    expected: Vec<Term>,
    #[serde(default = "default_boundary_levels")]
    boundary_levels: usize,
    #[serde(default = "default_check_tol")]
    tol: f64,
}

fn default_boundary_levels() -> usize {
    2
}

fn default_check_tol() -> f64 {
    1e-8
}

fn default_tail_tol() -> f64 {
    fock::DEFAULT_TAIL_TOL
}

fn default_seed() -> u64 {
    qds_core::random::DEFAULT_SEED
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: Option<String>,
    dim: usize,
    #[serde(default = "default_tail_tol")]
    tail_tol: f64,
    hamiltonian: Vec<Term>,
    #[serde(default)]
    couplings: Vec<Vec<Term>>,
    #[serde(default)]
    lyapunov: Vec<NamedTerms>,
    #[serde(default)]
    observables: Vec<NamedTerms>,
    #[serde(default)]
    initial_states: Vec<RawState>,
    #[serde(default)]
    reference_states: Vec<RawState>,
    grid: Grid,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    generator_checks: Vec<RawCheck>,
    #[serde(default)]
    notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Observable {
    pub name: String,
    pub matrix: CMat,
    pub hermitian: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratorCheck {
    pub name: String,
    pub operator: String,
    pub expected: CMat,
    /// Top Fock levels excluded from the comparison.
    pub boundary_levels: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub dim: usize,
    pub tail_tol: f64,
    pub model: SystemModel,
    pub lyapunov: Vec<(String, CMat)>,
    pub observables: Vec<Observable>,
    pub initial_states: Vec<(String, DensityOperator)>,
    /// Pure states used for fidelity tables.
    pub reference_states: Vec<(String, CVec)>,
    pub grid: Grid,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub generator_checks: Vec<GeneratorCheck>,
    pub notes: Vec<String>,
}

/// Command-line overrides applied before expansion.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<Grid>,
}

/// Evaluates a sum of products of ladder operators at dimension `dim`.
pub fn expand_terms(terms: &[Term], dim: usize) -> qds_core::Result<CMat> {
    let a = fock::ladder(dim)?;
    let ad = fock::creation(dim)?;
    let n = fock::number(dim);
    let mut out = opalg::zeros(dim);
    for term in terms {
        let mut prod = opalg::identity(dim);
        for tok in &term.ops {
            prod = match tok {
                Token::Annihilation => &prod * &a,
                Token::Creation => &prod * &ad,
                Token::Number => &prod * &n,
                Token::Identity => prod,
            };
        }
        out += opalg::scale(prod.as_ref(), c64::new(term.coeff[0], term.coeff[1]));
    }
    Ok(out)
}

/// 1-based line and column of byte offset `pos` in `text`.
fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

struct Locator<'a> {
    path: &'a str,
    text: &'a str,
}

impl Locator<'_> {
    /// Error positioned at the first occurrence of `needle`, or at the start.
    fn at(&self, needle: &str, message: impl Into<String>) -> ScenarioError {
        let pos = self.text.find(needle).unwrap_or(0);
        let (line, column) = line_col(self.text, pos);
        ScenarioError {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }

    fn quoted(&self, name: &str, message: impl Into<String>) -> ScenarioError {
        self.at(&format!("\"{name}\""), message)
    }
}

fn pure_vector(state: &RawState, dim: usize, tail_tol: f64) -> qds_core::Result<Option<CVec>> {
    Ok(match state {
        RawState::Number { n, .. } => Some(fock::number_state(dim, *n)?),
        RawState::Coherent { alpha, .. } => Some(fock::coherent_vector(dim, c64::new(alpha[0], alpha[1]), tail_tol)?),
        RawState::Cat { alpha, parity, .. } => {
            let cats = fock::cat_vectors(dim, c64::new(alpha[0], alpha[1]), tail_tol)?;
            match parity {
                Parity::Even => Some(cats.even),
                Parity::Odd => Some(
                    cats.odd
                        .ok_or_else(|| qds_core::Error::InvalidInput("odd cat is undefined for alpha = 0".into()))?,
                ),
            }
        }
        RawState::Matrix { .. } => None,
    })
}

fn density(state: &RawState, dim: usize, tail_tol: f64) -> qds_core::Result<DensityOperator> {
    if let Some(psi) = pure_vector(state, dim, tail_tol)? {
        return DensityOperator::pure(psi.as_ref());
    }
    let RawState::Matrix { re, im, .. } = state else {
        unreachable!("pure kinds handled above")
    };
    let rows_ok = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|r| r.len() == dim);
    if !rows_ok(re) || im.as_ref().is_some_and(|m| !rows_ok(m)) {
        let found = re.len();
        return Err(qds_core::Error::DimensionMismatch { expected: dim, found });
    }
    let m = faer::Mat::from_fn(dim, dim, |i, j| {
        c64::new(re[i][j], im.as_ref().map_or(0.0, |m| m[i][j]))
    });
    DensityOperator::new(m)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    parse_scenario_with(text, "<scenario>", Overrides::default())
}

pub fn parse_scenario_with(text: &str, path: &str, overrides: Overrides) -> Result<Scenario, ScenarioError> {
    let loc = Locator { path, text };
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| ScenarioError {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })?;

    let dim = overrides.dim.unwrap_or(raw.dim);
    if dim < 2 {
        return Err(loc.quoted("dim", format!("dim must be at least 2, got {dim}")));
    }
    if !(raw.tail_tol > 0.0 && raw.tail_tol < 1.0) {
        return Err(loc.quoted("tail_tol", "tail_tol must lie in (0, 1)"));
    }
    let expand = |terms: &[Term], anchor: &str| expand_terms(terms, dim).map_err(|e| loc.quoted(anchor, e.to_string()));

    let h = expand(&raw.hamiltonian, "hamiltonian")?;
    let couplings = raw
        .couplings
        .iter()
        .map(|t| expand(t, "couplings"))
        .collect::<Result<Vec<_>, _>>()?;
    let truncation = FockTruncation::new(dim, raw.tail_tol).map_err(|e| loc.quoted("dim", e.to_string()))?;
    let model = SystemModel::new(raw.name.clone(), h, couplings)
        .and_then(|m| m.with_truncation(truncation))
        .map_err(|e| loc.quoted("hamiltonian", e.to_string()))?;

    let mut names = std::collections::BTreeSet::new();
    let mut lyapunov = Vec::new();
    for entry in &raw.lyapunov {
        let v = expand(&entry.terms, &entry.name)?;
        if !opalg::is_hermitian(v.as_ref(), opalg::HERMITIAN_TOL) {
            return Err(loc.quoted(
                &entry.name,
                format!("Lyapunov candidate {:?} is not Hermitian", entry.name),
            ));
        }
        if !names.insert(entry.name.clone()) {
            return Err(loc.quoted(&entry.name, format!("duplicate operator name {:?}", entry.name)));
        }
        lyapunov.push((entry.name.clone(), opalg::hermitian_part(v.as_ref())));
    }
    let mut observables = Vec::new();
    for entry in &raw.observables {
        let m = expand(&entry.terms, &entry.name)?;
        if !names.insert(entry.name.clone()) {
            return Err(loc.quoted(&entry.name, format!("duplicate operator name {:?}", entry.name)));
        }
        let hermitian = opalg::is_hermitian(m.as_ref(), opalg::HERMITIAN_TOL);
        observables.push(Observable {
            name: entry.name.clone(),
            matrix: m,
            hermitian,
        });
    }

    let mut state_names = std::collections::BTreeSet::new();
    let mut initial_states = Vec::new();
    for s in &raw.initial_states {
        if !state_names.insert(s.name().to_string()) {
            return Err(loc.quoted(s.name(), format!("duplicate state name {:?}", s.name())));
        }
        let rho = density(s, dim, raw.tail_tol)
            .map_err(|e| loc.quoted(s.name(), format!("initial state {:?}: {e}", s.name())))?;
        initial_states.push((s.name().to_string(), rho));
    }
    let mut reference_states = Vec::new();
    for s in &raw.reference_states {
        let psi = pure_vector(s, dim, raw.tail_tol)
            .map_err(|e| loc.quoted(s.name(), format!("reference state {:?}: {e}", s.name())))?
            .ok_or_else(|| loc.quoted(s.name(), "reference states must be pure (number, coherent or cat)"))?;
        reference_states.push((s.name().to_string(), psi));
    }

    let mut generator_checks = Vec::new();
    for c in &raw.generator_checks {
        if !lyapunov.iter().any(|(n, _)| n == &c.operator) {
            return Err(loc.quoted(
                &c.operator,
                format!("generator check {:?} names unknown operator {:?}", c.name, c.operator),
            ));
        }
        if c.boundary_levels >= dim {
            return Err(loc.quoted(&c.name, "boundary_levels must be smaller than dim"));
        }
        generator_checks.push(GeneratorCheck {
            name: c.name.clone(),
            operator: c.operator.clone(),
            expected: expand(&c.expected, &c.name)?,
            boundary_levels: c.boundary_levels,
            tol: c.tol,
        });
    }

    let grid = overrides.grid.unwrap_or(raw.grid);
    grid.points().map_err(|e| loc.quoted("grid", e.to_string()))?;

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        dim,
        tail_tol: raw.tail_tol,
        model,
        lyapunov,
        observables,
        initial_states,
        reference_states,
        grid,
        tolerances: raw.tolerances,
        seed: overrides.seed.unwrap_or(raw.seed),
        generator_checks,
        notes: raw.notes,
    })
}

/// Shipped scenarios, addressable by name from `reproduce`.
pub const SHIPPED: [(&str, &str); 3] = [
    ("example1", include_str!("../scenarios/example1.json")),
    ("example2", include_str!("../scenarios/example2.json")),
    ("example3", include_str!("../scenarios/example3.json")),
];

pub fn shipped(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// `⟨ψ|P|ψ⟩`.
pub fn weight_on(projector: &CMat, psi: &CVec) -> f64 {
    opalg::expectation(projector.as_ref(), psi.as_ref()).re
}
