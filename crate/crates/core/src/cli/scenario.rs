//! Scenario files: a versioned TOML schema with unknown keys rejected.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::design::{Injection, ObserverDesign};
use crate::error::{Error, Result};
use crate::highgain::{default_k_ladder, DEFAULT_FD_STEP};
use crate::injectivity::sample_eigenvalues;
use crate::model::{benchmark, BenchmarkSpec, DomainSpec, Margins, Region, SystemModel};
use crate::numerics::ComplexMatrix;
use crate::runtime::RescaleSpec;
use crate::transform::{hash64, Grid, DEFAULT_NODES_PER_AXIS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    pub domain: DomainSection,
    pub design: DesignSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub simulation: Option<SimulationSection>,
    pub invert: Option<InvertSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Either `lower`/`upper` (box) or `center`/`radius` (ball).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub margins: Option<Margins>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    #[default]
    Exact,
    Highgain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default)]
    pub mode: DesignMode,
    /// Decay bound; also the sampling box for seeded eigenvalues.
    pub ell: Option<f64>,
    /// Explicit eigenvalues as `[re, im]` pairs; sampled from the seed if absent.
    pub eigenvalues: Option<Vec<[f64; 2]>>,
    #[serde(default = "yes")]
    pub conjugate_closed: bool,
    #[serde(default = "identity")]
    pub injection: String,
    /// Number of eigenvalues; defaults to `n + 1` (exact) or `n` (highgain).
    pub m: Option<usize>,
    pub k_ladder: Option<Vec<f64>>,
    /// Fixed gain, bypassing the ladder search.
    pub k: Option<f64>,
    /// Simulated gain is `gain_factor · k*`.
    #[serde(default = "two")]
    pub gain_factor: f64,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nodes: Option<Vec<usize>>,
    #[serde(default = "nodes_per_axis")]
    pub nodes_per_axis: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { nodes: None, nodes_per_axis: DEFAULT_NODES_PER_AXIS }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "tol9")]
    pub quad_tol: f64,
    #[serde(default = "tol9")]
    pub tail_tol: f64,
    /// Fixed transform horizon; selected from `tail_tol` if absent.
    pub horizon: Option<f64>,
    #[serde(default = "tol10")]
    pub invert_tol: f64,
    #[serde(default = "tol9")]
    pub sim_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { quad_tol: 1e-9, tail_tol: 1e-9, horizon: None, invert_tol: 1e-10, sim_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverKind {
    Exact,
    Approx,
    Highgain,
    Rescaled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Defaults to the design mode.
    pub observer: Option<ObserverKind>,
    pub x0: Vec<Vec<f64>>,
    /// Initial observer state as `[re, im]` pairs, row-major; zero if absent.
    pub z0: Option<Vec<[f64; 2]>>,
    pub t_end: f64,
    #[serde(default = "stride")]
    pub stride: f64,
    pub rate_window: Option<[f64; 2]>,
    pub gamma: Option<GammaSection>,
}

/// `γ(y) = c0 + c2·|y|²`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    pub c0: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSection {
    pub z: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub dir: String,
    #[serde(default)]
    pub gnuplot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: out_dir(), gnuplot: false }
    }
}

fn yes() -> bool {
    true
}
fn identity() -> String {
    "identity".into()
}
fn two() -> f64 {
    2.0
}
fn fd_step() -> f64 {
    DEFAULT_FD_STEP
}
fn nodes_per_axis() -> usize {
    DEFAULT_NODES_PER_AXIS
}
fn tol9() -> f64 {
    1e-9
}
fn tol10() -> f64 {
    1e-10
}
fn stride() -> f64 {
    0.01
}
fn out_dir() -> String {
    "out".into()
}

/// Parameters accepted by each benchmark.
fn known_params(name: &str) -> &'static [&'static str] {
    match name {
        "constant" => &["dim"],
        "integrator_chain" => &["order"],
        "van_der_pol" => &["mu"],
        _ => &[],
    }
}

/// A validated scenario with its source kept for diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub source: String,
    pub origin: String,
}

impl LoadedScenario {
    pub fn from_path(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&source, &path.display().to_string())
    }

    pub fn parse(source: &str, origin: &str) -> Result<Self> {
        // toml's messages carry the line, column and a source excerpt
        let scenario: Scenario = toml::from_str(source).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let loaded = Self { scenario, source: source.to_string(), origin: origin.to_string() };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Error pointing at the line defining `section.key`, when it exists.
    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        match locate(&self.source, section, key) {
            Some(line) => Error::Config(format!("{}:{line}: {section}.{key}: {msg}", self.origin)),
            None => Error::Config(format!("{}: {section}.{key}: {msg}", self.origin)),
        }
    }

    fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.schema_version != SCHEMA_VERSION {
            return Err(self.err("", "schema_version", format!("expected {SCHEMA_VERSION}, got {}", s.schema_version)));
        }
        let allowed = known_params(&s.model.name);
        if let Some(k) = s.model.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(self.err("model", "params", format!("unknown parameter `{k}` for `{}`", s.model.name)));
        }
        self.model().map_err(|e| self.err("model", "name", e))?;
        let domain = self.domain()?;
        let n = domain.dim();
        let model = self.model()?;
        if model.n() != n {
            return Err(self.err("domain", "lower", format!("region has dimension {n}, model has {}", model.n())));
        }
        let t = &s.tolerances;
        for (key, v) in [("quad_tol", t.quad_tol), ("tail_tol", t.tail_tol), ("invert_tol", t.invert_tol), ("sim_tol", t.sim_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(self.err("tolerances", key, format!("must be positive, got {v}")));
            }
        }
        if let Some(h) = t.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(self.err("tolerances", "horizon", format!("must be positive, got {h}")));
            }
        }
        let d = &s.design;
        if d.eigenvalues.is_none() && d.ell.is_none() {
            return Err(self.err("design", "ell", "required when `eigenvalues` is not given"));
        }
        if let (Some(e), Some(m)) = (&d.eigenvalues, d.m) {
            if e.len() != m {
                return Err(self.err("design", "m", format!("{m} does not match {} explicit eigenvalues", e.len())));
            }
        }
        if d.m == Some(0) {
            return Err(self.err("design", "m", "must be positive"));
        }
        if !(d.gain_factor >= 1.0) {
            return Err(self.err("design", "gain_factor", format!("must be at least 1, got {}", d.gain_factor)));
        }
        if !(d.fd_step > 0.0) {
            return Err(self.err("design", "fd_step", "must be positive"));
        }
        if let Some(k) = d.k {
            if !(k >= 1.0 && k.is_finite()) {
                return Err(self.err("design", "k", format!("must be at least 1, got {k}")));
            }
        }
        if let Some(l) = &d.k_ladder {
            if l.is_empty() || l.iter().any(|k| !(*k >= 1.0 && k.is_finite())) {
                return Err(self.err("design", "k_ladder", "needs finite gains of at least 1"));
            }
        }
        if d.mode == DesignMode::Exact && (d.k.is_some() || d.k_ladder.is_some()) {
            return Err(self.err("design", "mode", "gain settings require mode = \"highgain\""));
        }
        Injection::from_label(&d.injection).map_err(|e| self.err("design", "injection", e))?;
        self.design().map_err(|e| self.err("design", "eigenvalues", e))?;
        let counts = self.grid_counts(n);
        if counts.len() != n || counts.contains(&0) {
            return Err(self.err("grid", "nodes", format!("need {n} positive counts")));
        }
        if let Some(sim) = &s.simulation {
            if sim.x0.is_empty() {
                return Err(self.err("simulation", "x0", "needs at least one initial state"));
            }
            if let Some(bad) = sim.x0.iter().find(|x| x.len() != n) {
                return Err(self.err("simulation", "x0", format!("{bad:?} is not {n}-dimensional")));
            }
            if !(sim.t_end > 0.0 && sim.t_end.is_finite()) {
                return Err(self.err("simulation", "t_end", "must be positive"));
            }
            if !(sim.stride > 0.0) {
                return Err(self.err("simulation", "stride", "must be positive"));
            }
            let kind = self.observer_kind();
            match (kind, d.mode) {
                (ObserverKind::Exact | ObserverKind::Rescaled, DesignMode::Highgain)
                | (ObserverKind::Approx | ObserverKind::Highgain, DesignMode::Exact) => {
                    return Err(self.err("simulation", "observer", format!("{kind:?} observer does not match design mode {:?}", d.mode)));
                }
                _ => {}
            }
            if kind == ObserverKind::Rescaled && sim.gamma.is_none() {
                return Err(self.err("simulation", "gamma", "required by the rescaled observer"));
            }
            if let Some(g) = sim.gamma {
                RescaleSpec::quadratic(g.c0, g.c2).map_err(|e| self.err("simulation", "gamma", e))?;
            }
            if let Some(z0) = &sim.z0 {
                let m = self.design()?.m();
                if z0.len() != m * model.p() {
                    return Err(self.err("simulation", "z0", format!("needs {} entries", m * model.p())));
                }
            }
        }
        if let Some(inv) = &s.invert {
            let m = self.design()?.m();
            if inv.z.len() != m * model.p() {
                return Err(self.err("invert", "z", format!("needs {} entries", m * model.p())));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SystemModel> {
        benchmark(&BenchmarkSpec::from_name(&self.scenario.model.name, &self.scenario.model.params)?)
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        let d = &self.scenario.domain;
        let region = match (&d.lower, &d.upper, &d.center, d.radius) {
            (Some(lower), Some(upper), None, None) => Region::Box { lower: lower.clone(), upper: upper.clone() },
            (None, None, Some(center), Some(radius)) => Region::Ball { center: center.clone(), radius },
            _ => return Err(self.err("domain", "lower", "give either lower/upper or center/radius")),
        };
        let built = match d.margins {
            Some(m) => DomainSpec::new(region, m),
            None => DomainSpec::with_default_margins(region),
        };
        built.map_err(|e| self.err("domain", if d.margins.is_some() { "margins" } else { "lower" }, e))
    }

    /// Eigenvalues are sampled from the scenario seed unless given.
    pub fn design_with_seed(&self, seed: u64) -> Result<ObserverDesign> {
        let d = &self.scenario.design;
        let n = self.model()?.n();
        let injection = Injection::from_label(&d.injection)?;
        match &d.eigenvalues {
            Some(e) => {
                let eig: Vec<Complex64> = e.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                match d.ell {
                    Some(ell) => ObserverDesign::new(eig, injection, ell),
                    None => ObserverDesign::from_eigenvalues(eig, injection),
                }
            }
            None => {
                let ell = d.ell.expect("validated");
                let m = d.m.unwrap_or(match d.mode {
                    DesignMode::Exact => n + 1,
                    DesignMode::Highgain => n,
                });
                let eig = sample_eigenvalues(m - 1, ell, seed, d.conjugate_closed)?;
                ObserverDesign::new(eig, injection, ell)
            }
        }
    }

    pub fn design(&self) -> Result<ObserverDesign> {
        self.design_with_seed(self.scenario.seed)
    }

    fn grid_counts(&self, n: usize) -> Vec<usize> {
        match &self.scenario.grid.nodes {
            Some(c) => c.clone(),
            None => vec![self.scenario.grid.nodes_per_axis; n],
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let domain = self.domain()?;
        Grid::over(&domain, self.grid_counts(domain.dim()))
    }

    pub fn k_ladder(&self) -> Vec<f64> {
        self.scenario.design.k_ladder.clone().unwrap_or_else(default_k_ladder)
    }

    pub fn observer_kind(&self) -> ObserverKind {
        let sim = self.scenario.simulation.as_ref();
        sim.and_then(|s| s.observer).unwrap_or(match self.scenario.design.mode {
            DesignMode::Exact => ObserverKind::Exact,
            DesignMode::Highgain => ObserverKind::Highgain,
        })
    }

    /// Digest of everything except the seed and the output settings.
    pub fn config_hash(&self) -> u64 {
        let mut s = self.scenario.clone();
        s.seed = 0;
        s.output = OutputSection::default();
        hash64(&serde_json::to_vec(&s).expect("scenario serializes"))
    }
}

/// Column of `[re, im]` pairs, row-major over an `m × p` matrix.
pub fn complex_matrix(pairs: &[[f64; 2]], m: usize, p: usize) -> ComplexMatrix {
    ComplexMatrix::from_row_iterator(m, p, pairs.iter().map(|[re, im]| Complex64::new(*re, *im)))
}

/// 1-based line of `key = …` inside `[section]` (top level for `""`).
pub fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_end_matches(']').trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim();
        let (sub, leaf) = match k.rsplit_once('.') {
            Some((a, b)) => (format!("{current}.{a}").trim_start_matches('.').to_string(), b.trim()),
            None => (current.clone(), k),
        };
        if sub == section && leaf == key {
            return Some(i + 1);
        }
    }
    // keys set through a sub-table such as `[domain.margins]`
    source
        .lines()
        .position(|l| l.trim().trim_start_matches('[').starts_with(&format!("{section}.{key}")))
        .map(|i| i + 1)
}
