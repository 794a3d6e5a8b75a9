//! Scenario-driven pipeline behind the `kkl` binary.
//!
//! Every artifact records the scenario hash and seed: the binary table in its
//! header, JSON files as top-level `config_hash`/`seed` fields and CSV traces
//! in a leading `#` comment.

pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::Value;

use crate::acceptance;
use crate::error::{Error, Result};
use crate::highgain::{cert_at, certify_gain, gain_constants, GainCert, HighGainTransform};
use crate::injectivity::{injectivity_modulus, InjectivityReport};
use crate::inversion::invert;
use crate::model::SaturatedSystem;
use crate::numerics::ComplexMatrix;
use crate::runtime::{simulate, Observer, RescaleSpec, SimOptions, SimSummary, SimTrace};
use crate::transform::{tabulate, ExactTransform, Transform, TransformTable};
pub use scenario::{DesignMode, LoadedScenario, ObserverKind, Scenario, SCHEMA_VERSION};

pub const TABLE_FILE: &str = "table.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Certify,
    Invert,
    Simulate,
    Bench,
}

#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub override_cert: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Process exit status for a command result: 0, 2 for certification
/// failures, 1 otherwise.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_certification() => 2,
        Err(_) => 1,
    }
}

pub fn run(command: Command, config: &Path, flags: &RunFlags) -> Result<Outcome> {
    let scenario = LoadedScenario::from_path(config)?;
    let ctx = Context::new(scenario, flags)?;
    fs::create_dir_all(&ctx.out)?;
    match command {
        Command::Synth => ctx.synth(),
        Command::Certify => ctx.certify(),
        Command::Invert => ctx.invert(),
        Command::Simulate => ctx.simulate(),
        Command::Bench => ctx.bench(),
    }
}

/// A scenario with the effective seed and output directory resolved.
pub struct Context {
    pub scenario: LoadedScenario,
    pub seed: u64,
    pub hash: u64,
    pub out: PathBuf,
    pub override_cert: bool,
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct SynthReport<'a> {
    model: &'a str,
    transform: String,
    fingerprint: String,
    eigenvalues: Vec<[f64; 2]>,
    horizon: f64,
    k: Option<f64>,
    nodes: usize,
    injectivity: &'a InjectivityReport,
}

#[derive(Serialize)]
struct InverseReport {
    fingerprint: String,
    z: Vec<[f64; 2]>,
    x_hat: Vec<f64>,
    residual: f64,
    seed_index: usize,
    seed_residual: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    passed: usize,
    total: usize,
    criteria: &'a [acceptance::CriterionResult],
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial artifact.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn pairs(z: &ComplexMatrix) -> Vec<[f64; 2]> {
    // row-major, matching the scenario layout
    let (m, p) = z.shape();
    (0..m).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| [z[(i, j)].re, z[(i, j)].im]).collect()
}

enum Built {
    Exact(ExactTransform),
    HighGain(HighGainTransform, GainCert),
}

impl Built {
    fn transform(&self) -> &dyn Transform {
        match self {
            Built::Exact(t) => t,
            Built::HighGain(t, _) => t,
        }
    }
}

impl Context {
    pub fn new(scenario: LoadedScenario, flags: &RunFlags) -> Result<Self> {
        let seed = flags.seed.unwrap_or(scenario.scenario.seed);
        let hash = scenario.config_hash();
        let out = flags.out.clone().unwrap_or_else(|| PathBuf::from(&scenario.scenario.output.dir));
        Ok(Self { scenario, seed, hash, out, override_cert: flags.override_cert })
    }

    fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        self.write_json(name, &Artifact { config_hash: format!("{:016x}", self.hash), seed: self.seed, body })
    }

    /// For bodies that already carry `config_hash` and `seed`.
    fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(body)?;
        text.push('\n');
        let path = self.out.join(name);
        write_artifact(&path, text.as_bytes())?;
        Ok(path)
    }

    fn exact_transform(&self) -> Result<ExactTransform> {
        let s = &self.scenario;
        let sys = SaturatedSystem::new(s.model()?, s.domain()?)?;
        let design = s.design_with_seed(self.seed)?;
        let t = &s.scenario.tolerances;
        match t.horizon {
            Some(h) => ExactTransform::new(sys, design, h, t.quad_tol),
            None => ExactTransform::with_auto_horizon(sys, design, t.tail_tol, t.quad_tol),
        }
    }

    /// Certificate at the requested gain, or at `gain_factor · k*` from the
    /// ladder. Without the override an uncertified gain is an error.
    fn certified_gain(&self) -> Result<GainCert> {
        let s = &self.scenario;
        let (model, domain, design, grid) = (s.model()?, s.domain()?, s.design_with_seed(self.seed)?, s.grid()?);
        let d = &s.scenario.design;
        let at = |k: f64| {
            let constants = gain_constants(&model, &domain, &design, &grid, self.seed)?;
            cert_at(&model, &domain, &design, &grid, constants, k, self.seed)
        };
        let cert = match d.k {
            Some(k) => at(k)?,
            None => match certify_gain(&model, &domain, &design, &grid, &s.k_ladder(), self.seed) {
                Ok(c) if d.gain_factor == 1.0 => c,
                Ok(c) => at(d.gain_factor * c.k)?,
                Err(e) if e.is_certification() && self.override_cert => {
                    at(s.k_ladder().into_iter().fold(1.0, f64::max))?
                }
                Err(e) => return Err(e),
            },
        };
        if !cert.satisfied && !self.override_cert {
            return Err(Error::Uncertified { k: cert.k, small_gain: cert.small_gain });
        }
        Ok(cert)
    }

    fn highgain_transform(&self, k: f64) -> Result<HighGainTransform> {
        let s = &self.scenario;
        let mut t = HighGainTransform::new(s.model()?, s.domain()?, s.design_with_seed(self.seed)?, k)?;
        t.fd_step = s.scenario.design.fd_step;
        Ok(t)
    }

    fn build(&self) -> Result<Built> {
        Ok(match self.scenario.scenario.design.mode {
            DesignMode::Exact => Built::Exact(self.exact_transform()?),
            DesignMode::Highgain => {
                let cert = self.certified_gain()?;
                Built::HighGain(self.highgain_transform(cert.k)?, cert)
            }
        })
    }

    /// Reuses `table.bin` when it was written by this scenario and seed; a
    /// fingerprint mismatch there is an error. Otherwise tabulates afresh.
    fn table_for(&self, transform: &dyn Transform) -> Result<(TransformTable, Option<PathBuf>)> {
        let path = self.out.join(TABLE_FILE);
        if path.exists() {
            let table = TransformTable::load(&path)?;
            if table.config_hash == self.hash && table.seed == self.seed {
                table.check_fingerprint(transform.fingerprint())?;
                info!("reusing {}", path.display());
                return Ok((table, None));
            }
        }
        let mut table = tabulate(transform, self.scenario.grid()?)?;
        table.config_hash = self.hash;
        table.seed = self.seed;
        let mut buf = Vec::new();
        table.write_to(&mut buf)?;
        write_artifact(&path, &buf)?;
        Ok((table, Some(path)))
    }

    pub fn synth(&self) -> Result<Outcome> {
        let built = self.build()?;
        let transform = built.transform();
        let mut table = tabulate(transform, self.scenario.grid()?)?;
        table.config_hash = self.hash;
        table.seed = self.seed;
        let table_path = self.out.join(TABLE_FILE);
        let mut buf = Vec::new();
        table.write_to(&mut buf)?;
        write_artifact(&table_path, &buf)?;
        let report = injectivity_modulus(&table, self.seed);
        let info = &table.info;
        let body = SynthReport {
            model: &info.model_label,
            transform: info.transform_label.clone(),
            fingerprint: format!("{:016x}", info.fingerprint),
            eigenvalues: info.eigenvalues.iter().map(|l| [l.re, l.im]).collect(),
            horizon: info.horizon,
            k: match &built {
                Built::HighGain(t, _) => Some(t.k),
                Built::Exact(_) => None,
            },
            nodes: table.num_nodes(),
            injectivity: &report,
        };
        let report_path = self.json("synth.json", &body)?;
        let mut artifacts = vec![table_path, report_path];
        if let Built::HighGain(_, cert) = &built {
            artifacts.push(self.json("gain.json", cert)?);
        }
        Ok(Outcome {
            artifacts,
            lines: vec![format!("modulus {:e} over {} pairs ({} collisions)", report.modulus, report.pairs, report.collisions)],
        })
    }

    pub fn certify(&self) -> Result<Outcome> {
        let s = &self.scenario;
        let (model, domain, design, grid) = (s.model()?, s.domain()?, s.design_with_seed(self.seed)?, s.grid()?);
        let constants = gain_constants(&model, &domain, &design, &grid, self.seed)?;
        let ladder = s.k_ladder();
        let (cert, failure) = match s.scenario.design.k {
            Some(k) => {
                let cert = cert_at(&model, &domain, &design, &grid, constants, k, self.seed)?;
                let failure = (!cert.satisfied).then_some(Error::Uncertified { k, small_gain: cert.small_gain });
                (cert, failure)
            }
            None => match certify_gain(&model, &domain, &design, &grid, &ladder, self.seed) {
                Ok(cert) => (cert, None),
                Err(Error::NoCertifiedGain { k_required }) => {
                    let top = ladder.iter().copied().fold(1.0, f64::max);
                    let cert = cert_at(&model, &domain, &design, &grid, constants, top, self.seed)?;
                    (cert, Some(Error::NoCertifiedGain { k_required }))
                }
                Err(e) => return Err(e),
            },
        };
        let path = self.json("cert.json", &cert)?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(Outcome {
            artifacts: vec![path],
            lines: vec![format!("k = {} certified (N = {:.6}, 2Nλ_max(P) = {:.6})", cert.k, cert.n, cert.small_gain)],
        })
    }

    pub fn invert(&self) -> Result<Outcome> {
        let Some(query) = &self.scenario.scenario.invert else {
            return Err(Error::Config("`invert` needs an [invert] section with `z`".into()));
        };
        let built = self.build()?;
        let transform = built.transform();
        let (table, written) = self.table_for(transform)?;
        let z = scenario::complex_matrix(&query.z, transform.rows(), transform.cols());
        let q = invert(&table, transform, &z, self.scenario.scenario.tolerances.invert_tol)?;
        let body = InverseReport {
            fingerprint: format!("{:016x}", table.fingerprint()),
            z: pairs(&z),
            x_hat: q.x_hat.clone(),
            residual: q.residual,
            seed_index: q.seed_index,
            seed_residual: q.seed_residual,
            iterations: q.iterations,
        };
        let mut artifacts: Vec<PathBuf> = written.into_iter().collect();
        artifacts.push(self.json("inverse.json", &body)?);
        Ok(Outcome { artifacts, lines: vec![format!("x̂ = {:?}, residual {:e}", q.x_hat, q.residual)] })
    }

    pub fn simulate(&self) -> Result<Outcome> {
        let s = &self.scenario;
        let Some(sim) = &s.scenario.simulation else {
            return Err(Error::Config("`simulate` needs a [simulation] section".into()));
        };
        let tol = &s.scenario.tolerances;
        let opts = SimOptions {
            t_end: sim.t_end,
            tol: tol.sim_tol,
            stride: sim.stride,
            invert_tol: tol.invert_tol,
            override_cert: self.override_cert,
            ..SimOptions::default()
        };
        let kind = s.observer_kind();
        let exact;
        let high;
        let gamma;
        let cert;
        let table;
        let (observer, mut artifacts) = match kind {
            ObserverKind::Exact | ObserverKind::Rescaled => {
                exact = self.exact_transform()?;
                let (t, written) = self.table_for(&exact)?;
                table = t;
                let obs = if kind == ObserverKind::Exact {
                    Observer::Exact { transform: &exact, table: &table }
                } else {
                    let g = sim.gamma.expect("validated");
                    gamma = RescaleSpec::quadratic(g.c0, g.c2)?;
                    Observer::Rescaled { transform: &exact, table: &table, gamma: &gamma }
                };
                (obs, written.into_iter().collect::<Vec<_>>())
            }
            ObserverKind::Approx | ObserverKind::Highgain => {
                let mut written = Vec::new();
                cert = if kind == ObserverKind::Approx {
                    let (model, domain, design, grid) = (s.model()?, s.domain()?, s.design_with_seed(self.seed)?, s.grid()?);
                    let constants = gain_constants(&model, &domain, &design, &grid, self.seed)?;
                    cert_at(&model, &domain, &design, &grid, constants, 1.0, self.seed)?
                } else {
                    self.certified_gain()?
                };
                written.push(self.json("gain.json", &cert)?);
                high = self.highgain_transform(cert.k)?;
                let (t, w) = self.table_for(&high)?;
                written.extend(w);
                table = t;
                let obs = if kind == ObserverKind::Approx {
                    Observer::Approx { transform: &high, table: &table, cert: Some(&cert) }
                } else {
                    Observer::Highgain { transform: &high, table: &table, cert: Some(&cert) }
                };
                (obs, written)
            }
        };
        let (m, p) = (observer.eigenvalues().len(), s.model()?.p());
        let z0 = match &sim.z0 {
            Some(z) => scenario::complex_matrix(z, m, p),
            None => ComplexMatrix::zeros(m, p),
        };
        let window = sim.rate_window.map(|[a, b]| (a, b));
        let mut lines = Vec::new();
        for (i, x0) in sim.x0.iter().enumerate() {
            let trace = simulate(observer, x0, &z0, &opts)?;
            artifacts.push(self.write_trace(i, &trace)?);
            let summary = SimSummary::new(&trace, self.hash, self.seed, window)?;
            artifacts.push(self.write_json(&format!("summary_{i}.json"), &summary)?);
            if s.scenario.output.gnuplot {
                artifacts.push(self.write_plot(i, &trace)?);
            }
            lines.push(format!(
                "x0 = {x0:?}: t = {}, |x̂ − x| = {:e}, |e| = {:e}{}",
                summary.t_final,
                summary.final_err_state,
                summary.final_err_transform,
                summary.escape.as_ref().map(|e| format!(", escape at t = {}", e.time)).unwrap_or_default()
            ));
        }
        Ok(Outcome { artifacts, lines })
    }

    fn write_trace(&self, i: usize, trace: &SimTrace) -> Result<PathBuf> {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, self.hash, self.seed)?;
        let path = self.out.join(format!("trace_{i}.csv"));
        write_artifact(&path, &buf)?;
        Ok(path)
    }

    /// gnuplot script for the error columns of `trace_<i>.csv`.
    fn write_plot(&self, i: usize, trace: &SimTrace) -> Result<PathBuf> {
        let base = 1 + trace.n + 2 * trace.m * trace.p + trace.n;
        let script = format!(
            "# config_hash={:016x} seed={}\n\
             set datafile separator ','\n\
             set key autotitle columnhead\n\
             set logscale y\n\
             set xlabel 't'\n\
             plot 'trace_{i}.csv' using 1:{} with lines, '' using 1:{} with lines, '' using 1:{} with lines\n",
            self.hash,
            self.seed,
            base + 1,
            base + 2,
            base + 3
        );
        let path = self.out.join(format!("plot_{i}.gp"));
        write_artifact(&path, script.as_bytes())?;
        Ok(path)
    }

    pub fn bench(&self) -> Result<Outcome> {
        let results = acceptance::run_all(self.seed, &self.out);
        let passed = results.iter().filter(|r| r.passed).count();
        let lines: Vec<String> = results.iter().map(|r| r.line()).collect();
        let path = self.json("bench.json", &BenchReport { passed, total: results.len(), criteria: &results })?;
        if passed != results.len() {
            for l in &lines {
                println!("{l}");
            }
            return Err(Error::Acceptance(format!("{} of {} criteria failed", results.len() - passed, results.len())));
        }
        Ok(Outcome { artifacts: vec![path], lines })
    }
}

/// `(config_hash, seed)` embedded in an artifact file.
pub fn provenance(path: &Path) -> Result<(u64, u64)> {
    let bad = |what: &str| Error::Config(format!("{}: {what}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => {
            let t = TransformTable::load(path)?;
            Ok((t.config_hash, t.seed))
        }
        Some("json") => {
            let v: Value = serde_json::from_slice(&fs::read(path)?)?;
            let hash = v.get("config_hash").and_then(Value::as_str).ok_or_else(|| bad("no config_hash"))?;
            let seed = v.get("seed").and_then(Value::as_u64).ok_or_else(|| bad("no seed"))?;
            Ok((u64::from_str_radix(hash, 16).map_err(|_| bad("malformed config_hash"))?, seed))
        }
        Some("csv") | Some("gp") => {
            let text = fs::read_to_string(path)?;
            let first = text.lines().next().unwrap_or_default();
            let field = |key: &str| {
                first.split_whitespace().find_map(|w| w.strip_prefix(key)).ok_or_else(|| bad("no provenance comment"))
            };
            let hash = u64::from_str_radix(field("config_hash=")?, 16).map_err(|_| bad("malformed config_hash"))?;
            let seed = field("seed=")?.parse().map_err(|_| bad("malformed seed"))?;
            Ok((hash, seed))
        }
        _ => Err(bad("unknown artifact type")),
    }
}

/// Byte comparison of two artifact directories. Refuses to compare when
/// the embedded config hashes or seeds differ; returns the names that differ.
pub fn compare_artifacts(a: &Path, b: &Path) -> Result<Vec<String>> {
    let list = |dir: &Path| -> Result<Vec<String>> {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        Ok(names)
    };
    let (na, nb) = (list(a)?, list(b)?);
    let mut differ: Vec<String> = na.iter().filter(|n| !nb.contains(n)).chain(nb.iter().filter(|n| !na.contains(n))).cloned().collect();
    for name in na.iter().filter(|n| nb.contains(n)) {
        let (pa, pb) = (a.join(name), b.join(name));
        let (ha, hb) = (provenance(&pa)?, provenance(&pb)?);
        if ha != hb {
            return Err(Error::Config(format!(
                "refusing to compare {name}: config_hash/seed {:016x}/{} vs {:016x}/{}",
                ha.0, ha.1, hb.0, hb.1
            )));
        }
        if fs::read(&pa)? != fs::read(&pb)? {
            differ.push(name.clone());
        }
    }
    differ.sort();
    Ok(differ)
}

#[cfg(test)]
mod tests;
