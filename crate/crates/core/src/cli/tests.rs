use super::scenario::locate;
use super::*;

const HARMONIC: &str = r#"schema_version = 1
seed = 3

[model]
name = "harmonic"

[domain]
lower = [-1.0, -1.0]
upper = [1.0, 1.0]
margins = { upsilon = 0.25, distinguish = 0.5, cutoff = 1.0 }

[design]
eigenvalues = [[-1.0, 0.0], [-2.0, 0.0]]

[grid]
nodes_per_axis = 11

[tolerances]
quad_tol = 1e-11
tail_tol = 1e-11

[simulation]
x0 = [[0.5, -0.5], [0.1, 0.2]]
t_end = 1.0
stride = 0.1

[invert]
z = [[-0.1, 0.0], [-0.04, 0.0]]

[output]
gnuplot = true
"#;

fn context(text: &str, out: &Path) -> Context {
    let s = LoadedScenario::parse(text, "test.toml").unwrap();
    Context::new(s, &RunFlags { out: Some(out.to_path_buf()), ..RunFlags::default() }).unwrap()
}

fn config_error(text: &str) -> String {
    match LoadedScenario::parse(text, "test.toml") {
        Err(Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// `σ_min` of the 2×2 map `x ↦ [−(λ_i x₁ + x₂)/(1 + λ_i²)]_i`.
fn harmonic_sigma_min(l1: f64, l2: f64) -> f64 {
    let (a, b) = (-l1 / (1.0 + l1 * l1), -1.0 / (1.0 + l1 * l1));
    let (c, d) = (-l2 / (1.0 + l2 * l2), -1.0 / (1.0 + l2 * l2));
    let s = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    (0.5 * (s - (s * s - 4.0 * det * det).sqrt())).sqrt()
}

#[test]
fn diagnostics_carry_line_numbers() {
    let unknown = config_error(&HARMONIC.replace("nodes_per_axis = 11", "nodes_per_axes = 11"));
    assert!(unknown.contains("line 16"), "{unknown}");
    assert!(unknown.contains("nodes_per_axes"), "{unknown}");

    let tol = config_error(&HARMONIC.replace("quad_tol = 1e-11", "quad_tol = -1.0"));
    assert!(tol.starts_with("test.toml:19: tolerances.quad_tol"), "{tol}");

    let version = config_error(&HARMONIC.replace("schema_version = 1", "schema_version = 2"));
    assert!(version.starts_with("test.toml:1:"), "{version}");

    let bench = config_error(&HARMONIC.replace("\"harmonic\"", "\"lorenz\""));
    assert!(bench.contains(":5: model.name") && bench.contains("lorenz"), "{bench}");

    let param = config_error(&HARMONIC.replace("name = \"harmonic\"", "name = \"harmonic\"\nparams = { mu = 1.0 }"));
    assert!(param.contains("unknown parameter `mu`"), "{param}");

    let no_ell = config_error(&HARMONIC.replace("eigenvalues = [[-1.0, 0.0], [-2.0, 0.0]]", "m = 3"));
    assert!(no_ell.contains("design.ell"), "{no_ell}");

    let gain = config_error(&HARMONIC.replace("[design]\n", "[design]\nk = 4.0\n"));
    assert!(gain.contains("design.mode"), "{gain}");

    let z0 = config_error(&HARMONIC.replace("stride = 0.1", "stride = 0.1\nz0 = [[0.0, 0.0]]"));
    assert!(z0.contains("simulation.z0"), "{z0}");

    let rescaled = config_error(&HARMONIC.replace("stride = 0.1", "stride = 0.1\nobserver = \"rescaled\""));
    assert!(rescaled.contains("simulation.gamma"), "{rescaled}");
}

#[test]
fn locate_handles_sections_and_dotted_keys() {
    let src = "a = 1\n[x]\nb = 2\nc.d = 3\n[x.e]\nf = 4\n";
    assert_eq!(locate(src, "", "a"), Some(1));
    assert_eq!(locate(src, "x", "b"), Some(3));
    assert_eq!(locate(src, "x.c", "d"), Some(4));
    assert_eq!(locate(src, "x.e", "f"), Some(6));
    assert_eq!(locate(src, "x", "e"), Some(5));
    assert_eq!(locate(src, "x", "z"), None);
}

#[test]
fn hash_ignores_seed_and_output() {
    let a = LoadedScenario::parse(HARMONIC, "a").unwrap();
    let b = LoadedScenario::parse(&HARMONIC.replace("seed = 3", "seed = 4").replace("gnuplot = true", "dir = \"elsewhere\""), "b").unwrap();
    let c = LoadedScenario::parse(&HARMONIC.replace("t_end = 1.0", "t_end = 1.5"), "c").unwrap();
    assert_eq!(a.config_hash(), b.config_hash());
    assert_ne!(a.config_hash(), c.config_hash());
}

#[test]
fn seeded_eigenvalues_follow_the_seed() {
    let text = HARMONIC
        .replace("eigenvalues = [[-1.0, 0.0], [-2.0, 0.0]]", "ell = -1.0")
        .replace("[invert]\nz = [[-0.1, 0.0], [-0.04, 0.0]]\n", "");
    let s = LoadedScenario::parse(&text, "t").unwrap();
    let a = s.design_with_seed(1).unwrap();
    assert_eq!(a.m(), 3);
    assert_eq!(a.eigenvalues(), s.design_with_seed(1).unwrap().eigenvalues());
    assert_ne!(a.eigenvalues(), s.design_with_seed(2).unwrap().eigenvalues());
    let s = LoadedScenario::parse(&text.replace("ell = -1.0", "ell = -1.0\nm = 4\nconjugate_closed = false"), "t").unwrap();
    assert_eq!(s.design().unwrap().m(), 4);
}

#[test]
fn synth_reports_linear_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(HARMONIC, dir.path());
    let out = ctx.synth().unwrap();
    assert_eq!(out.artifacts.len(), 2);
    let report = json(&dir.path().join("synth.json"));
    assert_eq!(report["config_hash"], format!("{:016x}", ctx.hash));
    assert_eq!(report["seed"], 3);
    let modulus = report["injectivity"]["modulus"].as_f64().unwrap();
    let sigma = harmonic_sigma_min(-1.0, -2.0);
    assert!(modulus >= sigma * (1.0 - 1e-6) && modulus <= 1.05 * sigma, "{modulus} vs {sigma}");
    let table = TransformTable::load(&dir.path().join(TABLE_FILE)).unwrap();
    assert_eq!((table.config_hash, table.seed), (ctx.hash, 3));
    assert_eq!(provenance(&dir.path().join(TABLE_FILE)).unwrap(), (ctx.hash, 3));
}

#[test]
fn invert_and_fingerprint_check() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(HARMONIC, dir.path());
    // z = T(x) for x = (0, 0.2): rows −x₂/(1 + λ²)
    let out = ctx.invert().unwrap();
    assert!(out.artifacts.iter().any(|p| p.ends_with(TABLE_FILE)));
    let q = json(&dir.path().join("inverse.json"));
    let x: Vec<f64> = q["x_hat"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(x[0].abs() < 1e-7 && (x[1] - 0.2).abs() < 1e-7, "{x:?}");

    // a second query reuses the table
    assert!(ctx.invert().unwrap().artifacts.iter().all(|p| !p.ends_with(TABLE_FILE)));

    // corrupt the fingerprint of a table claiming this scenario
    let path = dir.path().join(TABLE_FILE);
    let mut bytes = fs::read(&path).unwrap();
    bytes[12] ^= 0xff;
    fs::write(&path, bytes).unwrap();
    assert!(matches!(ctx.invert(), Err(Error::Fingerprint { .. })));

    // a table from another seed is replaced
    let other = Context::new(ctx.scenario.clone(), &RunFlags { seed: Some(9), out: Some(dir.path().to_path_buf()), ..RunFlags::default() }).unwrap();
    assert!(other.invert().unwrap().artifacts.iter().any(|p| p.ends_with(TABLE_FILE)));
}

#[test]
fn simulate_writes_traces_summaries_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(HARMONIC, dir.path());
    let out = ctx.simulate().unwrap();
    assert_eq!(out.lines.len(), 2);
    for i in 0..2 {
        let csv = fs::read_to_string(dir.path().join(format!("trace_{i}.csv"))).unwrap();
        assert!(csv.starts_with(&format!("# mode=exact config_hash={:016x} seed=3\n", ctx.hash)));
        assert_eq!(csv.lines().count(), 2 + 11);
        let text = fs::read_to_string(dir.path().join(format!("summary_{i}.json"))).unwrap();
        assert_eq!(text.matches("\"config_hash\"").count(), 1);
        let summary = json(&dir.path().join(format!("summary_{i}.json")));
        assert_eq!(summary["config_hash"], format!("{:016x}", ctx.hash));
        assert!(summary["error_identity_gap"].as_f64().unwrap() < 1e-8);
        let plot = fs::read_to_string(dir.path().join(format!("plot_{i}.gp"))).unwrap();
        assert!(plot.contains(&format!("trace_{i}.csv")) && plot.contains("using 1:10"));
        assert_eq!(provenance(&dir.path().join(format!("plot_{i}.gp"))).unwrap(), (ctx.hash, 3));
    }
}

#[test]
fn certify_chain_and_duffing() {
    let chain = r#"schema_version = 1
[model]
name = "integrator_chain"
params = { order = 3 }
[domain]
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]
[design]
mode = "highgain"
eigenvalues = [[-1.0, 0.0], [-2.0, 0.0], [-3.0, 0.0]]
[grid]
nodes_per_axis = 5
"#;
    let dir = tempfile::tempdir().unwrap();
    context(chain, dir.path()).certify().unwrap();
    let cert = json(&dir.path().join("cert.json"));
    assert_eq!(cert["satisfied"], true);
    assert_eq!(cert["n"], 0.0);
    assert_eq!(cert["k"], 1.0);

    let duffing = chain
        .replace("\"integrator_chain\"\nparams = { order = 3 }", "\"duffing\"")
        .replace("[-1.0, -1.0, -1.0]", "[-2.0, -2.0]")
        .replace("[1.0, 1.0, 1.0]", "[2.0, 2.0]")
        .replace(", [-3.0, 0.0]", "")
        .replace("[grid]", "k_ladder = [1.0, 2.0, 4.0]\n[grid]");
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(&duffing, dir.path());
    let r = ctx.certify();
    assert!(matches!(r, Err(Error::NoCertifiedGain { .. })));
    assert_eq!(exit_code(&r.map(|_| Outcome::default())), 2);
    let cert = json(&dir.path().join("cert.json"));
    assert_eq!(cert["satisfied"], false);
    assert_eq!(cert["k"], 4.0);
    assert!(matches!(ctx.simulate(), Err(Error::Config(_))));
    assert!(matches!(ctx.synth(), Err(Error::NoCertifiedGain { .. })));
}

#[test]
fn compare_refuses_mismatched_provenance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    context(HARMONIC, a.path()).synth().unwrap();
    context(HARMONIC, b.path()).synth().unwrap();
    assert!(compare_artifacts(a.path(), b.path()).unwrap().is_empty());

    let s = LoadedScenario::parse(HARMONIC, "t").unwrap();
    Context::new(s, &RunFlags { seed: Some(5), out: Some(b.path().to_path_buf()), ..RunFlags::default() })
        .unwrap()
        .synth()
        .unwrap();
    let err = compare_artifacts(a.path(), b.path()).unwrap_err();
    assert!(err.to_string().contains("refusing to compare"), "{err}");
}
