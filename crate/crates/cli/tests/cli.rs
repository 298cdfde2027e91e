use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn modreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modreg"))
        .args(args)
        .env_remove("MODREG_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Deterministic pseudo-normal draws (sum of uniforms from xorshift).
struct Draws(u64);

impl Draws {
    fn next(&mut self) -> f64 {
        let mut s = 0.0;
        for _ in 0..12 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            s += (self.0 >> 11) as f64 / (1u64 << 53) as f64;
        }
        s - 6.0
    }
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn schema(&self) -> String {
        self.write("schema.json", r#"{"x1": "x", "x2": "x", "z1": "z", "z2": "z", "y": "y"}"#)
    }

    /// Chain X → Z → Y with `n` rows; `cols` selects the written columns.
    fn data(&self, name: &str, n: usize, seed: u64, cols: &[&str]) -> String {
        let mut g = Draws(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1);
        let mut text = cols.join(",") + "\n";
        for _ in 0..n {
            let x1 = g.next();
            let x2 = g.next();
            let z1 = x1 + 0.5 * x2 + g.next();
            let z2 = x2 + g.next();
            let y = z1 - 0.5 * z2 + g.next();
            let row: Vec<String> = cols
                .iter()
                .map(|c| match *c {
                    "x1" => x1,
                    "x2" => x2,
                    "z1" => z1,
                    "z2" => z2,
                    "y" => y,
                    _ => unreachable!(),
                })
                .map(|v| format!("{v}"))
                .collect();
            text += &row.join(",");
            text += "\n";
        }
        self.write(name, &text)
    }

    fn triples(&self, name: &str, n: usize, seed: u64) -> String {
        self.data(name, n, seed, &["x1", "x2", "z1", "z2", "y"])
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_documents_every_subcommand() {
    for (sub, flags) in [
        ("fit", &["--method", "--data", "--schema", "--learner", "--folds", "--seed", "--out", "--structure", "--plugin"][..]),
        ("simulate", &["--config", "--replicates", "--jobs", "--out"][..]),
        ("fuse", &["--triples", "--xz", "--zy", "--schema"][..]),
    ] {
        let o = modreg(&[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8(o.stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn fit_mod_ols_writes_theta_and_covariance() {
    let f = Files::new();
    let (data, schema) = (f.triples("d.csv", 120, 1), f.schema());
    let out = f.path("fit.json");
    let o = modreg(&[
        "fit", "--method", "mod-ols", "--data", &data, "--schema", &schema, "--learner", "ridge",
        "--folds", "2", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    assert_eq!(v["theta"].as_array().unwrap().len(), 2);
    assert_eq!(v["covariance"].as_array().unwrap().len(), 2);
    assert_eq!(v["tag"], "mod-ols");
}

#[test]
fn identity_plugin_reproduces_ols_bytes() {
    let f = Files::new();
    let (data, schema) = (f.triples("d.csv", 80, 2), f.schema());
    let a = f.path("ols.json");
    let b = f.path("mod.json");
    for (method, extra, out) in [("ols", None, &a), ("mod-ols", Some("identity"), &b)] {
        let mut args = vec!["fit", "--method", method, "--data", &data, "--schema", &schema];
        if let Some(p) = extra {
            args.extend(["--plugin", p]);
        }
        args.extend(["--out", out.to_str().unwrap()]);
        assert_eq!(code(&modreg(&args)), 0);
    }
    let theta = |p: &Path| serde_json::to_string(&json(p)["theta"]).unwrap();
    assert_eq!(theta(&a), theta(&b));
}

#[test]
fn structure_learning_records_partition_and_path() {
    let f = Files::new();
    let (data, schema) = (f.triples("d.csv", 150, 3), f.schema());
    let out = f.path("lasso.json");
    let o = modreg(&[
        "fit", "--method", "mod-lasso", "--structure", "learn", "--learner", "linear", "--cv-folds", "5",
        "--data", &data, "--schema", &schema, "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    assert!(v["partition"]["j1"].is_array() && v["partition"]["j2"].is_array());
    assert!(v["lambda"].as_f64().unwrap() > 0.0);
    let path = std::fs::read_to_string(f.path("lasso.path.csv")).unwrap();
    assert!(path.starts_with("lambda,cv_error,cv_se,nnz,theta_1,theta_2"));
    assert_eq!(path.lines().count(), 101);
}

#[test]
fn fuse_with_triples_only_equals_fit() {
    let f = Files::new();
    let (data, schema) = (f.triples("t.csv", 100, 4), f.schema());
    let a = f.path("fit.json");
    let b = f.path("fuse.json");
    let common = ["--schema", &schema, "--learner", "linear", "--seed", "5"];
    let mut fit = vec!["fit", "--method", "mod-ols", "--data", &data, "--out", a.to_str().unwrap()];
    fit.extend(common);
    let mut fuse = vec!["fuse", "--triples", &data, "--out", b.to_str().unwrap()];
    fuse.extend(common);
    assert_eq!(code(&modreg(&fit)), 0);
    assert_eq!(code(&modreg(&fuse)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn fuse_pairs_only_succeeds() {
    let f = Files::new();
    let schema = f.schema();
    let xz = f.data("a.csv", 200, 5, &["x1", "x2", "z1", "z2"]);
    let zy = f.data("b.csv", 200, 6, &["z1", "z2", "y"]);
    let out = f.path("fuse.json");
    let o = modreg(&["fuse", "--xz", &xz, "--zy", &zy, "--schema", &schema, "--learner", "linear", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let theta = json(&out)["theta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>();
    // population OLS of Y on X: Y = x1 + 0.5 x2 − 0.5 x2 + noise
    assert!((theta[0] - 1.0).abs() < 0.3 && theta[1].abs() < 0.3, "{theta:?}");
}

#[test]
fn fuse_without_y_rows_is_a_data_error() {
    let f = Files::new();
    let schema = f.schema();
    let empty = f.write("t.csv", "x1,x2,z1,z2,y\n");
    let xz = f.data("a.csv", 50, 7, &["x1", "x2", "z1", "z2"]);
    let o = modreg(&["fuse", "--triples", &empty, "--xz", &xz, "--schema", &schema]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unidentifiable"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let f = Files::new();
    let schema = f.schema();
    let data = f.triples("d.csv", 40, 8);
    let o = modreg(&["fit", "--method", "ols", "--data", &data, "--schema", &schema, "--folds", "1"]);
    assert_eq!(code(&o), 2);
    let o = modreg(&["fit", "--method", "ols", "--data", "missing.csv", "--schema", &schema]);
    assert_eq!(code(&o), 3);
    let o = modreg(&["fit", "--bogus"]);
    assert_eq!(code(&o), 2);

    let mut text = String::from("x1,x2,z1,z2,y\n");
    for i in 0..20 {
        let v = i as f64 / 7.0;
        text += &format!("{v},{},{},{},{}\n", 2.0 * v, (i % 3) as f64, (i % 5) as f64, v.sin());
    }
    let collinear = f.write("c.csv", &text);
    let o = modreg(&["fit", "--method", "ols", "--data", &collinear, "--schema", &schema]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pivot"));
}

fn simulate(config: &str, out: &str, extra: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_modreg"));
    cmd.args(["simulate", "--config", config, "--out", out]).args(extra);
    match seed_env {
        Some(s) => cmd.env("MODREG_SEED", s),
        None => cmd.env_remove("MODREG_SEED"),
    };
    cmd.output().unwrap()
}

#[test]
fn simulate_is_deterministic_and_counts_rows() {
    let f = Files::new();
    let config = f.write("low1.json", r#"{"setting": "low1", "n": 60, "n_test": 50, "seed": 3}"#);
    let args = ["--replicates", "2", "--estimators", "ols,mod-ols[linear]"];
    let a = f.path("a");
    let b = f.path("b");
    let o = simulate(&config, a.to_str().unwrap(), &[&args[..], &["--jobs", "1"]].concat(), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&simulate(&config, b.to_str().unwrap(), &[&args[..], &["--jobs", "4"]].concat(), None)), 0);
    let csv_a = std::fs::read_to_string(a.join("replicates.csv")).unwrap();
    assert_eq!(csv_a.lines().count(), 5);
    assert_eq!(csv_a, std::fs::read_to_string(b.join("replicates.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("summary.json")).unwrap(),
        std::fs::read(b.join("summary.json")).unwrap()
    );
    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["config"]["b"].as_array().unwrap().len(), 6);
    assert_eq!(String::from_utf8_lossy(&o.stderr).matches("replicate ").count(), 2);

    let c = f.path("c");
    assert_eq!(code(&simulate(&config, c.to_str().unwrap(), &args, Some("99"))), 0);
    assert_eq!(json(&c.join("summary.json"))["config"]["seed"], 99);
    assert_eq!(code(&simulate(&config, c.to_str().unwrap(), &args, Some("abc"))), 2);
}

#[test]
fn simulate_rejects_bad_config() {
    let f = Files::new();
    let config = f.write("bad.json", r#"{"setting": "low9"}"#);
    let out = f.path("o");
    assert_eq!(code(&simulate(&config, out.to_str().unwrap(), &[], None)), 3);
}
