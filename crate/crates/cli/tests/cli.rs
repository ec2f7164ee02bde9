use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn psboot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psboot")).args(args).output().expect("binary runs")
}

fn run_ok(cmd: &str, config: &Path, out: &Path, seed: Option<&str>, threads: &str) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    let o = psboot(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Every artifact except the manifest, by file name.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

const DATA_10X3: &str = "1,2,3\n\
0.5,1.2,-0.3\n1.1,0.7,0.2\n-0.4,1.9,0.1\n0.9,1.0,-0.5\n0.2,1.4,0.4\n\
1.5,0.8,0.0\n0.0,1.1,-0.2\n0.7,1.6,0.3\n-0.1,0.9,-0.1\n1.2,1.3,0.6\n";

fn stochastic_configs(dir: &Path) -> Vec<(&'static str, PathBuf)> {
    write(dir, "data.csv", DATA_10X3);
    vec![
        (
            "gen-data",
            write(
                dir,
                "gen.toml",
                "n = 300\nnoise = \"symmetric-exponential\"\n[model]\np = 4\n[model.corr]\nkind = \"autoregressive\"\nparams = { rho0 = 0.4 }\n[model.sigma]\nkind = \"power\"\nc = 1.0\nalpha = 0.7\n",
            ),
        ),
        ("sci", write(dir, "sci.toml", "data = \"data.csv\"\nb = 100\nrho = 0.1\n[tau]\nkind = \"fixed\"\ntau = 0.5\n")),
        ("fda-experiment", write(dir, "fda.toml", "n = 12\np = 10\nb = 150\nn_sims = 6\ngrid_size = 41\n")),
        (
            "multinomial-experiment",
            write(dir, "mult.toml", "n = 120\nb = 150\nn_sims = 8\n[model]\nkind = \"zipf\"\np = 40\neta = 1.0\n"),
        ),
        (
            "rate-study",
            write(
                dir,
                "rate.toml",
                "ns = [20, 40]\nref_draws = 1000\nouter_reps = 3\nb = 100\ntau = 0.8\n[p_rule]\nkind = \"fixed\"\np = 15\n",
            ),
        ),
    ]
}

#[test]
fn stochastic_commands_ignore_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    for (cmd, config) in stochastic_configs(tmp.path()) {
        let one = tmp.path().join(format!("{cmd}-1"));
        let three = tmp.path().join(format!("{cmd}-3"));
        run_ok(cmd, &config, &one, Some("7"), "1");
        run_ok(cmd, &config, &three, Some("7"), "3");
        let (a, b) = (artifacts(&one), artifacts(&three));
        assert!(!a.is_empty(), "{cmd} wrote nothing");
        assert_eq!(a, b, "{cmd} output depends on the thread count");
        assert!(one.join("manifest.json").exists());
    }
}

#[test]
fn sci_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = stochastic_configs(tmp.path());
    let config = &configs.iter().find(|c| c.0 == "sci").unwrap().1;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("sci", config, &a, Some("7"), "auto");
    run_ok("sci", config, &b, Some("7"), "auto");
    let ia = fs::read_to_string(a.join("intervals.csv")).unwrap();
    assert_eq!(ia, fs::read_to_string(b.join("intervals.csv")).unwrap());
    assert_eq!(ia.lines().count(), 4);
    assert!(ia.starts_with("j,lo,hi,sigma_hat,width\n"));
    let c = tmp.path().join("c");
    run_ok("sci", config, &c, Some("8"), "auto");
    assert_ne!(ia, fs::read_to_string(c.join("intervals.csv")).unwrap());
}

#[test]
fn manifest_has_the_documented_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = stochastic_configs(tmp.path());
    let config = &configs.iter().find(|c| c.0 == "gen-data").unwrap().1;
    let out = tmp.path().join("out");
    run_ok("gen-data", config, &out, Some("11"), "2");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["command", "config", "seed", "threads", "version", "started_at", "duration_s"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["threads"], 2);
    assert_eq!(m["config"]["n"], 300);
}

#[test]
fn diagnostics_reads_a_model_json() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        tmp.path(),
        "model.json",
        r#"{"p": 50, "corr": {"kind": "autoregressive", "params": {"rho0": 0.5}}, "sigma": {"kind": "power", "c": 1.0, "alpha": 0.8}}"#,
    );
    let out = tmp.path().join("diag");
    run_ok("diagnostics", &config, &out, None, "auto");
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!((d["alpha_hat"].as_f64().unwrap() - 0.8).abs() < 1e-9);
    assert!(d["effective_rank"].as_f64().unwrap() > 1.0);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = stochastic_configs(tmp.path());
    let gen = configs.iter().find(|c| c.0 == "gen-data").unwrap().1.clone();
    let out = tmp.path().join("never");
    let out_s = out.to_str().unwrap();

    assert_eq!(psboot(&["bogus-command"]).status.code(), Some(1));
    // stochastic commands need a seed
    assert_eq!(psboot(&["gen-data", "--config", gen.to_str().unwrap(), "--out", out_s]).status.code(), Some(1));
    let typo = write(tmp.path(), "typo.toml", "n_simz = 3\n");
    let o = psboot(&["fda-experiment", "--config", typo.to_str().unwrap(), "--out", out_s, "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let bad_tau = write(tmp.path(), "tau.toml", "data = \"data.csv\"\n[tau]\nkind = \"fixed\"\ntau = 1.5\n");
    let o = psboot(&["sci", "--config", bad_tau.to_str().unwrap(), "--out", out_s, "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.join("manifest.json").exists());
    assert_eq!(psboot(&["sci", "--threads", "zero"]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two_without_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        tmp.path(),
        "bad.toml",
        "n = 5\n[model]\np = 3\n[model.corr]\nkind = \"explicit\"\nparams = { matrix = [[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]] }\n[model.sigma]\nkind = \"explicit\"\nvalues = [1.0, 1.0, 1.0]\n",
    );
    let out = tmp.path().join("out");
    let o = psboot(&["gen-data", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn help_lists_defaults() {
    let o = psboot(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("min_count 5") && text.contains("ref_draws (20000)"));
}
