use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bdstein"));
    cmd.env_remove("BDSTEIN_OUT_DIR");
    cmd
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], None, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("verify.json"));
    assert_eq!(r["status"], "pass");
    assert!(!r["rows"].as_array().unwrap().is_empty());
}

#[test]
fn zero_time_residuals_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "truncation = 80\ntimes = [0.0]\n");
    let o = run(&["verify"], Some(&cfg), dir.path());
    assert_eq!(code(&o), 0);
    for row in report(&dir.path().join("verify.json"))["rows"].as_array().unwrap() {
        assert_eq!(row["residual"].as_f64().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn unmet_hypothesis_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], Some(&shipped("hypothesis_fail.toml")), dir.path());
    assert_eq!(code(&o), 3);
    let r = report(&dir.path().join("verify.json"));
    assert_eq!(r["rows"][0]["status"], "hypothesis_failed");
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["truncation = \"many\"\n", "seeed = 3\n", "truncation = 5\n", "times = [-1.0]\n"] {
        let cfg = write_config(dir.path(), text);
        let o = run(&["verify"], Some(&cfg), dir.path());
        assert_eq!(code(&o), 2, "{text}");
        assert!(!o.stderr.is_empty());
    }
    let o = run(&["verify"], Some(&dir.path().join("missing.toml")), dir.path());
    assert_eq!(code(&o), 2);
    let o = bin().args(["verify", "--format", "xml"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = run(&["distance"], None, dir.path());
    assert_eq!(code(&o), 2, "distance without a [distance] section");
}

#[test]
fn shipped_configs_exit_cleanly() {
    let cases = [
        ("verify", "verify_mminfty.toml", 0),
        ("verify", "verify_gwi.toml", 0),
        ("verify", "verify_mm1.toml", 0),
        ("factors", "factors.toml", 0),
        ("bounds", "bounds.toml", 0),
        ("mixture", "mixture_nb_poisson.toml", 0),
        ("distance", "distance.toml", 0),
        ("simulate", "simulate.toml", 0),
        ("verify", "hypothesis_fail.toml", 3),
    ];
    for (cmd, file, want) in cases {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[cmd], Some(&shipped(file)), dir.path());
        assert_eq!(code(&o), want, "{file}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn gwi_lipschitz_first_factor_is_one_over_q() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["factors"], Some(&shipped("factors.toml")), dir.path());
    assert_eq!(code(&o), 0);
    let r = report(&dir.path().join("factors.json"));
    let rows = r["rows"].as_array().unwrap();
    let row = rows
        .iter()
        .find(|r| r["model"] == "gwi(2,0.5)" && r["class"] == "lipschitz" && r["order"] == "first")
        .expect("gwi row");
    assert!((row["report"]["exact_value"].as_f64().unwrap() - 2.0).abs() < 1e-6);

    // The second-factor row lists the halved-constant bound, flagged as not applicable.
    let second = rows
        .iter()
        .find(|r| r["model"] == "gwi(2,0.5)" && r["class"] == "lipschitz" && r["order"] == "second")
        .unwrap();
    let bounds = second["report"]["bounds"].as_array().unwrap();
    let halved = bounds.iter().find(|b| b["name"] == "lipschitz_second_halved_constant").unwrap();
    assert_eq!(halved["applicable"], false);
    let exact = second["report"]["exact_value"].as_f64().unwrap();
    for b in bounds.iter().filter(|b| b["applicable"] == true) {
        assert!(exact <= b["value"].as_f64().unwrap() + 1e-8, "{b}");
    }
}

#[test]
fn empty_model_list_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "models = []\n");
    let o = run(&["factors", "--format", "csv"], Some(&cfg), dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("factors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
}

#[test]
fn mixture_exact_distances_below_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mixture"], Some(&shipped("mixture_nb_poisson.toml")), dir.path());
    assert_eq!(code(&o), 0);
    for row in report(&dir.path().join("mixture.json"))["rows"].as_array().unwrap() {
        let (bound, exact) = (row["bound"].as_f64().unwrap(), row["exact_distance"].as_f64().unwrap());
        assert!(exact <= bound, "{row}");
    }
}

#[test]
fn distance_of_a_law_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[distance]\nmu = { model = \"negative_binomial\", r = 3.0, p = 0.4 }\n\
                nu = { model = \"negative_binomial\", r = 3.0, p = 0.4 }\n";
    let cfg = write_config(dir.path(), text);
    let o = run(&["distance"], Some(&cfg), dir.path());
    assert_eq!(code(&o), 0);
    let rows = report(&dir.path().join("distance.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row["value"].as_f64().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "truncation = 80\n[simulate]\nkind = \"paths\"\nrates = { model = \"mm_infinity\", lambda = 3.0 }\n\
         x0 = 2\nhorizon = 2.0\nn_paths = 200\n",
    );
    let outputs: Vec<Vec<u8>> = [("a", "1"), ("b", "1"), ("c", "4")]
        .iter()
        .map(|(sub, threads)| {
            let out = dir.path().join(sub);
            let o = run(&["simulate", "--format", "csv", "--threads", threads, "--seed", "99"], Some(&cfg), &out);
            assert_eq!(code(&o), 0);
            assert!(String::from_utf8_lossy(&o.stdout).contains("seed 99"));
            std::fs::read(out.join("simulate.csv")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let out = dir.path().join("d");
    let o = run(&["simulate", "--seed", "5"], Some(&cfg), &out);
    assert_eq!(code(&o), 0);
    assert_eq!(report(&out.join("simulate.json"))["seed"], 5);
}

#[test]
fn feynman_kac_run_agrees_with_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], Some(&shipped("simulate.toml")), dir.path());
    assert_eq!(code(&o), 0);
    let row = &report(&dir.path().join("simulate.json"))["rows"][0];
    assert!(row["z_score"].as_f64().unwrap() <= 4.0);
}

#[test]
fn environment_overrides_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let cfg_dir = dir.path().join("cfg");
    let cfg = write_config(dir.path(), &format!("[output]\ndir = {:?}\n", cfg_dir.to_str().unwrap()));
    let o = bin().args(["distance", "--config"]).arg(&cfg).env("BDSTEIN_OUT_DIR", &env_dir).output().unwrap();
    // No [distance] section: the command fails before writing anything.
    assert_eq!(code(&o), 2);
    let o = bin().args(["verify", "--config"]).arg(&cfg).env("BDSTEIN_OUT_DIR", &env_dir).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_dir.join("verify.json").exists());
    assert!(!cfg_dir.exists());

    let cli_dir = dir.path().join("cli");
    let o = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&cli_dir)
        .env("BDSTEIN_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(cli_dir.join("verify.json").exists());
}

#[test]
fn resolved_config_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = run(&["factors", "--seed", "11"], None, &first);
    assert_eq!(code(&o), 0);
    let resolved = first.join("factors.config.toml");
    let second = dir.path().join("second");
    let o = run(&["factors"], Some(&resolved), &second);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(first.join("factors.json")).unwrap(), std::fs::read(second.join("factors.json")).unwrap());
    assert_eq!(std::fs::read(&resolved).unwrap(), std::fs::read(second.join("factors.config.toml")).unwrap());
}
