use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffsync"));
    c.env_remove("DIFFSYNC_OUT");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn digest(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("digest ").map(str::to_owned))
        .expect("digest line")
}

const SMALL: &str = r#"
seed = 4
[schedule]
train_steps = 1000
num_steps = 8
[prior]
weights = [0.5, 0.5]
means = [-1.0, 1.0]
variances = [0.1, 0.1]
[plan]
case = 2
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn missing_operator_size_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[[operators]]\nkind = \"permutation\"\n"),
    );
    let o = run(&[
        "sample",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("operators[0].size"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\nsede = 3\n"));
    let o = run(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coverage_failure_exits_1() {
    // A single crop leaves most of the canvas uncovered.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[[operators]]\nkind = \"crop\"\ncanvas = [4, 8]\nsize = [4, 4]\norigin = [0, 0]\n"),
    );
    let o = run(&[
        "sample",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn sample_is_reproducible_and_writes_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("one_to_one.toml");
    let cfg = cfg.to_str().unwrap();
    let oa = run(&[
        "sample",
        cfg,
        "--out",
        a.path().to_str().unwrap(),
        "--trace",
    ]);
    let ob = run(&[
        "sample",
        cfg,
        "--out",
        b.path().to_str().unwrap(),
        "--trace",
    ]);
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert_eq!(digest(&oa), digest(&ob));
    for f in [
        "canonical.pgm",
        "canonical.f64",
        "view_0.pgm",
        "view_1.pgm",
        "view_1.f64",
        "metrics.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let pgm = std::fs::read(a.path().join("canonical.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(
        std::fs::read(a.path().join("canonical.f64")).unwrap().len(),
        16 * 16 * 8
    );
    let metrics = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("name,value,step\n"));
    assert_eq!(metrics.matches("instance_variance").count(), 31);
}

#[test]
fn seed_flag_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let cfg = config("one_to_one.toml");
    let cfg = cfg.to_str().unwrap();
    let out = a.path().to_str().unwrap();
    let x = run(&["sample", cfg, "--out", out]);
    let y = run(&["sample", cfg, "--out", out, "--seed", "8"]);
    assert!(stdout(&y).contains("seed 8"));
    assert_ne!(digest(&x), digest(&y));
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let o = bin()
        .args(["sample", config("one_to_one.toml").to_str().unwrap()])
        .env("DIFFSYNC_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("canonical.f64").exists());
}

#[test]
fn compare_cases_on_one_to_one_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare-cases",
        config("one_to_one.toml").to_str().unwrap(),
        "--cases",
        "1,2,3,4,5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("divergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,1,2,3,4,5"));
    for line in lines {
        for v in line.split(',').skip(1) {
            assert!(v.parse::<f64>().unwrap() < 1e-9, "{line}");
        }
    }
}

#[test]
fn compare_single_case_gives_zero_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare-cases",
        config("one_to_one.toml").to_str().unwrap(),
        "--cases",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("divergence.csv")).unwrap();
    assert_eq!(csv, "case,2\n2,0e0\n");
}

#[test]
fn compare_cases_on_multiplane_diverge() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare-cases",
        config("multiplane.toml").to_str().unwrap(),
        "--cases",
        "2,5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("divergence.csv")).unwrap();
    let off: f64 = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(off > 0.0);
}

#[test]
fn bad_case_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare-cases",
        config("one_to_one.toml").to_str().unwrap(),
        "--cases",
        "2,60",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_outcomes() {
    let pass = run(&["verify", config("one_to_one.toml").to_str().unwrap()]);
    assert_eq!(pass.status.code(), Some(0));
    assert!(stdout(&pass).contains("PASS"));

    let fail = run(&["verify", config("rotation.toml").to_str().unwrap()]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).contains("FAIL"));

    let info = run(&["verify", config("multiplane.toml").to_str().unwrap()]);
    assert_eq!(info.status.code(), Some(0));
    assert!(stdout(&info).contains("INFO"));
}

#[test]
fn config_file_is_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read(config("panorama.toml")).unwrap();
    let cfg = dir.path().join("p.toml");
    std::fs::write(&cfg, &src).unwrap();
    let o = run(&[
        "sample",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&cfg).unwrap(), src);
}
