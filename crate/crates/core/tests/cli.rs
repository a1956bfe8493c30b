mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use valve_fdd::pipeline::PipelineConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_valve-fdd"));
    c.env_remove("VFDD_DATA_ROOT");
    c
}

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut c = bin();
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Writes the tiny config into `dir` and returns its path.
fn tiny_toml(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, common::tiny_config(&dir.join("run")).to_toml().unwrap()).unwrap();
    path
}

#[test]
fn usage_and_config_errors_have_distinct_exit_codes() {
    assert_eq!(code(&run(&["no-such-command"], None)), 1);
    assert_eq!(code(&run(&[], None)), 1);
    assert_eq!(code(&run(&["--help"], None)), 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[window]\nlenght = 3\n").unwrap();
    let o = run(&["config"], Some(&bad));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lenght"));
    assert_eq!(code(&run(&["config"], Some(&dir.path().join("absent.toml")))), 2);
    assert_eq!(code(&run(&["--alpha", "1.5", "config"], None)), 2);
}

#[test]
fn config_prints_the_effective_configuration() {
    let o = bin().args(["--seed", "11", "--step", "20", "config"]).env("VFDD_DATA_ROOT", "/data/x").output().unwrap();
    assert_eq!(code(&o), 0);
    let cfg = PipelineConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.window.step, 20);
    assert_eq!(cfg.data_root, Path::new("/data/x"));
}

#[test]
fn missing_artifacts_exit_with_code_5() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--data-root", dir.path().to_str().unwrap(), "train-tcae"], None);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn staged_run_stream_and_failure_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_toml(dir.path());
    let root = dir.path().join("run");
    for stage in ["simulate", "split", "train-tcae", "extract", "train-detector", "train-diagnoser", "calibrate", "calibrate-ood"] {
        let o = run(&[stage], Some(&cfg));
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["evaluate"], Some(&cfg));
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("[test]"));
    assert!(root.join("reports/report.json").is_file());

    // Requirements that cannot be met fail the evaluation with code 4.
    let strict = dir.path().join("strict.toml");
    let mut c = common::tiny_config(&root);
    c.eval.require.min_recall = Some(1.1);
    fs::write(&strict, c.to_toml().unwrap()).unwrap();
    assert_eq!(code(&run(&["evaluate"], Some(&strict))), 4);

    // Streaming a stored trajectory, from a .vfdd file and as CSV on stdin.
    let traj = fs::read_dir(root.join("corpus/ood")).unwrap().next().unwrap().unwrap().path();
    let o = run(&["stream", "--input", traj.to_str().unwrap()], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let from_file = stdout(&o);
    assert!(from_file.contains("\"event\":\"ood_warning\""), "{from_file}");

    let t = valve_fdd::sim::Trajectory::load(&traj).unwrap();
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let mut child = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["stream", "--traj-id", &t.id.to_string()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&csv).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), from_file);

    let o = bin().arg("--config").arg(&cfg).arg("stream").stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    let mut o = o;
    o.stdin.take().unwrap().write_all(b"not,a,trajectory\n1,2,3\n").unwrap();
    assert_eq!(code(&o.wait_with_output().unwrap()), 6);

    // Changing an upstream setting makes downstream stages refuse the
    // stale artifacts.
    assert_eq!(code(&run(&["--seed", "4", "extract"], Some(&cfg))), 3);

    // A model file written by an unknown format version.
    let model = root.join("artifacts/tcae.vfdd");
    let bytes = fs::read(&model).unwrap();
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
    let mut patched = b"VFDD tcae 99".to_vec();
    patched.extend_from_slice(&bytes[newline..]);
    fs::write(&model, patched).unwrap();
    let o = run(&["extract"], Some(&cfg));
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn run_and_benchmarks_write_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_toml(dir.path());
    let root = dir.path().join("run");
    assert_eq!(code(&run(&["run"], Some(&cfg))), 0);

    let o = run(&["bench-imbalance"], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 7);
    assert!(table.lines().any(|l| l.starts_with("threshold-moving")));
    assert_eq!(fs::read_to_string(root.join("reports/bench_imbalance.csv")).unwrap(), table);

    let o = run(&["bench-arch"], Some(&cfg));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("kernel_size,latent_channels,blocks,receptive_field"));
}
