use std::path::Path;
use std::process::{Command, Output};

use mate_cli::config::RunConfig;
use mate_cli::files::{read_checkpoint, read_tensor};

fn mate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mate"))
        .args(args)
        .env_remove("MATE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mate(&[]).status.code(), Some(2));
    assert_eq!(mate(&["cost", "--bogus"]).status.code(), Some(2));
    assert_eq!(mate(&["scan-audit", "--shape", "4x4"]).status.code(), Some(2));
    assert_eq!(mate(&["scan-audit", "--shape", "1x1x1"]).status.code(), Some(2));
    assert_eq!(mate(&["cost", "--n-list", "20,10"]).status.code(), Some(2));
    assert_eq!(mate(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_exits_1() {
    let o = mate(&["sample", "--checkpoint", "/nonexistent/x.ckpt", "--out", "/tmp/never.bin"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scan_audit_rms_reaches_unit_distance() {
    let o = mate(&["scan-audit", "--shape", "8x8x8"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# mate scan-audit v1"));
    assert_eq!(lines.next(), Some("shape,family,k,axis,pairs,mean_min_distance,d_k"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.ends_with(",1,1"), "{row}");
    }
}

#[test]
fn cost_table_rows_and_monotone_speedup() {
    let o = mate(&["cost", "--n-list", "20000,80000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('N'))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let speedup: Vec<f64> = rows.iter().map(|r| r[8].parse().unwrap()).collect();
    assert!(speedup[1] > speedup[0]);
    assert!(text.lines().last().unwrap().starts_with("# crossover N "));

    let presets = stdout(&mate(&["cost"]));
    assert_eq!(presets.lines().filter(|l| l.starts_with("# preset")).count(), 3);
}

#[test]
fn single_direction_halves_the_scan_term() {
    let both = stdout(&mate(&["cost", "--n-list", "4096"]));
    let one = stdout(&mate(&["cost", "--n-list", "4096", "--single-direction"]));
    let field = |t: &str, i: usize| t.lines().nth(2).unwrap().split(',').nth(i).unwrap().parse::<u128>().unwrap();
    assert_eq!(field(&both, 1), 2 * field(&one, 1));
    assert_eq!(field(&both, 9), field(&one, 9));
}

#[test]
fn ssd_check_reports_every_seed() {
    let o = mate(&["ssd-check", "--n", "48", "--seeds", "5", "--seed", "11"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<serde_json::Value> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for (i, v) in lines.iter().enumerate() {
        assert_eq!(v["seed"], 11 + i as u64);
        assert!(v["max_dev"].as_f64().unwrap() <= 1e-8);
        assert!(v["grad_rel_err"].as_f64().unwrap() <= 1e-4);
        assert_eq!(v["pass"], true);
    }
}

#[test]
fn tesa_check_passes_on_ragged_grid() {
    let o = mate(&["tesa-check", "--shape", "5x7x6", "--tw", "2", "--sw", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.contains("\"pass\":true")));
}

#[test]
fn unit_windows_fail_adjacency_with_exit_3() {
    let o = mate(&["tesa-check", "--shape", "2x2x2", "--tw", "1", "--sw", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("\"check\":\"shift_adjacency\",\"shape\":\"2x2x2\",\"pairs\":12,\"covered\":0"));
}

#[test]
fn outputs_are_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("ssd{threads}.jsonl"));
        let o = Command::new(env!("CARGO_BIN_EXE_mate"))
            .args(["ssd-check", "--n", "32", "--seeds", "6", "--out", p(&out)])
            .env("MATE_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        reports.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn env_overrides_threads_flag() {
    let o = Command::new(env!("CARGO_BIN_EXE_mate"))
        .args(["--threads", "2", "cost", "--n-list", "100"])
        .env("MATE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_sample_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "[run]\nseed = 5\n[train]\nsteps = 6\nbatch = 2\nshape = \"2x4x4\"\n").unwrap();
    let (log_a, log_b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let ckpt = dir.path().join("m.ckpt");
    let o = mate(&["train-toy", "--config", p(&cfg_path), "--log", p(&log_a), "--checkpoint", p(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mate(&["train-toy", "--config", p(&cfg_path), "--log", p(&log_b)]);
    assert!(o.status.success());
    let a = std::fs::read_to_string(&log_a).unwrap();
    assert_eq!(a, std::fs::read_to_string(&log_b).unwrap());
    assert_eq!(a.lines().count(), 2 + 6);

    let (cfg, _) = read_checkpoint(&ckpt).unwrap();
    assert_eq!(cfg.run.seed, 5);
    assert_eq!(cfg.train.steps, 6);

    let (s1, s2) = (dir.path().join("s1.bin"), dir.path().join("s2.bin"));
    for s in [&s1, &s2] {
        let o = mate(&["sample", "--checkpoint", p(&ckpt), "--steps", "3", "--out", p(s)]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    let x = read_tensor(&s1).unwrap();
    assert_eq!(x.shape().dims(), [2, 4, 4]);
    assert_eq!(x.dim(), cfg.model.d);
    assert!(x.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(
        &cfg_path,
        "[train]\nsteps = 50\nlr = 1e150\noptimizer = \"momentum\"\nmomentum = 0.99\ngrad_clip = 0.0\n",
    )
    .unwrap();
    let o = mate(&["train-toy", "--config", p(&cfg_path)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("typo.toml");
    std::fs::write(&cfg_path, "[train]\nstep = 5\n").unwrap();
    assert_eq!(mate(&["train-toy", "--config", p(&cfg_path)]).status.code(), Some(2));
}

#[test]
fn config_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let mut cfg = RunConfig::default();
    cfg.run.seed = 99;
    cfg.tesa.tw = 4;
    cfg.train.lr = 1.0 / 3.0;
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}
