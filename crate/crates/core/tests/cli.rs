use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopspam::consistency;
use loopspam::counts::TrialSet;
use loopspam::polarimetry::{joint_probabilities, named};
use loopspam::scenario::RunReport;
use loopspam::states::{self, StateParams};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn loopspam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopspam"))
        .args(args)
        .env_remove("LOOPSPAM_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(name: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = scenario(name);
    let mut args = vec!["simulate", path(&cfg), "--out", path(out)];
    args.extend_from_slice(extra);
    loopspam(&args)
}

#[test]
fn analyze_reproduces_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let sim_dir = dir.path().join("sim");
    let out = simulate("paper_3B2.cfg", &sim_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let ana_dir = dir.path().join("ana");
    let cfg = scenario("paper_3B2.cfg");
    let counts = sim_dir.join("counts.csv");
    let out = loopspam(&["analyze", path(&counts), "--settings", path(&cfg), "--out", path(&ana_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let a = RunReport::load(&sim_dir.join("report.json")).unwrap();
    let b = RunReport::load(&ana_dir.join("report.json")).unwrap();
    assert!(a.config.is_some() && b.config.is_none());
    assert_eq!(a.trial_seeds.len(), 10);
    assert_eq!(a.expectation_matrices, b.expectation_matrices);
    assert_eq!(a.loop_analysis, b.loop_analysis);
    assert_eq!(a.chsh, b.chsh);
    assert_eq!(a.qst, b.qst);
    assert_eq!(
        fs::read(sim_dir.join("delta_stats.csv")).unwrap(),
        fs::read(ana_dir.join("delta_stats.csv")).unwrap()
    );
}

#[test]
fn exit_codes_follow_verdict() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate("paper_3B3.cfg", dir.path(), &[]).status.code(), Some(2));
    assert_eq!(simulate("paper_3B3.cfg", dir.path(), &["--eve", "paper-table"]).status.code(), Some(2));
    assert_eq!(simulate("paper_3B3.cfg", dir.path(), &["--eve", "off"]).status.code(), Some(0));
    assert_eq!(simulate("paper_3B1.cfg", dir.path(), &[]).status.code(), Some(0));
}

#[test]
fn overrides_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let flags = ["--seed", "77", "--trials", "3", "--counts", "5000"];
    assert_eq!(simulate("paper_3B2.cfg", &a, &flags).status.code(), Some(0));
    assert_eq!(simulate("paper_3B2.cfg", &b, &flags).status.code(), Some(0));
    assert_eq!(simulate("paper_3B2.cfg", &c, &["--seed", "78", "--trials", "3", "--counts", "5000"]).status.code(), Some(0));
    let read = |d: &Path| fs::read_to_string(d.join("counts.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(read(&a).lines().count(), 1 + 3 * 16);
    let report = RunReport::load(&a.join("report.json")).unwrap();
    let config = report.config.unwrap();
    assert_eq!((config.master_seed, config.n_trials, config.n_total), (77, 3, 5000));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));
    let cfg = scenario("paper_3B1.cfg");
    let run = |extra: &[&str]| {
        let mut args = vec!["simulate", path(&cfg), "--trials", "2", "--counts", "1000"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_loopspam"))
            .args(&args)
            .env("LOOPSPAM_OUTPUT_DIR", &env_dir)
            .output()
            .unwrap()
    };
    assert_eq!(run(&[]).status.code(), Some(0));
    assert!(env_dir.join("counts.csv").exists());
    assert_eq!(run(&["--out", path(&flag_dir)]).status.code(), Some(0));
    assert!(flag_dir.join("report.json").exists());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("paper_3B2.cfg");
    assert_eq!(loopspam(&["simulate", path(&cfg), "--out", ""]).status.code(), Some(1));
    assert_eq!(loopspam(&["simulate", path(&cfg), "--bogus"]).status.code(), Some(1));
    assert_eq!(loopspam(&["simulate", path(&cfg), "--eve", "sometimes"]).status.code(), Some(1));
    assert_eq!(loopspam(&["simulate", ""]).status.code(), Some(1));
    assert_eq!(loopspam(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.cfg");
    let text = fs::read_to_string(&cfg).unwrap().replace("\"p_s\": 0.928", "\"p_s\": 1.5");
    fs::write(&bad, text).unwrap();
    let out = loopspam(&["simulate", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("state.p_s"), "{}", stderr(&out));

    let out = loopspam(&["simulate", path(&dir.path().join("missing.cfg"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.cfg"));
}

#[test]
fn truncated_counts_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate("paper_3B2.cfg", dir.path(), &["--trials", "2"]).status.code(), Some(0));
    let counts = dir.path().join("counts.csv");
    let text = fs::read_to_string(&counts).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let truncated = dir.path().join("truncated.csv");
    fs::write(&truncated, lines[..lines.len() - 1].join("\n")).unwrap();

    let cfg = scenario("paper_3B2.cfg");
    let out = loopspam(&["analyze", path(&truncated), "--settings", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing"), "{}", stderr(&out));

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, text.replacen(",", ";", 3)).unwrap();
    let out = loopspam(&["analyze", path(&garbled), "--settings", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plotdata_writes_three_grids() {
    let dir = tempfile::tempdir().unwrap();
    simulate("paper_3B3.cfg", dir.path(), &[]);
    let report = dir.path().join("report.json");
    let out = loopspam(&["plotdata", path(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stats = RunReport::load(&report).unwrap().loop_analysis.unwrap().stats;
    for (name, grid) in [("delta_mean.csv", stats.mean), ("delta_std.csv", stats.std), ("delta_ratio.csv", stats.ratio)] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let mut rows = text.lines();
        assert_eq!(rows.next(), Some("row,col,value"));
        for line in rows {
            let f: Vec<&str> = line.split(',').collect();
            let (r, c, v): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
            assert_eq!(v, grid[r][c]);
        }
    }

    let chsh_only = tempfile::tempdir().unwrap();
    simulate("paper_3B1.cfg", chsh_only.path(), &[]);
    let out = loopspam(&["plotdata", path(&chsh_only.path().join("report.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn qst_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    simulate("paper_3B2.cfg", dir.path(), &[]);
    let cfg = scenario("paper_3B2.cfg");
    let counts = dir.path().join("counts.csv");
    let out = loopspam(&["qst", path(&counts), "--settings", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let qst: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("qst.json")).unwrap()).unwrap();
    let n = qst["negativity"].as_f64().unwrap();
    assert!((n - 0.397).abs() < 0.05);

    let chsh_only = tempfile::tempdir().unwrap();
    simulate("paper_3B1.cfg", chsh_only.path(), &[]);
    let cfg = scenario("paper_3B1.cfg");
    let counts = chsh_only.path().join("counts.csv");
    let out = loopspam(&["qst", path(&counts), "--settings", path(&cfg), "--out", path(chsh_only.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hand_built_exact_counts_give_identity() {
    let rho = states::werner_like(StateParams::new(0.928, 0.628).unwrap()).unwrap();
    let alice = [named::HV, named::DIAG, named::CIRC, named::PLUS_EIGHTH];
    let bob = [named::PLUS_EIGHTH, named::MINUS_EIGHTH, named::CIRC, named::DIAG];
    let mut csv = String::from("trial,i,j,n_ab,n_abp,n_apb,n_apbp\n");
    for t in 0..2 {
        let scale = 1e12 + t as f64 * 7.0e9;
        for (i, a) in alice.iter().enumerate() {
            for (j, b) in bob.iter().enumerate() {
                let n = joint_probabilities(&rho, *a, *b).as_array().map(|p| (p * scale).round() as u64);
                csv.push_str(&format!("{t},{i},{j},{},{},{},{}\n", n[0], n[1], n[2], n[3]));
            }
        }
    }
    let set = TrialSet::read_csv(csv.as_bytes(), Path::new("exact.csv"), alice.to_vec(), bob.to_vec()).unwrap();
    for trial in &set.trials {
        let dev = consistency::trial_deviation(trial, 4, 4, 1e8).unwrap();
        assert!(dev.abs().max() < 1e-9, "{dev}");
    }
}
