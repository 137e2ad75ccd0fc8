//! End-to-end behavior of the `nlre` binary.

use std::path::Path;
use std::process::{Command, Output};

use nlre::cli::selftest::SelftestHooks;
use nlre::cli::{run_with_hooks, SWEEP_HEADER};
use nlre::datagen::{load_dataset, NoisyDataset};
use nlre::evalkit::read_records;
use nlre::gm::{load_checkpoint, ElboEval, GraphicalModel};

const QUICK: &[&str] = &["--n", "400", "--epochs", "4", "--warmup", "1"];

fn nlre(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlre"))
        .current_dir(dir)
        .args(args)
        .env_remove("NLRE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "-o", out];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    nlre(dir, &args)
}

#[test]
fn gen_is_seeded_and_hits_the_rate() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.nlds", "b.nlds"] {
        let o = nlre(dir.path(), &["gen", "--kind", "idn", "--rate", "0.4", "--n", "4000", "--seed", "3", "-o", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.nlds")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.nlds")).unwrap());
    assert_eq!(&a[..4], b"NLDS");
    let ds = load_dataset(dir.path().join("a.nlds")).unwrap();
    assert_eq!(ds.len(), 4000);
    assert!((ds.true_rate() - 0.4).abs() <= 0.03, "{}", ds.true_rate());
}

#[test]
fn argument_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlre(dir.path(), &["gen", "--rate", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rate"));
    assert_eq!(code(&nlre(dir.path(), &["train", "--epochs", "abc"])), 2);
    assert_eq!(code(&nlre(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&train(dir.path(), "r", &["--no-epsilon", "--fixed-eps", "0.3"])), 2);
    assert_eq!(code(&nlre(dir.path(), &["selftest", "--suite", "bogus"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_nlre"))
        .current_dir(dir.path())
        .args(["sweep", "--n", "200", "--epochs", "2", "--warmup", "1", "--rates", "0.2", "--seeds", "0"])
        .env("NLRE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("NLRE_THREADS"));
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "r", &["--data-file", "missing.nlds"])), 3);
    std::fs::write(dir.path().join("junk.nlds"), b"NLDS\x63\x00garbage").unwrap();
    assert_eq!(code(&train(dir.path(), "r", &["--data-file", "junk.nlds"])), 3);
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "r", &["--lr-theta", "1e300"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), "run", &["--checkpoint-every", "2", "--dump-split", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");

    let csv = std::fs::read_to_string(run.join("records.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "epoch,test_acc,eps_hat,implied_flip_rate,sel_precision,sel_recall,sel_f1,clean_ratio,mean_elbo,mean_constraint,degenerate_flags"
    );
    let records = read_records(run.join("records.csv")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().enumerate().all(|(i, r)| r.epoch == i));

    let split = std::fs::read_to_string(run.join("split.csv")).unwrap();
    assert_eq!(split.lines().count(), 1 + 320);
    for name in ["epoch_0002.nlgm", "epoch_0004.nlgm"] {
        load_checkpoint(run.join("checkpoints").join(name)).unwrap();
    }
    let model = load_checkpoint(run.join("model.nlgm")).unwrap();
    assert!((model.eps() - records[3].eps_hat).abs() < 1e-15);

    let text = std::fs::read_to_string(run.join("summary.json")).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \""))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    assert_eq!(
        keys,
        ["final_eps_hat", "realized_rate", "final_test_acc", "best_test_acc", "config_echo", "seed", "wall_time_s"]
    );
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["wall_time_s"].is_null());
    assert_eq!(v["seed"], 4);
    assert_eq!(v["config_echo"]["train"]["epochs"], 4);
    assert_eq!(v["final_eps_hat"].as_f64().unwrap(), records[3].eps_hat);
}

#[test]
fn timing_flag_fills_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "run", &["--timing"])), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert!(v["wall_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn default_run_logs_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlre(dir.path(), &["train", "--n", "300", "--epochs", "100", "--warmup", "2", "-o", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_records(dir.path().join("run/records.csv")).unwrap().len(), 100);
}

#[test]
fn fixed_rate_selects_half_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "run", &["--fixed-eps", "0.5"])), 0);
    let records = read_records(dir.path().join("run/records.csv")).unwrap();
    assert!(records.iter().all(|r| r.clean_ratio == 0.5), "{records:?}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.conf"),
        "# quick run\nepochs = 3\nwarmup = 1\nn = 300\nlr_theta = 0.02\nhidden = 8\n",
    )
    .unwrap();
    let o = nlre(dir.path(), &["train", "--config", "exp.conf", "--hidden", "16", "-o", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    let train = &v["config_echo"]["train"];
    assert_eq!(train["epochs"], 3);
    assert_eq!(train["lr_theta"], 0.02);
    assert_eq!(train["hidden"], 16);

    std::fs::write(dir.path().join("bad.conf"), "epochs = 3\nthis line is wrong\n").unwrap();
    let o = nlre(dir.path(), &["train", "--config", "bad.conf", "-o", "run2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn selftest_runs_requested_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlre(dir.path(), &["selftest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    for suite in ["gradient", "elbo", "generative", "split"] {
        assert!(out.contains(suite), "{out}");
    }
    let o = nlre(dir.path(), &["selftest", "--suite", "elbo"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("elbo"));
}

fn skewed_grads(model: &GraphicalModel, data: &NoisyDataset, idx: &[usize]) -> nlre::Result<ElboEval> {
    let mut eval = nlre::gm::elbo_grads(model, data, idx)?;
    eval.grads.clean.iter_mut().for_each(|g| *g *= 1.05);
    Ok(eval)
}

#[test]
fn selftest_catches_a_wrong_gradient() {
    let hooks = SelftestHooks {
        elbo_grads: skewed_grads,
    };
    assert_eq!(run_with_hooks(["nlre", "selftest", "--suite", "gradient"], &hooks), 5);
    assert_eq!(run_with_hooks(["nlre", "selftest", "--suite", "split"], &hooks), 0);
}

#[test]
fn sweep_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlre(
        dir.path(),
        &[
            "sweep", "--kind", "pairflip", "--n", "300", "--epochs", "2", "--warmup", "1", "--rates", "0.2,0.5", "--seeds",
            "0,1",
        ],
    );
    assert_eq!(code(&o), 6, "{}", stderr(&o));
    let sweep = dir.path().join("sweep");
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert!(lines[1].starts_with("0.2,2,0,"));
    assert!(lines[2].starts_with("0.5,0,2,"));
    for seed in 0..2 {
        assert!(sweep.join(format!("rate_0.2_seed_{seed}/summary.json")).exists());
        assert!(sweep.join(format!("rate_0.5_seed_{seed}/error.txt")).exists());
    }
}

#[test]
fn sweep_succeeds_with_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nlre"))
        .current_dir(dir.path())
        .args(["sweep", "--n", "300", "--epochs", "2", "--warmup", "1", "--rates", "0.2,0.3", "--seeds", "0,1"])
        .env("NLRE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
