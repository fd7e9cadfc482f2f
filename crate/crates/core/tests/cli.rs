use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvar-bench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden").join(name)
}

const COMMON: &[&str] = &[
    "--epochs",
    "3",
    "--batch-size",
    "16",
    "--dataset",
    "twopoint:n=60,seed=3",
    "--format",
    "synth",
    "--model",
    "absolute",
    "--seed",
    "4",
    "--set",
    "transform=clip",
    "--set",
    "lipschitz=1",
    "--set",
    "smoothness=0",
];

fn run_algo(dir: &Path, algo: &str, out: &str) -> Output {
    let mut args = vec!["run", "--algo", algo, "--lr", "0.01", "--out", out];
    args.extend_from_slice(COMMON);
    bench(dir, &args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_metrics_tails_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_algo(tmp.path(), "cvar-sgd", "r");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("r");
    for f in ["metrics.csv", "metadata.txt", "config.cfg", "tail_0.05.txt", "tail_0.1.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,split,cvar_0.05,cvar_0.1,accuracy,mean_loss"));
    assert_eq!(lines.count(), 6);

    // tail dumps are sorted, one loss per line
    let tail: Vec<f64> = fs::read_to_string(out.join("tail_0.1.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert!(!tail.is_empty() && tail.windows(2).all(|w| w[0] <= w[1]));

    let meta = fs::read_to_string(out.join("metadata.txt")).unwrap();
    for key in ["algo=cvar-sgd", "seed=4", "eta=0.01", "standardize=true"] {
        assert!(meta.lines().any(|l| l == key), "metadata lacks {key}");
    }

    if std::env::var_os("CVAR_BLESS").is_some() {
        fs::write(golden("cli_metrics.csv"), &metrics).unwrap();
    }
    assert_eq!(metrics, fs::read_to_string(golden("cli_metrics.csv")).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_algo(tmp.path(), "cvar-minibatch", "a").status.success());
    assert!(run_algo(tmp.path(), "cvar-minibatch", "b").status.success());
    for f in ["metrics.csv", "tail_0.1.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn saved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_algo(tmp.path(), "vanilla", "a").status.success());
    let o = bench(tmp.path(), &["run", "--config", "a/config.cfg", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("a/metrics.csv")).unwrap(),
        fs::read(tmp.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn report_normalizes_against_vanilla() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_algo(tmp.path(), "vanilla", "v").status.success());
    assert!(run_algo(tmp.path(), "cvar-sgd", "c").status.success());
    let o = bench(tmp.path(), &["report", "v", "c/metrics.csv", "--out", "report.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "method,runs,cvar_0.05,cvar_0.1,accuracy,mean_loss");
    assert_eq!(lines[1], "vanilla,1,1,1,,1");
    assert!(lines[2].starts_with("cvar-sgd,1,"));
}

#[test]
fn report_without_vanilla_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_algo(tmp.path(), "cvar-sgd", "c").status.success());
    let o = bench(tmp.path(), &["report", "c"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("vanilla"));
}

#[test]
fn sweep_writes_cells_summary_and_best_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--algo", "cvar-sgd", "--lrs", "0.01,0.1", "--wds", "0,0.001", "--out", "sw"];
    args.extend_from_slice(COMMON);
    let o = bench(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("best lr="), "{stdout}");

    let sw = tmp.path().join("sw");
    for cell in ["lr=0.01_wd=0", "lr=0.01_wd=0.001", "lr=0.1_wd=0", "lr=0.1_wd=0.001"] {
        assert!(sw.join(cell).join("metrics.csv").is_file(), "missing cell {cell}");
    }
    let summary = fs::read_to_string(sw.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "lr,weight_decay,status,val_mean_loss,val_cvar_0.05,val_cvar_0.1,val_accuracy,best");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 1);

    let o = bench(tmp.path(), &["run", "--config", "sw/best.cfg", "--out", "again"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn invalid_inputs_exit_nonzero_and_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &str)] = &[
        (&["run", "--algo", "bogus", "--dataset", "x"], "algo"),
        (&["run", "--alpha", "2", "--dataset", "x"], "alpha"),
        (&["run", "--algo", "vanilla", "--dataset", "twopoint:n=20", "--format", "synth"], "lr"),
        (&["run", "--dataset", "missing.csv", "--lr", "0.1"], "missing.csv"),
        (&["run", "--set", "no_such_key=1", "--dataset", "x"], "no_such_key"),
    ];
    for (args, needle) in cases {
        let o = bench(tmp.path(), args);
        assert!(!o.status.success(), "{args:?} succeeded");
        let err = stderr(&o);
        assert!(err.contains("error") && err.contains(needle), "{args:?}: {err}");
    }
}
