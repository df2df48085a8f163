use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedproxy::checkpoint::{load_checkpoint, save_checkpoint};
use fedproxy::FlatParams;

const SMALL: &str = r#"
master_seed = 3
kappa = 0.5
rounds = 2

[backbone]
blocks = 4
width = 8
input_dim = 4

[public]
samples = 64
bi_samples = 32
pretrain_steps = 40

[scenario]
clients = 3

[data]
train_samples = 32
eval_samples = 32
"#;

fn fedproxy(args: &[&str]) -> Output {
    fedproxy_env(args, None)
}

fn fedproxy_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedproxy"));
    cmd.args(args).env_remove("FEDPROXY_SEED");
    if let Some(s) = seed {
        cmd.env("FEDPROXY_SEED", s);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn compress_then_fuse_restores_the_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("c");
    let res = fedproxy(&["compress", "-c", s(&cfg), "-o", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["backbone.fpx", "proxy.fpx", "correspondence.fpx", "block_influence.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let fused = dir.path().join("fused.fpx");
    let res = fedproxy(&[
        "fuse",
        "--backbone",
        s(&out.join("backbone.fpx")),
        "--proxy",
        s(&out.join("proxy.fpx")),
        "--correspondence",
        s(&out.join("correspondence.fpx")),
        "-o",
        s(&fused),
    ]);
    assert!(res.status.success());
    assert_eq!(
        load_checkpoint(&fused).unwrap().values(),
        load_checkpoint(out.join("backbone.fpx")).unwrap().values()
    );

    // A saved backbone is reused as is.
    let again = dir.path().join("c2");
    let res = fedproxy(&[
        "compress",
        "-c",
        s(&cfg),
        "--backbone",
        s(&out.join("backbone.fpx")),
        "-o",
        s(&again),
    ]);
    assert!(res.status.success());
    assert_eq!(
        std::fs::read(again.join("proxy.fpx")).unwrap(),
        std::fs::read(out.join("proxy.fpx")).unwrap()
    );
}

#[test]
fn train_is_reproducible_and_honours_the_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let res = fedproxy_env(&["train", "-c", s(&cfg), "-o", s(&out)], seed);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        (
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("proxy_final.fpx")).unwrap(),
        )
    };
    let a = run("a", None);
    assert_eq!(a, run("b", None));
    assert_eq!(a, run("c", Some("3")));
    assert_ne!(a, run("d", Some("4")));
}

#[test]
fn merge_averages_client_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str, v: Vec<f64>| {
        let path = dir.path().join(name);
        save_checkpoint(&FlatParams::from_vec(v), &path).unwrap();
        path
    };
    let g = p("g.fpx", vec![0.0, 0.0, 0.0]);
    let a = p("a.fpx", vec![1.0, 2.0, -1.0]);
    let b = p("b.fpx", vec![3.0, -2.0, -1.0]);
    let out = dir.path().join("m.fpx");
    let res = fedproxy(&[
        "merge", "--global", s(&g), "--clients", s(&a), s(&b), "--method", "fedavg", "-o", s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(load_checkpoint(&out).unwrap().values(), &[2.0, 0.0, -1.0]);

    let res = fedproxy(&["merge", "--global", s(&g), "--clients", s(&a), s(&b), "-o", s(&out)]);
    assert!(res.status.success());
    assert_eq!(load_checkpoint(&out).unwrap().dim(), 3);
}

#[test]
fn verify_bound_writes_one_row_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let res = fedproxy(&["verify-bound", "--dim", "6", "--rows", "9", "--count", "7", "-o", s(&csv)]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lhs,rhs,T1,T2,T3,L_hat,alpha,holds");
    assert_eq!(text.lines().count(), 8);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bound holds on 7/7"));

    let res = fedproxy(&["verify-bound", "--count", "2"]);
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 3);
}

#[test]
fn compare_and_report_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let csv = dir.path().join("cmp.csv");
    let res = fedproxy(&["compare", "-c", s(&cfg), "--methods", "fedproxy,fedavg", "-o", s(&csv)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("| fedproxy |") && stdout.contains("| fedavg |"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    let out = dir.path().join("rep");
    let res = fedproxy(&["report", "-c", s(&cfg), "-o", s(&out)]);
    assert!(res.status.success());
    for f in ["metrics.csv", "report.md", "report.json", "fused.fpx", "correspondence.fpx"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // No output directory anywhere is a configuration error.
    assert_eq!(code(&fedproxy(&["report", "-c", s(&cfg)])), 2);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");

    let bad_key = write_config(dir.path(), "nonsense = 1\n");
    assert_eq!(code(&fedproxy(&["train", "-c", s(&bad_key), "-o", s(&out)])), 2);

    let bad_rho = write_config(dir.path(), &format!("{SMALL}\n[aggregation]\nrho = 0.5\n"));
    assert_eq!(code(&fedproxy(&["train", "-c", s(&bad_rho), "-o", s(&out)])), 2);

    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(code(&fedproxy_env(&["train", "-c", s(&cfg), "-o", s(&out)], Some("minus one"))), 2);

    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&fedproxy(&["train", "-c", s(&missing), "-o", s(&out)])), 4);

    let junk = dir.path().join("junk.fpx");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let res = fedproxy(&["fuse", "--backbone", s(&junk), "--proxy", s(&junk), "--correspondence", s(&junk), "-o", s(&out)]);
    assert_eq!(code(&res), 4);

    let hot = write_config(dir.path(), &format!("{SMALL}\n[client]\nlr = 1e6\n"));
    let res = fedproxy(&["train", "-c", s(&hot), "-o", s(&out)]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("diverged"));
}
