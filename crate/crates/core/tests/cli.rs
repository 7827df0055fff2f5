use std::fs;
use std::process::{Command, Output};

fn oramlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oramlab")).args(args).output().unwrap()
}

#[test]
fn help_lists_subcommands_and_flags() {
    let out = oramlab(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen-trace", "run", "distinguish", "stash-analyze", "leakage-report", "praxen-sim"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
    let text = String::from_utf8(oramlab(&["leakage-report", "--help"]).stdout).unwrap();
    for flag in ["--lmax-bits", "--round-bits", "--epochs", "--rates", "--history", "--out"] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn config_errors_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "construction = \"path_oram\"\noram = { levels = 3, bucket_size = 4, addr_space = 8, bogus_key = 1 }\n").unwrap();
    let out = oramlab(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:") && err.contains("bogus_key"), "{err}");

    let out = oramlab(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn overflow_is_a_status_not_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "construction = \"path_oram\"\n\
         oram = { levels = 1, bucket_size = 1, addr_space = 64, stash_capacity = 2 }\n\
         workload = { kind = \"sequential\", length = 64 }\n",
    )
    .unwrap();
    let out = oramlab(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let counters = fs::read_to_string(dir.path().join("counters.csv")).unwrap();
    assert!(counters.contains("stash overflow") || counters.contains("overflow"), "{counters}");
    assert!(!counters.contains("status,ok"));
}

#[test]
fn leakage_report_from_praxen_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(
        &cfg,
        "construction = \"praxen\"\n\
         oram = { levels = 6, bucket_size = 4, addr_space = 64 }\n\
         [praxen]\nsim_ticks = 1500\nepoch = 100\n\
         threads = [{ arrivals = \"bernoulli\", rate = 0.3 }, { arrivals = \"saturated\" }]\n",
    )
    .unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(oramlab(&["praxen-sim", "--config", cfg.to_str().unwrap(), "--out-dir", d]).status.success());
    let history = dir.path().join("history.csv");
    let out = oramlab(&["leakage-report", "--history", history.to_str().unwrap()]);
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    assert_eq!(report, fs::read_to_string(dir.path().join("ledger.csv")).unwrap());
}
