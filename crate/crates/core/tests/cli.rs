//! End-to-end checks of the command-line surface.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svrg-reg"))
}

#[test]
fn solve_writes_one_row_per_epoch_including_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let status = bin()
        .args([
            "solve",
            "--method",
            "svrg",
            "--problem",
            "phillips",
            "--n",
            "60",
            "--delta-rel",
            "0.01",
            "--alpha",
            "1",
            "--beta",
            "0.99",
            "--m-frac",
            "0.1",
            "--epochs",
            "50",
            "--seed",
            "7",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let data_rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,"))
        .count();
    assert_eq!(data_rows, 51, "epoch 0 through 50 inclusive");
    // metadata block carries version, config echo and seeds
    assert!(text.lines().any(|l| l.starts_with("# svrg-reg:")));
    assert!(text.lines().any(|l| l.starts_with("# config:")));
    assert!(text.lines().any(|l| l.starts_with("# seeds:")));
    assert!(text.lines().any(|l| l.starts_with("# noise-algorithm:")));
    // first data row is epoch 0
    let first = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.starts_with("epoch,"))
        .unwrap();
    assert!(first.starts_with("0,"));
}

#[test]
fn solve_rejects_tau_at_most_one_with_exit_2() {
    let out = bin()
        .args([
            "solve",
            "--method",
            "svrg-dp",
            "--problem",
            "phillips",
            "--n",
            "40",
            "--tau",
            "0.5",
            "--out",
            "/tmp/unused.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("tau") && stderr.contains("> 1"),
        "diagnostic must name the tau > 1 requirement, got: {stderr}"
    );
}

#[test]
fn solve_unknown_problem_is_a_validation_error() {
    let out = bin()
        .args([
            "solve",
            "--method",
            "svrg",
            "--problem",
            "nonsense",
            "--out",
            "/tmp/unused.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("shaw32");
    let status = bin()
        .args(["generate", "--problem", "shaw", "--n", "32", "--out"])
        .arg(&stem)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(stem.with_extension("csv").exists());
    assert!(stem.with_extension("json").exists());
    assert!(dir.path().join("shaw32_solution.csv").exists());

    // the generic loader reproduces the generator bit-exactly
    let direct = svrg_reg::problems::shaw(32).unwrap();
    let loaded = svrg_reg::fileio::read_problem(&stem).unwrap();
    assert_eq!(loaded.meta.name, "shaw");
    assert_eq!(loaded.x_true, direct.x_true);
    for (a, b) in loaded
        .operator
        .entries()
        .iter()
        .zip(direct.operator.entries().iter())
    {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // and a solve can run off the stored files
    let out = dir.path().join("from_file.csv");
    let status = bin()
        .args([
            "solve",
            "--method",
            "landweber",
            "--problem",
            "file",
            "--file",
        ])
        .arg(&stem)
        .args(["--epochs", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.exists());
}

#[test]
fn rate_check_prints_slope_and_per_delta_table() {
    let output = bin()
        .args([
            "rate-check",
            "--problem",
            "phillips",
            "--n",
            "40",
            "--deltas",
            "1e-1,3e-2,1e-2",
            "--c",
            "1",
            "--runs",
            "3",
            "--seed",
            "11",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("fitted slope"));
    assert!(stdout.contains("n_delta"));
    // three delta rows
    assert_eq!(
        stdout
            .lines()
            .filter(|l| l.trim_start().starts_with('1') || l.trim_start().starts_with('3'))
            .count(),
        3,
        "expected one row per delta: {stdout}"
    );
}

fn write_tiny_config(path: &Path, out_kind: &str) {
    let cfg = format!(
        r#"{{
  "problem": {{ "name": "phillips", "n": 30 }},
  "method": {{ "method": "{out_kind}", "m_frac": 0.2 }},
  "delta_rel": 0.05,
  "n_runs": 4,
  "base_seed": 9,
  "stop": {{ "kind": "dp", "tau": 1.5 }},
  "max_epochs": 5000
}}"#
    );
    std::fs::write(path, cfg).unwrap();
}

#[test]
fn ensemble_emits_aggregates_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write_tiny_config(&cfg_path, "svrg-dp");

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args(["ensemble", "--config"])
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        for f in ["runs.csv", "epochs.csv", "boxplot.csv"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
    }
    // aggregate CSVs are bit-identical across identical configs
    for f in ["epochs.csv", "boxplot.csv"] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical ensembles");
    }
    // runs.csv matches after dropping the per-run wall_time column
    let strip = |p: &Path| -> String {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                if l.starts_with('#') || l.starts_with("run_id,") {
                    l.to_string()
                } else {
                    l.rsplit_once(',').map(|(h, _)| h.to_string()).unwrap()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip(&out_a.join("runs.csv")),
        strip(&out_b.join("runs.csv"))
    );
}

#[test]
fn ensemble_quartile_metadata_present() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    write_tiny_config(&cfg_path, "svrg-dp");
    let out = dir.path().join("out");
    assert!(bin()
        .args(["ensemble", "--config"])
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(out.join("boxplot.csv")).unwrap();
    assert!(text.contains("# quartile-convention: linear-interpolation-closest-ranks"));
    assert!(text.contains("stop_index"));
    assert!(text.contains("final_relative_error_sq"));
}

#[test]
fn reproduce_table_emits_three_methods_per_noise_level() {
    let output = bin()
        .args([
            "reproduce-table",
            "--problem",
            "phillips",
            "--n",
            "100",
            "--runs",
            "3",
            "--delta-rels",
            "0.1",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("landweber"));
    assert!(stdout.contains("svrg m=N"));
    assert!(stdout.contains("svrg m=0.1N"));
}
