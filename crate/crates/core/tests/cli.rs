mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{cli, path_str};

const BIN: &str = env!("CARGO_BIN_EXE_cesdemand");

fn simulate_into(dir: &Path, extra: &[&str]) -> ces_demand::cli::RunReport {
    let mut args = vec!["simulate", "-o", path_str(dir)];
    args.extend_from_slice(extra);
    cli(&args).unwrap()
}

fn summary_value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no '{key}' in summary"))
}

fn methods_in_csv(path: &Path) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let mut out: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let m = rec.unwrap()[0].to_string();
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn price_coefficient(path: &Path, method: &str) -> f64 {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(Result::unwrap)
        .find(|r| &r[0] == method && &r[2] == "log_price")
        .map(|r| r[3].parse().unwrap())
        .unwrap_or_else(|| panic!("{method} has no price coefficient"))
}

#[test]
fn default_simulation_censors_about_half() {
    let dir = tempfile::tempdir().unwrap();
    let report = simulate_into(dir.path(), &["--seed", "11"]);
    let n = summary_value(&report.summary, "N ");
    let d = summary_value(&report.summary, "D ");
    assert_eq!(n, 10_500.0);
    assert!((0.43..=0.53).contains(&(d / n)), "D/N = {}", d / n);
    for f in ["simulated.csv", "latent.csv", "simulate.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn repeated_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate_into(a.path(), &["--seed", "5", "--products", "800", "--workers", "1"]);
    simulate_into(b.path(), &["--seed", "5", "--products", "800", "--workers", "3"]);
    for f in ["simulated.csv", "latent.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn huge_gate_intercept_opens_every_gate() {
    let dir = tempfile::tempdir().unwrap();
    let report = simulate_into(dir.path(), &["--gamma", "1e9", "--products", "600"]);
    assert_eq!(summary_value(&report.summary, "censoring rate"), 0.0);
}

#[test]
fn single_method_emits_one_column() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "1200", "--seed", "2"]);
    let data = dir.path().join("simulated.csv");
    let report = cli(&["estimate", "-i", path_str(&data), "-m", "logit-drop", "-o", path_str(dir.path())]).unwrap();
    assert!(report.success);
    assert_eq!(methods_in_csv(&dir.path().join("estimates.csv")), vec!["logit-drop"]);
    let header = report.summary.lines().next().unwrap();
    assert_eq!(header.split_whitespace().collect::<Vec<_>>(), vec!["(1)"]);
    assert!(!dir.path().join("first_stage.csv").exists());
}

#[test]
fn missing_instruments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "600"]);
    let text = fs::read_to_string(dir.path().join("simulated.csv")).unwrap();
    let mut rows = text.lines().map(|l| l.split(',').collect::<Vec<_>>());
    let header = rows.next().unwrap();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !header[i].starts_with('z')).collect();
    let stripped: String = text
        .lines()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",") + "\n"
        })
        .collect();
    let input = dir.path().join("no_z.csv");
    fs::write(&input, stripped).unwrap();

    let status = Command::new(BIN)
        .args(["estimate", "-i", path_str(&input), "-m", "logit-impute:1e-8", "-o", path_str(dir.path())])
        .output()
        .unwrap();
    assert!(!status.status.success());
    let csv = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    assert!(csv.contains("under-identified"), "{csv}");
}

#[test]
fn bad_method_name_fails() {
    let status = Command::new(BIN).args(["estimate", "-i", "nowhere.csv", "-m", "powell"]).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("unknown method"));
}

#[test]
fn methods_order_as_in_the_simulated_table() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "3000", "--seed", "21"]);
    let data = dir.path().join("simulated.csv");
    let report = cli(&[
        "estimate",
        "-i",
        path_str(&data),
        "-m",
        "ks-powell,logit-drop,logit-impute:1e-8",
        "--starts",
        "2",
        "--bootstrap",
        "20",
        "-o",
        path_str(dir.path()),
    ])
    .unwrap();
    assert!(report.success, "{}", report.summary);
    let csv = dir.path().join("estimates.csv");
    let ks = price_coefficient(&csv, "ks-powell");
    let drop = price_coefficient(&csv, "logit-drop");
    let impute = price_coefficient(&csv, "logit-impute:1e-8");
    assert!((ks + 2.0).abs() < 0.6, "ks-powell {ks}");
    assert!(drop > ks && impute < ks, "drop {drop}, ks {ks}, impute {impute}");
    assert!(dir.path().join("first_stage.csv").exists());
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "1000", "--seed", "8"]);
    let data = dir.path().join("simulated.csv");
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}"));
        cli(&[
            "estimate",
            "-i",
            path_str(&data),
            "-m",
            "ks-powell,probit-heckman",
            "--starts",
            "2",
            "--bootstrap",
            "15",
            "--workers",
            workers,
            "-o",
            path_str(&out),
        ])
        .unwrap();
        outputs.push((
            fs::read(out.join("estimates.csv")).unwrap(),
            fs::read(out.join("first_stage.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn no_censoring_falls_back_to_equal_pair_weights() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--gamma", "1e9", "--products", "900"]);
    let data = dir.path().join("simulated.csv");
    let report = cli(&[
        "estimate",
        "-i",
        path_str(&data),
        "-m",
        "ks-powell",
        "--powell-se",
        "sandwich",
        "-o",
        path_str(dir.path()),
    ])
    .unwrap();
    assert!(report.success);
    assert!(report.summary.contains("constant index"), "{}", report.summary);

    let ds = ces_demand::io::load_csv(&data, None).unwrap();
    let pairwise =
        ces_demand::secondstage::pairwise_tsls(&ces_demand::secondstage::SecondStageData::uncensored(&ds).unwrap())
            .unwrap();
    let ks = price_coefficient(&dir.path().join("estimates.csv"), "ks-powell");
    assert!((ks - pairwise[0]).abs() < 1e-8, "{ks} vs {}", pairwise[0]);
}

#[test]
fn density_writes_requested_draws() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "1500", "--seed", "4"]);
    let data = dir.path().join("simulated.csv");
    let report = cli(&[
        "density",
        "-i",
        path_str(&data),
        "--starts",
        "1",
        "--draws",
        "2500",
        "--grid",
        "200",
        "--reference",
        "ev",
        "-o",
        path_str(dir.path()),
    ])
    .unwrap();
    assert!(report.summary.contains("standardized Kolmogorov distance"));
    let draws = csv::Reader::from_path(dir.path().join("eta_draws.csv")).unwrap().records().count();
    let grid = csv::Reader::from_path(dir.path().join("eta_density.csv")).unwrap().records().count();
    assert_eq!((draws, grid), (2500, 200));
}

#[test]
fn elasticities_of_a_single_good() {
    let dir = tempfile::tempdir().unwrap();
    let report = cli(&["elasticities", "--shares", "0.5", "--sigma", "2", "-o", path_str(dir.path())]).unwrap();
    assert!(report.summary.contains("own Marshallian -1.5000"));
    let mut rdr = csv::Reader::from_path(dir.path().join("elasticities.csv")).unwrap();
    let recs: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(recs[0][3].parse::<f64>().unwrap(), -1.5);
    assert_eq!(recs[1][3].parse::<f64>().unwrap(), -1.0);
    assert!(recs.iter().all(|r| r[4].parse::<f64>().unwrap() == 1.0));
}

#[test]
fn elasticities_from_a_dataset_market() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), &["--products", "50"]);
    let data = dir.path().join("simulated.csv");
    let report =
        cli(&["elasticities", "-i", path_str(&data), "--market", "m00000", "--sigma", "2", "-o", path_str(dir.path())])
            .unwrap();
    assert!(report.summary.contains("outside"));
    let header = csv::Reader::from_path(dir.path().join("elasticities.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(&header[header.len() - 1], "income");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\nproducts = 400\ngamma = 1e9\n").unwrap();
    let from_file = cli(&["simulate", "--config", path_str(&cfg), "-o", path_str(dir.path())]).unwrap();
    assert_eq!(summary_value(&from_file.summary, "N "), 400.0);
    assert_eq!(summary_value(&from_file.summary, "censoring rate"), 0.0);
    let overridden =
        cli(&["simulate", "--config", path_str(&cfg), "--products", "300", "--gamma", "0", "-o", path_str(dir.path())])
            .unwrap();
    assert_eq!(summary_value(&overridden.summary, "N "), 300.0);
    assert!(summary_value(&overridden.summary, "censoring rate") > 0.2);
    assert_eq!(summary_value(&overridden.summary, "seed"), 3.0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "sead = 3\n").unwrap();
    assert!(cli(&["simulate", "--config", path_str(&cfg), "-o", path_str(dir.path())]).is_err());
}

#[test]
fn environment_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let status = Command::new(BIN)
        .args(["simulate", "--products", "100"])
        .env(ces_demand::cli::OUTPUT_DIR_ENV, &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(target.join("simulated.csv").exists());
}
