use std::path::Path;
use std::process::Command;

use difflab::harness::{preset, report, run_sweep, ExperimentResult, ExperimentSpec, COLUMNS};

const RATE_SWEEP: &str = r#"
seed = 3
metrics = ["kl"]
schedule.kind = "constant"
grid.kind = "uniform"
grid.delta = 0.001
grid.T = 8.0
grid.N = [16, 64, 256, 1024]
distribution.preset = "gaussian"
distribution.d = 2
score.kind = "exact"
sampler.scheme = "ei"
"#;

fn run_to(text: &str, path: &Path) -> ExperimentResult {
    let mut spec = ExperimentSpec::from_toml_str(text).unwrap();
    spec.out = Some(path.to_path_buf());
    run_sweep(&spec).unwrap()
}

#[test]
fn gaussian_rate_sweep_gives_kl_rows_and_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_to(RATE_SWEEP, &dir.path().join("r.csv"));
    assert_eq!(result.rows.len(), 4);
    assert!(result.rows.iter().all(|r| r.get("metric") == "kl" && !r.is_error()));
    assert_eq!(result.slopes.len(), 1);
    assert_eq!(result.slopes[0].get("metric"), "slope:kl:grid.N");
    let text = report(&result);
    assert!(text.contains("slope "), "{text}");
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let text = RATE_SWEEP.replace("grid.N = [16, 64, 256, 1024]", "grid.N = []");
    let result = run_to(&text, &path);
    assert!(result.rows.is_empty() && result.slopes.is_empty());
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.trim_end(), COLUMNS.join(","));
    assert_eq!(report(&result), "no cells\n");
}

#[test]
fn cell_results_do_not_depend_on_other_cells() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 9
metrics = ["sliced_w2"]
schedule.kind = "constant"
grid.kind = "uniform"
grid.delta = 0.01
grid.T = 4.0
grid.N = [8, 16, 32]
distribution.preset = "two_point"
distribution.d = 2
sampler.scheme = "em"
sampler.n_samples = 400
metric.projections = 8
"#;
    let full = run_to(text, &dir.path().join("full.csv"));
    let single = run_to(&text.replace("grid.N = [8, 16, 32]", "grid.N = 16"), &dir.path().join("one.csv"));
    let pick = |r: &ExperimentResult| r.rows.iter().find(|row| row.get("N") == "16").unwrap().clone();
    assert_eq!(pick(&full), pick(&single));
}

#[test]
fn error_cells_are_recorded_and_the_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    // Exact KL needs a Gaussian target, so the two-point cell fails at run time.
    let text = r#"
metrics = ["kl"]
schedule.kind = "constant"
grid.kind = "uniform"
grid.delta = 0.1
grid.T = 2.0
grid.N = 4
distribution.preset = ["gaussian", "two_point"]
distribution.d = 2
"#;
    let result = run_to(text, &dir.path().join("e.csv"));
    assert_eq!(result.rows.len(), 2);
    assert_eq!(result.rows.iter().filter(|r| r.is_error()).count(), 1);
    assert!(report(&result).contains("1 failed rows"));
}

#[test]
fn presets_resolve() {
    assert_eq!(preset("rate_vs_N").unwrap().cells().len(), 6);
    assert!(preset("unknown").is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difflab"))
}

#[test]
fn cli_run_report_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.toml");
    let status = bin().args(["preset", "em_vs_ei_m2", "--out"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    assert!(std::fs::read_to_string(&cfg).unwrap().contains("sampler.scheme"));

    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    for csv in [&csv_a, &csv_b] {
        let out = bin().arg("run").arg(&cfg).args(["--workers", "2", "--seed", "4", "--out"]).arg(csv).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("EM vs EI"));
    }
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(&csv_b).unwrap());

    let out = bin().arg("report").arg(&csv_a).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("8 cells, 8 rows"));

    let out = bin().args(["preset", "nope"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn em_ei_ratio_grows_with_mean_shift() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("em_vs_ei_m2").unwrap();
    spec.out = Some(dir.path().join("m.csv"));
    let result = run_sweep(&spec).unwrap();
    let mut ratios = Vec::new();
    for mu in ["0.0", "10.0", "50.0", "100.0"] {
        let tag = format!("distribution.mu={mu}");
        let value = |scheme: &str| {
            result
                .rows
                .iter()
                .find(|r| r.get("scheme") == scheme && r.get("params").contains(&tag))
                .and_then(|r| r.num("value"))
                .unwrap()
        };
        ratios.push(value("em") / value("ei"));
    }
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
}
