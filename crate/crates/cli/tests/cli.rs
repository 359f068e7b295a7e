use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sensorcode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensorcode")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const FIELD20: &str = r#"
[scenario]
kind = "field"
n = 20
beta = 0.5

[coding]
rate = 1

[simulation]
pmf_samples = 20000
eval_samples = 2000
"#;

const CEO8: &str = r#"
[scenario]
kind = "ceo"
n = 8
sigma0_sq = 1.0
lambda_sq = 0.1

[coding]
rate = 1

[simulation]
pmf_samples = 20000
eval_samples = 2000
"#;

fn design(dir: &Path, config: &str, levels: Option<&str>) -> PathBuf {
    let cfg = write_config(dir, "config.toml", config);
    let out = dir.join("design");
    let mut args = vec!["design", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    if let Some(l) = levels {
        args.extend(["--levels", l]);
    }
    stdout(&sensorcode(&args));
    out.join("design.json")
}

#[test]
fn field_design_reports_bounded_clusters() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "config.toml", FIELD20);
    let out = dir.path().join("d");
    let o = sensorcode(&["design", "--config", cfg.to_str().unwrap(), "--levels", "4", "--out", out.to_str().unwrap()]);
    let text = stdout(&o);
    assert!(text.contains("field (20 variables)"), "{text}");
    assert!(text.contains("index reuse from L=4"));
    assert!(out.join("design.json").exists());

    let csv = stdout(&sensorcode(&[
        "--format",
        "csv",
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--levels",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]));
    let mut covered = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let size: usize = cols[1].parse().unwrap();
        assert!((1..=4).contains(&size));
        covered.extend(cols[2].split(' ').map(|m| m.parse::<usize>().unwrap()));
        if size > 1 {
            let d_q: f64 = cols[3].parse().unwrap();
            let d_d: f64 = cols[4].parse().unwrap();
            let d: f64 = cols[5].parse().unwrap();
            assert!((d_q + d_d - d).abs() < 2e-6);
        }
    }
    covered.sort_unstable();
    assert_eq!(covered, (0..20).collect::<Vec<_>>());
}

#[test]
fn ceo_design_replicates_one_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "config.toml", CEO8);
    let out = dir.path().join("d");
    let text = stdout(&sensorcode(&["design", "--config", cfg.to_str().unwrap(), "--levels", "4", "--out", out.to_str().unwrap()]));
    assert!(text.contains("code designs:    2 (1 distinct)"), "{text}");
}

#[test]
fn malformed_config_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    for body in ["[scenario]\nkind = \"field\"\nn = 0\nbeta = 1.0\n[coding]\nrate = 1\n", "not toml at all ["] {
        let cfg = write_config(dir.path(), "bad.toml", body);
        let o = sensorcode(&["design", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
        assert!(!out.join("design.json").exists());
    }
    let o = sensorcode(&["design", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_artifact_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let path = design(dir.path(), FIELD20, None);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1)).unwrap();
    let o = sensorcode(&["simulate", "--artifact", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = sensorcode(&["simulate", "--artifact", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulation_csv_is_identical_across_reruns() {
    let dir = TempDir::new().unwrap();
    let path = design(dir.path(), FIELD20, Some("4"));
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        sensorcode(&["simulate", "--artifact", path.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        files.push(fs::read(out.join("simulation.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let text = String::from_utf8(files.remove(0)).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..6], &["field", "ir", "1", "4", "2000", "7"]);
}

#[test]
fn zero_samples_yield_an_empty_snr() {
    let dir = TempDir::new().unwrap();
    let path = design(dir.path(), FIELD20, None);
    let csv = stdout(&sensorcode(&["--format", "csv", "simulate", "--artifact", path.to_str().unwrap(), "--samples", "0"]));
    assert_eq!(csv.lines().nth(1).unwrap(), "field,dec,1,2,0,1,,0");
}

#[test]
fn ceo_two_bit_quantize_only_snr() {
    let dir = TempDir::new().unwrap();
    let body = "[scenario]\nkind = \"ceo\"\nn = 100\nsigma0_sq = 1.0\nlambda_sq = 0.1\n[coding]\nrate = 2\n";
    let path = design(dir.path(), body, None);
    let csv = stdout(&sensorcode(&["--format", "csv", "simulate", "--artifact", path.to_str().unwrap()]));
    let snr: f64 = csv.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    assert!((snr - 19.37).abs() <= 0.5, "{snr}");
}

#[test]
fn inspect_outputs_have_the_expected_shape() {
    let dir = TempDir::new().unwrap();
    let path = design(dir.path(), FIELD20, Some("4"));
    let artifact = path.to_str().unwrap();

    let dot = stdout(&sensorcode(&["inspect", "dendrogram", "--artifact", artifact]));
    assert_eq!(dot.matches("shape=box").count(), 20);
    assert_eq!(dot.matches("shape=point").count(), 19);
    assert_eq!(dot.matches(" -> ").count(), 38);

    let graph = stdout(&sensorcode(&["inspect", "factorgraph", "--artifact", artifact]));
    let factors = graph.matches("shape=box").count();
    assert!((1..=2 * 20 + 1).contains(&factors));
    assert_eq!(graph.matches("shape=circle").count(), 20);

    let out = dir.path().join("m");
    sensorcode(&["inspect", "mappings", "--artifact", artifact, "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("mappings.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("source ")).count(), 20);
    assert!(text.contains("L=4 K=2"));
    for block in text.split("source ").skip(1) {
        assert!(block.starts_with(|c: char| c.is_ascii_digit()));
        let header = block.lines().next().unwrap();
        assert!(header.ends_with("L=4 K=2") || header.ends_with("L=2 K=2"), "{header}");
        let levels: usize = header.split("L=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
        assert_eq!(block.lines().count(), 1 + levels);
    }

    let o = sensorcode(&["--format", "csv", "inspect", "dendrogram", "--artifact", artifact]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ceo_artifacts_have_no_dendrogram() {
    let dir = TempDir::new().unwrap();
    let path = design(dir.path(), CEO8, None);
    let o = sensorcode(&["inspect", "dendrogram", "--artifact", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reproduce_tables_marks_unavailable_cells() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "config.toml", CEO8);
    let out = dir.path().join("t");
    let text = stdout(&sensorcode(&[
        "reproduce-tables",
        "table2",
        "--config",
        cfg.to_str().unwrap(),
        "--max-levels",
        "4",
        "--samples",
        "500",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(text.contains("N=8"), "{text}");
    let ir: Vec<&str> = text.lines().filter(|l| l.contains(" IR ")).collect();
    assert_eq!(ir.len(), 2);
    for line in ir {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(&cells[cells.len() - 3..], &["N.A.", "N.A.", "N.A."]);
    }
    assert_eq!(text.lines().filter(|l| l.contains(" R/D ")).count(), 2);
    let csv = fs::read_to_string(out.join("table2.csv")).unwrap();
    assert!(csv.starts_with("lambda_sq,scenario,mode,"));
    assert_eq!(csv.lines().filter(|l| l.contains(",dec_mean,")).count(), 8);
}
