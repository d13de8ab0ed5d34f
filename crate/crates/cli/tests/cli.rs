use std::path::Path;
use std::process::{Command, Output};

fn pslab(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_pslab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "pslab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_split_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = pslab(&[
        "generate",
        "--classes",
        "4",
        "--feature-dim",
        "2",
        "--samples",
        "200",
        "--min-len",
        "3",
        "--max-len",
        "6",
        "--parents",
        "2",
        "--seed",
        "3",
        "--out",
        arg(&data),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("200 samples"));
    let manifest = dir.path().join("data.csv.manifest.json");
    assert!(manifest.is_file());

    let split = dir.path().join("split.json");
    pslab(&[
        "split",
        "--data",
        arg(&data),
        "--validation-target",
        "30",
        "--out",
        arg(&split),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&split).unwrap()).unwrap();
    let total: usize = ["train", "validation", "test"]
        .iter()
        .map(|p| doc[*p].as_array().map_or(0, |a| a.len()))
        .sum();
    assert_eq!(total, 200, "{doc}");

    let results = dir.path().join("results");
    let out = pslab(&[
        "run",
        "--data",
        arg(&data),
        "--manifest",
        arg(&manifest),
        "--k",
        "5",
        "--seeds",
        "0",
        "--losses",
        "ce",
        "--dirpa",
        "both",
        "--alpha-grid",
        "1",
        "--tau-grid",
        "1",
        "--max-epochs",
        "2",
        "--patience",
        "2",
        "--embed-dim",
        "4",
        "--out",
        arg(&results),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("kappa") && stdout.contains("parent"),
        "{stdout}"
    );
    for name in [
        "results.csv",
        "summary.csv",
        "imbalance.csv",
        "selections.csv",
    ] {
        assert!(results.join(name).is_file(), "{name} missing");
    }

    let out = pslab(&["report", "--dir", arg(&results), "--write"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("kappa gain"));
    let gain = std::fs::read_to_string(results.join("gain.csv")).unwrap();
    assert!(
        gain.starts_with("k,loss,level,gini_test,bhattacharyya,metric,baseline,dirpa,gain,sign")
    );
    assert_eq!(gain.lines().count(), 1 + 2 * 3);
}

#[test]
fn density_to_stdout_and_file() {
    let out = pslab(&["density", "--alpha", "2", "--resolution", "4"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,x3,log_density,density,weight"));
    assert_eq!(lines.count(), 16);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let out = pslab(&["density", "--alpha", "0.5", "--out", arg(&path)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("integral"));
    assert_eq!(
        std::fs::read_to_string(&path).unwrap().lines().count(),
        1 + 151 * 151
    );
}

#[test]
fn bad_input_fails_cleanly() {
    let status = Command::new(env!("CARGO_BIN_EXE_pslab"))
        .args(["density", "--alpha", "1", "--resolution", "5"])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("not 1 mod 3"));
}
