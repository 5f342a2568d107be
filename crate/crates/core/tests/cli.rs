use std::fs;
use std::path::Path;

use sdore::cli::{run_cli, RunConfig, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

const TINY: &str = r#"
experiment = "example6_1"
seeds = [0, 1]

[problem]
n = 30
m = 60

[[variants]]
variant = "sdore"
lambda = 1e-3

[[variants]]
variant = "ls"
lambda = 0.0

[model]
hidden = [4, 4]

[train]
epochs = 3
batch_size = 16

[eval]
test_sets = 2
test_size = 10
grid = { lo = 0.05, hi = 0.95, per_axis = 11 }
"#;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("sdore").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn list_shows_six_experiments_with_defaults() {
    let (code, out, _) = cli(&["list"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("6 built-in experiments:"), "{out}");
    for name in ["example6_1", "example6_2", "example6_3", "appendix_toy", "appendix_sim", "csv_selection"] {
        assert!(out.contains(name), "{name} missing");
    }
    let e63 = out.lines().find(|l| l.starts_with("example6_3")).unwrap();
    assert!(e63.contains("sigma=0.1") && e63.contains("sigma=0.2"), "{e63}");
    let e61 = out.lines().find(|l| l.starts_with("example6_1")).unwrap();
    assert!(e61.contains("lambda=1e-3"), "{e61}");
}

#[test]
fn run_writes_every_artifact_inside_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let outdir = dir.path().join("out");
    let (code, out, err) = cli(&["run", &config, "--output-dir", outdir.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("4 rows"), "{out}");
    for file in ["report.json", "report.csv", "history.csv", "curve.csv", "config.toml"] {
        assert!(outdir.join(file).is_file(), "{file} missing");
    }
    let ckpts = fs::read_dir(&outdir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    assert_eq!(ckpts, 4);

    let mut top: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, vec!["out", "run.toml"]);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(outdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["library_version"], env!("CARGO_PKG_VERSION"));
    assert!(json["runtime_seconds"].as_f64().unwrap() >= 0.0);
    assert!(json["sigma_provenance"].as_str().unwrap().contains("snr"));
    assert_eq!(json["report"]["rows"].as_array().unwrap().len(), 4);

    let echoed = RunConfig::load(&outdir.join("config.toml")).unwrap();
    assert_eq!(echoed, RunConfig::parse(TINY).unwrap());
}

#[test]
fn reruns_are_bit_identical_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let mut reports = Vec::new();
    for (i, threads) in ["1", "2", "2"].iter().enumerate() {
        let outdir = dir.path().join(format!("out{i}"));
        let (code, _, err) = cli(&["run", &config, "--threads", threads, "--output-dir", outdir.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
        reports.push(fs::read(outdir.join("report.csv")).unwrap());
        reports.push(fs::read(outdir.join("history.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[2]);
    assert_eq!(reports[2], reports[4]);
    assert_eq!(reports[1], reports[3]);
}

#[test]
fn missing_lambda_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TINY.replace("lambda = 1e-3\n", ""));
    let (code, _, err) = cli(&["run", &config, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("lambda"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent.toml");
    assert_eq!(cli(&["run", absent.to_str().unwrap()]).0, EXIT_CONFIG);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_CONFIG);
    assert_eq!(cli(&["list", "--threads", "many"]).0, EXIT_CONFIG);

    let config = write_config(dir.path(), TINY);
    assert_eq!(cli(&["run", &config, "--threads", "0"]).0, EXIT_CONFIG);

    let negative = write_config(dir.path(), &TINY.replace("lambda = 1e-3", "lambda = -1.0"));
    let (code, _, err) = cli(&["run", &negative]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("variants[0].lambda"), "{err}");

    let both = write_config(dir.path(), &TINY.replace("m = 60", "m = 60\nsigma = 0.1\nsnr = 3.0"));
    assert_eq!(cli(&["run", &both]).0, EXIT_CONFIG);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let target = blocker.join("out");
    let (code, _, err) = cli(&["run", &config, "--output-dir", target.to_str().unwrap()]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let (code, out, _) = cli(&["gradcheck", "--cases", "3", "--seed", "5"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("all checks passed"));

    let (code, out, _) = cli(&["gradcheck", "--cases", "3", "--corrupt-requ-prime"]);
    assert_eq!(code, EXIT_RUNTIME);
    let failing = out.lines().last().unwrap();
    assert_eq!(failing, "failing checks: param-grad");
}

#[test]
fn csv_selection_reads_the_dataset_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h.csv"), sdore::experiments::synthetic_housing_csv(50, 3)).unwrap();
    let text = r#"
experiment = "csv_selection"
[problem]
dataset = "h.csv"
[[variants]]
variant = "sdore"
lambda = 1e-4
[model]
hidden = [4]
[train]
epochs = 2
[eval]
test_sets = 1
"#;
    let config = write_config(dir.path(), text);
    let outdir = dir.path().join("out");
    let (code, _, err) = cli(&["run", &config, "--output-dir", outdir.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(outdir.join("report.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("norm_MedInc"), "{csv}");

    let missing = write_config(dir.path(), &text.replace("h.csv", "nope.csv"));
    assert_eq!(cli(&["run", &missing]).0, EXIT_CONFIG);
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config
            .resolve(&dir)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(RunConfig::parse(&config.to_toml()).unwrap(), config);
        seen += 1;
    }
    assert_eq!(seen, 7);
}
