use std::path::Path;
use std::process::{Command, Output};

fn gpmnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpmnet")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn generate_writes_three_files_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--family", "butterfly-c", "--pairs", "2", "--n", "1000", "--seed", "7", "--out"];
    for out in ["a", "b"] {
        let o = gpmnet(&[&args[..], &[out]].concat(), dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["data.csv", "truth.json", "provenance.json"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
    let truth = String::from_utf8(read(dir.path().join("a/truth.json"))).unwrap();
    assert!(truth.contains("[0,1]") || truth.contains("[\n"), "{truth}");
}

#[test]
fn invalid_requests_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmnet(&["generate", "--family", "butterfly-c", "--d", "5", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("even"));
    assert_eq!(code(&gpmnet(&["fit", "missing.csv"], dir.path())), 2);
    let o = gpmnet(&["fit", "missing.csv", "--set", "penalty.lamda=1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("penalty.lamda"));
    assert_eq!(code(&gpmnet(&["benchmark", "--preset", "nope"], dir.path())), 2);
}

#[test]
fn fit_artifacts_and_zero_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&gpmnet(&["generate", "--family", "butterfly-m", "--pairs", "2", "--n", "200", "--out", "g"], p)), 0);
    let o = gpmnet(&["fit", "g/data.csv", "--max-iters", "0", "--out", "f0"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "omega_squared.csv", "omega_rooted.csv", "graph.json", "train_log.jsonl"] {
        assert!(p.join("f0").join(f).exists(), "{f}");
    }
    let model: serde_json::Value = serde_json::from_slice(&read(p.join("f0/model.json"))).unwrap();
    let theta = model.pointer("/theta").and_then(|t| t.as_array()).expect("theta array");
    assert!(theta.iter().all(|t| t.as_f64() == Some(0.0)));

    let o = gpmnet(&["fit", "g/data.csv", "--penalty", "scad", "--lambda", "0.1", "--seed", "0", "--max-iters", "30", "--out", "f1"], p);
    assert_eq!(code(&o), 0);
    let log = String::from_utf8(read(p.join("f1/train_log.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(log.lines().last().unwrap().contains("\"done\":true"));
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["iter", "total", "penalty", "per_variable"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("truth.json"), r#"{"d":4,"edges":[[0,1],[2,3]]}"#).unwrap();
    std::fs::write(p.join("empty.json"), r#"{"d":4,"edges":[]}"#).unwrap();
    std::fs::write(p.join("five.json"), r#"{"d":5,"edges":[]}"#).unwrap();
    let parse = |o: Output| -> serde_json::Value {
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let same = parse(gpmnet(&["eval", "truth.json", "truth.json"], p));
    assert_eq!(same["hamming"], 0);
    let v = parse(gpmnet(&["eval", "empty.json", "truth.json"], p));
    assert_eq!((v["hamming"].as_u64(), v["missing_edges"].as_u64(), v["extra_edges"].as_u64()), (Some(2), Some(2), Some(0)));
    let swapped = parse(gpmnet(&["eval", "truth.json", "empty.json"], p));
    assert_eq!(swapped["hamming"], 2);
    assert_eq!(code(&gpmnet(&["eval", "five.json", "truth.json"], p)), 2);
}

#[test]
fn verify_passes_on_a_correct_build() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmnet(&["verify", "--trials", "200", "--seed", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn deterministic_commands_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |tag: &str| {
        let g = format!("g{tag}");
        let f = format!("f{tag}");
        let b = format!("b{tag}");
        let det = ["--deterministic", "--seed", "3"];
        assert_eq!(code(&gpmnet(&[&["generate", "--family", "random-m", "--d", "5", "--n", "150", "--out", &g][..], &det].concat(), p)), 0);
        let data = format!("{g}/data.csv");
        assert_eq!(code(&gpmnet(&[&["fit", &data, "--max-iters", "40", "--batch", "50", "--out", &f][..], &det].concat(), p)), 0);
        let o =
            gpmnet(
                &[
                    &[
                        "benchmark",
                        "--family",
                        "butterfly-d",
                        "--d-list",
                        "4",
                        "--n",
                        "80",
                        "--seeds",
                        "2",
                        "--max-iters",
                        "20",
                        "--out",
                        &b,
                    ][..],
                    &det,
                ]
                .concat(),
                p,
            );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = gpmnet(&["verify", "--trials", "20", "--deterministic", "--seed", "3"], p);
        (g, f, b, v.stdout)
    };
    let (g1, f1, b1, v1) = run("1");
    let (g2, f2, b2, v2) = run("2");
    assert_eq!(v1, v2);
    for (a, b, files) in [
        (&g1, &g2, &["data.csv", "truth.json", "provenance.json"][..]),
        (&f1, &f2, &["model.json", "omega_squared.csv", "omega_rooted.csv", "graph.json", "train_log.jsonl"][..]),
        (&b1, &b2, &["results.csv", "summary.json"][..]),
    ] {
        for file in files {
            let (x, y) = (read(p.join(a).join(file)), read(p.join(b).join(file)));
            assert!(!x.is_empty(), "{file} is empty");
            assert_eq!(x, y, "{file} differs");
        }
    }
}

#[test]
fn benchmark_preset_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpmnet(&["benchmark", "--preset", "butterfly-small", "--n", "60", "--max-iters", "3", "--k", "4", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(dir.path().join("b/results.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 3);
}
