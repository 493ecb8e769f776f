use std::path::Path;
use std::process::{Command, Output};

use taylorgan::evolution::{read_journal, RunResult, RunSet, Status};
use taylorgan::metrics::welch_t;

const TINY: &str = r#"
seed = 5
workers = 2

[data.mixture]
kind = "ring"
modes = 8
radius = 2.0
sigma = 0.02

[search]
algorithm = "cmaes"
generations = 1

[search.cmaes]
lambda = 4

[train]
hidden_width = 16

[budget]
eval_steps = 200
full_steps = 200
batch = 64
eval_samples = 1000

[verify]
seeds = 2
"#;

fn run(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taylorgan"))
        .args(args)
        .env("TAYLORGAN_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = run(&["evolve", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn tiny_evolution_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run(&["evolve", "--config", &cfg], &a);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let records = read_journal(&a.join("journal.ndjson")).unwrap();
    assert!(records.len() >= 8, "{} records", records.len());
    for f in ["best_genome.json", "summary.json", "fitness.csv", "fitness.svg", "verify.json", "config.toml"] {
        assert!(a.join(f).exists(), "{f} missing");
    }

    // same seed, different worker count
    let second = run(&["evolve", "--config", &cfg, "--set", "workers=1"], &b);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    for f in ["journal.ndjson", "verify.json", "best_genome.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    // the saved report compares with itself as the two sides
    let o = run(&["compare", a.join("verify.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("fitness"));

    // the best genome trains and draws its loss curves
    let genome = a.join("best_genome.json");
    let o = run(&["train", "--config", &cfg, "--genome", genome.to_str().unwrap(), "--steps", "50"], &a);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["losscurve", "--genome", genome.to_str().unwrap()], &a);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn resume_continues_a_journal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("r");
    let o = run(&["evolve", "--config", &cfg, "--no-verify"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let full = std::fs::read_to_string(out.join("journal.ndjson")).unwrap();
    let first_gen: Vec<&str> = full.lines().filter(|l| l.contains("\"gen\":0")).collect();
    std::fs::write(out.join("journal.ndjson"), first_gen.join("\n") + "\n").unwrap();
    let o = run(&["evolve", "--config", &cfg, "--no-verify", "--resume"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("journal.ndjson")).unwrap(), full);
}

#[test]
fn train_preset_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(&["train", "--config", &cfg, "--preset", "wgan"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["checkpoint.json", "metrics.json", "samples.csv", "samples.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["fitness"].as_f64().unwrap().is_finite());

    let o = run(&["train", "--config", &cfg, "--preset", "taylor-facades-preset", "--steps", "20"], dir.path());
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let genome = dir.path().join("g.json");
    std::fs::write(&genome, "[1, 2, 3]").unwrap();
    let g = genome.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--config", &cfg, "--preset", "wgan", "--genome", g],
        vec!["train", "--config", &cfg, "--genome", g],
        vec!["train", "--config", &cfg, "--preset", "hinge"],
        vec!["losscurve", "--genome", g],
        vec!["evolve", "--config", &cfg, "--set", "budget.eval_steps=0"],
        vec!["bench-search", "--function", "ackley"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = run(&args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = run(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
}

fn run_set(label: &str, fitness: &[f64]) -> RunSet {
    RunSet {
        label: label.into(),
        runs: fitness
            .iter()
            .enumerate()
            .map(|(i, &f)| RunResult {
                seed: i as u64,
                status: Status::Ok,
                metrics: Some([("js_norm".to_string(), Some(-f))].into_iter().collect()),
                fitness: Some(f),
            })
            .collect(),
    }
}

#[test]
fn compare_matches_manual_welch() {
    let dir = tempfile::tempdir().unwrap();
    let a = [-0.91, -0.88, -0.93, -0.90, -0.87, -0.92, -0.89, -0.95, -0.86, -0.90];
    let b = [-0.85, -0.83, -0.88, -0.80, -0.86, -0.84, -0.90, -0.82, -0.81, -0.87];
    let write = |name: &str, set: &RunSet| {
        let p = dir.path().join(name);
        std::fs::write(&p, serde_json::to_string(set).unwrap()).unwrap();
        p.to_string_lossy().into_owned()
    };
    let pa = write("a.json", &run_set("base", &a));
    let pb = write("b.json", &run_set("evolved", &b));
    let o = run(&["compare", &pa, &pb], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let p_of = |metric: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(metric)).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    let expected = welch_t(&a, &b).unwrap().p;
    assert!((p_of("fitness") - expected).abs() < 1e-4, "{text}");
    // js_norm is lower-better, so the test direction flips
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let expected_js = welch_t(&neg(&b), &neg(&a)).unwrap().p;
    assert!((p_of("js_norm") - expected_js).abs() < 1e-4, "{text}");

    // identical sets give p = 0.5
    let o = run(&["compare", &pa, &pa], dir.path());
    assert!((stdout(&o).lines().find(|l| l.starts_with("fitness")).unwrap().split_whitespace().last().unwrap()
        .parse::<f64>()
        .unwrap()
        - 0.5)
        .abs()
        < 1e-9);

    let single = write("c.json", &run_set("one", &[-0.9]));
    let o = run(&["compare", &pa, &single], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 2"), "{}", stderr(&o));
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn losscurves_have_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["losscurve", "--preset", "wgan", "--name", "wgan"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for row in read_csv(&dir.path().join("wgan.csv")) {
        let s = row[0];
        assert_eq!((row[1], row[2], row[3]), (-s, s, -s));
        assert_eq!((row[4], row[5], row[6]), (-1.0, 1.0, -1.0));
    }
    assert!(dir.path().join("wgan.svg").exists() && dir.path().join("wgan-grad.svg").exists());

    let o = run(
        &["losscurve", "--preset", "taylor-facades-preset", "--from", "5.2232", "--to", "8.6177", "--points", "2", "--name", "f"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_csv(&dir.path().join("f.csv"));
    assert!(rows[0][3].abs() < 1e-9, "g_fake at its center: {}", rows[0][3]);
    assert!(rows[1][2].abs() < 1e-9, "d_fake at its center: {}", rows[1][2]);
    let o = run(
        &["losscurve", "--preset", "taylor-facades-preset", "--from", "8.3399", "--to", "9.3399", "--points", "2", "--name", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(&dir.path().join("r.csv"));
    assert!(rows[0][1].abs() < 1e-9);
    assert!((rows[1][1] - 23.4114).abs() < 1e-9);
}

#[test]
fn bench_search_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench-search", "--function", "sphere", "--dim", "4", "--generations", "150"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_csv(&dir.path().join("bench-sphere-cmaes.csv"));
    assert_eq!(rows.len(), 150);
    assert!(rows[149][1] < 1e-8, "{}", rows[149][1]);
    let o = run(&["bench-search", "--algorithm", "ga", "--generations", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
