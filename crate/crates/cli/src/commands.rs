use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};

use taylorgan::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use taylorgan::evolution::{
    derive_seed, read_journal, resume_evolution, run_evolution, verify_best, Contender, EvolutionOutcome,
    GenerationSummary, Journal, JournalLine, RunResult, RunSet, Status, VerifyReport, STREAM_TRAIN,
};
use taylorgan::formulation::{by_name, from_genome, Role, ScalarLoss, TripartiteLoss, TAYLOR_GENES};
use taylorgan::metrics::{direction_of, mean, std_dev, welch_t, Direction};
use taylorgan::search::{run_benchmark, Algorithm, Benchmark, SearchConfig, SearchSpace};

use crate::plot::{csv, line_chart, scatter, Series};
use crate::{usage, ConfigArgs, Failure, LossChoice, OptionalConfigArgs};

type CmdResult = Result<(), Failure>;

/// File, then the output-directory environment variable, then `--set`.
fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut all = Vec::new();
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        all.push(format!("output_dir={}", serde_json::to_string(&dir).expect("string serializes")));
    }
    all.extend_from_slice(overrides);
    match path {
        Some(p) => ExperimentConfig::load(p, &all).map_err(usage),
        None => ExperimentConfig::parse("seed = 0", &all).map_err(usage),
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn read_genome(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read genome `{}`: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("genome `{}` is not JSON: {e}", path.display())))?;
    let array = match &value {
        Value::Object(map) => map.get("genome").cloned().unwrap_or(Value::Null),
        other => other.clone(),
    };
    serde_json::from_value(array)
        .map_err(|_| usage(format!("genome `{}` must be an array of numbers or hold one under `genome`", path.display())))
}

fn contender(choice: &LossChoice, cfg: &ExperimentConfig) -> Result<Contender, Failure> {
    match (&choice.preset, &choice.genome) {
        (Some(_), Some(_)) => Err(usage("--preset and --genome are mutually exclusive")),
        (None, Some(path)) => Ok(Contender::Genome(read_genome(path)?)),
        (preset, None) => {
            let name = preset.clone().unwrap_or_else(|| cfg.preset.clone());
            by_name(&name, None).map_err(usage)?;
            Ok(Contender::Preset(name))
        }
    }
}

fn progress(s: &GenerationSummary) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "gen {:3}  best {:>8}  mean {:>8}  best-ever {:>8}  failed {}  retried {}",
        s.gen,
        fmt(s.best),
        fmt(s.mean),
        fmt(s.best_ever),
        s.failed,
        s.retried
    );
}

pub fn evolve(args: &ConfigArgs, resume: bool, no_verify: bool) -> CmdResult {
    let cfg = load_config(Some(&args.config), &args.overrides)?;
    let exp = cfg.build().map_err(usage)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_output(dir, "config.toml", &cfg.to_toml()?)?;
    let journal_path = cfg.journal_path();
    let outcome = if resume && journal_path.exists() {
        resume_evolution(&exp, &journal_path, progress)?.0
    } else {
        let mut journal = Journal::create(&journal_path)?;
        run_evolution(&exp, &mut journal, progress)?
    };
    eprintln!("wrote {}", journal_path.display());
    write_output(
        dir,
        "best_genome.json",
        &pretty(&json!({
            "genome": outcome.best_genome,
            "fitness": outcome.best_fitness,
            "gen": outcome.best_gen,
            "idx": outcome.best_idx,
            "genes": cfg.genes,
        })),
    )?;
    write_fitness_curve(dir, &outcome)?;

    let verification = if no_verify {
        None
    } else {
        eprintln!("verifying over {} seeds per side ({} steps)", cfg.verify.seeds, cfg.budget.full_steps);
        let report = verify_best(
            &exp,
            &Contender::Genome(outcome.best_genome.clone()),
            &Contender::Preset(cfg.verify.baseline.clone()),
            cfg.verify.seeds,
        )?;
        write_output(dir, "verify.json", &pretty(&report))?;
        print_comparison(&report.baseline, &report.candidate)?;
        Some(report)
    };
    write_output(dir, "summary.json", &pretty(&summary_json(&outcome, verification.as_ref())))?;
    println!(
        "best fitness {:.6} (generation {}, candidate {})",
        outcome.best_fitness, outcome.best_gen, outcome.best_idx
    );
    Ok(())
}

fn summary_json(outcome: &EvolutionOutcome, verification: Option<&VerifyReport>) -> Value {
    let side = |set: &RunSet| {
        json!({
            "label": set.label,
            "failures": set.failures(),
            "summary": set.summary().into_iter().map(|(k, (m, s))| (k, json!({"mean": m, "std": s}))).collect::<BTreeMap<_, _>>(),
        })
    };
    json!({
        "best": {
            "genome": outcome.best_genome,
            "fitness": outcome.best_fitness,
            "gen": outcome.best_gen,
            "idx": outcome.best_idx,
        },
        "generations": outcome.summaries,
        "verification": verification.map(|r| json!({
            "baseline": side(&r.baseline),
            "candidate": side(&r.candidate),
            "welch": r.welch,
        })),
    })
}

fn write_fitness_curve(dir: &Path, outcome: &EvolutionOutcome) -> CmdResult {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let rows: Vec<Vec<f64>> = outcome
        .summaries
        .iter()
        .map(|s| vec![s.gen as f64, opt(s.best), opt(s.mean), opt(s.best_ever), s.failed as f64, s.retried as f64])
        .collect();
    write_output(dir, "fitness.csv", &csv(&["gen", "best", "mean", "best_ever", "failed", "retried"], &rows))?;
    let col = |i: usize| rows.iter().map(|r| (r[0], r[i])).collect::<Vec<_>>();
    let svg = line_chart(
        "Composite fitness per generation",
        "generation",
        "fitness",
        &[
            Series { label: "best", points: col(1) },
            Series { label: "mean", points: col(2) },
            Series { label: "best ever", points: col(3) },
        ],
    );
    write_output(dir, "fitness.svg", &svg)?;
    Ok(())
}

pub fn train(args: &ConfigArgs, choice: &LossChoice, steps: Option<usize>) -> CmdResult {
    let cfg = load_config(Some(&args.config), &args.overrides)?;
    let mut exp = cfg.build().map_err(usage)?;
    // a single run is reported as is
    exp.budget.failure_floor = None;
    let who = contender(choice, &cfg)?;
    let (loss, hyper) = who.resolve(&exp).map_err(usage)?;
    let steps = steps.unwrap_or(exp.budget.full_steps);
    if steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let seed = derive_seed(cfg.seed, &[STREAM_TRAIN]);
    eprintln!("training `{}` for {steps} steps (seed {seed})", loss.name);
    let scored = exp
        .train_and_score(&loss, &hyper, steps, seed, None)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("training failed: {e}")))?;

    let dir = &cfg.output_dir;
    write_output(
        dir,
        "checkpoint.json",
        &pretty(&json!({
            "loss": loss,
            "hyper": hyper,
            "steps": steps,
            "seed": seed,
            "generator": scored.trained.generator,
            "discriminator": scored.trained.discriminator,
        })),
    )?;
    write_output(dir, "metrics.json", &pretty(&json!({"fitness": scored.fitness, "metrics": scored.metrics})))?;
    let generated: Vec<(f64, f64)> = (0..scored.samples.rows()).map(|r| (scored.samples.get(r, 0), scored.samples.get(r, 1))).collect();
    let rows: Vec<Vec<f64>> = generated.iter().map(|&(x, y)| vec![x, y]).collect();
    write_output(dir, "samples.csv", &csv(&["x", "y"], &rows))?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (target, _) = exp.data.mixture.sample(generated.len().min(2000), &mut rng);
    let target: Vec<(f64, f64)> = (0..target.rows()).map(|r| (target.get(r, 0), target.get(r, 1))).collect();
    let title = format!("{} after {steps} steps", loss.name);
    write_output(
        dir,
        "samples.svg",
        &scatter(&title, &[Series { label: "target", points: target }, Series { label: "generated", points: generated }]),
    )?;
    if !scored.trained.log.is_empty() {
        let rows: Vec<Vec<f64>> =
            scored.trained.log.iter().map(|p| vec![p.step as f64, p.d_loss, p.g_loss]).collect();
        write_output(dir, "losses.csv", &csv(&["step", "d_loss", "g_loss"], &rows))?;
    }
    println!("fitness {:.6}", scored.fitness);
    for (name, v) in scored.metrics.entries() {
        println!("{name:18} {}", v.score.map_or("failed".to_string(), |s| format!("{s:.6}")));
    }
    Ok(())
}

/// Run sets read from one input file.
fn load_run_sets(path: &Path) -> Result<Vec<RunSet>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read `{}`: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<VerifyReport>(&text) {
        return Ok(vec![report.baseline, report.candidate]);
    }
    if let Ok(set) = serde_json::from_str::<RunSet>(&text) {
        return Ok(vec![set]);
    }
    let lines = read_journal(path).map_err(|e| usage(format!("cannot read `{}`: {e}", path.display())))?;
    if lines.is_empty() {
        return Err(usage(format!("`{}` is not a run set, report or journal", path.display())));
    }
    // final successful attempt of every candidate
    let mut finals: BTreeMap<(usize, usize), RunResult> = BTreeMap::new();
    for line in lines {
        if let JournalLine::Candidate(r) = line {
            if r.status != Status::Failed {
                finals.insert((r.gen, r.idx), RunResult { seed: r.seed, status: r.status, metrics: r.metrics, fitness: r.fitness });
            }
        }
    }
    let label = path.file_stem().map_or("journal".into(), |s| s.to_string_lossy().into_owned());
    Ok(vec![RunSet { label, runs: finals.into_values().collect() }])
}

pub fn compare(inputs: &[PathBuf], labels: Option<Vec<String>>) -> CmdResult {
    let mut sets = Vec::new();
    for p in inputs {
        sets.extend(load_run_sets(p)?);
    }
    if sets.len() != 2 {
        return Err(usage(format!("need exactly two run sets, found {}", sets.len())));
    }
    let mut b = sets.pop().expect("two sets");
    let mut a = sets.pop().expect("two sets");
    if let Some(l) = labels {
        a.label = l[0].clone();
        b.label = l[1].clone();
    }
    print_comparison(&a, &b)
}

/// Print per-metric statistics; p-values test whether `b` is better.
fn print_comparison(a: &RunSet, b: &RunSet) -> CmdResult {
    for set in [a, b] {
        if set.fitness().len() < 2 {
            return Err(usage(format!(
                "run set `{}` has {} successful runs; at least 2 per side are needed",
                set.label,
                set.fitness().len()
            )));
        }
    }
    let mut names = vec!["fitness".to_string()];
    names.extend(a.metric_names().into_iter().filter(|n| b.metric_names().contains(n)));
    let values = |set: &RunSet, name: &str| if name == "fitness" { set.fitness() } else { set.metric(name) };
    let cell = |v: &[f64]| {
        if v.is_empty() {
            "-".to_string()
        } else {
            format!("{:.4} ± {:.4} (n={})", mean(v), std_dev(v), v.len())
        }
    };
    println!("{:18} {:>30} {:>30} {:>10}", "metric", a.label, b.label, "p");
    for name in &names {
        let (va, vb) = (values(a, name), values(b, name));
        let higher = name == "fitness" || direction_of(name) == Direction::HigherBetter;
        let test = if higher { welch_t(&va, &vb) } else { welch_t(&vb, &va) };
        let p = test.map_or("-".to_string(), |w| format!("{:.4}", w.p));
        println!("{name:18} {:>30} {:>30} {p:>10}", cell(&va), cell(&vb));
    }
    println!("(one-tailed Welch test that `{}` is better than `{}`)", b.label, a.label);
    Ok(())
}

fn curve_loss(choice: &LossChoice, cfg: &ExperimentConfig) -> Result<TripartiteLoss, Failure> {
    let Some(path) = &choice.genome else {
        let name = choice.preset.clone().unwrap_or_else(|| cfg.preset.clone());
        return by_name(&name, None).map_err(usage);
    };
    let genome = read_genome(path)?;
    if genome.len() == TAYLOR_GENES {
        return from_genome(&genome).map_err(usage);
    }
    let exp = cfg.build().map_err(usage)?;
    Ok(Contender::Genome(genome).resolve(&exp).map_err(usage)?.0)
}

fn default_range(loss: &TripartiteLoss) -> (f64, f64) {
    let centers: Vec<f64> = [loss.d_real, loss.d_fake, loss.g_fake]
        .iter()
        .filter_map(|c| match c {
            ScalarLoss::Cubic(c) => Some(c.to_array()[0]),
            _ => None,
        })
        .collect();
    if centers.len() == 3 {
        let lo = centers.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo - 3.0, hi + 3.0)
    } else {
        (-5.0, 5.0)
    }
}

fn check_name(name: &str) -> CmdResult {
    let ok = !name.is_empty() && Path::new(name).components().count() == 1 && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(usage(format!("`{name}` must be a plain file name")))
    }
}

pub fn losscurve(
    args: &OptionalConfigArgs,
    choice: &LossChoice,
    from: Option<f64>,
    to: Option<f64>,
    points: usize,
    name: &str,
) -> CmdResult {
    check_name(name)?;
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let loss = curve_loss(choice, &cfg)?;
    let (lo, hi) = default_range(&loss);
    let (lo, hi) = (from.unwrap_or(lo), to.unwrap_or(hi));
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(usage(format!("empty score range [{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let roles = [Role::DiscriminatorReal, Role::DiscriminatorFake, Role::GeneratorFake];
    let rows: Vec<Vec<f64>> = (0..points)
        .map(|i| {
            let s = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let mut row = vec![s];
            row.extend(roles.iter().map(|&r| loss.value_at_score(r, s)));
            row.extend(roles.iter().map(|&r| loss.grad_at_score(r, s)));
            row
        })
        .collect();
    let header = ["score", "d_real", "d_fake", "g_fake", "d_real_grad", "d_fake_grad", "g_fake_grad"];
    let dir = &cfg.output_dir;
    write_output(dir, &format!("{name}.csv"), &csv(&header, &rows))?;
    let panel = |offset: usize, what: &str| {
        let series: Vec<Series> = (0..3)
            .map(|k| Series { label: header[offset + k], points: rows.iter().map(|r| (r[0], r[offset + k])).collect() })
            .collect();
        line_chart(&format!("{} loss {what}", loss.name), "discriminator score", what, &series)
    };
    write_output(dir, &format!("{name}.svg"), &panel(1, "values"))?;
    write_output(dir, &format!("{name}-grad.svg"), &panel(4, "derivatives"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn bench_search(
    args: &OptionalConfigArgs,
    algorithm: &str,
    function: &str,
    dim: usize,
    generations: usize,
    seed: u64,
    start: f64,
    sigma0: Option<f64>,
) -> CmdResult {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let algorithm: Algorithm = algorithm.parse().map_err(usage)?;
    let bench: Benchmark = function.parse().map_err(usage)?;
    if generations == 0 {
        return Err(usage("--generations must be positive"));
    }
    let space = SearchSpace::cube(dim, -10.0, 10.0)
        .and_then(|s| s.with_initial(vec![start; dim]))
        .map_err(usage)?;
    let mut search =
        SearchConfig { algorithm, cmaes: cfg.search.cmaes.clone(), ga: cfg.search.ga.clone() };
    if let Some(s) = sigma0 {
        search.cmaes.sigma0 = s;
    }
    let mut opt = search.build(space, seed).map_err(usage)?;
    let trace = run_benchmark(opt.as_mut(), bench, generations).map_err(|e| Failure::Runtime(e.into()))?;
    let (x, f) = opt.best().map_err(|e| Failure::Runtime(e.into()))?;
    let step = (generations / 10).max(1);
    for (g, best) in trace.best.iter().enumerate() {
        if (g + 1) % step == 0 || g + 1 == generations {
            println!("generation {:5}  best {:.6e}", g + 1, -best);
        }
    }
    println!(
        "{} on {} (d = {dim}): f = {:.6e} after {} evaluations, ‖x‖ = {:.3e}",
        opt.name(),
        bench.name(),
        -f,
        trace.evaluations,
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    );
    let rows: Vec<Vec<f64>> = trace.best.iter().enumerate().map(|(g, b)| vec![(g + 1) as f64, -b]).collect();
    let stem = format!("bench-{}-{}", bench.name(), opt.name());
    write_output(&cfg.output_dir, &format!("{stem}.csv"), &csv(&["generation", "objective"], &rows))?;
    let log_points = rows.iter().map(|r| (r[0], r[1].max(1e-300).log10())).collect();
    write_output(
        &cfg.output_dir,
        &format!("{stem}.svg"),
        &line_chart(&stem, "generation", "log10 objective", &[Series { label: bench.name(), points: log_points }]),
    )?;
    Ok(())
}
