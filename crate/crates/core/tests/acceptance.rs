//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line for each. The full-scale evolution run is skipped unless
//! `TAYLORGAN_ACCEPTANCE_FULL=1` is set.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use taylorgan::config::ExperimentConfig;
use taylorgan::data::MixtureSpec;
use taylorgan::evolution::{
    read_journal, run_evolution, verify_best, Contender, EvolutionOutcome, Experiment, Journal,
};
use taylorgan::formulation::{
    by_name, gradient_penalty, lsgan, minimax, non_saturating, wasserstein, GradientPenaltyConfig, LsganLabels,
    Role, ScalarLoss,
};
use taylorgan::metrics::{
    composite, js_divergence, ssim, welch_t, CompositeSpec, Direction, GrayImage, MetricReport, SsimParams,
    MODES_COVERED,
};
use taylorgan::nn::{Activation, Matrix, Mlp};
use taylorgan::search::{run_benchmark, Benchmark, CmaEs, CmaEsParams, Ga, GaParams, Optimizer, SearchSpace};
use taylorgan::taylor::{param_count, MultiIndex, TaylorLossSpec, UnivariateCubicLoss};

const FULL_ENV: &str = "TAYLORGAN_ACCEPTANCE_FULL";

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Check {
    ensure!(param_count(2, 3) == Ok(12), "param_count(2, 3) = {:?}", param_count(2, 3));
    let full = TaylorLossSpec::zeros(2, 3, vec![0.0, 0.0]).map_err(|e| e.to_string())?;
    let trimmed = full.trim(0).map_err(|e| e.to_string())?;
    ensure!(full.param_count() == 12, "full spec has {} parameters", full.param_count());
    ensure!(trimmed.param_count() == 8, "trimmed spec has {} parameters", trimmed.param_count());
    let mut checked = 0;
    for n in 1..=4usize {
        for k in 0..=5usize {
            // brute force: every exponent vector in [0, k]^n with |α| ≤ k
            let mut count = 0usize;
            let mut e = vec![0usize; n];
            loop {
                if e.iter().sum::<usize>() <= k {
                    count += 1;
                }
                let mut i = 0;
                while i < n {
                    e[i] += 1;
                    if e[i] <= k {
                        break;
                    }
                    e[i] = 0;
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
            let expected = n + count;
            ensure!(param_count(n, k) == Ok(expected), "param_count({n}, {k}) = {:?}, want {expected}", param_count(n, k));
            ensure!(MultiIndex::enumerate(n, k).len() == count, "enumerate({n}, {k}) length");
            checked += 1;
        }
    }
    Ok(format!("12 → 8 after trimming; {checked} (n, k) pairs match enumeration"))
}

// ---------------------------------------------------------------- criterion 2

const REL_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 120;
    let mut worst = [0.0f64; 3];

    // Taylor losses in 1 to 3 variables, orders 1 to 4, plus the cubic form
    for case in 0..cases {
        let arity = rng.random_range(1..=3usize);
        let order = rng.random_range(1..=4usize);
        let center: Vec<f64> = (0..arity).map(|_| rng.random_range(-2.0..2.0)).collect();
        let count = param_count(arity, order).unwrap() - arity;
        let coef: Vec<f64> = (0..count).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spec = TaylorLossSpec::new(arity, order, center, coef).map_err(|e| e.to_string())?;
        let spec = if case % 2 == 0 { spec.trim(rng.random_range(0..arity)).unwrap() } else { spec };
        let point: Vec<f64> = (0..arity).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grad = spec.gradient(&point).map_err(|e| e.to_string())?;
        for j in 0..arity {
            let f = |x: f64| {
                let mut p = point.clone();
                p[j] = x;
                spec.evaluate(&p).unwrap()
            };
            let e = rel_err(grad[j], central(f, point[j]));
            worst[0] = worst[0].max(e);
        }
        let cubic = UnivariateCubicLoss::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        let u = rng.random_range(-5.0..5.0);
        worst[0] = worst[0].max(rel_err(cubic.derivative(u), central(|x| cubic.value(x), u)));
    }

    // MLP parameter and input gradients of Σ v · output
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::LeakyRelu };
        let depth = rng.random_range(0..=2usize);
        let mut sizes = vec![rng.random_range(1..=4usize)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=6usize));
        }
        let out = rng.random_range(1..=3usize);
        sizes.push(out);
        let mut net = Mlp::new(&sizes, act, &mut rng).map_err(|e| e.to_string())?;
        let mut p = net.params();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        net.set_params(&p).unwrap();
        let rows = rng.random_range(1..=4usize);
        let x = Matrix::from_vec(rows, sizes[0], (0..rows * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect());
        let v = Matrix::from_vec(rows, out, (0..rows * out).map(|_| rng.random_range(-1.0..1.0)).collect());
        let objective = |net: &Mlp, x: &Matrix| -> f64 {
            let y = net.predict(x).unwrap();
            y.data().iter().zip(v.data()).map(|(a, b)| a * b).sum()
        };
        let tape = net.forward(&x).map_err(|e| e.to_string())?;
        let (grads, dx) = net.backward(&tape, &v).map_err(|e| e.to_string())?;
        let analytic = grads.flatten();
        for i in 0..p.len() {
            let f = |t: f64| {
                let mut q = p.clone();
                q[i] = t;
                let mut n2 = net.clone();
                n2.set_params(&q).unwrap();
                objective(&n2, &x)
            };
            worst[1] = worst[1].max(rel_err(analytic[i], central(f, p[i])));
        }
        for i in 0..x.data().len() {
            let f = |t: f64| {
                let mut x2 = x.clone();
                x2.data_mut()[i] = t;
                objective(&net, &x2)
            };
            worst[2] = worst[2].max(rel_err(dx.data()[i], central(f, x.data()[i])));
        }
    }
    let names = ["taylor", "mlp params", "mlp inputs"];
    for (name, w) in names.iter().zip(worst) {
        ensure!(w < REL_TOL, "{name}: worst relative error {w:.2e}");
    }
    Ok(format!(
        "{cases} cases each; worst relative errors {:.1e} / {:.1e} / {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Check {
    let close = |a: f64, b: f64, what: &str| -> Result<(), String> {
        if (a - b).abs() <= 1e-12 * b.abs().max(1.0) {
            Ok(())
        } else {
            Err(format!("{what}: {a} vs {b}"))
        }
    };
    let probs: Vec<f64> = (0..25).map(|i| 0.02 + 0.96 * i as f64 / 24.0).collect();
    let scores: Vec<f64> = (0..25).map(|i| -3.0 + 6.0 * i as f64 / 24.0).collect();

    type Forms = [fn(f64) -> f64; 3];
    let log_forms: [(&str, Forms); 2] = [
        ("minimax", [|p| -p.ln(), |p| -(1.0 - p).ln(), |p| (1.0 - p).ln()]),
        ("non-saturating", [|p| -p.ln(), |p| -(1.0 - p).ln(), |p| -p.ln()]),
    ];
    let roles = [Role::DiscriminatorReal, Role::DiscriminatorFake, Role::GeneratorFake];
    for (name, forms) in log_forms {
        let loss = by_name(name, None).map_err(|e| e.to_string())?;
        for (role, form) in roles.iter().zip(forms) {
            for &p in &probs {
                close(loss.component(*role).value(p), form(p), name)?;
            }
            for &s in &scores {
                let p = 1.0 / (1.0 + (-s).exp());
                close(loss.value_at_score(*role, s), form(p), name)?;
            }
        }
    }
    let raw_forms: [(&str, Forms); 2] = [
        ("wgan", [|d| -d, |d| d, |d| -d]),
        ("lsgan", [|d| 0.5 * (d - 1.0) * (d - 1.0), |d| 0.5 * d * d, |d| 0.5 * (d - 1.0) * (d - 1.0)]),
    ];
    for (name, forms) in raw_forms {
        let loss = by_name(name, None).map_err(|e| e.to_string())?;
        for (role, form) in roles.iter().zip(forms) {
            for &d in &scores {
                close(loss.value_at_score(*role, d), form(d), name)?;
            }
        }
    }
    ensure!(wasserstein() == by_name("wgan", None).unwrap(), "wgan preset");
    ensure!(lsgan(LsganLabels::default()) == by_name("lsgan", None).unwrap(), "lsgan preset");
    let _ = non_saturating();

    let mm = minimax();
    for &p in &probs {
        close(mm.component(Role::GeneratorFake).value(p), -mm.component(Role::DiscriminatorFake).value(p), "minimax identity")?;
    }
    ensure!(matches!(mm.g_fake, ScalarLoss::LogComplement), "minimax generator component");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GradientPenaltyConfig::new(10.0).map_err(|e| e.to_string())?;
    let reals = Matrix::from_vec(64, 2, (0..128).map(|_| rng.random_range(-2.0..2.0)).collect());
    let fakes = Matrix::from_vec(64, 2, (0..128).map(|_| rng.random_range(-2.0..2.0)).collect());
    let mut d = Mlp::zeros(&[2, 1], Activation::LeakyRelu).map_err(|e| e.to_string())?;
    d.set_params(&[0.6, 0.8, 0.3]).unwrap();
    let unit = gradient_penalty(&d, &reals, &fakes, &cfg, &mut rng).map_err(|e| e.to_string())?;
    d.set_params(&[1.2, 1.6, -0.7]).unwrap();
    let slope2 = gradient_penalty(&d, &reals, &fakes, &cfg, &mut rng).map_err(|e| e.to_string())?;
    ensure!(unit.abs() <= 1e-12, "unit-gradient penalty {unit}");
    close(slope2, 10.0, "slope-2 penalty")?;
    Ok(format!("4 presets × 3 components × 25 points; GP {unit:.1e} and {slope2}"))
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Check {
    let loss = by_name("taylor-facades-preset", None).map_err(|e| e.to_string())?;
    let centers = [
        (Role::DiscriminatorReal, 8.3399),
        (Role::DiscriminatorFake, 8.6177),
        (Role::GeneratorFake, 5.2232),
    ];
    for (role, c) in centers {
        let v = loss.value_at_score(role, c);
        ensure!(v.abs() <= 1e-12, "{role:?} at its center = {v}");
    }
    // first plus second plus third-order coefficient of the real-data loss
    let expected = 5.6484 + 9.4935 + 8.2695;
    let v = loss.value_at_score(Role::DiscriminatorReal, 8.3399 + 1.0);
    ensure!((v - 23.4114).abs() < 1e-9 && (v - expected).abs() < 1e-9, "d_real(center + 1) = {v}");
    Ok(format!("zero at all three centers; d_real(9.3399) = {v:.4}"))
}

// ---------------------------------------------------------------- criterion 5

fn cmaes_run(bench: Benchmark, d: usize, start: f64, sigma0: f64, seed: u64, gens: usize) -> (Vec<f64>, f64) {
    let space = SearchSpace::cube(d, -10.0, 10.0).unwrap().with_initial(vec![start; d]).unwrap();
    let params = CmaEsParams { sigma0, ..CmaEsParams::default() };
    let mut opt = CmaEs::new(space, params, seed).unwrap();
    run_benchmark(&mut opt, bench, gens).unwrap();
    opt.best().unwrap()
}

fn criterion_5() -> Check {
    let (x, f) = cmaes_run(Benchmark::Sphere, 12, 5.0, 2.0, 1, 300);
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    ensure!(norm2 < 1e-8, "sphere ‖x‖² = {norm2:.3e}");
    let (x2, f2) = cmaes_run(Benchmark::Sphere, 12, 5.0, 2.0, 1, 300);
    ensure!(f.to_bits() == f2.to_bits() && x == x2, "sphere run is not deterministic");

    let mut worst_rosen = f64::NEG_INFINITY;
    for seed in 1..=3 {
        let (_, f) = cmaes_run(Benchmark::Rosenbrock, 5, 0.0, 0.5, seed, 2000);
        let (_, again) = cmaes_run(Benchmark::Rosenbrock, 5, 0.0, 0.5, seed, 2000);
        ensure!(f.to_bits() == again.to_bits(), "rosenbrock seed {seed} is not deterministic");
        ensure!(-f < 1e-6, "rosenbrock seed {seed}: {:.3e}", -f);
        worst_rosen = worst_rosen.max(-f);
    }

    let space = SearchSpace::cube(12, -10.0, 10.0).unwrap().with_initial(vec![5.0; 12]).unwrap();
    let mut ga = Ga::new(space, GaParams::default(), 1).unwrap();
    let trace = run_benchmark(&mut ga, Benchmark::Sphere, 200).unwrap();
    let (first, last) = (-trace.best[0], -trace.best[trace.best.len() - 1]);
    ensure!(first / last >= 1e4, "GA improved sphere by only {:.2e}×", first / last);
    Ok(format!(
        "sphere ‖x‖² = {norm2:.1e}; rosenbrock worst {worst_rosen:.1e}; GA {first:.2e} → {last:.2e}"
    ))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = GrayImage::new(32, 32, (0..1024).map(|_| rng.random::<f64>()).collect()).map_err(|e| e.to_string())?;
    let s = ssim(&img, &img, &SsimParams::default()).map_err(|e| e.to_string())?;
    ensure!(s == 1.0, "ssim(a, a) = {s}");

    let mut worst_js = 0.0f64;
    for spec in [MixtureSpec::ring(8, 2.0, 0.02).unwrap(), MixtureSpec::grid(5, 2.0, 0.05).unwrap()] {
        let (x, _) = spec.sample(100_000, &mut rng);
        let js = js_divergence(&spec, &x, 64, 1e-9).map_err(|e| e.to_string())?;
        worst_js = worst_js.max(js);
    }
    ensure!(worst_js < 0.02, "self-sample JS {worst_js}");

    // p-values of null comparisons should be uniform
    let trials = 1000;
    let mut ps: Vec<f64> = (0..trials)
        .map(|_| {
            let mut draw = || (0..10).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            welch_t(&draw(), &draw()).unwrap().p
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / trials as f64 - p).max(p - i as f64 / trials as f64))
        .fold(0.0, f64::max);
    let critical = 1.628 / (trials as f64).sqrt();
    ensure!(ks < critical, "KS statistic {ks:.4} ≥ {critical:.4}");

    let mut report = MetricReport::new();
    report.insert("ssim", 0.6, Direction::HigherBetter);
    report.insert("feature_distance", 10.0, Direction::LowerBetter);
    let spec = CompositeSpec::from_pairs(&[("ssim", 17.0), ("feature_distance", -1.0)]).unwrap();
    let c = composite(&report, &spec).map_err(|e| e.to_string())?;
    ensure!((c - 0.2).abs() < 1e-12, "composite = {c}");
    Ok(format!("ssim 1; self JS {worst_js:.4}; KS {ks:.4} < {critical:.4}; composite {c:.1}"))
}

// ------------------------------------------------------------ criteria 7 and 8

const SMOKE: &str = r#"
seed = 2024
workers = 1

[data.mixture]
kind = "ring"
modes = 8
radius = 2.0
sigma = 0.02

[search]
algorithm = "cmaes"
generations = 4

[search.cmaes]
lambda = 8

[budget]
eval_steps = 500
full_steps = 20000
batch = 256
eval_samples = 5000
"#;

fn smoke_experiment(workers: usize) -> Experiment {
    let cfg = ExperimentConfig::parse(SMOKE, &[format!("workers={workers}")]).expect("smoke config");
    cfg.build().expect("smoke experiment")
}

fn evolve_to(exp: &Experiment, path: &Path) -> Result<EvolutionOutcome, String> {
    let mut journal = Journal::create(path).map_err(|e| e.to_string())?;
    run_evolution(exp, &mut journal, |_| {}).map_err(|e| e.to_string())
}

fn criterion_7_smoke(dir: &Path) -> Check {
    let start = Instant::now();
    let exp = smoke_experiment(1);
    let out = evolve_to(&exp, &dir.join("smoke-1.ndjson"))?;
    let elapsed = start.elapsed();
    let trace = out.best_ever_trace();
    ensure!(out.summaries.len() == 5, "{} generations ran", out.summaries.len());
    ensure!(trace.windows(2).all(|w| w[1] >= w[0]), "best-ever trace not monotone: {trace:?}");
    ensure!(elapsed < Duration::from_secs(600), "smoke profile took {elapsed:?}");
    let records = read_journal(&dir.join("smoke-1.ndjson")).map_err(|e| e.to_string())?.len();
    Ok(format!(
        "5 generations × 8 in {:.0} s, {records} journal lines, best-ever {:.4} → {:.4}",
        elapsed.as_secs_f64(),
        trace[0],
        trace[trace.len() - 1]
    ))
}

fn criterion_8(dir: &Path) -> Check {
    let reference = dir.join("smoke-1.ndjson");
    if !reference.exists() {
        evolve_to(&smoke_experiment(1), &reference)?;
    }
    let parallel = dir.join("smoke-4.ndjson");
    evolve_to(&smoke_experiment(4), &parallel)?;
    let a = std::fs::read(&reference).map_err(|e| e.to_string())?;
    let b = std::fs::read(&parallel).map_err(|e| e.to_string())?;
    ensure!(!a.is_empty() && a == b, "journals differ ({} vs {} bytes)", a.len(), b.len());
    Ok(format!("1 and 4 workers give identical {}-byte journals", a.len()))
}

const FULL: &str = r#"
seed = 7
workers = 0

[data.mixture]
kind = "ring"
modes = 8
radius = 2.0
sigma = 0.02

[search]
algorithm = "cmaes"
generations = 29

[search.cmaes]
lambda = 20

[budget]
eval_steps = 2000
full_steps = 20000
batch = 256
eval_samples = 5000

[verify]
seeds = 10
baseline = "non-saturating"
"#;

fn criterion_7_full(dir: &Path) -> Check {
    let cfg = ExperimentConfig::parse(FULL, &[]).map_err(|e| e.to_string())?;
    let exp = cfg.build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = {
        let mut journal = Journal::create(&dir.join("full.ndjson")).map_err(|e| e.to_string())?;
        run_evolution(&exp, &mut journal, |s| {
            println!(
                "    gen {:2}: best {:>8} best-ever {:>8} failed {} ({:.0} s)",
                s.gen,
                s.best.map_or("-".into(), |v| format!("{v:.4}")),
                s.best_ever.map_or("-".into(), |v| format!("{v:.4}")),
                s.failed,
                start.elapsed().as_secs_f64()
            )
        })
        .map_err(|e| e.to_string())?
    };
    println!("    best genome {:?} (gen {}, fitness {:.4})", out.best_genome, out.best_gen, out.best_fitness);
    let report = verify_best(
        &exp,
        &Contender::Genome(out.best_genome.clone()),
        &Contender::Preset(cfg.verify.baseline.clone()),
        cfg.verify.seeds,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(dir.join("full-verify.json"), serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| e.to_string())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (b_fit, c_fit) = (mean(&report.baseline.fitness()), mean(&report.candidate.fitness()));
    let (b_modes, c_modes) =
        (mean(&report.baseline.metric(MODES_COVERED)), mean(&report.candidate.metric(MODES_COVERED)));
    let detail = format!(
        "fitness {c_fit:.4} vs {b_fit:.4}, modes {c_modes:.1} vs {b_modes:.1}, p = {:.4} ({:.0} s)",
        report.welch.p,
        start.elapsed().as_secs_f64()
    );
    ensure!(report.welch.p < 0.05, "not significant: {detail}");
    ensure!(c_modes >= b_modes, "fewer modes: {detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------- main

fn run(label: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {label} [{secs:.1} s]: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {label} [{secs:.1} s]: {why}");
            false
        }
    }
}

fn main() {
    // cargo passes harness flags such as --nocapture or a name filter; a
    // list request must not run anything
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    let _ = std::fs::remove_file(dir.join("smoke-1.ndjson"));

    let mut ok = true;
    ok &= run("criterion 1 (parameter counting)", criterion_1);
    ok &= run("criterion 2 (analytic gradients)", criterion_2);
    ok &= run("criterion 3 (formulation table)", criterion_3);
    ok &= run("criterion 4 (evolved preset)", criterion_4);
    ok &= run("criterion 5 (optimizer regression)", criterion_5);
    ok &= run("criterion 6 (metric suite)", criterion_6);
    ok &= run("criterion 7 (smoke profile)", || criterion_7_smoke(&dir));
    if std::env::var(FULL_ENV).is_ok_and(|v| v == "1") {
        ok &= run("criterion 7 (full evolution)", || criterion_7_full(&dir));
    } else {
        println!("SKIP  criterion 7 (full evolution): set {FULL_ENV}=1 to run it");
    }
    ok &= run("criterion 8 (reproducibility)", || criterion_8(&dir));
    if !ok {
        std::process::exit(1);
    }
}
