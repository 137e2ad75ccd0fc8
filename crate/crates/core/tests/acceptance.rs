//! Release gate: nine end-to-end criteria, one PASS/FAIL line each.
//!
//! Criteria 5 to 7 share training runs: the estimated-eps arm at rate 0.4
//! serves both recovery and uplift, and the 0.5 runs give selection quality.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nlre::cli::{self, DataArgs, RunOutput, TrainArgs};
use nlre::datagen::{gen_gaussian_blobs, inject_noise, NoiseKind, NoiseSpec, NoisyDataset, NoisySamples};
use nlre::emtrain::BlockKind;
use nlre::gm::{
    clean_prob, elbo_grads, elbo_with_q, exact_posterior, marginal_loglik, mean_elbo, noisy_mixture, one_hot,
    sample_generative, GraphicalModel, HeadSupport,
};
use nlre::numkit::{
    backprop, finite_diff_grad, log_sigmoid, logsumexp, max_rel_error, sigmoid, softmax, softplus, MlpParams, Rng,
};
use nlre::select::{clean_count, constraint_loss_for, select_split, CriterionKind, CriterionScores};

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const RATES: [f64; 4] = [0.2, 0.3, 0.4, 0.5];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Verdict = Result<String, String>;

fn check(cond: bool, msg: String) -> Verdict {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within_budget(v: Verdict, t: Duration, budget: Duration) -> Verdict {
    let v = v?;
    check(t < budget, format!("{v}; {:.2}s (budget {}s)", t.as_secs_f64(), budget.as_secs()))
}

fn problem(n: usize, rng: &mut Rng) -> NoisyDataset {
    let clean = gen_gaussian_blobs(n, 3, 2, 2.0, rng).unwrap();
    inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, 0.3), rng).unwrap()
}

fn vecn(n: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

fn grad_oracle() -> Verdict {
    let mut rng = Rng::new(101);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| -> Result<(), String> {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
        if e > GRAD_TOL {
            Err(format!("{name}: rel err {e:.3e}"))
        } else {
            Ok(())
        }
    };
    for _ in 0..10 {
        // Scalar activations against their closed-form derivatives.
        let x = 4.0 * rng.normal();
        let fd = |f: fn(f64) -> f64| (f(x + H) - f(x - H)) / (2.0 * H);
        let s = sigmoid(x);
        note("sigmoid", max_rel_error(&[s * (1.0 - s)], &[fd(sigmoid)]))?;
        note("log_sigmoid", max_rel_error(&[1.0 - s], &[fd(log_sigmoid)]))?;
        note("softplus", max_rel_error(&[s], &[fd(softplus)]))?;

        let z = vecn(5, 2.0, &mut rng);
        let u = vecn(5, 1.0, &mut rng);
        let p = softmax(&z).unwrap();
        let pu: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
        let jvp: Vec<f64> = p.iter().zip(&u).map(|(pi, ui)| pi * (ui - pu)).collect();
        let num = finite_diff_grad(|z| softmax(z).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum(), &z, H).unwrap();
        note("softmax", max_rel_error(&jvp, &num))?;
        let num = finite_diff_grad(logsumexp, &z, H).unwrap();
        note("logsumexp", max_rel_error(&p, &num))?;

        // Network parameters and input.
        let net = MlpParams::init_he(&[3, 6, 4], &mut rng).unwrap();
        let x = vecn(3, 1.0, &mut rng);
        let up = vecn(4, 1.0, &mut rng);
        let (gp, gx) = backprop(&net, &x, &up).unwrap();
        let widths = net.widths().to_vec();
        let dot = |n: &MlpParams, x: &[f64]| n.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let num = finite_diff_grad(|p| dot(&MlpParams::from_flat(&widths, p.to_vec()).unwrap(), &x), net.as_slice(), H).unwrap();
        note("mlp params", max_rel_error(&gp, &num))?;
        let num = finite_diff_grad(|x| dot(&net, x), &x, H).unwrap();
        note("mlp input", max_rel_error(&gx, &num))?;

        // ELBO, every parameter group, both head variants.
        for support in [HeadSupport::Full, HeadSupport::ExcludeClean] {
            let data = problem(8, &mut rng);
            let model = GraphicalModel::init(2, 3, 5, support, &mut rng).unwrap();
            let idx: Vec<usize> = (0..data.len()).collect();
            let g = elbo_grads(&model, &data, &idx).unwrap().grads;
            let num = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.set_flat_params(p).unwrap();
                    mean_elbo(&m, &data, &idx).unwrap()
                },
                &model.flat_params(),
                H,
            )
            .unwrap();
            let nc = model.clean.net.len();
            let nn = model.noisy.net.len();
            note("elbo clean", max_rel_error(&g.clean, &num[..nc]))?;
            note("elbo noisy", max_rel_error(&g.noisy, &num[nc..nc + nn]))?;
            note("elbo eps-logit", max_rel_error(&[g.eps_logit], &num[nc + nn..nc + nn + 1]))?;
            note("elbo posterior", max_rel_error(&g.posterior, &num[nc + nn + 1..]))?;
        }

        // Constraint on a clean subset.
        let data = problem(10, &mut rng);
        let model = GraphicalModel::init(2, 3, 5, HeadSupport::ExcludeClean, &mut rng).unwrap();
        let idx: Vec<usize> = (0..data.len()).filter(|_| rng.uniform() < 0.6).collect();
        if idx.is_empty() {
            continue;
        }
        let (_, g) = constraint_loss_for(&model.clean, &data, &idx).unwrap();
        let widths = model.clean.net.widths().to_vec();
        let num = finite_diff_grad(
            |p| {
                let c = nlre::gm::CleanClassifier {
                    net: MlpParams::from_flat(&widths, p.to_vec()).unwrap(),
                };
                constraint_loss_for(&c, &data, &idx).unwrap().0
            },
            model.clean.net.as_slice(),
            H,
        )
        .unwrap();
        note("constraint", max_rel_error(&g, &num))?;
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    Ok(format!("{} operations x 10 draws, max rel err {max:.2e}", worst.len()))
}

fn elbo_identities() -> Verdict {
    let mut rng = Rng::new(202);
    let c = 4;
    let mut tight: f64 = 0.0;
    let mut slack = f64::INFINITY;
    for point in 0..100 {
        let support = if point % 2 == 0 { HeadSupport::Full } else { HeadSupport::ExcludeClean };
        let model = GraphicalModel::init(3, c, 8, support, &mut rng).unwrap();
        let x = vecn(3, 2.0, &mut rng);
        let yh = rng.below(c);
        let ll = marginal_loglik(&model.clean, &model.noisy, model.rate, &x, yh).unwrap();
        let q = exact_posterior(&model.clean, &model.noisy, model.rate, &x, yh).unwrap();
        let at_exact = elbo_with_q(&model.clean, &model.noisy, model.rate, &q, &x, yh).unwrap();
        tight = tight.max((at_exact - ll).abs());
        if (at_exact - ll).abs() > 1e-9 {
            return Err(format!("point {point}: ELBO(q*) - log p = {:.3e}", at_exact - ll));
        }
        for _ in 0..100 {
            let q = softmax(&vecn(c, 3.0, &mut rng)).unwrap();
            let b = elbo_with_q(&model.clean, &model.noisy, model.rate, &q, &x, yh).unwrap();
            if b > ll + 1e-9 {
                return Err(format!("point {point}: ELBO {b} above log p {ll}"));
            }
            slack = slack.min(ll - b);
        }
    }
    Ok(format!("|ELBO(q*) - log p| <= {tight:.1e}; min gap over 10^4 random q {slack:.1e}"))
}

fn generative_consistency() -> Verdict {
    let mut rng = Rng::new(303);
    let data = problem(300, &mut rng);
    let model = GraphicalModel::init(2, 3, 8, HeadSupport::Full, &mut rng).unwrap();
    let eps = model.eps();
    let mut analytic = 0.0;
    for i in 0..data.len() {
        let p = clean_prob(&model.clean, data.x(i)).unwrap();
        for (y, py) in p.iter().enumerate() {
            // eps = 1 isolates the noisy head's own distribution.
            let g = noisy_mixture(&model.noisy, 1.0, data.x(i), &one_hot(y, 3)).unwrap();
            analytic += py * (1.0 - g[y]);
        }
    }
    analytic *= eps / data.len() as f64;
    let draws = 100_000;
    let mut flips = 0;
    for _ in 0..draws {
        let (y, yh) = sample_generative(&model, data.x(rng.below(data.len())), &mut rng).unwrap();
        flips += (y != yh) as usize;
    }
    let freq = flips as f64 / draws as f64;
    let sigma = (analytic * (1.0 - analytic) / draws as f64).sqrt();
    let z = (freq - analytic) / sigma;
    check(z.abs() <= 3.0, format!("MC {freq:.5} vs analytic {analytic:.5}, z = {z:+.2}"))
}

fn selection_laws() -> Verdict {
    let mut rng = Rng::new(404);
    for inst in 0..1000 {
        let n = 1 + rng.below(500);
        // Mix of continuous and heavily tied scores.
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.3 { rng.below(3) as f64 } else { rng.normal() })
            .collect();
        let cs = CriterionScores {
            scores: scores.clone(),
            kind: CriterionKind::SmallLoss,
        };
        let eps = rng.uniform();
        let split = select_split(&cs, 1.0 - eps);
        let expect = ((1.0 - eps) * n as f64).floor() as usize;
        if split.clean().len() != expect || expect != clean_count(1.0 - eps, n) {
            return Err(format!("instance {inst}: |clean| {} != floor((1-eps)N) {expect}", split.clean().len()));
        }
        let (a, b) = (rng.uniform(), rng.uniform());
        let small = select_split(&cs, a.min(b)).clean_mask();
        let large = select_split(&cs, a.max(b)).clean_mask();
        if small.iter().zip(&large).any(|(&s, &l)| s && !l) {
            return Err(format!("instance {inst}: not nested"));
        }
        let shift = rng.normal();
        let mapped = CriterionScores {
            scores: scores.iter().map(|s| (s + shift).atan() * 5.0 + s.powi(3)).collect(),
            kind: CriterionKind::SmallLoss,
        };
        if select_split(&mapped, 1.0 - eps).clean() != split.clean() {
            return Err(format!("instance {inst}: changed under a strictly increasing transform"));
        }
    }
    Ok("1000 random instances: cardinality, nestedness, transform invariance".into())
}

struct Arms {
    estimated: BTreeMap<(u64, u64), RunOutput>,
    no_eps: Vec<RunOutput>,
    fixed: Vec<RunOutput>,
    slowest: Duration,
}

fn rate_key(r: f64) -> u64 {
    (r * 100.0).round() as u64
}

fn train_run(root: &Path, name: &str, rate: f64, seed: u64, edit: impl FnOnce(&mut TrainArgs)) -> (RunOutput, Duration) {
    let mut args = TrainArgs {
        data: DataArgs {
            kind: Some("idn".into()),
            rate: Some(rate),
            n: Some(5000),
            c: Some(4),
            d: Some(2),
            ..DataArgs::default()
        },
        test_fraction: Some(0.2),
        epochs: Some(100),
        seed: Some(seed),
        ..TrainArgs::default()
    };
    edit(&mut args);
    let cfg = args.resolve(root.join(format!("{name}_{rate}_{seed}")), false).unwrap();
    let t = Instant::now();
    let out = cli::run_experiment(&cfg).unwrap_or_else(|e| panic!("{name} rate {rate} seed {seed}: {e}"));
    assert_eq!(out.result.records.len(), 100);
    (out, t.elapsed())
}

fn run_arms(root: &Path) -> Arms {
    let mut arms = Arms {
        estimated: BTreeMap::new(),
        no_eps: Vec::new(),
        fixed: Vec::new(),
        slowest: Duration::ZERO,
    };
    for rate in RATES {
        for seed in SEEDS {
            let (out, t) = train_run(root, "est", rate, seed, |_| {});
            arms.slowest = arms.slowest.max(t);
            arms.estimated.insert((rate_key(rate), seed), out);
        }
    }
    for seed in SEEDS {
        let (out, _) = train_run(root, "noeps", 0.4, seed, |a| a.no_epsilon = Some(true));
        arms.no_eps.push(out);
        let realized = arms.estimated[&(40, seed)].realized_rate;
        let (out, _) = train_run(root, "fixed", 0.4, seed, |a| a.fixed_eps = Some(realized));
        arms.fixed.push(out);
    }
    arms
}

fn last(o: &RunOutput) -> &nlre::evalkit::EpochRecord {
    o.result.records.last().unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn noise_rate_recovery(arms: &Arms) -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut prev = f64::NEG_INFINITY;
    for rate in RATES {
        let runs: Vec<&RunOutput> = SEEDS.iter().map(|s| &arms.estimated[&(rate_key(rate), *s)]).collect();
        let err = mean(runs.iter().map(|o| (last(o).eps_hat - o.realized_rate).abs()));
        let eps = mean(runs.iter().map(|o| last(o).eps_hat));
        let realized = mean(runs.iter().map(|o| o.realized_rate));
        ok &= err <= 0.10 && eps > prev;
        prev = eps;
        lines.push(format!("{rate}: eps_hat {eps:.3} realized {realized:.3} |err| {err:.3}"));
    }
    ok &= arms.slowest < Duration::from_secs(120);
    let msg = format!("{}; slowest run {:.1}s", lines.join(", "), arms.slowest.as_secs_f64());
    check(ok, msg)
}

fn curriculum_uplift(arms: &Arms) -> Verdict {
    let ours = mean(SEEDS.iter().map(|s| last(&arms.estimated[&(40, *s)]).test_accuracy));
    let no_eps = mean(arms.no_eps.iter().map(|o| last(o).test_accuracy));
    let fixed = mean(arms.fixed.iter().map(|o| last(o).test_accuracy));
    let uplift = 100.0 * (ours - no_eps);
    let gap = 100.0 * (fixed - ours);
    check(
        uplift >= 2.0 && gap >= -1.0,
        format!(
            "test acc: estimated {:.2}, no-epsilon {:.2} (uplift {uplift:+.2} pts), fixed {:.2} ({gap:+.2} pts)",
            100.0 * ours,
            100.0 * no_eps,
            100.0 * fixed
        ),
    )
}

fn selection_quality(arms: &Arms) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let r = last(&arms.estimated[&(50, seed)]);
        ok &= r.f1 >= 0.85 && (r.clean_ratio - 0.5).abs() <= 0.08;
        parts.push(format!("seed {seed}: F1 {:.3} ratio {:.3}", r.f1, r.clean_ratio));
    }
    check(ok, parts.join(", "))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Verdict {
    std::env::set_var(cli::THREADS_ENV, "2");
    let mut compared = 0;
    for (name, args) in [
        ("gen", vec!["gen", "--kind", "idn", "--rate", "0.3", "--n", "800", "--seed", "5"]),
        (
            "train",
            vec![
                "train", "--rate", "0.3", "--n", "800", "--epochs", "4", "--seed", "5", "--dump-split",
                "--checkpoint-every", "2",
            ],
        ),
        ("train-full-batch", vec!["train", "--n", "400", "--epochs", "2", "--full-batch", "--seed", "9"]),
        (
            "sweep",
            vec!["sweep", "--rates", "0.2,0.4", "--seeds", "1,2", "--n", "400", "--epochs", "2"],
        ),
    ] {
        let mut trees = Vec::new();
        for rep in 0..2 {
            let dir = root.join(format!("{name}_{rep}"));
            std::fs::create_dir_all(&dir).unwrap();
            let target = if name == "gen" { dir.join("data.nlds") } else { dir.join("out") };
            let mut argv = vec!["nlre".to_string()];
            argv.extend(args.iter().map(|s| s.to_string()));
            argv.extend(["--out".to_string(), target.display().to_string()]);
            let code = cli::run(&argv);
            if code != 0 {
                return Err(format!("{name}: exit {code}"));
            }
            trees.push(files_under(&dir));
        }
        if trees[0].is_empty() || trees[0] != trees[1] {
            let diff: Vec<_> = trees[0].keys().filter(|k| trees[0].get(*k) != trees[1].get(*k)).collect();
            return Err(format!("{name}: artifacts differ: {diff:?}"));
        }
        compared += trees[0].len();
    }
    Ok(format!("gen, train, full-batch train, sweep: {compared} artifacts byte-identical across reruns"))
}

fn monotone_ascent(root: &Path) -> Verdict {
    let cfg = TrainArgs {
        data: DataArgs {
            rate: Some(0.4),
            n: Some(1000),
            ..DataArgs::default()
        },
        epochs: Some(20),
        warmup: Some(2),
        full_batch: Some(true),
        seed: Some(11),
        ..TrainArgs::default()
    }
    .resolve(root.join("monotone"), false)
    .unwrap();
    let out = cli::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let trace = &out.result.trace;
    let mut worst = f64::INFINITY;
    let mut backtracks = 0;
    for t in trace {
        worst = worst.min(t.after - t.before);
        backtracks += t.backtracks;
        if t.after < t.before - 1e-8 {
            return Err(format!("epoch {} {:?} block: {} -> {}", t.epoch, t.kind, t.before, t.after));
        }
    }
    let blocks = trace.iter().filter(|t| t.kind == BlockKind::E).count();
    check(
        blocks == 20 && trace.len() == 40,
        format!("{} blocks over 20 epochs, min change {worst:.2e}, {backtracks} step halvings", trace.len()),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, t: Instant, v: Verdict| {
        let (tag, msg) = match v {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("criterion {n} {tag} [{name}] ({:.1}s) {msg}", t.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report(1, "gradient oracle", t, within_budget(grad_oracle(), t.elapsed(), Duration::from_secs(30)));
    let t = Instant::now();
    report(2, "ELBO identities", t, within_budget(elbo_identities(), t.elapsed(), Duration::from_secs(5)));
    let t = Instant::now();
    report(3, "generative consistency", t, within_budget(generative_consistency(), t.elapsed(), Duration::from_secs(10)));
    let t = Instant::now();
    report(4, "selection laws", t, within_budget(selection_laws(), t.elapsed(), Duration::from_secs(10)));

    let t = Instant::now();
    let arms = run_arms(root.path());
    report(5, "noise-rate recovery", t, noise_rate_recovery(&arms));
    report(6, "curriculum uplift", t, curriculum_uplift(&arms));
    report(7, "selection quality", t, selection_quality(&arms));

    let t = Instant::now();
    report(8, "determinism", t, determinism(root.path()));
    let t = Instant::now();
    report(9, "monotone ascent", t, monotone_ascent(root.path()));

    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
