//! Oracle suites behind `nlre selftest`.

use std::time::Instant;

use crate::datagen::{gen_gaussian_blobs, inject_noise, NoiseKind, NoiseSpec, NoisyDataset, NoisySamples};
use crate::error::{Error, Result};
use crate::gm::{
    elbo_grads, elbo_with_q, exact_posterior, marginal_loglik, mean_elbo, noisy_mixture, one_hot, sample_generative,
    ElboEval, GraphicalModel, HeadSupport,
};
use crate::numkit::{backprop, finite_diff_grad, max_rel_error, softmax, MlpParams, Rng};
use crate::select::{clean_count, constraint_loss_for, select_split, CriterionKind, CriterionScores};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const DRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradient,
    Elbo,
    Generative,
    Split,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradient, Suite::Elbo, Suite::Generative, Suite::Split];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::Elbo => "elbo",
            Suite::Generative => "generative",
            Suite::Split => "split",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("suite", format!("unknown suite `{s}` (gradient, elbo, generative, split)")))
    }
}

pub type ElboGradFn = fn(&GraphicalModel, &NoisyDataset, &[usize]) -> Result<ElboEval>;

/// Code under test, replaceable so a fixture can plant a bug.
#[derive(Clone, Copy)]
pub struct SelftestHooks {
    pub elbo_grads: ElboGradFn,
}

impl Default for SelftestHooks {
    fn default() -> Self {
        Self {
            elbo_grads: |m, d, i| elbo_grads(m, d, i),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn run_suites(suites: &[Suite], hooks: &SelftestHooks, seed: u64) -> Vec<SuiteReport> {
    suites
        .iter()
        .map(|&suite| {
            let t = Instant::now();
            let mut rng = Rng::new(seed).derive(suite.name());
            let outcome = match suite {
                Suite::Gradient => gradient_suite(hooks, &mut rng),
                Suite::Elbo => elbo_suite(&mut rng),
                Suite::Generative => generative_suite(&mut rng),
                Suite::Split => split_suite(&mut rng),
            };
            let (passed, detail) = match outcome {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(e) => (false, format!("error: {e}")),
            };
            SuiteReport {
                suite,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

type Outcome = Result<std::result::Result<String, String>>;

/// Small random problem: `n` points, 3 classes, 2 features, 30% IDN noise.
pub fn random_problem(n: usize, rng: &mut Rng) -> Result<NoisyDataset> {
    let clean = gen_gaussian_blobs(n, 3, 2, 2.0, rng)?;
    inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, 0.3), rng)
}

fn gradient_suite(hooks: &SelftestHooks, rng: &mut Rng) -> Outcome {
    let mut worst: f64 = 0.0;
    for draw in 0..DRAWS {
        // Raw network.
        let net = MlpParams::init_he(&[3, 5, 4], rng)?;
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let up: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let (g, _) = backprop(&net, &x, &up)?;
        let widths = net.widths().to_vec();
        let fd = finite_diff_grad(
            |p| {
                let n = MlpParams::from_flat(&widths, p.to_vec()).unwrap();
                n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            },
            net.as_slice(),
            FD_STEP,
        )?;
        let e = max_rel_error(&g, &fd);
        worst = worst.max(e);
        if e > FD_TOL {
            return Ok(Err(format!("mlp backprop draw {draw}: rel err {e:.3e}")));
        }

        // Every ELBO parameter group, for both head variants.
        for support in [HeadSupport::Full, HeadSupport::ExcludeClean] {
            let data = random_problem(6, rng)?;
            let model = GraphicalModel::init(2, 3, 4, support, rng)?;
            let idx: Vec<usize> = (0..data.len()).collect();
            let analytic = (hooks.elbo_grads)(&model, &data, &idx)?.grads.flat();
            let fd = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.set_flat_params(p).unwrap();
                    mean_elbo(&m, &data, &idx).unwrap()
                },
                &model.flat_params(),
                FD_STEP,
            )?;
            let e = max_rel_error(&analytic, &fd);
            worst = worst.max(e);
            if e > FD_TOL {
                return Ok(Err(format!("ELBO gradient ({}) draw {draw}: rel err {e:.3e}", support.name())));
            }
        }

        // Clean-sample constraint.
        let data = random_problem(8, rng)?;
        let model = GraphicalModel::init(2, 3, 4, HeadSupport::ExcludeClean, rng)?;
        let idx: Vec<usize> = (0..data.len()).filter(|i| i % 2 == 0).collect();
        let (_, g) = constraint_loss_for(&model.clean, &data, &idx)?;
        let widths = model.clean.net.widths().to_vec();
        let fd = finite_diff_grad(
            |p| {
                let c = crate::gm::CleanClassifier {
                    net: MlpParams::from_flat(&widths, p.to_vec()).unwrap(),
                };
                constraint_loss_for(&c, &data, &idx).unwrap().0
            },
            model.clean.net.as_slice(),
            FD_STEP,
        )?;
        let e = max_rel_error(&g, &fd);
        worst = worst.max(e);
        if e > FD_TOL {
            return Ok(Err(format!("constraint gradient draw {draw}: rel err {e:.3e}")));
        }
    }
    Ok(Ok(format!("{DRAWS} draws per operation, max rel err {worst:.2e}")))
}

fn random_simplex(c: usize, rng: &mut Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..c).map(|_| 3.0 * rng.normal()).collect();
    softmax(&z).expect("finite logits")
}

fn elbo_suite(rng: &mut Rng) -> Outcome {
    let c = 4;
    let mut worst_gap: f64 = 0.0;
    for point in 0..100 {
        let support = if point % 2 == 0 { HeadSupport::Full } else { HeadSupport::ExcludeClean };
        let model = GraphicalModel::init(3, c, 6, support, rng)?;
        let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
        let yh = rng.below(c);
        let ll = marginal_loglik(&model.clean, &model.noisy, model.rate, &x, yh)?;
        let q = exact_posterior(&model.clean, &model.noisy, model.rate, &x, yh)?;
        let tight = elbo_with_q(&model.clean, &model.noisy, model.rate, &q, &x, yh)?;
        if (tight - ll).abs() > 1e-9 {
            return Ok(Err(format!("point {point}: ELBO at exact posterior {tight} vs log-likelihood {ll}")));
        }
        worst_gap = worst_gap.max((tight - ll).abs());
        for k in 0..100 {
            let q = random_simplex(c, rng);
            let b = elbo_with_q(&model.clean, &model.noisy, model.rate, &q, &x, yh)?;
            if b > ll + 1e-9 {
                return Ok(Err(format!("point {point}, q {k}: ELBO {b} exceeds log-likelihood {ll}")));
            }
        }
    }
    Ok(Ok(format!("100 points x 100 q; tightness gap {worst_gap:.1e}")))
}

fn generative_suite(rng: &mut Rng) -> Outcome {
    let data = random_problem(200, rng)?;
    let model = GraphicalModel::init(2, 3, 8, HeadSupport::Full, rng)?;
    let c = model.num_classes();
    let eps = model.eps();
    let mut analytic = 0.0;
    for i in 0..data.len() {
        let p = crate::gm::clean_prob(&model.clean, data.x(i))?;
        for (y, py) in p.iter().enumerate() {
            let g = noisy_mixture(&model.noisy, 1.0, data.x(i), &one_hot(y, c))?;
            analytic += py * (1.0 - g[y]);
        }
    }
    analytic *= eps / data.len() as f64;
    let draws = 100_000;
    let mut flips = 0usize;
    for _ in 0..draws {
        let i = rng.below(data.len());
        let (y, yh) = sample_generative(&model, data.x(i), rng)?;
        flips += (y != yh) as usize;
    }
    let freq = flips as f64 / draws as f64;
    let sigma = (analytic * (1.0 - analytic) / draws as f64).sqrt();
    let z = (freq - analytic) / sigma;
    let msg = format!("MC {freq:.5} vs analytic {analytic:.5} ({z:+.2} sigma)");
    Ok(if z.abs() <= 3.0 { Ok(msg) } else { Err(msg) })
}

fn split_suite(rng: &mut Rng) -> Outcome {
    for inst in 0..1000 {
        let n = 1 + rng.below(200);
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.2 { rng.below(4) as f64 } else { rng.normal() })
            .collect();
        let eps = rng.uniform();
        let cs = CriterionScores {
            scores: scores.clone(),
            kind: CriterionKind::SmallLoss,
        };
        let split = select_split(&cs, 1.0 - eps);
        if split.clean().len() != clean_count(1.0 - eps, n) || split.len() != n {
            return Ok(Err(format!("instance {inst}: |clean| = {} for N={n}, eps={eps}", split.clean().len())));
        }
        let r2 = rng.uniform();
        let (lo, hi) = if r2 < 1.0 - eps { (r2, 1.0 - eps) } else { (1.0 - eps, r2) };
        let small = select_split(&cs, lo).clean_mask();
        let large = select_split(&cs, hi).clean_mask();
        if small.iter().zip(&large).any(|(&a, &b)| a && !b) {
            return Ok(Err(format!("instance {inst}: split at R={lo} not contained in R={hi}")));
        }
        let transformed = CriterionScores {
            scores: scores.iter().map(|s| (0.5 * s).exp() * 3.0 + 1.0).collect(),
            kind: CriterionKind::SmallLoss,
        };
        if select_split(&transformed, 1.0 - eps).clean() != split.clean() {
            return Ok(Err(format!("instance {inst}: split changed under a monotone transform")));
        }
    }
    Ok(Ok("1000 instances: cardinality, nestedness, transform invariance".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for r in run_suites(&Suite::ALL, &SelftestHooks::default(), 0) {
            assert!(r.passed, "{}: {}", r.suite.name(), r.detail);
        }
    }

    #[test]
    fn planted_gradient_bug_is_caught() {
        let hooks = SelftestHooks {
            elbo_grads: |m, d, i| {
                let mut ev = elbo_grads(m, d, i)?;
                ev.grads.eps_logit *= 1.01;
                Ok(ev)
            },
        };
        let r = &run_suites(&[Suite::Gradient], &hooks, 0)[0];
        assert!(!r.passed);
        assert!(r.detail.contains("ELBO gradient"), "{}", r.detail);
    }
}
