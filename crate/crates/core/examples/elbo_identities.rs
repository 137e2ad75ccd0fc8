//! The evidence lower bound equals the marginal log-likelihood minus
//! KL(q || p(y | x, y_hat)), so it is tight at the exact posterior.

use nlre::gm::{elbo_with_q, exact_posterior, marginal_loglik, GraphicalModel, HeadSupport};
use nlre::numkit::Rng;

fn main() -> nlre::Result<()> {
    let mut rng = Rng::new(3);
    let model = GraphicalModel::init(2, 4, 8, HeadSupport::ExcludeClean, &mut rng)?;
    let mut worst_gap = 0.0f64;
    let mut worst_tight = 0.0f64;
    for _ in 0..200 {
        let x = [rng.normal(), rng.normal()];
        let yh = rng.below(4);
        let ll = marginal_loglik(&model.clean, &model.noisy, model.rate, &x, yh)?;
        let p = exact_posterior(&model.clean, &model.noisy, model.rate, &x, yh)?;
        worst_tight = worst_tight.max((ll - elbo_with_q(&model.clean, &model.noisy, model.rate, &p, &x, yh)?).abs());

        let raw: Vec<f64> = (0..4).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let kl: f64 = q.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).sum();
        let bound = elbo_with_q(&model.clean, &model.noisy, model.rate, &q, &x, yh)?;
        worst_gap = worst_gap.max((ll - bound - kl).abs());
    }
    println!("max |loglik - elbo(q*)|          {worst_tight:.2e}");
    println!("max |loglik - elbo(q) - KL(q||p)| {worst_gap:.2e}");
    Ok(())
}
