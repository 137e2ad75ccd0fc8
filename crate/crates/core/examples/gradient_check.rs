//! Compare the analytic ELBO gradients with central finite differences on
//! a small random model.

use nlre::cli::selftest::random_problem;
use nlre::gm::{elbo_grads, mean_elbo, GraphicalModel, HeadSupport};
use nlre::numkit::{finite_diff_grad, max_rel_error, Rng};

fn main() -> nlre::Result<()> {
    let mut rng = Rng::new(7);
    let data = random_problem(8, &mut rng)?;
    let idx: Vec<usize> = (0..8).collect();
    for support in [HeadSupport::ExcludeClean, HeadSupport::Full] {
        let model = GraphicalModel::init(2, 3, 5, support, &mut rng)?;
        let analytic = elbo_grads(&model, &data, &idx)?.grads.flat();
        let numeric = finite_diff_grad(
            |flat| {
                let mut m = model.clone();
                m.set_flat_params(flat).expect("same layout");
                mean_elbo(&m, &data, &idx).expect("finite")
            },
            &model.flat_params(),
            1e-5,
        )?;
        println!(
            "{:<13} {} parameters, max relative error {:.2e}",
            support.name(),
            analytic.len(),
            max_rel_error(&analytic, &numeric)
        );
    }
    Ok(())
}
