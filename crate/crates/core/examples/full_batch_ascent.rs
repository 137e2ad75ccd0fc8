//! Full-batch training with guarded steps: every E and M block is accepted
//! only if it does not lower its objective.

use nlre::datagen::{gen_gaussian_blobs, inject_noise, split_train_test, NoiseKind, NoiseSpec};
use nlre::emtrain::{train_dataset, BlockKind, TrainConfig};
use nlre::numkit::Rng;

fn main() -> nlre::Result<()> {
    let mut rng = Rng::new(2);
    let clean = gen_gaussian_blobs(1000, 4, 2, 3.0, &mut rng)?;
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, 0.3), &mut rng)?;
    let (train, test) = split_train_test(&noisy, 0.2, &mut rng)?;

    let config = TrainConfig {
        epochs: 20,
        warmup_epochs: 2,
        batch_size: train.len(),
        guarded_ascent: true,
        trace_objective: true,
        ..TrainConfig::default()
    };
    let result = train_dataset(&config, &train, &test)?;
    for kind in [BlockKind::E, BlockKind::M] {
        let blocks: Vec<_> = result.trace.iter().filter(|t| t.kind == kind).collect();
        let worst = blocks.iter().map(|t| t.after - t.before).fold(f64::INFINITY, f64::min);
        let halvings: usize = blocks.iter().map(|t| t.backtracks).sum();
        println!("{kind:?} blocks {:>3}  min change {worst:+.3e}  step halvings {halvings}", blocks.len());
    }
    println!("final eps_hat {:.4}  realized {:.4}", result.model.eps(), train.true_rate());
    Ok(())
}
