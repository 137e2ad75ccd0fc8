//! Score every training sample with the small-loss and k-NN criteria and
//! report how well the selected clean set matches the unflipped samples.

use nlre::datagen::{gen_gaussian_blobs, inject_noise, split_train_test, NoiseKind, NoiseSpec};
use nlre::emtrain::{train_dataset, TrainConfig};
use nlre::evalkit::{auc, selection_metrics};
use nlre::numkit::Rng;
use nlre::select::{curriculum_rate, knn_criterion, select_split, small_loss_criterion};

fn main() -> nlre::Result<()> {
    let rate: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let mut rng = Rng::new(1).derive("data");
    let clean = gen_gaussian_blobs(5000, 4, 2, 3.0, &mut rng)?;
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, rate), &mut rng)?;
    let (train, test) = split_train_test(&noisy, 0.2, &mut Rng::new(1).derive("sampling"))?;

    let config = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let result = train_dataset(&config, &train, &test)?;
    let r = curriculum_rate(result.model.eps());
    println!("eps_hat {:.4}  realized {:.4}  R {r:.4}", result.model.eps(), train.true_rate());

    for scores in [small_loss_criterion(&result.model.clean, &train)?, knn_criterion(&train, 10)?] {
        let split = select_split(&scores, r);
        let m = selection_metrics(&split, train.flip_mask())?;
        println!(
            "{:<10} AUC {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}",
            scores.kind.name(),
            auc(&scores.scores, train.flip_mask()),
            m.precision,
            m.recall,
            m.f1
        );
    }
    Ok(())
}
