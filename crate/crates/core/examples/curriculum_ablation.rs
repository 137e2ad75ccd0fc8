//! Compare the learned curriculum R = 1 - eps_hat with no selection and with
//! an oracle fixed rate.
//!
//! `cargo run --release --example curriculum_ablation -- 0.4 0`

use nlre::datagen::{gen_gaussian_blobs, inject_noise, split_train_test, NoiseKind, NoiseSpec};
use nlre::emtrain::{train_dataset, TrainConfig};
use nlre::numkit::Rng;

fn main() -> nlre::Result<()> {
    let mut args = std::env::args().skip(1);
    let rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut rng = Rng::new(seed).derive("data");
    let clean = gen_gaussian_blobs(5000, 4, 2, 3.0, &mut rng)?;
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, rate), &mut rng)?;
    let (train, test) = split_train_test(&noisy, 0.2, &mut Rng::new(seed).derive("sampling"))?;

    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let arms = [
        ("estimated", base.clone()),
        (
            "no-epsilon",
            TrainConfig {
                lambda: 0.0,
                selection: false,
                ..base.clone()
            },
        ),
        (
            "fixed",
            TrainConfig {
                fixed_eps: Some(train.true_rate()),
                ..base
            },
        ),
    ];
    for (name, config) in arms {
        let result = train_dataset(&config, &train, &test)?;
        let last = result.records.last().expect("epochs > 0");
        println!(
            "{name:<11} test_acc {:.4}  eps_hat {:.4}  clean_ratio {:.4}",
            last.test_accuracy, last.eps_hat, last.clean_ratio
        );
    }
    Ok(())
}
