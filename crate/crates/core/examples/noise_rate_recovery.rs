//! Train on IDN-corrupted blobs and watch the estimated noise rate approach
//! the realized one.
//!
//! `cargo run --release --example noise_rate_recovery -- 0.3 0`

use nlre::datagen::{gen_gaussian_blobs, inject_noise, split_train_test, NoiseKind, NoiseSpec};
use nlre::emtrain::{train_dataset, TrainConfig};
use nlre::numkit::Rng;

fn main() -> nlre::Result<()> {
    let mut args = std::env::args().skip(1);
    let rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut rng = Rng::new(seed).derive("data");
    let clean = gen_gaussian_blobs(5000, 4, 2, 3.0, &mut rng)?;
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, rate), &mut rng)?;
    let (train, test) = split_train_test(&noisy, 0.2, &mut Rng::new(seed).derive("sampling"))?;

    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let result = train_dataset(&config, &train, &test)?;
    println!("realized rate {:.4}", train.true_rate());
    for r in result.records.iter().filter(|r| r.epoch % 10 == 9 || r.epoch == 0) {
        println!(
            "epoch {:>3}  eps_hat {:.4}  test_acc {:.4}  sel_f1 {:.4}",
            r.epoch, r.eps_hat, r.test_accuracy, r.f1
        );
    }
    let last = result.records.last().expect("epochs > 0");
    println!("|eps_hat - realized| = {:.4}", (last.eps_hat - train.true_rate()).abs());
    Ok(())
}
