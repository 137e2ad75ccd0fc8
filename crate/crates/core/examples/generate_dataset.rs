//! Generate Gaussian blobs, corrupt them with each noise model and
//! round-trip the result through the dataset file format.
//!
//! `cargo run --example generate_dataset -- 0.4`

use nlre::datagen::{gen_gaussian_blobs, inject_noise, load_dataset, save_dataset, NoiseKind, NoiseSpec};
use nlre::numkit::Rng;

fn main() -> nlre::Result<()> {
    let rate: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let clean = gen_gaussian_blobs(5000, 4, 2, 3.0, &mut Rng::new(0))?;
    println!("{} samples, {} classes, dim {}", clean.len(), clean.num_classes(), clean.dim());

    for kind in [NoiseKind::Symmetric, NoiseKind::Pairflip, NoiseKind::Idn] {
        let spec = NoiseSpec::new(kind, rate);
        match inject_noise(&clean, &spec, &mut Rng::new(1)) {
            Ok(ds) => println!("{:<10} nominal {rate:.2}  realized {:.4}", kind.name(), ds.true_rate()),
            Err(e) => println!("{:<10} skipped: {e}", kind.name()),
        }
    }

    let ds = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, rate), &mut Rng::new(1))?;
    let path = std::env::temp_dir().join("nlre_example.nlds");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    println!("round trip through {}: {}", path.display(), if back == ds { "identical" } else { "DIFFERENT" });
    std::fs::remove_file(&path).ok();
    Ok(())
}
