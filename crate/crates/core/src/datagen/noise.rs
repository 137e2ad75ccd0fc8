//! Label-noise injectors.

use super::{CleanDataset, NoiseKind, NoiseSpec, NoisyDataset};
use crate::error::{Error, Result};
use crate::numkit::{softmax_in_place, Rng};

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("rate", format!("must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Relabels exactly `floor(rate * N)` uniformly chosen samples to a uniformly
/// drawn *different* class.
pub fn inject_symmetric_noise(ds: &CleanDataset, rate: f64, rng: &mut Rng) -> Result<NoisyDataset> {
    check_rate(rate)?;
    let n = ds.len();
    let c = ds.num_classes();
    let flips = (rate * n as f64).floor() as usize;
    let mut noisy = ds.labels().to_vec();
    for i in rng.sample_indices(n, flips) {
        // Draw from the C-1 other classes by skipping over the clean one.
        let r = rng.below(c - 1);
        noisy[i] = if r >= noisy[i] { r + 1 } else { r };
    }
    NoisyDataset::new(ds.clone(), noisy, NoiseKind::Symmetric, rate)
}

/// Relabels exactly `floor(rate * N)` uniformly chosen samples `c -> (c + 1) mod C`.
pub fn inject_pairflip_noise(ds: &CleanDataset, rate: f64, rng: &mut Rng) -> Result<NoisyDataset> {
    check_rate(rate)?;
    if rate >= 0.5 {
        return Err(Error::invalid("rate", "pairflip noise requires rate < 0.5"));
    }
    let n = ds.len();
    let c = ds.num_classes();
    let flips = (rate * n as f64).floor() as usize;
    let mut noisy = ds.labels().to_vec();
    for i in rng.sample_indices(n, flips) {
        noisy[i] = (noisy[i] + 1) % c;
    }
    NoisyDataset::new(ds.clone(), noisy, NoiseKind::Pairflip, rate)
}

/// Ratio of the distance to the own class mean over the distance to the
/// nearest other class mean. Large values mean the sample sits near another cluster.
pub fn distance_ratio(ds: &CleanDataset) -> Vec<f64> {
    let means = ds.class_means();
    let dist = |x: &[f64], m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (0..ds.len())
        .map(|i| {
            let x = ds.x(i);
            let y = ds.label(i);
            let own = dist(x, &means[y]);
            let other = (0..ds.num_classes())
                .filter(|&c| c != y)
                .map(|c| dist(x, &means[c]))
                .fold(f64::INFINITY, f64::min);
            own / other.max(f64::MIN_POSITIVE)
        })
        .collect()
}

fn truncated_normal(mean: f64, std: f64, rng: &mut Rng) -> f64 {
    if std == 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    for _ in 0..10_000 {
        let v = mean + std * rng.normal();
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
    mean.clamp(0.0, 1.0)
}

/// Instance-dependent noise.
///
/// Per-sample flip rates `q_i` are drawn from `Normal(rate, std^2)` truncated to
/// `[0, 1]` and handed out in order of [`distance_ratio`], so samples closer to
/// a foreign cluster get the larger rates. A fixed standard-normal projection
/// `W` (`d x C`) of the unit-normalized feature scores the wrong classes; the
/// clean class keeps probability `1 - q_i` and the rest share `q_i` by
/// `softmax(x^T W)` with the clean entry masked.
pub fn inject_idn_noise(ds: &CleanDataset, spec: &NoiseSpec, rng: &mut Rng) -> Result<NoisyDataset> {
    if spec.kind != NoiseKind::Idn {
        return Err(Error::invalid("kind", "inject_idn_noise needs an idn spec"));
    }
    spec.validate()?;
    let n = ds.len();
    let d = ds.dim();
    let c = ds.num_classes();

    let mut rates: Vec<f64> = (0..n).map(|_| truncated_normal(spec.rate, spec.idn_std, rng)).collect();
    rates.sort_by(f64::total_cmp);
    let ratio = distance_ratio(ds);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ratio[a].total_cmp(&ratio[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = rates[rank];
    }

    let w: Vec<f64> = (0..d * c).map(|_| rng.normal()).collect();
    let mut noisy = Vec::with_capacity(n);
    let mut probs = vec![0.0; c];
    for i in 0..n {
        let x = ds.x(i);
        let y = ds.label(i);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (0..d).map(|j| x[j] * scale * w[j * c + k]).sum();
        }
        probs[y] = f64::NEG_INFINITY;
        softmax_in_place(&mut probs);
        for p in probs.iter_mut() {
            *p *= q[i];
        }
        probs[y] = 1.0 - q[i];
        noisy.push(rng.categorical(&probs));
    }
    NoisyDataset::new(ds.clone(), noisy, NoiseKind::Idn, spec.rate)
}

/// Dispatch on `spec.kind`.
pub fn inject_noise(ds: &CleanDataset, spec: &NoiseSpec, rng: &mut Rng) -> Result<NoisyDataset> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::None => Ok(NoisyDataset::from_clean(ds.clone())),
        NoiseKind::Symmetric => inject_symmetric_noise(ds, spec.rate, rng),
        NoiseKind::Pairflip => inject_pairflip_noise(ds, spec.rate, rng),
        NoiseKind::Idn => inject_idn_noise(ds, spec, rng),
    }
}
