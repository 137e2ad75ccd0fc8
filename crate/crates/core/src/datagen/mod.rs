//! Synthetic classification data with known clean labels, label-noise
//! injectors, and the binary dataset container.

pub(crate) mod io;
mod noise;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use noise::{distance_ratio, inject_idn_noise, inject_noise, inject_pairflip_noise, inject_symmetric_noise};

use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Features with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl CleanDataset {
    /// `features` is row-major `[n x dim]`.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        if classes > u16::MAX as usize + 1 {
            return Err(Error::invalid("classes", "at most 65536 classes"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "feature dimension must be at least 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::shape("CleanDataset features", labels.len() * dim, features.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid("labels", format!("label {bad} out of range 0..{classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Per-class empirical means, `[classes x dim]`. Empty classes get a zero mean.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; self.dim]; self.classes];
        let mut counts = vec![0usize; self.classes];
        for i in 0..self.len() {
            let y = self.labels[i];
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(self.x(i)) {
                *s += v;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            if n > 0 {
                s.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        sums
    }

    fn subset(&self, idx: &[usize]) -> CleanDataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.x(i));
        }
        CleanDataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
        }
    }
}

/// Kind of corruption applied to the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    None,
    Symmetric,
    Pairflip,
    Idn,
}

impl NoiseKind {
    pub fn code(self) -> u8 {
        match self {
            NoiseKind::None => 0,
            NoiseKind::Symmetric => 1,
            NoiseKind::Pairflip => 2,
            NoiseKind::Idn => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => NoiseKind::None,
            1 => NoiseKind::Symmetric,
            2 => NoiseKind::Pairflip,
            3 => NoiseKind::Idn,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pairflip => "pairflip",
            NoiseKind::Idn => "idn",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "pairflip" | "pair" => Ok(NoiseKind::Pairflip),
            "idn" => Ok(NoiseKind::Idn),
            other => Err(Error::invalid("kind", format!("unknown noise kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Standard deviation of the per-sample flip rate (idn only).
    pub idn_std: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            idn_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::invalid("rate", format!("must be in [0, 1), got {}", self.rate)));
        }
        if self.kind == NoiseKind::Pairflip && self.rate >= 0.5 {
            return Err(Error::invalid("rate", "pairflip noise requires rate < 0.5"));
        }
        if !(self.idn_std >= 0.0 && self.idn_std.is_finite()) {
            return Err(Error::invalid("idn_std", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A clean dataset plus its observed (possibly corrupted) labels.
///
/// The clean labels are retained for evaluation only. Training code sees the
/// data through [`NoisySamples`], which does not expose them.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    clean: CleanDataset,
    noisy_labels: Vec<usize>,
    flip_mask: Vec<bool>,
    kind: NoiseKind,
    nominal_rate: f64,
}

impl NoisyDataset {
    pub fn new(clean: CleanDataset, noisy_labels: Vec<usize>, kind: NoiseKind, nominal_rate: f64) -> Result<Self> {
        if noisy_labels.len() != clean.len() {
            return Err(Error::shape("NoisyDataset labels", clean.len(), noisy_labels.len()));
        }
        if let Some(&bad) = noisy_labels.iter().find(|&&y| y >= clean.classes) {
            return Err(Error::invalid("noisy_labels", format!("label {bad} out of range")));
        }
        let flip_mask = noisy_labels.iter().zip(&clean.labels).map(|(a, b)| a != b).collect();
        Ok(Self {
            clean,
            noisy_labels,
            flip_mask,
            kind,
            nominal_rate,
        })
    }

    /// Noise-free wrapper: observed labels equal the clean ones.
    pub fn from_clean(clean: CleanDataset) -> Self {
        let noisy_labels = clean.labels.clone();
        Self::new(clean, noisy_labels, NoiseKind::None, 0.0).expect("clean labels are valid")
    }

    pub fn clean(&self) -> &CleanDataset {
        &self.clean
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean.labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn flip_mask(&self) -> &[bool] {
        &self.flip_mask
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }

    /// Fraction of samples whose observed label differs from the clean one.
    pub fn true_rate(&self) -> f64 {
        if self.flip_mask.is_empty() {
            return 0.0;
        }
        self.flip_mask.iter().filter(|&&f| f).count() as f64 / self.flip_mask.len() as f64
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.clean.dim
    }

    pub fn num_classes(&self) -> usize {
        self.clean.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.clean.features
    }

    fn subset(&self, idx: &[usize]) -> NoisyDataset {
        let clean = self.clean.subset(idx);
        let noisy = idx.iter().map(|&i| self.noisy_labels[i]).collect();
        NoisyDataset::new(clean, noisy, self.kind, self.nominal_rate).expect("subset of a valid dataset")
    }
}

/// Read access used by every training operation: features and observed labels only.
pub trait NoisySamples {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn x(&self, i: usize) -> &[f64];
    fn noisy_label(&self, i: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NoisySamples for NoisyDataset {
    fn len(&self) -> usize {
        self.clean.len()
    }

    fn dim(&self) -> usize {
        self.clean.dim
    }

    fn num_classes(&self) -> usize {
        self.clean.classes
    }

    fn x(&self, i: usize) -> &[f64] {
        self.clean.x(i)
    }

    fn noisy_label(&self, i: usize) -> usize {
        self.noisy_labels[i]
    }
}

/// `C` isotropic unit-variance Gaussian clusters whose means sit on a circle of
/// radius `separation` in the first two coordinates. Class sizes differ by at most one.
pub fn gen_gaussian_blobs(n: usize, classes: usize, dim: usize, separation: f64, rng: &mut Rng) -> Result<CleanDataset> {
    if classes < 2 {
        return Err(Error::invalid("c", "need at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::invalid("d", "need at least 2 feature dimensions"));
    }
    if n < classes {
        return Err(Error::invalid("n", format!("need at least one sample per class ({n} < {classes})")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation", "must be finite and non-negative"));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        let angle = std::f64::consts::TAU * y as f64 / classes as f64;
        for j in 0..dim {
            let mean = match j {
                0 => separation * angle.cos(),
                1 => separation * angle.sin(),
                _ => 0.0,
            };
            features.push(mean + rng.normal());
        }
    }
    CleanDataset::new(features, labels, dim, classes)
}

/// Disjoint random split into a noisy training part and a clean test part.
pub fn split_train_test(ds: &NoisyDataset, test_fraction: f64, rng: &mut Rng) -> Result<(NoisyDataset, CleanDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", "must be in (0, 1)"));
    }
    let n = ds.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(
            "test_fraction",
            format!("split of {n} samples leaves an empty side ({n_test} test)"),
        ));
    }
    let (train_idx, test_idx) = split_indices(n, n_test, rng);
    Ok((ds.subset(&train_idx), ds.clean.subset(&test_idx)))
}

/// Sorted (train, test) index sets for a split with `n_test` test samples.
pub(crate) fn split_indices(n: usize, n_test: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_balanced_blobs() {
        let ds = gen_gaussian_blobs(4, 4, 2, 10.0, &mut Rng::new(0)).unwrap();
        let mut labels = ds.labels().to_vec();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = gen_gaussian_blobs(1003, 4, 3, 2.0, &mut Rng::new(9)).unwrap();
        let b = gen_gaussian_blobs(1003, 4, 3, 2.0, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; 4];
        a.labels().iter().for_each(|&y| counts[y] += 1);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn blobs_reject_bad_dims() {
        let mut rng = Rng::new(0);
        assert!(gen_gaussian_blobs(3, 4, 2, 1.0, &mut rng).is_err());
        assert!(gen_gaussian_blobs(10, 4, 1, 1.0, &mut rng).is_err());
        assert!(gen_gaussian_blobs(10, 1, 2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn split_partitions() {
        let clean = gen_gaussian_blobs(100, 4, 2, 3.0, &mut Rng::new(1)).unwrap();
        let ds = NoisyDataset::from_clean(clean);
        let (train_idx, test_idx) = split_indices(100, 20, &mut Rng::new(2));
        assert_eq!((train_idx.len(), test_idx.len()), (80, 20));
        let mut all: Vec<usize> = train_idx.iter().chain(&test_idx).cloned().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (train, test) = split_train_test(&ds, 0.2, &mut Rng::new(2)).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }

    #[test]
    fn split_rejects_empty_side() {
        let clean = gen_gaussian_blobs(10, 2, 2, 3.0, &mut Rng::new(1)).unwrap();
        let ds = NoisyDataset::from_clean(clean);
        assert!(split_train_test(&ds, 0.01, &mut Rng::new(0)).is_err());
        assert!(split_train_test(&ds, 0.99, &mut Rng::new(0)).is_err());
        assert!(split_train_test(&ds, 0.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn flip_mask_tracks_labels() {
        let clean = CleanDataset::new(vec![0.0; 8], vec![0, 1, 2, 0], 2, 3).unwrap();
        let ds = NoisyDataset::new(clean, vec![0, 2, 2, 1], NoiseKind::Symmetric, 0.5).unwrap();
        assert_eq!(ds.flip_mask(), &[false, true, false, true]);
        assert_eq!(ds.true_rate(), 0.5);
    }
}
