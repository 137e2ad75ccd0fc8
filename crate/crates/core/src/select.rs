//! Sample selection: criterion scores, the noise-rate curriculum, the
//! sort-and-threshold clean/noisy split and the constraint loss on the
//! selected clean samples.

use std::io::Write;
use std::path::Path;

use crate::datagen::NoisySamples;
use crate::error::{Error, Result};
use crate::gm::CleanClassifier;
use crate::numkit::{log_softmax_in_place, Tape};

/// Scores below `ln(1e-300)` mean the classifier assigns the observed label
/// numerically zero probability.
const LOG_FLOOR: f64 = -690.7755278982137;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    SmallLoss,
    Knn,
}

impl CriterionKind {
    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::SmallLoss => "small-loss",
            CriterionKind::Knn => "knn",
        }
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-loss" | "small_loss" | "loss" => Ok(CriterionKind::SmallLoss),
            "knn" => Ok(CriterionKind::Knn),
            other => Err(Error::invalid("criterion", format!("unknown criterion `{other}`"))),
        }
    }
}

/// Per-sample criterion values; lower means more likely clean.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionScores {
    pub scores: Vec<f64>,
    pub kind: CriterionKind,
}

/// Clean/noisy partition of `0..N`, both sides sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSplit {
    clean: Vec<usize>,
    noisy: Vec<usize>,
    rate: f64,
    pub tag: u64,
}

impl SelectionSplit {
    pub fn clean(&self) -> &[usize] {
        &self.clean
    }

    pub fn noisy(&self) -> &[usize] {
        &self.noisy
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The (clamped) curriculum rate the split was built with.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Membership mask over `0..N`.
    pub fn clean_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.len()];
        for &i in &self.clean {
            m[i] = true;
        }
        m
    }

    /// Split from a membership mask over `0..N`.
    pub fn from_mask(mask: &[bool], rate: f64) -> Self {
        let (clean, noisy) = (0..mask.len()).partition(|&i| mask[i]);
        Self {
            clean,
            noisy,
            rate,
            tag: 0,
        }
    }

    /// Everything clean: the no-selection arm.
    pub fn all_clean(n: usize) -> Self {
        Self {
            clean: (0..n).collect(),
            noisy: Vec::new(),
            rate: 1.0,
            tag: 0,
        }
    }
}

/// Cross-entropy of the observed label under the clean classifier for the samples `idx`.
pub fn small_loss_scores<D: NoisySamples + ?Sized>(clean: &CleanClassifier, data: &D, idx: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::default();
    let mut lp = Vec::new();
    idx.iter()
        .map(|&i| {
            clean.net.forward_tape(data.x(i), &mut tape)?;
            lp.clear();
            lp.extend_from_slice(tape.output());
            log_softmax_in_place(&mut lp);
            let l = lp[data.noisy_label(i)];
            if !(l >= LOG_FLOOR) {
                return Err(Error::NonFinite(format!(
                    "small-loss score of sample {i} hit the 1e-300 probability floor"
                )));
            }
            Ok(-l)
        })
        .collect()
}

/// `z_i = -ln softmax(f_y(x_i))[y_hat_i]` for every sample.
pub fn small_loss_criterion<D: NoisySamples + ?Sized>(clean: &CleanClassifier, data: &D) -> Result<CriterionScores> {
    if data.is_empty() {
        return Err(Error::invalid("dataset", "dataset is empty"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(CriterionScores {
        scores: small_loss_scores(clean, data, &idx)?,
        kind: CriterionKind::SmallLoss,
    })
}

/// Fraction of each sample's `k` nearest neighbours (Euclidean, self
/// excluded, distance ties broken by index) whose observed label differs.
pub fn knn_criterion<D: NoisySamples + ?Sized>(data: &D, k: usize) -> Result<CriterionScores> {
    let n = data.len();
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k >= n {
        return Err(Error::invalid("k", format!("must be below the sample count ({k} >= {n})")));
    }
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let scores = (0..n)
        .map(|i| {
            let xi = data.x(i);
            dists.clear();
            dists.extend((0..n).filter(|&j| j != i).map(|j| {
                let d2: f64 = xi.iter().zip(data.x(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            }));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            dists.select_nth_unstable_by(k - 1, cmp);
            let yi = data.noisy_label(i);
            let disagree = dists[..k].iter().filter(|&&(_, j)| data.noisy_label(j) != yi).count();
            disagree as f64 / k as f64
        })
        .collect();
    Ok(CriterionScores {
        scores,
        kind: CriterionKind::Knn,
    })
}

/// Fraction of samples to treat as clean: `1 - eps`.
pub fn curriculum_rate(eps: f64) -> f64 {
    1.0 - eps
}

/// Number of clean samples for rate `r` over `n` samples: `floor(clamp(r) * n)`.
pub fn clean_count(r: f64, n: usize) -> usize {
    let r = if r.is_nan() { 0.0 } else { r.clamp(0.0, 1.0) };
    ((r * n as f64).floor() as usize).min(n)
}

/// Sort ascending by score (ties by index) and keep the first `floor(R * N)` as clean.
pub fn select_split(scores: &CriterionScores, rate: f64) -> SelectionSplit {
    let n = scores.scores.len();
    let rate = if rate.is_nan() { 0.0 } else { rate.clamp(0.0, 1.0) };
    let keep = clean_count(rate, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]).then(a.cmp(&b)));
    let mut clean = order[..keep].to_vec();
    let mut noisy = order[keep..].to_vec();
    clean.sort_unstable();
    noisy.sort_unstable();
    SelectionSplit {
        clean,
        noisy,
        rate,
        tag: 0,
    }
}

/// Mean cross-entropy of the observed labels over `clean_idx`, and its
/// gradient with respect to the clean classifier's parameters. An empty
/// selection yields `(0, 0)`.
pub fn constraint_loss_for<D: NoisySamples + ?Sized>(
    clean: &CleanClassifier,
    data: &D,
    clean_idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; clean.net.len()];
    let loss = accumulate_constraint(clean, data, clean_idx, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Adds `scale * d(mean CE)/d(theta)` into `grad`; returns the mean CE.
pub(crate) fn accumulate_constraint<D: NoisySamples + ?Sized>(
    clean: &CleanClassifier,
    data: &D,
    clean_idx: &[usize],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if clean_idx.is_empty() {
        return Ok(0.0);
    }
    let w = 1.0 / clean_idx.len() as f64;
    let mut tape = Tape::default();
    let mut lp = Vec::new();
    let mut total = 0.0;
    for &i in clean_idx {
        clean.net.forward_tape(data.x(i), &mut tape)?;
        lp.clear();
        lp.extend_from_slice(tape.output());
        log_softmax_in_place(&mut lp);
        let y = data.noisy_label(i);
        total -= lp[y];
        if scale != 0.0 {
            let up: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(k, l)| scale * w * (l.exp() - if k == y { 1.0 } else { 0.0 }))
                .collect();
            clean.net.backward(&tape, &up, grad, false)?;
        }
    }
    let loss = total * w;
    if !loss.is_finite() {
        return Err(Error::NonFinite("constraint loss".into()));
    }
    Ok(loss)
}

/// Constraint loss over the clean side of `split`.
pub fn constraint_loss<D: NoisySamples + ?Sized>(clean: &CleanClassifier, data: &D, split: &SelectionSplit) -> Result<(f64, Vec<f64>)> {
    constraint_loss_for(clean, data, split.clean())
}

/// Debug dump: `index,score,is_clean[,true_flip]`.
pub fn write_split_csv(path: impl AsRef<Path>, scores: &CriterionScores, split: &SelectionSplit, flip_mask: Option<&[bool]>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mask = split.clean_mask();
    if flip_mask.is_some() {
        writeln!(out, "index,score,is_clean,true_flip").map_err(io)?;
    } else {
        writeln!(out, "index,score,is_clean").map_err(io)?;
    }
    for (i, s) in scores.scores.iter().enumerate() {
        match flip_mask {
            Some(f) => writeln!(out, "{i},{s:.16e},{},{}", mask[i] as u8, f[i] as u8),
            None => writeln!(out, "{i},{s:.16e},{}", mask[i] as u8),
        }
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{CleanDataset, NoisyDataset};
    use crate::numkit::{finite_diff_grad, max_rel_error, MlpParams, Rng};

    fn scores(v: &[f64]) -> CriterionScores {
        CriterionScores {
            scores: v.to_vec(),
            kind: CriterionKind::SmallLoss,
        }
    }

    fn tiny_data(n: usize, seed: u64) -> NoisyDataset {
        let mut rng = Rng::new(seed);
        let features: Vec<f64> = (0..n * 2).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let clean = CleanDataset::new(features, labels, 2, 3).unwrap();
        let noisy = (0..n).map(|i| (i * 7 + 1) % 3).collect();
        NoisyDataset::new(clean, noisy, crate::datagen::NoiseKind::Symmetric, 0.5).unwrap()
    }

    #[test]
    fn hand_sorted_split() {
        let s = select_split(&scores(&[0.3, 0.1, 0.2, 0.9]), 0.5);
        assert_eq!(s.clean(), &[1, 2]);
        assert_eq!(s.noisy(), &[0, 3]);
    }

    #[test]
    fn extreme_rates() {
        let sc = scores(&[0.3, 0.1, 0.2]);
        assert_eq!(select_split(&sc, 1.0).clean().len(), 3);
        assert_eq!(select_split(&sc, 0.0).noisy().len(), 3);
        assert_eq!(select_split(&sc, 1.7).clean().len(), 3);
        assert_eq!(select_split(&sc, -0.2).clean().len(), 0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let s = select_split(&scores(&[1.0, 1.0, 1.0, 0.0]), 0.5);
        assert_eq!(s.clean(), &[0, 3]);
    }

    #[test]
    fn curriculum_values() {
        assert_eq!(curriculum_rate(0.5), 0.5);
        assert!((curriculum_rate(0.3) - 0.7).abs() < 1e-15);
        assert!((curriculum_rate(1e-12) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn uniform_model_scores_ln_c() {
        let data = tiny_data(10, 1);
        let clean = CleanClassifier {
            net: MlpParams::zeros(&[2, 4, 3]).unwrap(),
        };
        let s = small_loss_criterion(&clean, &data).unwrap();
        assert!(s.scores.iter().all(|v| (v - 3f64.ln()).abs() < 1e-14));
        let (loss, _) = constraint_loss(&clean, &data, &SelectionSplit::all_clean(10)).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_model_scores_near_zero() {
        // Linear model with huge weight on the matching input coordinate.
        let clean = CleanClassifier {
            net: MlpParams::linear(&[50.0, 0.0, 0.0, 50.0], &[0.0, 0.0]).unwrap(),
        };
        let cd = CleanDataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2, 2).unwrap();
        let data = NoisyDataset::from_clean(cd);
        let s = small_loss_criterion(&clean, &data).unwrap();
        assert!(s.scores.iter().all(|v| *v < 1e-20));
    }

    #[test]
    fn knn_basics() {
        let cd = CleanDataset::new(vec![0.0, 0.0, 1.0, 0.0, 5.0, 0.0, 6.0, 0.0], vec![0, 0, 0, 0], 2, 2).unwrap();
        let data = NoisyDataset::from_clean(cd.clone());
        let s = knn_criterion(&data, 2).unwrap();
        assert!(s.scores.iter().all(|v| *v == 0.0));
        let data = NoisyDataset::new(cd, vec![0, 0, 1, 1], crate::datagen::NoiseKind::Symmetric, 0.5).unwrap();
        let s = knn_criterion(&data, 1).unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0, 0.0, 0.0]);
        assert!(knn_criterion(&data, 0).is_err());
        assert!(knn_criterion(&data, 4).is_err());
    }

    #[test]
    fn empty_selection_has_zero_loss() {
        let data = tiny_data(6, 2);
        let clean = CleanClassifier {
            net: MlpParams::init_he(&[2, 5, 3], &mut Rng::new(3)).unwrap(),
        };
        let (loss, grad) = constraint_loss_for(&clean, &data, &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constraint_gradient_matches_finite_differences() {
        let data = tiny_data(12, 4);
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let net = MlpParams::init_he(&[2, 6, 3], &mut rng).unwrap();
            let widths = net.widths().to_vec();
            let idx = [0, 3, 4, 7, 11];
            let (_, grad) = constraint_loss_for(&CleanClassifier { net: net.clone() }, &data, &idx).unwrap();
            let f = |p: &[f64]| {
                let c = CleanClassifier {
                    net: MlpParams::from_flat(&widths, p.to_vec()).unwrap(),
                };
                constraint_loss_for(&c, &data, &idx).unwrap().0
            };
            let fd = finite_diff_grad(f, net.as_slice(), 1e-5).unwrap();
            assert!(max_rel_error(&grad, &fd) <= 1e-4);
        }
    }

    #[test]
    fn split_dump_columns() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scores(&[0.3, 0.1]);
        let split = select_split(&sc, 0.5);
        let p = dir.path().join("s.csv");
        write_split_csv(&p, &sc, &split, Some(&[true, false])).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,score,is_clean,true_flip"));
        assert!(lines.next().unwrap().ends_with(",0,1"));
        write_split_csv(&p, &sc, &split, None).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("index,score,is_clean\n"));
    }
}
