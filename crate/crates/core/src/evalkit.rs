//! Evaluation: test accuracy, selection quality against the ground-truth flip
//! mask, noise-rate error, and the per-epoch CSV log.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::datagen::CleanDataset;
use crate::error::{Error, Result};
use crate::gm::CleanClassifier;
use crate::numkit::Tape;
use crate::select::SelectionSplit;

pub const RECORDS_HEADER: &str =
    "epoch,test_acc,eps_hat,implied_flip_rate,sel_precision,sel_recall,sel_f1,clean_ratio,mean_elbo,mean_constraint,degenerate_flags";

/// Nothing was selected as clean, so precision is undefined (reported as 0).
pub const FLAG_NO_SELECTION: u8 = 1;
/// No sample is truly clean, so recall is undefined (reported as 0).
pub const FLAG_NO_TRUE_CLEAN: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub test_accuracy: f64,
    pub eps_hat: f64,
    pub implied_flip_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub clean_ratio: f64,
    pub mean_elbo: f64,
    pub mean_constraint: f64,
    pub degenerate_flags: u8,
}

/// Fraction of test samples whose arg-max clean prediction equals the clean label.
pub fn test_accuracy(clean: &CleanClassifier, test: &CleanDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("test_ds", "test set is empty"));
    }
    let mut tape = Tape::default();
    let mut correct = 0usize;
    for i in 0..test.len() {
        clean.net.forward_tape(test.x(i), &mut tape)?;
        if argmax(tape.output()) == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Selection quality with "selected clean and truly unflipped" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub clean_ratio: f64,
    pub flags: u8,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Metrics for a clean-membership mask against the ground-truth flip mask.
pub fn selection_metrics_mask(selected: &[bool], flip_mask: &[bool]) -> Result<SelectionMetrics> {
    if selected.len() != flip_mask.len() {
        return Err(Error::shape("selection_metrics", flip_mask.len(), selected.len()));
    }
    let n = selected.len();
    let mut tp = 0usize;
    let mut n_sel = 0usize;
    let mut n_true = 0usize;
    for (&s, &f) in selected.iter().zip(flip_mask) {
        n_sel += s as usize;
        n_true += (!f) as usize;
        tp += (s && !f) as usize;
    }
    let mut flags = 0;
    let precision = if n_sel == 0 {
        flags |= FLAG_NO_SELECTION;
        0.0
    } else {
        tp as f64 / n_sel as f64
    };
    let recall = if n_true == 0 {
        flags |= FLAG_NO_TRUE_CLEAN;
        0.0
    } else {
        tp as f64 / n_true as f64
    };
    Ok(SelectionMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        clean_ratio: if n == 0 { 0.0 } else { n_sel as f64 / n as f64 },
        flags,
    })
}

pub fn selection_metrics(split: &SelectionSplit, flip_mask: &[bool]) -> Result<SelectionMetrics> {
    selection_metrics_mask(&split.clean_mask(), flip_mask)
}

/// Signed error `eps_hat - realized`.
pub fn noise_rate_error(eps_hat: f64, realized_rate: f64) -> f64 {
    eps_hat - realized_rate
}

/// Area under the ROC curve of `scores` for detecting `positives`
/// (higher score = more likely positive), ties counted as one half.
pub fn auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.5;
    }
    // Mann-Whitney U with mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positives[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_records(records: &[EpochRecord]) -> String {
    let mut s = String::from(RECORDS_HEADER);
    s.push('\n');
    for r in records {
        let fields = [
            r.test_accuracy,
            r.eps_hat,
            r.implied_flip_rate,
            r.precision,
            r.recall,
            r.f1,
            r.clean_ratio,
            r.mean_elbo,
            r.mean_constraint,
        ];
        s.push_str(&r.epoch.to_string());
        for f in fields {
            s.push(',');
            s.push_str(&fmt_f(f));
        }
        s.push(',');
        s.push_str(&r.degenerate_flags.to_string());
        s.push('\n');
    }
    s
}

/// Write the per-epoch CSV log (17 significant digits per real).
pub fn write_records(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_records(records).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn parse_records(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORDS_HEADER) {
        return Err(Error::Parse {
            offset: 0,
            reason: "missing or unexpected records header".into(),
        });
    }
    let mut offset = RECORDS_HEADER.len() + 1;
    let mut out = Vec::new();
    for line in lines {
        let bad = |why: String| Error::Parse { offset, reason: why };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(bad(format!("expected 11 columns, got {}", cols.len())));
        }
        let f = |k: usize| cols[k].parse::<f64>().map_err(|e| bad(format!("column {k}: {e}")));
        out.push(EpochRecord {
            epoch: cols[0].parse().map_err(|e| bad(format!("epoch: {e}")))?,
            test_accuracy: f(1)?,
            eps_hat: f(2)?,
            implied_flip_rate: f(3)?,
            precision: f(4)?,
            recall: f(5)?,
            f1: f(6)?,
            clean_ratio: f(7)?,
            mean_elbo: f(8)?,
            mean_constraint: f(9)?,
            degenerate_flags: cols[10].parse().map_err(|e| bad(format!("flags: {e}")))?,
        });
        offset += line.len() + 1;
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    parse_records(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
