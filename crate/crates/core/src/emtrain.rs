//! Variational EM with a noise-rate-driven selection curriculum.
//!
//! Each epoch freezes the current noise-rate estimate, keeps the
//! `floor((1 - eps) * N)` lowest-criterion samples as clean, then walks the
//! shuffled mini-batches: an E step on the amortized posterior followed by an
//! M step on the clean classifier, noisy head and noise rate that maximizes
//! the batch ELBO minus `lambda` times the cross-entropy on the selected clean
//! samples.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::datagen::{CleanDataset, NoisyDataset, NoisySamples};
use crate::error::{Error, Result};
use crate::evalkit::{selection_metrics_mask, test_accuracy, EpochRecord};
use crate::gm::{elbo_grads_with, implied_flip_rate, GmGrads, GradTargets, GraphicalModel, HeadSupport, Scratch};
use crate::numkit::{log_softmax_in_place, OptState, Rng, Tape};
use crate::select::{
    accumulate_constraint, clean_count, curriculum_rate, knn_criterion, select_split, small_loss_scores, CriterionKind,
    CriterionScores, SelectionSplit,
};

/// Ground truth is missing, so selection metrics are reported as 0.
pub const FLAG_NO_GROUND_TRUTH: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionScope {
    /// Score all samples once per epoch; batches look up membership.
    PerEpoch,
    /// Sort within each mini-batch and keep `floor(R * |S|)`.
    PerBatch,
}

impl std::str::FromStr for SelectionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-epoch" | "epoch" => Ok(SelectionScope::PerEpoch),
            "per-batch" | "batch" => Ok(SelectionScope::PerBatch),
            other => Err(Error::invalid("scope", format!("unknown selection scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr_theta: f64,
    pub lr_eps: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub e_steps_per_batch: usize,
    pub m_steps_per_batch: usize,
    /// Passes of posterior-only updates between warm-up and the first epoch.
    pub posterior_fit_epochs: usize,
    #[serde(serialize_with = "ser_criterion")]
    pub criterion: CriterionKind,
    pub knn_k: usize,
    pub scope: SelectionScope,
    #[serde(serialize_with = "ser_support")]
    pub head_support: HeadSupport,
    /// Drive the curriculum with this constant rate instead of the estimate.
    pub fixed_eps: Option<f64>,
    /// `false` keeps every sample as clean (R = 1).
    pub selection: bool,
    /// Accept a parameter step only if it does not lower the block objective,
    /// halving the step (with momentum reset) until it does.
    pub guarded_ascent: bool,
    /// Record the block objective before and after every E and M block.
    pub trace_objective: bool,
    pub seed: u64,
}

fn ser_criterion<S: serde::Serializer>(c: &CriterionKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(c.name())
}

fn ser_support<S: serde::Serializer>(h: &HeadSupport, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(h.name())
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 10,
            batch_size: 64,
            hidden: 64,
            lr_theta: 0.03,
            lr_eps: 0.001,
            momentum: 0.9,
            lambda: 1.0,
            e_steps_per_batch: 1,
            m_steps_per_batch: 1,
            posterior_fit_epochs: 0,
            criterion: CriterionKind::SmallLoss,
            knn_k: 10,
            scope: SelectionScope::PerEpoch,
            head_support: HeadSupport::ExcludeClean,
            fixed_eps: None,
            selection: true,
            guarded_ascent: false,
            trace_objective: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("e_steps_per_batch", self.e_steps_per_batch),
            ("m_steps_per_batch", self.m_steps_per_batch),
            ("knn_k", self.knn_k),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        for (field, v) in [("lr_theta", self.lr_theta), ("lr_eps", self.lr_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0, 1)"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        if let Some(e) = self.fixed_eps {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::invalid("fixed_eps", "must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Ground truth used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<'a> {
    pub test: &'a CleanDataset,
    pub flip_mask: Option<&'a [bool]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    E,
    M,
}

/// Block objective before and after one E or M block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockTrace {
    pub epoch: usize,
    pub batch: usize,
    pub kind: BlockKind,
    pub before: f64,
    pub after: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: GraphicalModel,
    pub eps_trajectory: Vec<f64>,
    pub records: Vec<EpochRecord>,
    pub trace: Vec<BlockTrace>,
    /// Split used in the last epoch (union over batches in per-batch scope).
    pub final_split: SelectionSplit,
    /// Criterion values behind `final_split` (zeros when selection is off).
    pub final_scores: CriterionScores,
    pub wall_time: Duration,
}

/// Optimizer states for every parameter group.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub clean: OptState,
    pub noisy: OptState,
    pub eps: OptState,
    pub posterior: OptState,
}

impl Optimizers {
    pub fn new(model: &GraphicalModel, lr_theta: f64, lr_eps: f64, momentum: f64) -> Result<Self> {
        Ok(Self {
            clean: OptState::new(model.clean.net.len(), lr_theta, momentum)?,
            noisy: OptState::new(model.noisy.net.len(), lr_theta, momentum)?,
            eps: OptState::new(1, lr_eps, momentum)?,
            posterior: OptState::new(model.posterior.net.len(), lr_theta, momentum)?,
        })
    }
}

fn negate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|g| -g).collect()
}

/// Mean cross-entropy of the observed labels over `idx` (no gradient).
fn mean_ce<D: NoisySamples + ?Sized>(net: &crate::numkit::MlpParams, data: &D, idx: &[usize]) -> Result<f64> {
    let mut tape = Tape::default();
    let mut lp = Vec::new();
    let mut total = 0.0;
    for &i in idx {
        net.forward_tape(data.x(i), &mut tape)?;
        lp.clear();
        lp.extend_from_slice(tape.output());
        log_softmax_in_place(&mut lp);
        total -= lp[data.noisy_label(i)];
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Cross-entropy training of the clean classifier on every observed label.
/// Touches neither the noise rate, the noisy head nor the posterior.
pub fn warm_up<D: NoisySamples + ?Sized>(
    clean: &mut crate::gm::CleanClassifier,
    data: &D,
    epochs: usize,
    batch_size: usize,
    opt: &mut OptState,
    rng: &mut Rng,
) -> Result<()> {
    if epochs == 0 || data.is_empty() {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        for (b, batch) in order.chunks(batch_size.max(1)).enumerate() {
            let mut grad = vec![0.0; clean.net.len()];
            accumulate_constraint(clean, data, batch, 1.0, &mut grad).map_err(|e| Error::Training {
                epoch,
                batch: b,
                source: Box::new(e),
            })?;
            opt.step(clean.net.as_mut_slice(), &grad)?;
        }
    }
    Ok(())
}

/// Outcome of one E or M block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOutcome {
    pub before: f64,
    pub after: f64,
    pub backtracks: usize,
}

const MAX_BACKTRACKS: usize = 40;

/// Gradient ascent on the batch ELBO with respect to the posterior only.
///
/// `before`/`after` are evaluated only when `track` or `guarded` is set
/// (otherwise they are NaN).
pub fn e_step<D: NoisySamples + ?Sized>(
    model: &mut GraphicalModel,
    data: &D,
    batch: &[usize],
    steps: usize,
    opt: &mut OptState,
    guarded: bool,
    track: bool,
) -> Result<BlockOutcome> {
    let mut s = Scratch::default();
    e_step_with(model, data, batch, steps, opt, guarded, track, &mut s)
}

#[allow(clippy::too_many_arguments)]
fn e_step_with<D: NoisySamples + ?Sized>(
    model: &mut GraphicalModel,
    data: &D,
    batch: &[usize],
    steps: usize,
    opt: &mut OptState,
    guarded: bool,
    track: bool,
    s: &mut Scratch,
) -> Result<BlockOutcome> {
    if steps == 0 {
        return Err(Error::invalid("e_steps", "must be at least 1"));
    }
    let mut backtracks = 0;
    let mut before = f64::NAN;
    let mut current = f64::NAN;
    for step in 0..steps {
        let ev = elbo_grads_with(model, data, batch, GradTargets::POSTERIOR, s)?;
        if step == 0 {
            before = ev.mean_elbo;
        }
        current = ev.mean_elbo;
        let neg = negate(&ev.grads.posterior);
        if !guarded {
            opt.step(model.posterior.net.as_mut_slice(), &neg)?;
            continue;
        }
        let saved = model.posterior.net.clone();
        let saved_opt = opt.clone();
        let mut lr = opt.lr;
        loop {
            opt.step(model.posterior.net.as_mut_slice(), &neg)?;
            let after = elbo_grads_with(model, data, batch, GradTargets::NONE, s)?.mean_elbo;
            if after >= current {
                current = after;
                break;
            }
            model.posterior.net = saved.clone();
            *opt = saved_opt.clone();
            opt.reset();
            backtracks += 1;
            lr *= 0.5;
            opt.lr = lr;
            if backtracks >= MAX_BACKTRACKS * steps {
                break;
            }
        }
        opt.lr = saved_opt.lr;
    }
    let after = if guarded {
        current
    } else if track {
        elbo_grads_with(model, data, batch, GradTargets::NONE, s)?.mean_elbo
    } else {
        f64::NAN
    };
    if !before.is_finite() {
        return Err(Error::NonFinite("batch ELBO in E step".into()));
    }
    Ok(BlockOutcome {
        before,
        after,
        backtracks,
    })
}

/// Constrained M-step objective: batch-mean ELBO minus `lambda` times the mean
/// cross-entropy on `clean_idx`, with its gradients for the model groups.
fn m_objective<D: NoisySamples + ?Sized>(
    model: &GraphicalModel,
    data: &D,
    batch: &[usize],
    clean_idx: &[usize],
    lambda: f64,
    grads: bool,
    s: &mut Scratch,
) -> Result<(f64, f64, f64, GmGrads)> {
    let targets = if grads { GradTargets::MODEL } else { GradTargets::NONE };
    let mut ev = elbo_grads_with(model, data, batch, targets, s)?;
    let constraint = if lambda == 0.0 {
        0.0
    } else if grads {
        // Gradient of +(-lambda * CE) added straight into the ascent direction.
        accumulate_constraint(&model.clean, data, clean_idx, -lambda, &mut ev.grads.clean)?
    } else if clean_idx.is_empty() {
        0.0
    } else {
        mean_ce(&model.clean.net, data, clean_idx)?
    };
    let obj = ev.mean_elbo - lambda * constraint;
    if !obj.is_finite() {
        return Err(Error::NonFinite("M-step objective".into()));
    }
    Ok((obj, ev.mean_elbo, constraint, ev.grads))
}

/// Ascent on `ELBO - lambda * L_clean` with respect to the clean classifier,
/// noisy head and eps-logit. The posterior is not touched; the selection in
/// `clean_idx` stays fixed for the whole block.
#[allow(clippy::too_many_arguments)]
pub fn m_step<D: NoisySamples + ?Sized>(
    model: &mut GraphicalModel,
    data: &D,
    batch: &[usize],
    clean_idx: &[usize],
    lambda: f64,
    steps: usize,
    opts: &mut Optimizers,
    guarded: bool,
    track: bool,
) -> Result<(BlockOutcome, f64)> {
    let mut s = Scratch::default();
    m_step_with(model, data, batch, clean_idx, lambda, steps, opts, guarded, track, &mut s)
}

#[allow(clippy::too_many_arguments)]
fn m_step_with<D: NoisySamples + ?Sized>(
    model: &mut GraphicalModel,
    data: &D,
    batch: &[usize],
    clean_idx: &[usize],
    lambda: f64,
    steps: usize,
    opts: &mut Optimizers,
    guarded: bool,
    track: bool,
    s: &mut Scratch,
) -> Result<(BlockOutcome, f64)> {
    if steps == 0 {
        return Err(Error::invalid("m_steps", "must be at least 1"));
    }
    let mut backtracks = 0;
    let mut before = f64::NAN;
    let mut current = f64::NAN;
    let mut first_constraint = 0.0;
    for step in 0..steps {
        let (obj, _, constraint, g) = m_objective(model, data, batch, clean_idx, lambda, true, s)?;
        if step == 0 {
            before = obj;
            first_constraint = constraint;
        }
        current = obj;
        let (gc, gn, ge) = (negate(&g.clean), negate(&g.noisy), [-g.eps_logit]);
        let apply = |model: &mut GraphicalModel, opts: &mut Optimizers| -> Result<()> {
            opts.clean.step(model.clean.net.as_mut_slice(), &gc)?;
            opts.noisy.step(model.noisy.net.as_mut_slice(), &gn)?;
            let mut logit = [model.rate.logit];
            opts.eps.step(&mut logit, &ge)?;
            model.rate.logit = logit[0];
            Ok(())
        };
        if !guarded {
            apply(model, opts)?;
            continue;
        }
        let saved = model.clone();
        let saved_opts = opts.clone();
        let mut scale = 1.0;
        loop {
            apply(model, opts)?;
            let after = m_objective(model, data, batch, clean_idx, lambda, false, s)?.0;
            if after >= current {
                current = after;
                break;
            }
            *model = saved.clone();
            *opts = saved_opts.clone();
            for o in [&mut opts.clean, &mut opts.noisy, &mut opts.eps] {
                o.reset();
            }
            backtracks += 1;
            scale *= 0.5;
            opts.clean.lr = saved_opts.clean.lr * scale;
            opts.noisy.lr = saved_opts.noisy.lr * scale;
            opts.eps.lr = saved_opts.eps.lr * scale;
            if backtracks >= MAX_BACKTRACKS * steps {
                break;
            }
        }
        opts.clean.lr = saved_opts.clean.lr;
        opts.noisy.lr = saved_opts.noisy.lr;
        opts.eps.lr = saved_opts.eps.lr;
    }
    let after = if guarded {
        current
    } else if track {
        m_objective(model, data, batch, clean_idx, lambda, false, s)?.0
    } else {
        f64::NAN
    };
    Ok((
        BlockOutcome {
            before,
            after,
            backtracks,
        },
        first_constraint,
    ))
}

/// View of a subset of samples, used for per-batch scoring.
struct Subset<'a, D: ?Sized> {
    data: &'a D,
    idx: &'a [usize],
}

impl<D: NoisySamples + ?Sized> NoisySamples for Subset<'_, D> {
    fn len(&self) -> usize {
        self.idx.len()
    }
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn num_classes(&self) -> usize {
        self.data.num_classes()
    }
    fn x(&self, i: usize) -> &[f64] {
        self.data.x(self.idx[i])
    }
    fn noisy_label(&self, i: usize) -> usize {
        self.data.noisy_label(self.idx[i])
    }
}

fn criterion_scores<D: NoisySamples + ?Sized>(
    config: &TrainConfig,
    model: &GraphicalModel,
    data: &D,
    idx: &[usize],
) -> Result<Vec<f64>> {
    match config.criterion {
        CriterionKind::SmallLoss => small_loss_scores(&model.clean, data, idx),
        CriterionKind::Knn => {
            let sub = Subset { data, idx };
            let k = config.knn_k.min(idx.len().saturating_sub(1)).max(1);
            if idx.len() < 2 {
                return Ok(vec![0.0; idx.len()]);
            }
            Ok(knn_criterion(&sub, k)?.scores)
        }
    }
}

/// Run the full procedure: initialise, warm up, then `epochs` rounds of
/// selection, E step and constrained M step over shuffled mini-batches.
pub fn train<D: NoisySamples + ?Sized>(config: &TrainConfig, data: &D, eval: Evaluation<'_>) -> Result<TrainResult> {
    train_with_sink(config, data, eval, &mut |_, _| Ok(()))
}

/// Convenience wrapper for a generated dataset with ground truth.
pub fn train_dataset(config: &TrainConfig, train_ds: &NoisyDataset, test_ds: &CleanDataset) -> Result<TrainResult> {
    train(
        config,
        train_ds,
        Evaluation {
            test: test_ds,
            flip_mask: Some(train_ds.flip_mask()),
        },
    )
}

/// As [`train`], calling `sink` with each epoch record and the current model.
pub fn train_with_sink<D: NoisySamples + ?Sized>(
    config: &TrainConfig,
    data: &D,
    eval: Evaluation<'_>,
    sink: &mut dyn FnMut(&EpochRecord, &GraphicalModel) -> Result<()>,
) -> Result<TrainResult> {
    config.validate()?;
    let started = Instant::now();
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("train_ds", "training set is empty"));
    }
    if eval.test.dim() != data.dim() || eval.test.num_classes() != data.num_classes() {
        return Err(Error::invalid("test_ds", "test set dimensions differ from the training set"));
    }
    if let Some(f) = eval.flip_mask {
        if f.len() != n {
            return Err(Error::shape("flip mask", n, f.len()));
        }
    }
    let root = Rng::new(config.seed);
    let mut init_rng = root.derive("init");
    let mut shuffle_rng = root.derive("shuffle");
    let mut model = GraphicalModel::init(data.dim(), data.num_classes(), config.hidden, config.head_support, &mut init_rng)?;

    let mut warm_opt = OptState::new(model.clean.net.len(), config.lr_theta, config.momentum)?;
    warm_up(&mut model.clean, data, config.warmup_epochs, config.batch_size, &mut warm_opt, &mut shuffle_rng)?;

    let mut opts = Optimizers::new(&model, config.lr_theta, config.lr_eps, config.momentum)?;
    let mut scratch = Scratch::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.posterior_fit_epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            e_step_with(&mut model, data, batch, 1, &mut opts.posterior, false, false, &mut scratch)?;
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut trajectory = Vec::with_capacity(config.epochs);
    let mut trace = Vec::new();
    let mut final_selection = vec![false; n];
    let mut final_scores = vec![0.0; n];
    let mut final_rate = 1.0;
    let track = config.trace_objective;
    let knn_fixed = config.criterion == CriterionKind::Knn && config.scope == SelectionScope::PerEpoch;
    let mut knn_cache: Option<Vec<f64>> = None;

    for epoch in 0..config.epochs {
        let wrap = |batch: usize| move |e: Error| Error::Training {
            epoch,
            batch,
            source: Box::new(e),
        };
        shuffle_rng.shuffle(&mut order);
        let curriculum = |model: &GraphicalModel| {
            if !config.selection {
                1.0
            } else {
                curriculum_rate(config.fixed_eps.unwrap_or_else(|| model.eps()))
            }
        };

        let mut selected = vec![false; n];
        let mut epoch_scores = vec![0.0; n];
        let epoch_rate = curriculum(&model);
        if config.scope == SelectionScope::PerEpoch {
            let rate = epoch_rate;
            let scores = if knn_fixed {
                if knn_cache.is_none() {
                    knn_cache = Some(criterion_scores(config, &model, data, &all).map_err(wrap(0))?);
                }
                knn_cache.clone().unwrap()
            } else if config.selection {
                criterion_scores(config, &model, data, &all).map_err(wrap(0))?
            } else {
                vec![0.0; n]
            };
            let split = select_split(
                &CriterionScores {
                    scores: scores.clone(),
                    kind: config.criterion,
                },
                rate,
            );
            for &i in split.clean() {
                selected[i] = true;
            }
            epoch_scores = scores;
        }

        let mut elbo_sum = 0.0;
        let mut constraint_sum = 0.0;
        let mut constraint_count = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let clean_idx: Vec<usize> = match config.scope {
                SelectionScope::PerEpoch => batch.iter().cloned().filter(|&i| selected[i]).collect(),
                SelectionScope::PerBatch => {
                    let rate = curriculum(&model);
                    let keep = clean_count(rate, batch.len());
                    if keep == batch.len() {
                        batch.to_vec()
                    } else {
                        let scores = criterion_scores(config, &model, data, batch).map_err(wrap(b))?;
                        let mut pos: Vec<usize> = (0..batch.len()).collect();
                        pos.sort_by(|&a, &c| scores[a].total_cmp(&scores[c]).then(batch[a].cmp(&batch[c])));
                        for (&i, &s) in batch.iter().zip(&scores) {
                            epoch_scores[i] = s;
                        }
                        pos[..keep].iter().map(|&p| batch[p]).collect()
                    }
                }
            };
            if config.scope == SelectionScope::PerBatch {
                for &i in &clean_idx {
                    selected[i] = true;
                }
            }

            let e = e_step_with(
                &mut model,
                data,
                batch,
                config.e_steps_per_batch,
                &mut opts.posterior,
                config.guarded_ascent,
                track,
                &mut scratch,
            )
            .map_err(wrap(b))?;
            elbo_sum += e.before * batch.len() as f64;
            let (m, constraint) = m_step_with(
                &mut model,
                data,
                batch,
                &clean_idx,
                config.lambda,
                config.m_steps_per_batch,
                &mut opts,
                config.guarded_ascent,
                track,
                &mut scratch,
            )
            .map_err(wrap(b))?;
            if !clean_idx.is_empty() {
                constraint_sum += constraint * clean_idx.len() as f64;
                constraint_count += clean_idx.len();
            }
            if track || config.guarded_ascent {
                trace.push(BlockTrace {
                    epoch,
                    batch: b,
                    kind: BlockKind::E,
                    before: e.before,
                    after: e.after,
                    backtracks: e.backtracks,
                });
                trace.push(BlockTrace {
                    epoch,
                    batch: b,
                    kind: BlockKind::M,
                    before: m.before,
                    after: m.after,
                    backtracks: m.backtracks,
                });
            }
        }

        let eps_hat = model.eps();
        if !(eps_hat > 0.0 && eps_hat < 1.0) {
            return Err(wrap(0)(Error::NonFinite(format!("eps estimate left (0, 1): {eps_hat}"))));
        }
        let implied = match model.noisy.support {
            HeadSupport::ExcludeClean => eps_hat,
            HeadSupport::Full => implied_flip_rate(&model, data).map_err(wrap(0))?,
        };
        let (precision, recall, f1, flags) = match eval.flip_mask {
            Some(mask) => {
                let m = selection_metrics_mask(&selected, mask)?;
                (m.precision, m.recall, m.f1, m.flags)
            }
            None => (0.0, 0.0, 0.0, FLAG_NO_GROUND_TRUTH),
        };
        let record = EpochRecord {
            epoch,
            test_accuracy: test_accuracy(&model.clean, eval.test)?,
            eps_hat,
            implied_flip_rate: implied,
            precision,
            recall,
            f1,
            clean_ratio: selected.iter().filter(|&&s| s).count() as f64 / n as f64,
            mean_elbo: elbo_sum / n as f64,
            mean_constraint: if constraint_count > 0 {
                constraint_sum / constraint_count as f64
            } else {
                0.0
            },
            degenerate_flags: flags,
        };
        sink(&record, &model)?;
        trajectory.push(eps_hat);
        records.push(record);
        final_selection = selected;
        final_scores = epoch_scores;
        final_rate = epoch_rate;
    }

    Ok(TrainResult {
        model,
        eps_trajectory: trajectory,
        records,
        trace,
        final_split: SelectionSplit::from_mask(&final_selection, final_rate),
        final_scores: CriterionScores {
            scores: final_scores,
            kind: config.criterion,
        },
        wall_time: started.elapsed(),
    })
}
