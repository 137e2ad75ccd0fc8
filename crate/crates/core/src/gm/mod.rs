//! Graphical model for noisy labels.
//!
//! A clean label `y ~ Cat(f_y(x))` is drawn first; the observed label then
//! follows `Cat(eps * f_noisy(x, y) + (1 - eps) * onehot(y))`. The noisy head
//! sees the concatenation `(x, onehot(y))`. An amortized posterior
//! `q(y | x, y_hat)` over the latent clean label closes the variational EM
//! loop. Every expectation over the latent label is an exact `C`-term sum.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::datagen::NoisySamples;
use crate::error::{Error, Result};
use crate::numkit::{log_sigmoid, log_softmax_in_place, logsumexp, sigmoid, softmax_in_place, MlpParams, Rng, Tape};

/// Which classes the noisy head may put mass on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadSupport {
    /// Softmax over all `C` classes, including the clean one.
    Full,
    /// The clean class's logit is masked, so the head only distributes the
    /// flip mass over the other `C - 1` classes and `eps` is exactly the
    /// per-instance mislabel probability.
    ExcludeClean,
}

impl HeadSupport {
    pub fn code(self) -> u8 {
        match self {
            HeadSupport::Full => 0,
            HeadSupport::ExcludeClean => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadSupport::Full),
            1 => Some(HeadSupport::ExcludeClean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadSupport::Full => "full",
            HeadSupport::ExcludeClean => "exclude-clean",
        }
    }
}

impl std::str::FromStr for HeadSupport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HeadSupport::Full),
            "exclude-clean" | "exclude_clean" => Ok(HeadSupport::ExcludeClean),
            other => Err(Error::invalid("head_support", format!("unknown value `{other}`"))),
        }
    }
}

/// `f_y : x -> logits[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanClassifier {
    pub net: MlpParams,
}

/// `f_noisy : (x, onehot(y)) -> logits[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyHead {
    pub net: MlpParams,
    pub support: HeadSupport,
}

/// Noise rate stored as a free logit; `eps = sigmoid(logit)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRate {
    pub logit: f64,
}

impl NoiseRate {
    pub fn from_rate(eps: f64) -> Self {
        Self {
            logit: crate::numkit::logit(eps),
        }
    }

    pub fn eps(self) -> f64 {
        sigmoid(self.logit)
    }

    fn ln_eps(self) -> f64 {
        log_sigmoid(self.logit)
    }

    fn ln_one_minus_eps(self) -> f64 {
        log_sigmoid(-self.logit)
    }
}

/// `q(y | x, y_hat) : (x, onehot(y_hat)) -> logits[C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub net: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalModel {
    pub clean: CleanClassifier,
    pub noisy: NoisyHead,
    pub rate: NoiseRate,
    pub posterior: VariationalPosterior,
}

impl GraphicalModel {
    /// He-initialized networks with one hidden layer of `hidden` units and an
    /// eps-logit drawn uniformly from `[-1, 1]`.
    pub fn init(dim: usize, classes: usize, hidden: usize, support: HeadSupport, rng: &mut Rng) -> Result<Self> {
        let clean = MlpParams::init_he(&[dim, hidden, classes], rng)?;
        let noisy = MlpParams::init_he(&[dim + classes, hidden, classes], rng)?;
        let posterior = MlpParams::init_he(&[dim + classes, hidden, classes], rng)?;
        let logit = rng.uniform_range(-1.0, 1.0);
        Self::from_parts(clean, noisy, support, NoiseRate { logit }, posterior)
    }

    pub fn from_parts(
        clean: MlpParams,
        noisy: MlpParams,
        support: HeadSupport,
        rate: NoiseRate,
        posterior: MlpParams,
    ) -> Result<Self> {
        let d = clean.d_in();
        let c = clean.d_out();
        if c < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        for (what, net) in [("noisy head", &noisy), ("posterior", &posterior)] {
            if net.d_in() != d + c {
                return Err(Error::Shape {
                    context: if what == "noisy head" { "noisy head input" } else { "posterior input" },
                    expected: d + c,
                    got: net.d_in(),
                });
            }
            if net.d_out() != c {
                return Err(Error::shape("network output", c, net.d_out()));
            }
        }
        if !rate.logit.is_finite() {
            return Err(Error::NonFinite("eps logit".into()));
        }
        Ok(Self {
            clean: CleanClassifier { net: clean },
            noisy: NoisyHead { net: noisy, support },
            rate,
            posterior: VariationalPosterior { net: posterior },
        })
    }

    pub fn dim(&self) -> usize {
        self.clean.net.d_in()
    }

    pub fn num_classes(&self) -> usize {
        self.clean.net.d_out()
    }

    pub fn eps(&self) -> f64 {
        self.rate.eps()
    }

    /// All parameters in a single vector: clean, noisy, eps-logit, posterior.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.clean.net.as_slice());
        v.extend_from_slice(self.noisy.net.as_slice());
        v.push(self.rate.logit);
        v.extend_from_slice(self.posterior.net.as_slice());
        v
    }

    pub fn num_params(&self) -> usize {
        self.clean.net.len() + self.noisy.net.len() + 1 + self.posterior.net.len()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("GraphicalModel::set_flat_params", self.num_params(), flat.len()));
        }
        let (a, rest) = flat.split_at(self.clean.net.len());
        let (b, rest) = rest.split_at(self.noisy.net.len());
        self.clean.net.as_mut_slice().copy_from_slice(a);
        self.noisy.net.as_mut_slice().copy_from_slice(b);
        self.rate.logit = rest[0];
        self.posterior.net.as_mut_slice().copy_from_slice(&rest[1..]);
        Ok(())
    }
}

/// Gradients of an objective with respect to every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GmGrads {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub eps_logit: f64,
    pub posterior: Vec<f64>,
}

impl GmGrads {
    pub fn zeros(model: &GraphicalModel) -> Self {
        Self {
            clean: vec![0.0; model.clean.net.len()],
            noisy: vec![0.0; model.noisy.net.len()],
            eps_logit: 0.0,
            posterior: vec![0.0; model.posterior.net.len()],
        }
    }

    /// Same layout as [`GraphicalModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.clean.clone();
        v.extend_from_slice(&self.noisy);
        v.push(self.eps_logit);
        v.extend_from_slice(&self.posterior);
        v
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.clean.iter_mut().chain(&mut self.noisy).chain(&mut self.posterior) {
            *v *= s;
        }
        self.eps_logit *= s;
    }
}

fn one_hot_index(y: &[f64], classes: usize) -> Result<usize> {
    if y.len() != classes {
        return Err(Error::shape("one-hot label", classes, y.len()));
    }
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::invalid("y", "label vector is not one-hot"));
        }
    }
    hot.ok_or_else(|| Error::invalid("y", "label vector is not one-hot"))
}

pub fn one_hot(c: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[c] = 1.0;
    v
}

fn concat_input(buf: &mut Vec<f64>, x: &[f64], label: usize, classes: usize) {
    buf.clear();
    buf.extend_from_slice(x);
    buf.resize(x.len() + classes, 0.0);
    buf[x.len() + label] = 1.0;
}

fn check_x(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::shape("feature vector", dim, x.len()));
    }
    Ok(())
}

/// `softmax(f_y(x))`.
pub fn clean_prob(clean: &CleanClassifier, x: &[f64]) -> Result<Vec<f64>> {
    let mut p = clean.net.forward(x)?;
    softmax_in_place(&mut p);
    Ok(p)
}

/// Head distribution `f_noisy(x, y)` for clean class `y` as probabilities.
fn head_prob(head: &NoisyHead, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let c = head.net.d_out();
    let mut input = Vec::new();
    concat_input(&mut input, x, y, c);
    let mut v = head.net.forward(&input)?;
    if head.support == HeadSupport::ExcludeClean {
        v[y] = f64::NEG_INFINITY;
    }
    softmax_in_place(&mut v);
    Ok(v)
}

/// `eps * f_noisy(x, y) + (1 - eps) * y` for a one-hot `y`.
pub fn noisy_mixture(head: &NoisyHead, eps: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let c = head.net.d_out();
    let yi = one_hot_index(y, c)?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::invalid("eps", format!("must be in [0, 1], got {eps}")));
    }
    let g = head_prob(head, x, yi)?;
    Ok(g.iter().zip(y).map(|(gi, yi)| eps * gi + (1.0 - eps) * yi).collect())
}

/// Draw `(y, y_hat)` following the generative process for a given `x`.
pub fn sample_generative(model: &GraphicalModel, x: &[f64], rng: &mut Rng) -> Result<(usize, usize)> {
    let c = model.num_classes();
    let p = clean_prob(&model.clean, x)?;
    let y = rng.categorical(&p);
    let mix = noisy_mixture(&model.noisy, model.eps(), x, &one_hot(y, c))?;
    Ok((y, rng.categorical(&mix)))
}

/// `softmax(q_net(x, onehot(y_hat)))`.
pub fn posterior_q(posterior: &VariationalPosterior, x: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    let c = posterior.net.d_out();
    let yi = one_hot_index(y_hat, c)?;
    let mut input = Vec::new();
    concat_input(&mut input, x, yi, c);
    let mut q = posterior.net.forward(&input)?;
    softmax_in_place(&mut q);
    Ok(q)
}

/// Per-class joint log-terms `ln p(y=c | x) + ln p(y_hat | x, y=c)`.
fn joint_log_terms(clean: &CleanClassifier, head: &NoisyHead, rate: NoiseRate, x: &[f64], y_hat: usize) -> Result<Vec<f64>> {
    let c = clean.net.d_out();
    check_x(x, clean.net.d_in())?;
    if y_hat >= c {
        return Err(Error::invalid("y_hat", format!("class {y_hat} out of range 0..{c}")));
    }
    let mut lp = clean.net.forward(x)?;
    log_softmax_in_place(&mut lp);
    let mut input = Vec::new();
    let mut out = Vec::with_capacity(c);
    for (k, lpk) in lp.iter().enumerate() {
        concat_input(&mut input, x, k, c);
        let mut v = head.net.forward(&input)?;
        if head.support == HeadSupport::ExcludeClean {
            v[k] = f64::NEG_INFINITY;
        }
        log_softmax_in_place(&mut v);
        out.push(lpk + ln_mixture(rate, v[y_hat], k == y_hat));
    }
    Ok(out)
}

/// `ln(eps * g + (1 - eps) * [c == y_hat])` from `ln g`.
fn ln_mixture(rate: NoiseRate, ln_g: f64, same: bool) -> f64 {
    let noisy = rate.ln_eps() + ln_g;
    if same {
        logsumexp(&[rate.ln_one_minus_eps(), noisy])
    } else {
        noisy
    }
}

/// Exact posterior over the clean label by enumeration over the `C` classes.
pub fn exact_posterior(clean: &CleanClassifier, head: &NoisyHead, rate: NoiseRate, x: &[f64], y_hat: usize) -> Result<Vec<f64>> {
    let mut t = joint_log_terms(clean, head, rate, x, y_hat)?;
    if t.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("posterior normalizer is zero".into()));
    }
    softmax_in_place(&mut t);
    Ok(t)
}

/// `ln sum_c p(y=c | x) p(y_hat | x, y=c)`, evaluated in log space.
pub fn marginal_loglik(clean: &CleanClassifier, head: &NoisyHead, rate: NoiseRate, x: &[f64], y_hat: usize) -> Result<f64> {
    Ok(logsumexp(&joint_log_terms(clean, head, rate, x, y_hat)?))
}

/// ELBO for an explicit distribution `q` over the clean label.
pub fn elbo_with_q(clean: &CleanClassifier, head: &NoisyHead, rate: NoiseRate, q: &[f64], x: &[f64], y_hat: usize) -> Result<f64> {
    let t = joint_log_terms(clean, head, rate, x, y_hat)?;
    if q.len() != t.len() {
        return Err(Error::shape("q", t.len(), q.len()));
    }
    Ok(q.iter()
        .zip(&t)
        .map(|(&qc, &tc)| if qc > 0.0 { qc * (tc - qc.ln()) } else { 0.0 })
        .sum())
}

/// `E_q[ln p(y|x) + ln p(y_hat|x,y)] + H(q)` with `q` from the amortized posterior.
pub fn elbo(
    clean: &CleanClassifier,
    head: &NoisyHead,
    rate: NoiseRate,
    posterior: &VariationalPosterior,
    x: &[f64],
    y_hat: usize,
) -> Result<f64> {
    let c = clean.net.d_out();
    if y_hat >= c {
        return Err(Error::invalid("y_hat", format!("class {y_hat} out of range 0..{c}")));
    }
    let q = posterior_q(posterior, x, &one_hot(y_hat, c))?;
    elbo_with_q(clean, head, rate, &q, x, y_hat)
}

/// Which parameter groups to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradTargets {
    pub clean: bool,
    pub noisy: bool,
    pub eps: bool,
    pub posterior: bool,
}

impl GradTargets {
    pub const ALL: Self = Self {
        clean: true,
        noisy: true,
        eps: true,
        posterior: true,
    };
    /// E step: the posterior only.
    pub const POSTERIOR: Self = Self {
        clean: false,
        noisy: false,
        eps: false,
        posterior: true,
    };
    /// M step: everything but the posterior.
    pub const MODEL: Self = Self {
        clean: true,
        noisy: true,
        eps: true,
        posterior: false,
    };
    pub const NONE: Self = Self {
        clean: false,
        noisy: false,
        eps: false,
        posterior: false,
    };
}

/// Mean ELBO over a batch and its gradients.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub mean_elbo: f64,
    pub grads: GmGrads,
}

/// Reusable buffers for per-sample evaluation.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    input: Vec<f64>,
    clean_tape: Tape,
    head_tapes: Vec<Tape>,
    post_tape: Tape,
    lp: Vec<f64>,
    p: Vec<f64>,
    ln_g: Vec<Vec<f64>>,
    lm: Vec<f64>,
    lq: Vec<f64>,
    q: Vec<f64>,
    up: Vec<f64>,
}

/// ELBO of a single sample, optionally accumulating `weight *` its gradient.
fn sample_elbo(
    model: &GraphicalModel,
    x: &[f64],
    y_hat: usize,
    targets: GradTargets,
    weight: f64,
    grads: &mut GmGrads,
    s: &mut Scratch,
) -> Result<f64> {
    let c = model.num_classes();
    check_x(x, model.dim())?;
    if y_hat >= c {
        return Err(Error::invalid("y_hat", format!("class {y_hat} out of range 0..{c}")));
    }
    let rate = model.rate;
    let eps = rate.eps();
    let exclude = model.noisy.support == HeadSupport::ExcludeClean;

    model.clean.net.forward_tape(x, &mut s.clean_tape)?;
    s.lp.clear();
    s.lp.extend_from_slice(s.clean_tape.output());
    log_softmax_in_place(&mut s.lp);

    s.head_tapes.resize_with(c, Tape::default);
    s.ln_g.resize_with(c, Vec::new);
    s.lm.clear();
    for k in 0..c {
        concat_input(&mut s.input, x, k, c);
        model.noisy.net.forward_tape(&s.input, &mut s.head_tapes[k])?;
        let lg = &mut s.ln_g[k];
        lg.clear();
        lg.extend_from_slice(s.head_tapes[k].output());
        if exclude {
            lg[k] = f64::NEG_INFINITY;
        }
        log_softmax_in_place(lg);
        s.lm.push(ln_mixture(rate, lg[y_hat], k == y_hat));
    }

    concat_input(&mut s.input, x, y_hat, c);
    model.posterior.net.forward_tape(&s.input, &mut s.post_tape)?;
    s.lq.clear();
    s.lq.extend_from_slice(s.post_tape.output());
    log_softmax_in_place(&mut s.lq);
    s.q.clear();
    s.q.extend(s.lq.iter().map(|v| v.exp()));

    let mut value = 0.0;
    for k in 0..c {
        value += s.q[k] * (s.lp[k] + s.lm[k] - s.lq[k]);
    }
    if !value.is_finite() {
        let term = if s.lp.iter().any(|v| !v.is_finite()) {
            "clean log-probabilities"
        } else if s.lm.iter().any(|v| !v.is_finite()) {
            "mixture log-likelihood"
        } else {
            "posterior entropy"
        };
        return Err(Error::NonFinite(format!("ELBO term: {term}")));
    }

    if targets.clean {
        s.p.clear();
        s.p.extend(s.lp.iter().map(|v| v.exp()));
        s.up.clear();
        s.up.extend(s.q.iter().zip(&s.p).map(|(q, p)| weight * (q - p)));
        model.clean.net.backward(&s.clean_tape, &s.up, &mut grads.clean, false)?;
    }

    if targets.noisy || targets.eps {
        let ln_eps = rate.ln_eps();
        for k in 0..c {
            let qk = s.q[k];
            let g_yhat = s.ln_g[k][y_hat].exp();
            // d ln m_k / d(eps-logit) and the factor multiplying (e_yhat - g) for the head.
            let (d_logit, head_factor) = if k == y_hat {
                let m = s.lm[k].exp();
                (-(1.0 - g_yhat) * eps * (1.0 - eps) / m, (ln_eps + s.ln_g[k][y_hat] - s.lm[k]).exp())
            } else {
                (1.0 - eps, 1.0)
            };
            if targets.eps {
                grads.eps_logit += weight * qk * d_logit;
            }
            if targets.noisy {
                let f = weight * qk * head_factor;
                if f == 0.0 {
                    continue;
                }
                s.up.clear();
                s.up.extend(s.ln_g[k].iter().enumerate().map(|(j, lg)| {
                    let g = lg.exp();
                    f * (if j == y_hat { 1.0 } else { 0.0 } - g)
                }));
                model.noisy.net.backward(&s.head_tapes[k], &s.up, &mut grads.noisy, false)?;
            }
        }
    }

    if targets.posterior {
        // dELBO/dq_k = a_k - ln q_k - 1; chain through softmax.
        let mut mean_b = 0.0;
        for k in 0..c {
            mean_b += s.q[k] * (s.lp[k] + s.lm[k] - s.lq[k]);
        }
        s.up.clear();
        for k in 0..c {
            let b = s.lp[k] + s.lm[k] - s.lq[k];
            s.up.push(weight * s.q[k] * (b - mean_b));
        }
        model.posterior.net.backward(&s.post_tape, &s.up, &mut grads.posterior, false)?;
    }
    Ok(value)
}

/// Mean ELBO over `idx` with gradients for the groups in `targets`.
pub fn elbo_grads_for<D: NoisySamples + ?Sized>(
    model: &GraphicalModel,
    data: &D,
    idx: &[usize],
    targets: GradTargets,
) -> Result<ElboEval> {
    let mut s = Scratch::default();
    elbo_grads_with(model, data, idx, targets, &mut s)
}

pub(crate) fn elbo_grads_with<D: NoisySamples + ?Sized>(
    model: &GraphicalModel,
    data: &D,
    idx: &[usize],
    targets: GradTargets,
    s: &mut Scratch,
) -> Result<ElboEval> {
    if idx.is_empty() {
        return Err(Error::invalid("batch", "batch is empty"));
    }
    let mut grads = GmGrads::zeros(model);
    let w = 1.0 / idx.len() as f64;
    let mut total = 0.0;
    for &i in idx {
        total += sample_elbo(model, data.x(i), data.noisy_label(i), targets, w, &mut grads, s)?;
    }
    let any = GradTargets::NONE != targets;
    if any && grads.flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ELBO gradient".into()));
    }
    Ok(ElboEval {
        mean_elbo: total * w,
        grads,
    })
}

/// Exact gradients of the batch-mean ELBO with respect to all parameter groups.
pub fn elbo_grads<D: NoisySamples + ?Sized>(model: &GraphicalModel, data: &D, idx: &[usize]) -> Result<ElboEval> {
    elbo_grads_for(model, data, idx, GradTargets::ALL)
}

/// Mean ELBO over `idx`, no gradients.
pub fn mean_elbo<D: NoisySamples + ?Sized>(model: &GraphicalModel, data: &D, idx: &[usize]) -> Result<f64> {
    Ok(elbo_grads_for(model, data, idx, GradTargets::NONE)?.mean_elbo)
}

/// Mislabel probability the model implies, averaged over the data under its own posterior:
/// `eps * mean_i sum_c q_i(c) (1 - f_noisy(x_i, c)[c])`.
pub fn implied_flip_rate<D: NoisySamples + ?Sized>(model: &GraphicalModel, data: &D) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let c = model.num_classes();
    let eps = model.eps();
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.x(i);
        let q = posterior_q(&model.posterior, x, &one_hot(data.noisy_label(i), c))?;
        for (k, qk) in q.iter().enumerate() {
            let g = head_prob(&model.noisy, x, k)?;
            total += qk * (1.0 - g[k]);
        }
    }
    Ok(eps * total / data.len() as f64)
}
