//! Dense feed-forward network with rectifier hidden layers and an explicit
//! reverse pass.
//!
//! Parameters live in one flat buffer so optimizers and finite-difference
//! checks can treat a network as a plain vector. Layer `k` occupies a weight
//! block of shape `[out x in]` (row-major) followed by its bias `[out]`.

use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

/// Borrowed view of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub weights: &'a [f64],
    pub bias: &'a [f64],
    pub out_width: usize,
    pub in_width: usize,
}

/// Activations recorded by a forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    // acts[0] is the input; acts[k] the rectified output of layer k-1.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpParams {
    /// All-zero network with the given layer widths `[d_in, hidden.., d_out]`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("widths", "need at least input and output width"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("widths", "layer widths must be positive"));
        }
        Ok(Self {
            widths: widths.to_vec(),
            data: vec![0.0; param_count(widths)],
        })
    }

    /// He-scaled normal weights (std = sqrt(2 / in_width)), zero biases.
    pub fn init_he(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let (inp, out) = (w[0], w[1]);
            let std = (2.0 / inp as f64).sqrt();
            for v in &mut p.data[off..off + inp * out] {
                *v = std * rng.normal();
            }
            off += inp * out + out;
        }
        Ok(p)
    }

    /// Single affine layer `W x + b` with `W` given row-major `[out x in]`.
    pub fn linear(weights: &[f64], bias: &[f64]) -> Result<Self> {
        let out = bias.len();
        if out == 0 || weights.len() % out != 0 || weights.is_empty() {
            return Err(Error::shape("MlpParams::linear", out, weights.len()));
        }
        let inp = weights.len() / out;
        let mut data = weights.to_vec();
        data.extend_from_slice(bias);
        Ok(Self {
            widths: vec![inp, out],
            data,
        })
    }

    /// Rebuild from widths and a flat parameter buffer.
    pub fn from_flat(widths: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(widths)?;
        if data.len() != p.data.len() {
            return Err(Error::shape("MlpParams::from_flat", p.data.len(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MlpParams::from_flat".into()));
        }
        p.data = data;
        Ok(p)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn layer(&self, k: usize) -> Layer<'_> {
        let off: usize = param_count(&self.widths[..=k]);
        let (inp, out) = (self.widths[k], self.widths[k + 1]);
        Layer {
            weights: &self.data[off..off + inp * out],
            bias: &self.data[off + inp * out..off + inp * out + out],
            out_width: out,
            in_width: inp,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = Layer<'_>> + '_ {
        (0..self.num_layers()).map(move |k| self.layer(k))
    }

    /// Logits for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape)?;
        Ok(tape.out)
    }

    /// Forward pass that records what [`MlpParams::backward`] needs.
    pub fn forward_tape(&self, x: &[f64], tape: &mut Tape) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::shape("mlp_forward input", self.d_in(), x.len()));
        }
        let n = self.num_layers();
        tape.acts.resize(n, Vec::new());
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let mut off = 0;
        for k in 0..n {
            let (inp, out) = (self.widths[k], self.widths[k + 1]);
            let w = &self.data[off..off + inp * out];
            let b = &self.data[off + inp * out..off + inp * out + out];
            off += inp * out + out;
            let last = k + 1 == n;
            let mut z = std::mem::take(if last { &mut tape.out } else { &mut tape.acts[k + 1] });
            z.clear();
            let a = &tape.acts[k];
            for (row, bias) in w.chunks_exact(inp).zip(b) {
                let s: f64 = row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>() + bias;
                z.push(if last { s } else { s.max(0.0) });
            }
            if last {
                tape.out = z;
            } else {
                tape.acts[k + 1] = z;
            }
        }
        Ok(())
    }

    /// Reverse pass for `logits . upstream`. Parameter gradients are *added*
    /// into `grads` (same flat layout as the parameters); returns the gradient
    /// with respect to the input if `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if upstream.len() != self.d_out() {
            return Err(Error::shape("backprop upstream", self.d_out(), upstream.len()));
        }
        if grads.len() != self.data.len() {
            return Err(Error::shape("backprop grads", self.data.len(), grads.len()));
        }
        let n = self.num_layers();
        let mut delta = upstream.to_vec();
        let mut end = self.data.len();
        for k in (0..n).rev() {
            let (inp, out) = (self.widths[k], self.widths[k + 1]);
            let off = end - (inp * out + out);
            end = off;
            let a = &tape.acts[k];
            {
                let (gw, gb) = grads[off..off + inp * out + out].split_at_mut(inp * out);
                for ((grow, gbi), &d) in gw.chunks_exact_mut(inp).zip(gb.iter_mut()).zip(&delta) {
                    if d == 0.0 {
                        continue;
                    }
                    *gbi += d;
                    for (g, ai) in grow.iter_mut().zip(a) {
                        *g += d * ai;
                    }
                }
            }
            if k == 0 && !want_input {
                break;
            }
            let w = &self.data[off..off + inp * out];
            let mut prev = vec![0.0; inp];
            for (row, &d) in w.chunks_exact(inp).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            if k > 0 {
                // Rectifier derivative: pass only where the activation was positive.
                for (p, ai) in prev.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(if want_input { Some(delta) } else { None })
    }
}

/// Gradients of `mlp_forward(params, x) . upstream` with respect to the
/// parameters (flat layout) and the input.
pub fn backprop(params: &MlpParams, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::default();
    params.forward_tape(x, &mut tape)?;
    let mut grads = vec![0.0; params.len()];
    let input = params
        .backward(&tape, upstream, &mut grads, true)?
        .expect("input gradient requested");
    Ok((grads, input))
}
