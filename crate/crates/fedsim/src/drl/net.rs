//! Minimal dense network with manual backprop and Adam, sized for the
//! tiny actor/critic models.

use crate::scalar::Scalar;
use rand::Rng;

/// Activation applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone)]
pub struct Dense<S: Scalar> {
    pub w: Vec<S>, // row-major out x in
    pub b: Vec<S>,
    pub input: usize,
    pub output: usize,
    pub act: Activation,
}

impl<S: Scalar> Dense<S> {
    fn new<R: Rng>(input: usize, output: usize, act: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let w = (0..input * output)
            .map(|_| S::real((rng.gen::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        Self {
            w,
            b: vec![S::zero(); output],
            input,
            output,
            act,
        }
    }

    fn forward(&self, x: &[S], pre: &mut Vec<S>, out: &mut Vec<S>) {
        pre.clear();
        out.clear();
        for o in 0..self.output {
            let row = &self.w[o * self.input..(o + 1) * self.input];
            let mut z = self.b[o];
            for (w, xi) in row.iter().zip(x) {
                z = z + *w * *xi;
            }
            pre.push(z);
            out.push(match self.act {
                Activation::Tanh => z.tanh(),
                Activation::Identity => z,
            });
        }
    }
}

/// Fully-connected network. Layers own their activations; the forward
/// cache supports a single backward pass.
#[derive(Debug, Clone)]
pub struct Mlp<S: Scalar> {
    pub layers: Vec<Dense<S>>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<S: Scalar> {
    input: Vec<S>,
    /// Post-activation output of each layer.
    outputs: Vec<Vec<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn output(&self) -> &[S] {
        self.outputs.last().expect("mlp has layers")
    }
}

/// Parameter gradients, laid out like [`Mlp::flat_params`].
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar> {
    pub flat: Vec<S>,
}

impl<S: Scalar> Mlp<S> {
    /// `sizes` = [input, hidden..., output]; hidden layers use tanh, the
    /// final layer is linear.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == sizes.len() {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                Dense::new(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[S]) -> Trace<S> {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut pre = Vec::new();
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward(&cur, &mut pre, &mut out);
            outputs.push(out.clone());
            cur = out;
        }
        Trace {
            input: x.to_vec(),
            outputs,
        }
    }

    /// Backpropagate `dl_dout` (gradient of a scalar loss w.r.t. the
    /// network output) through the trace. Accumulates parameter gradients
    /// into `grads` and returns the gradient w.r.t. the network input.
    pub fn backward(&self, trace: &Trace<S>, dl_dout: &[S], grads: &mut Gradients<S>) -> Vec<S> {
        debug_assert_eq!(dl_dout.len(), self.output_dim());
        let mut upstream = dl_dout.to_vec();
        // Walk layers backward; the flat gradient layout is layer-major in
        // forward order, so compute offsets first.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for l in &self.layers {
            offsets.push(offset);
            offset += l.w.len() + l.b.len();
        }
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.outputs[li];
            let input: &[S] = if li == 0 {
                &trace.input
            } else {
                &trace.outputs[li - 1]
            };
            // d loss / d pre-activation
            let dz: Vec<S> = match layer.act {
                Activation::Tanh => upstream
                    .iter()
                    .zip(out)
                    .map(|(u, o)| *u * (S::one() - *o * *o))
                    .collect(),
                Activation::Identity => upstream.clone(),
            };
            let base = offsets[li];
            let wlen = layer.w.len();
            for o in 0..layer.output {
                for i in 0..layer.input {
                    let gi = base + o * layer.input + i;
                    grads.flat[gi] = grads.flat[gi] + dz[o] * input[i];
                }
                let bi = base + wlen + o;
                grads.flat[bi] = grads.flat[bi] + dz[o];
            }
            // Gradient for the layer below.
            let mut down = vec![S::zero(); layer.input];
            for o in 0..layer.output {
                let row = &layer.w[o * layer.input..(o + 1) * layer.input];
                for (d, w) in down.iter_mut().zip(row) {
                    *d = *d + dz[o] * *w;
                }
            }
            upstream = down;
        }
        upstream
    }

    pub fn zero_grads(&self) -> Gradients<S> {
        Gradients {
            flat: vec![S::zero(); self.param_count()],
        }
    }

    pub fn flat_params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.param_count());
        let mut cursor = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&flat[cursor..cursor + wn]);
            cursor += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&flat[cursor..cursor + bn]);
            cursor += bn;
        }
    }

    /// `self <- (1 - tau) * self + tau * online` (target soft update).
    pub fn soft_update_from(&mut self, online: &Mlp<S>, tau: S) {
        let one_m = S::one() - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tw, ow) in t.w.iter_mut().zip(&o.w) {
                *tw = one_m * *tw + tau * *ow;
            }
            for (tb, ob) in t.b.iter_mut().zip(&o.b) {
                *tb = one_m * *tb + tau * *ob;
            }
        }
    }

    /// Max absolute parameter difference to another network of the same
    /// shape.
    pub fn max_param_distance(&self, other: &Mlp<S>) -> S {
        self.flat_params()
            .iter()
            .zip(other.flat_params())
            .fold(S::zero(), |acc, (a, b)| acc.max((*a - b).abs()))
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, params: usize) -> Self {
        Self {
            lr: S::real(lr),
            beta1: S::real(0.9),
            beta2: S::real(0.999),
            eps: S::real(1e-8),
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
            t: 0,
        }
    }

    /// One descent step along `grads` (negate the gradient to ascend).
    pub fn step(&mut self, net: &mut Mlp<S>, grads: &Gradients<S>) {
        self.t += 1;
        let mut flat = net.flat_params();
        let b1t = S::one() - self.beta1.powi(self.t as i32);
        let b2t = S::one() - self.beta2.powi(self.t as i32);
        for i in 0..flat.len() {
            let g = grads.flat[i];
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            flat[i] = flat[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        net.set_flat_params(&flat);
    }
}
