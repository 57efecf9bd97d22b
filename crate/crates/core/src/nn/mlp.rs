use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer.
///
/// Parameters live in one flat vector: for each layer the `out × in`
/// row-major weights followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input of every layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialisation `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            hidden,
            params,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        Self {
            sizes: sizes.to_vec(),
            hidden,
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_parts(sizes: Vec<usize>, hidden: Activation, params: Vec<f64>) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::Shape {
                what: "layer sizes",
                expected: 2,
                got: sizes.len(),
            });
        }
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(NnError::Shape {
                what: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes,
            hidden,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn affine(&self, layer: usize, offset: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let mut z = self.affine(l, offset, &h);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            if l + 1 < self.num_layers() {
                z.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that records what [`backward`](Self::backward) needs.
    pub fn forward_tape(&self, x: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        let mut h = x.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let z = self.affine(l, offset, &h);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            tape.inputs.push(std::mem::take(&mut h));
            if l + 1 < self.num_layers() {
                h = z.iter().map(|v| self.hidden.apply(*v)).collect();
                tape.pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, tape))
    }

    /// Accumulates `∂(output·upstream)/∂params` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NnError> {
        if tape.inputs.len() != self.num_layers() || tape.pre.len() + 1 != self.num_layers() {
            return Err(NnError::MissingTape);
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Shape {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for l in 0..self.num_layers() {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &tape.inputs[l];
            if input.len() != n_in {
                return Err(NnError::MissingTape);
            }
            let o = offsets[l];
            {
                let (gw, gb) = grads[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..n_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, x) in gw[r * n_in..(r + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let w = &self.params[o..o + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (p, a) in prev.iter_mut().zip(&w[r * n_in..(r + 1) * n_in]) {
                    *p += d * a;
                }
            }
            if l > 0 {
                let pre = &tape.pre[l - 1];
                for (p, (z, y)) in prev.iter_mut().zip(pre.iter().zip(input)) {
                    *p *= self.hidden.derivative(*z, *y);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

/// `target ← (1 − tau)·target + tau·source`.
pub fn polyak_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    assert_eq!(target.sizes, source.sizes, "polyak update across shapes");
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = (1.0 - tau) * *t + tau * s;
    }
}
