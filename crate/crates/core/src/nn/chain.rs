use rand::Rng;

use super::layers::{leaky_relu, leaky_relu_backward, Backprop, Conv2d, ConvGeom, Init, Linear, Param};
use super::tensor::Tensor;
use super::LEAKY_SLOPE;

/// One trainable stage of a [`Chain`].
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Conv(Conv2d),
    Linear(Linear),
}

impl Stage {
    fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Stage::Conv(c) => c.forward(x),
            Stage::Linear(l) => l.forward(x),
        }
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        match self {
            Stage::Conv(c) => c.backward(x, dy, bp),
            Stage::Linear(l) => l.backward(x, dy, bp),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Stage::Conv(c) => c.params_mut(),
            Stage::Linear(l) => l.params_mut(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Stage::Conv(c) => c.params(),
            Stage::Linear(l) => l.params(),
        }
    }
}

/// Stages joined by leaky rectifiers; the last stage is optionally left linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub stages: Vec<Stage>,
    pub activate_last: bool,
}

/// Inputs and pre-activations recorded by [`Chain::forward_train`].
#[derive(Clone, Debug)]
pub struct ChainTape {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl Chain {
    /// Fully connected stack `widths[0] → widths[1] → …`.
    pub fn mlp<R: Rng>(widths: &[usize], activate_last: bool, init: Init, rng: &mut R) -> Self {
        let stages = widths
            .windows(2)
            .map(|w| Stage::Linear(Linear::new(w[0], w[1], init, rng)))
            .collect();
        Chain {
            stages,
            activate_last,
        }
    }

    pub fn conv<R: Rng>(in_c: usize, out_c: usize, geom: ConvGeom, init: Init, rng: &mut R) -> Stage {
        Stage::Conv(Conv2d::new(in_c, out_c, geom, init, rng))
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.stages.len() || self.activate_last
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for (i, s) in self.stages.iter().enumerate() {
            let z = s.forward(&cur);
            cur = if self.activated(i) { leaky_relu(&z, LEAKY_SLOPE) } else { z };
        }
        cur
    }

    pub fn forward_train(&self, x: &Tensor) -> (Tensor, ChainTape) {
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut pre = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (i, s) in self.stages.iter().enumerate() {
            let z = s.forward(&cur);
            let next = if self.activated(i) { leaky_relu(&z, LEAKY_SLOPE) } else { z.clone() };
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        (cur, ChainTape { inputs, pre })
    }

    /// Backpropagates `dy`; `bp` applies to every stage except that the first
    /// stage's input gradient is only produced when `bp.input` is set.
    pub fn backward(&mut self, tape: &ChainTape, dy: &Tensor, bp: Backprop) -> Option<Tensor> {
        let mut grad = dy.clone();
        let n = self.stages.len();
        for i in (0..n).rev() {
            let dz = if self.activated(i) {
                leaky_relu_backward(&tape.pre[i], &grad, LEAKY_SLOPE)
            } else {
                grad
            };
            let stage_bp = Backprop {
                params: bp.params,
                input: i > 0 || bp.input,
            };
            match self.stages[i].backward(&tape.inputs[i], &dz, stage_bp) {
                Some(g) => grad = g,
                None => return None,
            }
        }
        Some(grad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }
}
