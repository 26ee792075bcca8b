//! Large-kernel mixer, edge-preserving feed-forward network, ConvFormer
//! layer and basic residual block.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::model::edc::{Edc, EdcWeights};
use crate::nn::{join, Conv1x1Weights, ConvWeights, DwConvWeights, Parameters};
use crate::tensor::{Real, Tensor, TensorError};

/// Gated large-kernel token mixer:
/// `proj(value(F) * dw_k(gate(F)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LkMixer {
    pub value: Conv1x1Weights,
    pub gate: Conv1x1Weights,
    pub gate_dw: DwConvWeights,
    pub proj: Conv1x1Weights,
}

impl LkMixer {
    pub fn zeros(c: usize, k: usize) -> Self {
        Self {
            value: Conv1x1Weights::zeros(c, c),
            gate: Conv1x1Weights::zeros(c, c),
            gate_dw: DwConvWeights::zeros(c, k),
            proj: Conv1x1Weights::zeros(c, c),
        }
    }

    pub fn init(c: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            value: Conv1x1Weights::init(c, c, rng),
            gate: Conv1x1Weights::init(c, c, rng),
            gate_dw: DwConvWeights::init(c, k, rng),
            proj: Conv1x1Weights::init(c, c, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let v = self.value.forward(tape, &join(name, "value"), x)?;
        let g = self.gate.forward(tape, &join(name, "gate"), x)?;
        let g = self.gate_dw.forward(tape, &join(name, "gate_dw"), g)?;
        let m = tape.mul(v, g)?;
        self.proj.forward(tape, &join(name, "proj"), m)
    }
}

impl Parameters for LkMixer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.value.visit(&join(prefix, "value"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        self.gate_dw.visit(&join(prefix, "gate_dw"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.value.visit_mut(&join(prefix, "value"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.gate_dw.visit_mut(&join(prefix, "gate_dw"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// Expand, GELU, edge-preserving depth-wise conv, project.
#[derive(Debug, Clone, PartialEq)]
pub struct Efn {
    pub expand: Conv1x1Weights,
    pub edc: Edc,
    pub project: Conv1x1Weights,
}

impl Efn {
    pub fn zeros(c: usize, hidden: usize, fused: bool) -> Self {
        let edc = if fused {
            Edc::Fused(DwConvWeights::zeros(hidden, 3))
        } else {
            Edc::Branched(EdcWeights::zeros(hidden))
        };
        Self {
            expand: Conv1x1Weights::zeros(c, hidden),
            edc,
            project: Conv1x1Weights::zeros(hidden, c),
        }
    }

    pub fn init(c: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            expand: Conv1x1Weights::init(c, hidden, rng),
            edc: Edc::Branched(EdcWeights::init(hidden, rng)),
            project: Conv1x1Weights::init(hidden, c, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let h = self.expand.forward(tape, &join(name, "expand"), x)?;
        let h = tape.gelu(h);
        let h = self.edc.forward(tape, &join(name, "edc"), h)?;
        self.project.forward(tape, &join(name, "project"), h)
    }
}

impl Parameters for Efn {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.edc.visit(&join(prefix, "edc"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.edc.visit_mut(&join(prefix, "edc"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

/// `F += mixer(F); F += efn(F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFormerLayer {
    pub mixer: LkMixer,
    pub efn: Efn,
}

impl ConvFormerLayer {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let m = self.mixer.forward(tape, &join(name, "mixer"), x)?;
        let x = tape.add(x, m)?;
        let e = self.efn.forward(tape, &join(name, "efn"), x)?;
        tape.add(x, e)
    }
}

impl Parameters for ConvFormerLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.mixer.visit(&join(prefix, "mixer"), f);
        self.efn.visit(&join(prefix, "efn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.mixer.visit_mut(&join(prefix, "mixer"), f);
        self.efn.visit_mut(&join(prefix, "efn"), f);
    }
}

/// Stack of ConvFormer layers, a trailing 3x3 convolution and a skip from
/// the block input.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub layers: Vec<ConvFormerLayer>,
    pub tail: ConvWeights,
}

impl ResidualBlock {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &join(name, &format!("layers.{i}")), h)?;
        }
        let h = self.tail.forward(tape, &join(name, "tail"), h)?;
        tape.add(x, h)
    }
}

impl Parameters for ResidualBlock {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}
