use serde::Serialize;

/// Running operation counts for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    /// Multiply-accumulates of convolution, linear and attention products.
    pub macs: u64,
    /// Elements passed through a backbone, fusion or MLP nonlinearity.
    pub activations: u64,
}

/// Size and cost summary of a model for one two-view forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub params: u64,
    pub macs: u64,
    pub activation_ops: u64,
}

impl ModelStats {
    /// Two floating-point operations per MAC plus one per activation element.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.activation_ops
    }
}

/// Shape walk used by [`super::AcrModel::stats`]: each layer adds its
/// parameter count and its cost at the given output size.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Walk {
    pub params: u64,
    pub macs: u64,
    pub activations: u64,
}

impl Walk {
    pub fn conv(&mut self, c_in: usize, c_out: usize, k: usize, out_hw: usize, bias: bool) {
        self.params += (c_out * c_in * k * k + if bias { c_out } else { 0 }) as u64;
        self.macs += (out_hw * c_out * c_in * k * k) as u64;
    }

    pub fn linear(&mut self, rows: usize, d_in: usize, d_out: usize) {
        self.params += (d_in * d_out + d_out) as u64;
        self.macs += (rows * d_in * d_out) as u64;
    }

    pub fn act(&mut self, elements: usize) {
        self.activations += elements as u64;
    }
}
