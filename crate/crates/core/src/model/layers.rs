use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId};
use super::stats::Stats;
use crate::tensor::{Graph, Var};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph, x: Var, stats: &mut Stats) -> Result<Var> {
        stats.activations += g.value(x).numel() as u64;
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        init.scoped(name, |init| {
            let w = init.he("w", &[c_out, c_in, k, k], c_in * k * k)?;
            let b = Some(init.constant("b", &[c_out], 0.0)?);
            Ok(Conv { w, b, c_in, c_out, k, stride, pad })
        })
    }

    pub fn out_extent(&self, h: usize) -> usize {
        (h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let y = g.conv2d(x, p.var(self.w), self.b.map(|b| p.var(b)), self.stride, self.pad)?;
        let s = g.shape(y);
        stats.macs += (s[1] * s[2] * self.c_out * self.c_in * self.k * self.k) as u64;
        Ok(y)
    }
}

/// `y = x·W + b` on row vectors, `W` shaped `[in, out]`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        init.scoped(name, |init| {
            let w = init.he("w", &[d_in, d_out], d_in)?;
            let b = init.constant("b", &[d_out], 0.0)?;
            Ok(Linear { w, b, d_in, d_out })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let rows = g.shape(x)[0];
        stats.macs += (rows * self.d_in * self.d_out) as u64;
        let y = g.matmul(x, p.var(self.w))?;
        g.add(y, p.var(self.b))
    }
}

/// Layer normalization over the last axis of `[t, c]`.
#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize) -> Result<Self> {
        init.scoped(name, |init| {
            let gain = init.constant("gain", &[dim], 1.0)?;
            let bias = init.constant("bias", &[dim], 0.0)?;
            Ok(LayerNorm { gain, bias, dim })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let axis = g.shape(x).len() - 1;
        g.layer_norm(x, axis, p.var(self.gain), p.var(self.bias), LN_EPS)
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}
