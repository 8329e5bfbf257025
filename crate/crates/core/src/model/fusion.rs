use rand::Rng;

use super::config::{FusionConfig, Similarity};
use super::layers::{Activation, Conv};
use super::params::{Bound, Init};
use super::stats::{Stats, Walk};
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Three 3×3 convolutions with GELU between them; the last one widens each
/// channel to `d` maps, which global pooling turns into a `[n, d]` descriptor.
#[derive(Clone, Debug)]
pub(crate) struct Extract {
    convs: [Conv; 3],
    d: usize,
}

impl Extract {
    fn new<R: Rng>(init: &mut Init<'_, R>, n: usize, d: usize) -> Result<Self> {
        Ok(Extract {
            convs: [
                Conv::new(init, "conv1", n, n, 3, 1, 1)?,
                Conv::new(init, "conv2", n, n, 3, 1, 1)?,
                Conv::new(init, "conv3", n, n * d, 3, 1, 1)?,
            ],
            d,
        })
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let n = g.shape(x)[0];
        let mut h = self.convs[0].forward(g, p, x, stats)?;
        h = Activation::Gelu.apply(g, h, stats)?;
        h = self.convs[1].forward(g, p, h, stats)?;
        h = Activation::Gelu.apply(g, h, stats)?;
        h = self.convs[2].forward(g, p, h, stats)?;
        let pooled = g.global_avg_pool(h)?;
        g.reshape(pooled, &[n, self.d])
    }

    fn walk(&self, hw: usize, w: &mut Walk) {
        for (i, c) in self.convs.iter().enumerate() {
            w.conv(c.c_in, c.c_out, 3, hw, true);
            if i < 2 {
                w.act(c.c_out * hw);
            }
        }
    }
}

/// Intermediate values of one fusion pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionState {
    /// `[n, d]` query descriptors from the main view.
    pub q: Var,
    /// `[n, d]` key descriptors from the auxiliary view.
    pub k: Var,
    /// Channel weights: `[n]` (diagonal) or `[n, n]` (full matrix).
    pub w: Var,
    /// Fused feature maps `[n, h, w]`.
    pub ffm: Var,
}

#[derive(Clone, Debug)]
pub(crate) struct Fusion {
    query: Extract,
    key: Extract,
    cfg: FusionConfig,
}

impl Fusion {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, channels: usize, cfg: &FusionConfig) -> Result<Self> {
        init.scoped("fusion", |init| {
            Ok(Fusion {
                query: init.scoped("query", |init| Extract::new(init, channels, cfg.descriptor_dim))?,
                key: init.scoped("key", |init| Extract::new(init, channels, cfg.descriptor_dim))?,
                cfg: cfg.clone(),
            })
        })
    }

    /// `main` is Γ, `aux` is M (and V).
    pub fn forward(&self, g: &mut Graph, p: &Bound, main: Var, aux: Var, stats: &mut Stats) -> Result<FusionState> {
        if g.shape(main) != g.shape(aux) {
            return Err(Error::dim(
                "fuse",
                format!("main {:?} vs auxiliary {:?}", g.shape(main), g.shape(aux)),
            ));
        }
        let shape = g.shape(main).to_vec();
        let (n, hw) = (shape[0], shape[1] * shape[2]);
        let d = self.cfg.descriptor_dim;
        let q = self.query.forward(g, p, main, stats)?;
        let k = self.key.forward(g, p, aux, stats)?;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let (w, weighted) = match self.cfg.similarity {
            Similarity::Diagonal => {
                let qk = g.mul(q, k)?;
                let s = g.sum_axis(qk, 1)?;
                let s = g.scale(s, inv_sqrt_d)?;
                let w = g.softmax(s, 0)?;
                let wb = g.reshape(w, &[n, 1, 1])?;
                stats.macs += (n * d + n * hw) as u64;
                (w, g.mul(aux, wb)?)
            }
            Similarity::FullMatrix => {
                let kt = g.transpose(k)?;
                let s = g.matmul(q, kt)?;
                let s = g.scale(s, inv_sqrt_d)?;
                let w = g.softmax(s, 1)?;
                let v = g.reshape(aux, &[n, hw])?;
                let mixed = g.matmul(w, v)?;
                stats.macs += (n * n * d + n * n * hw) as u64;
                (w, g.reshape(mixed, &shape)?)
            }
        };
        let main_term = g.scale(main, self.cfg.tau_main)?;
        let aux_term = g.scale(weighted, self.cfg.tau_aux)?;
        let ffm = g.add(main_term, aux_term)?;
        Ok(FusionState { q, k, w, ffm })
    }

    pub fn walk(&self, n: usize, hw: usize, w: &mut Walk) {
        self.query.walk(hw, w);
        self.key.walk(hw, w);
        let d = self.cfg.descriptor_dim;
        w.macs += match self.cfg.similarity {
            Similarity::Diagonal => (n * d + n * hw) as u64,
            Similarity::FullMatrix => (n * n * d + n * n * hw) as u64,
        };
    }
}
