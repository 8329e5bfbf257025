use rand::Rng;

use super::config::WdmConfig;
use super::layers::{Activation, LayerNorm, Linear};
use super::params::{Bound, Init, ParamId};
use super::stats::{Stats, Walk};
use crate::geometry::Surface;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Multi-head self-attention over `[t, c]` tokens.
#[derive(Clone, Debug)]
pub(crate) struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn new<R: Rng>(init: &mut Init<'_, R>, c: usize, heads: usize) -> Result<Self> {
        init.scoped("attn", |init| {
            Ok(SelfAttention {
                q: Linear::new(init, "q", c, c)?,
                k: Linear::new(init, "k", c, c)?,
                v: Linear::new(init, "v", c, c)?,
                out: Linear::new(init, "out", c, c)?,
                heads,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let (t, c) = (g.shape(x)[0], g.shape(x)[1]);
        let dh = c / self.heads;
        let q = self.q.forward(g, p, x, stats)?;
        let k = self.k.forward(g, p, x, stats)?;
        let v = self.v.forward(g, p, x, stats)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(k, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let attn = g.softmax(scores, 1)?;
            heads.push(g.matmul(attn, vh)?);
        }
        stats.macs += (2 * t * t * c) as u64;
        let joined = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        self.out.forward(g, p, joined, stats)
    }

    fn walk(&self, t: usize, w: &mut Walk) {
        for l in [&self.q, &self.k, &self.v] {
            w.linear(t, l.d_in, l.d_out);
        }
        w.macs += (2 * t * t * self.q.d_out) as u64;
        w.linear(t, self.out.d_in, self.out.d_out);
    }
}

/// Pre-norm block: `T' = T + MSA(LN(T))`, then `T'' = T' + MLP(LN(T'))`.
#[derive(Clone, Debug)]
pub(crate) struct TransformerBlock {
    ln1: LayerNorm,
    pub attn: SelfAttention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, c: usize, heads: usize, mlp_dim: usize) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::config(format!("token_dim {c} is not divisible by {heads} heads")));
        }
        Ok(TransformerBlock {
            ln1: LayerNorm::new(init, "ln1", c)?,
            attn: SelfAttention::new(init, c, heads)?,
            ln2: LayerNorm::new(init, "ln2", c)?,
            fc1: Linear::new(init, "mlp1", c, mlp_dim)?,
            fc2: Linear::new(init, "mlp2", mlp_dim, c)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h, stats)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.fc1.forward(g, p, h, stats)?;
        let h = Activation::Gelu.apply(g, h, stats)?;
        let h = self.fc2.forward(g, p, h, stats)?;
        g.add(x, h)
    }

    fn walk(&self, t: usize, w: &mut Walk) {
        w.params += (self.ln1.param_count() + self.ln2.param_count()) as u64;
        self.attn.walk(t, w);
        w.linear(t, self.fc1.d_in, self.fc1.d_out);
        w.act(t * self.fc1.d_out);
        w.linear(t, self.fc2.d_in, self.fc2.d_out);
    }
}

/// One surface branch: N blocks, final norm, per-token joint head and an
/// optional transposed-convolution upsampler onto the attention grid.
#[derive(Clone, Debug)]
struct Branch {
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    head: Linear,
    upsample: Option<(ParamId, ParamId, usize)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Wdm {
    embed: Linear,
    pos: ParamId,
    branches: Vec<Branch>,
    side: usize,
    joints: usize,
    grid: usize,
}

/// Per-surface `[J, G, G]` softmax weight nodes, in XY, YZ, ZX order.
#[derive(Clone, Copy, Debug)]
pub struct WeightVars {
    pub xy: Var,
    pub yz: Var,
    pub zx: Var,
}

impl WeightVars {
    pub fn get(&self, s: Surface) -> Var {
        match s {
            Surface::XY => self.xy,
            Surface::YZ => self.yz,
            Surface::ZX => self.zx,
        }
    }
}

impl Wdm {
    /// `channels` and `side` describe the fused feature map; `grid` is G.
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        cfg: &WdmConfig,
        channels: usize,
        side: usize,
        joints: usize,
        grid: usize,
    ) -> Result<Self> {
        if grid < side || grid % side != 0 {
            return Err(Error::config(format!(
                "cube grid {grid} must be a multiple of the feature map side {side}"
            )));
        }
        init.scoped("wdm", |init| {
            let c = cfg.token_dim;
            let embed = Linear::new(init, "embed", channels, c)?;
            let pos = init.normal("pos", &[side * side, c], 0.02)?;
            let factor = grid / side;
            let mut branches = Vec::with_capacity(3);
            for s in Surface::ALL {
                let branch = init.scoped(&format!("{s:?}").to_lowercase(), |init| {
                    let mut blocks = Vec::with_capacity(cfg.blocks);
                    for b in 0..cfg.blocks {
                        blocks.push(init.scoped(&format!("block{b}"), |init| {
                            TransformerBlock::new(init, c, cfg.heads, cfg.mlp_dim())
                        })?);
                    }
                    let norm = LayerNorm::new(init, "norm", c)?;
                    let head = Linear::new(init, "head", c, joints)?;
                    let upsample = if factor > 1 {
                        init.scoped("upsample", |init| {
                            let w = init.he("w", &[joints, joints, factor, factor], joints)?;
                            let b = init.constant("b", &[joints], 0.0)?;
                            Ok(Some((w, b, factor)))
                        })?
                    } else {
                        None
                    };
                    Ok(Branch { blocks, norm, head, upsample })
                })?;
                branches.push(branch);
            }
            Ok(Wdm { embed, pos, branches, side, joints, grid })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ffm: Var, stats: &mut Stats) -> Result<WeightVars> {
        let s = g.shape(ffm).to_vec();
        if s[1] != self.side || s[2] != self.side {
            return Err(Error::dim("wdm", format!("feature map {s:?}, expected side {}", self.side)));
        }
        let t = self.side * self.side;
        let flat = g.reshape(ffm, &[s[0], t])?;
        let tokens = g.transpose(flat)?;
        let tokens = self.embed.forward(g, p, tokens, stats)?;
        let tokens = g.add(tokens, p.var(self.pos))?;
        let (j, gs) = (self.joints, self.grid);
        let mut out = Vec::with_capacity(3);
        for br in &self.branches {
            let mut h = tokens;
            for b in &br.blocks {
                h = b.forward(g, p, h, stats)?;
            }
            h = br.norm.forward(g, p, h)?;
            let logits = br.head.forward(g, p, h, stats)?;
            let logits = g.transpose(logits)?;
            let mut maps = g.reshape(logits, &[j, self.side, self.side])?;
            if let Some((w, b, factor)) = br.upsample {
                maps = g.conv_transpose2d(maps, p.var(w), Some(p.var(b)), factor)?;
                stats.macs += (t * j * j * factor * factor) as u64;
            }
            let flat = g.reshape(maps, &[j, gs * gs])?;
            let weights = g.softmax(flat, 1)?;
            out.push(g.reshape(weights, &[j, gs, gs])?);
        }
        Ok(WeightVars { xy: out[0], yz: out[1], zx: out[2] })
    }

    pub fn walk(&self, w: &mut Walk) {
        let t = self.side * self.side;
        w.linear(t, self.embed.d_in, self.embed.d_out);
        w.params += (t * self.embed.d_out) as u64;
        for br in &self.branches {
            for b in &br.blocks {
                b.walk(t, w);
            }
            w.params += br.norm.param_count() as u64;
            w.linear(t, br.head.d_in, br.head.d_out);
            if let Some((_, _, f)) = br.upsample {
                let j = self.joints;
                w.params += (j * j * f * f + j) as u64;
                w.macs += (t * j * j * f * f) as u64;
            }
        }
    }
}
