use rand::Rng;

use super::config::{ActivationPlacement, ResolvedBackbone};
use super::layers::{Activation, Conv, Linear};
use super::params::{Bound, Init};
use super::stats::{Stats, Walk};
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Squeeze-and-excitation gate: global pool, two fully connected layers, sigmoid.
#[derive(Clone, Debug)]
pub(crate) struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SqueezeExcite {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        init.scoped("se", |init| {
            Ok(SqueezeExcite {
                reduce: Linear::new(init, "reduce", channels, hidden)?,
                expand: Linear::new(init, "expand", hidden, channels)?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let c = g.shape(x)[0];
        let pooled = g.global_avg_pool(x)?;
        let row = g.reshape(pooled, &[1, c])?;
        let h = self.reduce.forward(g, p, row, stats)?;
        let h = g.relu(h)?;
        let e = self.expand.forward(g, p, h, stats)?;
        let gate = g.sigmoid(e)?;
        let gate = g.reshape(gate, &[c, 1, 1])?;
        g.mul(x, gate)
    }

    fn walk(&self, w: &mut Walk) {
        w.linear(1, self.reduce.d_in, self.reduce.d_out);
        w.linear(1, self.expand.d_in, self.expand.d_out);
    }
}

/// 1×1 → 3×3 → 1×1 bottleneck with an SE gate and a residual connection.
#[derive(Clone, Debug)]
pub(crate) struct Bottleneck {
    conv1: Conv,
    conv2: Conv,
    conv3: Conv,
    se: SqueezeExcite,
    shortcut: Option<Conv>,
    activation: Activation,
    placement: ActivationPlacement,
}

impl Bottleneck {
    fn new<R: Rng>(
        init: &mut Init<'_, R>,
        c_in: usize,
        c_out: usize,
        stride: usize,
        cfg: &ResolvedBackbone,
    ) -> Result<Self> {
        let mid = (c_out / cfg.bottleneck_ratio).max(1);
        Ok(Bottleneck {
            conv1: Conv::new(init, "conv1", c_in, mid, 1, 1, 0)?,
            conv2: Conv::new(init, "conv2", mid, mid, 3, stride, 1)?,
            conv3: Conv::new(init, "conv3", mid, c_out, 1, 1, 0)?,
            se: SqueezeExcite::new(init, c_out, cfg.se_reduction)?,
            shortcut: if c_in != c_out || stride != 1 {
                Some(Conv::new(init, "shortcut", c_in, c_out, 1, stride, 0)?)
            } else {
                None
            },
            activation: cfg.activation,
            placement: cfg.placement,
        })
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let all = self.placement == ActivationPlacement::AllPositions;
        let mut h = self.conv1.forward(g, p, x, stats)?;
        if all {
            h = self.activation.apply(g, h, stats)?;
        }
        h = self.conv2.forward(g, p, h, stats)?;
        h = self.activation.apply(g, h, stats)?;
        h = self.conv3.forward(g, p, h, stats)?;
        h = self.se.forward(g, p, h, stats)?;
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(g, p, x, stats)?,
            None => x,
        };
        let mut out = g.add(h, skip)?;
        if all {
            out = self.activation.apply(g, out, stats)?;
        }
        Ok(out)
    }

    /// Returns the output spatial extent.
    fn walk(&self, side: usize, w: &mut Walk) -> usize {
        let all = self.placement == ActivationPlacement::AllPositions;
        let mid = self.conv1.c_out;
        w.conv(self.conv1.c_in, mid, 1, side * side, true);
        if all {
            w.act(mid * side * side);
        }
        let out = self.conv2.out_extent(side);
        w.conv(mid, mid, 3, out * out, true);
        w.act(mid * out * out);
        w.conv(mid, self.conv3.c_out, 1, out * out, true);
        self.se.walk(w);
        if let Some(s) = &self.shortcut {
            w.conv(s.c_in, s.c_out, 1, out * out, true);
        }
        if all {
            w.act(self.conv3.c_out * out * out);
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Stem {
    conv: Conv,
    pool: bool,
    activation: Activation,
}

/// Per-view early layers: stem plus the first two stages.
#[derive(Clone, Debug)]
pub(crate) struct PrePhase {
    stem: Stem,
    blocks: Vec<Bottleneck>,
}

/// Shared late layers: the last two stages.
#[derive(Clone, Debug)]
pub(crate) struct PostPhase {
    blocks: Vec<Bottleneck>,
}

fn build_stages<R: Rng>(
    init: &mut Init<'_, R>,
    cfg: &ResolvedBackbone,
    stages: std::ops::Range<usize>,
    mut c_in: usize,
) -> Result<Vec<Bottleneck>> {
    let strides = cfg.stage_strides();
    let mut blocks = Vec::new();
    for s in stages {
        for b in 0..cfg.stage_blocks[s] {
            let stride = if b == 0 { strides[s] } else { 1 };
            let c_out = cfg.stage_channels[s];
            let block = init.scoped(&format!("stage{}.block{b}", s + 1), |init| {
                Bottleneck::new(init, c_in, c_out, stride, cfg)
            })?;
            blocks.push(block);
            c_in = c_out;
        }
    }
    Ok(blocks)
}

impl PrePhase {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ResolvedBackbone) -> Result<Self> {
        let k = cfg.stem_kernel;
        let conv = Conv::new(init, "stem", 1, cfg.stem_channels, k, cfg.stem_stride, k / 2)?;
        let blocks = build_stages(init, cfg, 0..2, cfg.stem_channels)?;
        Ok(PrePhase { stem: Stem { conv, pool: cfg.stem_pool, activation: cfg.activation }, blocks })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let mut h = self.stem.conv.forward(g, p, x, stats)?;
        h = self.stem.activation.apply(g, h, stats)?;
        if self.stem.pool {
            h = g.max_pool2d(h, 3, 2, 1)?;
        }
        for b in &self.blocks {
            h = b.forward(g, p, h, stats)?;
        }
        Ok(h)
    }

    pub fn walk(&self, side: usize, w: &mut Walk) -> usize {
        let c = &self.stem.conv;
        let mut e = c.out_extent(side);
        w.conv(c.c_in, c.c_out, c.k, e * e, true);
        w.act(c.c_out * e * e);
        if self.stem.pool {
            e = (e + 2 - 3) / 2 + 1;
        }
        for b in &self.blocks {
            e = b.walk(e, w);
        }
        e
    }
}

impl PostPhase {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ResolvedBackbone) -> Result<Self> {
        Ok(PostPhase { blocks: build_stages(init, cfg, 2..4, cfg.stage_channels[1])? })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, stats: &mut Stats) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, p, h, stats)?;
        }
        Ok(h)
    }

    pub fn walk(&self, side: usize, w: &mut Walk) -> usize {
        self.blocks.iter().fold(side, |e, b| b.walk(e, w))
    }
}

/// Two-phase backbone: one pre-phase per view, one shared post-phase.
#[derive(Clone, Debug)]
pub(crate) struct Backbone {
    pub pre: Vec<PrePhase>,
    pub post: PostPhase,
}

impl Backbone {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, cfg: &ResolvedBackbone, views: usize) -> Result<Self> {
        let mut pre = Vec::with_capacity(views);
        for v in 0..views {
            pre.push(init.scoped(&format!("backbone.pre{v}"), |init| PrePhase::new(init, cfg))?);
        }
        let post = init.scoped("backbone.post", |init| PostPhase::new(init, cfg))?;
        Ok(Backbone { pre, post })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, views: &[Var], stats: &mut Stats) -> Result<Vec<Var>> {
        if views.len() != self.pre.len() {
            return Err(Error::config(format!(
                "model configured for {} views, got {}",
                self.pre.len(),
                views.len()
            )));
        }
        let first = g.shape(views[0]).to_vec();
        if first.len() != 3 || first[0] != 1 {
            return Err(Error::dim("backbone", format!("views must be [1,H,W], got {first:?}")));
        }
        if views.iter().any(|&v| g.shape(v) != first.as_slice()) {
            return Err(Error::dim("backbone", "all views must share one shape"));
        }
        let mut out = Vec::with_capacity(views.len());
        for (pre, &x) in self.pre.iter().zip(views) {
            let h = pre.forward(g, p, x, stats)?;
            out.push(self.post.forward(g, p, h, stats)?);
        }
        Ok(out)
    }

    pub fn walk(&self, side: usize, w: &mut Walk) -> usize {
        let mut e = side;
        for pre in &self.pre {
            let mid = pre.walk(side, w);
            e = self.post.walk(mid, w);
        }
        // the post-phase is shared, so its parameters were counted once per view
        let shared = {
            let mut once = Walk::default();
            self.post.walk(self.pre[0].walk(side, &mut Walk::default()), &mut once);
            once.params
        };
        w.params -= shared * (self.pre.len() as u64 - 1);
        e
    }
}
