//! The two-view network: backbone, fusion, weight distribution and the
//! differentiable cube regression.

mod backbone;
mod config;
mod fusion;
mod layers;
mod params;
mod stats;
mod wdm;

pub use config::{
    ActivationPlacement, BackboneConfig, FusionConfig, ModelConfig, ResolvedBackbone, Similarity, Variant,
    WdmConfig,
};
pub use fusion::FusionState;
pub use layers::Activation;
pub use params::{Bound, ParamId, ParamStore};
pub use stats::{ModelStats, Stats};
pub use wdm::WeightVars;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{AttentionCube, JointEstimate, Surface, SurfaceWeights};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};
use backbone::Backbone;
use fusion::Fusion;
use params::Init;
use stats::Walk;
use wdm::Wdm;

/// Sizes the network depends on but which are fixed by the data and cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Side of the square preprocessed input.
    pub input_size: usize,
    pub joints: usize,
    /// Attention points per cube edge.
    pub grid: usize,
}

/// Node handles produced by [`AcrModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub features: Vec<Var>,
    pub fusion: FusionState,
    pub weights: WeightVars,
    /// `[J, 3]` joint coordinates in the cube frame.
    pub joints: Var,
}

#[derive(Clone, Debug)]
pub struct AcrModel {
    config: ModelConfig,
    dims: ModelDims,
    feature_side: usize,
    backbone: Backbone,
    fusion: Fusion,
    wdm: Wdm,
    params: ParamStore,
}

/// Computes the expected feature map side for a config and input size.
pub fn feature_side(cfg: &ModelConfig, input_size: usize) -> Result<usize> {
    cfg.backbone
        .resolve()?
        .output_extent(input_size)
        .ok_or_else(|| Error::config(format!("data.image_size {input_size} is too small for the backbone")))
}

impl AcrModel {
    /// Builds the network with parameters drawn from a seeded generator.
    pub fn new(config: &ModelConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        config.validate()?;
        let resolved = config.backbone.resolve()?;
        let feature_side = feature_side(config, dims.input_size)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let backbone = Backbone::new(&mut init, &resolved, config.views)?;
        let channels = resolved.stage_channels[3];
        let fusion = Fusion::new(&mut init, channels, &config.fusion)?;
        let wdm = Wdm::new(&mut init, &config.wdm, channels, feature_side, dims.joints, dims.grid)?;
        Ok(AcrModel { config: config.clone(), dims, feature_side, backbone, fusion, wdm, params: store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn feature_side(&self) -> usize {
        self.feature_side
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Backbone only, returning the per-view feature maps.
    pub fn backbone_forward(&self, g: &mut Graph, p: &Bound, views: &[Var]) -> Result<Vec<Var>> {
        self.backbone.forward(g, p, views, &mut Stats::default())
    }

    pub fn fuse(&self, g: &mut Graph, p: &Bound, main: Var, aux: Var) -> Result<FusionState> {
        self.fusion.forward(g, p, main, aux, &mut Stats::default())
    }

    pub fn wdm_forward(&self, g: &mut Graph, p: &Bound, ffm: Var) -> Result<WeightVars> {
        self.wdm.forward(g, p, ffm, &mut Stats::default())
    }

    /// Full forward pass; the first view is the main view.
    pub fn forward(&self, g: &mut Graph, p: &Bound, views: &[Var], cube: &AttentionCube) -> Result<ForwardVars> {
        self.forward_counted(g, p, views, cube, &mut Stats::default())
    }

    pub fn forward_counted(
        &self,
        g: &mut Graph,
        p: &Bound,
        views: &[Var],
        cube: &AttentionCube,
        stats: &mut Stats,
    ) -> Result<ForwardVars> {
        if cube.grid != self.dims.grid {
            return Err(Error::Compatibility(format!(
                "model expects grid {}, cube has {}",
                self.dims.grid, cube.grid
            )));
        }
        let features = self.backbone.forward(g, p, views, stats)?;
        let fusion = self.fusion.forward(g, p, features[0], features[1], stats)?;
        let weights = self.wdm.forward(g, p, fusion.ffm, stats)?;
        let joints = regress_in_graph(g, &weights, cube)?;
        Ok(ForwardVars { features, fusion, weights, joints })
    }

    /// Inference without gradients.
    pub fn predict(&self, views: &[Tensor], cube: &AttentionCube) -> Result<(JointEstimate, SurfaceWeights)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let vars: Vec<Var> = views.iter().map(|v| g.constant(v.clone())).collect();
        let out = self.forward(&mut g, &p, &vars, cube)?;
        let weights = SurfaceWeights {
            xy: g.value(out.weights.xy).clone(),
            yz: g.value(out.weights.yz).clone(),
            zx: g.value(out.weights.zx).clone(),
        };
        let joints = JointEstimate::from_tensor(g.value(out.joints), cube.frame())?;
        Ok((joints, weights))
    }

    /// Parameter count, multiply-accumulates and activation elements for one
    /// forward pass, from a shape walk over the layer list.
    pub fn stats(&self) -> ModelStats {
        let mut w = Walk::default();
        let side = self.backbone.walk(self.dims.input_size, &mut w);
        let channels = self.config.backbone.stage_channels[3];
        self.fusion.walk(channels, side * side, &mut w);
        self.wdm.walk(&mut w);
        let g = self.dims.grid;
        w.macs += (3 * self.dims.joints * g * g * 3) as u64;
        ModelStats { params: w.params, macs: w.macs, activation_ops: w.activations }
    }
}

/// Per-surface `[G·G, 3]` coordinate matrices; the column of the axis normal
/// to the surface is zero.
pub fn surface_coordinate_matrices(cube: &AttentionCube) -> [Tensor; 3] {
    let gg = cube.grid * cube.grid;
    Surface::ALL.map(|s| {
        let grid = cube.surface(s);
        let (a, b) = s.axes();
        Tensor::from_fn(&[gg, 3], |i| {
            let (point, axis) = (i / 3, i % 3);
            if axis == a {
                grid.first.data()[point]
            } else if axis == b {
                grid.second.data()[point]
            } else {
                0.0
            }
        })
    })
}

/// Differentiable cube regression: `0.5 · Σ_s W_s · C_s` over the three surfaces.
pub fn regress_in_graph(g: &mut Graph, weights: &WeightVars, cube: &AttentionCube) -> Result<Var> {
    let gg = cube.grid * cube.grid;
    let mut total: Option<Var> = None;
    for (s, coords) in Surface::ALL.into_iter().zip(surface_coordinate_matrices(cube)) {
        let w = weights.get(s);
        let j = g.shape(w)[0];
        let flat = g.reshape(w, &[j, gg])?;
        let c = g.constant(coords);
        let part = g.matmul(flat, c)?;
        total = Some(match total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
    }
    g.scale(total.expect("three surfaces"), 0.5)
}
