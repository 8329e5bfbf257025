use serde::{Deserialize, Serialize};

use crate::geometry::{CubeMode, Frame, JointEstimate, JointSet};
use crate::tensor::{Graph, Tensor, Unary, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothL1Form {
    /// `0.5x²/β` below the threshold, `|x| − 0.5β` above.
    Normalized,
    /// `0.5x²` below the threshold, `x − 0.5` above, as printed.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Smoothness threshold; defaults to 1 in pixel mode and 3 in world mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub lambda_z: f64,
    pub form: SmoothL1Form,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: None, lambda_z: 3.0, form: SmoothL1Form::Normalized }
    }
}

impl LossConfig {
    pub fn beta_for(&self, mode: CubeMode) -> f64 {
        self.beta.unwrap_or(match mode {
            CubeMode::PixelDepth => 1.0,
            CubeMode::World => 3.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::config("training.loss.beta must be positive"));
        }
        if !(self.lambda_z > 0.0) {
            return Err(Error::config("training.loss.lambda_z must be positive"));
        }
        Ok(())
    }

    fn unary(&self, beta: f64) -> Unary {
        match self.form {
            SmoothL1Form::Normalized => Unary::SmoothL1 { beta },
            SmoothL1Form::Literal => Unary::SmoothL1Literal { beta },
        }
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    Unary::SmoothL1 { beta }.eval(x)
}

/// Per-axis smooth-L1 summed over joints with the depth term weighted by
/// `lambda_z`, built on `pred` (`[J, 3]`) inside a graph.
pub fn total_loss_graph(g: &mut Graph, pred: Var, truth: &Tensor, beta: f64, cfg: &LossConfig) -> Result<Var> {
    if g.shape(pred) != truth.shape() || truth.rank() != 2 || truth.shape()[1] != 3 {
        return Err(Error::dim(
            "total_loss",
            format!("prediction {:?} vs truth {:?}", g.shape(pred), truth.shape()),
        ));
    }
    let t = g.constant(truth.clone());
    let r = g.sub(pred, t)?;
    let per_axis = g.unary(r, cfg.unary(beta))?;
    let w = g.constant(Tensor::new(&[3], vec![1.0, 1.0, cfg.lambda_z])?);
    let weighted = g.mul(per_axis, w)?;
    g.sum(weighted)
}

/// Loss value for plain estimates, checking joint counts and frames.
pub fn total_loss(pred: &JointEstimate, truth: &JointSet, beta: f64, cfg: &LossConfig) -> Result<f64> {
    if pred.frame != truth.frame {
        return Err(Error::contract(format!(
            "prediction frame {:?} differs from truth frame {:?}",
            pred.frame, truth.frame
        )));
    }
    if pred.joints.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predicted joints vs {} labelled",
            pred.joints.len(),
            truth.len()
        )));
    }
    let f = cfg.unary(beta);
    let mut total = 0.0;
    for (p, q) in pred.joints.iter().zip(&truth.coords) {
        total += f.eval(p[0] - q[0]) + f.eval(p[1] - q[1]) + cfg.lambda_z * f.eval(p[2] - q[2]);
    }
    Ok(total)
}

/// Frame a cube mode regresses in.
pub fn frame_of(mode: CubeMode) -> Frame {
    match mode {
        CubeMode::PixelDepth => Frame::Pixel,
        CubeMode::World => Frame::World,
    }
}
