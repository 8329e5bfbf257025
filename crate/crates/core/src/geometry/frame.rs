use serde::{Deserialize, Serialize};

use super::camera::{pixel_to_world, world_to_pixel, CameraModel, Vec3};
use crate::Result;

/// Crop window in raw image pixels, resized to a square network input.
/// Resizing treats pixels as unit cells, so raw pixel `x0 + i` lands at
/// `(i + 0.5)·size/width − 0.5` in network coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub size: usize,
}

impl Crop {
    pub fn to_network(&self, u: f64, v: f64) -> (f64, f64) {
        let sx = self.size as f64 / self.width as f64;
        let sy = self.size as f64 / self.height as f64;
        ((u - self.x0 as f64 + 0.5) * sx - 0.5, (v - self.y0 as f64 + 0.5) * sy - 0.5)
    }

    pub fn to_raw(&self, un: f64, vn: f64) -> (f64, f64) {
        let sx = self.width as f64 / self.size as f64;
        let sy = self.height as f64 / self.size as f64;
        ((un + 0.5) * sx - 0.5 + self.x0 as f64, (vn + 0.5) * sy - 0.5 + self.y0 as f64)
    }
}

/// How cube-frame coordinates relate to world millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrameMap {
    World,
    /// Network-input pixels of the main view plus scaled camera depth.
    Pixel { crop: Crop, camera: CameraModel, depth_scale: f64 },
}

impl FrameMap {
    pub fn to_world(&self, p: Vec3) -> Result<Vec3> {
        match self {
            FrameMap::World => Ok(p),
            FrameMap::Pixel { crop, camera, depth_scale } => {
                let (u, v) = crop.to_raw(p[0], p[1]);
                pixel_to_world(u, v, p[2] / depth_scale, camera)
            }
        }
    }

    pub fn from_world(&self, p: Vec3) -> Result<Vec3> {
        match self {
            FrameMap::World => Ok(p),
            FrameMap::Pixel { crop, camera, depth_scale } => {
                let [u, v, z] = world_to_pixel(p, camera)?;
                let (un, vn) = crop.to_network(u, v);
                Ok([un, vn, z * depth_scale])
            }
        }
    }
}
