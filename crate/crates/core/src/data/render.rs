use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::skeleton::SkeletonSpec;
use crate::geometry::{dot, mat_t_vec, norm, sub, world_to_pixel, CameraModel, JointSet, Vec3};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Main,
    Auxiliary,
}

/// One depth image. `depth[v * width + u]` is the camera-frame z of the first
/// surface hit through pixel `(u, v)`, in millimetres; 0 means no return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub camera: CameraModel,
    pub view: View,
}

impl DepthFrame {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

/// Segment `a → b` swept by a ball of radius `r`. `a == b` gives a sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub r: f64,
}

/// A posed subject seen by two cameras in front of a fronto-parallel background.
#[derive(Clone, Debug)]
pub struct Scene {
    pub pose: JointSet,
    pub capsules: Vec<Capsule>,
    pub main: CameraModel,
    pub auxiliary: CameraModel,
    pub width: usize,
    pub height: usize,
    /// Camera-frame depth of the background plane for each view.
    pub background: f64,
    pub noise: NoiseConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_mm: f64,
    /// Fraction of pixels that return nothing.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma_mm: 2.0, dropout: 0.01 }
    }
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { sigma_mm: 0.0, dropout: 0.0 };
}

/// One capsule per bone plus a sphere on the root.
pub fn body_capsules(spec: &SkeletonSpec, pose: &JointSet) -> Vec<Capsule> {
    let mut out = vec![Capsule { a: pose.coords[0], b: pose.coords[0], r: spec.radii[0] }];
    for j in 1..spec.len() {
        let p = spec.parents[j].expect("validated skeleton");
        out.push(Capsule { a: pose.coords[p], b: pose.coords[j], r: spec.radii[j] });
    }
    out
}

/// Smallest positive ray parameter at which a unit-direction ray enters the capsule.
pub fn ray_capsule(o: Vec3, d: Vec3, c: &Capsule) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    for centre in [c.a, c.b] {
        let oc = sub(o, centre);
        let b = dot(d, oc);
        let h = b * b - (dot(oc, oc) - c.r * c.r);
        if h >= 0.0 {
            keep(-b - h.sqrt());
        }
    }
    let ba = sub(c.b, c.a);
    let baba = dot(ba, ba);
    if baba > 0.0 {
        let oa = sub(o, c.a);
        let bard = dot(ba, d);
        let baoa = dot(ba, oa);
        let qa = baba - bard * bard;
        if qa > 1e-12 * baba {
            let qb = baba * dot(d, oa) - baoa * bard;
            let qc = baba * dot(oa, oa) - baoa * baoa - c.r * c.r * baba;
            let h = qb * qb - qa * qc;
            if h >= 0.0 {
                let t = (-qb - h.sqrt()) / qa;
                let y = baoa + t * bard;
                if y > 0.0 && y < baba {
                    keep(t);
                }
            }
        }
    }
    best
}

/// Noise-free depth through pixel `(u, v)`.
pub fn trace_pixel(u: f64, v: f64, cam: &CameraModel, capsules: &[Capsule], background: f64) -> f64 {
    let ray_cam = [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0];
    let len = norm(ray_cam);
    let d = mat_t_vec(&cam.extrinsic.rotation, ray_cam.map(|x| x / len));
    let o = cam.center();
    let hit = capsules.iter().filter_map(|c| ray_capsule(o, d, c)).fold(f64::INFINITY, f64::min);
    // a unit step along the ray advances 1/len in camera depth
    (hit / len).min(background)
}

pub fn render_view(
    cam: &CameraModel,
    width: usize,
    height: usize,
    capsules: &[Capsule],
    background: f64,
    view: View,
) -> DepthFrame {
    let mut depth = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            depth.push(trace_pixel(u as f64, v as f64, cam, capsules, background));
        }
    }
    DepthFrame { width, height, depth, camera: *cam, view }
}

pub fn add_noise(frame: &mut DepthFrame, noise: &NoiseConfig, rng: &mut impl Rng) {
    if noise.sigma_mm > 0.0 {
        let n = Normal::new(0.0, noise.sigma_mm).expect("sigma is finite and positive");
        for d in &mut frame.depth {
            *d = (*d + n.sample(rng)).max(0.0);
        }
    }
    if noise.dropout > 0.0 {
        for d in &mut frame.depth {
            if rng.random::<f64>() < noise.dropout {
                *d = 0.0;
            }
        }
    }
}

impl Scene {
    /// Main and auxiliary frames, noise applied in that order from `rng`.
    pub fn render(&self, rng: &mut impl Rng) -> [DepthFrame; 2] {
        let mut out = [(&self.main, View::Main), (&self.auxiliary, View::Auxiliary)]
            .map(|(cam, view)| render_view(cam, self.width, self.height, &self.capsules, self.background, view));
        for f in &mut out {
            add_noise(f, &self.noise, rng);
        }
        out
    }

    /// Whether every joint projects inside both images in front of the cameras.
    pub fn fully_visible(&self) -> Result<bool> {
        for cam in [&self.main, &self.auxiliary] {
            for &p in &self.pose.coords {
                let Ok([u, v, _]) = world_to_pixel(p, cam) else { return Ok(false) };
                if u < -0.5 || v < -0.5 || u > self.width as f64 - 0.5 || v > self.height as f64 - 0.5 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}
