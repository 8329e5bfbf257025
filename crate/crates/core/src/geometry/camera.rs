use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub(crate) fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub(crate) fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub(crate) const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Rigid transform taking world points into the camera frame: `p_cam = R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Rigid {
    pub const IDENTITY: Rigid = Rigid { rotation: IDENTITY, translation: [0.0; 3] };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.rotation, p), self.translation)
    }

    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        mat_t_vec(&self.rotation, sub(p, self.translation))
    }

    fn is_proper_rotation(&self) -> bool {
        let r = &self.rotation;
        let ortho = (0..3).all(|i| {
            (0..3).all(|j| {
                let expect = if i == j { 1.0 } else { 0.0 };
                (dot(r[i], r[j]) - expect).abs() < 1e-9
            })
        });
        ortho && (det(r) - 1.0).abs() < 1e-9
    }
}

/// Pinhole camera. Camera frame: x right, y down, z along the optical axis.
/// Pixel `(u, v)` has its centre at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: Rigid,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, extrinsic: Rigid) -> Result<Self> {
        let cam = CameraModel { fx, fy, cx, cy, extrinsic };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if !self.extrinsic.is_proper_rotation() {
            return Err(Error::config("camera rotation is not orthonormal with det +1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image y points away from it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let forward = normalize(sub(target, eye));
        let right = cross(forward, up);
        if norm(right) < 1e-9 {
            return Err(Error::config("look_at: up vector parallel to viewing direction"));
        }
        let right = normalize(right);
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = scale(mat_vec(&rotation, eye), -1.0);
        Self::new(fx, fy, cx, cy, Rigid { rotation, translation })
    }

    pub fn to_camera(&self, p_world: Vec3) -> Vec3 {
        self.extrinsic.apply(p_world)
    }

    pub fn to_world(&self, p_cam: Vec3) -> Vec3 {
        self.extrinsic.apply_inverse(p_cam)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.to_world([0.0; 3])
    }
}

/// Back-projects pixel `(u, v)` at camera-frame depth `z` to world coordinates.
pub fn pixel_to_world(u: f64, v: f64, z: f64, cam: &CameraModel) -> Result<Vec3> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    let p_cam = [(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z];
    Ok(cam.to_world(p_cam))
}

/// Projects a world point to `(u, v, z)` with `z` the camera-frame depth.
pub fn world_to_pixel(p: Vec3, cam: &CameraModel) -> Result<Vec3> {
    let c = cam.to_camera(p);
    if !(c[2] > 0.0) {
        return Err(Error::Domain(format!("point {p:?} is behind the camera (z = {})", c[2])));
    }
    Ok([cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy, c[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_cam(fx: f64) -> CameraModel {
        CameraModel::new(fx, fx, 32.0, 24.0, Rigid::IDENTITY).unwrap()
    }

    #[test]
    fn principal_ray() {
        let cam = identity_cam(100.0);
        let p = pixel_to_world(cam.cx, cam.cy, 750.0, &cam).unwrap();
        assert_eq!(p, [0.0, 0.0, 750.0]);
    }

    #[test]
    fn similar_triangles() {
        let cam = identity_cam(100.0);
        let p = pixel_to_world(cam.cx + 50.0, cam.cy, 200.0, &cam).unwrap();
        assert!((p[0] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_depth_is_domain_error() {
        let cam = identity_cam(100.0);
        assert!(matches!(pixel_to_world(0.0, 0.0, 0.0, &cam), Err(Error::Domain(_))));
        assert!(matches!(world_to_pixel([0.0, 0.0, -5.0], &cam), Err(Error::Domain(_))));
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let ext = Rigid { rotation: IDENTITY, translation: [0.0, 0.0, 1000.0] };
        // camera sits at world (0,0,-1000) looking down +z
        let cam = CameraModel::new(80.0, 80.0, 32.0, 32.0, ext).unwrap();
        assert_eq!(cam.center(), [0.0, 0.0, -1000.0]);
        assert_eq!(world_to_pixel([0.0; 3], &cam).unwrap(), [32.0, 32.0, 1000.0]);
    }

    #[test]
    fn doubling_focal_length_doubles_offset() {
        let p = [120.0, -40.0, 900.0];
        let a = world_to_pixel(p, &identity_cam(100.0)).unwrap();
        let b = world_to_pixel(p, &identity_cam(200.0)).unwrap();
        assert!(((b[0] - 32.0) - 2.0 * (a[0] - 32.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mirror = Rigid { rotation: [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] };
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, mirror).is_err());
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, Rigid::IDENTITY).is_err());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let cam = CameraModel::look_at([0.0, -1800.0, 900.0], [0.0, 0.0, 800.0], [0.0, 0.0, 1.0], 60.0, 60.0, 32.0, 32.0)
            .unwrap();
        let px = world_to_pixel([0.0, 0.0, 800.0], &cam).unwrap();
        assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 32.0).abs() < 1e-9);
        // world up maps to image up (smaller v)
        let above = world_to_pixel([0.0, 0.0, 1000.0], &cam).unwrap();
        assert!(above[1] < 32.0);
    }

    proptest! {
        #[test]
        fn projection_round_trip(u in 0.0f64..64.0, v in 0.0f64..64.0, z in 200.0f64..4000.0,
                                 ex in -500.0f64..500.0, ey in -2500.0f64..-1500.0) {
            let cam = CameraModel::look_at([ex, ey, 900.0], [0.0, 0.0, 800.0], [0.0, 0.0, 1.0], 55.0, 57.0, 31.5, 30.0).unwrap();
            let p = pixel_to_world(u, v, z, &cam).unwrap();
            let back = world_to_pixel(p, &cam).unwrap();
            prop_assert!((back[0] - u).abs() < 1e-9);
            prop_assert!((back[1] - v).abs() < 1e-9);
            prop_assert!((back[2] - z).abs() < 1e-9);
        }
    }
}
