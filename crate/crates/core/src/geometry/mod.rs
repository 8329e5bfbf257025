//! Cameras, the attention cube and the cube regression arithmetic.

mod camera;
mod cube;
mod frame;

pub use camera::{pixel_to_world, world_to_pixel, CameraModel, Mat3, Rigid, Vec3};
pub(crate) use camera::{add, dot, mat_mul, mat_t_vec, mat_vec, norm, sub};
#[cfg(test)]
pub(crate) use camera::scale;
pub use cube::{
    build_cube, linspace, regress_joints, AttentionCube, CubeMode, CubeSpec, Frame, JointEstimate, JointSet,
    Surface, SurfaceGrid, SurfaceLayout, SurfaceWeights, WEIGHT_SUM_TOL,
};
pub use frame::{Crop, FrameMap};
