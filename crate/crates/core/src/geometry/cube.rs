use serde::{Deserialize, Serialize};

use super::camera::Vec3;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeMode {
    /// x, y in image pixels of the network input; z is camera depth times `depth_scale`.
    PixelDepth,
    /// All three axes in world millimetres.
    World,
}

/// The cube faces carrying attention points, named by their two in-plane axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Surface {
    XY,
    YZ,
    ZX,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::XY, Surface::YZ, Surface::ZX];

    /// The (first, second) in-plane axes; grid index `[a, b]` lies at
    /// `first = lin(a)`, `second = lin(b)`.
    pub fn axes(self) -> (usize, usize) {
        match self {
            Surface::XY => (0, 1),
            Surface::YZ => (1, 2),
            Surface::ZX => (2, 0),
        }
    }
}

/// Evenly spaced points with inclusive endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// In-plane coordinates of one surface's `G×G` attention points.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceGrid {
    pub surface: Surface,
    /// `[G, G]` coordinate along the first in-plane axis.
    pub first: Tensor,
    /// `[G, G]` coordinate along the second in-plane axis.
    pub second: Tensor,
}

impl SurfaceGrid {
    /// Coordinate tensor for `axis`, if this surface spans it.
    pub fn coords(&self, axis: usize) -> Option<&Tensor> {
        let (a, b) = self.surface.axes();
        if axis == a {
            Some(&self.first)
        } else if axis == b {
            Some(&self.second)
        } else {
            None
        }
    }
}

/// How a surface's `G×G` weight map is laid over its two in-plane axes. The
/// identity puts weight row `r` at `first = lin(r)` and column `c` at
/// `second = lin(c)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceLayout {
    /// Rows run along the second axis, columns along the first.
    pub transpose: bool,
    pub flip_rows: bool,
    pub flip_cols: bool,
}

impl SurfaceLayout {
    /// Grid indices `(along first, along second)` of weight cell `(r, c)`.
    pub fn grid_index(self, r: usize, c: usize, g: usize) -> (usize, usize) {
        let r = if self.flip_rows { g - 1 - r } else { r };
        let c = if self.flip_cols { g - 1 - c } else { c };
        if self.transpose {
            (c, r)
        } else {
            (r, c)
        }
    }

    /// Layout whose rows follow `down` and columns follow `right` as closely
    /// as the surface's axes allow. Both directions are given in the cube frame.
    pub fn aligned(surface: Surface, right: Vec3, down: Vec3) -> Self {
        let (a, b) = surface.axes();
        let transpose = down[b].abs() + right[a].abs() > down[a].abs() + right[b].abs();
        let (row_axis, col_axis) = if transpose { (b, a) } else { (a, b) };
        SurfaceLayout { transpose, flip_rows: down[row_axis] < 0.0, flip_cols: right[col_axis] < 0.0 }
    }

    /// Layouts for all three surfaces facing a view with the given image axes.
    pub fn aligned_all(right: Vec3, down: Vec3) -> [Self; 3] {
        Surface::ALL.map(|s| Self::aligned(s, right, down))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub mode: CubeMode,
    pub grid: usize,
    pub origin: Vec3,
    pub sides: Vec3,
    /// Only meaningful in PixelDepth mode.
    pub depth_scale: f64,
    /// Per surface, in `Surface::ALL` order.
    #[serde(default)]
    pub layout: [SurfaceLayout; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCube {
    pub mode: CubeMode,
    pub origin: Vec3,
    pub sides: Vec3,
    pub grid: usize,
    pub depth_scale: f64,
    pub layout: [SurfaceLayout; 3],
    pub surfaces: [SurfaceGrid; 3],
}

pub fn build_cube(spec: &CubeSpec) -> Result<AttentionCube> {
    if spec.grid < 2 {
        return Err(Error::config(format!("cube grid must be at least 2, got {}", spec.grid)));
    }
    if spec.sides.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::config(format!("cube sides must be positive, got {:?}", spec.sides)));
    }
    if spec.mode == CubeMode::PixelDepth && !(spec.depth_scale > 0.0) {
        return Err(Error::config("depth_scale must be positive"));
    }
    let g = spec.grid;
    let axis_points: Vec<Vec<f64>> =
        (0..3).map(|k| linspace(spec.origin[k], spec.origin[k] + spec.sides[k], g)).collect();
    let surfaces = Surface::ALL.map(|surface| {
        let (a, b) = surface.axes();
        let layout = spec.layout[surface as usize];
        let at = |i: usize| layout.grid_index(i / g, i % g, g);
        SurfaceGrid {
            surface,
            first: Tensor::from_fn(&[g, g], |i| axis_points[a][at(i).0]),
            second: Tensor::from_fn(&[g, g], |i| axis_points[b][at(i).1]),
        }
    });
    Ok(AttentionCube {
        mode: spec.mode,
        origin: spec.origin,
        sides: spec.sides,
        grid: g,
        depth_scale: spec.depth_scale,
        layout: spec.layout,
        surfaces,
    })
}

impl AttentionCube {
    /// Cube over an `width × height` network input with the depth axis spanning
    /// `[z_origin, z_far]` millimetres, scaled by `depth_scale`.
    pub fn pixel_depth(
        grid: usize,
        width: usize,
        height: usize,
        z_origin_mm: f64,
        z_far_mm: f64,
        depth_scale: f64,
    ) -> Result<Self> {
        build_cube(&CubeSpec {
            mode: CubeMode::PixelDepth,
            grid,
            origin: [0.0, 0.0, z_origin_mm * depth_scale],
            sides: [width as f64, height as f64, (z_far_mm - z_origin_mm) * depth_scale],
            depth_scale,
            layout: Default::default(),
        })
    }

    /// World-mode cube around an axis-aligned box, padded by `pad` times the
    /// extent on each side.
    pub fn world_from_bounds(grid: usize, min: Vec3, max: Vec3, pad: f64) -> Result<Self> {
        let mut origin = [0.0; 3];
        let mut sides = [0.0; 3];
        for k in 0..3 {
            let extent = max[k] - min[k];
            origin[k] = min[k] - pad * extent;
            sides[k] = extent * (1.0 + 2.0 * pad);
        }
        build_cube(&CubeSpec { mode: CubeMode::World, grid, origin, sides, depth_scale: 1.0, layout: Default::default() })
    }

    /// The same points with each surface's weight map laid out as given.
    pub fn with_layout(&self, layout: [SurfaceLayout; 3]) -> Result<Self> {
        build_cube(&CubeSpec { layout, ..self.spec() })
    }

    pub fn spec(&self) -> CubeSpec {
        CubeSpec {
            mode: self.mode,
            grid: self.grid,
            origin: self.origin,
            sides: self.sides,
            depth_scale: self.depth_scale,
            layout: self.layout,
        }
    }

    pub fn surface(&self, s: Surface) -> &SurfaceGrid {
        &self.surfaces[s as usize]
    }

    pub fn center(&self) -> Vec3 {
        [0, 1, 2].map(|k| self.origin[k] + 0.5 * self.sides[k])
    }

    pub fn shortest_side(&self) -> f64 {
        self.sides.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.origin[k] - tol && p[k] <= self.origin[k] + self.sides[k] + tol)
    }

    pub fn frame(&self) -> Frame {
        match self.mode {
            CubeMode::PixelDepth => Frame::Pixel,
            CubeMode::World => Frame::World,
        }
    }

    pub fn apply_depth_scale(&self, z: f64) -> Result<f64> {
        self.require_pixel_depth()?;
        Ok(z * self.depth_scale)
    }

    pub fn remove_depth_scale(&self, z_scaled: f64) -> Result<f64> {
        self.require_pixel_depth()?;
        Ok(z_scaled / self.depth_scale)
    }

    fn require_pixel_depth(&self) -> Result<()> {
        if self.mode != CubeMode::PixelDepth {
            return Err(Error::contract("depth scaling only applies to PixelDepth cubes"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    /// Network-input pixels plus scaled depth.
    Pixel,
    World,
}

/// Ground-truth joints with names.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSet {
    pub names: Vec<String>,
    pub coords: Vec<Vec3>,
    pub frame: Frame,
}

impl JointSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(&[self.len(), 3], |i| self.coords[i / 3][i % 3])
    }
}

/// Regressed joint positions in the cube's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEstimate {
    pub joints: Vec<Vec3>,
    pub frame: Frame,
}

impl JointEstimate {
    pub fn from_tensor(t: &Tensor, frame: Frame) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 3 {
            return Err(Error::dim("joint_estimate", format!("expected [J,3], got {:?}", t.shape())));
        }
        let joints = t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(JointEstimate { joints, frame })
    }
}

/// Per-joint softmax weights for each surface, each shaped `[J, G, G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceWeights {
    pub xy: Tensor,
    pub yz: Tensor,
    pub zx: Tensor,
}

impl SurfaceWeights {
    pub fn get(&self, s: Surface) -> &Tensor {
        match s {
            Surface::XY => &self.xy,
            Surface::YZ => &self.yz,
            Surface::ZX => &self.zx,
        }
    }
}

pub const WEIGHT_SUM_TOL: f64 = 1e-5;

/// Each coordinate is the mean of the weighted point sums from the two
/// surfaces that span its axis.
pub fn regress_joints(weights: &SurfaceWeights, cube: &AttentionCube) -> Result<JointEstimate> {
    let g = cube.grid;
    let j = weights.xy.shape().first().copied().unwrap_or(0);
    for s in Surface::ALL {
        let w = weights.get(s);
        if w.shape() != [j, g, g] {
            return Err(Error::dim("regress_joints", format!("{s:?} weights {:?}, expected [{j},{g},{g}]", w.shape())));
        }
        for (jj, slice) in w.data().chunks_exact(g * g).enumerate() {
            let total: f64 = slice.iter().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::contract(format!("{s:?} weights of joint {jj} sum to {total}")));
            }
        }
    }
    let mut joints = vec![[0.0; 3]; j];
    for s in Surface::ALL {
        let grid = cube.surface(s);
        let (a, b) = s.axes();
        let w = weights.get(s).data();
        for (jj, joint) in joints.iter_mut().enumerate() {
            let slice = &w[jj * g * g..(jj + 1) * g * g];
            for (axis, coords) in [(a, &grid.first), (b, &grid.second)] {
                let weighted: f64 = slice.iter().zip(coords.data()).map(|(w, p)| w * p).sum();
                joint[axis] += 0.5 * weighted;
            }
        }
    }
    Ok(JointEstimate { joints, frame: cube.frame() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_weights(j: usize, g: usize, rng: &mut impl Rng) -> SurfaceWeights {
        let mut one = || {
            let mut t = Tensor::from_fn(&[j, g, g], |_| rng.random::<f64>().powi(3));
            for slice in t.data_mut().chunks_exact_mut(g * g) {
                let s: f64 = slice.iter().sum();
                slice.iter_mut().for_each(|v| *v /= s);
            }
            t
        };
        SurfaceWeights { xy: one(), yz: one(), zx: one() }
    }

    /// Brute-force walk over every attention point, recomputing coordinates
    /// from the even-spacing rule instead of reading the cube's grids.
    fn regress_oracle(w: &SurfaceWeights, cube: &AttentionCube) -> Vec<Vec3> {
        let g = cube.grid;
        let j = w.xy.shape()[0];
        let coord = |axis: usize, i: usize| cube.origin[axis] + i as f64 * cube.sides[axis] / (g - 1) as f64;
        (0..j)
            .map(|jj| {
                let (mut xs, mut ys, mut zs) = ([0.0; 2], [0.0; 2], [0.0; 2]);
                for a in 0..g {
                    for b in 0..g {
                        let xy = w.xy.at(&[jj, a, b]);
                        let yz = w.yz.at(&[jj, a, b]);
                        let zx = w.zx.at(&[jj, a, b]);
                        xs[0] += xy * coord(0, a);
                        ys[0] += xy * coord(1, b);
                        ys[1] += yz * coord(1, a);
                        zs[0] += yz * coord(2, b);
                        zs[1] += zx * coord(2, a);
                        xs[1] += zx * coord(0, b);
                    }
                }
                [(xs[0] + xs[1]) / 2.0, (ys[0] + ys[1]) / 2.0, (zs[0] + zs[1]) / 2.0]
            })
            .collect()
    }

    fn world_cube(g: usize) -> AttentionCube {
        build_cube(&CubeSpec {
            mode: CubeMode::World,
            grid: g,
            origin: [-300.0, 120.0, 500.0],
            sides: [640.0, 480.0, 900.0],
            depth_scale: 1.0,
            layout: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn layouts_permute_points_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let plain = world_cube(5);
        let layout = [
            SurfaceLayout { transpose: true, flip_rows: false, flip_cols: true },
            SurfaceLayout { transpose: false, flip_rows: true, flip_cols: false },
            SurfaceLayout { transpose: true, flip_rows: true, flip_cols: true },
        ];
        let laid = plain.with_layout(layout).unwrap();
        for _ in 0..50 {
            let w = random_weights(3, 5, &mut rng);
            // move every weight to the plain cell holding the same point
            let mut moved = [w.xy.clone(), w.yz.clone(), w.zx.clone()];
            for (si, s) in Surface::ALL.into_iter().enumerate() {
                let l = layout[si];
                for jj in 0..3 {
                    for r in 0..5 {
                        for c in 0..5 {
                            let (mut rr, mut cc) = (r, c);
                            if l.flip_rows {
                                rr = 4 - rr;
                            }
                            if l.flip_cols {
                                cc = 4 - cc;
                            }
                            if l.transpose {
                                std::mem::swap(&mut rr, &mut cc);
                            }
                            moved[si].set(&[jj, rr, cc], w.get(s).at(&[jj, r, c]));
                        }
                    }
                }
            }
            let [xy, yz, zx] = moved;
            let a = regress_joints(&w, &laid).unwrap().joints;
            let b = regress_joints(&SurfaceWeights { xy, yz, zx }, &plain).unwrap().joints;
            for (p, q) in a.iter().zip(&b) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn aligned_layout_follows_image_axes() {
        let l = SurfaceLayout::aligned_all([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let cube = AttentionCube::pixel_depth(4, 32, 32, 1000.0, 3000.0, 0.1).unwrap().with_layout(l).unwrap();
        let xy = cube.surface(Surface::XY);
        // row 1, column 3: x follows the column, y the row
        assert_eq!(xy.first.at(&[1, 3]), 32.0);
        assert!((xy.second.at(&[1, 3]) - 32.0 / 3.0).abs() < 1e-12);
        // a camera on the -x side looking along +x with z up
        let side = SurfaceLayout::aligned_all([0.0, -1.0, 0.0], [0.0, 0.0, -1.0]);
        assert_eq!(side[Surface::YZ as usize], SurfaceLayout { transpose: true, flip_rows: true, flip_cols: true });
        assert!(!side[Surface::XY as usize].transpose && side[Surface::XY as usize].flip_cols);
        assert!(!side[Surface::ZX as usize].transpose && side[Surface::ZX as usize].flip_rows);
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 10.0, 3), vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn pixel_cube_spans_image() {
        let cube = AttentionCube::pixel_depth(2, 256, 256, 1000.0, 3000.0, 0.1).unwrap();
        let xy = cube.surface(Surface::XY);
        assert_eq!(xy.first.data(), &[0.0, 0.0, 256.0, 256.0]);
        assert_eq!(xy.second.data(), &[0.0, 256.0, 0.0, 256.0]);
        assert_eq!(cube.origin[2], 100.0);
        assert_eq!(cube.sides[2], 200.0);
    }

    #[test]
    fn grid_64_has_4096_points_per_surface() {
        let cube = AttentionCube::pixel_depth(64, 256, 256, 1000.0, 3000.0, 0.1).unwrap();
        for s in Surface::ALL {
            assert_eq!(cube.surface(s).first.numel(), 4096);
        }
    }

    #[test]
    fn grid_below_two_is_config_error() {
        let err = build_cube(&CubeSpec { mode: CubeMode::World, grid: 1, origin: [0.0; 3], sides: [1.0; 3], depth_scale: 1.0, layout: Default::default() });
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn neighbour_gap_is_exact() {
        let cube = world_cube(7);
        let xs = linspace(cube.origin[0], cube.origin[0] + cube.sides[0], 7);
        let gap = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!((gap - cube.sides[0] / 6.0).abs() < 1e-12);
        for s in Surface::ALL {
            let grid = cube.surface(s);
            let (a, b) = s.axes();
            for v in grid.first.data() {
                assert!(*v >= cube.origin[a] && *v <= cube.origin[a] + cube.sides[a]);
            }
            for v in grid.second.data() {
                assert!(*v >= cube.origin[b] && *v <= cube.origin[b] + cube.sides[b]);
            }
        }
    }

    #[test]
    fn uniform_weights_land_on_center() {
        let cube = world_cube(5);
        let u = Tensor::full(&[3, 5, 5], 1.0 / 25.0);
        let w = SurfaceWeights { xy: u.clone(), yz: u.clone(), zx: u };
        let est = regress_joints(&w, &cube).unwrap();
        for j in est.joints {
            for k in 0..3 {
                assert!((j[k] - cube.center()[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_weights_select_the_point() {
        let cube = world_cube(4);
        let (a, b) = (1, 3);
        let mut hot = Tensor::zeros(&[1, 4, 4]);
        hot.set(&[0, a, b], 1.0);
        let w = SurfaceWeights { xy: hot.clone(), yz: hot.clone(), zx: hot };
        let est = regress_joints(&w, &cube).unwrap();
        // XY gives x=lin(a), y=lin(b); YZ gives y=lin(a), z=lin(b); ZX gives z=lin(a), x=lin(b)
        let lin = |axis: usize, i: usize| linspace(cube.origin[axis], cube.origin[axis] + cube.sides[axis], 4)[i];
        let expect = [
            0.5 * (lin(0, a) + lin(0, b)),
            0.5 * (lin(1, b) + lin(1, a)),
            0.5 * (lin(2, b) + lin(2, a)),
        ];
        assert_eq!(est.joints[0], expect);

        // the same index on both contributing surfaces reproduces the point exactly
        let mut xy = Tensor::zeros(&[1, 4, 4]);
        xy.set(&[0, 2, 1], 1.0);
        let mut yz = Tensor::zeros(&[1, 4, 4]);
        yz.set(&[0, 1, 3], 1.0);
        let mut zx = Tensor::zeros(&[1, 4, 4]);
        zx.set(&[0, 3, 2], 1.0);
        let est = regress_joints(&SurfaceWeights { xy, yz, zx }, &cube).unwrap();
        assert_eq!(est.joints[0], [lin(0, 2), lin(1, 1), lin(2, 3)]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cube = world_cube(4);
        for _ in 0..20 {
            let w = random_weights(3, 4, &mut rng);
            let est = regress_joints(&w, &cube).unwrap();
            for (p, q) in est.joints.iter().zip(regress_oracle(&w, &cube)) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn containment_translation_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cube = world_cube(6);
        let t = [13.0, -7.5, 250.0];
        let mut moved_spec = cube.spec();
        for k in 0..3 {
            moved_spec.origin[k] += t[k];
        }
        let moved = build_cube(&moved_spec).unwrap();
        for _ in 0..1000 {
            let w = random_weights(2, 6, &mut rng);
            let base = regress_joints(&w, &cube).unwrap();
            for p in &base.joints {
                assert!(cube.contains(*p, 1e-9));
            }
            let shifted = regress_joints(&w, &moved).unwrap();
            for (p, q) in base.joints.iter().zip(&shifted.joints) {
                for k in 0..3 {
                    assert!((q[k] - p[k] - t[k]).abs() < 1e-9);
                }
            }
        }
        // a permutation applied to weights and point coordinates alike: summing in
        // reversed order is the same regression up to rounding
        let w = random_weights(1, 6, &mut rng);
        let est = regress_joints(&w, &cube).unwrap();
        let grid = cube.surface(Surface::XY);
        let wx = w.xy.data();
        let rev: f64 = (0..36).rev().map(|i| wx[i] * grid.first.data()[i]).sum();
        let zx = cube.surface(Surface::ZX);
        let rev2: f64 = (0..36).rev().map(|i| w.zx.data()[i] * zx.second.data()[i]).sum();
        assert!((est.joints[0][0] - 0.5 * (rev + rev2)).abs() < 1e-9);
    }

    #[test]
    fn unnormalized_weights_are_rejected() {
        let cube = world_cube(3);
        let w = Tensor::full(&[1, 3, 3], 0.2);
        let err = regress_joints(&SurfaceWeights { xy: w.clone(), yz: w.clone(), zx: w }, &cube);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn depth_scale_round_trip_and_mode_check() {
        let cube = AttentionCube::pixel_depth(4, 32, 32, 1000.0, 3000.0, 0.1).unwrap();
        assert_eq!(cube.apply_depth_scale(2000.0).unwrap(), 200.0);
        let z = 1234.5678;
        assert!((cube.remove_depth_scale(cube.apply_depth_scale(z).unwrap()).unwrap() - z).abs() < 1e-12);
        let unit = AttentionCube::pixel_depth(4, 32, 32, 1000.0, 3000.0, 1.0).unwrap();
        assert_eq!(unit.apply_depth_scale(z).unwrap(), z);
        assert!(matches!(world_cube(3).apply_depth_scale(1.0), Err(Error::Contract(_))));
    }
}
