use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{add, mat_mul, mat_vec, norm, Frame, JointSet, Mat3, Vec3};
use crate::{Error, Result};

/// Kinematic tree in world millimetres. World frame: z up, the subject faces −y,
/// so the subject's left is +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub names: Vec<String>,
    /// `None` for the root. Parents precede their children.
    pub parents: Vec<Option<usize>>,
    /// Rest offset from the parent in the parent's frame; its length is the bone length.
    pub offsets: Vec<Vec3>,
    /// Per-joint Euler ranges `[lo, hi]` in radians for rotations about x, y, z.
    pub angle_ranges: Vec<[[f64; 2]; 3]>,
    /// Capsule radius of the bone ending at each joint (a sphere for the root).
    pub radii: Vec<f64>,
    /// Rest position of the root.
    pub root: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkeletonKind {
    /// Mid, left and right waist plus both shoulders.
    Ubm5,
    /// Head, neck, shoulders, elbows, hands, torso, hips, knees, feet.
    Itop15,
}

/// How a pose is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoseMode {
    Random,
    /// Trunk sweep toward one of 8 directions (`k · 45°` from +x). `phase` in
    /// `[0, 1]` goes out and back: the lean is `sin(π·phase)` of the maximum.
    Excursion { direction: usize, phase: f64 },
}

/// Maximum horizontal root shift and trunk tilt of an excursion.
pub const EXCURSION_SHIFT_MM: f64 = 120.0;
pub const EXCURSION_TILT: f64 = 0.35;

fn deg(a: f64) -> f64 {
    a * PI / 180.0
}

fn sym(x: f64, y: f64, z: f64) -> [[f64; 2]; 3] {
    [[-deg(x), deg(x)], [-deg(y), deg(y)], [-deg(z), deg(z)]]
}

impl SkeletonSpec {
    pub fn preset(kind: SkeletonKind) -> Self {
        match kind {
            SkeletonKind::Ubm5 => Self::ubm5(),
            SkeletonKind::Itop15 => Self::itop15(),
        }
    }

    pub fn ubm5() -> Self {
        let spec = SkeletonSpec {
            names: ["MW", "LW", "RW", "LS", "RS"].map(String::from).to_vec(),
            parents: vec![None, Some(0), Some(0), Some(0), Some(0)],
            offsets: vec![[0.0; 3], [140.0, 0.0, 0.0], [-140.0, 0.0, 0.0], [180.0, 0.0, 480.0], [-180.0, 0.0, 480.0]],
            angle_ranges: vec![sym(12.0, 12.0, 20.0), sym(3.0, 3.0, 3.0), sym(3.0, 3.0, 3.0), sym(5.0, 5.0, 5.0), sym(5.0, 5.0, 5.0)],
            radii: vec![110.0, 70.0, 70.0, 80.0, 80.0],
            root: [0.0, 0.0, 1000.0],
        };
        spec.validate().expect("preset is valid");
        spec
    }

    pub fn itop15() -> Self {
        let names = [
            "Head", "Neck", "R Shoulder", "L Shoulder", "R Elbow", "L Elbow", "R Hand", "L Hand", "Torso", "R Hip",
            "L Hip", "R Knee", "L Knee", "R Foot", "L Foot",
        ];
        // torso is the root but sits at index 8 in the usual ordering; parents
        // must precede children, so the stored order differs from `names`
        let order = [8, 1, 0, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14];
        let parent_of = |name: &str| -> Option<&str> {
            match name {
                "Torso" => None,
                "Neck" | "R Hip" | "L Hip" => Some("Torso"),
                "Head" | "R Shoulder" | "L Shoulder" => Some("Neck"),
                "R Elbow" => Some("R Shoulder"),
                "L Elbow" => Some("L Shoulder"),
                "R Hand" => Some("R Elbow"),
                "L Hand" => Some("L Elbow"),
                "R Knee" => Some("R Hip"),
                "L Knee" => Some("L Hip"),
                "R Foot" => Some("R Knee"),
                "L Foot" => Some("L Knee"),
                _ => unreachable!(),
            }
        };
        let offset_of = |name: &str| -> Vec3 {
            match name {
                "Torso" => [0.0; 3],
                "Neck" => [0.0, 0.0, 300.0],
                "Head" => [0.0, 0.0, 200.0],
                "R Shoulder" => [-180.0, 0.0, 0.0],
                "L Shoulder" => [180.0, 0.0, 0.0],
                "R Elbow" | "L Elbow" => [0.0, 0.0, -280.0],
                "R Hand" | "L Hand" => [0.0, 0.0, -260.0],
                "R Hip" => [-100.0, 0.0, -250.0],
                "L Hip" => [100.0, 0.0, -250.0],
                _ => [0.0, 0.0, -420.0],
            }
        };
        let ranges_of = |name: &str| match name {
            "Torso" => sym(10.0, 10.0, 30.0),
            "Neck" => sym(10.0, 10.0, 20.0),
            n if n.contains("Shoulder") => [[-deg(80.0), deg(40.0)], [-deg(60.0), deg(60.0)], [-deg(10.0), deg(10.0)]],
            n if n.contains("Elbow") => [[-deg(90.0), 0.0], [-deg(5.0), deg(5.0)], [-deg(5.0), deg(5.0)]],
            n if n.contains("Hip") => [[-deg(30.0), deg(15.0)], [-deg(10.0), deg(10.0)], [-deg(5.0), deg(5.0)]],
            n if n.contains("Knee") => [[0.0, deg(40.0)], [0.0, 0.0], [0.0, 0.0]],
            _ => sym(2.0, 2.0, 2.0),
        };
        let radius_of = |name: &str| match name {
            "Torso" => 130.0,
            "Neck" => 60.0,
            "Head" => 90.0,
            n if n.contains("Shoulder") => 70.0,
            n if n.contains("Hip") => 90.0,
            n if n.contains("Knee") => 65.0,
            n if n.contains("Foot") => 50.0,
            _ => 45.0,
        };
        let stored: Vec<&str> = order.iter().map(|&i| names[i]).collect();
        let index = |n: &str| stored.iter().position(|&s| s == n).unwrap();
        let spec = SkeletonSpec {
            names: stored.iter().map(|s| s.to_string()).collect(),
            parents: stored.iter().map(|n| parent_of(n).map(index)).collect(),
            offsets: stored.iter().map(|n| offset_of(n)).collect(),
            angle_ranges: stored.iter().map(|n| ranges_of(n)).collect(),
            radii: stored.iter().map(|n| radius_of(n)).collect(),
            root: [0.0, 0.0, 1100.0],
        };
        spec.validate().expect("preset is valid");
        spec
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::config("skeleton has no joints"));
        }
        if [self.parents.len(), self.offsets.len(), self.angle_ranges.len(), self.radii.len()].iter().any(|&l| l != n) {
            return Err(Error::config("skeleton field lengths differ"));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parents[0].is_some() {
            return Err(Error::config("skeleton needs exactly one root, stored first"));
        }
        for j in 1..n {
            match self.parents[j] {
                Some(p) if p < j => {}
                _ => return Err(Error::config(format!("joint {} must have an earlier parent", self.names[j]))),
            }
            if !(norm(self.offsets[j]) > 0.0) {
                return Err(Error::config(format!("bone ending at {} has zero length", self.names[j])));
            }
        }
        if self.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config("capsule radii must be positive"));
        }
        for r in &self.angle_ranges {
            if r.iter().any(|[lo, hi]| lo > hi) {
                return Err(Error::config("angle range with lo > hi"));
            }
        }
        Ok(())
    }

    pub fn bone_lengths(&self) -> Vec<f64> {
        self.offsets.iter().map(|&o| norm(o)).collect()
    }

    /// Same topology with every length and radius multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for o in &mut out.offsets {
            *o = o.map(|x| x * s);
        }
        for r in &mut out.radii {
            *r *= s;
        }
        out.root[2] *= s;
        out
    }

    /// Forward kinematics from a root pose and per-joint local Euler angles.
    /// The root's own angles are ignored in favour of `root_rotation`.
    pub fn forward_kinematics(&self, root: Vec3, root_rotation: &Mat3, angles: &[[f64; 3]]) -> Vec<Vec3> {
        let n = self.len();
        let mut pos = vec![[0.0; 3]; n];
        let mut orient = vec![*root_rotation; n];
        pos[0] = root;
        for j in 1..n {
            let p = self.parents[j].expect("validated");
            pos[j] = add(pos[p], mat_vec(&orient[p], self.offsets[j]));
            orient[j] = mat_mul(&orient[p], &euler(angles[j]));
        }
        pos
    }

    pub fn rest_pose(&self) -> JointSet {
        let coords = self.forward_kinematics(self.root, &euler([0.0; 3]), &vec![[0.0; 3]; self.len()]);
        self.joint_set(coords)
    }

    fn joint_set(&self, coords: Vec<Vec3>) -> JointSet {
        JointSet { names: self.names.clone(), coords, frame: Frame::World }
    }

    /// Draws a world-frame pose. `root_shift` moves the whole subject horizontally.
    pub fn sample_pose(&self, mode: PoseMode, root_shift: Vec3, rng: &mut impl Rng) -> JointSet {
        let mut angles: Vec<[f64; 3]> = self
            .angle_ranges
            .iter()
            .map(|r| std::array::from_fn(|k| if r[k][0] < r[k][1] { rng.random_range(r[k][0]..=r[k][1]) } else { r[k][0] }))
            .collect();
        let (root, rotation) = match mode {
            PoseMode::Random => (add(self.root, root_shift), euler(angles[0])),
            PoseMode::Excursion { direction, phase } => {
                let phi = (direction % 8) as f64 * PI / 4.0;
                let lean = (PI * phase.clamp(0.0, 1.0)).sin();
                let d = [phi.cos(), phi.sin(), 0.0];
                // rotating +z toward d happens about z × d
                let axis = [-phi.sin(), phi.cos(), 0.0];
                for a in angles.iter_mut() {
                    *a = a.map(|x| x * 0.25);
                }
                let root = add(add(self.root, root_shift), d.map(|x| x * lean * EXCURSION_SHIFT_MM));
                (root, axis_angle(axis, lean * EXCURSION_TILT))
            }
        };
        angles[0] = [0.0; 3];
        self.joint_set(self.forward_kinematics(root, &rotation, &angles))
    }
}

/// `Rz · Ry · Rx`.
pub fn euler([x, y, z]: [f64; 3]) -> Mat3 {
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Rodrigues rotation about a unit axis.
pub fn axis_angle(a: Vec3, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = a;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}
