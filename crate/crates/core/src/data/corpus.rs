use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::preprocess::{preprocess, CropMode, PreprocessConfig};
use super::render::{body_capsules, NoiseConfig, Scene};
use super::skeleton::{PoseMode, SkeletonKind, SkeletonSpec};
use crate::geometry::{
    build_cube, world_to_pixel, AttentionCube, CameraModel, Crop, CubeMode, CubeSpec, FrameMap, SurfaceLayout, Vec3,
};
use crate::tensor::io::{encode, read_tensor, DType};
use crate::tensor::Tensor;
use crate::training::Sample;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rig {
    /// Main camera on the subject's right, auxiliary at the right-front.
    RightRightFront,
    /// Main camera in front, auxiliary looking down from above.
    FrontTop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseSampling {
    /// Rounds of trunk sweeps through the 8 principal directions.
    Excursion,
    Random,
}

fn d_ubm5() -> SkeletonKind {
    SkeletonKind::Ubm5
}
fn d_test_subjects() -> usize {
    1
}
fn d_frames_per_direction() -> usize {
    2
}
fn d_image() -> usize {
    64
}
fn d_input() -> usize {
    32
}
fn d_rig() -> Rig {
    Rig::RightRightFront
}
fn d_pose() -> PoseSampling {
    PoseSampling::Excursion
}
fn d_distance() -> f64 {
    2500.0
}
fn d_fov() -> f64 {
    30.0
}
fn d_scale_jitter() -> f64 {
    0.08
}
fn d_shift() -> f64 {
    50.0
}

/// `[data]` section. Only `subjects` and `samples_per_subject` are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub subjects: usize,
    pub samples_per_subject: usize,
    #[serde(default = "d_ubm5")]
    pub skeleton: SkeletonKind,
    /// The last `test_subjects` subjects form the test split.
    #[serde(default = "d_test_subjects")]
    pub test_subjects: usize,
    /// Subjects just before the test block form the validation split.
    #[serde(default)]
    pub val_subjects: usize,
    #[serde(default = "d_pose")]
    pub pose: PoseSampling,
    #[serde(default = "d_frames_per_direction")]
    pub frames_per_direction: usize,
    #[serde(default = "d_image")]
    pub image_width: usize,
    #[serde(default = "d_image")]
    pub image_height: usize,
    /// Side of the preprocessed network input.
    #[serde(default = "d_input")]
    pub input_size: usize,
    #[serde(default = "d_rig")]
    pub rig: Rig,
    #[serde(default = "d_distance")]
    pub camera_distance_mm: f64,
    #[serde(default = "d_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Working range; defaults to the camera distance ± 1000 mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_mm: Option<f64>,
    /// Defaults to the far limit + 200 mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_threshold_mm: Option<f64>,
    /// Depth of the wall behind the subject; defaults to the far limit + 500 mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_mm: Option<f64>,
    /// Defaults to a centred square for UBM-style data and a centroid crop for ITOP-style data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropMode>,
    #[serde(default = "d_scale_jitter")]
    pub subject_scale_jitter: f64,
    #[serde(default = "d_shift")]
    pub subject_shift_mm: f64,
}

impl DataConfig {
    pub fn new(subjects: usize, samples_per_subject: usize) -> Self {
        toml::from_str(&format!("subjects = {subjects}\nsamples_per_subject = {samples_per_subject}"))
            .expect("defaults deserialize")
    }

    pub fn near(&self) -> f64 {
        self.near_mm.unwrap_or(self.camera_distance_mm - 1000.0)
    }

    pub fn far(&self) -> f64 {
        self.far_mm.unwrap_or(self.camera_distance_mm + 1000.0)
    }

    pub fn background(&self) -> f64 {
        self.background_mm.unwrap_or(self.far() + 500.0)
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        let side = self.image_width.min(self.image_height);
        let crop = self.crop.unwrap_or(match self.skeleton {
            SkeletonKind::Ubm5 => CropMode::Fixed {
                x0: (self.image_width - side) / 2,
                y0: (self.image_height - side) / 2,
                width: side,
                height: side,
            },
            SkeletonKind::Itop15 => CropMode::Centroid { side: side * 3 / 4 },
        });
        PreprocessConfig {
            size: self.input_size,
            near_mm: self.near(),
            far_mm: self.far(),
            background_threshold_mm: self.background_threshold_mm.unwrap_or(self.far() + 200.0),
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, what: &str| Err(Error::config(format!("data.{key}: {what}")));
        if self.subjects == 0 {
            return err("subjects", "must be at least 1");
        }
        if self.samples_per_subject == 0 {
            return err("samples_per_subject", "must be at least 1");
        }
        if self.test_subjects + self.val_subjects >= self.subjects {
            return err("test_subjects", "test and validation subjects leave no training subject");
        }
        if self.frames_per_direction == 0 {
            return err("frames_per_direction", "must be at least 1");
        }
        if self.image_width < 2 || self.image_height < 2 {
            return err("image_width", "images need at least 2x2 pixels");
        }
        if self.input_size == 0 {
            return err("input_size", "must be positive");
        }
        if !(self.camera_distance_mm > 0.0) {
            return err("camera_distance_mm", "must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return err("fov_deg", "must lie in (0, 180)");
        }
        if !(self.noise.sigma_mm >= 0.0) || !(0.0..=1.0).contains(&self.noise.dropout) {
            return err("noise", "sigma_mm must be >= 0 and dropout in [0, 1]");
        }
        if !(self.subject_scale_jitter >= 0.0 && self.subject_scale_jitter < 0.5) {
            return err("subject_scale_jitter", "must lie in [0, 0.5)");
        }
        if !(self.subject_shift_mm >= 0.0) {
            return err("subject_shift_mm", "must be non-negative");
        }
        if !(self.background() > 0.0) {
            return err("background_mm", "must be positive");
        }
        self.preprocess_config().validate().map_err(|e| Error::config(format!("data: {e}")))
    }

    pub fn frames_per_round(&self) -> usize {
        8 * self.frames_per_direction
    }

    /// Main and auxiliary cameras aimed at the rest-pose centre.
    pub fn cameras(&self) -> Result<(CameraModel, CameraModel)> {
        let rest = SkeletonSpec::preset(self.skeleton).rest_pose();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &rest.coords {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let c: Vec3 = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
        let d = self.camera_distance_mm;
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let f = 0.5 * w / (0.5 * self.fov_deg.to_radians()).tan();
        let (cx, cy) = (0.5 * (w - 1.0), 0.5 * (h - 1.0));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let up = [0.0, 0.0, 1.0];
        let at = |off: Vec3, up: Vec3| CameraModel::look_at([c[0] + off[0], c[1] + off[1], c[2] + off[2]], c, up, f, f, cx, cy);
        Ok(match self.rig {
            // the subject faces −y, so their right is −x
            Rig::RightRightFront => (at([-d, 0.0, 0.0], up)?, at([-d * s, -d * s, 0.0], up)?),
            Rig::FrontTop => (at([0.0, -d, 0.0], up)?, at([0.0, 0.0, d], [0.0, 1.0, 0.0])?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    pub subject: usize,
    pub round: usize,
    /// Position inside the round.
    pub frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<usize>,
    pub split: Split,
    /// Every joint projects inside both images.
    pub visible: bool,
    pub crop_main: Crop,
    pub crop_aux: Crop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cameras {
    pub main: CameraModel,
    pub auxiliary: CameraModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub depth: String,
    pub world: String,
    pub pixel: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    /// Hash of the `[data]` section that produced the corpus.
    pub data_hash: String,
    pub joints: Vec<String>,
    pub image_width: usize,
    pub image_height: usize,
    pub input_size: usize,
    pub preprocess: PreprocessConfig,
    pub cameras: Cameras,
    pub units: Units,
    pub splits: Splits,
    /// Axis-aligned bounds of every world label.
    pub world_min: Vec3,
    pub world_max: Vec3,
    pub records: Vec<Record>,
    pub files: Vec<FileEntry>,
}

/// Stacked per-sample arrays plus their manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    /// `[N, 2, S, S]` preprocessed inputs, main view first.
    pub inputs: Tensor,
    /// `[N, 2, H, W]` noisy depth in millimetres.
    pub raw: Tensor,
    /// `[N, J, 3]` world labels in millimetres.
    pub world: Tensor,
    /// `[N, J, 3]` main-view labels: network-input pixel coordinates and camera depth in mm.
    pub pixel: Tensor,
}

/// How weight maps are laid over the cube surfaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeLayout {
    /// Weight rows and columns follow the main view's image rows and columns.
    MainView,
    /// Row index along each surface's first axis, column along its second.
    Plain,
}

/// `[cube]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CubeConfig {
    pub mode: CubeMode,
    /// Attention points per cube edge.
    pub grid: usize,
    /// Pixel-depth mode multiplier on camera depth; defaults to `S / (far − near)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_scale: Option<f64>,
    /// Pixel-depth mode depth of the cube's near face in mm; defaults to the near edge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_origin_mm: Option<f64>,
    /// World-mode lower corner and side lengths in mm. Both or neither;
    /// when absent the cube comes from the dataset bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sides: Option<[f64; 3]>,
    /// Relative padding of dataset bounds.
    pub padding: f64,
    pub layout: CubeLayout,
}

impl Default for CubeConfig {
    fn default() -> Self {
        CubeConfig {
            mode: CubeMode::World,
            grid: 16,
            depth_scale: None,
            z_origin_mm: None,
            origin: None,
            sides: None,
            padding: 0.1,
            layout: CubeLayout::MainView,
        }
    }
}

impl CubeConfig {
    pub fn depth_scale_for(&self, m: &Manifest) -> f64 {
        self.depth_scale.unwrap_or(m.input_size as f64 / (m.preprocess.far_mm - m.preprocess.near_mm))
    }

    pub fn z_origin_for(&self, m: &Manifest) -> f64 {
        self.z_origin_mm.unwrap_or(m.preprocess.near_mm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::config("cube.grid must be at least 2"));
        }
        if self.depth_scale.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::config("cube.depth_scale must be positive"));
        }
        if !(self.padding >= 0.0) {
            return Err(Error::config("cube.padding must be non-negative"));
        }
        if self.origin.is_some() != self.sides.is_some() {
            return Err(Error::config("cube.origin and cube.sides must be given together"));
        }
        if let Some(s) = self.sides {
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::config(format!("cube.sides must be positive, got {s:?}")));
            }
        }
        if self.origin.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(Error::config("cube.origin must be finite"));
        }
        if (self.origin.is_some() || self.sides.is_some()) && self.mode != CubeMode::World {
            return Err(Error::config("cube.origin and cube.sides only apply to world mode"));
        }
        if self.z_origin_mm.is_some() && self.mode != CubeMode::PixelDepth {
            return Err(Error::config("cube.z_origin_mm only applies to pixel-depth mode"));
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn subject_split(cfg: &DataConfig, s: usize) -> Split {
    let test_from = cfg.subjects - cfg.test_subjects;
    let val_from = test_from - cfg.val_subjects;
    if s >= test_from {
        Split::Test
    } else if s >= val_from {
        Split::Val
    } else {
        Split::Train
    }
}

struct Generated {
    record: Record,
    inputs: [Tensor; 2],
    raw: [Vec<f64>; 2],
    world: Vec<Vec3>,
    pixel: Vec<Vec3>,
}

fn generate_one(cfg: &DataConfig, seed: u64, index: usize, cams: &(CameraModel, CameraModel)) -> Result<Generated> {
    let subject = index / cfg.samples_per_subject;
    let k = index % cfg.samples_per_subject;
    let mut srng = ChaCha8Rng::seed_from_u64(seed);
    srng.set_stream((1u64 << 40) + subject as u64);
    let jitter = cfg.subject_scale_jitter;
    let scale = if jitter > 0.0 { 1.0 + srng.random_range(-jitter..=jitter) } else { 1.0 };
    let m = cfg.subject_shift_mm;
    let shift = if m > 0.0 { [srng.random_range(-m..=m), srng.random_range(-m..=m), 0.0] } else { [0.0; 3] };
    let spec = SkeletonSpec::preset(cfg.skeleton).scaled(scale);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let fpd = cfg.frames_per_direction;
    let within = k % cfg.frames_per_round();
    let (mode, direction) = match cfg.pose {
        PoseSampling::Excursion => {
            let direction = within / fpd;
            let phase = ((within % fpd) as f64 + 1.0) / (fpd as f64 + 1.0);
            (PoseMode::Excursion { direction, phase }, Some(direction))
        }
        PoseSampling::Random => (PoseMode::Random, None),
    };
    let pose = spec.sample_pose(mode, shift, &mut rng);
    let scene = Scene {
        capsules: body_capsules(&spec, &pose),
        pose,
        main: cams.0,
        auxiliary: cams.1,
        width: cfg.image_width,
        height: cfg.image_height,
        background: cfg.background(),
        noise: cfg.noise,
    };
    let frames = scene.render(&mut rng);
    let pcfg = cfg.preprocess_config();
    let (in_main, crop_main) = preprocess(&frames[0], &pcfg)?;
    let (in_aux, crop_aux) = preprocess(&frames[1], &pcfg)?;
    let pixel = scene
        .pose
        .coords
        .iter()
        .map(|&p| {
            let [u, v, z] = world_to_pixel(p, &cams.0)?;
            let (un, vn) = crop_main.to_network(u, v);
            Ok([un, vn, z])
        })
        .collect::<Result<Vec<_>>>()?;
    let record = Record {
        index,
        subject,
        round: k / cfg.frames_per_round(),
        frame: within,
        direction,
        split: subject_split(cfg, subject),
        visible: scene.fully_visible()?,
        crop_main,
        crop_aux,
    };
    let [f0, f1] = frames;
    Ok(Generated { record, inputs: [in_main, in_aux], raw: [f0.depth, f1.depth], world: scene.pose.coords, pixel })
}

/// Generates the whole corpus in memory. Each sample draws from its own RNG
/// stream, so the output does not depend on generation order.
pub fn build_corpus(cfg: &DataConfig, seed: u64, data_hash: &str) -> Result<Corpus> {
    cfg.validate()?;
    let cams = cfg.cameras()?;
    let n = cfg.subjects * cfg.samples_per_subject;
    let spec = SkeletonSpec::preset(cfg.skeleton);
    let (s, w, h, j) = (cfg.input_size, cfg.image_width, cfg.image_height, spec.len());
    let mut inputs = Vec::with_capacity(n * 2 * s * s);
    let mut raw = Vec::with_capacity(n * 2 * w * h);
    let mut world = Vec::with_capacity(n * j * 3);
    let mut pixel = Vec::with_capacity(n * j * 3);
    let mut records = Vec::with_capacity(n);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for index in 0..n {
        let g = generate_one(cfg, seed, index, &cams)?;
        for t in &g.inputs {
            inputs.extend_from_slice(t.data());
        }
        for r in &g.raw {
            raw.extend_from_slice(r);
        }
        for p in &g.world {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        world.extend(g.world.iter().flatten());
        pixel.extend(g.pixel.iter().flatten());
        records.push(g.record);
    }
    let by = |split| (0..cfg.subjects).filter(|&s| subject_split(cfg, s) == split).collect();
    let mut corpus = Corpus {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            seed,
            data_hash: data_hash.to_string(),
            joints: spec.names.clone(),
            image_width: w,
            image_height: h,
            input_size: s,
            preprocess: cfg.preprocess_config(),
            cameras: Cameras { main: cams.0, auxiliary: cams.1 },
            units: Units {
                depth: "camera-frame z, millimetres; 0 = no return".into(),
                world: "millimetres; z up, subject faces -y".into(),
                pixel: "network-input pixels of the main view (centres at integers); z in millimetres".into(),
            },
            splits: Splits { train: by(Split::Train), val: by(Split::Val), test: by(Split::Test) },
            world_min: lo,
            world_max: hi,
            records,
            files: Vec::new(),
        },
        inputs: Tensor::new(&[n, 2, s, s], inputs)?,
        raw: Tensor::new(&[n, 2, h, w], raw)?,
        world: Tensor::new(&[n, j, 3], world)?,
        pixel: Tensor::new(&[n, j, 3], pixel)?,
    };
    corpus.manifest.files = corpus.arrays().iter().map(|(name, t)| file_entry(name, t)).collect();
    Ok(corpus)
}

fn file_entry(name: &str, t: &Tensor) -> FileEntry {
    FileEntry { name: name.to_string(), shape: t.shape().to_vec(), sha256: sha256_hex(&encode(t, DType::F64)) }
}

/// Summary of a corpus written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct WriteSummary {
    pub samples: usize,
    pub subjects: usize,
    pub bytes: u64,
    pub manifest_sha256: String,
}

impl Corpus {
    fn arrays(&self) -> [(&'static str, &Tensor); 4] {
        [("inputs.acrt", &self.inputs), ("raw.acrt", &self.raw), ("world.acrt", &self.world), ("pixel.acrt", &self.pixel)]
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.manifest.joints.len()
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }

    /// Writes the arrays and `manifest.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<WriteSummary> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut bytes = 0u64;
        for (name, t) in self.arrays() {
            let buf = encode(t, DType::F64);
            bytes += buf.len() as u64;
            fs::write(dir.join(name), buf)?;
        }
        let manifest = self.manifest_bytes();
        bytes += manifest.len() as u64;
        fs::write(dir.join(MANIFEST_FILE), &manifest)?;
        Ok(WriteSummary {
            samples: self.len(),
            subjects: self.manifest.splits.train.len() + self.manifest.splits.val.len() + self.manifest.splits.test.len(),
            bytes,
            manifest_sha256: sha256_hex(&manifest),
        })
    }

    /// Reads a corpus back, checking the manifest version and every file hash.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch { found: manifest.version, supported: MANIFEST_VERSION });
        }
        let mut arrays = Vec::with_capacity(4);
        for name in ["inputs.acrt", "raw.acrt", "world.acrt", "pixel.acrt"] {
            let entry = manifest
                .files
                .iter()
                .find(|f| f.name == name)
                .ok_or_else(|| Error::Format(format!("manifest does not list {name}")))?;
            let buf = fs::read(dir.join(name))?;
            if sha256_hex(&buf) != entry.sha256 {
                return Err(Error::Format(format!("{name} does not match its manifest hash")));
            }
            let mut cursor = buf.as_slice();
            let t = read_tensor(&mut cursor)?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!("{name} has shape {:?}, manifest says {:?}", t.shape(), entry.shape)));
            }
            arrays.push(t);
        }
        let pixel = arrays.pop().unwrap();
        let world = arrays.pop().unwrap();
        let raw = arrays.pop().unwrap();
        let inputs = arrays.pop().unwrap();
        let n = manifest.records.len();
        if inputs.shape()[0] != n || world.shape()[0] != n || world.shape()[1] != manifest.joints.len() {
            return Err(Error::Format("array sizes disagree with the record list".into()));
        }
        Ok(Corpus { manifest, inputs, raw, world, pixel })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest.records.iter().filter(|r| r.split == split).map(|r| r.index).collect()
    }

    pub fn world_joints(&self, i: usize) -> Vec<Vec3> {
        let j = self.joints();
        self.world.data()[i * j * 3..(i + 1) * j * 3].chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn views(&self, i: usize) -> Vec<Tensor> {
        let s = self.manifest.input_size;
        let n = s * s;
        (0..2)
            .map(|v| {
                let start = (i * 2 + v) * n;
                Tensor::new(&[1, s, s], self.inputs.data()[start..start + n].to_vec()).expect("sized by construction")
            })
            .collect()
    }

    pub fn cube(&self, cfg: &CubeConfig) -> Result<AttentionCube> {
        cfg.validate()?;
        let m = &self.manifest;
        let far = m.preprocess.far_mm;
        let cube = match cfg.mode {
            CubeMode::World => match (cfg.origin, cfg.sides) {
                (Some(origin), Some(sides)) => build_cube(&CubeSpec {
                    mode: CubeMode::World,
                    grid: cfg.grid,
                    origin,
                    sides,
                    depth_scale: 1.0,
                    layout: Default::default(),
                })?,
                _ => AttentionCube::world_from_bounds(cfg.grid, m.world_min, m.world_max, cfg.padding)?,
            },
            CubeMode::PixelDepth => {
                let z0 = cfg.z_origin_for(m);
                if !(z0 < far) {
                    return Err(Error::config(format!("cube.z_origin_mm {z0} must lie before the far edge {far}")));
                }
                AttentionCube::pixel_depth(cfg.grid, m.input_size, m.input_size, z0, far, cfg.depth_scale_for(m))?
            }
        };
        match cfg.layout {
            CubeLayout::Plain => Ok(cube),
            CubeLayout::MainView => {
                let (right, down) = match cfg.mode {
                    CubeMode::World => {
                        let r = m.cameras.main.extrinsic.rotation;
                        (r[0], r[1])
                    }
                    CubeMode::PixelDepth => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
                };
                cube.with_layout(SurfaceLayout::aligned_all(right, down))
            }
        }
    }

    /// The frame map of sample `i` under a cube configuration.
    pub fn frame_map(&self, i: usize, cfg: &CubeConfig) -> FrameMap {
        match cfg.mode {
            CubeMode::World => FrameMap::World,
            CubeMode::PixelDepth => FrameMap::Pixel {
                crop: self.manifest.records[i].crop_main,
                camera: self.manifest.cameras.main,
                depth_scale: cfg.depth_scale_for(&self.manifest),
            },
        }
    }

    /// Training samples for one split, labels expressed in the cube frame.
    pub fn samples(&self, split: Split, cfg: &CubeConfig) -> Result<Vec<Sample>> {
        self.indices(split).into_iter().map(|i| self.sample(i, cfg)).collect()
    }

    pub fn sample(&self, i: usize, cfg: &CubeConfig) -> Result<Sample> {
        let world = self.world_joints(i);
        let map = self.frame_map(i, cfg);
        let target: Vec<f64> = match &map {
            FrameMap::World => world.iter().flatten().copied().collect(),
            FrameMap::Pixel { depth_scale, .. } => {
                let j = self.joints();
                self.pixel.data()[i * j * 3..(i + 1) * j * 3]
                    .chunks(3)
                    .flat_map(|c| [c[0], c[1], c[2] * depth_scale])
                    .collect()
            }
        };
        Ok(Sample { views: self.views(i), target: Tensor::new(&[self.joints(), 3], target)?, world, map })
    }
}
