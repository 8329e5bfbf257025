//! Fixtures shared by the benchmarks in `benches/`.

use acr_core::data::{build_corpus, Split};
use acr_core::training::Sample;
use acr_core::{AcrModel, AttentionCube, ExperimentConfig, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TINY: &str = r#"
[data]
subjects = 3
samples_per_subject = 16
val_subjects = 1
test_subjects = 1
input_size = 32
image_width = 64
image_height = 64

[cube]
grid = 8

[model]
preset = "tiny"
"#;

pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).expect("bench config parses")
}

/// The tiny model with its cube and training samples.
pub fn tiny_setup() -> (ExperimentConfig, AcrModel, AttentionCube, Vec<Sample>) {
    let cfg = tiny_config();
    let corpus = build_corpus(&cfg.data, 1, &cfg.data_hash()).expect("corpus renders");
    let cube = corpus.cube(&cfg.cube).expect("cube");
    let samples = corpus.samples(Split::Train, &cfg.cube).expect("samples");
    let model = AcrModel::new(&cfg.model, cfg.model_dims(), 7).expect("model");
    (cfg, model, cube, samples)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `n` points on a noisy ring, the shape of a workspace trace.
pub fn ring(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let noise = randn(&[n], seed);
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let r = 300.0 + 40.0 * noise.data()[k];
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}
