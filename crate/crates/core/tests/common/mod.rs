#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use trisleep_core::ModelConfig;
use trisleep_numcore::Tensor;
use trisleep_sync::Trimodal;

/// The gradient-check preset.
pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny()
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f32) -> Tensor {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Random signals with `audio_samples` waveform samples and `imu_frames` IMU steps.
pub fn random_signals(audio_samples: usize, imu_frames: usize, seed: u64) -> Trimodal<Tensor> {
    Trimodal::new(
        random_tensor(&[1, audio_samples], seed, 1.0),
        random_tensor(&[1, audio_samples], seed + 1, 1.0),
        random_tensor(&[6, imu_frames], seed + 2, 1.0),
    )
}
