//! Shared fixtures for the kernel benchmarks.

use fgrd_core::head::{HeadConfig, HeadParams};
use fgrd_core::tensor::FeatureMap;
use fgrd_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: &[usize], seed: u64) -> Tensor {
    Tensor::rand_uniform(dims, -1.0, 1.0, &mut rng(seed))
}

/// Desk-scale head plus one matching clip of backbone features.
pub fn head_fixture() -> (HeadConfig, HeadParams, FeatureMap) {
    let cfg = HeadConfig::new(64, 32, 16).unwrap();
    let params = HeadParams::init(&cfg, &mut rng(1)).unwrap();
    let clip = FeatureMap::from_tensor(&random_tensor(&[4, 8, 8, 64], 2)).unwrap();
    (cfg, params, clip)
}
