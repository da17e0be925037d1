//! Dataset assembly and the seeded train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waydcm_core::{PipelineConfig, PreparedScene, Scaler, Variant};
use waydcm_nn::{ModelConfig, SceneInput};

/// Network inputs for every scene, with the variant's feature columns.
pub fn build_inputs(
    scenes: &[PreparedScene],
    scaler: &Scaler,
    variant: Variant,
    pipeline: &PipelineConfig,
    model: &ModelConfig,
) -> Vec<SceneInput> {
    scenes
        .iter()
        .map(|s| SceneInput::new(s, scaler, variant.feature_set(), &pipeline.interaction, &model.social))
        .collect()
}

/// Seeded shuffle of `0..n` split into `(train, validation)`; the validation
/// part holds `round(n · val_fraction)` indices; a positive fraction keeps at
/// least one scene on each side when `n ≥ 2`.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else if n < 2 {
        n_val = 0;
    }
    let train = idx.split_off(n_val);
    (train, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_seeded_partition() {
        let (t, v) = split_indices(100, 0.1, 5);
        assert_eq!((t.len(), v.len()), (90, 10));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.1, 5), (t, v));
        assert_ne!(split_indices(100, 0.1, 6).1, split_indices(100, 0.1, 5).1);
        assert_eq!(split_indices(1, 0.1, 0).1.len(), 0);
        assert_eq!(split_indices(5, 0.01, 0).1.len(), 1);
        assert_eq!(split_indices(5, 0.0, 0).1.len(), 0);
    }
}
