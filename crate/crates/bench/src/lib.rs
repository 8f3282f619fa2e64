//! Fixtures shared by the criterion benches.

use emg_open_core::eval::{dataset_feature_maps, labelled_target_maps};
use emg_open_core::rng::Rng;
use emg_open_core::synthdata::generate;
use emg_open_core::{FeatureMap, SynthConfig, WindowConfig};

/// `count` pairs of standard normal vectors of length `n`.
pub fn vector_pairs(n: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = Rng::new(seed);
    let draw = |rng: &mut Rng| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
    (0..count).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
}

/// Labelled target maps of a reduced synthetic dataset.
pub fn small_training_set(targets: usize, reps: usize) -> (Vec<FeatureMap>, Vec<usize>) {
    let cfg = SynthConfig { n_target: targets, n_novel: 1, reps, trial_seconds: 1.0, ..SynthConfig::default() };
    let dataset = generate(&cfg).expect("valid synthetic config");
    let maps = dataset_feature_maps(&dataset, &WindowConfig::default()).expect("windowing");
    labelled_target_maps(&dataset, &maps, None)
}
