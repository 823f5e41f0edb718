//! Shared fixtures for the criterion benchmarks under `benches/`.

use labelprop::dataset::{generate_two_moons, select_labels};
use labelprop::encoding::{lifted_descriptors, LandmarkConfig};
use labelprop::Dataset;

/// Two moons with three labels per class and landmark-lifted descriptors.
pub fn lifted_moons(n: usize, seed: u64) -> Dataset {
    let truth = generate_two_moons(n, 0.1, seed).expect("valid toy parameters");
    let dataset = select_labels(&truth, 3, seed).expect("enough points per class");
    let descriptors = lifted_descriptors(dataset.inputs(), &LandmarkConfig::default()).expect("covering grid");
    dataset.with_descriptors(descriptors).expect("matching row count")
}
