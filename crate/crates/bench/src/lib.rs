//! Shared fixtures for the benchmarks.

use smoothwass::{sample, DiscreteMeasure, DistributionSpec, Sample, SeedPath};

pub fn uniform_sample(n: usize, lo: f64, hi: f64, label: &str) -> Sample {
    sample(&DistributionSpec::uniform(lo, hi), n, &SeedPath::root(7).child(label)).expect("valid spec")
}

pub fn gaussian_sample(n: usize, dim: usize, shift: f64, label: &str) -> Sample {
    let spec = DistributionSpec::gaussian(vec![shift; dim], vec![1.0; dim]);
    sample(&spec, n, &SeedPath::root(7).child(label)).expect("valid spec")
}

/// Uniform weights on the sample's points.
pub fn measure(s: &Sample) -> DiscreteMeasure {
    smoothwass::empirical(s)
}
