use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;

/// Offset of a class mean along its own features.
pub const BLOB_SEPARATION: f64 = 1.5;

/// Mean of class `c`: `BLOB_SEPARATION` on every feature `j` with
/// `j mod n_classes == c`, zero elsewhere.
pub fn blob_means(n_features: usize, n_classes: usize) -> Vec<Vec<f64>> {
    (0..n_classes)
        .map(|c| {
            (0..n_features)
                .map(|j| {
                    if j % n_classes == c {
                        BLOB_SEPARATION
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Gaussian class blobs with identity covariance around [`blob_means`].
/// Labels are drawn uniformly; everything comes from one ChaCha8 stream
/// seeded with `seed`.
pub fn make_synthetic(seed: u64, n: usize, n_features: usize, n_classes: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = blob_means(n_features, n_classes.max(1));
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..n_classes.max(1));
        let x: Vec<f64> = means[c]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + z
            })
            .collect();
        features.push(x);
        labels.push(c);
    }
    let mut d = Dataset::new(features, labels);
    d.feature_names = (0..n_features).map(|i| format!("x{i}")).collect();
    d
}
