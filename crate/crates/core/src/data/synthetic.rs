use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};

/// `c` isotropic Gaussian blobs.
///
/// Class means are unit vectors at angles `2πk/c` inside a random
/// two-dimensional plane of `R^dim`; every coordinate gets noise of standard
/// deviation `spread`. Row `i` belongs to class `i mod c`.
pub fn make_synthetic(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || per_class == 0 {
        return Err(Error::Config("need at least 2 classes and 1 example per class".into()));
    }
    if dim < 2 {
        return Err(Error::Config("dim must be at least 2 to hold the class plane".into()));
    }
    if !(spread >= 0.0) {
        return Err(Error::Config("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |n: usize| -> Array1<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

    // Gram-Schmidt on two Gaussian directions
    let mut u = gaussian(dim);
    u /= u.dot(&u).sqrt();
    let mut v = gaussian(dim);
    let proj = v.dot(&u);
    v.scaled_add(-proj, &u);
    v /= v.dot(&v).sqrt();

    let means: Vec<Array1<f64>> = (0..num_classes)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
            &u * angle.cos() + &v * angle.sin()
        })
        .collect();

    let n = num_classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let k = i % num_classes;
        let noise = gaussian(dim);
        for j in 0..dim {
            row[j] = means[k][j] + spread * noise[j];
        }
        labels.push(k);
    }
    Dataset::new(features, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = make_synthetic(4, 10, 6, 0.5, 9).unwrap();
        let b = make_synthetic(4, 10, 6, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic(4, 10, 6, 0.5, 10).unwrap());
    }

    #[test]
    fn zero_spread_rows_are_unit_class_means() {
        let ds = make_synthetic(3, 4, 5, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 12);
        for row in ds.features.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        // class means are 120 degrees apart
        let a = ds.features.row(0);
        let b = ds.features.row(1);
        assert!((a.dot(&b) + 0.5).abs() < 1e-12);
    }
}
