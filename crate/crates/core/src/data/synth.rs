use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{mix_seed, Dataset, Split};

/// Gaussian blobs. Class centers are drawn from `N(0, I)` using only the
/// seed, so train and test splits of one spec share centers; samples are
/// `center + spread·N(0, I)` with a uniformly drawn class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub seed: u64,
    pub dims: usize,
    pub classes: usize,
    pub spread: f64,
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidArgument(format!("spread must be positive, got {}", self.spread)));
        }
        if self.dims == 0 {
            return Err(Error::InvalidArgument("dims must be positive".into()));
        }
        Ok(())
    }

    /// `[classes][dims]` cluster centers.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0));
        (0..self.classes)
            .map(|_| (0..self.dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    pub fn generate(&self, n: usize, split: Split) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        let centers = self.centers();
        let stream = match split {
            Split::Train => 1,
            Split::Test => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, stream));
        let mut data = Vec::with_capacity(n * self.dims);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..self.classes);
            labels.push(c);
            for &mu in &centers[c] {
                let z: f64 = rng.sample(StandardNormal);
                data.push((mu + self.spread * z) as f32);
            }
        }
        Dataset::new(Tensor::from_vec(&[n, self.dims], data)?, labels, self.classes, split)
    }
}

/// Training split of [`BlobSpec`] with the given parameters.
pub fn synth_blobs(seed: u64, n: usize, dims: usize, classes: usize, spread: f64) -> Result<Dataset> {
    BlobSpec {
        seed,
        dims,
        classes,
        spread,
    }
    .generate(n, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bits() {
        let a = synth_blobs(11, 300, 5, 3, 0.7).unwrap();
        let b = synth_blobs(11, 300, 5, 3, 0.7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_blobs(12, 300, 5, 3, 0.7).unwrap());
    }

    #[test]
    fn tiny_spread_is_nearest_center_separable() {
        let spec = BlobSpec {
            seed: 5,
            dims: 6,
            classes: 5,
            spread: 1e-4,
        };
        let d = spec.generate(500, Split::Test).unwrap();
        let centers = spec.centers();
        for (row, &label) in d.inputs().data().chunks_exact(6).zip(d.labels()) {
            let nearest = (0..5)
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().zip(&centers[a]).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
                    let db: f64 = row.iter().zip(&centers[b]).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, label);
        }
    }

    #[test]
    fn balanced_two_class_counts() {
        let d = synth_blobs(2, 1000, 3, 2, 50.0).unwrap();
        let ones = d.labels().iter().filter(|&&l| l == 1).count();
        assert!((450..=550).contains(&ones), "{ones}");
    }

    #[test]
    fn preconditions() {
        assert!(synth_blobs(0, 10, 2, 1, 1.0).is_err());
        assert!(synth_blobs(0, 10, 2, 2, 0.0).is_err());
    }
}
