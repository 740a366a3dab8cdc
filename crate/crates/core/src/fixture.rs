//! Deterministic synthetic corpus: a mixture of anisotropic Gaussian
//! clusters, each spread mostly within a low-dimensional random subspace.
//!
//! The standard fixture (10 000 corpus points in 64 dimensions plus a
//! disjoint pool of query points from the same distribution) is generated
//! on demand from a fixed seed, so tests and benchmarks run without any
//! downloaded data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{invalid, Result};

pub const STANDARD_N: usize = 10_000;
pub const STANDARD_D: usize = 64;
pub const STANDARD_QUERIES: usize = 1_000;
pub const STANDARD_SEED: u64 = 20_160_916;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    /// Dimension of each cluster's principal subspace.
    pub intrinsic: usize,
    /// Standard deviation of the cluster centers, per coordinate.
    pub center_scale: f64,
    /// Standard deviation along the first principal axis of a cluster; the
    /// `j`-th axis gets `spread / √(j + 1)`.
    pub spread: f64,
    /// Isotropic noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl MixtureSpec {
    /// The standard corpus plus `queries` extra points.
    pub fn standard(queries: usize) -> Self {
        Self {
            n: STANDARD_N + queries,
            d: STANDARD_D,
            clusters: 20,
            intrinsic: 16,
            center_scale: 0.3,
            spread: 1.0,
            noise: 0.2,
            seed: STANDARD_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.clusters == 0 {
            return invalid("n, d and clusters must be positive");
        }
        if self.intrinsic == 0 || self.intrinsic > self.d {
            return invalid(format!("intrinsic = {} must lie in [1, d = {}]", self.intrinsic, self.d));
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("spread", self.spread),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

struct Cluster {
    center: Vec<f64>,
    /// `intrinsic` orthonormal rows of length `d`, pre-scaled.
    axes: Vec<Vec<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Orthonormalizes `rows` in place by modified Gram–Schmidt; rows that
/// collapse are redrawn.
fn orthonormalize(rows: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..rows.len() {
        loop {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= dot * b;
                }
            }
            let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                rows[i].iter_mut().for_each(|a| *a /= norm);
                break;
            }
            rows[i].iter_mut().for_each(|a| *a = normal(rng));
        }
    }
}

/// Draws `spec.n` points. Rows are i.i.d., so any split of the output into
/// corpus and queries gives queries from the corpus distribution.
pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<DataMatrix> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clusters: Vec<Cluster> = (0..spec.clusters)
        .map(|_| {
            let center = (0..d).map(|_| spec.center_scale * normal(&mut rng)).collect();
            let mut axes: Vec<Vec<f64>> = (0..spec.intrinsic)
                .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
                .collect();
            orthonormalize(&mut axes, &mut rng);
            for (j, axis) in axes.iter_mut().enumerate() {
                let s = spec.spread / ((j + 1) as f64).sqrt();
                axis.iter_mut().for_each(|a| *a *= s);
            }
            Cluster { center, axes }
        })
        .collect();

    let mut values = Vec::with_capacity(spec.n * d);
    let mut point = vec![0.0f64; d];
    for _ in 0..spec.n {
        let c = &clusters[rng.random_range(0..spec.clusters)];
        point.copy_from_slice(&c.center);
        for axis in &c.axes {
            let z = normal(&mut rng);
            for (p, a) in point.iter_mut().zip(axis) {
                *p += z * a;
            }
        }
        for p in point.iter_mut() {
            *p += spec.noise * normal(&mut rng);
        }
        values.extend(point.iter().map(|&p| p as f32));
    }
    DataMatrix::new(values, d)
}

/// The standard corpus and a disjoint query pool of `STANDARD_QUERIES`
/// points from the same mixture.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub corpus: DataMatrix,
    pub queries: DataMatrix,
}

pub fn standard_fixture() -> Fixture {
    let all = gaussian_mixture(&MixtureSpec::standard(STANDARD_QUERIES)).expect("standard spec is valid");
    let corpus_rows: Vec<usize> = (0..STANDARD_N).collect();
    let query_rows: Vec<usize> = (STANDARD_N..STANDARD_N + STANDARD_QUERIES).collect();
    Fixture {
        corpus: all.select(&corpus_rows).expect("rows in range"),
        queries: all.select(&query_rows).expect("rows in range"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MixtureSpec {
        MixtureSpec {
            n: 500,
            d: 12,
            clusters: 4,
            intrinsic: 3,
            ..MixtureSpec::standard(0)
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = gaussian_mixture(&small()).unwrap();
        let b = gaussian_mixture(&small()).unwrap();
        assert_eq!((a.n(), a.d()), (500, 12));
        assert_eq!(a, b);
        let c = gaussian_mixture(&MixtureSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn clusters_are_low_rank_plus_noise() {
        // One cluster, no center offset: the variance outside the principal
        // subspace is the noise variance alone.
        let spec = MixtureSpec {
            n: 4000,
            d: 10,
            clusters: 1,
            intrinsic: 2,
            center_scale: 0.0,
            spread: 1.0,
            noise: 0.1,
            seed: 3,
        };
        let data = gaussian_mixture(&spec).unwrap();
        let total: f64 = data.values().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / data.n() as f64;
        // 1 + 1/2 along the axes, 10 · 0.01 of noise.
        assert!((total - 1.6).abs() < 0.1, "total variance {total}");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gaussian_mixture(&MixtureSpec { intrinsic: 13, ..small() }).is_err());
        assert!(gaussian_mixture(&MixtureSpec { clusters: 0, ..small() }).is_err());
        assert!(gaussian_mixture(&MixtureSpec { noise: -1.0, ..small() }).is_err());
    }
}
