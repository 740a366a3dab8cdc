use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SplitRule, TreeKind};
use crate::dataset::DataMatrix;
use crate::error::{invalid, Result};

/// A sparse projection vector: parallel index/weight lists, indices strictly
/// increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    indices: Vec<u32>,
    weights: Vec<f32>,
}

impl Direction {
    pub fn new(mut entries: Vec<(u32, f32)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return invalid("direction has a repeated coordinate");
        }
        if !entries.iter().any(|e| e.1 != 0.0) {
            return invalid("direction has no non-zero weight");
        }
        if entries.iter().any(|e| !e.1.is_finite()) {
            return invalid("direction has a non-finite weight");
        }
        let (indices, weights) = entries.into_iter().unzip();
        Ok(Self { indices, weights })
    }

    pub fn axis(coord: usize) -> Self {
        Self {
            indices: vec![coord as u32],
            weights: vec![1.0],
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.last().copied()
    }

    #[inline]
    pub fn project(&self, x: &[f32]) -> f32 {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * x[i as usize])
            .sum()
    }

    /// Dense copy of length `d`.
    pub fn to_dense(&self, d: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        for (&i, &w) in self.indices.iter().zip(&self.weights) {
            v[i as usize] = w;
        }
        v
    }
}

/// Projects the listed corpus points onto `dir`, in input order.
pub fn project(points: &[u32], data: &DataMatrix, dir: &Direction) -> Vec<f32> {
    points
        .iter()
        .map(|&p| dir.project(data.row(p as usize)))
        .collect()
}

/// Sparse random unit vector with `nonzeros` Gaussian components.
pub fn rp_direction<R: Rng + ?Sized>(d: usize, nonzeros: usize, rng: &mut R) -> Direction {
    let nonzeros = nonzeros.clamp(1, d);
    let mut coords: Vec<usize> = sample(rng, d, nonzeros).into_vec();
    coords.sort_unstable();
    loop {
        let w: Vec<f64> = coords.iter().map(|_| rng.sample(StandardNormal)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return Direction {
                indices: coords.iter().map(|&c| c as u32).collect(),
                weights: w.iter().map(|x| (x / norm) as f32).collect(),
            };
        }
    }
}

/// Axis direction drawn uniformly among the `m_top` coordinates with the
/// largest sample variance over `points`. Coordinates with zero variance
/// are never chosen; `None` when every coordinate is constant.
pub fn rkd_direction<R: Rng + ?Sized>(
    data: &DataMatrix,
    points: &[u32],
    m_top: usize,
    rng: &mut R,
) -> Option<Direction> {
    let d = data.d();
    let mut mean = vec![0.0f64; d];
    let mut m2 = vec![0.0f64; d];
    // Welford update per coordinate.
    for (count, &p) in points.iter().enumerate() {
        let k = (count + 1) as f64;
        for (j, &x) in data.row(p as usize).iter().enumerate() {
            let x = f64::from(x);
            let delta = x - mean[j];
            mean[j] += delta / k;
            m2[j] += delta * (x - mean[j]);
        }
    }
    let mut ranked: Vec<usize> = (0..d).filter(|&j| m2[j] > 0.0).collect();
    if ranked.is_empty() {
        return None;
    }
    ranked.sort_by(|&a, &b| m2[b].total_cmp(&m2[a]).then(a.cmp(&b)));
    let top = m_top.min(ranked.len());
    Some(Direction::axis(ranked[rng.random_range(0..top)]))
}

/// Approximate leading principal component of `points` restricted to
/// `coords`.
///
/// Starting from a random unit vector, applies `rule.pca_iterations`
/// gradient-ascent updates `w ← w + γ·S·w` on the summed squared projections,
/// renormalizing after each step. `S` is the scatter matrix of the node's
/// points around their mean, restricted to `coords`. Returns `None` when the
/// points do not vary on `coords`.
pub fn pca_direction<R: Rng + ?Sized>(
    data: &DataMatrix,
    points: &[u32],
    coords: &[usize],
    rule: &SplitRule,
    rng: &mut R,
) -> Option<Direction> {
    let a = coords.len();
    if a == 0 || points.is_empty() {
        return None;
    }
    let mut mean = vec![0.0f64; a];
    for &p in points {
        let row = data.row(p as usize);
        for (m, &c) in mean.iter_mut().zip(coords) {
            *m += f64::from(row[c]);
        }
    }
    let inv = 1.0 / points.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    // Upper triangle of the scatter matrix, row-major a × a.
    let mut scatter = vec![0.0f64; a * a];
    let mut centered = vec![0.0f64; a];
    for &p in points {
        let row = data.row(p as usize);
        for ((x, &c), m) in centered.iter_mut().zip(coords).zip(&mean) {
            *x = f64::from(row[c]) - m;
        }
        for i in 0..a {
            let xi = centered[i];
            if xi == 0.0 {
                continue;
            }
            let dst = &mut scatter[i * a..(i + 1) * a];
            for j in i..a {
                dst[j] += xi * centered[j];
            }
        }
    }
    for i in 0..a {
        for j in 0..i {
            scatter[i * a + j] = scatter[j * a + i];
        }
    }
    if scatter.iter().all(|&s| s == 0.0) {
        return None;
    }

    let mut w: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut w)?;
    let mut sw = vec![0.0f64; a];
    for _ in 0..rule.pca_iterations {
        for (i, out) in sw.iter_mut().enumerate() {
            *out = scatter[i * a..(i + 1) * a]
                .iter()
                .zip(&w)
                .map(|(s, x)| s * x)
                .sum();
        }
        for (x, g) in w.iter_mut().zip(&sw) {
            *x += rule.learning_rate * g;
        }
        normalize(&mut w)?;
    }

    let entries: Vec<(u32, f32)> = coords
        .iter()
        .zip(&w)
        .map(|(&c, &x)| (c as u32, x as f32))
        .collect();
    Direction::new(entries).ok()
}

fn normalize(w: &mut [f64]) -> Option<()> {
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    w.iter_mut().for_each(|x| *x /= norm);
    Some(())
}

/// Draws a split direction for a node holding `points`. `None` signals a
/// node on which the rule cannot find a direction with any spread.
pub fn generate_direction<R: Rng + ?Sized>(
    data: &DataMatrix,
    points: &[u32],
    rule: &SplitRule,
    rng: &mut R,
) -> Option<Direction> {
    let d = data.d();
    match rule.kind {
        TreeKind::Rp => Some(rp_direction(d, rule.rp_nonzeros(d), rng)),
        TreeKind::Rkd => rkd_direction(data, points, rule.m_top, rng),
        TreeKind::Pca => {
            let mut coords = sample(rng, d, rule.pca_dims_for(d)).into_vec();
            coords.sort_unstable();
            pca_direction(data, points, &coords, rule, rng)
        }
    }
}
