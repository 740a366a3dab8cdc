//! Query-time model: projection, voting and distance costs fitted with the
//! Theil–Sen estimator on micro-benchmarks.
//!
//! The expected time of a voting query with `T` trees of depth `ℓ` over `n`
//! points is modeled as
//!
//! ```text
//! (β₀ + β₁·T·ℓ) + (γ₀ + γ₁·T·⌈n/2^ℓ⌉) + (α₀ + α₁·|S|)
//! ```
//!
//! where `|S|` is the mean candidate set size. Each term is fitted on
//! timings of the same kernels the search path runs.

use std::hint::black_box;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{nearest_among, DataMatrix};
use crate::error::{invalid, Error, Result};
use crate::search::VoteScratch;
use crate::trees::{rp_direction, SplitRule, TreeKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Seconds.
    pub intercept: f64,
    /// Seconds per unit of the predictor.
    pub slope: f64,
}

impl LinearFit {
    pub const ZERO: LinearFit = LinearFit {
        intercept: 0.0,
        slope: 0.0,
    };

    #[inline]
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Median of a sorted, non-empty slice; the mean of the two central values
/// for even lengths.
fn sorted_median(v: &[f64]) -> f64 {
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Theil–Sen line fit: the slope is the median of all pairwise slopes over
/// pairs with distinct `x`, the intercept the median of `y − slope·x`.
pub fn theil_sen(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("non-finite observation".into()));
    }
    // (slope, dy, dx) for every pair with xᵢ < xⱼ
    let mut slopes: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, &(xi, yi)) in points.iter().enumerate() {
        for &(xj, yj) in &points[i + 1..] {
            if xi == xj {
                continue;
            }
            let (dx, dy) = if xi < xj { (xj - xi, yj - yi) } else { (xi - xj, yi - yj) };
            slopes.push((dy / dx, dy, dx));
        }
    }
    if slopes.is_empty() {
        return Err(Error::Fit("all x values are identical".into()));
    }
    slopes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = slopes.len() / 2;
    let slope = if slopes.len() % 2 == 1 {
        slopes[m].0
    } else {
        // Average the two central fractions before dividing, so rational
        // medians like (1 + 10/3)/2 round once.
        let (_, dy1, dx1) = slopes[m - 1];
        let (_, dy2, dx2) = slopes[m];
        let exact = (dy1 * dx2 + dy2 * dx1) / (2.0 * dx1 * dx2);
        if exact.is_finite() {
            exact
        } else {
            (slopes[m - 1].0 + slopes[m].0) / 2.0
        }
    };
    let mut offsets: Vec<f64> = points.iter().map(|&(x, y)| y - slope * x).collect();
    offsets.sort_by(f64::total_cmp);
    Ok(LinearFit {
        intercept: sorted_median(&offsets),
        slope,
    })
}

/// Fitted cost model for voting queries on a `d`-dimensional corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    /// Over `z = T·ℓ` projections.
    pub projection: LinearFit,
    /// Over `y = T·⌈n/2^ℓ⌉` vote increments.
    pub voting: LinearFit,
    /// Over the candidate set size `|S|`.
    pub distance: LinearFit,
    pub d: usize,
    /// Unix seconds at fit time.
    pub timestamp: u64,
}

impl TimeModel {
    pub fn from_fits(projection: LinearFit, voting: LinearFit, distance: LinearFit, d: usize) -> Self {
        Self {
            projection,
            voting,
            distance,
            d,
            timestamp: unix_now(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        for (name, fit) in [
            ("projection", model.projection),
            ("voting", model.voting),
            ("distance", model.distance),
        ] {
            if !fit.intercept.is_finite() || !fit.slope.is_finite() {
                return Err(Error::Fit(format!("{name} fit is not finite")));
            }
        }
        Ok(model)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Maximum leaf size `⌈n/2^ℓ⌉`.
#[inline]
pub fn leaf_size(n: usize, depth: usize) -> usize {
    n.div_ceil(1usize << depth)
}

/// Expected seconds per voting query. For RKD trees the projection fit is
/// measured on one-component directions, so its term is the (small) cost
/// of routing along coordinate axes rather than zero.
pub fn predict_time(model: &TimeModel, trees: usize, depth: usize, n: usize, mean_candidates: f64) -> f64 {
    let z = (trees * depth) as f64;
    let y = (trees * leaf_size(n, depth)) as f64;
    let projection = model.projection.predict(z);
    projection + model.voting.predict(y) + model.distance.predict(mean_candidates)
}

/// Micro-benchmark settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Distinct predictor values per component.
    pub rungs: usize,
    /// Timed repetitions kept per predictor value.
    pub repetitions: usize,
    /// Minimum work units per timed sample; small workloads are repeated
    /// until they reach it and the time is divided back out.
    pub min_work: usize,
    pub seed: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            rungs: 8,
            repetitions: 5,
            min_work: 4096,
            seed: 0x7157_0de1,
        }
    }
}

/// `rungs` integers spaced geometrically over `[lo, hi]`, deduplicated.
/// Always yields at least two values: a degenerate range becomes
/// `[lo, 2·lo]`.
pub fn geometric_ladder(lo: usize, hi: usize, rungs: usize) -> Vec<usize> {
    let lo = lo.max(1);
    let hi = hi.max(lo);
    if rungs <= 1 || lo == hi {
        return vec![lo, 2 * lo];
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / (rungs - 1) as f64);
    let mut out: Vec<usize> = (0..rungs)
        .map(|i| ((lo as f64) * ratio.powi(i as i32)).round() as usize)
        .collect();
    out[rungs - 1] = hi;
    out.dedup();
    out
}

fn inner_loops(size: usize, min_work: usize) -> usize {
    min_work.div_ceil(size.max(1)).clamp(1, 10_000)
}

/// Pool entries drawn for workloads of at most `max` items: large enough
/// that consecutive calls read memory the previous ones did not, as
/// consecutive queries against a real index do.
fn pool_len(max: usize, floor: usize) -> usize {
    (max * 8).max(floor)
}

/// Start of the next `size`-long window in a pool of `len` entries.
#[inline]
fn next_window(offset: &mut usize, size: usize, len: usize) -> usize {
    if *offset + size > len {
        *offset = 0;
    }
    let start = *offset;
    // Stride by a prime so windows drift relative to cache-line boundaries.
    *offset += size.max(1) + 7;
    start
}

/// Times `work` `repetitions` times after one discarded warm-up round,
/// each sample averaging `inner` calls.
fn time_samples(x: f64, repetitions: usize, inner: usize, mut work: impl FnMut() -> f32) -> Vec<(f64, f64)> {
    black_box(work());
    (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                black_box(work());
            }
            (x, start.elapsed().as_secs_f64() / inner as f64)
        })
        .collect()
}

/// Time to route one `d`-vector through `z` sparse directions with
/// `⌈sparsity·d⌉` non-zeros each, for every `z` in `sizes`. As in a tree
/// descent, the sign of each projection picks the next direction, so every
/// load depends on the previous comparison.
pub fn measure_projection_times(
    d: usize,
    sparsity: f64,
    sizes: &[usize],
    cal: &Calibration,
) -> Result<Vec<(f64, f64)>> {
    if sizes.len() < 2 {
        return invalid("need at least two sample sizes");
    }
    if d == 0 || !(sparsity > 0.0 && sparsity <= 1.0) {
        return invalid(format!("bad projection shape d={d}, sparsity={sparsity}"));
    }
    let nonzeros = ((sparsity * d as f64).ceil() as usize).clamp(1, d);
    let mut rng = ChaCha8Rng::seed_from_u64(cal.seed);
    let max = sizes.iter().copied().max().unwrap_or(0);
    // A forest holds about as many distinct directions as the largest
    // workload routes through, and queries keep them cached.
    let len = max.max(64).next_power_of_two();
    let mask = len - 1;
    let dirs: Vec<_> = (0..len).map(|_| rp_direction(d, nonzeros, &mut rng)).collect();
    let queries = DataMatrix::new((0..64 * d).map(|_| rng.random_range(-1.0..1.0)).collect(), d)?;
    let mut out = Vec::new();
    let (mut offset, mut qi) = (0, 0);
    for &z in sizes {
        let inner = inner_loops(z * nonzeros, cal.min_work);
        out.extend(time_samples(z as f64, cal.repetitions, inner, || {
            let mut node = next_window(&mut offset, z, len);
            qi = (qi + 1) % queries.n();
            let q = black_box(queries.row(qi));
            let mut acc = 0.0f32;
            for _ in 0..z {
                let p = dirs[node & mask].project(q);
                acc += p;
                node = 2 * (node & mask) + 1 + usize::from(p > 0.0);
            }
            acc
        }));
    }
    Ok(out)
}

/// Time to add `y` votes into a counter array of size `n` (with the
/// threshold test and the touched-list reset), for every `y` in `sizes`.
/// Vote targets are read from a pool the size of a forest's permutations.
pub fn measure_voting_times(n: usize, sizes: &[usize], cal: &Calibration) -> Result<Vec<(f64, f64)>> {
    if sizes.len() < 2 {
        return invalid("need at least two sample sizes");
    }
    if n == 0 {
        return invalid("counter array must be non-empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cal.seed ^ 1);
    let max = sizes.iter().copied().max().unwrap_or(0);
    let len = pool_len(max, (32 * n).min(1 << 24));
    let targets: Vec<u32> = (0..len).map(|_| rng.random_range(0..n as u32)).collect();
    let mut scratch = VoteScratch::new(n);
    let mut out = Vec::new();
    let mut offset = 0;
    for &y in sizes {
        let inner = inner_loops(y, cal.min_work);
        out.extend(time_samples(y as f64, cal.repetitions, inner, || {
            let start = next_window(&mut offset, y, len);
            scratch.tally(black_box(&targets[start..start + y]), 2);
            let elected = scratch.elected().len();
            scratch.reset();
            elected as f32
        }));
    }
    Ok(out)
}

/// Time to find the `k` nearest of `|S|` random candidates among `n`
/// random `d`-dimensional points, for every `|S|` in `sizes`. Each call
/// uses a fresh candidate set and query.
pub fn measure_distance_times(
    n: usize,
    d: usize,
    k: usize,
    sizes: &[usize],
    cal: &Calibration,
) -> Result<Vec<(f64, f64)>> {
    if sizes.len() < 2 {
        return invalid("need at least two sample sizes");
    }
    if d == 0 || n == 0 {
        return invalid("corpus size and dimensionality must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cal.seed ^ 2);
    let max = sizes.iter().copied().max().unwrap_or(0);
    let rows = n.max(1024);
    let data = DataMatrix::new((0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect(), d)?;
    let queries = DataMatrix::new((0..64 * d).map(|_| rng.random_range(-1.0..1.0)).collect(), d)?;
    let len = pool_len(max, 1 << 16);
    let candidates: Vec<u32> = (0..len).map(|_| rng.random_range(0..rows as u32)).collect();
    let mut out = Vec::new();
    let (mut offset, mut qi) = (0, 0);
    for &s in sizes {
        let inner = inner_loops(s * d / 8, cal.min_work);
        out.extend(time_samples(s as f64, cal.repetitions, inner, || {
            let start = next_window(&mut offset, s, len);
            qi = (qi + 1) % queries.n();
            nearest_among(&data, black_box(queries.row(qi)), &candidates[start..start + s], k).len() as f32
        }));
    }
    Ok(out)
}

/// Ranges of the three predictors over a tuning lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorRange {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub t_max: usize,
    pub depth_min: usize,
    pub depth_max: usize,
}

/// Runs the three micro-benchmarks over geometric ladders spanning `range`
/// and fits each with Theil–Sen.
pub fn fit_time_model(range: &PredictorRange, rule: &SplitRule, cal: &Calibration) -> Result<TimeModel> {
    let PredictorRange {
        n,
        d,
        k,
        t_max,
        depth_min,
        depth_max,
    } = *range;
    if t_max == 0 || depth_min == 0 || depth_min > depth_max {
        return invalid(format!(
            "bad lattice: t_max={t_max}, depths {depth_min}..={depth_max}"
        ));
    }
    let rungs = cal.rungs.max(2);
    let sparsity = match rule.kind {
        TreeKind::Rkd => 1.0 / d as f64,
        TreeKind::Rp => rule.rp_nonzeros(d) as f64 / d as f64,
        TreeKind::Pca => rule.pca_dims_for(d) as f64 / d as f64,
    };
    let z = geometric_ladder(depth_min, t_max * depth_max, rungs);
    let y = geometric_ladder(leaf_size(n, depth_max), t_max * leaf_size(n, depth_min), rungs);
    let s = geometric_ladder(k.max(1), n.min(t_max * leaf_size(n, depth_min)).max(k + 1), rungs);

    let projection = theil_sen(&measure_projection_times(d, sparsity, &z, cal)?)?;
    let voting = theil_sen(&measure_voting_times(n, &y, cal)?)?;
    let distance = theil_sen(&measure_distance_times(n, d, k, &s, cal)?)?;
    for (name, fit) in [("projection", projection), ("voting", voting), ("distance", distance)] {
        if fit.slope < 0.0 {
            log::warn!("{name} time fit has negative slope {:.3e}", fit.slope);
        }
    }
    Ok(TimeModel::from_fits(projection, voting, distance, d))
}
