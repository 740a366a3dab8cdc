//! Autotuning of voting search from a single maximal index build.
//!
//! One forest of `T_max` trees of depth `ℓ_max` is grown. For every
//! validation query, a single incremental pass over the trees at each depth
//! counts how many points (and how many of the query's true neighbors) have
//! at least `v` votes after the first `T` trees, for every `(ℓ, T, v)` of the
//! lattice at once. Averaging over queries gives an estimated recall and
//! candidate set size per cell; the time model turns candidate sizes into
//! expected query times. The chosen cell is served by pruning the already
//! grown forest.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataMatrix, GroundTruth};
use crate::error::{invalid, Result};
use crate::timemodel::{predict_time, TimeModel};
use crate::trees::{grow_forest, max_depth, Forest, SplitRule, Tree};

/// Default number of trees in the maximal forest.
pub const DEFAULT_T_MAX: usize = 64;
/// Default number of validation queries.
pub const DEFAULT_VALIDATION_QUERIES: usize = 100;
/// `ℓ_min` defaults to `ℓ_max` minus this, keeping the largest leaves near
/// 256 points.
pub const DEFAULT_DEPTH_SPAN: usize = 8;

/// The hyperparameter lattice `{1..T_max} × {ℓ_min..ℓ_max} × {1..v_max}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningLimits {
    pub t_max: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    pub v_max: usize,
    pub k: usize,
}

impl TuningLimits {
    /// Defaults for a corpus of `n` points: `T_max = 64`, `v_max = T_max`,
    /// `ℓ_max = ⌊log₂ n⌋`, `ℓ_min = max(1, ℓ_max − 8)`.
    pub fn for_corpus(n: usize, k: usize) -> Self {
        Self::with_trees(n, k, DEFAULT_T_MAX)
    }

    pub fn with_trees(n: usize, k: usize, t_max: usize) -> Self {
        let depth_max = max_depth(n.max(1));
        Self {
            t_max,
            depth_min: depth_max.saturating_sub(DEFAULT_DEPTH_SPAN).max(1),
            depth_max,
            v_max: t_max,
            k,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.t_max == 0 {
            return invalid("T_max must be at least 1");
        }
        if self.v_max == 0 || self.v_max > self.t_max {
            return invalid(format!("v_max = {} must lie in [1, T_max = {}]", self.v_max, self.t_max));
        }
        if self.depth_min == 0 || self.depth_min > self.depth_max {
            return invalid(format!(
                "depth range {}..={} is empty or starts at 0",
                self.depth_min, self.depth_max
            ));
        }
        if self.depth_max > max_depth(n) {
            return invalid(format!(
                "ℓ_max = {} exceeds ⌊log₂ n⌋ = {}",
                self.depth_max,
                max_depth(n)
            ));
        }
        if self.k == 0 || self.k > n {
            return invalid(format!("k = {} must lie in [1, n = {n}]", self.k));
        }
        Ok(())
    }

    pub fn depth_count(&self) -> usize {
        self.depth_max - self.depth_min + 1
    }

    pub fn cells(&self) -> usize {
        self.depth_count() * self.t_max * self.v_max
    }

    /// Flat index of cell `(depth, trees, votes)`, in `(ℓ, T, v)` order.
    #[inline]
    pub fn index(&self, depth: usize, trees: usize, votes: usize) -> usize {
        debug_assert!((self.depth_min..=self.depth_max).contains(&depth));
        debug_assert!((1..=self.t_max).contains(&trees) && (1..=self.v_max).contains(&votes));
        ((depth - self.depth_min) * self.t_max + (trees - 1)) * self.v_max + (votes - 1)
    }

    pub fn contains(&self, depth: usize, trees: usize, votes: usize) -> bool {
        (self.depth_min..=self.depth_max).contains(&depth)
            && (1..=self.t_max).contains(&trees)
            && (1..=self.v_max).contains(&votes)
    }

    /// Every cell as `(depth, trees, votes)`, in flat-index order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (self.depth_min..=self.depth_max).flat_map(move |l| {
            (1..=self.t_max).flat_map(move |t| (1..=self.v_max).map(move |v| (l, t, v)))
        })
    }
}

/// Counts of elected points per lattice cell for one query: entry
/// `(ℓ, T, v)` is the number of member points with at least `v` votes from
/// the first `T` trees at depth `ℓ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElectionTensor {
    limits: TuningLimits,
    counts: Vec<u32>,
}

impl ElectionTensor {
    pub fn zeros(limits: TuningLimits) -> Self {
        Self {
            limits,
            counts: vec![0; limits.cells()],
        }
    }

    pub fn get(&self, depth: usize, trees: usize, votes: usize) -> u32 {
        self.counts[self.limits.index(depth, trees, votes)]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn limits(&self) -> &TuningLimits {
        &self.limits
    }
}

/// Adds a vote from `tree` at `depth` to every member point in `q`'s node.
/// `increments[v − 1]` is bumped for each point whose tally reaches exactly
/// `v` during this call; tallies beyond `increments.len()` are not recorded.
pub fn count_votes(
    tree: &Tree,
    depth: usize,
    q: &[f32],
    members: impl Fn(u32) -> bool,
    votes: &mut [u32],
    increments: &mut [u32],
) {
    let v_max = increments.len() as u32;
    for &p in tree.points(tree.descend(q, depth)) {
        if !members(p) {
            continue;
        }
        let slot = &mut votes[p as usize];
        *slot += 1;
        if *slot <= v_max {
            increments[(*slot - 1) as usize] += 1;
        }
    }
}

/// Election counts of `q` over the whole lattice, counting only points for
/// which `members` holds. Each depth takes one pass over the trees with a
/// running per-threshold total.
pub fn count_elected(
    forest: &Forest,
    limits: &TuningLimits,
    q: &[f32],
    members: impl Fn(u32) -> bool,
) -> Result<ElectionTensor> {
    check_forest(forest, limits)?;
    let mut tensor = ElectionTensor::zeros(*limits);
    let mut votes = vec![0u32; forest.n()];
    let mut increments = vec![0u32; limits.v_max];
    let mut running = vec![0u32; limits.v_max];
    for depth in limits.depth_min..=limits.depth_max {
        votes.iter_mut().for_each(|v| *v = 0);
        running.iter_mut().for_each(|c| *c = 0);
        for (t, tree) in forest.trees()[..limits.t_max].iter().enumerate() {
            increments.iter_mut().for_each(|c| *c = 0);
            count_votes(tree, depth, q, &members, &mut votes, &mut increments);
            for (c, inc) in running.iter_mut().zip(&increments) {
                *c += inc;
            }
            let base = limits.index(depth, t + 1, 1);
            tensor.counts[base..base + limits.v_max].copy_from_slice(&running);
        }
    }
    Ok(tensor)
}

fn check_forest(forest: &Forest, limits: &TuningLimits) -> Result<()> {
    limits.validate(forest.n())?;
    if forest.len() < limits.t_max || forest.depth() < limits.depth_max {
        return invalid(format!(
            "forest has {} trees of depth {}, lattice needs {} of depth {}",
            forest.len(),
            forest.depth(),
            limits.t_max,
            limits.depth_max
        ));
    }
    Ok(())
}

/// Per-worker state for the fused counting pass.
struct Accumulator {
    votes: Vec<u32>,
    touched: Vec<u32>,
    is_truth: Vec<bool>,
    truth_inc: Vec<u32>,
    all_inc: Vec<u32>,
    truth_running: Vec<u64>,
    all_running: Vec<u64>,
    truth_sum: Vec<u64>,
    all_sum: Vec<u64>,
}

impl Accumulator {
    fn new(n: usize, limits: &TuningLimits) -> Self {
        Self {
            votes: vec![0; n],
            touched: Vec::new(),
            is_truth: vec![false; n],
            truth_inc: vec![0; limits.v_max],
            all_inc: vec![0; limits.v_max],
            truth_running: vec![0; limits.v_max],
            all_running: vec![0; limits.v_max],
            truth_sum: vec![0; limits.cells()],
            all_sum: vec![0; limits.cells()],
        }
    }

    /// Adds one query's election counts, for its true neighbors and for the
    /// whole corpus, into the running sums in a single pass.
    fn add_query(&mut self, forest: &Forest, limits: &TuningLimits, q: &[f32], truth: &[u32]) {
        for &p in truth {
            self.is_truth[p as usize] = true;
        }
        let v_max = limits.v_max as u32;
        for depth in limits.depth_min..=limits.depth_max {
            self.truth_running.iter_mut().for_each(|c| *c = 0);
            self.all_running.iter_mut().for_each(|c| *c = 0);
            for (t, tree) in forest.trees()[..limits.t_max].iter().enumerate() {
                self.truth_inc.iter_mut().for_each(|c| *c = 0);
                self.all_inc.iter_mut().for_each(|c| *c = 0);
                for &p in tree.points(tree.descend(q, depth)) {
                    let slot = &mut self.votes[p as usize];
                    *slot += 1;
                    let tally = *slot;
                    if tally == 1 {
                        self.touched.push(p);
                    }
                    if tally <= v_max {
                        self.all_inc[(tally - 1) as usize] += 1;
                        if self.is_truth[p as usize] {
                            self.truth_inc[(tally - 1) as usize] += 1;
                        }
                    }
                }
                // Only thresholds v ≤ T can have been reached.
                let reach = (t + 1).min(limits.v_max);
                let base = limits.index(depth, t + 1, 1);
                for v in 0..reach {
                    self.all_running[v] += u64::from(self.all_inc[v]);
                    self.truth_running[v] += u64::from(self.truth_inc[v]);
                    self.all_sum[base + v] += self.all_running[v];
                    self.truth_sum[base + v] += self.truth_running[v];
                }
            }
            for &p in &self.touched {
                self.votes[p as usize] = 0;
            }
            self.touched.clear();
        }
        for &p in truth {
            self.is_truth[p as usize] = false;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.truth_sum.iter_mut().zip(&other.truth_sum) {
            *a += b;
        }
        for (a, b) in self.all_sum.iter_mut().zip(&other.all_sum) {
            *a += b;
        }
        self
    }
}

/// Mean recall and mean candidate set size per lattice cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeEstimate {
    pub limits: TuningLimits,
    pub recall: Vec<f64>,
    pub candidates: Vec<f64>,
    pub queries: usize,
}

impl LatticeEstimate {
    pub fn recall_at(&self, depth: usize, trees: usize, votes: usize) -> f64 {
        self.recall[self.limits.index(depth, trees, votes)]
    }

    pub fn candidates_at(&self, depth: usize, trees: usize, votes: usize) -> f64 {
        self.candidates[self.limits.index(depth, trees, votes)]
    }
}

/// Recall and candidate size of every lattice cell, averaged over `queries`
/// whose exact neighbors are `truth`. Queries are processed in parallel
/// with private scratch and merged by summation.
pub fn evaluate_lattice(
    forest: &Forest,
    queries: &DataMatrix,
    truth: &GroundTruth,
    limits: &TuningLimits,
) -> Result<LatticeEstimate> {
    check_forest(forest, limits)?;
    if queries.d() != forest.d() {
        return invalid(format!("queries have {} dims, forest {}", queries.d(), forest.d()));
    }
    if truth.len() != queries.n() {
        return invalid(format!("{} truth rows for {} queries", truth.len(), queries.n()));
    }
    if truth.k != limits.k {
        return invalid(format!("ground truth has k = {}, lattice k = {}", truth.k, limits.k));
    }
    let n = forest.n();
    let acc = (0..queries.n())
        .into_par_iter()
        .fold(
            || Accumulator::new(n, limits),
            |mut acc, i| {
                acc.add_query(forest, limits, queries.row(i), &truth.rows[i]);
                acc
            },
        )
        .reduce_with(Accumulator::merge)
        .unwrap_or_else(|| Accumulator::new(n, limits));
    let m = queries.n().max(1) as f64;
    let km = m * limits.k as f64;
    Ok(LatticeEstimate {
        limits: *limits,
        recall: acc.truth_sum.iter().map(|&s| s as f64 / km).collect(),
        candidates: acc.all_sum.iter().map(|&s| s as f64 / m).collect(),
        queries: queries.n(),
    })
}

/// Wall-clock breakdown of a tuning run, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningTimings {
    pub build: f64,
    pub ground_truth: f64,
    pub counting: f64,
    pub total: f64,
}

/// Estimated recall, candidate size and query time for every lattice cell,
/// together with the maximal forest.
#[derive(Clone, Debug)]
pub struct TuningResult {
    pub limits: TuningLimits,
    pub recall_grid: Vec<f64>,
    pub candidate_grid: Vec<f64>,
    pub time_grid: Vec<f64>,
    pub forest: Forest,
    pub model: TimeModel,
    pub timings: TuningTimings,
    pub validation_queries: usize,
}

impl TuningResult {
    pub fn recall_at(&self, depth: usize, trees: usize, votes: usize) -> f64 {
        self.recall_grid[self.limits.index(depth, trees, votes)]
    }

    pub fn candidates_at(&self, depth: usize, trees: usize, votes: usize) -> f64 {
        self.candidate_grid[self.limits.index(depth, trees, votes)]
    }

    pub fn time_at(&self, depth: usize, trees: usize, votes: usize) -> f64 {
        self.time_grid[self.limits.index(depth, trees, votes)]
    }

    /// Grid as CSV: `depth,trees,votes,recall,candidates,time`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "depth,trees,votes,recall,candidates,time")?;
        for (i, (l, t, v)) in self.limits.iter_cells().enumerate() {
            writeln!(
                w,
                "{l},{t},{v},{:.6},{:.3},{:.6e}",
                self.recall_grid[i], self.candidate_grid[i], self.time_grid[i]
            )?;
        }
        Ok(())
    }

    pub fn report(&self, selected: Option<SelectedParams>) -> TuningReport {
        TuningReport {
            limits: self.limits,
            rule: self.forest.rule().clone(),
            seed: self.forest.seed(),
            validation_queries: self.validation_queries,
            recall_grid: self.recall_grid.clone(),
            candidate_grid: self.candidate_grid.clone(),
            time_grid: self.time_grid.clone(),
            model: self.model.clone(),
            timings: self.timings,
            selected,
        }
    }
}

/// Serializable summary of a tuning run. Grids are flattened in `(ℓ, T, v)`
/// order with `v` varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub limits: TuningLimits,
    pub rule: SplitRule,
    pub seed: u64,
    pub validation_queries: usize,
    pub recall_grid: Vec<f64>,
    pub candidate_grid: Vec<f64>,
    pub time_grid: Vec<f64>,
    pub model: TimeModel,
    pub timings: TuningTimings,
    pub selected: Option<SelectedParams>,
}

/// Grows the maximal forest, estimates recall and candidate size over the
/// whole lattice from the validation `queries`, and predicts query times
/// with `model`.
pub fn generate_index_auto(
    data: &DataMatrix,
    queries: &DataMatrix,
    limits: &TuningLimits,
    rule: &SplitRule,
    model: &TimeModel,
    seed: u64,
) -> Result<TuningResult> {
    let start = Instant::now();
    limits.validate(data.n())?;
    if queries.d() != data.d() {
        return invalid(format!("queries have {} dims, corpus has {}", queries.d(), data.d()));
    }

    let t = Instant::now();
    let forest = grow_forest(data, limits.t_max, limits.depth_max, rule, seed)?;
    let build = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let truth = GroundTruth::compute(data, queries, limits.k)?;
    let ground_truth = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let estimate = evaluate_lattice(&forest, queries, &truth, limits)?;
    let time_grid: Vec<f64> = limits
        .iter_cells()
        .zip(&estimate.candidates)
        .map(|((l, t, _), &c)| predict_time(model, t, l, data.n(), c))
        .collect();
    let counting = t.elapsed().as_secs_f64();

    Ok(TuningResult {
        limits: *limits,
        recall_grid: estimate.recall,
        candidate_grid: estimate.candidates,
        time_grid,
        forest,
        model: model.clone(),
        timings: TuningTimings {
            build,
            ground_truth,
            counting,
            total: start.elapsed().as_secs_f64(),
        },
        validation_queries: queries.n(),
    })
}

/// What the selection optimizes for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Minimize expected time subject to expected recall ≥ the value.
    Recall(f64),
    /// Maximize expected recall subject to expected time ≤ the value
    /// (seconds).
    Time(f64),
}

impl Target {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Target::Recall(r) if !(r > 0.0 && r < 1.0) => {
                invalid(format!("recall target {r} must lie in (0, 1)"))
            }
            Target::Time(t) if !(t > 0.0 && t.is_finite()) => {
                invalid(format!("time target {t} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = crate::Error;

    /// Parses `recall=0.9`, `time=0.5ms`, `time=20us` or `time=0.001`
    /// (seconds).
    fn from_str(s: &str) -> Result<Self> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| crate::Error::InvalidArgument(format!("target '{s}' is not key=value")))?;
        let target = match key.trim() {
            "recall" => Target::Recall(parse_number(value)?),
            "time" => {
                let v = value.trim();
                let (num, scale) = if let Some(x) = v.strip_suffix("ms") {
                    (x, 1e3)
                } else if let Some(x) = v.strip_suffix("us") {
                    (x, 1e6)
                } else if let Some(x) = v.strip_suffix("ns") {
                    (x, 1e9)
                } else if let Some(x) = v.strip_suffix('s') {
                    (x, 1.0)
                } else {
                    (v, 1.0)
                };
                Target::Time(parse_number(num)? / scale)
            }
            other => return invalid(format!("unknown target '{other}' (expected recall or time)")),
        };
        target.validate()?;
        Ok(target)
    }
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| crate::Error::InvalidArgument(format!("'{s}' is not a number")))
}

/// The chosen lattice cell and its estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedParams {
    pub trees: usize,
    pub depth: usize,
    pub votes: usize,
    pub est_recall: f64,
    pub est_time: f64,
    /// False when no cell satisfies the target and the fallback was used.
    pub target_met: bool,
}

/// Picks the optimal cell for `target`.
///
/// For a recall target, the cheapest cell meeting it; if none does, the
/// highest-recall cell with `target_met = false`. For a time target, the
/// highest-recall cell within budget; if none is, the cheapest cell with
/// `target_met = false`. Remaining ties go to lower time, then fewer trees,
/// then deeper trees, then a lower vote threshold.
pub fn select_parameters(result: &TuningResult, target: Target) -> Result<SelectedParams> {
    target.validate()?;
    let limits = &result.limits;
    if result.recall_grid.is_empty()
        || result.recall_grid.len() != limits.cells()
        || result.time_grid.len() != limits.cells()
    {
        return invalid("tuning grids are empty or mis-sized");
    }
    let cells: Vec<(usize, usize, usize)> = limits.iter_cells().collect();
    let recall = |i: usize| result.recall_grid[i];
    let time = |i: usize| result.time_grid[i];
    // Lower time, fewer trees, deeper, fewer votes.
    let tie = |a: usize, b: usize| {
        let (la, ta, va) = cells[a];
        let (lb, tb, vb) = cells[b];
        time(a)
            .total_cmp(&time(b))
            .then(ta.cmp(&tb))
            .then(lb.cmp(&la))
            .then(va.cmp(&vb))
    };
    let by_recall_desc = |a: &usize, b: &usize| recall(*b).total_cmp(&recall(*a)).then(tie(*a, *b));
    let all = 0..cells.len();

    let (best, met) = match target {
        Target::Recall(e) => match all.clone().filter(|&i| recall(i) >= e).min_by(|&a, &b| tie(a, b)) {
            Some(i) => (i, true),
            None => (all.min_by(by_recall_desc).expect("non-empty grid"), false),
        },
        Target::Time(t) => match all.clone().filter(|&i| time(i) <= t).min_by(by_recall_desc) {
            Some(i) => (i, true),
            None => (all.min_by(|&a, &b| tie(a, b)).expect("non-empty grid"), false),
        },
    };
    let (depth, trees, votes) = cells[best];
    Ok(SelectedParams {
        trees,
        depth,
        votes,
        est_recall: recall(best),
        est_time: time(best),
        target_met: met,
    })
}

/// The first `trees` trees of `forest` pruned to `depth`.
pub fn subset_index(forest: &Forest, trees: usize, depth: usize) -> Result<Forest> {
    forest.subset(trees, depth)
}
