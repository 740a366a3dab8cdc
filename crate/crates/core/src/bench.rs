//! Recall-versus-query-time measurements over configuration grids.
//!
//! Every configuration is timed with one warm-up pass over the query batch
//! followed by at least three timed passes; the reported time is the median
//! pass's mean seconds per query. Queries run on the calling thread so that
//! timings are not disturbed by the worker pool.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autotune::{generate_index_auto, select_parameters, subset_index, SelectedParams, Target, TuningLimits};
use crate::dataset::{recall, DataMatrix, GroundTruth, QueryEvaluation};
use crate::error::{invalid, Error, Result};
use crate::search::{Searcher, SearchParams, Strategy};
use crate::timemodel::TimeModel;
use crate::trees::{grow_forest, Forest, SplitRule, TreeKind};

/// Minimum number of timed passes.
pub const MIN_PASSES: usize = 3;

/// Cartesian product of tree types, forest sizes and search parameters.
/// Voting thresholds above the tree count are skipped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub kinds: Vec<TreeKind>,
    pub trees: Vec<usize>,
    pub depths: Vec<usize>,
    /// Voting thresholds; empty disables voting rows.
    pub votes: Vec<usize>,
    /// Priority-queue extra branches; empty disables priority rows.
    pub branches: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub kind: TreeKind,
    pub trees: usize,
    pub depth: usize,
    pub strategy: Strategy,
}

impl BenchGrid {
    pub fn configs(&self) -> Vec<BenchConfig> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            for &trees in &self.trees {
                for &depth in &self.depths {
                    for &threshold in self.votes.iter().filter(|&&v| v <= trees) {
                        out.push(BenchConfig {
                            kind,
                            trees,
                            depth,
                            strategy: Strategy::Voting { threshold },
                        });
                    }
                    for &extra_branches in &self.branches {
                        out.push(BenchConfig {
                            kind,
                            trees,
                            depth,
                            strategy: Strategy::PriorityQueue { extra_branches },
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.kinds.is_empty() || self.trees.is_empty() || self.depths.is_empty() {
            return invalid("grid needs at least one tree type, tree count and depth");
        }
        if self.votes.is_empty() && self.branches.is_empty() {
            return invalid("grid needs voting thresholds or priority-queue branches");
        }
        if self.trees.contains(&0) || self.votes.contains(&0) {
            return invalid("tree counts and vote thresholds must be at least 1");
        }
        let max = crate::trees::max_depth(n);
        if let Some(&l) = self.depths.iter().find(|&&l| l == 0 || l > max) {
            return invalid(format!("depth {l} outside [1, {max}] for n = {n}"));
        }
        if self.configs().is_empty() {
            return invalid("grid has no valid configuration (every vote threshold exceeds every tree count)");
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::InvalidArgument(format!("bad value '{s}' for grid key '{key}'")))
        })
        .collect()
}

/// Parses the semicolon-separated `key=v1,v2,…` form, for example
/// `tree=rp,rkd;trees=1,4,16;depth=8;votes=1,2;branches=0,10`. Omitted keys
/// take `tree=rp`, `trees=8`, `depth=8`, `votes=1` and no branches.
impl FromStr for BenchGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut grid = BenchGrid {
            kinds: vec![TreeKind::Rp],
            trees: vec![8],
            depths: vec![8],
            votes: vec![1],
            branches: Vec::new(),
        };
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("grid entry '{part}' is not key=values")))?;
            let key = key.trim();
            match key {
                "tree" | "trees_type" | "kind" => grid.kinds = parse_list(key, value)?,
                "trees" | "t" => grid.trees = parse_list(key, value)?,
                "depth" | "l" => grid.depths = parse_list(key, value)?,
                "votes" | "v" => grid.votes = parse_list(key, value)?,
                "branches" | "b" => grid.branches = parse_list(key, value)?,
                other => return invalid(format!("unknown grid key '{other}'")),
            }
        }
        Ok(grid)
    }
}

/// One measured configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tree_type: TreeKind,
    /// `voting`, `priority` or `autotuned` (a voting configuration chosen by
    /// the tuner).
    pub strategy: String,
    pub trees: usize,
    pub depth: usize,
    /// Vote threshold or number of extra branches.
    pub param: usize,
    pub recall: f64,
    /// Median over passes of the mean seconds per query.
    pub query_seconds: f64,
    pub build_seconds: f64,
    pub tuning_seconds: f64,
}

impl BenchRow {
    /// Search parameters reproducing this row with `k` neighbors.
    pub fn params(&self, k: usize) -> SearchParams {
        match self.strategy.as_str() {
            "priority" => SearchParams::priority(k, self.param),
            _ => SearchParams::voting(k, self.param),
        }
        .with_depth(self.depth)
    }
}

const CSV_HEADER: &str = "tree_type,strategy,trees,depth,param,recall,query_seconds,build_seconds,tuning_seconds";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Orders rows by recall, then query time.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.recall
                .total_cmp(&b.recall)
                .then(a.query_seconds.total_cmp(&b.query_seconds))
        });
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{:e},{:e},{:e}",
                r.tree_type, r.strategy, r.trees, r.depth, r.param, r.recall, r.query_seconds, r.build_seconds, r.tuning_seconds
            )?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next().transpose()? {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Format("missing bench CSV header".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("row {}: expected 9 fields, got {}", i + 1, f.len())));
            }
            let bad = |what: &str| Error::Format(format!("row {}: bad {what}", i + 1));
            rows.push(BenchRow {
                tree_type: f[0].parse().map_err(|_| bad("tree_type"))?,
                strategy: f[1].to_string(),
                trees: f[2].parse().map_err(|_| bad("trees"))?,
                depth: f[3].parse().map_err(|_| bad("depth"))?,
                param: f[4].parse().map_err(|_| bad("param"))?,
                recall: f[5].parse().map_err(|_| bad("recall"))?,
                query_seconds: f[6].parse().map_err(|_| bad("query_seconds"))?,
                build_seconds: f[7].parse().map_err(|_| bad("build_seconds"))?,
                tuning_seconds: f[8].parse().map_err(|_| bad("tuning_seconds"))?,
            });
        }
        Ok(Self { rows })
    }
}

/// Measurement settings shared by every configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub k: usize,
    /// Timed passes after the warm-up; raised to at least three.
    pub passes: usize,
    pub seed: u64,
    /// Template for tree parameters; its `kind` is replaced per row.
    pub rule: SplitRule,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            k: 10,
            passes: MIN_PASSES,
            seed: 0,
            rule: SplitRule::default(),
        }
    }
}

/// Mean recall of one warm-up pass and the median over `passes` timed
/// passes of the mean seconds per query.
pub fn measure_queries(
    forest: &Forest,
    data: &DataMatrix,
    queries: &DataMatrix,
    truth: &GroundTruth,
    params: &SearchParams,
    passes: usize,
) -> Result<QueryEvaluation> {
    params.validate(forest)?;
    if truth.len() != queries.n() || queries.n() == 0 {
        return invalid(format!("{} truth rows for {} queries", truth.len(), queries.n()));
    }
    if queries.d() != data.d() {
        return invalid(format!("queries have {} dims, corpus has {}", queries.d(), data.d()));
    }
    let mut searcher = Searcher::new(forest, data)?;
    let mut total_recall = 0.0;
    for (i, q) in queries.rows().enumerate() {
        let found = searcher.query(q, params)?;
        total_recall += recall(&found, &truth.rows[i][..params.k.min(truth.k)]);
    }
    let mut times: Vec<f64> = (0..passes.max(MIN_PASSES))
        .map(|_| {
            let start = Instant::now();
            for q in queries.rows() {
                std::hint::black_box(searcher.query(q, params).expect("validated above"));
            }
            start.elapsed().as_secs_f64() / queries.n() as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    Ok(QueryEvaluation {
        recall: total_recall / queries.n() as f64,
        elapsed: times[times.len() / 2],
    })
}

/// Measures every configuration of `grid` on `queries`. One forest is grown
/// (and timed) per tree type, tree count and depth.
pub fn run_bench(
    data: &DataMatrix,
    queries: &DataMatrix,
    truth: &GroundTruth,
    grid: &BenchGrid,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    grid.validate(data.n())?;
    if opts.k == 0 || opts.k > truth.k {
        return invalid(format!("k = {} must lie in [1, ground-truth k = {}]", opts.k, truth.k));
    }
    let mut groups: BTreeMap<(usize, usize, usize), Vec<BenchConfig>> = BTreeMap::new();
    for c in grid.configs() {
        let kind_idx = TreeKind::ALL.iter().position(|&k| k == c.kind).unwrap_or(0);
        groups.entry((kind_idx, c.trees, c.depth)).or_default().push(c);
    }
    let mut report = BenchReport::default();
    for ((_, trees, depth), configs) in groups {
        let rule = SplitRule {
            kind: configs[0].kind,
            ..opts.rule.clone()
        };
        let start = Instant::now();
        let forest = grow_forest(data, trees, depth, &rule, opts.seed)?;
        let build_seconds = start.elapsed().as_secs_f64();
        for c in configs {
            let (strategy, param) = match c.strategy {
                Strategy::Voting { threshold } => ("voting", threshold),
                Strategy::PriorityQueue { extra_branches } => ("priority", extra_branches),
            };
            let params = SearchParams {
                k: opts.k,
                strategy: c.strategy,
                depth: None,
            };
            let eval = measure_queries(&forest, data, queries, truth, &params, opts.passes)?;
            log::info!(
                "{} {strategy} T={trees} l={depth} p={param}: recall {:.3}, {:.3e} s/query",
                c.kind,
                eval.recall,
                eval.elapsed
            );
            report.rows.push(BenchRow {
                tree_type: c.kind,
                strategy: strategy.into(),
                trees,
                depth,
                param,
                recall: eval.recall,
                query_seconds: eval.elapsed,
                build_seconds,
                tuning_seconds: 0.0,
            });
        }
    }
    report.sort();
    Ok(report)
}

/// Tunes on `validation`, selects for `target`, and measures the chosen
/// configuration on `test`. Returns the row and the selection.
#[allow(clippy::too_many_arguments)]
pub fn bench_autotuned(
    data: &DataMatrix,
    validation: &DataMatrix,
    test: &DataMatrix,
    test_truth: &GroundTruth,
    limits: &TuningLimits,
    rule: &SplitRule,
    model: &TimeModel,
    target: Target,
    opts: &BenchOptions,
) -> Result<(BenchRow, SelectedParams)> {
    let tuned = generate_index_auto(data, validation, limits, rule, model, opts.seed)?;
    let sel = select_parameters(&tuned, target)?;
    let forest = subset_index(&tuned.forest, sel.trees, sel.depth)?;
    let params = SearchParams::voting(opts.k, sel.votes);
    let eval = measure_queries(&forest, data, test, test_truth, &params, opts.passes)?;
    let row = BenchRow {
        tree_type: rule.kind,
        strategy: "autotuned".into(),
        trees: sel.trees,
        depth: sel.depth,
        param: sel.votes,
        recall: eval.recall,
        query_seconds: eval.elapsed,
        build_seconds: tuned.timings.build,
        tuning_seconds: tuned.timings.total,
    };
    Ok((row, sel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{gaussian_mixture, MixtureSpec};

    fn small() -> (DataMatrix, DataMatrix, GroundTruth) {
        let all = gaussian_mixture(&MixtureSpec {
            n: 640,
            d: 8,
            clusters: 3,
            intrinsic: 3,
            ..MixtureSpec::standard(0)
        })
        .unwrap();
        let data = all.select(&(0..600).collect::<Vec<_>>()).unwrap();
        let queries = all.select(&(600..640).collect::<Vec<_>>()).unwrap();
        let truth = GroundTruth::compute(&data, &queries, 5).unwrap();
        (data, queries, truth)
    }

    #[test]
    fn parse_grid() {
        let g: BenchGrid = "tree=rp,rkd; trees=1,4; depth=5; votes=1,2; branches=0,3".parse().unwrap();
        assert_eq!(g.kinds, vec![TreeKind::Rp, TreeKind::Rkd]);
        // Per kind: T=1 → v=1 + 2 branches; T=4 → v=1,2 + 2 branches.
        assert_eq!(g.configs().len(), 2 * (3 + 4));
        assert!("trees=x".parse::<BenchGrid>().is_err());
        assert!("colour=1".parse::<BenchGrid>().is_err());
        assert!("votes=3;trees=2".parse::<BenchGrid>().unwrap().validate(100).is_err());
    }

    #[test]
    fn one_config_one_row_and_csv_round_trip() {
        let (data, queries, truth) = small();
        let grid: BenchGrid = "trees=3;depth=4;votes=1".parse().unwrap();
        let opts = BenchOptions { k: 5, ..Default::default() };
        let report = run_bench(&data, &queries, &truth, &grid, &opts).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!((0.0..=1.0).contains(&row.recall));
        assert!(row.query_seconds >= 0.0 && row.build_seconds >= 0.0);

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let back = BenchReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn rows_sorted_and_recall_matches_direct_queries() {
        let (data, queries, truth) = small();
        let grid: BenchGrid = "tree=rkd,pca;trees=2,6;depth=3,5;votes=1,2;branches=0,4".parse().unwrap();
        let opts = BenchOptions { k: 5, ..Default::default() };
        let report = run_bench(&data, &queries, &truth, &grid, &opts).unwrap();
        assert_eq!(report.rows.len(), grid.configs().len());
        assert!(report.rows.windows(2).all(|w| w[0].recall <= w[1].recall));
        for row in report.rows.iter().take(5) {
            let rule = SplitRule::new(row.tree_type);
            let forest = grow_forest(&data, row.trees, row.depth, &rule, 0).unwrap();
            let params = row.params(5);
            let mut s = Searcher::new(&forest, &data).unwrap();
            let direct: f64 = queries
                .rows()
                .enumerate()
                .map(|(i, q)| recall(&s.query(q, &params).unwrap(), &truth.rows[i]))
                .sum::<f64>()
                / queries.n() as f64;
            assert!((direct - row.recall).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_k_above_truth() {
        let (data, queries, truth) = small();
        let grid: BenchGrid = "trees=2;depth=3".parse().unwrap();
        let opts = BenchOptions { k: 6, ..Default::default() };
        assert!(run_bench(&data, &queries, &truth, &grid, &opts).is_err());
    }
}
