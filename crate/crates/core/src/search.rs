//! k-NN queries against a forest: voting search and priority-queue search.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{nearest_among, DataMatrix};
use crate::error::{invalid, Result};
use crate::trees::{Forest, Tree};

/// How the candidate set is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Points sharing `q`'s leaf in at least `threshold` trees.
    Voting { threshold: usize },
    /// Union of `q`'s leaves plus `extra_branches` more leaves chosen by a
    /// priority queue over all trees, keyed by the query's margin to each
    /// split.
    PriorityQueue { extra_branches: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    pub strategy: Strategy,
    /// Search depth when shallower than the forest's.
    pub depth: Option<usize>,
}

impl SearchParams {
    pub fn voting(k: usize, threshold: usize) -> Self {
        Self {
            k,
            strategy: Strategy::Voting { threshold },
            depth: None,
        }
    }

    pub fn priority(k: usize, extra_branches: usize) -> Self {
        Self {
            k,
            strategy: Strategy::PriorityQueue { extra_branches },
            depth: None,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn validate(&self, forest: &Forest) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be at least 1");
        }
        if let Strategy::Voting { threshold: 0 } = self.strategy {
            return invalid("vote threshold must be at least 1");
        }
        if let Some(depth) = self.depth {
            if depth > forest.depth() {
                return invalid(format!(
                    "search depth {depth} exceeds forest depth {}",
                    forest.depth()
                ));
            }
        }
        Ok(())
    }

    fn depth_in(&self, forest: &Forest) -> usize {
        self.depth.unwrap_or(forest.depth())
    }
}

/// Corpus indices whose exact distances are evaluated, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    indices: Vec<u32>,
}

impl CandidateSet {
    pub fn from_unsorted(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &CandidateSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }
}

/// Per-query vote counters over the corpus, reset through a touched list.
/// Counters are 16-bit, halving the cache footprint of the hot loop; tallies
/// saturate at `u16::MAX`.
#[derive(Clone, Debug)]
pub struct VoteScratch {
    votes: Vec<u32>,
    /// Points with a non-zero tally, in first-touch order; `n + 1` slots so
    /// that appends can be unconditional stores.
    touched: Vec<u32>,
    touched_len: usize,
    elected: Vec<u32>,
    elected_len: usize,
}

impl VoteScratch {
    pub fn new(n: usize) -> Self {
        Self {
            votes: vec![0; n],
            touched: vec![0; n + 1],
            touched_len: 0,
            elected: vec![0; n + 1],
            elected_len: 0,
        }
    }

    /// Adds one vote to every point of `leaf`, electing each point whose
    /// tally reaches `threshold`. A point is touched and elected at most
    /// once between resets, so neither list can outgrow `n`.
    #[inline]
    pub fn tally(&mut self, leaf: &[u32], threshold: u32) {
        let (mut nt, mut ne) = (self.touched_len, self.elected_len);
        for &p in leaf {
            let slot = &mut self.votes[p as usize];
            *slot += 1;
            let v = *slot;
            self.touched[nt] = p;
            nt += usize::from(v == 1);
            self.elected[ne] = p;
            ne += usize::from(v == threshold);
        }
        self.touched_len = nt;
        self.elected_len = ne;
    }

    /// Zeroes every counter touched since the last reset and clears the
    /// elected list.
    #[inline]
    pub fn reset(&mut self) {
        for &p in &self.touched[..self.touched_len] {
            self.votes[p as usize] = 0;
        }
        self.touched_len = 0;
        self.elected_len = 0;
    }

    /// Points with a non-zero tally, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched[..self.touched_len]
    }

    /// Points whose tally has reached the threshold, in election order.
    pub fn elected(&self) -> &[u32] {
        &self.elected[..self.elected_len]
    }
}

#[derive(Clone, Copy, Debug)]
struct Branch {
    margin: f32,
    tree: u32,
    node: u32,
}

impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Branch {}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.margin
            .total_cmp(&other.margin)
            .then(self.tree.cmp(&other.tree))
            .then(self.node.cmp(&other.node))
    }
}

/// Reusable query state bound to one forest and corpus.
pub struct Searcher<'a> {
    forest: &'a Forest,
    data: &'a DataMatrix,
    scratch: VoteScratch,
    queue: BinaryHeap<Reverse<Branch>>,
}

impl<'a> Searcher<'a> {
    pub fn new(forest: &'a Forest, data: &'a DataMatrix) -> Result<Self> {
        if forest.n() != data.n() || forest.d() != data.d() {
            return invalid(format!(
                "forest built for n={}, d={}, corpus has n={}, d={}",
                forest.n(),
                forest.d(),
                data.n(),
                data.d()
            ));
        }
        Ok(Self {
            forest,
            data,
            scratch: VoteScratch::new(data.n()),
            queue: BinaryHeap::new(),
        })
    }

    pub fn forest(&self) -> &Forest {
        self.forest
    }

    /// Points sharing `q`'s node at `depth` in at least `threshold` trees.
    pub fn candidates_voting(&mut self, q: &[f32], threshold: usize, depth: usize) -> CandidateSet {
        self.collect_voting(q, threshold, depth);
        CandidateSet::from_unsorted(self.scratch.elected().to_vec())
    }

    /// Candidate set of a priority-queue search with `extra_branches`.
    pub fn candidates_priority(&mut self, q: &[f32], extra_branches: usize, depth: usize) -> CandidateSet {
        self.collect_priority(q, extra_branches, depth);
        CandidateSet::from_unsorted(self.scratch.elected().to_vec())
    }

    fn collect_voting(&mut self, q: &[f32], threshold: usize, depth: usize) {
        self.scratch.reset();
        if threshold == 0 || threshold > self.forest.len() {
            return;
        }
        let threshold = threshold as u32;
        for tree in self.forest.trees() {
            let leaf = tree.points(tree.descend(q, depth));
            self.scratch.tally(leaf, threshold);
        }
    }

    fn collect_priority(&mut self, q: &[f32], extra_branches: usize, depth: usize) {
        self.scratch.reset();
        self.queue.clear();
        let trees = self.forest.trees();
        for (t, tree) in trees.iter().enumerate() {
            let leaf = descend_enqueue(tree, t as u32, 0, depth, q, &mut self.queue);
            self.scratch.tally(tree.points(leaf), 1);
        }
        for _ in 0..extra_branches {
            let Some(Reverse(branch)) = self.queue.pop() else {
                break;
            };
            let tree = &trees[branch.tree as usize];
            let leaf = descend_enqueue(tree, branch.tree, branch.node as usize, depth, q, &mut self.queue);
            self.scratch.tally(tree.points(leaf), 1);
        }
    }

    /// Voting search: exact k-NN of `q` among the elected points.
    pub fn query_voting(&mut self, q: &[f32], k: usize, threshold: usize, depth: usize) -> Vec<u32> {
        self.collect_voting(q, threshold, depth);
        nearest_among(self.data, q, self.scratch.elected(), k)
    }

    /// Priority-queue search: exact k-NN of `q` among the visited leaves.
    pub fn query_priority(&mut self, q: &[f32], k: usize, extra_branches: usize, depth: usize) -> Vec<u32> {
        self.collect_priority(q, extra_branches, depth);
        nearest_among(self.data, q, self.scratch.elected(), k)
    }

    /// Runs the search described by `params`. Fewer than `k` indices are
    /// returned when the candidate set is smaller than `k`.
    pub fn query(&mut self, q: &[f32], params: &SearchParams) -> Result<Vec<u32>> {
        params.validate(self.forest)?;
        if q.len() != self.data.d() {
            return invalid(format!("query has {} dims, corpus has {}", q.len(), self.data.d()));
        }
        let depth = params.depth_in(self.forest);
        Ok(match params.strategy {
            Strategy::Voting { threshold } => self.query_voting(q, params.k, threshold, depth),
            Strategy::PriorityQueue { extra_branches } => {
                self.query_priority(q, params.k, extra_branches, depth)
            }
        })
    }
}

/// Routes `q` from `start` down to `depth`, pushing every sibling branch not
/// taken, and returns the reached node.
fn descend_enqueue(
    tree: &Tree,
    tree_idx: u32,
    start: usize,
    depth: usize,
    q: &[f32],
    queue: &mut BinaryHeap<Reverse<Branch>>,
) -> usize {
    let mut node = start;
    let mut level = (start + 1).ilog2() as usize;
    while level < depth {
        let p = tree.direction(node).project(q);
        let cut = tree.cut(node);
        let (next, other) = if p <= cut {
            (2 * node + 1, 2 * node + 2)
        } else {
            (2 * node + 2, 2 * node + 1)
        };
        queue.push(Reverse(Branch {
            margin: (p - cut).abs(),
            tree: tree_idx,
            node: other as u32,
        }));
        node = next;
        level += 1;
    }
    node
}

pub fn candidates_voting(
    forest: &Forest,
    data: &DataMatrix,
    q: &[f32],
    threshold: usize,
    depth: usize,
) -> Result<CandidateSet> {
    if depth > forest.depth() {
        return invalid(format!("depth {depth} exceeds forest depth {}", forest.depth()));
    }
    Ok(Searcher::new(forest, data)?.candidates_voting(q, threshold, depth))
}

pub fn query_voting(forest: &Forest, data: &DataMatrix, q: &[f32], params: &SearchParams) -> Result<Vec<u32>> {
    if !matches!(params.strategy, Strategy::Voting { .. }) {
        return invalid("query_voting needs a voting strategy");
    }
    Searcher::new(forest, data)?.query(q, params)
}

pub fn query_priority(forest: &Forest, data: &DataMatrix, q: &[f32], params: &SearchParams) -> Result<Vec<u32>> {
    if !matches!(params.strategy, Strategy::PriorityQueue { .. }) {
        return invalid("query_priority needs a priority-queue strategy");
    }
    Searcher::new(forest, data)?.query(q, params)
}

/// Answers every row of `queries`, in parallel with one scratch per worker.
pub fn query_batch(
    forest: &Forest,
    data: &DataMatrix,
    queries: &DataMatrix,
    params: &SearchParams,
) -> Result<Vec<Vec<u32>>> {
    params.validate(forest)?;
    Searcher::new(forest, data)?;
    if queries.d() != data.d() {
        return invalid(format!("queries have {} dims, corpus has {}", queries.d(), data.d()));
    }
    (0..queries.n())
        .into_par_iter()
        .map_init(
            || Searcher::new(forest, data).expect("checked above"),
            |s, i| s.query(queries.row(i), params),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::exact_knn;
    use crate::trees::{grow_forest, SplitRule, TreeKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new((0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(), d).unwrap()
    }

    fn random_query(d: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Vote tally by scanning every point's leaf membership in every tree.
    fn tally_oracle(forest: &Forest, q: &[f32], threshold: usize, depth: usize) -> CandidateSet {
        let n = forest.n();
        let mut votes = vec![0usize; n];
        for tree in forest.trees() {
            let leaf = tree.traverse(q, depth);
            for (pos, &p) in tree.permutation().iter().enumerate() {
                if leaf.contains(&pos) {
                    votes[p as usize] += 1;
                }
            }
        }
        CandidateSet::from_unsorted(
            (0..n as u32).filter(|&p| votes[p as usize] >= threshold).collect(),
        )
    }

    #[test]
    fn single_tree_votes_equal_leaf() {
        let data = random_data(100, 4, 1);
        let forest = grow_forest(&data, 1, 4, &SplitRule::rp(), 2).unwrap();
        let q = data.row(5);
        let got = candidates_voting(&forest, &data, q, 1, 4).unwrap();
        let tree = &forest.trees()[0];
        let leaf = CandidateSet::from_unsorted(tree.permutation()[tree.traverse(q, 4)].to_vec());
        assert_eq!(got, leaf);
    }

    #[test]
    fn unanimous_threshold_is_leaf_intersection() {
        let data = random_data(200, 5, 2);
        let forest = grow_forest(&data, 4, 3, &SplitRule::rkd(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let q = random_query(5, &mut rng);
            let mut inter: Option<CandidateSet> = None;
            for tree in forest.trees() {
                let leaf = CandidateSet::from_unsorted(tree.permutation()[tree.traverse(&q, 3)].to_vec());
                inter = Some(match inter {
                    None => leaf,
                    Some(acc) => CandidateSet::from_unsorted(
                        acc.indices().iter().copied().filter(|&i| leaf.contains(i)).collect(),
                    ),
                });
            }
            assert_eq!(candidates_voting(&forest, &data, &q, 4, 3).unwrap(), inter.unwrap());
        }
    }

    #[test]
    fn voting_matches_tally_oracle() {
        let data = random_data(500, 6, 5);
        for kind in TreeKind::ALL {
            let forest = grow_forest(&data, 5, 4, &SplitRule::new(kind), 6).unwrap();
            let mut s = Searcher::new(&forest, &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..20 {
                let q = random_query(6, &mut rng);
                for v in 1..=6 {
                    for depth in [2, 4] {
                        assert_eq!(s.candidates_voting(&q, v, depth), tally_oracle(&forest, &q, v, depth));
                    }
                }
            }
        }
    }

    #[test]
    fn threshold_above_tree_count_is_empty() {
        let data = random_data(64, 3, 8);
        let forest = grow_forest(&data, 2, 3, &SplitRule::rp(), 1).unwrap();
        assert!(candidates_voting(&forest, &data, data.row(0), 3, 3).unwrap().is_empty());
        let params = SearchParams::voting(5, 3);
        assert!(query_voting(&forest, &data, data.row(0), &params).unwrap().is_empty());
    }

    #[test]
    fn voting_result_is_knn_within_candidates() {
        let data = random_data(1000, 16, 9);
        let forest = grow_forest(&data, 10, 5, &SplitRule::rp(), 10).unwrap();
        let mut s = Searcher::new(&forest, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_query(16, &mut rng);
            let cands = s.candidates_voting(&q, 2, 5);
            let sub = data
                .select(&cands.indices().iter().map(|&i| i as usize).collect::<Vec<_>>())
                .unwrap();
            let k = 10.min(cands.len());
            let expected: Vec<u32> = if k == 0 {
                vec![]
            } else {
                exact_knn(&sub, &q, k)
                    .unwrap()
                    .into_iter()
                    .map(|j| cands.indices()[j as usize])
                    .collect()
            };
            assert_eq!(s.query_voting(&q, 10, 2, 5), expected);
        }
    }

    #[test]
    fn self_query_finds_itself() {
        let data = random_data(300, 8, 12);
        let forest = grow_forest(&data, 3, 5, &SplitRule::pca(), 1).unwrap();
        let mut s = Searcher::new(&forest, &data).unwrap();
        for i in 0..data.n() {
            assert_eq!(s.query_voting(data.row(i), 1, 1, 5), vec![i as u32]);
        }
    }

    #[test]
    fn priority_without_extra_branches_equals_single_vote() {
        let data = random_data(400, 6, 13);
        for kind in TreeKind::ALL {
            let forest = grow_forest(&data, 6, 5, &SplitRule::new(kind), 14).unwrap();
            let mut s = Searcher::new(&forest, &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(15);
            for _ in 0..20 {
                let q = random_query(6, &mut rng);
                assert_eq!(s.candidates_priority(&q, 0, 5), s.candidates_voting(&q, 1, 5));
                assert_eq!(s.query_priority(&q, 10, 0, 5), s.query_voting(&q, 10, 1, 5));
            }
        }
    }

    #[test]
    fn priority_exhausts_to_full_scan() {
        let data = random_data(128, 4, 16);
        let forest = grow_forest(&data, 3, 4, &SplitRule::rp(), 17).unwrap();
        let mut s = Searcher::new(&forest, &data).unwrap();
        let q = [0.1, -0.2, 0.3, 0.0];
        let all = s.candidates_priority(&q, 10_000, 4);
        assert_eq!(all.len(), 128);
        assert_eq!(s.query_priority(&q, 5, 10_000, 4), exact_knn(&data, &q, 5).unwrap());
    }

    #[test]
    fn priority_queue_order_on_hand_built_trees() {
        // 1-D corpus 0..8, RKD splits on the only axis: cuts are 3 at the
        // root and 1, 5 on level one. Leaves: {0,1} {2,3} {4,5} {6,7}.
        let data = DataMatrix::new((0..8).map(|i| i as f32).collect(), 1).unwrap();
        let forest = grow_forest(&data, 2, 2, &SplitRule::rkd(), 0).unwrap();
        for tree in forest.trees() {
            assert_eq!(tree.cuts(), &[3.0, 1.0, 5.0]);
        }
        let mut s = Searcher::new(&forest, &data).unwrap();
        // q = 2.6: both trees go root-left (margin 0.4) then right at node 1
        // (margin 1.6), reaching leaf {2,3}. Queue after descent holds
        // (0.4, t0, node 2), (0.4, t1, node 2), (1.6, t0, node 3),
        // (1.6, t1, node 3). The first pop descends node 2 of tree 0 to leaf
        // {4,5} (margin 2.4 to node 6 enqueued).
        let q = [2.6f32];
        assert_eq!(s.candidates_priority(&q, 0, 2).indices(), &[2, 3]);
        assert_eq!(s.candidates_priority(&q, 1, 2).indices(), &[2, 3, 4, 5]);
        // Second pop is node 2 of tree 1, the same leaf.
        assert_eq!(s.candidates_priority(&q, 2, 2).indices(), &[2, 3, 4, 5]);
        // Third pop is node 3 of tree 0: leaf {0, 1}.
        assert_eq!(s.candidates_priority(&q, 3, 2).indices(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(s.candidates_priority(&q, 4, 2).indices(), &[0, 1, 2, 3, 4, 5]);
        // Fifth pop: node 6 of tree 0 (margin 2.4) gives {6, 7}.
        assert_eq!(s.candidates_priority(&q, 5, 2).len(), 8);
    }

    #[test]
    fn batch_matches_single_queries() {
        let data = random_data(300, 6, 18);
        let queries = random_data(25, 6, 19);
        let forest = grow_forest(&data, 4, 5, &SplitRule::rp(), 20).unwrap();
        for params in [SearchParams::voting(5, 2), SearchParams::priority(5, 3).with_depth(4)] {
            let batch = query_batch(&forest, &data, &queries, &params).unwrap();
            let mut s = Searcher::new(&forest, &data).unwrap();
            for (i, got) in batch.iter().enumerate() {
                assert_eq!(got, &s.query(queries.row(i), &params).unwrap());
            }
        }
    }

    #[test]
    fn params_validation() {
        let data = random_data(64, 3, 21);
        let forest = grow_forest(&data, 2, 3, &SplitRule::rp(), 1).unwrap();
        let mut s = Searcher::new(&forest, &data).unwrap();
        assert!(s.query(data.row(0), &SearchParams::voting(0, 1)).is_err());
        assert!(s.query(data.row(0), &SearchParams::voting(1, 0)).is_err());
        assert!(s.query(data.row(0), &SearchParams::voting(1, 1).with_depth(4)).is_err());
        assert!(s.query(&[0.0], &SearchParams::voting(1, 1)).is_err());
        assert!(query_priority(&forest, &data, data.row(0), &SearchParams::voting(1, 1)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn vote_monotonicity(seed in 0u64..200, v in 1usize..6, depth in 1usize..6) {
            let data = random_data(150, 4, seed);
            let forest = grow_forest(&data, 6, 6, &SplitRule::rp(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
            let q = random_query(4, &mut rng);
            let mut s = Searcher::new(&forest, &data).unwrap();
            let loose = s.candidates_voting(&q, v, depth);
            let strict = s.candidates_voting(&q, v + 1, depth);
            proptest::prop_assert!(strict.is_subset(&loose));

            let fewer = forest.subset(5, 6).unwrap();
            let mut s2 = Searcher::new(&fewer, &data).unwrap();
            proptest::prop_assert!(s2.candidates_voting(&q, v, depth).is_subset(&loose));
        }

        #[test]
        fn larger_candidate_sets_never_lose_recall(seed in 0u64..100) {
            let data = random_data(200, 4, seed);
            let forest = grow_forest(&data, 5, 5, &SplitRule::rkd(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let q = random_query(4, &mut rng);
            let truth = exact_knn(&data, &q, 5).unwrap();
            let mut s = Searcher::new(&forest, &data).unwrap();
            let mut last = 0.0;
            for v in (1..=5).rev() {
                let r = crate::dataset::recall(&s.query_voting(&q, 5, v, 5), &truth);
                proptest::prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
