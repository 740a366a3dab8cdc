use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::direction::{generate_direction, rp_direction, Direction};
use super::split::partition_at_median;
use super::{stream_rng, SplitRule};
use crate::dataset::DataMatrix;
use crate::error::{invalid, Error, Result};

/// Extra attempts with a fresh random projection before a degenerate node
/// falls back to splitting by index order.
const DEGENERATE_RETRIES: usize = 3;

const NODE_STREAM: u64 = 0;
const LEVEL_STREAM: u64 = 1;

/// Split directions of a tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Directions {
    /// One direction per internal node, heap-indexed.
    PerNode(Vec<Direction>),
    /// One direction per level, shared by every node on it.
    PerLevel(Vec<Direction>),
}

impl Directions {
    fn truncated(&self, depth: usize) -> Self {
        match self {
            Self::PerNode(v) => Self::PerNode(v[..internal_count(depth)].to_vec()),
            Self::PerLevel(v) => Self::PerLevel(v[..depth].to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::PerNode(v) | Self::PerLevel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Direction> {
        match self {
            Self::PerNode(v) | Self::PerLevel(v) => v.iter(),
        }
    }
}

/// `⌊log₂ n⌋`, the deepest level at which every leaf keeps a point.
pub fn max_depth(n: usize) -> usize {
    assert!(n > 0);
    n.ilog2() as usize
}

/// Heap indices of the nodes on `level`.
pub fn level_nodes(level: usize) -> Range<usize> {
    (1usize << level) - 1..(1usize << (level + 1)) - 1
}

#[inline]
fn internal_count(depth: usize) -> usize {
    (1usize << depth) - 1
}

#[inline]
fn level_of(node: usize) -> usize {
    (node + 1).ilog2() as usize
}

/// `(start, end)` ranges of every node of a depth-`depth` tree over `n`
/// points, in heap order. Left children take `⌈size/2⌉` points.
pub fn node_layout(n: usize, depth: usize) -> Vec<(u32, u32)> {
    let total = (1usize << (depth + 1)) - 1;
    let mut ranges = Vec::with_capacity(total);
    ranges.push((0, n as u32));
    for node in 0..internal_count(depth) {
        let (s, e) = ranges[node];
        let mid = s + (e - s).div_ceil(2);
        ranges.push((s, mid));
        ranges.push((mid, e));
    }
    ranges
}

/// A grown tree: a point permutation in which every node owns a contiguous
/// range, plus a cut value and direction for each internal node.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    n: usize,
    depth: usize,
    permutation: Vec<u32>,
    node_ranges: Vec<(u32, u32)>,
    cuts: Vec<f32>,
    directions: Directions,
}

impl Tree {
    /// Reassembles a tree from stored parts, checking their shapes.
    pub fn from_parts(
        depth: usize,
        permutation: Vec<u32>,
        cuts: Vec<f32>,
        directions: Directions,
    ) -> Result<Self> {
        let n = permutation.len();
        if n == 0 {
            return Err(Error::Format("tree holds no points".into()));
        }
        if depth > max_depth(n) {
            return Err(Error::Format(format!("depth {depth} too deep for n={n}")));
        }
        if cuts.len() != internal_count(depth) {
            return Err(Error::Format(format!(
                "expected {} cuts, found {}",
                internal_count(depth),
                cuts.len()
            )));
        }
        let expected_dirs = match &directions {
            Directions::PerNode(_) => internal_count(depth),
            Directions::PerLevel(_) => depth,
        };
        if directions.len() != expected_dirs {
            return Err(Error::Format(format!(
                "expected {expected_dirs} directions, found {}",
                directions.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            match seen.get_mut(p as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::Format(format!("permutation entry {p} invalid or repeated"))),
            }
        }
        Ok(Self {
            n,
            depth,
            permutation,
            node_ranges: node_layout(n, depth),
            cuts,
            directions,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn permutation(&self) -> &[u32] {
        &self.permutation
    }

    pub fn node_ranges(&self) -> &[(u32, u32)] {
        &self.node_ranges
    }

    pub fn cuts(&self) -> &[f32] {
        &self.cuts
    }

    pub fn directions(&self) -> &Directions {
        &self.directions
    }

    #[inline]
    pub fn cut(&self, node: usize) -> f32 {
        self.cuts[node]
    }

    #[inline]
    pub fn direction(&self, node: usize) -> &Direction {
        match &self.directions {
            Directions::PerNode(v) => &v[node],
            Directions::PerLevel(v) => &v[level_of(node)],
        }
    }

    #[inline]
    pub fn range(&self, node: usize) -> Range<usize> {
        let (s, e) = self.node_ranges[node];
        s as usize..e as usize
    }

    /// Corpus indices owned by `node`.
    #[inline]
    pub fn points(&self, node: usize) -> &[u32] {
        &self.permutation[self.range(node)]
    }

    /// Heap index of the node on `level` reached by routing `q` from the
    /// root: left iff the projection is at most the cut.
    #[inline]
    pub fn descend(&self, q: &[f32], level: usize) -> usize {
        debug_assert!(level <= self.depth);
        let mut node = 0;
        for _ in 0..level {
            let p = self.direction(node).project(q);
            node = if p <= self.cuts[node] { 2 * node + 1 } else { 2 * node + 2 };
        }
        node
    }

    /// Permutation range of `q`'s node on `level`.
    pub fn traverse(&self, q: &[f32], level: usize) -> Range<usize> {
        self.range(self.descend(q, level))
    }

    /// The same tree pruned to `depth` levels.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        if depth > self.depth {
            return invalid(format!(
                "cannot prune a depth-{} tree to depth {depth}",
                self.depth
            ));
        }
        Ok(Self {
            n: self.n,
            depth,
            permutation: self.permutation.clone(),
            node_ranges: self.node_ranges[..(1usize << (depth + 1)) - 1].to_vec(),
            cuts: self.cuts[..internal_count(depth)].to_vec(),
            directions: self.directions.truncated(depth),
        })
    }
}

/// Grows one tree of depth `depth` over all points of `data`.
///
/// The result depends only on `(data, depth, rule, seed)`, and the top
/// `ℓ′` levels are identical for every `depth ≥ ℓ′`.
pub fn grow_tree(data: &DataMatrix, depth: usize, rule: &SplitRule, seed: u64) -> Result<Tree> {
    let n = data.n();
    rule.validate(data.d())?;
    if depth == 0 || depth > max_depth(n) {
        return invalid(format!(
            "depth {depth} must lie in [1, ⌊log₂ n⌋ = {}]",
            max_depth(n)
        ));
    }
    let layout = node_layout(n, depth);
    let mut permutation: Vec<u32> = (0..n as u32).collect();
    let mut cuts = vec![0.0f32; internal_count(depth)];
    let mut pairs: Vec<(f32, u32)> = Vec::with_capacity(n);

    let directions = if rule.shares_levels() {
        let mut per_level = Vec::with_capacity(depth);
        for level in 0..depth {
            let dir = rp_direction(
                data.d(),
                rule.rp_nonzeros(data.d()),
                &mut stream_rng(seed, level as u64, LEVEL_STREAM),
            );
            for node in level_nodes(level) {
                let (s, e) = layout[node];
                let slot = &mut permutation[s as usize..e as usize];
                fill_pairs(&mut pairs, slot, data, &dir);
                cuts[node] = match partition_at_median(&mut pairs) {
                    Some(cut) => cut,
                    None => split_by_index(&mut pairs),
                };
                write_back(slot, &pairs);
            }
            per_level.push(dir);
        }
        Directions::PerLevel(per_level)
    } else {
        let mut per_node = Vec::with_capacity(internal_count(depth));
        for node in 0..internal_count(depth) {
            let (s, e) = layout[node];
            let slot = &mut permutation[s as usize..e as usize];
            let mut rng = stream_rng(seed, node as u64, NODE_STREAM);
            let mut attempt = generate_direction(data, slot, rule, &mut rng);
            let mut outcome = None;
            for _ in 0..=DEGENERATE_RETRIES {
                let dir = attempt
                    .take()
                    .unwrap_or_else(|| rp_direction(data.d(), rule.rp_nonzeros(data.d()), &mut rng));
                fill_pairs(&mut pairs, slot, data, &dir);
                let cut = partition_at_median(&mut pairs);
                let done = cut.is_some();
                outcome = Some((dir, cut));
                if done {
                    break;
                }
            }
            let (dir, cut) = outcome.expect("at least one attempt");
            cuts[node] = match cut {
                Some(cut) => cut,
                None => split_by_index(&mut pairs),
            };
            write_back(slot, &pairs);
            per_node.push(dir);
        }
        Directions::PerNode(per_node)
    };

    Ok(Tree {
        n,
        depth,
        permutation,
        node_ranges: layout,
        cuts,
        directions,
    })
}

fn fill_pairs(pairs: &mut Vec<(f32, u32)>, points: &[u32], data: &DataMatrix, dir: &Direction) {
    pairs.clear();
    pairs.extend(points.iter().map(|&p| (dir.project(data.row(p as usize)), p)));
}

fn write_back(slot: &mut [u32], pairs: &[(f32, u32)]) {
    for (dst, p) in slot.iter_mut().zip(pairs) {
        *dst = p.1;
    }
}

/// Fallback for a node whose projections are all equal: order by corpus
/// index and cut at the shared projection value.
fn split_by_index(pairs: &mut [(f32, u32)]) -> f32 {
    pairs.sort_unstable_by_key(|p| p.1);
    pairs[0].0
}
