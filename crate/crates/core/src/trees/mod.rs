//! Randomized space-partitioning trees grown by recursive median splits.
//!
//! A tree of depth `ℓ` is an implicit complete binary tree in heap layout:
//! node `i` has children `2i + 1` and `2i + 2`, and the nodes of level `j`
//! are `2^j − 1 ..= 2^(j+1) − 2`. Every node owns a contiguous range of the
//! tree's point permutation, so a node at any level can be enumerated as a
//! slice. Splits always send `⌈size/2⌉` points left, which makes the range
//! layout a function of `n` and `ℓ` alone.
//!
//! Each node draws its randomness from a generator seeded by the tree seed
//! and the node's heap index. Growing the same tree deeper therefore never
//! changes its upper levels, and a deep tree can be pruned to any shallower
//! depth with results identical to a tree grown at that depth.

mod direction;
mod forest;
mod split;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use direction::{generate_direction, pca_direction, project, rkd_direction, rp_direction, Direction};
pub use forest::{grow_forest, grow_forest_sequential, Forest, FOREST_MAGIC, FOREST_VERSION};
pub use split::{median_split, MedianSplit};
pub use tree::{grow_tree, level_nodes, max_depth, node_layout, Directions, Tree};

/// How split directions are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    /// Randomized k-d tree: a coordinate axis among the top-variance ones.
    Rkd,
    /// Sparse random projection tree.
    Rp,
    /// Randomized PCA tree: approximate leading principal component over a
    /// random subset of coordinates.
    Pca,
}

impl TreeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rkd => "rkd",
            Self::Rp => "rp",
            Self::Pca => "pca",
        }
    }

    pub const ALL: [TreeKind; 3] = [TreeKind::Rkd, TreeKind::Rp, TreeKind::Pca];
}

impl std::str::FromStr for TreeKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rkd" | "kd" => Ok(Self::Rkd),
            "rp" => Ok(Self::Rp),
            "pca" => Ok(Self::Pca),
            other => invalid(format!("unknown tree type '{other}' (expected rkd, rp or pca)")),
        }
    }
}

impl std::fmt::Display for TreeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tree-type parameters for direction generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub kind: TreeKind,
    /// RKD: number of highest-variance coordinates to choose from (capped
    /// at `d`).
    pub m_top: usize,
    /// RP: fraction of non-zero components. `None` means `1/√d`.
    pub sparsity: Option<f64>,
    /// PCA: number of sampled coordinates. `None` means `⌈√d⌉`.
    pub pca_dims: Option<usize>,
    /// PCA: step size of the gradient updates.
    pub learning_rate: f64,
    /// PCA: number of gradient updates.
    pub pca_iterations: usize,
    /// RP: use one direction per level instead of one per node.
    pub shared_levels: bool,
}

impl SplitRule {
    pub fn new(kind: TreeKind) -> Self {
        Self {
            kind,
            m_top: 5,
            sparsity: None,
            pca_dims: None,
            learning_rate: 0.01,
            pca_iterations: 20,
            shared_levels: true,
        }
    }

    pub fn rkd() -> Self {
        Self::new(TreeKind::Rkd)
    }

    pub fn rp() -> Self {
        Self::new(TreeKind::Rp)
    }

    pub fn pca() -> Self {
        Self::new(TreeKind::Pca)
    }

    /// RP directions are shared across a level only in shared mode.
    pub fn shares_levels(&self) -> bool {
        self.kind == TreeKind::Rp && self.shared_levels
    }

    pub fn sparsity_for(&self, d: usize) -> f64 {
        self.sparsity.unwrap_or_else(|| 1.0 / (d as f64).sqrt())
    }

    /// Number of non-zero components of an RP direction in `d` dimensions.
    pub fn rp_nonzeros(&self, d: usize) -> usize {
        ((self.sparsity_for(d) * d as f64).ceil() as usize).clamp(1, d)
    }

    pub fn pca_dims_for(&self, d: usize) -> usize {
        self.pca_dims
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        // m_top above d is clamped: it selects among all coordinates.
        if self.m_top == 0 {
            return invalid("m_top must be at least 1");
        }
        if let Some(a) = self.sparsity {
            if !(a > 0.0 && a <= 1.0) {
                return invalid(format!("sparsity = {a} must lie in (0, 1]"));
            }
        }
        if let Some(p) = self.pca_dims {
            if p == 0 || p > d {
                return invalid(format!("pca_dims = {p} must lie in [1, d = {d}]"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if self.pca_iterations == 0 {
            return invalid("pca_iterations must be at least 1");
        }
        Ok(())
    }
}

impl Default for SplitRule {
    fn default() -> Self {
        Self::rp()
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for one node (or, in shared mode, one level) of a tree.
pub(crate) fn stream_rng(tree_seed: u64, stream: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(tree_seed ^ mix64(stream.wrapping_mul(4).wrapping_add(salt))))
}

/// Seed of tree `t` in a forest grown from `seed`.
pub(crate) fn tree_seed(seed: u64, t: usize) -> u64 {
    mix64(seed ^ mix64(t as u64 ^ 0x5eed_0f7e_e5ee))
}
