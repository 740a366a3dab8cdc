use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::direction::Direction;
use super::tree::{grow_tree, Directions, Tree};
use super::{tree_seed, SplitRule, TreeKind};
use crate::dataset::DataMatrix;
use crate::error::{invalid, Error, Result};

pub const FOREST_MAGIC: [u8; 8] = *b"TTFOREST";
pub const FOREST_VERSION: u32 = 1;

/// `T` independent trees of a common depth over one corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    rule: SplitRule,
    seed: u64,
    depth: usize,
    n: usize,
    d: usize,
    data_checksum: u64,
}

/// Grows `count` trees, tree `t` seeded from `(seed, t)`. Trees are built in
/// parallel; the result does not depend on the thread count.
pub fn grow_forest(
    data: &DataMatrix,
    count: usize,
    depth: usize,
    rule: &SplitRule,
    seed: u64,
) -> Result<Forest> {
    if count == 0 {
        return invalid("a forest needs at least one tree");
    }
    let trees = (0..count)
        .into_par_iter()
        .map(|t| grow_tree(data, depth, rule, tree_seed(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        rule: rule.clone(),
        seed,
        depth,
        n: data.n(),
        d: data.d(),
        data_checksum: data.checksum(),
    })
}

/// Sequential variant of [`grow_forest`].
pub fn grow_forest_sequential(
    data: &DataMatrix,
    count: usize,
    depth: usize,
    rule: &SplitRule,
    seed: u64,
) -> Result<Forest> {
    if count == 0 {
        return invalid("a forest needs at least one tree");
    }
    let trees = (0..count)
        .map(|t| grow_tree(data, depth, rule, tree_seed(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        rule: rule.clone(),
        seed,
        depth,
        n: data.n(),
        d: data.d(),
        data_checksum: data.checksum(),
    })
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn rule(&self) -> &SplitRule {
        &self.rule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data_checksum(&self) -> u64 {
        self.data_checksum
    }

    /// Errors unless `data` is the corpus this forest was grown on.
    pub fn check_corpus(&self, data: &DataMatrix) -> Result<()> {
        if data.n() != self.n || data.d() != self.d {
            return invalid(format!(
                "index was built for n={}, d={} but corpus has n={}, d={}",
                self.n,
                self.d,
                data.n(),
                data.d()
            ));
        }
        if data.checksum() != self.data_checksum {
            return invalid("corpus checksum does not match the index");
        }
        Ok(())
    }

    /// The first `count` trees pruned to `depth`. No tree is regrown.
    pub fn subset(&self, count: usize, depth: usize) -> Result<Forest> {
        if count == 0 || count > self.trees.len() {
            return invalid(format!(
                "tree count {count} must lie in [1, {}]",
                self.trees.len()
            ));
        }
        if depth == 0 || depth > self.depth {
            return invalid(format!("depth {depth} must lie in [1, {}]", self.depth));
        }
        let trees = self.trees[..count]
            .iter()
            .map(|t| t.truncated(depth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            trees,
            rule: self.rule.clone(),
            seed: self.seed,
            depth,
            n: self.n,
            d: self.d,
            data_checksum: self.data_checksum,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&FOREST_MAGIC)?;
        w.write_u32::<LittleEndian>(FOREST_VERSION)?;
        for v in [
            self.n as u64,
            self.d as u64,
            self.trees.len() as u64,
            self.depth as u64,
            self.seed,
            self.data_checksum,
        ] {
            w.write_u64::<LittleEndian>(v)?;
        }
        let r = &self.rule;
        w.write_u8(match r.kind {
            TreeKind::Rkd => 0,
            TreeKind::Rp => 1,
            TreeKind::Pca => 2,
        })?;
        w.write_u64::<LittleEndian>(r.m_top as u64)?;
        w.write_u8(u8::from(r.sparsity.is_some()))?;
        w.write_f64::<LittleEndian>(r.sparsity.unwrap_or(0.0))?;
        w.write_u8(u8::from(r.pca_dims.is_some()))?;
        w.write_u64::<LittleEndian>(r.pca_dims.unwrap_or(0) as u64)?;
        w.write_f64::<LittleEndian>(r.learning_rate)?;
        w.write_u64::<LittleEndian>(r.pca_iterations as u64)?;
        w.write_u8(u8::from(r.shared_levels))?;

        for tree in &self.trees {
            let (mode, dirs) = match tree.directions() {
                Directions::PerNode(v) => (0u8, v),
                Directions::PerLevel(v) => (1u8, v),
            };
            w.write_u8(mode)?;
            for &p in tree.permutation() {
                w.write_u32::<LittleEndian>(p)?;
            }
            for &c in tree.cuts() {
                w.write_f32::<LittleEndian>(c)?;
            }
            for dir in dirs {
                w.write_u32::<LittleEndian>(dir.len() as u32)?;
                for &i in dir.indices() {
                    w.write_u32::<LittleEndian>(i)?;
                }
                for &x in dir.weights() {
                    w.write_f32::<LittleEndian>(x)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != FOREST_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FOREST_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut header = [0u64; 6];
        for h in &mut header {
            *h = r.read_u64::<LittleEndian>()?;
        }
        let [n, d, count, depth, seed, data_checksum] = header;
        let (n, d, count, depth) = (n as usize, d as usize, count as usize, depth as usize);
        if n == 0 || d == 0 || count == 0 || depth == 0 || depth >= 64 {
            return Err(Error::Format(format!(
                "implausible header n={n} d={d} T={count} depth={depth}"
            )));
        }
        let kind = match r.read_u8()? {
            0 => TreeKind::Rkd,
            1 => TreeKind::Rp,
            2 => TreeKind::Pca,
            other => return Err(Error::Format(format!("unknown tree kind {other}"))),
        };
        let m_top = r.read_u64::<LittleEndian>()? as usize;
        let has_sparsity = r.read_u8()? != 0;
        let sparsity = r.read_f64::<LittleEndian>()?;
        let has_pca_dims = r.read_u8()? != 0;
        let pca_dims = r.read_u64::<LittleEndian>()? as usize;
        let rule = SplitRule {
            kind,
            m_top,
            sparsity: has_sparsity.then_some(sparsity),
            pca_dims: has_pca_dims.then_some(pca_dims),
            learning_rate: r.read_f64::<LittleEndian>()?,
            pca_iterations: r.read_u64::<LittleEndian>()? as usize,
            shared_levels: r.read_u8()? != 0,
        };
        rule.validate(d).map_err(|e| Error::Format(e.to_string()))?;

        let internal = (1usize << depth) - 1;
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let mode = r.read_u8()?;
            let mut permutation = vec![0u32; n];
            r.read_u32_into::<LittleEndian>(&mut permutation)?;
            let mut cuts = vec![0f32; internal];
            r.read_f32_into::<LittleEndian>(&mut cuts)?;
            let dir_count = match mode {
                0 => internal,
                1 => depth,
                other => return Err(Error::Format(format!("unknown direction mode {other}"))),
            };
            let mut dirs = Vec::with_capacity(dir_count);
            for _ in 0..dir_count {
                let len = r.read_u32::<LittleEndian>()? as usize;
                if len == 0 || len > d {
                    return Err(Error::Format(format!("direction length {len} invalid for d={d}")));
                }
                let mut idx = vec![0u32; len];
                r.read_u32_into::<LittleEndian>(&mut idx)?;
                let mut wts = vec![0f32; len];
                r.read_f32_into::<LittleEndian>(&mut wts)?;
                if idx.iter().any(|&i| i as usize >= d) {
                    return Err(Error::Format("direction index out of range".into()));
                }
                let dir = Direction::new(idx.into_iter().zip(wts).collect())
                    .map_err(|e| Error::Format(e.to_string()))?;
                dirs.push(dir);
            }
            let dirs = if mode == 0 {
                Directions::PerNode(dirs)
            } else {
                Directions::PerLevel(dirs)
            };
            trees.push(Tree::from_parts(depth, permutation, cuts, dirs)?);
        }
        Ok(Forest {
            trees,
            rule,
            seed,
            depth,
            n,
            d,
            data_checksum,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
