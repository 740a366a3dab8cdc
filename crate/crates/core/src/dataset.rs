//! Vector corpora, query splits, exact ground truth and the distance kernel.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A dense row-major corpus of `n` vectors with `d` coordinates each.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl DataMatrix {
    /// Wraps `values` as an `n × d` matrix, where `n = values.len() / d`.
    pub fn new(values: Vec<f32>, d: usize) -> Result<Self> {
        if d == 0 {
            return invalid("dimensionality must be at least 1");
        }
        if values.is_empty() {
            return invalid("matrix must hold at least one vector");
        }
        if !values.len().is_multiple_of(d) {
            return invalid(format!(
                "{} values do not divide into rows of length {d}",
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Load(format!(
                "non-finite value {} in row {} column {}",
                values[pos],
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            n: values.len() / d,
            d,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Load(format!(
                    "row {i} has {} values, expected {d}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(values, d)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.d)
    }

    /// Gathers the given rows into a new matrix, in the order listed.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return invalid(format!("row {i} out of range for n={}", self.n));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(values, self.d)
    }

    /// FNV-1a hash over the shape and the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(&(self.n as u64).to_le_bytes());
        feed(&(self.d as u64).to_le_bytes());
        for v in &self.values {
            feed(&v.to_bits().to_le_bytes());
        }
        h
    }
}

/// On-disk vector formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorFormat {
    /// Per record: `u32` dimensionality, then that many `f32`, little-endian.
    Fvecs,
    /// Header of two `u64` (`n`, `d`) followed by `n·d` `f32`, little-endian.
    RawF32,
    /// One vector per line, comma separated.
    Csv,
}

impl VectorFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(Self::Fvecs),
            "f32" | "raw" | "bin" => Some(Self::RawF32),
            "csv" | "txt" => Some(Self::Csv),
            _ => None,
        }
    }
}

impl FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(Self::Fvecs),
            "raw" | "raw-f32" | "f32" => Ok(Self::RawF32),
            "csv" => Ok(Self::Csv),
            other => invalid(format!("unknown vector format '{other}'")),
        }
    }
}

pub fn load_vectors(path: impl AsRef<Path>, format: VectorFormat) -> Result<DataMatrix> {
    let reader = BufReader::new(File::open(path)?);
    read_vectors(reader, format)
}

pub fn read_vectors(reader: impl BufRead, format: VectorFormat) -> Result<DataMatrix> {
    match format {
        VectorFormat::Fvecs => read_fvecs(reader),
        VectorFormat::RawF32 => read_raw(reader),
        VectorFormat::Csv => read_csv(reader),
    }
}

fn read_fvecs(mut r: impl Read) -> Result<DataMatrix> {
    let mut values = Vec::new();
    let mut d: Option<usize> = None;
    let mut record = 0usize;
    loop {
        let dim = match r.read_u32::<LittleEndian>() {
            Ok(v) => v as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        match d {
            None if dim == 0 => return Err(Error::Load("record 0 declares d=0".into())),
            None => d = Some(dim),
            Some(expected) if expected != dim => {
                return Err(Error::Load(format!(
                    "record {record} declares d={dim}, expected {expected}"
                )))
            }
            Some(_) => {}
        }
        let start = values.len();
        values.resize(start + dim, 0.0);
        r.read_f32_into::<LittleEndian>(&mut values[start..])
            .map_err(|e| match e.kind() {
                ErrorKind::UnexpectedEof => Error::Load(format!("record {record} is truncated")),
                _ => e.into(),
            })?;
        record += 1;
    }
    let d = d.ok_or_else(|| Error::Load("file holds no records".into()))?;
    DataMatrix::new(values, d)
}

fn read_raw(mut r: impl Read) -> Result<DataMatrix> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u64::<LittleEndian>()? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Load(format!("header declares n={n}, d={d}")));
    }
    let len = n
        .checked_mul(d)
        .ok_or_else(|| Error::Load("header shape overflows".into()))?;
    let mut values = vec![0.0f32; len];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Load(format!("expected {len} floats, file is short")),
            _ => e.into(),
        })?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Load("trailing bytes after declared n·d floats".into()));
    }
    DataMatrix::new(values, d)
}

fn read_csv(r: impl BufRead) -> Result<DataMatrix> {
    let mut values = Vec::new();
    let mut d: Option<usize> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = values.len();
        for field in line.split(',') {
            let field = field.trim();
            let v: f32 = field.parse().map_err(|_| {
                Error::Load(format!("line {}: cannot parse '{field}'", lineno + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Load(format!(
                    "line {}: non-finite value '{field}'",
                    lineno + 1
                )));
            }
            values.push(v);
        }
        let width = values.len() - start;
        match d {
            None => d = Some(width),
            Some(expected) if expected != width => {
                return Err(Error::Load(format!(
                    "line {} has {width} values, expected {expected}",
                    lineno + 1
                )))
            }
            Some(_) => {}
        }
    }
    let d = d.ok_or_else(|| Error::Load("file holds no records".into()))?;
    DataMatrix::new(values, d)
}

pub fn save_vectors(data: &DataMatrix, path: impl AsRef<Path>, format: VectorFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vectors(data, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_vectors(data: &DataMatrix, w: &mut impl Write, format: VectorFormat) -> Result<()> {
    match format {
        VectorFormat::Fvecs => {
            for row in data.rows() {
                w.write_u32::<LittleEndian>(data.d() as u32)?;
                for &v in row {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
        }
        VectorFormat::RawF32 => {
            w.write_u64::<LittleEndian>(data.n() as u64)?;
            w.write_u64::<LittleEndian>(data.d() as u64)?;
            for &v in data.values() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        VectorFormat::Csv => {
            for row in data.rows() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
    }
    Ok(())
}

/// A train / validation / test partition of a corpus.
#[derive(Clone, Debug)]
pub struct QuerySplit {
    pub train: DataMatrix,
    pub validation: DataMatrix,
    pub test: DataMatrix,
    /// Row indices of the original corpus backing each part.
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Holds out `m_val` validation and `m_test` test rows, chosen by a seeded
/// shuffle. The remaining rows keep their original relative order.
pub fn split_queries(data: &DataMatrix, m_val: usize, m_test: usize, seed: u64) -> Result<QuerySplit> {
    let held = m_val
        .checked_add(m_test)
        .filter(|&h| h < data.n())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "m_val + m_test = {} + {} must be below n = {}",
                m_val,
                m_test,
                data.n()
            ))
        })?;
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation_rows = order[..m_val].to_vec();
    let test_rows = order[m_val..held].to_vec();
    let mut train_rows = order[held..].to_vec();
    train_rows.sort_unstable();

    let part = |rows: &[usize]| -> Result<DataMatrix> {
        if rows.is_empty() {
            return invalid("validation and test sets need at least one row each");
        }
        data.select(rows)
    };
    Ok(QuerySplit {
        train: part(&train_rows)?,
        validation: part(&validation_rows)?,
        test: part(&test_rows)?,
        train_rows,
        validation_rows,
        test_rows,
    })
}

/// Squared Euclidean distance. Both slices must have equal length.
#[inline]
pub fn squared_distance(u: &[f32], v: &[f32]) -> f32 {
    debug_assert_eq!(u.len(), v.len());
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let uc = u.chunks_exact(LANES);
    let vc = v.chunks_exact(LANES);
    let (ur, vr) = (uc.remainder(), vc.remainder());
    for (a, b) in uc.zip(vc) {
        for i in 0..LANES {
            let t = a[i] - b[i];
            acc[i] += t * t;
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for (a, b) in ur.iter().zip(vr) {
        let t = a - b;
        sum += t * t;
    }
    sum
}

pub fn euclidean_distance(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return invalid(format!("dimension mismatch: {} vs {}", u.len(), v.len()));
    }
    Ok(squared_distance(u, v).sqrt())
}

#[inline]
fn by_distance_then_index(a: &(f32, u32), b: &(f32, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` smallest `(distance, index)` pairs, sorted ascending.
pub(crate) fn take_k_smallest(mut scored: Vec<(f32, u32)>, k: usize) -> Vec<u32> {
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, by_distance_then_index);
        scored.truncate(k);
    } else if k == 0 {
        scored.clear();
    }
    scored.sort_unstable_by(by_distance_then_index);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// The `k` candidates nearest to `q`, ascending by distance then index.
/// Returns fewer than `k` when fewer candidates are given.
pub fn nearest_among(data: &DataMatrix, q: &[f32], candidates: &[u32], k: usize) -> Vec<u32> {
    let scored: Vec<(f32, u32)> = candidates
        .iter()
        .map(|&i| (squared_distance(q, data.row(i as usize)), i))
        .collect();
    take_k_smallest(scored, k)
}

/// Exact k-NN by a linear scan, ties broken by ascending index.
pub fn exact_knn(data: &DataMatrix, q: &[f32], k: usize) -> Result<Vec<u32>> {
    if k == 0 || k > data.n() {
        return invalid(format!("k = {k} must lie in [1, n = {}]", data.n()));
    }
    if q.len() != data.d() {
        return invalid(format!("query has {} dims, corpus has {}", q.len(), data.d()));
    }
    let scored: Vec<(f32, u32)> = data
        .rows()
        .enumerate()
        .map(|(i, row)| (squared_distance(q, row), i as u32))
        .collect();
    Ok(take_k_smallest(scored, k))
}

/// Exact neighbor lists for a batch of queries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: usize,
    pub rows: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn compute(data: &DataMatrix, queries: &DataMatrix, k: usize) -> Result<Self> {
        if queries.d() != data.d() {
            return invalid(format!(
                "queries have {} dims, corpus has {}",
                queries.d(),
                data.d()
            ));
        }
        let rows = (0..queries.n())
            .into_par_iter()
            .map(|i| exact_knn(data, queries.row(i), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<u32>().map_err(|_| {
                        Error::Load(format!("line {}: bad index '{}'", lineno + 1, f.trim()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::Load(format!(
                "line {} has {} indices, expected {k}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Ok(Self { k, rows })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

/// Fraction of `truth` found in `returned`. Missing results count as misses.
pub fn recall(returned: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth.iter().filter(|t| returned.contains(t)).count();
    hits as f64 / truth.len() as f64
}

/// Outcome of evaluating a query batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEvaluation {
    /// Mean recall over the batch.
    pub recall: f64,
    /// Mean seconds per query.
    pub elapsed: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn fvecs_bytes(rows: &[&[f32]]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in rows {
            out.extend_from_slice(&(r.len() as u32).to_le_bytes());
            for v in *r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn fvecs_two_records() {
        let bytes = fvecs_bytes(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let m = read_vectors(Cursor::new(bytes), VectorFormat::Fvecs).unwrap();
        assert_eq!((m.n(), m.d()), (2, 3));
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn fvecs_inconsistent_dims() {
        let bytes = fvecs_bytes(&[&[1.0, 2.0, 3.0], &[4.0, 5.0]]);
        let err = read_vectors(Cursor::new(bytes), VectorFormat::Fvecs).unwrap_err();
        assert!(matches!(err, Error::Load(_)), "{err}");
    }

    #[test]
    fn fvecs_truncated_record() {
        let mut bytes = fvecs_bytes(&[&[1.0, 2.0, 3.0]]);
        bytes.truncate(bytes.len() - 2);
        assert!(read_vectors(Cursor::new(bytes), VectorFormat::Fvecs).is_err());
    }

    #[test]
    fn raw_twelve_floats() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        for i in 0..12 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let m = read_vectors(Cursor::new(bytes), VectorFormat::RawF32).unwrap();
        assert_eq!((m.n(), m.d()), (3, 4));
        assert_eq!(m.row(2)[3], 11.0);
    }

    #[test]
    fn raw_roundtrip_is_bit_exact() {
        let m = DataMatrix::new(vec![0.1, -3.5e-7, 1e30, 7.0, f32::MIN_POSITIVE, -0.0], 3).unwrap();
        let mut buf = Vec::new();
        write_vectors(&m, &mut buf, VectorFormat::RawF32).unwrap();
        let back = read_vectors(Cursor::new(buf), VectorFormat::RawF32).unwrap();
        let bits = |m: &DataMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
    }

    #[test]
    fn csv_rejects_inf() {
        let text = "1,2,3\n4,inf,6\n";
        let err = read_vectors(Cursor::new(text), VectorFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn csv_ragged_rows() {
        let text = "1,2,3\n4,5\n";
        assert!(read_vectors(Cursor::new(text), VectorFormat::Csv).is_err());
    }

    #[test]
    fn new_rejects_nan() {
        assert!(DataMatrix::new(vec![1.0, f32::NAN], 2).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data = DataMatrix::new((0..200).map(|i| i as f32).collect(), 2).unwrap();
        let a = split_queries(&data, 10, 10, 7).unwrap();
        assert_eq!((a.train.n(), a.validation.n(), a.test.n()), (80, 10, 10));
        let b = split_queries(&data, 10, 10, 7).unwrap();
        assert_eq!(a.validation_rows, b.validation_rows);
        assert_eq!(a.test_rows, b.test_rows);
        assert_eq!(a.train, b.train);

        let mut all: Vec<usize> = a
            .train_rows
            .iter()
            .chain(&a.validation_rows)
            .chain(&a.test_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_too_many_queries() {
        let data = DataMatrix::new(vec![0.0; 100], 1).unwrap();
        assert!(matches!(
            split_queries(&data, 60, 60, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn distance_basics() {
        assert_eq!(euclidean_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn distance_matches_naive_loop() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f32> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f32> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut s = 0.0f64;
            for i in 0..16 {
                let t = f64::from(u[i]) - f64::from(v[i]);
                s += t * t;
            }
            let oracle = s.sqrt();
            let got = f64::from(euclidean_distance(&u, &v).unwrap());
            assert!((got - oracle).abs() <= 1e-5 * oracle.max(1e-12), "{got} vs {oracle}");
        }
    }

    #[test]
    fn knn_one_dimensional() {
        let data = DataMatrix::new(vec![0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(exact_knn(&data, &[0.9], 2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn knn_self_match() {
        let data = DataMatrix::new((0..30).map(|i| (i * i) as f32).collect(), 3).unwrap();
        for j in 0..data.n() {
            assert_eq!(exact_knn(&data, data.row(j), 1).unwrap(), vec![j as u32]);
        }
    }

    #[test]
    fn knn_ties_by_index() {
        let data = DataMatrix::new(vec![1.0, -1.0, 1.0, -1.0], 1).unwrap();
        assert_eq!(exact_knn(&data, &[0.0], 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn knn_k_out_of_range() {
        let data = DataMatrix::new(vec![0.0, 1.0], 1).unwrap();
        assert!(exact_knn(&data, &[0.0], 0).is_err());
        assert!(exact_knn(&data, &[0.0], 3).is_err());
    }

    #[test]
    fn knn_matches_full_sort() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f32> = (0..200 * 8).map(|_| rng.random::<f32>()).collect();
        let data = DataMatrix::new(values, 8).unwrap();
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.random::<f32>()).collect();
            let mut all: Vec<(f64, u32)> = (0..data.n())
                .map(|i| {
                    let s: f64 = data
                        .row(i)
                        .iter()
                        .zip(&q)
                        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                        .sum();
                    (s, i as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let oracle: Vec<u32> = all[..10].iter().map(|p| p.1).collect();
            assert_eq!(exact_knn(&data, &q, 10).unwrap(), oracle);
        }
    }

    #[test]
    fn ground_truth_csv_roundtrip() {
        let gt = GroundTruth {
            k: 3,
            rows: vec![vec![1, 2, 3], vec![9, 0, 4]],
        };
        let mut buf = Vec::new();
        gt.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1,2,3\n9,0,4\n");
        assert_eq!(GroundTruth::read_csv(Cursor::new(buf)).unwrap(), gt);
    }

    #[test]
    fn recall_counts_missing_as_misses() {
        assert_eq!(recall(&[1, 2], &[1, 2, 3, 4]), 0.5);
        assert_eq!(recall(&[], &[1]), 0.0);
        assert_eq!(recall(&[4, 3, 2, 1], &[1, 2, 3, 4]), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn knn_prefix_property(seed in 0u64..500, k in 1usize..20) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..40 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data = DataMatrix::new(values, 3).unwrap();
            let q = [rng.random_range(-1.0f32..1.0), 0.0, 0.5];
            let a = exact_knn(&data, &q, k).unwrap();
            let b = exact_knn(&data, &q, k + 1).unwrap();
            proptest::prop_assert_eq!(&a[..], &b[..k]);
        }
    }
}
