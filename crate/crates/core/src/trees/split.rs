use std::cmp::Ordering;

/// Result of splitting a sequence of projections at its median.
#[derive(Clone, Debug, PartialEq)]
pub struct MedianSplit {
    pub cut: f32,
    /// Positions (into the input) of the `⌈size/2⌉` smallest projections.
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[inline]
pub(crate) fn by_projection_then_index(a: &(f32, u32), b: &(f32, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Reorders `pairs` so that the `⌈len/2⌉` smallest under (projection,
/// index) come first, and returns the cut: the largest projection among
/// them. Returns `None` without touching order semantics when every
/// projection is equal.
pub(crate) fn partition_at_median(pairs: &mut [(f32, u32)]) -> Option<f32> {
    if pairs.len() < 2 {
        return None;
    }
    let first = pairs[0].0;
    if pairs.iter().all(|p| p.0 == first) {
        return None;
    }
    let left = pairs.len().div_ceil(2);
    pairs.select_nth_unstable_by(left - 1, by_projection_then_index);
    Some(pairs[left - 1].0)
}

/// Splits `projections` at the `⌈size/2⌉`-th smallest value, ties broken by
/// position so the left side always receives exactly `⌈size/2⌉` points.
/// `None` when fewer than two values are given or all values are equal.
pub fn median_split(projections: &[f32]) -> Option<MedianSplit> {
    let mut pairs: Vec<(f32, u32)> = projections
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i as u32))
        .collect();
    let cut = partition_at_median(&mut pairs)?;
    let left_len = pairs.len().div_ceil(2);
    let mut left: Vec<usize> = pairs[..left_len].iter().map(|p| p.1 as usize).collect();
    let mut right: Vec<usize> = pairs[left_len..].iter().map(|p| p.1 as usize).collect();
    left.sort_unstable();
    right.sort_unstable();
    Some(MedianSplit { cut, left, right })
}
