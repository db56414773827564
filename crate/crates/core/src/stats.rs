//! Small order-statistic helpers shared by model fitting and aggregation.

/// Nearest-rank percentile of an ascending-sorted, non-empty slice.
///
/// `per_mille` is the percentile in thousandths (990 = p99, 999 = p99.9) so the
/// rank `ceil(per_mille · N / 1000)` is computed in exact integer arithmetic.
pub fn nearest_rank_sorted(sorted: &[f64], per_mille: u32) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!(per_mille <= 1000);
    let n = sorted.len() as u64;
    let rank = (u64::from(per_mille) * n).div_ceil(1000).max(1);
    sorted[(rank - 1) as usize]
}

/// Nearest-rank percentile of an unsorted slice (copies and sorts).
pub fn nearest_rank(values: &[f64], per_mille: u32) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    nearest_rank_sorted(&sorted, per_mille)
}
