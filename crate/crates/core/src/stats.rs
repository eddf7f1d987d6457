//! Order statistics shared by teacher-quality records and report metrics.

/// Median with the even-count convention of averaging the two middles.
/// Returns None for an empty slice. Panics on NaN: metrics pipelines must
/// never produce one.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in metric values"));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
