use super::record::{Metric, TrajectoryRecord};
use crate::error::{Error, Result};

/// Nearest-rank quantile: the `ceil(q n)`-th smallest value.
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter { name: "q", reason: format!("must lie in (0, 1), got {q}") });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn median(values: &[f64]) -> Result<f64> {
    nearest_rank(values, 0.5)
}

/// Per-`(r, k)` quantile of `metric` across seeds.
pub fn aggregate_quantile(records: &[TrajectoryRecord], metric: Metric, q: f64) -> Result<Vec<f64>> {
    if records.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 records, got {}", records.len())));
    }
    let shape: Vec<(usize, usize)> = records[0].entries.iter().map(|e| (e.round, e.step)).collect();
    for r in &records[1..] {
        if r.entries.len() != shape.len() || r.entries.iter().zip(&shape).any(|(e, s)| (e.round, e.step) != *s) {
            return Err(Error::Shape("records cover different (round, step) grids".into()));
        }
    }
    (0..shape.len())
        .map(|i| {
            let column: Vec<f64> = records.iter().map(|r| metric.of(&r.entries[i])).collect();
            nearest_rank(&column, q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(&[3.0, 1.0], 0.5).unwrap(), 1.0);
        assert_eq!(nearest_rank(&[2.0, 2.0, 2.0], 0.9).unwrap(), 2.0);
        let values: Vec<f64> = (0..100).rev().map(|i| i as f64 * 0.5).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(nearest_rank(&values, 0.95).unwrap(), sorted[94]);
        assert_eq!(nearest_rank(&values, 0.5).unwrap(), sorted[49]);
        assert!(nearest_rank(&values, 1.0).is_err());
        assert!(nearest_rank(&[], 0.5).is_err());
    }
}
