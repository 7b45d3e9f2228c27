use crate::error::{HtdsError, Result};
use crate::metrics::micro_f1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid { lo: 0.05, hi: 0.95, step: 0.01 }
    }
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || self.hi < self.lo {
            return Err(HtdsError::Config(format!("empty threshold grid {self:?}")));
        }
        Ok(())
    }

    /// Ascending grid points, rounded to 1e-9 to keep them free of drift.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9).collect()
    }
}

/// Single global threshold maximising micro-F1; ties go to the smallest.
pub fn optimize_threshold(probs: &[Vec<f64>], gold: &[Vec<bool>], grid: &ThresholdGrid) -> Result<f64> {
    grid.validate()?;
    if probs.is_empty() {
        return Err(HtdsError::Data("threshold search needs a non-empty dev set".into()));
    }
    let mut best_t = f64::NAN;
    let mut best_f1 = f64::NEG_INFINITY;
    for t in grid.points() {
        let f1 = micro_f1(probs, gold, t);
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    Ok(best_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_91_points() {
        let pts = ThresholdGrid::default().points();
        assert_eq!(pts.len(), 91);
        assert_eq!(pts[0], 0.05);
        assert_eq!(pts[90], 0.95);
        assert_eq!(pts[45], 0.5);
    }

    #[test]
    fn separable_picks_smallest_in_gap() {
        let probs = vec![vec![0.8, 0.3], vec![0.2, 0.7]];
        let gold = vec![vec![true, false], vec![false, true]];
        assert_eq!(optimize_threshold(&probs, &gold, &ThresholdGrid::default()).unwrap(), 0.31);
    }

    #[test]
    fn all_negative_returns_lowest_point() {
        let probs = vec![vec![0.8, 0.3], vec![0.2, 0.7]];
        let gold = vec![vec![false, false], vec![false, false]];
        assert_eq!(optimize_threshold(&probs, &gold, &ThresholdGrid::default()).unwrap(), 0.05);
    }

    #[test]
    fn empty_dev_rejected() {
        assert!(optimize_threshold(&[], &[], &ThresholdGrid::default()).is_err());
    }
}
