use std::f64::consts::PI;

use crate::error::{HtdsError, Result};

/// Three-phase one-cycle learning rate: warm up from `peak/div_start` to
/// `peak`, anneal back to `peak/div_start`, then decay to `peak/div_final`.
/// Each phase is a half-cosine.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub peak: f64,
    pub div_start: f64,
    pub div_final: f64,
    /// Cumulative phase ends as fractional steps.
    bounds: [f64; 3],
}

impl LrSchedule {
    pub fn new(total_steps: usize, peak: f64, phase_fracs: [f64; 3], div_start: f64, div_final: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(HtdsError::Config("schedule needs at least one step".into()));
        }
        if phase_fracs.iter().any(|&f| f < 0.0) || (phase_fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HtdsError::Config(format!("phase fractions {phase_fracs:?} must be non-negative and sum to 1")));
        }
        if !(peak > 0.0 && div_start > 0.0 && div_final > 0.0) {
            return Err(HtdsError::Config("peak learning rate and divisors must be positive".into()));
        }
        let t = total_steps as f64;
        let b1 = phase_fracs[0] * t;
        let b2 = (phase_fracs[0] + phase_fracs[1]) * t;
        Ok(LrSchedule { total_steps, peak, div_start, div_final, bounds: [b1, b2, t] })
    }

    pub fn phase_bounds(&self) -> [f64; 3] {
        self.bounds
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(HtdsError::Config(format!("step {step} beyond schedule of {} steps", self.total_steps)));
        }
        let s = step as f64;
        let low = self.peak / self.div_start;
        let phases = [(0.0, self.bounds[0], low, self.peak), (self.bounds[0], self.bounds[1], self.peak, low), (self.bounds[1], self.bounds[2], low, self.peak / self.div_final)];
        for (i, &(from, to, start, end)) in phases.iter().enumerate() {
            let last = i == phases.len() - 1;
            if s <= to || last {
                if to <= from {
                    if last {
                        return Ok(end);
                    }
                    continue;
                }
                let u = ((s - from) / (to - from)).clamp(0.0, 1.0);
                return Ok(cosine(start, end, u));
            }
        }
        unreachable!("last phase always returns")
    }
}

fn cosine(start: f64, end: f64, u: f64) -> f64 {
    if u == 1.0 {
        return end;
    }
    end + (start - end) * (1.0 + (PI * u).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(total: usize) -> LrSchedule {
        LrSchedule::new(total, 5e-5, [0.3, 0.3, 0.4], 25.0, 1000.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn anchors() {
        let s = sched(1000);
        assert!(rel(s.lr(0).unwrap(), 2.0e-6) < 1e-12);
        assert!(rel(s.lr(300).unwrap(), 5e-5) < 1e-12);
        assert!(rel(s.lr(600).unwrap(), 2.0e-6) < 1e-12);
        assert!(rel(s.lr(1000).unwrap(), 5e-8) < 1e-12);
        assert!(rel(s.lr(150).unwrap(), 2.6e-5) < 1e-12);
    }

    #[test]
    fn out_of_range_step() {
        assert!(sched(10).lr(11).is_err());
    }

    #[test]
    fn monotone_within_phases() {
        let s = sched(1000);
        let lrs: Vec<f64> = (0..=1000).map(|i| s.lr(i).unwrap()).collect();
        assert!(lrs[..=300].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[300..=600].windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[600..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(LrSchedule::new(10, 1.0, [0.5, 0.5, 0.5], 25.0, 1000.0).is_err());
    }
}
