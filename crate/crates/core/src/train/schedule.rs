//! Piecewise-constant learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_LR: f64 = 3e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSegment {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LrSchedule(pub Vec<LrSegment>);

impl LrSchedule {
    /// Three segments covering 60 %, 30 % and 10 % of `total_steps` at
    /// 3e-4, 3e-5 and 3e-6.
    pub fn scaled(total_steps: usize) -> Self {
        let first = total_steps * 6 / 10;
        let second = total_steps * 3 / 10;
        Self(vec![
            LrSegment { steps: first, lr: BASE_LR },
            LrSegment { steps: second, lr: 3e-5 },
            LrSegment { steps: total_steps - first - second, lr: 3e-6 },
        ])
    }

    pub fn constant(lr: f64) -> Self {
        Self(vec![LrSegment { steps: 1, lr }])
    }

    /// Rates must be finite, non-negative and non-increasing.
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("learning-rate schedule is empty".into()));
        }
        for (i, seg) in self.0.iter().enumerate() {
            if !(seg.lr >= 0.0 && seg.lr.is_finite()) {
                return Err(Error::Config(format!("segment {i}: learning rate {} must be finite and >= 0", seg.lr)));
            }
            if i > 0 && seg.lr > self.0[i - 1].lr {
                return Err(Error::Config(format!("segment {i}: learning rate increases to {}", seg.lr)));
            }
        }
        Ok(())
    }

    /// Rate at zero-based `step`; the last segment extends indefinitely.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut end = 0;
        for seg in &self.0 {
            end += seg.steps;
            if step < end {
                return seg.lr;
            }
        }
        self.0.last().map_or(0.0, |s| s.lr)
    }

    /// Parses `steps:lr,steps:lr,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let segments = text
            .split(',')
            .map(|part| {
                let (steps, lr) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("lr segment {part:?}: expected STEPS:LR")))?;
                Ok(LrSegment {
                    steps: steps.trim().parse().map_err(|_| Error::Config(format!("lr segment {part:?}: bad step count")))?,
                    lr: lr.trim().parse().map_err(|_| Error::Config(format!("lr segment {part:?}: bad rate")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let schedule = Self(segments);
        schedule.validate()?;
        Ok(schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_schedule_for_a_thousand_steps() {
        let s = LrSchedule::scaled(1000);
        assert_eq!(s.0.iter().map(|g| g.steps).collect::<Vec<_>>(), [600, 300, 100]);
        assert_eq!(s.lr_at(0), 3e-4);
        assert_eq!(s.lr_at(599), 3e-4);
        assert_eq!(s.lr_at(600), 3e-5);
        assert_eq!(s.lr_at(999), 3e-6);
        assert_eq!(s.lr_at(5000), 3e-6);
        s.validate().unwrap();
    }

    #[test]
    fn segments_cover_odd_totals() {
        for n in [0, 1, 7, 13, 999] {
            assert_eq!(LrSchedule::scaled(n).0.iter().map(|g| g.steps).sum::<usize>(), n);
        }
    }

    #[test]
    fn parse_and_validate() {
        let s = LrSchedule::parse("10:0.1, 5:0.01").unwrap();
        assert_eq!(s.lr_at(12), 0.01);
        assert!(LrSchedule::parse("10:0.01,5:0.1").is_err());
        assert!(LrSchedule::parse("10:-1").is_err());
        assert!(LrSchedule::parse("ten:1").is_err());
        assert!(LrSchedule(vec![]).validate().is_err());
        LrSchedule::constant(0.0).validate().unwrap();
    }
}
