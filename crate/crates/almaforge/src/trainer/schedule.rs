//! Learning-rate schedule: linear warmup, then a decay that reaches
//! exactly zero at the final step.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    /// peak · sqrt(w/s) · (S−s)/(S−w): inverse square root shaped, pulled
    /// linearly to zero so lr(S) = 0 exactly.
    #[default]
    InvSqrtToZero,
    /// peak · sqrt(w/s), never reaching zero.
    InvSqrt,
    /// peak · (S−s)/(S−w).
    LinearToZero,
}

#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub kind: DecayKind,
}

impl Schedule {
    pub fn new(peak: f64, total_steps: usize, warmup_ratio: f64, kind: DecayKind) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::Config(format!(
                "schedule needs at least 2 steps, got {total_steps}"
            )));
        }
        if !(warmup_ratio > 0.0 && warmup_ratio < 1.0) {
            return Err(Error::Config(format!(
                "warmup_ratio must be in (0, 1), got {warmup_ratio}"
            )));
        }
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Config(format!("peak_lr must be positive, got {peak}")));
        }
        let warmup_steps = ((warmup_ratio * total_steps as f64).round() as usize).max(1);
        if warmup_steps >= total_steps {
            return Err(Error::Config(format!(
                "warmup of {warmup_steps} steps swallows the whole run of {total_steps}"
            )));
        }
        Ok(Self {
            peak,
            total_steps,
            warmup_steps,
            kind,
        })
    }

    /// Learning rate at 1-based step `s`, 0 ≤ s ≤ total. lr(0) = 0,
    /// lr(warmup) = peak exactly, and the to-zero decays give lr(total) = 0
    /// exactly.
    pub fn lr_at(&self, step: usize) -> f64 {
        debug_assert!(step <= self.total_steps);
        let s = step as f64;
        let w = self.warmup_steps as f64;
        let total = self.total_steps as f64;
        if step <= self.warmup_steps {
            return self.peak * s / w;
        }
        match self.kind {
            DecayKind::InvSqrtToZero => self.peak * (w / s).sqrt() * (total - s) / (total - w),
            DecayKind::InvSqrt => self.peak * (w / s).sqrt(),
            DecayKind::LinearToZero => self.peak * (total - s) / (total - w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(peak: f64, total: usize, ratio: f64, kind: DecayKind) -> Schedule {
        Schedule::new(peak, total, ratio, kind).unwrap()
    }

    #[test]
    fn warmup_is_linear_and_hits_peak_exactly() {
        let s = sched(1.0, 1000, 0.01, DecayKind::InvSqrtToZero);
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(5), 0.5);
        assert_eq!(s.lr_at(10), 1.0);
    }

    #[test]
    fn default_decay_matches_the_closed_form() {
        // w=10, S=1010, s=40: sqrt(10/40) · 970/1000 = 0.485.
        let s = Schedule {
            peak: 1.0,
            total_steps: 1010,
            warmup_steps: 10,
            kind: DecayKind::InvSqrtToZero,
        };
        assert!((s.lr_at(40) - 0.485).abs() < 1e-12);
    }

    #[test]
    fn to_zero_decays_end_at_exactly_zero() {
        for kind in [DecayKind::InvSqrtToZero, DecayKind::LinearToZero] {
            let s = sched(2e-5, 977, 0.01, kind);
            assert_eq!(s.lr_at(977), 0.0);
            assert!(s.lr_at(976) > 0.0);
        }
        let s = sched(2e-5, 977, 0.01, DecayKind::InvSqrt);
        assert!(s.lr_at(977) > 0.0);
    }

    #[test]
    fn decay_is_continuous_at_the_warmup_boundary() {
        for kind in [
            DecayKind::InvSqrtToZero,
            DecayKind::InvSqrt,
            DecayKind::LinearToZero,
        ] {
            let s = sched(3e-4, 500, 0.02, kind);
            let w = s.warmup_steps;
            let before = s.lr_at(w);
            let after = s.lr_at(w + 1);
            assert!((before - s.peak).abs() < 1e-18);
            assert!(before - after < s.peak * 0.5 / w as f64 + 1e-12);
        }
    }

    #[test]
    fn decay_is_monotone_after_warmup() {
        for kind in [
            DecayKind::InvSqrtToZero,
            DecayKind::InvSqrt,
            DecayKind::LinearToZero,
        ] {
            let s = sched(1.0, 300, 0.05, kind);
            let mut prev = f64::INFINITY;
            for step in s.warmup_steps..=s.total_steps {
                let lr = s.lr_at(step);
                assert!(lr <= prev + 1e-15, "{kind:?} rose at step {step}");
                prev = lr;
            }
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(Schedule::new(1.0, 1, 0.01, DecayKind::InvSqrt).is_err());
        assert!(Schedule::new(1.0, 100, 0.0, DecayKind::InvSqrt).is_err());
        assert!(Schedule::new(1.0, 100, 1.0, DecayKind::InvSqrt).is_err());
        assert!(Schedule::new(0.0, 100, 0.01, DecayKind::InvSqrt).is_err());
        // Warmup rounds up to cover everything.
        assert!(Schedule::new(1.0, 2, 0.9, DecayKind::InvSqrt).is_err());
    }
}
