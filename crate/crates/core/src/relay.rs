//! The two-threshold non-ideal relay (lazy switch).
//!
//! A relay with thresholds `alpha1 < alpha2` switches on when its input
//! reaches `alpha2` from below and off when the input reaches `alpha1` from
//! above; in between it keeps its previous state. Inputs are handled as
//! piecewise-monotone paths, so only segment endpoints matter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when matching a segment start against the stored input.
const INPUT_MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    alpha1: f64,
    alpha2: f64,
}

impl ThresholdPair {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        let ok = alpha1.is_finite()
            && alpha2.is_finite()
            && 0.0 <= alpha1
            && alpha1 < alpha2
            && alpha2 <= 1.0;
        if !ok {
            return Err(Error::InvalidThresholds { alpha1, alpha2 });
        }
        Ok(Self { alpha1, alpha2 })
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    /// The state forced by an input value, if any.
    pub fn forced_state(&self, input: f64) -> Option<bool> {
        if input >= self.alpha2 {
            Some(true)
        } else if input <= self.alpha1 {
            Some(false)
        } else {
            None
        }
    }
}

/// One relay together with the input value its state is compatible with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayState {
    thresholds: ThresholdPair,
    on: bool,
    input: f64,
}

impl RelayState {
    /// Initializes a relay at `input`. Between the thresholds the requested
    /// state is used (default off); outside them the forced state applies and
    /// a contradicting request is rejected.
    pub fn init(thresholds: ThresholdPair, input: f64, requested: Option<bool>) -> Result<Self> {
        check_unit(input)?;
        let on = match (thresholds.forced_state(input), requested) {
            (Some(forced), Some(req)) if forced != req => {
                return Err(Error::IncompatibleInitialState {
                    alpha1: thresholds.alpha1,
                    alpha2: thresholds.alpha2,
                    input,
                    requested: req,
                })
            }
            (Some(forced), _) => forced,
            (None, req) => req.unwrap_or(false),
        };
        Ok(Self {
            thresholds,
            on,
            input,
        })
    }

    pub fn thresholds(&self) -> ThresholdPair {
        self.thresholds
    }

    pub fn is_on(&self) -> bool {
        self.on
    }

    pub fn input(&self) -> f64 {
        self.input
    }

    /// Advances the relay along the monotone segment `from -> to`.
    pub fn step(&self, from: f64, to: f64) -> Result<Self> {
        if (from - self.input).abs() > INPUT_MATCH_TOL {
            return Err(Error::ContractViolation(format!(
                "segment starts at {from} but relay input is {}",
                self.input
            )));
        }
        check_unit(to)?;
        Ok(self.advance(to))
    }

    /// Moves the input monotonically from the current value to `to`.
    pub fn advance(&self, to: f64) -> Self {
        let mut on = self.on;
        if to > self.input {
            if to >= self.thresholds.alpha2 {
                on = true;
            }
        } else if to < self.input && to <= self.thresholds.alpha1 {
            on = false;
        }
        Self {
            thresholds: self.thresholds,
            on,
            input: to,
        }
    }

    /// Feeds a sequence of turning values and returns the final state.
    pub fn follow(&self, program: &[f64]) -> Result<Self> {
        program.iter().try_fold(*self, |r, &v| {
            check_unit(v)?;
            Ok(r.advance(v))
        })
    }

    pub fn is_compatible(&self) -> bool {
        match self.thresholds.forced_state(self.input) {
            Some(forced) => forced == self.on,
            None => true,
        }
    }
}

fn check_unit(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::ContractViolation(format!(
            "input value {v} outside [0, 1]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> ThresholdPair {
        ThresholdPair::new(0.2, 0.5).unwrap()
    }

    #[test]
    fn init_rejects_contradicting_request() {
        let err = RelayState::init(pair(), 0.1, Some(true)).unwrap_err();
        assert!(matches!(err, Error::IncompatibleInitialState { .. }));
    }

    #[test]
    fn init_between_thresholds_uses_request() {
        let r = RelayState::init(pair(), 0.3, Some(true)).unwrap();
        assert!(r.is_on());
    }

    #[test]
    fn init_above_upper_threshold_is_forced_on() {
        let r = RelayState::init(pair(), 0.7, None).unwrap();
        assert!(r.is_on());
    }

    #[test]
    fn invalid_thresholds() {
        assert!(ThresholdPair::new(0.5, 0.5).is_err());
        assert!(ThresholdPair::new(0.6, 0.5).is_err());
        assert!(ThresholdPair::new(-0.1, 0.5).is_err());
        assert!(ThresholdPair::new(0.1, 1.5).is_err());
    }

    #[test]
    fn rising_past_upper_threshold_switches_on() {
        let r = RelayState::init(pair(), 0.0, None).unwrap();
        assert!(r.step(0.0, 1.0).unwrap().is_on());
    }

    #[test]
    fn staying_between_thresholds_keeps_state() {
        let r = RelayState::init(pair(), 0.3, Some(false)).unwrap();
        assert!(!r.step(0.3, 0.45).unwrap().is_on());
    }

    #[test]
    fn falling_past_lower_threshold_switches_off() {
        let r = RelayState::init(pair(), 0.6, None).unwrap();
        assert!(!r.step(0.6, 0.1).unwrap().is_on());
    }

    #[test]
    fn reaching_threshold_exactly_switches() {
        let r = RelayState::init(pair(), 0.3, Some(false)).unwrap();
        assert!(r.step(0.3, 0.5).unwrap().is_on());
        let r = RelayState::init(pair(), 0.3, Some(true)).unwrap();
        assert!(!r.step(0.3, 0.2).unwrap().is_on());
    }

    #[test]
    fn degenerate_segment_is_noop() {
        let r = RelayState::init(pair(), 0.3, Some(true)).unwrap();
        assert_eq!(r.step(0.3, 0.3).unwrap(), r);
    }

    #[test]
    fn mismatched_segment_start_is_rejected() {
        let r = RelayState::init(pair(), 0.3, None).unwrap();
        assert!(matches!(
            r.step(0.4, 0.6),
            Err(Error::ContractViolation(_))
        ));
    }

    fn program() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 1..20)
    }

    proptest! {
        #[test]
        fn compatibility_after_every_step(a1 in 0.0f64..0.9, w in 0.01f64..0.5, prog in program()) {
            let t = ThresholdPair::new(a1, (a1 + w).min(1.0)).unwrap();
            let mut r = RelayState::init(t, 0.0, None).unwrap();
            for &v in &prog {
                r = r.advance(v);
                prop_assert!(r.is_compatible());
            }
        }

        #[test]
        fn semigroup_and_rate_independence(a1 in 0.0f64..0.9, w in 0.01f64..0.5, prog in program(), split in 0usize..20, sub in 1usize..6) {
            let t = ThresholdPair::new(a1, (a1 + w).min(1.0)).unwrap();
            let r0 = RelayState::init(t, 0.0, None).unwrap();
            let whole = r0.follow(&prog).unwrap();
            let cut = split.min(prog.len());
            let halves = r0.follow(&prog[..cut]).unwrap().follow(&prog[cut..]).unwrap();
            prop_assert_eq!(whole, halves);

            // Resample every monotone segment with intermediate points.
            let mut fine = Vec::new();
            let mut prev = 0.0;
            for &v in &prog {
                for j in 1..=sub {
                    fine.push(prev + (v - prev) * j as f64 / sub as f64);
                }
                prev = v;
            }
            let resampled = r0.follow(&fine).unwrap();
            prop_assert_eq!(whole.is_on(), resampled.is_on());
        }

        #[test]
        fn switches_bounded_by_segments(a1 in 0.0f64..0.9, w in 0.01f64..0.5, prog in program()) {
            let t = ThresholdPair::new(a1, (a1 + w).min(1.0)).unwrap();
            let mut r = RelayState::init(t, 0.0, None).unwrap();
            let mut switches = 0;
            for &v in &prog {
                let next = r.advance(v);
                if next.is_on() != r.is_on() {
                    switches += 1;
                }
                r = next;
            }
            prop_assert!(switches <= prog.len());
        }
    }
}
