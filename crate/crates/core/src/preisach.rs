//! Preisach operator with a reduced memory curve.
//!
//! The state of the relay continuum is stored as the alternating stack of
//! dominant input extrema `(M1, m1, M2, m2, ...)` plus the current input.
//! The ON region is `U_k {alpha2 <= M_k, alpha1 < m_k}`, where the current
//! input closes the last corner. Its mass is a telescoping sum of
//! corner-cumulative values, one term per corner.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};

/// Corners closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rising,
    Falling,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Rising => Direction::Falling,
            Direction::Falling => Direction::Rising,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Direction::Rising => 1.0,
            Direction::Falling => -1.0,
        }
    }
}

/// Reduced staircase state of the Preisach operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryCurve {
    extrema: Vec<f64>,
    current: f64,
}

impl Default for MemoryCurve {
    fn default() -> Self {
        Self::virgin()
    }
}

impl MemoryCurve {
    /// All relays off, input at zero.
    pub fn virgin() -> Self {
        Self {
            extrema: Vec::new(),
            current: 0.0,
        }
    }

    /// State reached by a single monotone rise from the virgin state.
    pub fn risen_to(v: f64) -> Result<Self> {
        let mut m = Self::virgin();
        m.apply_segment(0.0, v)?;
        Ok(m)
    }

    /// Builds a memory from recorded extrema `(M1, m1, M2, ...)` and the
    /// current input value.
    pub fn from_extrema(extrema: Vec<f64>, current: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidMemory(msg));
        if let Some(v) = extrema
            .iter()
            .chain(std::iter::once(&current))
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return bad(format!("value {v} outside [0, 1]"));
        }
        for (k, w) in extrema.windows(2).enumerate() {
            let ok = if k % 2 == 0 { w[0] > w[1] } else { w[0] < w[1] };
            if !ok {
                return bad(format!("extrema {} and {} do not alternate", w[0], w[1]));
            }
        }
        for k in 2..extrema.len() {
            let ok = if k % 2 == 0 {
                extrema[k] < extrema[k - 2]
            } else {
                extrema[k] > extrema[k - 2]
            };
            if !ok {
                return bad(format!(
                    "extremum {} is not dominated by {}",
                    extrema[k],
                    extrema[k - 2]
                ));
            }
        }
        if let Some(&m1) = extrema.first() {
            if m1 <= 0.0 {
                return bad("first maximum must be positive".into());
            }
        }
        let n = extrema.len();
        let (lo, hi) = if n == 0 {
            (0.0, 1.0)
        } else if n % 2 == 1 {
            (if n >= 2 { extrema[n - 2] } else { 0.0 }, extrema[n - 1])
        } else {
            (extrema[n - 1], extrema[n - 2])
        };
        if current < lo || current > hi {
            return bad(format!(
                "current value {current} is not between the last extrema [{lo}, {hi}]"
            ));
        }
        Ok(Self { extrema, current })
    }

    pub fn extrema(&self) -> &[f64] {
        &self.extrema
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn is_virgin(&self) -> bool {
        self.extrema.is_empty() && self.current == 0.0
    }

    /// Direction of the last input move.
    pub fn last_direction(&self) -> Direction {
        if self.extrema.len() % 2 == 0 {
            Direction::Rising
        } else {
            Direction::Falling
        }
    }

    /// Applies the monotone segment `from -> to`.
    pub fn apply_segment(&mut self, from: f64, to: f64) -> Result<()> {
        if (from - self.current).abs() > MERGE_TOL {
            return Err(Error::ContractViolation(format!(
                "segment starts at {from} but memory is at {}",
                self.current
            )));
        }
        if !(0.0..=1.0).contains(&to) {
            return Err(Error::ContractViolation(format!(
                "input value {to} outside [0, 1]"
            )));
        }
        self.move_to(to);
        Ok(())
    }

    /// Moves the input monotonically to `to`, wiping dominated corners.
    pub fn move_to(&mut self, to: f64) {
        let v = self.current;
        if to > v {
            turn(&mut self.extrema, v, Direction::Rising);
            while self.extrema.len() >= 2 && self.extrema[self.extrema.len() - 2] <= to + MERGE_TOL {
                self.extrema.truncate(self.extrema.len() - 2);
            }
        } else if to < v {
            turn(&mut self.extrema, v, Direction::Falling);
            loop {
                let n = self.extrema.len();
                if n == 0 {
                    break;
                }
                let below = if n >= 2 { self.extrema[n - 2] } else { 0.0 };
                if below >= to - MERGE_TOL {
                    self.extrema.truncate(n.saturating_sub(2));
                } else {
                    break;
                }
            }
        }
        self.current = to;
    }

    /// Mass of the ON region under `density`.
    pub fn on_mass(&self, density: &Density) -> f64 {
        HalfBranch::new(self, self.last_direction(), density).mass(density, self.current)
    }

    /// True if the stack is a valid alternating, dominated sequence around
    /// the current value.
    pub fn is_consistent(&self) -> bool {
        Self::from_extrema(self.extrema.clone(), self.current).is_ok()
    }
}

/// Prepares the stack for a move in `dir` starting at `v`: records `v` as a
/// turning point, or drops the top extremum if `v` sits on it.
fn turn(stack: &mut Vec<f64>, v: f64, dir: Direction) {
    let n = stack.len();
    let top_is_max = n % 2 == 1;
    match dir {
        Direction::Rising if top_is_max => {
            if v >= stack[n - 1] - MERGE_TOL {
                stack.pop();
            } else {
                stack.push(v);
            }
        }
        Direction::Falling if !top_is_max => {
            if n > 0 && v <= stack[n - 1] + MERGE_TOL {
                stack.pop();
            } else {
                stack.push(v);
            }
        }
        _ => {}
    }
}

/// One-directional branch: the ON mass after a hypothetical monotone move in
/// a fixed direction from an anchoring memory state.
#[derive(Debug, Clone, PartialEq)]
struct HalfBranch {
    direction: Direction,
    start: f64,
    maxima: Vec<f64>,
    minima: Vec<f64>,
    /// `prefix[k]` is the mass of the first `k` closed corners.
    prefix: Vec<f64>,
}

impl HalfBranch {
    fn new(memory: &MemoryCurve, direction: Direction, density: &Density) -> Self {
        let mut stack = memory.extrema.clone();
        turn(&mut stack, memory.current, direction);
        let maxima: Vec<f64> = stack.iter().step_by(2).copied().collect();
        let minima: Vec<f64> = stack.iter().skip(1).step_by(2).copied().collect();
        let mut prefix = Vec::with_capacity(minima.len() + 1);
        prefix.push(0.0);
        let mut prev_min = 0.0;
        for (k, &m) in minima.iter().enumerate() {
            let big = maxima[k];
            let c = density.corner_cumulative(m, big) - density.corner_cumulative(prev_min, big);
            prefix.push(prefix[k] + c);
            prev_min = m;
        }
        Self {
            direction,
            start: memory.current,
            maxima,
            minima,
            prefix,
        }
    }

    fn mass(&self, density: &Density, x: f64) -> f64 {
        match self.direction {
            Direction::Rising => {
                let j = self.maxima.partition_point(|&m| m > x).min(self.minima.len());
                let m_j = if j == 0 { 0.0 } else { self.minima[j - 1] };
                self.prefix[j] + density.corner_cumulative(x, x) - density.corner_cumulative(m_j, x)
            }
            Direction::Falling => {
                let j = self.minima.partition_point(|&m| m < x);
                let m_j = if j == 0 { 0.0 } else { self.minima[j - 1] };
                let Some(&top) = self.maxima.get(j) else {
                    return self.prefix[j];
                };
                self.prefix[j] + density.corner_cumulative(x, top) - density.corner_cumulative(m_j, top)
            }
        }
    }

    /// Corner values that a monotone move crosses, in order of crossing.
    fn corners_ahead(&self) -> Vec<f64> {
        match self.direction {
            Direction::Rising => self.maxima.iter().rev().copied().filter(|&m| m > self.start).collect(),
            Direction::Falling => self.minima.iter().rev().copied().filter(|&m| m < self.start).collect(),
        }
    }
}

/// A branch `R_r(I)` of the Preisach operator anchored at a memory state:
/// the output under a monotone input move from the anchor, rising for
/// `I >= anchor` and falling for `I <= anchor`.
#[derive(Debug, Clone)]
pub struct Branch {
    density: Arc<Density>,
    r0_nat: f64,
    delta: f64,
    memory: MemoryCurve,
    rising: HalfBranch,
    falling: HalfBranch,
}

impl Branch {
    pub fn new(density: Arc<Density>, r0_nat: f64, r0_int: f64, memory: MemoryCurve) -> Self {
        let rising = HalfBranch::new(&memory, Direction::Rising, &density);
        let falling = HalfBranch::new(&memory, Direction::Falling, &density);
        Self {
            density,
            r0_nat,
            delta: r0_nat - r0_int,
            memory,
            rising,
            falling,
        }
    }

    pub fn anchor(&self) -> f64 {
        self.memory.current
    }

    pub fn memory(&self) -> &MemoryCurve {
        &self.memory
    }

    pub fn density(&self) -> &Arc<Density> {
        &self.density
    }

    pub fn r0_nat(&self) -> f64 {
        self.r0_nat
    }

    pub fn r0_int(&self) -> f64 {
        self.r0_nat - self.delta
    }

    fn half(&self, direction: Direction) -> &HalfBranch {
        match direction {
            Direction::Rising => &self.rising,
            Direction::Falling => &self.falling,
        }
    }

    /// Output along the half-branch in `direction`, with no range check.
    pub fn value_in(&self, direction: Direction, x: f64) -> f64 {
        self.r0_nat - self.delta * self.half(direction).mass(&self.density, x)
    }

    /// Two-sided branch value.
    pub fn value(&self, x: f64) -> f64 {
        let dir = if x >= self.anchor() {
            Direction::Rising
        } else {
            Direction::Falling
        };
        self.value_in(dir, x)
    }

    /// `f(I) = I R(I)`.
    pub fn f(&self, x: f64) -> f64 {
        x * self.value(x)
    }

    /// Numerical derivative of the two-sided branch, one-sided at the anchor
    /// and at the ends of `[0, 1]`.
    pub fn derivative(&self, x: f64) -> f64 {
        let h = 1e-7;
        let a = self.anchor();
        let (lo, hi) = if x >= a && x - h < a {
            (x, x + h)
        } else if x < a && x + h > a {
            (x - h, x)
        } else {
            (x - h, x + h)
        };
        let (lo, hi) = (lo.max(0.0), hi.min(1.0));
        (self.value(hi) - self.value(lo)) / (hi - lo)
    }

    pub fn f_derivative(&self, x: f64) -> f64 {
        self.value(x) + x * self.derivative(x)
    }

    /// Inputs, ordered along `direction`, where the branch may kink or jump.
    pub fn breakpoints(&self, direction: Direction) -> Vec<f64> {
        let start = self.anchor();
        let mut pts = self.half(direction).corners_ahead();
        pts.extend(self.density.breakpoints().into_iter().filter(|&p| match direction {
            Direction::Rising => p > start,
            Direction::Falling => p < start,
        }));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if direction == Direction::Falling {
            pts.reverse();
        }
        pts
    }

    /// Breakpoints on both sides, ascending.
    pub fn all_breakpoints(&self) -> Vec<f64> {
        let mut pts = self.breakpoints(Direction::Falling);
        pts.push(self.anchor());
        pts.extend(self.breakpoints(Direction::Rising));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Continuous or discrete Preisach operator mapping infected density to the
/// basic reproduction number.
#[derive(Debug, Clone)]
pub struct PreisachOperator {
    density: Arc<Density>,
    r0_nat: f64,
    r0_int: f64,
    memory: MemoryCurve,
}

impl PreisachOperator {
    /// Operator in the virgin state. `r0_nat == r0_int` is accepted as the
    /// hysteresis-free limit.
    pub fn new(density: Arc<Density>, r0_nat: f64, r0_int: f64) -> Result<Self> {
        if !(r0_nat.is_finite() && r0_int.is_finite() && r0_int > 1.0 && r0_nat >= r0_int) {
            return Err(Error::InvalidHypotheses(format!(
                "need R0_nat >= R0_int > 1, got R0_nat = {r0_nat}, R0_int = {r0_int}"
            )));
        }
        Ok(Self {
            density,
            r0_nat,
            r0_int,
            memory: MemoryCurve::virgin(),
        })
    }

    pub fn with_memory(mut self, memory: MemoryCurve) -> Self {
        self.memory = memory;
        self
    }

    pub fn density(&self) -> &Arc<Density> {
        &self.density
    }

    pub fn r0_nat(&self) -> f64 {
        self.r0_nat
    }

    pub fn r0_int(&self) -> f64 {
        self.r0_int
    }

    pub fn delta(&self) -> f64 {
        self.r0_nat - self.r0_int
    }

    pub fn memory(&self) -> &MemoryCurve {
        &self.memory
    }

    pub fn current_input(&self) -> f64 {
        self.memory.current
    }

    pub fn apply_segment(&mut self, from: f64, to: f64) -> Result<()> {
        self.memory.apply_segment(from, to)
    }

    /// Feeds a sequence of turning values.
    pub fn follow(&mut self, program: &[f64]) -> Result<()> {
        for &v in program {
            let from = self.memory.current;
            self.memory.apply_segment(from, v)?;
        }
        Ok(())
    }

    pub fn output(&self) -> f64 {
        self.r0_nat - self.delta() * self.memory.on_mass(&self.density)
    }

    pub fn branch(&self) -> Branch {
        Branch::new(self.density.clone(), self.r0_nat, self.r0_int, self.memory.clone())
    }

    /// Output after a hypothetical monotone move to `x`; the operator is not
    /// modified.
    pub fn branch_value(&self, x: f64, direction: Direction) -> Result<f64> {
        let v = self.memory.current;
        let ok = match direction {
            Direction::Rising => x >= v - MERGE_TOL,
            Direction::Falling => x <= v + MERGE_TOL,
        };
        if !ok {
            return Err(Error::DirectionMismatch(format!(
                "cannot reach {x} from {v} by a {direction:?} move"
            )));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::ContractViolation(format!("input value {x} outside [0, 1]")));
        }
        let mut m = self.memory.clone();
        m.move_to(x);
        Ok(self.r0_nat - self.delta() * m.on_mass(&self.density))
    }

    pub fn branch_f(&self, x: f64, direction: Direction) -> Result<f64> {
        Ok(x * self.branch_value(x, direction)?)
    }

    /// Lipschitz constant `(R0_nat - R0_int) sup q`.
    pub fn lipschitz_q0(&self) -> f64 {
        lipschitz_q0(self.r0_nat, self.r0_int, self.density.sup_q())
    }
}

pub fn lipschitz_q0(r0_nat: f64, r0_int: f64, sup_q: f64) -> f64 {
    let delta = r0_nat - r0_int;
    if delta == 0.0 {
        0.0
    } else {
        delta * sup_q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensitySpec, AtomicRelay};
    use proptest::prelude::*;

    fn uniform_op() -> PreisachOperator {
        PreisachOperator::new(Arc::new(Density::uniform()), 2.0, 1.5).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rise_then_fall_records_one_maximum() {
        let mut m = MemoryCurve::virgin();
        m.apply_segment(0.0, 0.6).unwrap();
        m.apply_segment(0.6, 0.3).unwrap();
        assert_eq!(m.extrema(), &[0.6]);
        assert_eq!(m.current(), 0.3);
    }

    #[test]
    fn full_rise_leaves_empty_memory() {
        let mut m = MemoryCurve::virgin();
        m.apply_segment(0.0, 1.0).unwrap();
        assert!(m.extrema().is_empty());
        assert_eq!(m.current(), 1.0);
    }

    #[test]
    fn dominating_rise_wipes_corner_pair() {
        let mut m = MemoryCurve::from_extrema(vec![0.6], 0.3).unwrap();
        m.apply_segment(0.3, 0.7).unwrap();
        assert!(m.extrema().is_empty());
        assert_eq!(m.current(), 0.7);
    }

    #[test]
    fn fall_to_zero_restores_virgin_state() {
        let mut m = MemoryCurve::from_extrema(vec![0.8, 0.2, 0.6], 0.4).unwrap();
        m.move_to(0.0);
        assert!(m.is_virgin());
    }

    #[test]
    fn invalid_memories_are_rejected() {
        assert!(MemoryCurve::from_extrema(vec![0.6, 0.7], 0.65).is_err());
        assert!(MemoryCurve::from_extrema(vec![0.6, 0.2, 0.7], 0.5).is_err());
        assert!(MemoryCurve::from_extrema(vec![0.6, 0.3], 0.7).is_err());
        assert!(MemoryCurve::from_extrema(vec![0.6], 0.7).is_err());
        assert!(MemoryCurve::from_extrema(vec![0.8, 0.2, 0.6, 0.1], 0.3).is_err());
        assert!(MemoryCurve::from_extrema(vec![0.8, 0.2, 0.6, 0.3], 0.5).is_ok());
    }

    #[test]
    fn segment_start_must_match() {
        let mut m = MemoryCurve::virgin();
        assert!(matches!(
            m.apply_segment(0.2, 0.5),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn virgin_output_is_natural_value() {
        assert_eq!(uniform_op().output(), 2.0);
    }

    #[test]
    fn uniform_outputs_match_exact_integrals() {
        let mut op = uniform_op();
        op.follow(&[0.6]).unwrap();
        assert!(close(op.output(), 1.82, 1e-14));
        op.follow(&[0.3]).unwrap();
        assert!(close(op.output(), 1.865, 1e-14));
    }

    #[test]
    fn virgin_rising_branch_closed_form() {
        let op = uniform_op();
        for &x in &[0.0, 0.5, 1.0] {
            let r = op.branch_value(x, Direction::Rising).unwrap();
            assert!(close(r, 2.0 - 0.5 * x * x, 1e-14));
        }
        assert!(close(op.branch_value(1.0, Direction::Rising).unwrap(), 1.5, 1e-14));
        assert!(close(op.branch_f(0.5, Direction::Rising).unwrap(), 0.9375, 1e-14));
        assert_eq!(op.branch_f(0.0, Direction::Rising).unwrap(), 0.0);
    }

    #[test]
    fn branch_value_at_current_equals_output() {
        let mut op = uniform_op();
        op.follow(&[0.7, 0.2, 0.5]).unwrap();
        let out = op.output();
        assert!(close(op.branch_value(0.5, Direction::Rising).unwrap(), out, 1e-15));
        assert!(close(op.branch_value(0.5, Direction::Falling).unwrap(), out, 1e-15));
    }

    #[test]
    fn branch_direction_mismatch() {
        let mut op = uniform_op();
        op.follow(&[0.5]).unwrap();
        assert!(matches!(
            op.branch_value(0.3, Direction::Rising),
            Err(Error::DirectionMismatch(_))
        ));
        assert!(matches!(
            op.branch_value(0.6, Direction::Falling),
            Err(Error::DirectionMismatch(_))
        ));
    }

    #[test]
    fn lipschitz_constant() {
        assert_eq!(uniform_op().lipschitz_q0(), 1.0);
        let op = PreisachOperator::new(Arc::new(Density::uniform()), 2.0, 2.0).unwrap();
        assert_eq!(op.lipschitz_q0(), 0.0);
    }

    #[test]
    fn hypotheses_checked() {
        let d = Arc::new(Density::uniform());
        assert!(PreisachOperator::new(d.clone(), 1.5, 2.0).is_err());
        assert!(PreisachOperator::new(d.clone(), 2.0, 1.0).is_err());
        assert!(PreisachOperator::new(d, 2.0, 2.0).is_ok());
    }

    #[test]
    fn closed_minor_loop_restores_memory() {
        let mut op = uniform_op();
        op.follow(&[0.8, 0.1, 0.6]).unwrap();
        let before = op.memory().clone();
        op.follow(&[0.3, 0.6]).unwrap();
        assert_eq!(op.memory(), &before);
    }

    #[test]
    fn atomic_branch_jumps_at_thresholds() {
        let d = Density::from_spec(&DensitySpec::Atomic {
            relays: vec![AtomicRelay { a1: 0.2, a2: 0.4, w: 1.0 }],
        })
        .unwrap();
        let op = PreisachOperator::new(Arc::new(d), 2.0, 1.5).unwrap();
        let b = op.branch();
        assert_eq!(b.value(0.39), 2.0);
        assert_eq!(b.value(0.4), 1.5);
        assert_eq!(b.breakpoints(Direction::Rising), vec![0.2, 0.4]);
    }

    #[test]
    fn branch_breakpoints_follow_corners() {
        let mut op = uniform_op();
        op.follow(&[0.9, 0.1, 0.7, 0.3, 0.5]).unwrap();
        let b = op.branch();
        assert_eq!(b.breakpoints(Direction::Rising), vec![0.7, 0.9]);
        let mut falling = op.clone();
        falling.follow(&[0.4]).unwrap();
        assert_eq!(falling.branch().breakpoints(Direction::Falling), vec![0.3, 0.1]);
    }

    fn program() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 1..16)
    }

    proptest! {
        #[test]
        fn memory_stays_consistent(prog in program()) {
            let mut m = MemoryCurve::virgin();
            for &v in &prog {
                m.move_to(v);
                prop_assert!(m.is_consistent(), "{:?}", m);
            }
        }

        #[test]
        fn output_bounded(prog in program()) {
            let mut op = uniform_op();
            op.follow(&prog).unwrap();
            let r = op.output();
            prop_assert!(r >= 1.5 - 1e-14 && r <= 2.0 + 1e-14);
        }

        #[test]
        fn branch_matches_apply_then_output(prog in program(), x in 0.0f64..=1.0) {
            let mut op = uniform_op();
            op.follow(&prog).unwrap();
            let b = op.branch();
            let dir = if x >= op.current_input() { Direction::Rising } else { Direction::Falling };
            let direct = op.branch_value(x, dir).unwrap();
            prop_assert!((b.value(x) - direct).abs() < 1e-13);
        }

        #[test]
        fn branches_are_nonincreasing(prog in program()) {
            let mut op = uniform_op();
            op.follow(&prog).unwrap();
            let b = op.branch();
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let r = b.value(k as f64 / 200.0);
                prop_assert!(r <= prev + 1e-14);
                prev = r;
            }
        }

        #[test]
        fn operator_semigroup(prog in program(), cut in 0usize..16) {
            let cut = cut.min(prog.len());
            let mut whole = uniform_op();
            whole.follow(&prog).unwrap();
            let mut split = uniform_op();
            split.follow(&prog[..cut]).unwrap();
            let mid = split.clone();
            split = mid;
            split.follow(&prog[cut..]).unwrap();
            prop_assert_eq!(whole.memory(), split.memory());
        }

        #[test]
        fn return_point_memory(prog in program(), y in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let mut op = uniform_op();
            op.follow(&prog).unwrap();
            op.follow(&[y]).unwrap();
            // Turn back from y without passing the previous extremum.
            let bound = op.memory().extrema().last().copied().unwrap_or(0.0);
            let x = y + (bound - y) * t;
            let before = op.memory().clone();
            let out = op.output();
            op.follow(&[x, y]).unwrap();
            prop_assert!((op.output() - out).abs() < 1e-12);
            let mut again = before.clone();
            again.move_to(x);
            again.move_to(y);
            prop_assert_eq!(&again, &before);
        }
    }
}
