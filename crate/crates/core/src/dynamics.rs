//! The SIR system driven by a Preisach transmission rate, integrated as a
//! switched system of planar branch flows.
//!
//! Between turning points of `I` the memory is frozen at the last turning
//! point and the right-hand side uses the branch `R_k(I)` anchored there.
//! A switch happens when the trajectory reaches the nullcline
//! `R_k(I) S = 1`, or when `I` crosses a relay threshold at which the branch
//! jumps (discrete densities).

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::lyapunov::BranchLyapunov;
use crate::ode::{Dopri5, Step, Tolerances};
use crate::preisach::{Branch, Direction, MemoryCurve, PreisachOperator};
use crate::roots::bisect;

/// Consecutive switches closer than this are treated as grazing contact.
pub const GRAZING_DT: f64 = 1e-9;
/// Field norm below which a run may be declared converged.
pub const CONVERGED_FIELD: f64 = 1e-10;
/// Lyapunov value below which a run may be declared converged.
pub const CONVERGED_V: f64 = 1e-12;
/// Return-map agreement required for orbit detection.
pub const ORBIT_TOL: f64 = 1e-8;
/// Number of consecutive agreeing returns required for orbit detection.
pub const ORBIT_RETURNS: usize = 5;

#[derive(Debug, Clone)]
pub struct SirParams {
    rho: f64,
    operator: PreisachOperator,
}

impl SirParams {
    pub fn new(rho: f64, density: Arc<Density>, r0_nat: f64, r0_int: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidHypotheses(format!("need 0 < rho < 1, got {rho}")));
        }
        Ok(Self {
            rho,
            operator: PreisachOperator::new(density, r0_nat, r0_int)?,
        })
    }

    /// Hysteresis-free system with constant reproduction number.
    pub fn classical(r0: f64, rho: f64) -> Result<Self> {
        Self::new(rho, Arc::new(Density::uniform()), r0, r0)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn r0_nat(&self) -> f64 {
        self.operator.r0_nat()
    }

    pub fn r0_int(&self) -> f64 {
        self.operator.r0_int()
    }

    pub fn delta(&self) -> f64 {
        self.operator.delta()
    }

    pub fn density(&self) -> &Arc<Density> {
        self.operator.density()
    }

    pub fn q0(&self) -> f64 {
        self.operator.lipschitz_q0()
    }

    /// Operator in the given memory state.
    pub fn operator(&self, memory: &MemoryCurve) -> PreisachOperator {
        self.operator.clone().with_memory(memory.clone())
    }

    pub fn branch(&self, memory: &MemoryCurve) -> Branch {
        Branch::new(self.density().clone(), self.r0_nat(), self.r0_int(), memory.clone())
    }
}

/// A point of the phase space: infected and susceptible fractions together
/// with the Preisach memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SirState {
    pub i: f64,
    pub s: f64,
    pub memory: MemoryCurve,
}

impl SirState {
    pub fn new(i: f64, s: f64, memory: MemoryCurve) -> Result<Self> {
        if !(i > 0.0 && s > 0.0 && i + s <= 1.0 + 1e-12) {
            return Err(Error::InvalidHypotheses(format!(
                "need I > 0, S > 0, I + S <= 1, got I = {i}, S = {s}"
            )));
        }
        if (memory.current() - i).abs() > 1e-12 {
            return Err(Error::InvalidMemory(format!(
                "memory is at input {} but I = {i}",
                memory.current()
            )));
        }
        Ok(Self { i, s, memory })
    }

    /// State whose memory was produced by a monotone rise from zero to `i`.
    pub fn virgin(i: f64, s: f64) -> Result<Self> {
        let memory = MemoryCurve::risen_to(i).map_err(|_| {
            Error::InvalidHypotheses(format!("initial I = {i} outside (0, 1]"))
        })?;
        Self::new(i, s, memory)
    }
}

fn field(r: f64, rho: f64, i: f64, s: f64) -> [f64; 2] {
    let new_cases = r * s * i;
    [new_cases - i, -new_cases - rho * s + rho]
}

/// `(dI/dt, dS/dt)` with the reproduction number given by the memory.
pub fn vector_field(params: &SirParams, state: &SirState) -> [f64; 2] {
    let r = params.operator(&state.memory).output();
    field(r, params.rho, state.i, state.s)
}

/// Right-hand side of the planar system of a fixed branch.
pub fn branch_field(branch: &Branch, rho: f64, i: f64, s: f64) -> [f64; 2] {
    field(branch.value(i), rho, i, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    pub t_max: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            event_tol: 1e-10,
            t_max: 5000.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("integrator.rtol", self.rtol),
            ("integrator.atol", self.atol),
            ("integrator.event_tol", self.event_tol),
            ("integrator.t_max", self.t_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub i: f64,
    pub s: f64,
    pub r0: f64,
    pub switch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchKind {
    /// The trajectory reached the nullcline of the current branch.
    Nullcline,
    /// The branch jumped at a relay threshold and reversed the motion.
    Threshold,
}

/// One monotone arc of a trajectory, between consecutive switches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub k: usize,
    pub direction: Direction,
    /// Memory at the start of the arc; anchors the branch.
    pub memory: MemoryCurve,
    pub t_start: f64,
    pub i_start: f64,
    pub s_start: f64,
    pub t_end: f64,
    pub i_end: f64,
    pub s_end: f64,
    /// How the arc ended; `None` for the final, unfinished arc.
    pub ended_by: Option<SwitchKind>,
    /// Endemic equilibrium of the branch system.
    pub endemic: (f64, f64),
    /// Indices of the arc's samples, endpoints included.
    pub samples: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub k: usize,
    pub t: f64,
    pub i: f64,
    pub s: f64,
    pub kind: SwitchKind,
    pub endemic_before: (f64, f64),
    pub endemic_after: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Equilibrium,
    Orbit,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub period: f64,
    /// Largest return-map difference over the last returns.
    pub residual: f64,
    /// `(t, I, S)` at the maxima of `I` used by the return map.
    pub returns: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    params: SirParams,
    pub samples: Vec<Sample>,
    pub branches: Vec<BranchRecord>,
    pub outcome: Outcome,
    pub orbit: Option<OrbitReport>,
    pub grazing: bool,
    pub final_memory: MemoryCurve,
}

impl Trajectory {
    pub fn params(&self) -> &SirParams {
        &self.params
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.branches.iter().skip(1).map(|b| b.t_start).collect()
    }

    pub fn switch_records(&self) -> Vec<SwitchRecord> {
        self.branches
            .windows(2)
            .map(|w| SwitchRecord {
                k: w[1].k,
                t: w[1].t_start,
                i: w[1].i_start,
                s: w[1].s_start,
                kind: w[0].ended_by.unwrap_or(SwitchKind::Nullcline),
                endemic_before: w[0].endemic,
                endemic_after: w[1].endemic,
            })
            .collect()
    }

    pub fn n_switches(&self) -> usize {
        self.branches.len().saturating_sub(1)
    }

    pub fn final_state(&self) -> (f64, f64) {
        let last = self.samples.last().expect("trajectory has samples");
        (last.i, last.s)
    }

    pub fn branch(&self, k: usize) -> Branch {
        self.params.branch(&self.branches[k].memory)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,I,S,R0,switch")?;
        for p in &self.samples {
            writeln!(out, "{:?},{:?},{:?},{:?},{}", p.t, p.i, p.s, p.r0, u8::from(p.switch))?;
        }
        Ok(())
    }
}

/// Infection-free equilibrium with its linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfectionFree {
    pub i: f64,
    pub s: f64,
    pub r0: f64,
    pub eigenvalues: (f64, f64),
    pub saddle: bool,
}

/// The point `(0, 1)` with all relays off. The Jacobian there is lower
/// triangular, `[[R0_nat - 1, 0], [-R0_nat, -rho]]`.
pub fn infection_free(params: &SirParams) -> InfectionFree {
    let r = params.r0_nat();
    let eig = (r - 1.0, -params.rho);
    InfectionFree {
        i: 0.0,
        s: 1.0,
        r0: r,
        eigenvalues: eig,
        saddle: eig.0 > 0.0 && eig.1 < 0.0,
    }
}

/// Positive equilibrium of the planar system of `branch`: the root of
/// `1/R(I) = 1 - I/rho` on `[0, rho]`.
pub fn branch_endemic_of(branch: &Branch, rho: f64) -> (f64, f64) {
    let h = |i: f64| 1.0 / branch.value(i) - (1.0 - i / rho);
    let i_star = bisect(h, 0.0, rho, 0.0).expect("sign change on [0, rho]");
    (i_star, 1.0 - i_star / rho)
}

/// Endemic equilibrium of the branch anchored at `memory`.
pub fn branch_endemic(params: &SirParams, memory: &MemoryCurve) -> (f64, f64) {
    branch_endemic_of(&params.branch(memory), params.rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusType {
    Focus,
    Node,
}

/// Focus iff `rho R0^2 < 4 (R0 - 1)`.
pub fn classify_focus(r0: f64, rho: f64) -> FocusType {
    if rho * r0 * r0 < 4.0 * (r0 - 1.0) {
        FocusType::Focus
    } else {
        FocusType::Node
    }
}

/// Continuum of endemic equilibria `{(I, 1 - I/rho) : I_lo <= I <= I_hi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndemicSegment {
    pub i_lo: f64,
    pub i_hi: f64,
    pub rho: f64,
}

impl EndemicSegment {
    pub fn s_of(&self, i: f64) -> f64 {
        1.0 - i / self.rho
    }

    pub fn is_point(&self) -> bool {
        self.i_lo == self.i_hi
    }

    /// Distance from `(i, s)` to the segment.
    pub fn distance(&self, i: f64, s: f64) -> f64 {
        // Orthogonal projection onto the line S = 1 - I/rho, clamped.
        let (a, b) = ((self.i_lo, self.s_of(self.i_lo)), (self.i_hi, self.s_of(self.i_hi)));
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let u = if len2 == 0.0 {
            0.0
        } else {
            (((i - a.0) * dx + (s - a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        ((i - a.0 - u * dx).powi(2) + (s - a.1 - u * dy).powi(2)).sqrt()
    }

    /// `n + 1` evenly spaced points `(theta, I, S, R0)`, `theta` in `[0, 1]`.
    pub fn points(&self, n: usize) -> Vec<(f64, f64, f64, f64)> {
        let n = n.max(1);
        (0..=n)
            .map(|j| {
                let th = j as f64 / n as f64;
                let i = self.i_lo + th * (self.i_hi - self.i_lo);
                let s = self.s_of(i);
                (th, i, s, 1.0 / s)
            })
            .collect()
    }
}

/// Largest attainable output at input `i`: only relays with `alpha2 <= i` on.
pub fn envelope_max(params: &SirParams, i: f64) -> f64 {
    params.r0_nat() - params.delta() * params.density().corner_cumulative(i, i)
}

/// Smallest attainable output at input `i`: every relay with `alpha1 < i` on.
pub fn envelope_min(params: &SirParams, i: f64) -> f64 {
    params.r0_nat() - params.delta() * params.density().corner_cumulative(i, 1.0)
}

pub fn endemic_segment(params: &SirParams) -> EndemicSegment {
    let rho = params.rho;
    let top = rho * (1.0 - 1e-15);
    let root = |env: &dyn Fn(f64) -> f64| {
        bisect(|i| env(i) * (1.0 - i / rho) - 1.0, 0.0, top, 0.0)
            .expect("envelope equation changes sign on [0, rho)")
    };
    let i_lo = root(&|i| envelope_min(params, i));
    let i_hi = if params.delta() == 0.0 {
        i_lo
    } else {
        root(&|i| envelope_max(params, i))
    };
    EndemicSegment { i_lo, i_hi, rho }
}

/// Integrates the switched system from `initial` until convergence, orbit
/// detection or `cfg.t_max`.
pub fn integrate(params: &SirParams, initial: &SirState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    Run::new(params, initial, cfg).go()
}

struct Run<'a> {
    params: &'a SirParams,
    cfg: IntegratorConfig,
    memory: MemoryCurve,
    branch: Branch,
    dir: Direction,
    breaks: Vec<f64>,
    next_break: usize,
    armed: bool,
    lyap: Option<BranchLyapunov>,
    samples: Vec<Sample>,
    branches: Vec<BranchRecord>,
    maxima: Vec<(f64, f64, f64)>,
    last_switch: f64,
    grazing: bool,
    t: f64,
    y: [f64; 2],
}

impl<'a> Run<'a> {
    fn new(params: &'a SirParams, initial: &SirState, cfg: &IntegratorConfig) -> Self {
        let memory = initial.memory.clone();
        let branch = params.branch(&memory);
        let (i, s) = (initial.i, initial.s);
        let g = branch.value(i) * s - 1.0;
        let dir = if g > 0.0 {
            Direction::Rising
        } else if g < 0.0 {
            Direction::Falling
        } else {
            // On the nullcline: S decides where I goes next.
            let ds = field(branch.value(i), params.rho, i, s)[1];
            if ds < 0.0 {
                Direction::Falling
            } else {
                Direction::Rising
            }
        };
        let breaks = branch.breakpoints(dir);
        let endemic = branch_endemic_of(&branch, params.rho);
        let first = Sample {
            t: 0.0,
            i,
            s,
            r0: branch.value(i),
            switch: false,
        };
        Self {
            params,
            cfg: *cfg,
            memory: memory.clone(),
            branch,
            dir,
            breaks,
            next_break: 0,
            armed: g != 0.0,
            lyap: None,
            samples: vec![first],
            branches: vec![BranchRecord {
                k: 0,
                direction: dir,
                memory,
                t_start: 0.0,
                i_start: i,
                s_start: s,
                t_end: 0.0,
                i_end: i,
                s_end: s,
                ended_by: None,
                endemic,
                samples: 0..1,
            }],
            maxima: Vec::new(),
            last_switch: f64::NEG_INFINITY,
            grazing: false,
            t: 0.0,
            y: [i, s],
        }
    }

    fn g(&self, y: &[f64; 2]) -> f64 {
        self.dir.sign() * (self.branch.value(y[0]) * y[1] - 1.0)
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.cfg.rtol,
            atol: self.cfg.atol,
            h_max: f64::INFINITY,
        }
    }

    fn push_sample(&mut self, t: f64, y: [f64; 2], switch: bool) {
        let r0 = self.branch.value(y[0]);
        self.samples.push(Sample {
            t,
            i: y[0],
            s: y[1],
            r0,
            switch,
        });
    }

    /// First time in the step where the event function turns non-positive
    /// after having been positive. Returns the time and the new armed flag.
    fn find_event(&self, step: &Step<2>) -> (Option<f64>, bool) {
        const PROBES: usize = 8;
        let mut armed = self.armed;
        let mut prev_t = step.t0;
        for j in 1..=PROBES {
            let tj = if j == PROBES {
                step.t1
            } else {
                step.t0 + (step.t1 - step.t0) * j as f64 / PROBES as f64
            };
            let yj = if j == PROBES { step.y1 } else { step.eval(tj) };
            let gj = self.g(&yj);
            if armed && gj <= 0.0 {
                let tol = self.cfg.event_tol;
                let mut lo = prev_t;
                let mut hi = tj;
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if self.g(&step.eval(mid)) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return (Some(hi), armed);
            }
            if !armed {
                if gj > 0.0 {
                    armed = true;
                } else if gj < -1e-9 {
                    // Moving against the branch direction: reverse at once.
                    return (Some(prev_t), armed);
                }
            }
            prev_t = tj;
        }
        (None, armed)
    }

    /// Time at which `I` reaches the next breakpoint during the step.
    fn find_break(&self, step: &Step<2>) -> Option<f64> {
        let b = *self.breaks.get(self.next_break)?;
        let sgn = self.dir.sign();
        if sgn * (step.y1[0] - b) < 0.0 {
            return None;
        }
        if sgn * (step.y0[0] - b) >= 0.0 {
            return Some(step.t0);
        }
        let tc = bisect(|t| sgn * (step.eval(t)[0] - b), step.t0, step.t1, 0.0).ok()?;
        // Land on or just past the breakpoint.
        let mut t = tc;
        while sgn * (step.eval(t)[0] - b) < 0.0 && t < step.t1 {
            t = (t + 1e-15 * t.abs().max(1.0)).min(step.t1);
        }
        Some(t)
    }

    fn close_branch(&mut self, kind: Option<SwitchKind>) {
        let n = self.samples.len();
        let (t, y) = (self.t, self.y);
        let rec = self.branches.last_mut().expect("a branch is open");
        rec.t_end = t;
        rec.i_end = y[0];
        rec.s_end = y[1];
        rec.ended_by = kind;
        rec.samples.end = n;
    }

    /// Commits the finished monotone arc to memory and starts the next one.
    fn switch(&mut self, kind: SwitchKind) -> Result<()> {
        if self.t - self.last_switch < GRAZING_DT {
            if self.grazing {
                return Err(Error::Grazing { t: self.t });
            }
            self.grazing = true;
            self.cfg.rtol *= 0.5;
            self.cfg.atol *= 0.5;
        }
        self.last_switch = self.t;
        self.close_branch(Some(kind));
        if self.dir == Direction::Rising {
            self.maxima.push((self.t, self.y[0], self.y[1]));
        }
        self.memory.move_to(self.y[0].clamp(0.0, 1.0));
        self.branch = self.params.branch(&self.memory);
        self.dir = self.dir.opposite();
        self.breaks = self.branch.breakpoints(self.dir);
        self.next_break = 0;
        self.armed = self.g(&self.y) > 0.0;
        self.lyap = None;
        let endemic = branch_endemic_of(&self.branch, self.params.rho);
        let start = self.samples.len() - 1;
        self.branches.push(BranchRecord {
            k: self.branches.len(),
            direction: self.dir,
            memory: self.memory.clone(),
            t_start: self.t,
            i_start: self.y[0],
            s_start: self.y[1],
            t_end: self.t,
            i_end: self.y[0],
            s_end: self.y[1],
            ended_by: None,
            endemic,
            samples: start..start + 1,
        });
        Ok(())
    }

    /// Skips breakpoints already reached and reports whether the branch
    /// now pushes the motion backwards (a jump at a relay threshold).
    fn pass_breaks(&mut self) -> bool {
        let sgn = self.dir.sign();
        let mut passed = false;
        while let Some(&b) = self.breaks.get(self.next_break) {
            if sgn * (self.y[0] - b) >= -1e-13 {
                if (self.y[0] - b).abs() <= 1e-13 {
                    self.y[0] = b;
                }
                self.next_break += 1;
                passed = true;
            } else {
                break;
            }
        }
        passed && self.g(&self.y) <= 0.0
    }

    fn orbit_check(&self) -> Option<OrbitReport> {
        let m = &self.maxima;
        if m.len() < ORBIT_RETURNS + 1 {
            return None;
        }
        let tail = &m[m.len() - ORBIT_RETURNS - 1..];
        let residual = tail
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1).powi(2) + (w[1].2 - w[0].2).powi(2)).sqrt())
            .fold(0.0, f64::max);
        let (_, i, s) = tail[ORBIT_RETURNS];
        let ds = field(self.params.branch(&self.memory).value(i), self.params.rho, i, s)[1].abs();
        let period = tail[ORBIT_RETURNS].0 - tail[ORBIT_RETURNS - 1].0;
        (residual < ORBIT_TOL && ds > 1e-6).then(|| OrbitReport {
            period,
            residual,
            returns: tail.to_vec(),
        })
    }

    fn converged(&mut self) -> bool {
        let fv = branch_field(&self.branch, self.params.rho, self.y[0], self.y[1]);
        if fv[0].hypot(fv[1]) >= CONVERGED_FIELD {
            return false;
        }
        if self.lyap.is_none() {
            self.lyap = Some(BranchLyapunov::new(self.branch.clone(), self.params.rho));
        }
        self.lyap.as_ref().is_some_and(|l| l.v(self.y[0], self.y[1]) < CONVERGED_V)
    }

    fn finish(mut self, outcome: Outcome, orbit: Option<OrbitReport>) -> Trajectory {
        self.close_branch(None);
        self.memory.move_to(self.y[0].clamp(0.0, 1.0));
        Trajectory {
            params: self.params.clone(),
            samples: self.samples,
            branches: self.branches,
            outcome,
            orbit,
            grazing: self.grazing,
            final_memory: self.memory,
        }
    }

    fn go(mut self) -> Result<Trajectory> {
        let rho = self.params.rho;
        let t_max = self.cfg.t_max;
        let mut stepper = {
            let b = self.branch.clone();
            let mut f = |_t: f64, y: &[f64; 2]| branch_field(&b, rho, y[0], y[1]);
            Dopri5::new(&mut f, 0.0, self.y, self.tolerances())
        };
        if self.pass_breaks() {
            self.switch(SwitchKind::Threshold)?;
        }
        let mut horizon: Option<f64> = None;
        loop {
            if self.t >= t_max {
                return Ok(self.finish(Outcome::Timeout, None));
            }
            let b = self.branch.clone();
            let mut f = |_t: f64, y: &[f64; 2]| branch_field(&b, rho, y[0], y[1]);
            let step = stepper.step(&mut f, horizon.unwrap_or(t_max))?;
            if step.y1.iter().any(|v| !v.is_finite()) || step.y1[0] <= 0.0 || step.y1[1] <= 0.0 {
                return Err(Error::NonFiniteState { t: step.t1 });
            }
            let (event, armed) = self.find_event(&step);
            let crossing = self.find_break(&step);

            match (event, crossing) {
                (ev, Some(tc)) if ev.map_or(true, |te| tc < te) && tc < step.t1 => {
                    // Retake the step so that it ends at the breakpoint.
                    stepper.rewind(&step);
                    if tc <= step.t0 {
                        self.y = step.y0;
                        self.t = step.t0;
                        let jump = self.pass_breaks();
                        stepper.restart(&mut f, self.t, self.y);
                        horizon = None;
                        if jump {
                            self.switch(SwitchKind::Threshold)?;
                            let b = self.branch.clone();
                            let mut f = |_t: f64, y: &[f64; 2]| branch_field(&b, rho, y[0], y[1]);
                            stepper.restart(&mut f, self.t, self.y);
                        }
                    } else {
                        horizon = Some(tc);
                    }
                    continue;
                }
                (Some(te), _) => {
                    self.t = te;
                    self.y = step.eval(te);
                    self.push_sample(te, self.y, true);
                    self.switch(SwitchKind::Nullcline)?;
                    horizon = None;
                }
                _ => {
                    self.armed = armed;
                    self.t = step.t1;
                    self.y = step.y1;
                    let at_break = horizon.is_some_and(|h| step.t1 >= h) || crossing.is_some();
                    horizon = None;
                    if at_break {
                        let jump = self.pass_breaks();
                        self.push_sample(self.t, self.y, jump);
                        if jump {
                            self.switch(SwitchKind::Threshold)?;
                        }
                    } else {
                        self.push_sample(self.t, self.y, false);
                        if self.converged() {
                            return Ok(self.finish(Outcome::Equilibrium, None));
                        }
                        continue;
                    }
                }
            }
            // A switch or breakpoint changed the vector field.
            let b = self.branch.clone();
            let mut f = |_t: f64, y: &[f64; 2]| branch_field(&b, rho, y[0], y[1]);
            stepper.set_tolerances(self.tolerances());
            stepper.restart(&mut f, self.t, self.y);
            if self.pass_breaks() {
                self.switch(SwitchKind::Threshold)?;
                let b = self.branch.clone();
                let mut f = |_t: f64, y: &[f64; 2]| branch_field(&b, rho, y[0], y[1]);
                stepper.restart(&mut f, self.t, self.y);
            }
            if let Some(orbit) = self.orbit_check() {
                return Ok(self.finish(Outcome::Orbit, Some(orbit)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn field_at_infection_free_point_vanishes() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let st = SirState::new(1e-300, 1.0 - 1e-300, MemoryCurve::risen_to(1e-300).unwrap()).unwrap();
        let v = vector_field(&p, &st);
        assert!(v[0].abs() < 1e-299 && v[1].abs() < 1e-299);
    }

    #[test]
    fn field_hand_arithmetic() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let st = SirState::virgin(0.1, 0.9).unwrap();
        let v = vector_field(&p, &st);
        assert!(close(v[0], 0.08, 1e-15));
        assert!(close(v[1], -0.13, 1e-15));
    }

    #[test]
    fn field_vanishes_at_branch_endemic_point() {
        let p = SirParams::new(0.5, Arc::new(Density::uniform()), 2.0, 1.5).unwrap();
        let m = MemoryCurve::virgin();
        let (i, s) = branch_endemic(&p, &m);
        let v = branch_field(&p.branch(&m), 0.5, i, s);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
    }

    #[test]
    fn infection_free_linearization() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let e = infection_free(&p);
        assert_eq!((e.i, e.s, e.r0), (0.0, 1.0, 2.0));
        assert_eq!(e.eigenvalues, (1.0, -0.5));
        assert!(e.saddle);
    }

    #[test]
    fn constant_branch_endemic() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let (i, s) = branch_endemic(&p, &MemoryCurve::virgin());
        assert!(close(i, 0.25, 1e-15) && close(s, 0.5, 1e-15));
    }

    #[test]
    fn uniform_virgin_branch_endemic() {
        let p = SirParams::new(0.5, Arc::new(Density::uniform()), 2.0, 1.5).unwrap();
        let (i, s) = branch_endemic(&p, &MemoryCurve::virgin());
        assert!(close(i, 0.24615474206673884533715634204876612, 1e-15));
        assert!(close(s, 0.50769051586652230932568731590246775, 1e-15));
    }

    #[test]
    fn focus_classification() {
        assert_eq!(classify_focus(2.0, 0.5), FocusType::Focus);
        assert_eq!(classify_focus(2.0, 1.0), FocusType::Node);
        assert_eq!(classify_focus(50.0, 1e-6), FocusType::Focus);
    }

    #[test]
    fn classical_segment_is_a_point() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let seg = endemic_segment(&p);
        assert!(seg.is_point());
        assert!(close(seg.i_lo, 0.25, 1e-15));
    }

    #[test]
    fn uniform_segment_endpoints_solve_envelope_equations() {
        let p = SirParams::new(0.1, Arc::new(Density::uniform()), 2.0, 1.8).unwrap();
        let seg = endemic_segment(&p);
        assert!(seg.i_lo < seg.i_hi);
        let s_lo = seg.s_of(seg.i_lo);
        let s_hi = seg.s_of(seg.i_hi);
        assert!(close(envelope_min(&p, seg.i_lo) * s_lo, 1.0, 1e-14));
        assert!(close(envelope_max(&p, seg.i_hi) * s_hi, 1.0, 1e-14));
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(SirState::virgin(0.0, 0.5).is_err());
        assert!(SirState::virgin(0.6, 0.6).is_err());
        assert!(SirState::new(0.2, 0.5, MemoryCurve::virgin()).is_err());
        assert!(SirParams::classical(2.0, 1.0).is_err());
    }

    #[test]
    fn classical_run_converges() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let tr = integrate(&p, &SirState::virgin(0.01, 0.98).unwrap(), &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.outcome, Outcome::Equilibrium);
        let (i, s) = tr.final_state();
        assert!(close(i, 0.25, 1e-9) && close(s, 0.5, 1e-9));
        for r in tr.switch_records() {
            assert!(close(2.0 * r.s, 1.0, 1e-8));
        }
    }

    #[test]
    fn switch_times_increase_and_arcs_are_monotone() {
        let p = SirParams::new(0.5, Arc::new(Density::uniform()), 2.0, 1.7).unwrap();
        let tr = integrate(&p, &SirState::virgin(0.05, 0.9).unwrap(), &IntegratorConfig::default()).unwrap();
        let ts = tr.switch_times();
        assert!(ts.len() > 3);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        for b in &tr.branches {
            let s = &tr.samples[b.samples.clone()];
            let sgn = b.direction.sign();
            assert!(s.windows(2).all(|w| sgn * (w[1].i - w[0].i) >= -1e-12));
        }
        for p in &tr.samples {
            assert!(p.i > 0.0 && p.s > 0.0 && p.i + p.s <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let cfg = IntegratorConfig {
            t_max: 5.0,
            ..Default::default()
        };
        let tr = integrate(&p, &SirState::virgin(0.1, 0.8).unwrap(), &cfg).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,I,S,R0,switch"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[..3], [0.0, 0.1, 0.8]);
    }
}
