//! Per-branch Lyapunov functions and numerical checks of the descent
//! inequalities along computed trajectories.
//!
//! For a branch `R` with `f(I) = I R(I)` and endemic point `(I*, S*)`,
//!
//! ```text
//! V(I, S) = int_{I*}^{I} (1 - f(I*)/f(i)) di + int_{S*}^{S} (1 - S*/s) ds.
//! ```
//!
//! Every check is a diagnostic: it records both sides of an inequality and
//! the margin `rhs - lhs` instead of failing the run.

use serde::Serialize;

use crate::certify::StabilityCertificate;
use crate::dynamics::{branch_endemic_of, branch_field, Trajectory};
use crate::error::{Error, Result};
use crate::preisach::{Branch, Direction};
use crate::quad::integrate_split;
use crate::roots::bisect;

/// Default numerical slack for the inequality checks.
pub const SLACK: f64 = 1e-8;
const QUAD_TOL: f64 = 1e-13;
const S_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct BranchLyapunov {
    branch: Branch,
    rho: f64,
    i_star: f64,
    s_star: f64,
    f_star: f64,
    breaks: Vec<f64>,
}

impl BranchLyapunov {
    pub fn new(branch: Branch, rho: f64) -> Self {
        let endemic = branch_endemic_of(&branch, rho);
        Self::with_endemic(branch, rho, endemic)
    }

    pub fn with_endemic(branch: Branch, rho: f64, endemic: (f64, f64)) -> Self {
        let (i_star, s_star) = endemic;
        let f_star = branch.f(i_star);
        let breaks = branch.all_breakpoints();
        Self {
            branch,
            rho,
            i_star,
            s_star,
            f_star,
            breaks,
        }
    }

    pub fn branch(&self) -> &Branch {
        &self.branch
    }

    pub fn endemic(&self) -> (f64, f64) {
        (self.i_star, self.s_star)
    }

    pub fn f(&self, i: f64) -> f64 {
        self.branch.f(i)
    }

    pub fn r(&self, i: f64) -> f64 {
        self.branch.value(i)
    }

    /// `int_a^b (1 - f(I*)/f(i)) di`.
    pub fn i_part_between(&self, a: f64, b: f64) -> f64 {
        let fs = self.f_star;
        integrate_split(|x| 1.0 - fs / self.branch.f(x), a, b, &self.breaks, QUAD_TOL)
    }

    pub fn i_part(&self, i: f64) -> f64 {
        self.i_part_between(self.i_star, i)
    }

    /// `int_{S*}^{S} (1 - S*/s) ds`, written to avoid cancellation near `S*`.
    pub fn s_part(&self, s: f64) -> f64 {
        s_part(self.s_star, s)
    }

    pub fn v(&self, i: f64, s: f64) -> f64 {
        self.i_part(i) + self.s_part(s)
    }

    /// Values along a path, integrating the `I`-part incrementally.
    pub fn values_along(&self, pts: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        let mut prev = self.i_star;
        for &(i, s) in pts {
            acc += self.i_part_between(prev, i);
            prev = i;
            out.push(acc + self.s_part(s));
        }
        out
    }

    pub fn v_i(&self, i: f64) -> f64 {
        1.0 - self.f_star / self.f(i)
    }

    pub fn v_s(&self, s: f64) -> f64 {
        1.0 - self.s_star / s
    }

    pub fn v_ii(&self, i: f64) -> f64 {
        let f = self.f(i);
        self.branch.f_derivative(i) * self.f_star / (f * f)
    }

    pub fn v_ss(&self, s: f64) -> f64 {
        self.s_star / (s * s)
    }

    /// Derivative of `V` along the branch flow.
    pub fn v_dot(&self, i: f64, s: f64) -> f64 {
        let [di, ds] = branch_field(&self.branch, self.rho, i, s);
        self.v_i(i) * di + self.v_s(s) * ds
    }

    /// Upper bound `-rho (S - S*)^2 / (S S*)` for the derivative.
    pub fn v_dot_bound(&self, s: f64) -> f64 {
        -self.rho * (s - self.s_star).powi(2) / (s * self.s_star)
    }

    /// The point `S != S*` with `V(I*, S) = c` on the requested side of `S*`
    /// (the highest or lowest point of the level line).
    pub fn level_extremum(&self, c: f64, side: Direction) -> Result<f64> {
        level_extremum(self.s_star, c, side)
    }
}

fn s_part(s_star: f64, s: f64) -> f64 {
    let x = (s - s_star) / s_star;
    s_star * (x - x.ln_1p())
}

/// Solves `S - S* - S* ln(S/S*) = c` above (`Rising`) or below (`Falling`)
/// `S*`.
pub fn level_extremum(s_star: f64, c: f64, side: Direction) -> Result<f64> {
    if c <= 0.0 {
        return Ok(s_star);
    }
    let g = |s: f64| s_part(s_star, s) - c;
    match side {
        Direction::Rising => {
            let mut hi = 1.0f64.max(2.0 * s_star);
            while g(hi) < 0.0 {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::RootBracketFailure(format!("level {c} above S*")));
                }
            }
            bisect(g, s_star, hi, 0.0)
        }
        Direction::Falling => {
            if g(S_FLOOR) < 0.0 {
                return Err(Error::RootBracketFailure(format!(
                    "level {c} not reached below S* = {s_star}"
                )));
            }
            bisect(g, S_FLOOR, s_star, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRecord {
    pub lemma: String,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl LemmaRecord {
    /// Inequality `lhs <= rhs` up to `slack`.
    pub fn new(lemma: &str, k: usize, lhs: f64, rhs: f64, slack: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            lemma: lemma.to_string(),
            k,
            lhs,
            rhs,
            margin,
            pass: margin >= -slack && !margin.is_nan(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LemmaReport {
    pub records: Vec<LemmaRecord>,
}

impl LemmaReport {
    pub fn push(&mut self, r: LemmaRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: LemmaReport) {
        self.records.extend(other.records);
    }

    pub fn failures(&self) -> Vec<&LemmaRecord> {
        self.records.iter().filter(|r| !r.pass).collect()
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn count(&self, lemma: &str) -> usize {
        self.records.iter().filter(|r| r.lemma == lemma).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub pass: bool,
    pub points: usize,
    pub min_curvature: f64,
    pub max_curvature: f64,
}

/// Traces the level line `V = c` along rays from the minimum and checks that
/// `V_SS V_I^2 + V_II V_S^2` keeps one sign (convex level set).
pub fn level_set_convexity_check(lyap: &BranchLyapunov, c: f64, n_points: usize) -> ConvexityReport {
    let (is, ss) = lyap.endemic();
    let mut lo_k = f64::INFINITY;
    let mut hi_k = f64::NEG_INFINITY;
    let mut pass = true;
    let mut count = 0;
    for j in 0..n_points {
        let th = std::f64::consts::TAU * (j as f64 + 0.5) / n_points as f64;
        let (ci, cs) = (th.cos(), th.sin());
        let mut r_max = f64::INFINITY;
        if ci < 0.0 {
            r_max = r_max.min(is / -ci);
        } else if ci > 0.0 {
            r_max = r_max.min((1.0 - is) / ci);
        }
        if cs < 0.0 {
            r_max = r_max.min(ss / -cs);
        } else if r_max.is_infinite() {
            r_max = 10.0;
        }
        r_max *= 1.0 - 1e-9;
        let h = |r: f64| lyap.v(is + r * ci, ss + r * cs) - c;
        if h(r_max) < 0.0 {
            continue;
        }
        let Ok(r) = bisect(h, 0.0, r_max, 1e-14) else {
            continue;
        };
        let (i, s) = (is + r * ci, ss + r * cs);
        let a = lyap.v_ss(s) * lyap.v_i(i).powi(2);
        let b = lyap.v_ii(i) * lyap.v_s(s).powi(2);
        let k = a + b;
        if k < -1e-12 * (a.abs() + b.abs()) {
            pass = false;
        }
        lo_k = lo_k.min(k);
        hi_k = hi_k.max(k);
        count += 1;
    }
    ConvexityReport {
        pass: pass && count > 0,
        points: count,
        min_curvature: lo_k,
        max_curvature: hi_k,
    }
}

/// Switch-point data of one completed arc `k`, shared by the per-switch
/// checks.
struct Arc<'a> {
    k: usize,
    rising: bool,
    i_k: f64,
    i_next: f64,
    s_next: f64,
    lk: &'a BranchLyapunov,
    ln: &'a BranchLyapunov,
    /// `V_k(I_k, S_k)`
    v_start: f64,
    /// `V_k(I_{k+1}, S_{k+1})`
    v_end: f64,
    /// `V_{k+1}(I_{k+1}, S_{k+1})`
    v_next: f64,
}

impl Arc<'_> {
    fn i_star(&self) -> f64 {
        self.lk.i_star
    }

    /// Lemma hypotheses: later arcs start on the far side of `I*`; the first
    /// arc qualifies only if it passes through `I*`.
    fn descent_applies(&self) -> bool {
        let is = self.i_star();
        self.k >= 1 || (self.i_k.min(self.i_next) <= is && is <= self.i_k.max(self.i_next))
    }

    /// The bracket of the branch-jump bound (rising or falling form).
    fn jump_bracket(&self, q0: f64, rho: f64) -> f64 {
        let (lk, ln) = (self.lk, self.ln);
        let is = lk.i_star;
        let rk = lk.r(is);
        let rn = ln.r(ln.i_star);
        if self.rising {
            let fk = lk.f(is);
            (rho * rho * q0 / (rn * rn * fk) + rho / fk + 1.0) / rk
        } else {
            let fk = lk.f(self.i_next);
            rho * rho * q0 / (rn * rn * rk * rk * is) + rho * ln.r(is) / (rn * rk * fk) + is / fk
        }
    }
}

/// `Delta_S + Delta_I` for the branch jump, written as in the bound's
/// derivation rather than as a difference of two Lyapunov values.
fn jump_decomposition(arc: &Arc) -> f64 {
    let (lk, ln) = (arc.lk, arc.ln);
    let (sk, sn) = (lk.s_star, ln.s_star);
    let ds = -s_part(sk, sn) - (sn - sk) * (arc.s_next / sn).ln();
    let (fk, fnx) = (lk.f_star, ln.f_star);
    let mut breaks = lk.breaks.clone();
    breaks.extend_from_slice(&ln.breaks);
    let (a, b) = (lk.i_star, arc.i_next);
    let t1 = integrate_split(|i| fnx * (1.0 / ln.f(i) - 1.0 / lk.f(i)), a, b, &breaks, QUAD_TOL);
    let t2 = integrate_split(|i| (fnx - fk) / lk.f(i), a, b, &breaks, QUAD_TOL);
    let t3 = integrate_split(|i| 1.0 - fnx / ln.f(i), a, ln.i_star, &breaks, QUAD_TOL);
    ds - t1 - t2 - t3
}

/// Runs every per-switch and along-trajectory check.
pub fn verify_trajectory(traj: &Trajectory, cert: &StabilityCertificate, slack: f64) -> Result<LemmaReport> {
    let params = traj.params();
    let rho = params.rho();
    let (r_nat, r_int) = (params.r0_nat(), params.r0_int());
    let q0 = cert.q0;
    let eps0 = cert.eps0;
    let mut rep = LemmaReport::default();

    let lyaps: Vec<BranchLyapunov> = traj
        .branches
        .iter()
        .map(|b| BranchLyapunov::with_endemic(params.branch(&b.memory), rho, b.endemic))
        .collect();
    let v_start: Vec<f64> = traj
        .branches
        .iter()
        .zip(&lyaps)
        .map(|(b, l)| l.v(b.i_start, b.s_start))
        .collect();
    let t2 = traj.branches.get(2).map(|b| b.t_start);

    // Monotonicity of f with slope at least eps0.
    if eps0 > 0.0 {
        for (k, l) in lyaps.iter().enumerate() {
            let n = 400;
            let mut worst = f64::INFINITY;
            let mut prev = (0.0, l.f(0.0));
            for j in 1..=n {
                let x = j as f64 / n as f64;
                let fx = l.f(x);
                worst = worst.min((fx - prev.1) / (x - prev.0));
                prev = (x, fx);
            }
            rep.push(LemmaRecord::new("branch_slope", k, eps0, worst, 1e-9));
        }
    }

    for (k, b) in traj.branches.iter().enumerate() {
        let lk = &lyaps[k];
        let (is, ss) = lk.endemic();
        let samples = &traj.samples[b.samples.clone()];
        let pts: Vec<(f64, f64)> = samples.iter().map(|p| (p.i, p.s)).collect();
        let vs = lk.values_along(&pts);

        let max_rise = vs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        if max_rise.is_finite() {
            rep.push(LemmaRecord::new("lyapunov_monotone", k, max_rise, 0.0, slack));
        }

        let mut worst: Option<(f64, f64)> = None;
        for p in samples {
            let lhs = lk.v_dot(p.i, p.s);
            let rhs = lk.v_dot_bound(p.s);
            if worst.map_or(true, |(l, r)| rhs - lhs < r - l) {
                worst = Some((lhs, rhs));
            }
        }
        if let Some((l, r)) = worst {
            rep.push(LemmaRecord::new("lyapunov_derivative", k, l, r, slack));
        }

        if let Some(t2) = t2 {
            let mut lower: Option<(f64, f64)> = None;
            let mut upper: Option<(f64, f64)> = None;
            for (p, &v) in samples.iter().zip(&vs) {
                if p.t < t2 {
                    continue;
                }
                let di2 = (p.i - is).powi(2);
                let ds2 = (p.s - ss).powi(2);
                let lo = eps0 * di2 / (2.0 * r_nat) + ds2 / 2.0;
                let hi = r_nat * di2 / (2.0 * cert.i0 * r_int) + ds2 / (2.0 * cert.s0);
                if lower.map_or(true, |(l, r)| v - lo < r - l) {
                    lower = Some((lo, v));
                }
                if upper.map_or(true, |(l, r)| hi - v < r - l) {
                    upper = Some((v, hi));
                }
            }
            if let Some((l, r)) = lower {
                rep.push(LemmaRecord::new("sandwich_lower", k, l, r, slack));
            }
            if let Some((l, r)) = upper {
                rep.push(LemmaRecord::new("sandwich_upper", k, l, r, slack));
            }
        }

        let Some(next) = traj.branches.get(k + 1) else {
            continue;
        };
        let ln = &lyaps[k + 1];
        let arc = Arc {
            k,
            rising: b.direction == Direction::Rising,
            i_k: b.i_start,
            i_next: b.i_end,
            s_next: b.s_end,
            lk,
            ln,
            v_start: v_start[k],
            v_end: *vs.last().unwrap_or(&lk.v(b.i_end, b.s_end)),
            v_next: v_start[k + 1],
        };
        check_arc(&arc, rho, q0, eps0, slack, &mut rep)?;

        // Combined one-switch descent with the uniform constant kappa.
        if t2.is_some_and(|t2| b.t_start >= t2) && eps0 > 0.0 && arc.descent_applies() {
            let lhs = v_start[k + 1] - v_start[k];
            let rhs = -cert.kappa * (is - next.i_start).powi(2);
            rep.push(LemmaRecord::new("kappa_descent", k, lhs, rhs, slack));
        }
    }

    if let Some(t2) = t2 {
        let tail = traj.samples.iter().filter(|p| p.t >= t2);
        let (min_i, min_s) = tail.fold((f64::INFINITY, f64::INFINITY), |(a, b), p| (a.min(p.i), b.min(p.s)));
        if min_i.is_finite() {
            rep.push(LemmaRecord::new("lower_bound_i", 2, cert.i0, min_i, slack));
            rep.push(LemmaRecord::new("lower_bound_s", 2, cert.s0, min_s, slack));
        }
    }

    rep.extend(geometric_decay_check(traj, cert, &v_start, slack));

    for k in [0, lyaps.len() - 1] {
        let c = v_start[k];
        if c > 1e-10 {
            let r = level_set_convexity_check(&lyaps[k], c, 32);
            rep.push(LemmaRecord::new(
                "level_set_convexity",
                k,
                0.0,
                if r.pass { 1.0 } else { -1.0 },
                0.0,
            ));
        }
    }
    Ok(rep)
}

fn check_arc(arc: &Arc, rho: f64, q0: f64, eps0: f64, slack: f64, rep: &mut LemmaReport) -> Result<()> {
    let k = arc.k;
    let (lk, ln) = (arc.lk, arc.ln);
    let (is, ss) = lk.endemic();
    let (isn, ssn) = ln.endemic();
    let gap = arc.i_next - is;
    let side = if arc.rising {
        Direction::Rising
    } else {
        Direction::Falling
    };
    let suffix = if arc.rising { "rising" } else { "falling" };

    // Descent along the arc.
    let extremum = if arc.descent_applies() {
        let s_ext = lk.level_extremum(arc.v_end, side)?;
        let residual = (s_part(ss, s_ext) - arc.v_end).abs();
        rep.push(LemmaRecord::new("level_line_extremum", k, residual, 1e-12 * arc.v_end.max(1.0), 0.0));
        let j = lk.i_part(arc.i_next).max(0.0);
        let rhs = -(rho / 4.0) * gap.abs() * (s_ext * j).sqrt();
        rep.push(LemmaRecord::new(
            &format!("descent_increment_{suffix}"),
            k,
            arc.v_end - arc.v_start,
            rhs,
            slack,
        ));
        Some(s_ext)
    } else {
        None
    };

    // Drift of the branch equilibrium.
    let drift = if arc.rising { is - isn } else { isn - is };
    let ds = if arc.rising { ssn - ss } else { ss - ssn };
    rep.push(LemmaRecord::new("equilibrium_drift_sign", k, 0.0, drift, slack));
    rep.push(LemmaRecord::new("equilibrium_drift_identity", k, (drift - rho * ds).abs(), 1e-12, 0.0));
    let bound = rho * q0 * gap.abs() / (ln.r(isn) * lk.r(is));
    rep.push(LemmaRecord::new("equilibrium_drift_bound", k, drift, bound, slack));

    // Jump between consecutive Lyapunov functions.
    let jump = arc.v_next - arc.v_end;
    let jump_bound = q0 * gap * gap * arc.jump_bracket(q0, rho);
    rep.push(LemmaRecord::new(&format!("branch_jump_{suffix}"), k, jump, jump_bound, slack));
    let alt = jump_decomposition(arc);
    rep.push(LemmaRecord::new("branch_jump_decomposition", k, (alt - jump).abs(), 1e-10, 0.0));

    // Descent across the switch.
    if let (Some(s_ext), true) = (extremum, eps0 > 0.0) {
        let head = if arc.rising {
            (rho / 4.0) * (eps0 * s_ext / (2.0 * lk.f(arc.i_next))).sqrt()
        } else {
            (rho / 4.0) * (eps0 * s_ext / (2.0 * lk.f(is))).sqrt()
        };
        let q = head - q0 * arc.jump_bracket(q0, rho);
        rep.push(LemmaRecord::new(
            &format!("combined_descent_{suffix}"),
            k,
            arc.v_next - arc.v_start,
            -q * gap * gap,
            slack,
        ));
    }
    Ok(())
}

/// Checks `v_k <= v_{k0} p^(k - k0)` from the first switch at or after the
/// second switching moment. Vacuous unless the certificate defines `p`.
pub fn geometric_decay_check(
    traj: &Trajectory,
    cert: &StabilityCertificate,
    v_start: &[f64],
    slack: f64,
) -> LemmaReport {
    let mut rep = LemmaReport::default();
    let Some(p) = cert.p else {
        return rep;
    };
    let k0 = 2;
    if traj.branches.len() <= k0 {
        return rep;
    }
    let v0 = v_start[k0];
    for k in k0..traj.branches.len() {
        let rhs = v0 * p.powi((k - k0) as i32);
        rep.push(LemmaRecord::new("geometric_decay", k, v_start[k], rhs, slack));
    }
    rep
}

/// Switch-point Lyapunov values `v_k = V_k(I_k, S_k)`.
pub fn switch_values(traj: &Trajectory) -> Vec<f64> {
    let params = traj.params();
    traj.branches
        .iter()
        .map(|b| {
            BranchLyapunov::with_endemic(params.branch(&b.memory), params.rho(), b.endemic)
                .v(b.i_start, b.s_start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Density;
    use crate::dynamics::{integrate, IntegratorConfig, SirParams, SirState};
    use crate::preisach::MemoryCurve;
    use std::sync::Arc as StdArc;

    fn constant_lyap() -> BranchLyapunov {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        BranchLyapunov::new(p.branch(&MemoryCurve::virgin()), 0.5)
    }

    fn closed_form(i: f64, s: f64) -> f64 {
        i - 0.25 + s - 0.5 - 0.25 * (i / 0.25).ln() - 0.5 * (s / 0.5).ln()
    }

    #[test]
    fn vanishes_at_equilibrium() {
        let l = constant_lyap();
        assert_eq!(l.endemic(), (0.25, 0.5));
        assert_eq!(l.v(0.25, 0.5), 0.0);
    }

    #[test]
    fn constant_branch_closed_form() {
        let l = constant_lyap();
        for &(i, s) in &[(0.1, 0.8), (0.01, 0.3), (0.6, 0.2), (0.25, 1.0)] {
            assert!((l.v(i, s) - closed_form(i, s)).abs() < 1e-10, "({i}, {s})");
        }
        // Only the S-part survives on I = I*.
        assert!((l.v(0.25, 1.0) - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn positive_away_from_equilibrium() {
        let p = SirParams::new(0.5, StdArc::new(Density::uniform()), 2.0, 1.5).unwrap();
        let l = BranchLyapunov::new(p.branch(&MemoryCurve::risen_to(0.3).unwrap()), 0.5);
        let (is, ss) = l.endemic();
        for a in 1..20 {
            for b in 1..20 {
                let (i, s) = (a as f64 / 20.0, b as f64 / 20.0);
                if (i - is).abs() + (s - ss).abs() > 1e-3 {
                    assert!(l.v(i, s) > 0.0);
                }
            }
        }
    }

    #[test]
    fn incremental_values_match_direct() {
        let p = SirParams::new(0.5, StdArc::new(Density::uniform()), 2.0, 1.5).unwrap();
        let l = BranchLyapunov::new(p.branch(&MemoryCurve::from_extrema(vec![0.7], 0.2).unwrap()), 0.5);
        let pts: Vec<(f64, f64)> = (1..30).map(|j| (j as f64 / 31.0, 0.4 + 0.01 * j as f64)).collect();
        let along = l.values_along(&pts);
        for (v, &(i, s)) in along.iter().zip(&pts) {
            assert!((v - l.v(i, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn level_extremum_residuals() {
        let s_up = level_extremum(0.5, 0.1, Direction::Rising).unwrap();
        let s_dn = level_extremum(0.5, 0.1, Direction::Falling).unwrap();
        assert!(s_up > 0.5 && s_dn < 0.5);
        assert!((s_part(0.5, s_up) - 0.1).abs() < 1e-12);
        assert!((s_part(0.5, s_dn) - 0.1).abs() < 1e-12);
        assert!(level_extremum(0.5, 100.0, Direction::Falling).is_err());
    }

    #[test]
    fn level_sets_are_convex() {
        assert!(level_set_convexity_check(&constant_lyap(), 0.1, 64).pass);
        assert!(level_set_convexity_check(&constant_lyap(), 1e-8, 64).pass);
        let p = SirParams::new(0.5, StdArc::new(Density::uniform()), 2.0, 1.5).unwrap();
        let l = BranchLyapunov::new(p.branch(&MemoryCurve::virgin()), 0.5);
        assert!(level_set_convexity_check(&l, 0.5, 64).pass);
    }

    #[test]
    fn derivative_bound_at_equilibrium() {
        let l = constant_lyap();
        assert_eq!(l.v_dot(0.25, 0.5), 0.0);
        assert_eq!(l.v_dot_bound(0.5), 0.0);
    }

    #[test]
    fn classical_run_passes_every_check() {
        let p = SirParams::classical(2.0, 0.5).unwrap();
        let tr = integrate(&p, &SirState::virgin(0.01, 0.98).unwrap(), &IntegratorConfig::default()).unwrap();
        let cert = crate::certify::compute_certificate(&p).unwrap();
        let rep = verify_trajectory(&tr, &cert, SLACK).unwrap();
        assert!(rep.all_pass(), "{:#?}", rep.failures());
        assert!(rep.count("equilibrium_drift_sign") > 0);
        for r in rep.records.iter().filter(|r| r.lemma == "branch_jump_rising") {
            assert!(r.lhs.abs() < 1e-12);
        }
    }

    #[test]
    fn report_json_shape() {
        let mut rep = LemmaReport::default();
        rep.push(LemmaRecord::new("x", 3, 1.0, 2.0, 0.0));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        let r = &v.as_array().unwrap()[0];
        for key in ["lemma", "k", "lhs", "rhs", "margin", "pass"] {
            assert!(r.get(key).is_some());
        }
        assert_eq!(r["margin"], 1.0);
    }
}
