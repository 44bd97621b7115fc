//! Explicit global-stability certificate.
//!
//! The constants chain `q0 -> eps0 -> (s0, i0) -> kappa -> (a, b) -> p` is
//! evaluated in double-double arithmetic: `i0` can be far below `1e-20` and
//! divides the negative part of `kappa`, so plain doubles can flip its sign.

use serde::Serialize;

use crate::dd::DD;
use crate::dynamics::SirParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub r0_nat: f64,
    pub r0_int: f64,
    pub rho: f64,
    pub sup_q: f64,
    pub density_strictly_positive: bool,
    pub q0: f64,
    pub eps0: f64,
    pub i0: f64,
    pub s0: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    /// Decay ratio, defined only when `kappa > 0`.
    pub p: Option<f64>,
    pub verdict: Verdict,
    /// Largest hysteresis width `R0_nat - R0_int` with `kappa > 0`.
    pub delta_star: Option<f64>,
}

/// Raw constants in double-double precision.
#[derive(Debug, Clone, Copy)]
pub struct Constants {
    pub q0: DD,
    pub eps0: DD,
    pub i0: DD,
    pub s0: DD,
    pub kappa: DD,
    pub a: DD,
    pub b: DD,
}

impl Constants {
    pub fn p(&self) -> Option<DD> {
        (self.kappa > DD::ZERO).then(|| {
            let ab = self.a + self.b;
            ab / (ab + self.kappa)
        })
    }
}

/// Evaluates the constants for `R0_nat`, `R0_int = R0_nat - delta`, `rho`
/// and the density supremum. For `eps0 <= 0` the square-root term of
/// `kappa` is taken as zero.
pub fn constants(r0_nat: f64, delta: DD, rho: f64, sup_q: f64) -> Constants {
    let nat = DD::new(r0_nat);
    let int = nat - delta;
    let rho = DD::new(rho);
    let one = DD::ONE;
    let two = DD::new(2.0);

    let q0 = if delta.hi == 0.0 {
        DD::ZERO
    } else {
        delta * DD::new(sup_q)
    };
    let eps0 = int - q0;
    let s0 = (-(one + two * nat)).exp() / nat;
    let int_m1 = int - one;
    let i0 = rho * (int_m1 / int) * (-((two / (rho * int_m1) + one / int) * nat)).exp();

    let first = if eps0 > DD::ZERO {
        rho / DD::new(4.0) * (eps0 * s0 / (two * nat)).sqrt()
    } else {
        DD::ZERO
    };
    let int2 = int * int;
    let int3 = int2 * int;
    let bracket = rho * rho * q0 / int3 + rho * nat / int2 + one;
    let kappa = first - q0 / (i0 * int) * bracket;

    let a = nat / (two * i0 * int) + q0 / (two * s0 * int2);
    let b = q0 / int * (rho * rho * q0 / (i0 * int3) + rho / (i0 * int) + one);
    Constants {
        q0,
        eps0,
        i0,
        s0,
        kappa,
        a,
        b,
    }
}

/// `kappa` as a function of the hysteresis width.
pub fn kappa_at(r0_nat: f64, delta: f64, rho: f64, sup_q: f64) -> f64 {
    if sup_q.is_infinite() && delta > 0.0 {
        return f64::NEG_INFINITY;
    }
    constants(r0_nat, DD::new(delta), rho, sup_q).kappa.to_f64()
}

fn check_hypotheses(r0_nat: f64, r0_int: f64) -> Result<()> {
    if !(r0_int > 1.0) || !(r0_nat >= r0_int) {
        return Err(Error::InvalidHypotheses(format!(
            "need R0_nat >= R0_int > 1, got R0_nat = {r0_nat}, R0_int = {r0_int}"
        )));
    }
    Ok(())
}

/// Largest `delta` in `(0, R0_nat - 1)` with `kappa > 0`, to relative
/// tolerance `rel_tol`. The threshold is often many orders of magnitude below
/// one, so the bracket is searched and bisected geometrically.
pub fn delta_threshold(r0_nat: f64, rho: f64, sup_q: f64, rel_tol: f64) -> Result<f64> {
    check_hypotheses(r0_nat, r0_nat)?;
    if !(constants(r0_nat, DD::ZERO, rho, sup_q).kappa > DD::ZERO) || sup_q.is_infinite() {
        return Err(Error::NoCertifiedInterval);
    }
    let kappa = |d: f64| kappa_at(r0_nat, d, rho, sup_q);
    let top = r0_nat - 1.0;
    if kappa(top * (1.0 - 1e-12)) > 0.0 {
        return Ok(top);
    }
    let mut hi = top;
    let mut lo = top * 0.5;
    while kappa(lo) <= 0.0 {
        hi = lo;
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoCertifiedInterval);
        }
    }
    while hi / lo - 1.0 > rel_tol {
        let mid = (lo * hi).sqrt();
        if kappa(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

pub fn compute_certificate(params: &SirParams) -> Result<StabilityCertificate> {
    let (r0_nat, r0_int, rho) = (params.r0_nat(), params.r0_int(), params.rho());
    check_hypotheses(r0_nat, r0_int)?;
    let density = params.density();
    let sup_q = density.sup_q();
    let delta = DD::new(r0_nat) - DD::new(r0_int);
    let delta_star = delta_threshold(r0_nat, rho, sup_q, 1e-12).ok();
    let strictly_positive = density.is_strictly_positive();

    if sup_q.is_infinite() && delta.hi > 0.0 {
        return Ok(StabilityCertificate {
            r0_nat,
            r0_int,
            rho,
            sup_q,
            density_strictly_positive: strictly_positive,
            q0: f64::INFINITY,
            eps0: f64::NEG_INFINITY,
            i0: constants(r0_nat, delta, rho, 0.0).i0.to_f64(),
            s0: constants(r0_nat, delta, rho, 0.0).s0.to_f64(),
            kappa: f64::NEG_INFINITY,
            a: f64::INFINITY,
            b: f64::INFINITY,
            p: None,
            verdict: Verdict::NotCertified,
            delta_star,
        });
    }

    let c = constants(r0_nat, delta, rho, sup_q);
    let certified = c.eps0 > DD::ZERO && c.kappa > DD::ZERO;
    Ok(StabilityCertificate {
        r0_nat,
        r0_int,
        rho,
        sup_q,
        density_strictly_positive: strictly_positive,
        q0: c.q0.to_f64(),
        eps0: c.eps0.to_f64(),
        i0: c.i0.to_f64(),
        s0: c.s0.to_f64(),
        kappa: c.kappa.to_f64(),
        a: c.a.to_f64(),
        b: c.b.to_f64(),
        p: c.p().map(DD::to_f64),
        verdict: if certified {
            Verdict::Certified
        } else {
            Verdict::NotCertified
        },
        delta_star,
    })
}
