//! Double-double arithmetic (about 106 bits of significand).
//!
//! Only the operations needed by the certificate constants are provided.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DD = DD {
    hi: 6.931471805599452862e-01,
    lo: 2.319046813846299558e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const ZERO: DD = DD { hi: 0.0, lo: 0.0 };
    pub const ONE: DD = DD { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        DD { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        DD { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    pub fn recip(self) -> Self {
        DD::ONE / self
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    pub fn scale(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        DD {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DD::new(self.hi.sqrt());
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = DD::new(self.hi * x);
        let diff = (self - ax.sqr()).hi * (x * 0.5);
        ax + DD::new(diff)
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DD::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DD::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * DD::new(k)).scale(-10);
        // Taylor series of exp(r) - 1.
        let mut term = r;
        let mut sum = r;
        for n in 2..30 {
            term = term * r / DD::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s), repeated, keeps the small part exact.
        for _ in 0..10 {
            sum = sum * (sum + DD::new(2.0));
        }
        (sum + DD::ONE).scale(k as i32)
    }
}

impl From<f64> for DD {
    fn from(x: f64) -> Self {
        DD::new(x)
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, b: DD) -> DD {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DD::renorm(s, e + f)
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, b: DD) -> DD {
        self + (-b)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, b: DD) -> DD {
        let (p, e) = two_prod(self.hi, b.hi);
        DD::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, b: DD) -> DD {
        let q1 = self.hi / b.hi;
        let r = self - b * DD::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DD::new(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DD { hi: q1, lo: q2 } + DD::new(q3)
    }
}

impl PartialOrd for DD {
    fn partial_cmp(&self, other: &DD) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: DD, b: DD) -> f64 {
        ((a - b) / b).to_f64().abs()
    }

    fn dd(hi: f64, lo: f64) -> DD {
        DD::renorm(hi, lo)
    }

    /// Parses a decimal string into a double-double.
    fn parse(s: &str) -> DD {
        let (mant, exp) = match s.split_once('e') {
            Some((m, e)) => (m, e.parse::<i32>().unwrap()),
            None => (s, 0),
        };
        let neg = mant.starts_with('-');
        let mant = mant.trim_start_matches('-');
        let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
        let mut v = DD::ZERO;
        for c in int.chars().chain(frac.chars()) {
            v = v * DD::new(10.0) + DD::new(c.to_digit(10).unwrap() as f64);
        }
        let e = exp - frac.len() as i32;
        let ten = DD::new(10.0);
        for _ in 0..e.unsigned_abs() {
            v = if e >= 0 { v * ten } else { v / ten };
        }
        if neg {
            -v
        } else {
            v
        }
    }

    #[test]
    fn exact_sum_keeps_low_part() {
        let a = DD::new(1.0) + DD::new(1e-20);
        assert_eq!(a.hi, 1.0);
        assert_eq!(a.lo, 1e-20);
        assert_eq!((a - DD::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn division_and_sqrt_roundtrip() {
        let x = DD::new(2.0).sqrt();
        assert!(rel(x * x, DD::new(2.0)) < 1e-31);
        let third = DD::ONE / DD::new(3.0);
        assert!(rel(third * DD::new(3.0), DD::ONE) < 1e-31);
    }

    #[test]
    fn exp_matches_reference_values() {
        let cases = [
            (-61.0, "3.22134028599251608900124777585e-27"),
            (-11.3, "1.23729242617882217256353034916e-5"),
            (-4.6, "0.0100518357446335852132625290331"),
            (0.5, "1.64872127070012814684865078781"),
            (3.7, "40.44730436006739771377876277"),
            (1e-5, "1.00001000005000016666790137289"),
        ];
        for (x, want) in cases {
            let got = DD::new(x).exp();
            assert!(rel(got, parse(want)) < 1e-26, "exp({x})");
        }
        let tiny = DD::new(-700.0).exp();
        assert!(rel(tiny, parse("9.85967654375977085670537294785e-305")) < 1e-15);
    }

    #[test]
    fn ordering_uses_low_part() {
        assert!(dd(1.0, 1e-20) > DD::ONE);
        assert!(dd(1.0, -1e-20) < DD::ONE);
    }
}
