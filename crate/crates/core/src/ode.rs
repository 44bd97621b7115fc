//! Dormand–Prince 5(4) stepper with continuous extension.
//!
//! The stepper does not own the right-hand side, so callers can swap the
//! vector field between steps (after calling [`Dopri5::restart`]).

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            h_max: f64::INFINITY,
        }
    }
}

/// One accepted step with its interpolant.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    k1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> Step<N> {
    /// Interpolated state at `t` in `[t0, t1]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.y0;
        }
        let s = (t - self.t0) / h;
        let s1 = 1.0 - s;
        let r = &self.rcont;
        std::array::from_fn(|i| {
            r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])))
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dopri5<const N: usize> {
    tol: Tolerances,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    fac_old: f64,
    evals: usize,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

impl<const N: usize> Dopri5<N> {
    pub fn new<F>(f: &mut F, t0: f64, y0: [f64; N], tol: Tolerances) -> Self
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let k1 = f(t0, &y0);
        let mut s = Self {
            tol,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            fac_old: 1e-4,
            evals: 1,
        };
        s.h = s.initial_step(f);
        s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> [f64; N] {
        self.y
    }

    pub fn evaluations(&self) -> usize {
        self.evals
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tol
    }

    pub fn set_tolerances(&mut self, tol: Tolerances) {
        self.tol = tol;
    }

    fn scale(&self, a: &[f64; N], b: &[f64; N], i: usize) -> f64 {
        self.tol.atol + self.tol.rtol * a[i].abs().max(b[i].abs())
    }

    fn initial_step<F>(&mut self, f: &mut F) -> f64
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let (y, k1) = (self.y, self.k1);
        let norm = |v: &[f64; N], s: &Self| {
            (0..N)
                .map(|i| (v[i] / s.scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                / N as f64
        };
        let d0 = norm(&y, self).sqrt();
        let d1 = norm(&k1, self).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.tol.h_max);
        let y1 = axpy(&y, h0, &[(1.0, &k1)]);
        let k2 = f(self.t + h0, &y1);
        self.evals += 1;
        let diff: [f64; N] = std::array::from_fn(|i| k2[i] - k1[i]);
        let d2 = norm(&diff, self).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.tol.h_max)
    }

    /// Resets the state, e.g. after a switch of the vector field. The current
    /// step size suggestion is kept.
    pub fn restart<F>(&mut self, f: &mut F, t: f64, y: [f64; N])
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        self.t = t;
        self.y = y;
        self.k1 = f(t, &y);
        self.evals += 1;
        self.fac_old = 1e-4;
        if !(self.h > 0.0) {
            self.h = self.initial_step(f);
        }
    }

    /// Rewinds to the start of `step` so it can be retaken with a shorter
    /// horizon.
    pub fn rewind(&mut self, step: &Step<N>) {
        self.t = step.t0;
        self.y = step.y0;
        self.k1 = step.k1;
    }

    /// Takes one accepted step, never passing `t_end`.
    pub fn step<F>(&mut self, f: &mut F, t_end: f64) -> Result<Step<N>>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let mut h = self.h.min(self.tol.h_max);
        loop {
            let remaining = t_end - self.t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if !(h > 1e-14 * self.t.abs().max(1.0)) && !last {
                return Err(Error::StepFailure { t: self.t });
            }
            let (t, y, k1) = (self.t, self.y, self.k1);
            let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
            let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + h,
                &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y1 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let t1 = if last { t_end } else { t + h };
            let k7 = f(t1, &y1);
            self.evals += 6;

            if y1.iter().chain(k7.iter()).any(|v| !v.is_finite()) {
                if h > 1e-14 * t.abs().max(1.0) {
                    h *= 0.25;
                    continue;
                }
                return Err(Error::NonFiniteState { t });
            }

            let err = {
                let sum: f64 = (0..N)
                    .map(|i| {
                        let e = h
                            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                        (e / self.scale(&y, &y1, i)).powi(2)
                    })
                    .sum();
                (sum / N as f64).sqrt()
            };

            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let fac = (fac11 / self.fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.fac_old = err.max(1e-4);
                let ydiff: [f64; N] = std::array::from_fn(|i| y1[i] - y[i]);
                let bspl: [f64; N] = std::array::from_fn(|i| h * k1[i] - ydiff[i]);
                let r4: [f64; N] = std::array::from_fn(|i| ydiff[i] - h * k7[i] - bspl[i]);
                let r5: [f64; N] = std::array::from_fn(|i| {
                    h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                });
                let step = Step {
                    t0: t,
                    t1,
                    y0: y,
                    y1,
                    k1,
                    rcont: [y, ydiff, bspl, r4, r5],
                };
                // Keep the controller's suggestion even when the step was
                // clipped to t_end.
                let suggested = (h / fac).min(self.tol.h_max);
                if !last || suggested > self.h {
                    self.h = suggested;
                }
                self.t = t1;
                self.y = y1;
                self.k1 = k7;
                return Ok(step);
            }
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_to<const N: usize, F>(f: &mut F, y0: [f64; N], t_end: f64, tol: Tolerances) -> [f64; N]
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let mut s = Dopri5::new(f, 0.0, y0, tol);
        while s.t() < t_end {
            s.step(f, t_end).unwrap();
        }
        s.y()
    }

    #[test]
    fn exponential_decay() {
        let mut f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let y = integrate_to(&mut f, [1.0], 5.0, Tolerances::default());
        assert!((y[0] - (-5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let mut f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let t = 2.0 * std::f64::consts::PI;
        let y = integrate_to(&mut f, [1.0, 0.0], t, Tolerances::default());
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn dense_output_matches_solution() {
        let mut f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let mut s = Dopri5::new(&mut f, 0.0, [1.0, 0.0], Tolerances { rtol: 1e-8, atol: 1e-12, h_max: 0.5 });
        while s.t() < 3.0 {
            let st = s.step(&mut f, 3.0).unwrap();
            for j in 0..=10 {
                let t = st.t0 + (st.t1 - st.t0) * j as f64 / 10.0;
                let y = st.eval(t);
                assert!((y[0] - t.cos()).abs() < 1e-7, "t = {t}");
            }
        }
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let mut f = |_t: f64, y: &[f64; 1]| [y[0] * (1.0 - y[0])];
        let exact = 1.0 / (1.0 + 9.0 * (-4f64).exp());
        let loose = integrate_to(&mut f, [0.1], 4.0, Tolerances { rtol: 1e-5, atol: 1e-8, h_max: 1.0 });
        let tight = integrate_to(&mut f, [0.1], 4.0, Tolerances { rtol: 1e-11, atol: 1e-14, h_max: 1.0 });
        assert!((tight[0] - exact).abs() < (loose[0] - exact).abs().max(1e-13));
        assert!((tight[0] - exact).abs() < 1e-10);
    }
}
