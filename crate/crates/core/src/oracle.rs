//! Brute-force reference implementations used by tests.
//!
//! Nothing here shares code with the memory-curve operator, the adaptive
//! integrator or the segment solver. Hysteresis is simulated relay by relay,
//! integrals are nested adaptive Simpson rules and time stepping is classical
//! fixed-step RK4.

use crate::density::Density;
use crate::dynamics::{SirParams, SirState};
use crate::relay::{RelayState, ThresholdPair};

/// A finite family of independent relays with weights summing to one.
#[derive(Debug, Clone)]
pub struct RelayEnsemble {
    relays: Vec<RelayState>,
    weights: Vec<f64>,
    input: f64,
}

impl RelayEnsemble {
    /// Virgin ensemble at input 0. Atomic densities are enumerated exactly;
    /// otherwise relays sit at the centroids of the `n x n` grid cells inside
    /// the triangle (half cells on the diagonal), weighted by density times
    /// area.
    pub fn virgin(density: &Density, n: usize) -> Self {
        assert!(n >= 2, "grid needs at least two cells per axis");
        let mut pairs = Vec::new();
        if let Some(atoms) = density.atoms() {
            pairs.extend(atoms.iter().copied());
        } else {
            let h = 1.0 / n as f64;
            for i in 0..n {
                let x = i as f64 * h;
                let (a1, a2) = (x + h / 3.0, x + 2.0 * h / 3.0);
                let q = density.value_at(a1, a2).unwrap_or(0.0);
                pairs.push((ThresholdPair::new(a1, a2).expect("diagonal centroid"), q * h * h / 2.0));
                for j in i + 1..n {
                    let (a1, a2) = (x + h / 2.0, j as f64 * h + h / 2.0);
                    let q = density.value_at(a1, a2).unwrap_or(0.0);
                    pairs.push((ThresholdPair::new(a1, a2).expect("cell centroid"), q * h * h));
                }
            }
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let relays = pairs
            .iter()
            .map(|(t, _)| RelayState::init(*t, 0.0, Some(false)).expect("relay off at zero"))
            .collect();
        let weights = pairs.iter().map(|p| p.1 / total).collect();
        Self {
            relays,
            weights,
            input: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn input(&self) -> f64 {
        self.input
    }

    /// Moves every relay monotonically to `to`.
    pub fn advance(&mut self, to: f64) {
        for r in &mut self.relays {
            *r = r.advance(to);
        }
        self.input = to;
    }

    /// Follows a piecewise-monotone program starting from the current input.
    pub fn follow(&mut self, program: &[f64]) {
        for &x in program {
            self.advance(x);
        }
    }

    /// Weight of relays that are ON.
    pub fn on_mass(&self) -> f64 {
        self.relays
            .iter()
            .zip(&self.weights)
            .filter(|(r, _)| r.is_on())
            .map(|(_, w)| w)
            .sum()
    }

    /// ON weight after a monotone move to `x`, without committing it.
    pub fn on_mass_at(&self, x: f64) -> f64 {
        self.relays
            .iter()
            .zip(&self.weights)
            .filter(|(r, _)| r.thresholds().forced_state(x).unwrap_or(r.is_on()))
            .map(|(_, w)| w)
            .sum()
    }

    /// Threshold values crossed by a monotone move from the current input to
    /// `x` that change some relay.
    fn switches_towards(&self, x: f64) -> bool {
        self.relays
            .iter()
            .any(|r| r.thresholds().forced_state(x).is_some_and(|on| on != r.is_on()))
    }
}

/// Output after following `program` from the virgin state, computed from an
/// ensemble of independent relays.
pub fn ensemble_output(density: &Density, r0_nat: f64, r0_int: f64, n: usize, program: &[f64]) -> f64 {
    let mut e = RelayEnsemble::virgin(density, n);
    e.follow(program);
    r0_nat - (r0_nat - r0_int) * e.on_mass()
}

/// Composite adaptive Simpson rule.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    // Uniform pre-splitting so piecewise-constant densities are resolved.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let xm = 0.5 * (x0 + x1);
            let (f0, fm, f1) = (f(x0), f(xm), f(x1));
            rec(f, x0, x1, f0, fm, f1, (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1), tol / pieces as f64, 30)
        })
        .sum()
}

/// Mass of relays forced ON at input `x` (`alpha2 <= x`).
fn forced_on_mass(density: &Density, x: f64) -> f64 {
    if let Some(atoms) = density.atoms() {
        return atoms.iter().filter(|(t, _)| t.alpha2() <= x).map(|(_, w)| w).sum();
    }
    let inner = |a2: f64| simpson(&|a1: f64| density.value_at(a1, a2).unwrap_or(0.0), 0.0, a2, 1e-14);
    simpson(&inner, 0.0, x, 1e-13)
}

/// Mass of relays that can be ON at input `x` (`alpha1 < x`).
fn possible_on_mass(density: &Density, x: f64) -> f64 {
    if let Some(atoms) = density.atoms() {
        return atoms.iter().filter(|(t, _)| t.alpha1() < x).map(|(_, w)| w).sum();
    }
    let inner = |a1: f64| simpson(&|a2: f64| density.value_at(a1, a2).unwrap_or(0.0), a1, 1.0, 1e-14);
    simpson(&inner, 0.0, x, 1e-13)
}

/// Endemic equilibria found by scanning a uniform grid in `I`.
#[derive(Debug, Clone)]
pub struct SegmentScan {
    pub i_lo: f64,
    pub i_hi: f64,
    /// Grid values of `I` that admit an endemic equilibrium.
    pub points: Vec<f64>,
    /// Whether the admitted grid values form one contiguous run.
    pub connected: bool,
}

/// Scans `grid` points of `(0, rho)` for inputs where some memory state gives
/// `R(I) (1 - I/rho) = 1`, then refines both ends by bisection.
pub fn dense_segment_scan(params: &SirParams, grid: usize) -> SegmentScan {
    let rho = params.rho();
    let nat = params.r0_nat();
    let delta = nat - params.r0_int();
    let density = params.density();
    let h_max = |i: f64| (nat - delta * forced_on_mass(density, i)) * (1.0 - i / rho) - 1.0;
    let h_min = |i: f64| (nat - delta * possible_on_mass(density, i)) * (1.0 - i / rho) - 1.0;

    let xs: Vec<f64> = (1..grid).map(|k| rho * k as f64 / grid as f64).collect();
    let lo_vals: Vec<f64> = xs.iter().map(|&x| h_min(x)).collect();
    let hi_vals: Vec<f64> = xs.iter().map(|&x| h_max(x)).collect();
    let admitted: Vec<bool> = lo_vals.iter().zip(&hi_vals).map(|(a, b)| *a <= 0.0 && *b >= 0.0).collect();
    let points: Vec<f64> = xs.iter().zip(&admitted).filter(|p| *p.1).map(|p| *p.0).collect();
    let runs = admitted.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(admitted[0]);

    let refine = |vals: &[f64], h: &dyn Fn(f64) -> f64| {
        let k = vals.iter().position(|v| *v <= 0.0).expect("sign change below rho");
        let (mut a, mut b) = if k == 0 { (0.0, xs[0]) } else { (xs[k - 1], xs[k]) };
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if h(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    SegmentScan {
        i_lo: refine(&lo_vals, &h_min),
        i_hi: refine(&hi_vals, &h_max),
        points,
        connected: runs == 1,
    }
}

/// Trajectory produced by the fixed-step oracle.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub t: Vec<f64>,
    pub i: Vec<f64>,
    pub s: Vec<f64>,
    pub r0: Vec<f64>,
    /// Times where `I` changes direction.
    pub reversal_times: Vec<f64>,
}

impl OracleRun {
    pub fn final_state(&self) -> (f64, f64) {
        (*self.i.last().unwrap(), *self.s.last().unwrap())
    }
}

/// Classical RK4 with step `dt`, using a relay ensemble (`n` cells per axis,
/// exact for atomic densities) for the transmission rate. Steps in which `I`
/// reverses, or an atomic relay switches, are cut at the event by bisection.
pub fn fixed_step_integrate(params: &SirParams, initial: &SirState, n: usize, dt: f64, t_max: f64) -> OracleRun {
    let rho = params.rho();
    let nat = params.r0_nat();
    let delta = nat - params.r0_int();
    let atomic = params.density().is_atomic();
    let mut ens = RelayEnsemble::virgin(params.density(), n);
    let mut program: Vec<f64> = initial.memory.extrema().to_vec();
    program.push(initial.memory.current());
    ens.follow(&program);

    // Atomic switches are cut as events, so stages use the committed state.
    let rate = |e: &RelayEnsemble, i: f64| nat - delta * if atomic { e.on_mass() } else { e.on_mass_at(i) };
    let field = |e: &RelayEnsemble, y: [f64; 2]| {
        let r = rate(e, y[0]);
        [(r * y[1] - 1.0) * y[0], rho * (1.0 - y[1]) - r * y[0] * y[1]]
    };
    let rk4 = |e: &RelayEnsemble, y: [f64; 2], h: f64| {
        let k1 = field(e, y);
        let k2 = field(e, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = field(e, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = field(e, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };

    let mut y = [initial.i, initial.s];
    let mut t = 0.0;
    let mut run = OracleRun {
        t: vec![t],
        i: vec![y[0]],
        s: vec![y[1]],
        r0: vec![rate(&ens, y[0])],
        reversal_times: Vec::new(),
    };
    let mut dir = field(&ens, y)[0].signum();
    while t < t_max {
        let h = dt.min(t_max - t);
        let y1 = rk4(&ens, y, h);
        let reverses = (y1[0] - y[0]) * dir < 0.0 || field(&ens, y1)[0] * dir < 0.0;
        let switches = atomic && ens.switches_towards(y1[0]);
        let mut reversed = false;
        let (h, y1) = if reverses || switches {
            // Shortest step that reaches the event.
            let hits = |z: [f64; 2]| field(&ens, z)[0] * dir <= 0.0;
            let event = |hh: f64| {
                let z = rk4(&ens, y, hh);
                (reverses && hits(z)) || (switches && ens.switches_towards(z[0]))
            };
            let (mut a, mut b) = (0.0, h);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if event(m) {
                    b = m;
                } else {
                    a = m;
                }
            }
            let z = rk4(&ens, y, b);
            reversed = reverses && hits(z);
            (b, z)
        } else {
            (h, y1)
        };
        t += h;
        y = y1;
        ens.advance(y[0]);
        if reversed {
            run.reversal_times.push(t);
            dir = -dir;
        }
        run.t.push(t);
        run.i.push(y[0]);
        run.s.push(y[1]);
        run.r0.push(rate(&ens, y[0]));
    }
    run
}
