//! Weight measures on the Preisach triangle `0 <= alpha1 < alpha2 <= 1`.
//!
//! Every density is consumed through its corner-cumulative integral
//! `G(a, b)`, the mass of `{alpha1 < a, alpha2 <= b}` inside the triangle.
//! The ON region of any staircase state is a disjoint union of sets of that
//! shape, so one function is enough for output evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relay::ThresholdPair;

/// One atom of a discrete Preisach model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicRelay {
    pub a1: f64,
    pub a2: f64,
    pub w: f64,
}

/// User-facing density description, as found in scenario configs.
///
/// Grid values are piecewise constant on the cells of an `nx x ny` grid over
/// the unit square; `values[i * ny + j]` is the value on
/// `[i/nx, (i+1)/nx] x [j/ny, (j+1)/ny]` in `(alpha1, alpha2)`. Only the part
/// of each cell inside the triangle carries mass; values are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform {},
    Grid {
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    },
    Atomic {
        relays: Vec<AtomicRelay>,
    },
}

#[derive(Debug, Clone)]
enum Backend {
    Uniform,
    Grid(GridDensity),
    Atomic(Vec<(ThresholdPair, f64)>),
}

#[derive(Debug, Clone)]
pub struct Density {
    spec: DensitySpec,
    backend: Backend,
    sup_q: f64,
    strictly_positive: bool,
}

impl Density {
    pub fn uniform() -> Self {
        Self {
            spec: DensitySpec::Uniform {},
            backend: Backend::Uniform,
            sup_q: 2.0,
            strictly_positive: true,
        }
    }

    pub fn from_spec(spec: &DensitySpec) -> Result<Self> {
        match spec {
            DensitySpec::Uniform {} => Ok(Self::uniform()),
            DensitySpec::Grid { nx, ny, values } => {
                let grid = GridDensity::new(*nx, *ny, values)?;
                let sup_q = grid.sup;
                let strictly_positive = grid.min_in_triangle > 0.0;
                Ok(Self {
                    spec: spec.clone(),
                    backend: Backend::Grid(grid),
                    sup_q,
                    strictly_positive,
                })
            }
            DensitySpec::Atomic { relays } => {
                if relays.is_empty() {
                    return Err(Error::InvalidDensity("atomic density has no relays".into()));
                }
                let mut atoms = Vec::with_capacity(relays.len());
                let mut total = 0.0;
                for r in relays {
                    let t = ThresholdPair::new(r.a1, r.a2)
                        .map_err(|e| Error::InvalidDensity(e.to_string()))?;
                    if !(r.w.is_finite() && r.w > 0.0) {
                        return Err(Error::InvalidDensity(format!(
                            "atomic weight {} must be positive",
                            r.w
                        )));
                    }
                    total += r.w;
                    atoms.push((t, r.w));
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidDensity(format!(
                        "atomic weights sum to {total}, expected 1"
                    )));
                }
                for a in &mut atoms {
                    a.1 /= total;
                }
                Ok(Self {
                    spec: spec.clone(),
                    backend: Backend::Atomic(atoms),
                    sup_q: f64::INFINITY,
                    strictly_positive: false,
                })
            }
        }
    }

    /// A single relay with unit weight (the homogeneous switching model).
    pub fn single_relay(alpha1: f64, alpha2: f64) -> Result<Self> {
        Self::from_spec(&DensitySpec::Atomic {
            relays: vec![AtomicRelay {
                a1: alpha1,
                a2: alpha2,
                w: 1.0,
            }],
        })
    }

    pub fn spec(&self) -> &DensitySpec {
        &self.spec
    }

    /// Supremum of the density; infinite for atomic measures.
    pub fn sup_q(&self) -> f64 {
        self.sup_q
    }

    /// Whether the density is bounded and strictly positive on the triangle.
    pub fn is_strictly_positive(&self) -> bool {
        self.strictly_positive
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.backend, Backend::Atomic(_))
    }

    /// Threshold pairs and weights of an atomic density.
    pub fn atoms(&self) -> Option<&[(ThresholdPair, f64)]> {
        match &self.backend {
            Backend::Atomic(a) => Some(a),
            _ => None,
        }
    }

    /// Pointwise density value inside the triangle; `None` for atomic measures.
    pub fn value_at(&self, alpha1: f64, alpha2: f64) -> Option<f64> {
        if self.is_atomic() {
            return None;
        }
        if !(0.0..=1.0).contains(&alpha1) || !(0.0..=1.0).contains(&alpha2) || alpha1 >= alpha2 {
            return Some(0.0);
        }
        match &self.backend {
            Backend::Uniform => Some(2.0),
            Backend::Grid(g) => Some(g.value_at(alpha1, alpha2)),
            Backend::Atomic(_) => None,
        }
    }

    /// Input values at which a branch output may jump or kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.backend {
            Backend::Atomic(atoms) => {
                let mut v: Vec<f64> = atoms
                    .iter()
                    .flat_map(|(t, _)| [t.alpha1(), t.alpha2()])
                    .collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
            _ => Vec::new(),
        }
    }

    /// `G(a, b)`: mass of `{alpha1 < a, alpha2 <= b}` within the triangle.
    pub fn corner_cumulative(&self, a: f64, b: f64) -> f64 {
        let b = b.clamp(0.0, 1.0);
        let a = a.clamp(0.0, 1.0).min(b);
        match &self.backend {
            Backend::Uniform => 2.0 * a * b - a * a,
            Backend::Grid(g) => g.corner_cumulative(a, b),
            Backend::Atomic(atoms) => atoms
                .iter()
                .filter(|(t, _)| t.alpha1() < a && t.alpha2() <= b)
                .map(|(_, w)| w)
                .sum(),
        }
    }
}

/// Piecewise-constant density with exact cumulative integrals.
///
/// For column `i` the function `C_i(y)` integrates the column profile in
/// `alpha2` and `D_i(y)` integrates `C_i`; both are tabulated at the knots so
/// `G` costs one pass over the columns.
#[derive(Debug, Clone)]
struct GridDensity {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    c_knots: Vec<f64>,
    d_knots: Vec<f64>,
    sup: f64,
    min_in_triangle: f64,
}

impl GridDensity {
    fn new(nx: usize, ny: usize, raw: &[f64]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidDensity("grid dimensions must be positive".into()));
        }
        if raw.len() != nx * ny {
            return Err(Error::InvalidDensity(format!(
                "grid has {} values, expected nx * ny = {}",
                raw.len(),
                nx * ny
            )));
        }
        if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDensity(format!(
                "grid value {v} must be finite and nonnegative"
            )));
        }
        let mut g = Self {
            nx,
            ny,
            values: raw.to_vec(),
            c_knots: Vec::new(),
            d_knots: Vec::new(),
            sup: 0.0,
            min_in_triangle: 0.0,
        };
        g.tabulate();
        let total = g.corner_cumulative(1.0, 1.0);
        if !(total > 0.0) {
            return Err(Error::InvalidDensity(
                "grid density has no mass inside the triangle".into(),
            ));
        }
        for v in &mut g.values {
            *v /= total;
        }
        g.tabulate();

        let mut sup: f64 = 0.0;
        let mut min = f64::INFINITY;
        for i in 0..nx {
            for j in 0..ny {
                if g.cell_meets_triangle(i, j) {
                    let v = g.values[i * ny + j];
                    sup = sup.max(v);
                    min = min.min(v);
                }
            }
        }
        g.sup = sup;
        g.min_in_triangle = min;
        Ok(g)
    }

    fn cell_meets_triangle(&self, i: usize, j: usize) -> bool {
        (i as f64) / (self.nx as f64) < (j + 1) as f64 / (self.ny as f64)
    }

    fn tabulate(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let h = 1.0 / ny as f64;
        self.c_knots = vec![0.0; nx * (ny + 1)];
        self.d_knots = vec![0.0; nx * (ny + 1)];
        for i in 0..nx {
            let base = i * (ny + 1);
            for j in 0..ny {
                let v = self.values[i * ny + j];
                let c = self.c_knots[base + j];
                self.c_knots[base + j + 1] = c + v * h;
                self.d_knots[base + j + 1] = self.d_knots[base + j] + c * h + 0.5 * v * h * h;
            }
        }
    }

    fn column_cd(&self, i: usize, y: f64) -> (f64, f64) {
        let ny = self.ny;
        let j = ((y * ny as f64) as usize).min(ny - 1);
        let dy = y - j as f64 / ny as f64;
        let base = i * (ny + 1);
        let v = self.values[i * ny + j];
        let c0 = self.c_knots[base + j];
        (c0 + v * dy, self.d_knots[base + j] + c0 * dy + 0.5 * v * dy * dy)
    }

    fn corner_cumulative(&self, a: f64, b: f64) -> f64 {
        let upper = a.min(b);
        let w = 1.0 / self.nx as f64;
        let mut total = 0.0;
        for i in 0..self.nx {
            let x0 = i as f64 * w;
            if x0 >= upper {
                break;
            }
            let x1 = (x0 + w).min(upper);
            let (c_b, _) = self.column_cd(i, b);
            let (_, d0) = self.column_cd(i, x0);
            let (_, d1) = self.column_cd(i, x1);
            total += (x1 - x0) * c_b - (d1 - d0);
        }
        total
    }

    fn value_at(&self, alpha1: f64, alpha2: f64) -> f64 {
        let i = ((alpha1 * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((alpha2 * self.ny as f64) as usize).min(self.ny - 1);
        self.values[i * self.ny + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Density {
        let mut values = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                values.push(f((i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / ny as f64));
            }
        }
        Density::from_spec(&DensitySpec::Grid { nx, ny, values }).unwrap()
    }

    /// Midpoint-rule double integral of the pointwise density, refined enough
    /// for piecewise-constant grids aligned with the refinement.
    fn brute_g(d: &Density, a: f64, b: f64, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if x < a && y <= b && x < y {
                    s += d.value_at(x, y).unwrap() * h * h;
                }
            }
        }
        s
    }

    #[test]
    fn uniform_normalized_and_closed_form() {
        let d = Density::uniform();
        assert!((d.corner_cumulative(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((d.corner_cumulative(0.6, 0.6) - 0.36).abs() < 1e-15);
        assert!((d.corner_cumulative(0.3, 0.6) - 0.27).abs() < 1e-15);
        assert_eq!(d.corner_cumulative(0.9, 0.4), d.corner_cumulative(0.4, 0.4));
    }

    #[test]
    fn uniform_grid_matches_uniform() {
        let g = grid(8, 8, |_, _| 1.0);
        let u = Density::uniform();
        for &(a, b) in &[(0.1, 0.7), (0.33, 0.34), (0.5, 1.0), (0.8, 0.6), (0.0, 0.5)] {
            assert!((g.corner_cumulative(a, b) - u.corner_cumulative(a, b)).abs() < 1e-14);
        }
        assert!((g.sup_q() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_cumulative_matches_brute_force() {
        let g = grid(4, 4, |x, y| 1.0 + 3.0 * x + y * y);
        for &(a, b) in &[(0.25, 0.75), (0.5, 0.5), (0.125, 1.0), (0.75, 0.875)] {
            let exact = g.corner_cumulative(a, b);
            let bf = brute_g(&g, a, b, 1024);
            assert!((exact - bf).abs() < 2e-3, "{a} {b}: {exact} vs {bf}");
        }
        assert!((g.corner_cumulative(1.0, 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_sup_is_max_cell_inside_triangle() {
        // Large value in a cell strictly below the diagonal must be ignored.
        let g = grid(4, 4, |x, y| if x > y + 0.3 { 100.0 } else { 1.0 + x });
        let brute = {
            let mut m: f64 = 0.0;
            for i in 0..400 {
                for j in 0..400 {
                    let (x, y) = ((i as f64 + 0.5) / 400.0, (j as f64 + 0.5) / 400.0);
                    if x < y {
                        m = m.max(g.value_at(x, y).unwrap());
                    }
                }
            }
            m
        };
        assert!((g.sup_q() - brute).abs() < 1e-12);
    }

    #[test]
    fn cumulative_is_monotone() {
        let g = grid(5, 7, |x, y| 0.5 + x * y);
        let mut prev_row = vec![0.0; 21];
        for ia in 0..=20 {
            let a = ia as f64 / 20.0;
            let mut prev = 0.0;
            for (ib, p) in prev_row.iter_mut().enumerate() {
                let b = ib as f64 / 20.0;
                let v = g.corner_cumulative(a, b);
                assert!(v >= prev - 1e-15);
                assert!(v >= *p - 1e-15);
                prev = v;
                *p = v;
            }
        }
    }

    #[test]
    fn atomic_uses_weak_upper_and_strict_lower_inequalities() {
        let d = Density::from_spec(&DensitySpec::Atomic {
            relays: vec![
                AtomicRelay { a1: 0.2, a2: 0.5, w: 0.25 },
                AtomicRelay { a1: 0.1, a2: 0.3, w: 0.75 },
            ],
        })
        .unwrap();
        assert_eq!(d.corner_cumulative(0.2, 0.5), 0.75);
        assert_eq!(d.corner_cumulative(0.21, 0.5), 1.0);
        assert_eq!(d.corner_cumulative(1.0, 0.49), 0.75);
        assert!(d.sup_q().is_infinite());
        assert!(!d.is_strictly_positive());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(Density::from_spec(&DensitySpec::Grid { nx: 2, ny: 2, values: vec![1.0; 3] }).is_err());
        assert!(Density::from_spec(&DensitySpec::Grid { nx: 2, ny: 2, values: vec![1.0, -1.0, 1.0, 1.0] }).is_err());
        assert!(Density::from_spec(&DensitySpec::Atomic { relays: vec![AtomicRelay { a1: 0.2, a2: 0.5, w: 0.5 }] }).is_err());
        assert!(Density::from_spec(&DensitySpec::Atomic { relays: vec![AtomicRelay { a1: 0.5, a2: 0.2, w: 1.0 }] }).is_err());
    }

    #[test]
    fn spec_json_shapes() {
        let u: DensitySpec = serde_json::from_str(r#"{"kind":"uniform"}"#).unwrap();
        assert_eq!(u, DensitySpec::Uniform {});
        let g: DensitySpec =
            serde_json::from_str(r#"{"kind":"grid","nx":1,"ny":1,"values":[3.0]}"#).unwrap();
        assert!(matches!(g, DensitySpec::Grid { nx: 1, .. }));
        let a: DensitySpec =
            serde_json::from_str(r#"{"kind":"atomic","relays":[{"a1":0.1,"a2":0.2,"w":1.0}]}"#).unwrap();
        assert!(matches!(a, DensitySpec::Atomic { .. }));
        assert!(serde_json::from_str::<DensitySpec>(r#"{"kind":"uniform","x":1}"#).is_err());
    }
}
