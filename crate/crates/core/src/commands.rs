//! Subcommands of the `preisach-sir` binary, as library functions.
//!
//! Each command has a pure part returning data and a `run_*` wrapper that
//! writes files into an output directory. Every JSON output embeds the
//! resolved config.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{compute_certificate, kappa_at, StabilityCertificate};
use crate::config::ScenarioConfig;
use crate::density::{AtomicRelay, DensitySpec};
use crate::dynamics::{endemic_segment, integrate, Outcome, SirParams, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::lyapunov::{verify_trajectory, LemmaReport, SLACK};
use crate::preisach::MemoryCurve;

/// Name of the generator used for randomized corpora.
pub const PRNG: &str = "ChaCha8Rng";
/// Distance to the endemic segment accepted as membership.
pub const SEGMENT_TOL: f64 = 1e-6;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub config: ScenarioConfig,
    pub converged: bool,
    pub outcome: Outcome,
    pub limit: (f64, f64),
    pub on_segment: bool,
    pub segment_distance: f64,
    pub n_switches: usize,
    pub orbit_detected: bool,
    pub orbit_period: Option<f64>,
    pub orbit_residual: Option<f64>,
    pub grazing: bool,
}

fn summarize(cfg: &ScenarioConfig, params: &SirParams, tr: &Trajectory) -> SimulationSummary {
    let limit = tr.final_state();
    let converged = tr.outcome == Outcome::Equilibrium;
    let dist = endemic_segment(params).distance(limit.0, limit.1);
    SimulationSummary {
        config: cfg.clone(),
        converged,
        outcome: tr.outcome,
        limit,
        on_segment: converged && dist <= SEGMENT_TOL,
        segment_distance: dist,
        n_switches: tr.n_switches(),
        orbit_detected: tr.orbit.is_some(),
        orbit_period: tr.orbit.as_ref().map(|o| o.period),
        orbit_residual: tr.orbit.as_ref().map(|o| o.residual),
        grazing: tr.grazing,
    }
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<(Trajectory, SimulationSummary)> {
    let params = cfg.params()?;
    let tr = integrate(&params, &cfg.initial_state()?, &cfg.integrator)?;
    let summary = summarize(cfg, &params, &tr);
    Ok((tr, summary))
}

/// Writes `trajectory.csv` and `summary.json`.
pub fn run_simulate(cfg: &ScenarioConfig, out: &Path) -> Result<SimulationSummary> {
    let (tr, summary) = simulate(cfg)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("trajectory.csv"))?;
    tr.write_csv(&mut w)?;
    w.flush()?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// `(I, R0)` pairs along a piecewise-monotone program started from the
/// virgin state at `I = 0`, with `samples` points per segment.
pub fn loop_diagram(cfg: &ScenarioConfig, program: &[f64], samples: usize) -> Result<Vec<(f64, f64)>> {
    if let Some(v) = program.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::config("program", format!("value {v} outside [0, 1]")));
    }
    let mut op = cfg.params()?.operator(&MemoryCurve::virgin());
    let samples = samples.max(1);
    let mut rows = vec![(0.0, op.output())];
    let mut x = 0.0;
    for &target in program {
        for j in 1..=samples {
            let next = if j == samples {
                target
            } else {
                x + (target - x) * j as f64 / samples as f64
            };
            let from = op.current_input();
            op.apply_segment(from, next)?;
            rows.push((next, op.output()));
        }
        x = target;
    }
    Ok(rows)
}

/// Writes `loop.csv`.
pub fn run_loop_diagram(cfg: &ScenarioConfig, program: &[f64], samples: usize, out: &Path) -> Result<Vec<(f64, f64)>> {
    let rows = loop_diagram(cfg, program, samples)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("loop.csv"))?;
    writeln!(w, "I,R0")?;
    for (i, r) in &rows {
        writeln!(w, "{i:?},{r:?}")?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateOutput {
    pub config: ScenarioConfig,
    pub certificate: StabilityCertificate,
}

pub fn certify(cfg: &ScenarioConfig) -> Result<StabilityCertificate> {
    compute_certificate(&cfg.params()?)
}

/// Writes `certificate.json`.
pub fn run_certify(cfg: &ScenarioConfig, out: &Path) -> Result<StabilityCertificate> {
    let certificate = certify(cfg)?;
    fs::create_dir_all(out)?;
    let doc = CertificateOutput {
        config: cfg.clone(),
        certificate: certificate.clone(),
    };
    write_json(&out.join("certificate.json"), &doc)?;
    Ok(certificate)
}

/// Seeded initial conditions `(I0, S0)` with `I0 + S0 < 1`.
pub fn initial_corpus(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let i0: f64 = rng.gen_range(1e-3..0.9);
            let s0: f64 = rng.gen_range(1e-3..(1.0 - i0));
            (i0, s0)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaRun {
    pub index: usize,
    pub i0: f64,
    pub s0: f64,
    pub outcome: Option<Outcome>,
    pub n_switches: usize,
    pub records: usize,
    pub failures: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSummary {
    pub config: ScenarioConfig,
    pub prng: &'static str,
    pub seed: u64,
    pub slack: f64,
    pub runs: Vec<LemmaRun>,
    pub records: usize,
    pub failures: usize,
}

/// Runs the lemma checks on the config's initial state followed by `corpus`
/// seeded virgin initial conditions. Runs that fail to integrate are listed
/// in the summary and count as failures.
pub fn verify_lemmas(cfg: &ScenarioConfig, corpus: usize) -> Result<(LemmaReport, LemmaSummary)> {
    let params = cfg.params()?;
    let cert = compute_certificate(&params)?;
    let mut starts = vec![cfg.initial_state()?];
    for (i0, s0) in initial_corpus(cfg.seed, corpus) {
        starts.push(SirState::virgin(i0, s0)?);
    }
    let results: Vec<(LemmaRun, LemmaReport)> = starts
        .iter()
        .enumerate()
        .map(|(index, st)| {
            let mut run = LemmaRun {
                index,
                i0: st.i,
                s0: st.s,
                outcome: None,
                n_switches: 0,
                records: 0,
                failures: 0,
                error: None,
            };
            let checked = integrate(&params, st, &cfg.integrator).and_then(|tr| {
                run.outcome = Some(tr.outcome);
                run.n_switches = tr.n_switches();
                verify_trajectory(&tr, &cert, SLACK)
            });
            match checked {
                Ok(rep) => {
                    run.records = rep.records.len();
                    run.failures = rep.failures().len();
                    (run, rep)
                }
                Err(e) => {
                    run.error = Some(e.to_string());
                    run.failures = 1;
                    (run, LemmaReport::default())
                }
            }
        })
        .collect();
    let mut report = LemmaReport::default();
    let mut runs = Vec::with_capacity(results.len());
    for (run, rep) in results {
        report.extend(rep);
        runs.push(run);
    }
    let summary = LemmaSummary {
        config: cfg.clone(),
        prng: PRNG,
        seed: cfg.seed,
        slack: SLACK,
        records: report.records.len(),
        failures: runs.iter().map(|r| r.failures).sum(),
        runs,
    };
    Ok((report, summary))
}

/// Writes `lemma_report.json` (the record array) and `lemma_summary.json`.
pub fn run_verify_lemmas(cfg: &ScenarioConfig, corpus: usize, out: &Path) -> Result<LemmaSummary> {
    let (report, summary) = verify_lemmas(cfg, corpus)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("lemma_report.json"), report.to_json() + "\n")?;
    write_json(&out.join("lemma_summary.json"), &summary)?;
    Ok(summary)
}

/// `resolution` rows `(theta, I, S, R0)` along the endemic segment, endpoints
/// included.
pub fn equilibria(cfg: &ScenarioConfig, resolution: usize) -> Result<Vec<(f64, f64, f64, f64)>> {
    Ok(endemic_segment(&cfg.params()?).points(resolution.max(2) - 1))
}

/// Writes `equilibria.csv`.
pub fn run_equilibria(cfg: &ScenarioConfig, resolution: usize, out: &Path) -> Result<Vec<(f64, f64, f64, f64)>> {
    let rows = equilibria(cfg, resolution)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("equilibria.csv"))?;
    writeln!(w, "theta,I,S,R0")?;
    for (th, i, s, r) in &rows {
        writeln!(w, "{th:?},{i:?},{s:?},{r:?}")?;
    }
    w.flush()?;
    Ok(rows)
}

/// Parameter grid for `sweep`.
///
/// * `delta`: hysteresis widths `R0_nat - R0_int` at fixed `R0_nat`.
/// * `relay_thresholds`: a single relay at every `alpha1 < alpha2` pair.
/// * `spread`: a density uniform on the band `alpha2 - alpha1 <= w`,
///   tabulated on a `resolution`-cell grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    Delta {
        values: Vec<f64>,
    },
    RelayThresholds {
        alpha1: Vec<f64>,
        alpha2: Vec<f64>,
    },
    Spread {
        values: Vec<f64>,
        #[serde(default = "default_band_resolution")]
        resolution: usize,
    },
}

fn default_band_resolution() -> usize {
    40
}

/// Largest accepted number of sweep cells.
pub const MAX_SWEEP_CELLS: usize = 10_000;

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("grid", e.to_string()))
    }

    /// Scenario overrides, one per cell, in output order.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let cells: Vec<SweepCell> = match self {
            SweepGrid::Delta { values } => values
                .iter()
                .map(|&d| SweepCell {
                    delta: Some(d),
                    ..SweepCell::default()
                })
                .collect(),
            SweepGrid::RelayThresholds { alpha1, alpha2 } => alpha1
                .iter()
                .flat_map(|&a1| alpha2.iter().map(move |&a2| (a1, a2)))
                .filter(|(a1, a2)| a1 < a2)
                .map(|(a1, a2)| SweepCell {
                    alpha: Some((a1, a2)),
                    ..SweepCell::default()
                })
                .collect(),
            SweepGrid::Spread { values, resolution } => values
                .iter()
                .map(|&w| SweepCell {
                    spread: Some((w, *resolution)),
                    ..SweepCell::default()
                })
                .collect(),
        };
        if cells.len() > MAX_SWEEP_CELLS {
            return Err(Error::config(
                "grid",
                format!("{} cells exceed the limit of {MAX_SWEEP_CELLS}", cells.len()),
            ));
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepCell {
    pub delta: Option<f64>,
    pub alpha: Option<(f64, f64)>,
    pub spread: Option<(f64, usize)>,
}

/// Grid density uniform on the band `alpha2 - alpha1 <= width`.
pub fn band_density(width: f64, n: usize) -> DensitySpec {
    let h = 1.0 / n as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            if (j - i) as f64 * h <= width {
                values[i * n + j] = 1.0;
            }
        }
    }
    DensitySpec::Grid { nx: n, ny: n, values }
}

impl SweepCell {
    fn apply(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        if let Some(d) = self.delta {
            cfg.r0_int = cfg.r0_nat - d;
        }
        if let Some((a1, a2)) = self.alpha {
            cfg.density = DensitySpec::Atomic {
                relays: vec![AtomicRelay { a1, a2, w: 1.0 }],
            };
        }
        if let Some((w, n)) = self.spread {
            cfg.density = band_density(w, n);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub r0_nat: f64,
    pub r0_int: f64,
    pub delta: f64,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub spread: Option<f64>,
    pub outcome: Option<Outcome>,
    pub limit_i: f64,
    pub limit_s: f64,
    pub kappa_sign: i8,
    pub error: Option<String>,
}

fn sweep_cell(base: &ScenarioConfig, cell: &SweepCell) -> SweepRow {
    let cfg = cell.apply(base);
    let mut row = SweepRow {
        r0_nat: cfg.r0_nat,
        r0_int: cfg.r0_int,
        delta: cfg.r0_nat - cfg.r0_int,
        alpha1: cell.alpha.map(|a| a.0),
        alpha2: cell.alpha.map(|a| a.1),
        spread: cell.spread.map(|s| s.0),
        outcome: None,
        limit_i: f64::NAN,
        limit_s: f64::NAN,
        kappa_sign: 0,
        error: None,
    };
    let result = cfg.validate().and_then(|_| {
        let params = cfg.params()?;
        let sup_q = params.density().sup_q();
        let k = kappa_at(cfg.r0_nat, cfg.r0_nat - cfg.r0_int, cfg.rho, sup_q);
        row.kappa_sign = if k > 0.0 {
            1
        } else if k < 0.0 {
            -1
        } else {
            0
        };
        let tr = integrate(&params, &cfg.initial_state()?, &cfg.integrator)?;
        row.outcome = Some(tr.outcome);
        (row.limit_i, row.limit_s) = tr.final_state();
        Ok(())
    });
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Runs every cell, in parallel on `jobs` threads, returning rows in grid
/// order.
pub fn sweep(cfg: &ScenarioConfig, grid: &SweepGrid, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = grid.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|c| sweep_cell(cfg, c)).collect()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "r0_nat,r0_int,delta,alpha1,alpha2,spread,outcome,limit_I,limit_S,kappa_sign,error")?;
    for r in rows {
        let outcome = match r.outcome {
            Some(Outcome::Equilibrium) => "equilibrium",
            Some(Outcome::Orbit) => "orbit",
            Some(Outcome::Timeout) => "timeout",
            None => "failed",
        };
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            w,
            "{:?},{:?},{:?},{},{},{},{},{:?},{:?},{},{}",
            r.r0_nat,
            r.r0_int,
            r.delta,
            opt(r.alpha1),
            opt(r.alpha2),
            opt(r.spread),
            outcome,
            r.limit_i,
            r.limit_s,
            r.kappa_sign,
            err
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary<'a> {
    config: &'a ScenarioConfig,
    grid: &'a SweepGrid,
    cells: usize,
    failed: usize,
}

/// Writes `sweep.csv` and `sweep_summary.json`.
pub fn run_sweep(cfg: &ScenarioConfig, grid: &SweepGrid, jobs: usize, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = sweep(cfg, grid, jobs)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("sweep.csv"))?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    let summary = SweepSummary {
        config: cfg,
        grid,
        cells: rows.len(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
    };
    write_json(&out.join("sweep_summary.json"), &summary)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Density;

    fn cfg(nat: f64, int: f64, rho: f64) -> ScenarioConfig {
        ScenarioConfig::from_json(&format!(
            r#"{{"r0_nat": {nat:?}, "r0_int": {int:?}, "rho": {rho:?},
                "density": {{"kind": "uniform"}},
                "initial": {{"I0": 0.01, "S0": 0.9}}, "seed": 3}}"#
        ))
        .unwrap()
    }

    #[test]
    fn classical_summary_limit() {
        let (_, s) = simulate(&cfg(2.0, 2.0, 0.5)).unwrap();
        assert!(s.converged);
        assert!((s.limit.0 - 0.25).abs() < 1e-8 && (s.limit.1 - 0.5).abs() < 1e-8);
        assert!(s.on_segment);
    }

    #[test]
    fn hysteresis_summary_on_segment() {
        let (_, s) = simulate(&cfg(2.0, 1.8, 0.1)).unwrap();
        assert!(s.converged && s.on_segment);
    }

    #[test]
    fn loop_diagram_values() {
        let c = cfg(2.0, 1.5, 0.5);
        let rows = loop_diagram(&c, &[0.6], 10).unwrap();
        assert!((rows.last().unwrap().1 - 1.82).abs() < 1e-12);
        let rows = loop_diagram(&c, &[1.0, 0.0], 10).unwrap();
        assert!((rows[10].1 - 1.5).abs() < 1e-12);
        assert!((rows[20].1 - 2.0).abs() < 1e-12);
        let rows = loop_diagram(&c, &[0.6, 0.3, 0.6], 25).unwrap();
        assert!((rows[25].1 - rows[75].1).abs() < 1e-12);
        assert!(loop_diagram(&c, &[1.2], 10).is_err());
    }

    #[test]
    fn corpus_is_seeded() {
        assert_eq!(initial_corpus(5, 10), initial_corpus(5, 10));
        assert_ne!(initial_corpus(5, 10), initial_corpus(6, 10));
        assert!(initial_corpus(5, 100).iter().all(|(i, s)| *i > 0.0 && *s > 0.0 && i + s < 1.0));
    }

    #[test]
    fn sweep_order_is_deterministic() {
        let grid = SweepGrid::Delta {
            values: vec![0.0, 1e-9, 0.1, 0.2],
        };
        let c = cfg(2.0, 2.0, 0.5);
        let a = sweep(&c, &grid, 1).unwrap();
        let b = sweep(&c, &grid, 4).unwrap();
        assert_eq!(a.len(), 4);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_sweep_csv(&a, &mut ca).unwrap();
        write_sweep_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a[0].kappa_sign, 1);
        assert_eq!(a[3].kappa_sign, -1);
    }

    #[test]
    fn relay_grid_skips_invalid_pairs() {
        let g = SweepGrid::from_json(r#"{"kind": "relay_thresholds", "alpha1": [0.1, 0.5], "alpha2": [0.3, 0.6]}"#)
            .unwrap();
        assert_eq!(g.cells().unwrap().len(), 3);
        assert!(SweepGrid::from_json(r#"{"kind": "delta", "values": [], "x": 1}"#).is_err());
    }

    #[test]
    fn band_density_is_valid() {
        let spec = band_density(0.2, 20);
        let d = Density::from_spec(&spec).unwrap();
        assert!(!d.is_strictly_positive());
        assert!((d.corner_cumulative(1.0, 1.0) - 1.0).abs() < 1e-12);
    }
}
