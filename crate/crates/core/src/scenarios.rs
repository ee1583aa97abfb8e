//! End-to-end scenarios: deterministic calibration, the Gronwall suite,
//! Ogawa transport, the white-noise forced wave, geometric waves, the
//! random-speed wave, classifier conformance and the mollifier suite.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    self, association_check, classify, covariance_of, measure_series, moments_of, norm_interchange, sample_matrix,
    ClassifyOptions, EpsLadder, EpsSeries, ExponentialTail, NormOrder, SlidingSpike, TestFunction, Verdict,
};
use crate::characteristics::{arclength_characteristics, determinacy_domain, ArcLength, DeterminacyDomain};
use crate::error::{param, Error, Rect, Result};
use crate::fields::{
    sample_brownian, sample_gaussian, sample_white_noise, translation_transform, white_noise_action_sparse,
    CovarianceKernel, Grid1D, Grid2D, NoiseGrid, SampledProcess, UniformMarginal,
};
use crate::hypsolve::{
    domain_grid, geometric_wave_solve, gronwall_check, solve_system, transport_t_only, wave_to_system,
    HyperbolicProblem, SolutionField, SolveOptions, WaveProblem,
};
use crate::mollify::{
    embed_path, Analytic, Axis, FieldRef, FnField, Mollifier, MollifierSpec, Partial, Profile, ScaledKernel,
    SmoothField, SplinePath, TabulatedPath,
};
use crate::quad;
use crate::seed::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Plot-ready numeric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// One comparison of `sup_x ||u(x)||_p` with `||sup_x |u(x)| ||_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterchangeRecord {
    pub label: String,
    pub p: u32,
    pub sup_of_norm: f64,
    pub norm_of_sup: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub interchange: Vec<InterchangeRecord>,
    pub notes: Vec<String>,
    pub elapsed_seconds: f64,
}

impl ScenarioReport {
    fn new(scenario: &str, seed: u64) -> Self {
        ScenarioReport {
            scenario: scenario.into(),
            seed,
            checks: Vec::new(),
            tables: Vec::new(),
            interchange: Vec::new(),
            notes: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.interchange.iter().all(|r| r.holds)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn push_le(&mut self, name: &str, value: f64, threshold: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        });
    }

    fn push_flag(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            detail: detail.into(),
        });
    }

    /// Record both orderings for `p = 1, 2` on `rows[sample][point]`.
    fn record_interchange(&mut self, label: &str, rows: &[Vec<f64>]) -> Result<()> {
        for p in [1, 2] {
            let (son, nos) = norm_interchange(rows, p)?;
            self.interchange.push(InterchangeRecord {
                label: label.into(),
                p,
                sup_of_norm: son,
                norm_of_sup: nos,
                holds: son <= nos,
            });
        }
        Ok(())
    }

    fn finish(mut self, started: Instant, max_seconds: Option<f64>) -> Self {
        self.elapsed_seconds = started.elapsed().as_secs_f64();
        if let Some(m) = max_seconds {
            let e = self.elapsed_seconds;
            self.push_le("runtime", e, m, format!("{e:.2} s"));
        }
        self
    }

    /// Human-readable verdict lines.
    pub fn verdict_text(&self) -> String {
        let mut s = format!(
            "scenario: {}\nseed: {}\nresult: {}\nelapsed_seconds: {:.3}\n",
            self.scenario,
            self.seed,
            if self.passed() { "PASS" } else { "FAIL" },
            self.elapsed_seconds
        );
        for c in &self.checks {
            s += &format!(
                "[{}] {}: value={:e} threshold={:e} {}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold,
                c.detail
            );
        }
        for r in &self.interchange {
            s += &format!(
                "[{}] interchange {} p={}: sup_of_norm={:e} norm_of_sup={:e}\n",
                if r.holds { "pass" } else { "FAIL" },
                r.label,
                r.p,
                r.sup_of_norm,
                r.norm_of_sup
            );
        }
        for n in &self.notes {
            s += &format!("note: {n}\n");
        }
        s
    }
}

/// Uniform probe points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeGrid {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl ProbeGrid {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.lower, self.upper, self.count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    Calibration(CalibrationSpec),
    Gronwall(GronwallSpec),
    Ogawa(OgawaSpec),
    AdditiveNoiseWave(AdditiveNoiseSpec),
    GeometricWave(GeometricWaveSpec),
    RandomSpeedWave(RandomSpeedSpec),
    Classifier(ClassifierSpec),
    Mollifier(MollifierSuiteSpec),
    Custom(CustomSpec),
}

/// Scenario names with one-line descriptions.
pub const SCENARIOS: &[(&str, &str)] = &[
    (
        "calibration",
        "constant-coefficient transport and d'Alembert waves against closed forms",
    ),
    ("gronwall", "a priori sup bound on random smooth 2x2 systems"),
    (
        "ogawa",
        "transport with white noise in time: variance, Monte Carlo mean, heat limit",
    ),
    (
        "additive-noise-wave",
        "wave forced by space-time white noise: variance and cone covariances",
    ),
    (
        "geometric-wave",
        "wave on Brownian and C1 curves through arc-length characteristics",
    ),
    (
        "random-speed-wave",
        "wave with a translation-process speed against the unmollified reference",
    ),
    (
        "classifier",
        "planted series and counterexample families through the classifier",
    ),
    (
        "mollifier",
        "moments, derivative commutation, cutoff independence, polynomial reproduction",
    ),
    ("custom", "user-given constant-coefficient system"),
];

impl ScenarioSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::Calibration(_) => "calibration",
            ScenarioSpec::Gronwall(_) => "gronwall",
            ScenarioSpec::Ogawa(_) => "ogawa",
            ScenarioSpec::AdditiveNoiseWave(_) => "additive-noise-wave",
            ScenarioSpec::GeometricWave(_) => "geometric-wave",
            ScenarioSpec::RandomSpeedWave(_) => "random-speed-wave",
            ScenarioSpec::Classifier(_) => "classifier",
            ScenarioSpec::Mollifier(_) => "mollifier",
            ScenarioSpec::Custom(_) => "custom",
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(param(name, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(name: &'static str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(param(name, format!("must be at least {min}, got {v}")))
    }
}

fn eps_list(name: &'static str, eps: &[f64]) -> Result<()> {
    if eps.iter().all(|e| *e > 0.0 && *e <= 1.0) && eps.windows(2).all(|w| w[1] < w[0]) {
        Ok(())
    } else {
        Err(param(name, "must be strictly decreasing values in (0, 1]"))
    }
}

impl ScenarioSpec {
    /// Parameter checks that need no computation.
    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioSpec::Calibration(s) => {
                positive("kappa", s.kappa)?;
                positive("horizon", s.horizon)?;
                at_least("nx", s.nx, 2)?;
                at_least("nt", s.nt, 2)
            }
            ScenarioSpec::Gronwall(s) => {
                positive("kappa", s.kappa)?;
                positive("horizon", s.horizon)?;
                at_least("seeds", s.seeds, 1)?;
                at_least("draws", s.draws, 1)?;
                at_least("refine", s.refine, 1)
            }
            ScenarioSpec::Ogawa(s) => {
                Mollifier::new(s.mollifier)?;
                positive("eps", s.eps)?;
                positive("time", s.time)?;
                at_least("samples", s.samples, asymptotics::MIN_SAMPLES)?;
                s.probes.grid()?;
                eps_list("association_eps", &s.association_eps)
            }
            ScenarioSpec::AdditiveNoiseWave(s) => {
                Mollifier::new(s.mollifier)?;
                positive("eps", s.eps)?;
                positive("cell_ratio", s.cell_ratio)?;
                if s.cell_ratio > 1.0 {
                    return Err(param("cell_ratio", "noise cells must not exceed eps"));
                }
                at_least("samples", s.samples, asymptotics::MIN_SAMPLES)?;
                eps_list("cauchy_eps", &s.cauchy_eps)
            }
            ScenarioSpec::GeometricWave(s) => {
                Mollifier::new(s.mollifier)?;
                s.ladder.validate()?;
                positive("time", s.time)?;
                s.probes.grid()?;
                Ok(())
            }
            ScenarioSpec::RandomSpeedWave(s) => {
                Mollifier::new(s.mollifier)?;
                s.ladder.validate()?;
                at_least("seeds", s.seeds, 1)?;
                positive("speed_bound", s.speed_bound)
            }
            ScenarioSpec::Classifier(s) => {
                s.ladder.validate()?;
                eps_list("roughness_eps", &s.roughness_eps)
            }
            ScenarioSpec::Mollifier(s) => {
                for &m in &s.orders {
                    Mollifier::new(MollifierSpec {
                        order: m,
                        ..MollifierSpec::default()
                    })?;
                }
                positive("eps", s.eps)
            }
            ScenarioSpec::Custom(s) => {
                let n = s.lambda.len();
                at_least("lambda", n, 1)?;
                if s.initial.len() != n
                    || !(s.coupling.is_empty() || (s.coupling.len() == n && s.coupling.iter().all(|r| r.len() == n)))
                    || !(s.source.is_empty() || s.source.len() == n)
                {
                    return Err(param("initial", "lambda, coupling, source and initial sizes disagree"));
                }
                positive("horizon", s.horizon)?;
                at_least("nx", s.nx, 2)?;
                at_least("nt", s.nt, 2)
            }
        }
    }
}

pub fn run(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioReport> {
    spec.validate()?;
    match spec {
        ScenarioSpec::Calibration(s) => run_calibration(s, seed),
        ScenarioSpec::Gronwall(s) => run_gronwall(s, seed),
        ScenarioSpec::Ogawa(s) => run_ogawa(s, seed),
        ScenarioSpec::AdditiveNoiseWave(s) => run_additive_noise_wave(s, seed),
        ScenarioSpec::GeometricWave(s) => run_geometric_wave(s, seed),
        ScenarioSpec::RandomSpeedWave(s) => run_random_speed_wave(s, seed),
        ScenarioSpec::Classifier(s) => run_classifier(s, seed),
        ScenarioSpec::Mollifier(s) => run_mollifier_suite(s, seed),
        ScenarioSpec::Custom(s) => run_custom(s, seed),
    }
}

fn sup_error(sol: &SolutionField, comp: usize, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let g = sol.grid;
    sol.nodes()
        .map(|(j, n)| (sol.node(comp, j, n).unwrap_or(f64::NAN) - exact(g.x.node(j), g.t.node(n))).abs())
        .fold(0.0, quad::nan_max)
}

fn zero_wave(lambda: FieldRef, u0: FieldRef, u1: FieldRef) -> WaveProblem {
    WaveProblem {
        lambda,
        f: Analytic::zero(),
        h: Analytic::zero(),
        k: Analytic::zero(),
        g: Analytic::zero(),
        u0,
        u1,
    }
}

// ---------------------------------------------------------------- calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSpec {
    pub kappa: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
    pub transport_tol: f64,
    pub wave_tol: f64,
    pub max_seconds: Option<f64>,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            kappa: 2.0,
            horizon: 1.0,
            nx: 401,
            nt: 201,
            transport_tol: 1e-8,
            wave_tol: 1e-4,
            max_seconds: Some(10.0),
        }
    }
}

pub fn run_calibration(spec: &CalibrationSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("calibration", seed);
    let opts = SolveOptions {
        audit_seed: seed,
        ..SolveOptions::default()
    };
    let mut table = Table::new("errors", &["case", "sup_error", "iterations"]);

    let one: FieldRef = Analytic::constant(1.0);
    let lin: FieldRef = Analytic::of_x(Profile::Linear {
        slope: 1.0,
        intercept: 0.0,
    });
    let problem = HyperbolicProblem::transport(vec![one.clone()], vec![lin])?;
    let dom = determinacy_domain(&problem.lambda, spec.kappa, spec.horizon)?;
    let grid = domain_grid(&dom, spec.nx, spec.nt)?;
    let sol = solve_system(&problem, &dom, grid, &opts)?;
    let e = sup_error(&sol, 0, |x, t| x - t);
    table.push(vec![0.0, e, sol.diagnostics.iterations as f64]);
    rep.push_le("transport", e, spec.transport_tol, "u0 = x, lambda = 1");

    let cases: [(&str, Profile, Profile, fn(f64, f64) -> f64); 2] = [
        ("wave_sin_0", Profile::sin(), Profile::constant(0.0), |x, t| {
            x.sin() * t.cos()
        }),
        ("wave_0_cos", Profile::constant(0.0), Profile::cos(), |x, t| {
            x.cos() * t.sin()
        }),
    ];
    for (k, (name, u0, u1, exact)) in cases.into_iter().enumerate() {
        let wave = zero_wave(one.clone(), Analytic::of_x(u0), Analytic::of_x(u1));
        let rect = Rect::new(-spec.kappa, spec.kappa, 0.0, spec.horizon);
        let sys = wave_to_system(&wave, rect, 1e-6, 101)?;
        let dom = determinacy_domain(&sys.lambda, spec.kappa, spec.horizon)?;
        let sol = solve_system(&sys, &dom, domain_grid(&dom, spec.nx, spec.nt)?, &opts)?;
        let e = sup_error(&sol, 2, exact);
        table.push(vec![(k + 1) as f64, e, sol.diagnostics.iterations as f64]);
        rep.push_le(name, e, spec.wave_tol, "sup error on K_T");
    }
    rep.notes
        .push("case 0: transport, 1: u0 = sin, u1 = 0, 2: u0 = 0, u1 = cos".into());
    rep.tables.push(table);
    Ok(rep.finish(started, spec.max_seconds))
}

// ------------------------------------------------------------------ gronwall

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GronwallSpec {
    pub seeds: usize,
    pub draws: usize,
    pub kappa: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
    pub refine: usize,
    pub max_seconds: Option<f64>,
}

impl Default for GronwallSpec {
    fn default() -> Self {
        GronwallSpec {
            seeds: 10,
            draws: 5,
            kappa: 3.0,
            horizon: 1.0,
            nx: 121,
            nt: 61,
            refine: 2,
            max_seconds: None,
        }
    }
}

/// A random smooth 2x2 problem with speeds of both signs.
pub fn random_smooth_problem(seed: u64) -> Result<HyperbolicProblem> {
    let mut rng = seed::rng(seed);
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    let wave = |amp: f64, u: &mut dyn FnMut(f64, f64) -> f64| -> FieldRef {
        let (c, d, w, v, ph) = (u(-amp, amp), u(0.0, amp), u(0.5, 3.0), u(-2.0, 2.0), u(0.0, 6.28));
        FnField::new(Rect::WHOLE_PLANE, move |x, t| c + d * (w * x + v * t + ph).sin()).into_ref()
    };
    let mut lambdas = Vec::new();
    for sign in [1.0, -1.0] {
        let (a, b, w, ph) = (u(0.5, 1.2), u(0.0, 0.3), u(0.5, 3.0), u(0.0, 6.28));
        lambdas.push(
            FnField::new(Rect::WHOLE_PLANE, move |x, t| {
                sign * (a + b * (w * x + ph + 0.5 * t).sin())
            })
            .into_ref(),
        );
    }
    let coupling = (0..2).map(|_| (0..2).map(|_| wave(1.5, &mut u)).collect()).collect();
    let source = (0..2).map(|_| wave(1.0, &mut u)).collect();
    let initial = (0..2)
        .map(|_| {
            Analytic::of_x(Profile::Gaussian {
                amplitude: u(-2.0, 2.0),
                centre: u(-1.0, 1.0),
                width: u(0.3, 1.5),
            }) as FieldRef
        })
        .collect();
    HyperbolicProblem::new(lambdas, coupling, source, initial)
}

pub fn run_gronwall(spec: &GronwallSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("gronwall", seed);
    let mut table = Table::new(
        "bounds",
        &[
            "seed",
            "draw",
            "sup_solution",
            "sup_initial",
            "sup_source",
            "sup_coupling",
            "bound",
            "refined_bound",
            "holds",
        ],
    );
    let jobs: Vec<(usize, usize)> = (0..spec.seeds)
        .flat_map(|s| (0..spec.draws).map(move |d| (s, d)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(s, d)| {
            let pseed = seed::derive(seed, &[purpose::PROBLEM, s as u64, d as u64]);
            let problem = random_smooth_problem(pseed)?;
            let dom = determinacy_domain(&problem.lambda, spec.kappa, spec.horizon)?;
            let opts = SolveOptions {
                audit_seed: pseed,
                ..SolveOptions::default()
            };
            let sol = solve_system(&problem, &dom, domain_grid(&dom, spec.nx, spec.nt)?, &opts)?;
            let g = &sol.diagnostics.gronwall;
            let refined = gronwall_check(&problem, &sol, spec.refine, opts.tol)?;
            let holds = g.holds && refined.holds;
            Ok(vec![
                s as f64,
                d as f64,
                g.sup_solution,
                g.sup_initial,
                g.sup_source,
                g.sup_coupling,
                g.bound,
                refined.bound,
                if holds { 1.0 } else { 0.0 },
            ])
        })
        .collect();
    let mut violations = 0;
    for r in results {
        let row = r?;
        if row[8] != 1.0 {
            violations += 1;
        }
        table.push(row);
    }
    rep.push_le("violations", violations as f64, 0.0, format!("{} problems", jobs.len()));
    rep.tables.push(table);
    Ok(rep.finish(started, spec.max_seconds))
}

// --------------------------------------------------------------------- ogawa

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OgawaSpec {
    pub eps: f64,
    pub samples: usize,
    pub time: f64,
    pub probes: ProbeGrid,
    pub sigma_times: Vec<f64>,
    pub sigma_tol: f64,
    pub se_factor: f64,
    pub mollifier: MollifierSpec,
    pub u0: Profile,
    pub u0_extent: f64,
    pub association_eps: Vec<f64>,
    pub association_tol: f64,
    pub heat_step: f64,
    pub max_seconds: Option<f64>,
}

impl Default for OgawaSpec {
    fn default() -> Self {
        OgawaSpec {
            eps: 0.01,
            samples: 2000,
            time: 1.0,
            probes: ProbeGrid {
                lower: -1.0,
                upper: 1.0,
                count: 5,
            },
            sigma_times: vec![0.5, 0.625, 0.75, 0.875, 1.0],
            sigma_tol: 0.05,
            se_factor: 3.0,
            mollifier: MollifierSpec::default(),
            u0: Profile::Gaussian {
                amplitude: 1.0,
                centre: 0.0,
                width: 1.0,
            },
            u0_extent: 12.0,
            association_eps: vec![0.16, 0.08, 0.04, 0.02, 0.01],
            association_tol: 5e-3,
            heat_step: 0.01,
            max_seconds: Some(120.0),
        }
    }
}

/// `psi(s, s') = E W(s) W(s')` for two-sided Brownian motion pinned at 0.
pub fn brownian_covariance(s: f64, r: f64) -> f64 {
    if s > 0.0 && r > 0.0 {
        s.min(r)
    } else if s < 0.0 && r < 0.0 {
        (-s).min(-r)
    } else {
        0.0
    }
}

/// Split `[a, b]` at the interior points of `cuts` and integrate each piece
/// with Gauss-Legendre panels no wider than `h`.
fn integrate_split(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, cuts: &[f64], h: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(cuts.iter().copied().filter(|c| *c > a && *c < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.windows(2)
        .map(|w| {
            let panels = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
            quad::integrate(&mut f, w[0], w[1], panels, 8)
        })
        .sum()
}

/// `E W_eps(t1) W_eps(t2) = int int k(t1 - s) k(t2 - s') psi(s, s') ds ds'`.
pub fn mollified_brownian_covariance(kernel: &ScaledKernel, t1: f64, t2: f64) -> f64 {
    let r = kernel.support();
    let h = kernel.eps() / 4.0;
    integrate_split(
        |s| {
            let inner = integrate_split(
                |q| kernel.eval(t2 - q, 0) * brownian_covariance(s, q),
                t2 - r,
                t2 + r,
                &[0.0, s],
                h,
            );
            kernel.eval(t1 - s, 0) * inner
        },
        t1 - r,
        t1 + r,
        &[0.0],
        h,
    )
}

/// `int f(x - y) N(0, var)(y) dy`.
fn gaussian_smooth(f: impl Fn(f64) -> f64, x: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return f(x);
    }
    let sd = var.sqrt();
    quad::integrate(|z| f(x - sd * z) * quad::normal_pdf(z), -8.5, 8.5, 68, 8)
}

/// Uniform grid covering `[lo, hi]` with 0 as a node.
fn grid_through_zero(lo: f64, hi: f64, max_step: f64) -> Result<Grid1D> {
    let left = (-lo / max_step).ceil();
    let right = (hi / max_step).ceil();
    Grid1D::new(-left * max_step, right * max_step, (left + right) as usize + 1)
}

fn embedded_profile(profile: &Profile, moll: &Mollifier, eps: f64, extent: f64) -> Result<Arc<TabulatedPath>> {
    let reach = extent + moll.scaled(eps)?.support() + eps;
    let grid = Grid1D::with_max_step(-reach, reach, eps / 8.0)?;
    let p = profile.clone();
    let sampled = Arc::new(SampledProcess::deterministic(grid, move |x| p.eval(x, 0)));
    let emb = embed_path(sampled, moll, eps, Axis::X)?;
    let (lo, hi) = emb.safe_interval();
    Ok(Arc::new(emb.tabulate(lo, hi, eps / 16.0, 1)?))
}

/// Heat-equation residual `d_t v - v_xx / 2` by central differences, and a
/// truncation bound estimated from wider differences.
pub fn heat_residual(v: &dyn Fn(f64, f64) -> f64, x: f64, t: f64, h: f64) -> (f64, f64) {
    let dt = (v(x, t + h) - v(x, t - h)) / (2.0 * h);
    let dxx = (v(x + h, t) - 2.0 * v(x, t) + v(x - h, t)) / (h * h);
    let res = dt - 0.5 * dxx;
    let big = 10.0 * h;
    let d3t =
        (v(x, t + 2.0 * big) - 2.0 * v(x, t + big) + 2.0 * v(x, t - big) - v(x, t - 2.0 * big)) / (2.0 * big.powi(3));
    let d4x = (v(x + 2.0 * big, t) - 4.0 * v(x + big, t) + 6.0 * v(x, t) - 4.0 * v(x - big, t) + v(x - 2.0 * big, t))
        / big.powi(4);
    let bound = 2.0 * h * h * (d3t.abs() / 6.0 + d4x.abs() / 24.0) + 1e-12 / (h * h);
    (res, bound)
}

pub fn run_ogawa(spec: &OgawaSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("ogawa", seed);
    if spec.sigma_times.iter().any(|&t| !(t > 0.0 && t <= spec.time)) {
        return Err(param("sigma_times", "must lie in (0, time]"));
    }
    let moll = Mollifier::new(spec.mollifier)?;
    let kernel = moll.scaled(spec.eps)?;
    let r = kernel.support();

    // quadrature variance
    let mut sig = Table::new(
        "sigma",
        &[
            "t",
            "sigma2_quadrature",
            "increment_var_quadrature",
            "sigma2_mc",
            "sigma2_mc_se",
        ],
    );
    let b00 = mollified_brownian_covariance(&kernel, 0.0, 0.0);
    let var_of = |t: f64| {
        let stt = mollified_brownian_covariance(&kernel, t, t);
        (stt, stt - 2.0 * mollified_brownian_covariance(&kernel, t, 0.0) + b00)
    };
    let sigma: Vec<(f64, f64)> = spec.sigma_times.iter().map(|&t| var_of(t)).collect();
    let worst = spec
        .sigma_times
        .iter()
        .zip(&sigma)
        .map(|(t, (s, _))| (s / t - 1.0).abs())
        .fold(0.0, quad::nan_max);
    rep.push_le(
        "sigma_relative",
        worst,
        spec.sigma_tol,
        "max |sigma_eps(t)^2 / t - 1| over t",
    );

    // Monte Carlo
    let u0e = embedded_profile(&spec.u0, &moll, spec.eps, spec.u0_extent)?;
    let path_grid = grid_through_zero(-r - 0.05, spec.time + r + 0.05, spec.eps / 8.0)?;
    let px = spec.probes.grid()?;
    let sol_grid = Grid2D::new(px, Grid1D::new(0.0, spec.time, 2)?);
    let times = spec.sigma_times.clone();
    let mc_master = seed::derive(seed, &[purpose::PATH]);
    let rows = sample_matrix(
        &|s: u64| -> Result<Vec<f64>> {
            let w = Arc::new(sample_brownian(path_grid, s)?);
            let emb = embed_path(w, &moll, spec.eps, Axis::T)?;
            let lam = emb.clone().derivative(1);
            let sol = transport_t_only(&lam, u0e.as_ref(), sol_grid, spec.eps / 4.0)?;
            let mut row = sol.level(0, 1).to_vec();
            for &t in &times {
                row.push(emb.convolve(t, 0));
            }
            Ok(row)
        },
        spec.samples,
        mc_master,
    )?;
    let np = px.count;
    let u_rows: Vec<Vec<f64>> = rows.iter().map(|r| r[..np].to_vec()).collect();
    let w_rows: Vec<Vec<f64>> = rows.iter().map(|r| r[np..].to_vec()).collect();
    rep.record_interchange("u_eps(probes, time)", &u_rows)?;
    let mean = moments_of(&u_rows, 1);
    let wsq = moments_of(&w_rows, 2);
    for (k, &t) in spec.sigma_times.iter().enumerate() {
        sig.push(vec![t, sigma[k].0, sigma[k].1, wsq.mean[k], wsq.standard_error[k]]);
    }

    let (_, v_time) = var_of(spec.time);
    let mut probes = Table::new("mean", &["x", "mc_mean", "mc_se", "reference", "heat_limit", "z_score"]);
    let u0f = spec.u0.clone();
    let heat = move |x: f64, t: f64| gaussian_smooth(|y| u0f.eval(y, 0), x, t);
    let mut worst_z: f64 = 0.0;
    for j in 0..np {
        let x = px.node(j);
        let reference = gaussian_smooth(|y| u0e.value(y, 0.0).unwrap_or(f64::NAN), x, v_time);
        let se = mean.standard_error[j];
        let z = (mean.mean[j] - reference).abs() / se;
        worst_z = worst_z.max(z);
        probes.push(vec![x, mean.mean[j], se, reference, heat(x, spec.time), z]);
    }
    rep.push_le(
        "mc_mean",
        worst_z,
        spec.se_factor,
        "max |E u_eps - u0_eps * p_eps| / SE over probes",
    );

    // heat limit residual
    let mut res_tab = Table::new("heat_residual", &["x", "residual", "bound"]);
    let mut heat_ok = true;
    for j in 0..np {
        let x = px.node(j);
        let (res, bound) = heat_residual(&heat, x, spec.time, spec.heat_step);
        heat_ok &= res.abs() <= bound;
        res_tab.push(vec![x, res, bound]);
    }
    rep.push_flag(
        "heat_residual",
        heat_ok,
        "finite-difference residual within truncation bound at every probe",
    );

    // association of the mean field with the heat solution
    let tests: Vec<TestFunction> = (0..np)
        .map(|j| TestFunction {
            centre: px.node(j),
            half_width: 0.75,
        })
        .collect();
    let moll2 = moll.clone();
    let profile = spec.u0.clone();
    let (extent, time) = (spec.u0_extent, spec.time);
    let assoc = association_check(
        move |eps, _| {
            let k = moll2.scaled(eps)?;
            let b0 = mollified_brownian_covariance(&k, 0.0, 0.0);
            let v =
                mollified_brownian_covariance(&k, time, time) - 2.0 * mollified_brownian_covariance(&k, time, 0.0) + b0;
            let ue = embedded_profile(&profile, &moll2, eps, extent)?;
            Ok(
                FnField::new(Rect::new(-extent / 2.0, extent / 2.0, time, time), move |x, _| {
                    gaussian_smooth(|y| ue.value(y, 0.0).unwrap_or(f64::NAN), x, v)
                })
                .time_independent()
                .into_ref(),
            )
        },
        |x| heat(x, time),
        &tests,
        time,
        &spec.association_eps,
        1,
        seed,
        spec.association_tol,
    )?;
    let mut at = Table::new("association", &["eps", "max_gap"]);
    for (e, g) in assoc.eps.iter().zip(&assoc.max_gap) {
        at.push(vec![*e, *g]);
    }
    rep.push_flag(
        "association",
        assoc.decreasing && assoc.below_tolerance,
        format!(
            "mean field vs heat solution, final gap {:e}",
            assoc.max_gap.last().copied().unwrap_or(f64::NAN)
        ),
    );
    rep.notes.push(format!(
        "reference variance is Var(W_eps(t) - W_eps(0)) = {v_time:.6}; deterministic drift terms are omitted"
    ));
    rep.tables.extend([sig, probes, res_tab, at]);
    Ok(rep.finish(started, spec.max_seconds))
}

// ------------------------------------------------------- additive noise wave

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdditiveNoiseSpec {
    pub eps: f64,
    /// Noise cell size as a fraction of the smallest scale.
    pub cell_ratio: f64,
    pub samples: usize,
    /// `(x, t)` probe points.
    pub probes: Vec<[f64; 2]>,
    /// Probe index pairs whose covariance is checked.
    pub pairs: Vec<[usize; 2]>,
    pub cauchy_eps: Vec<f64>,
    pub cauchy_samples: usize,
    pub se_factor: f64,
    pub mollifier: MollifierSpec,
    pub max_seconds: Option<f64>,
}

impl Default for AdditiveNoiseSpec {
    fn default() -> Self {
        AdditiveNoiseSpec {
            eps: 0.01,
            cell_ratio: 0.5,
            samples: 10_000,
            probes: vec![[0.0, 1.0], [0.5, 1.0], [0.3, 0.6], [-0.4, 0.8], [2.5, 1.0]],
            pairs: vec![[0, 1], [0, 2], [0, 3], [0, 4]],
            cauchy_eps: vec![0.04, 0.02, 0.01],
            cauchy_samples: 2000,
            se_factor: 5.0,
            mollifier: MollifierSpec::default(),
            max_seconds: Some(120.0),
        }
    }
}

/// Backward light cone `{(y, s): 0 <= s <= t, |y - x| <= t - s}` as a
/// counter-clockwise triangle in the `(y, s)` plane.
pub fn light_cone(x: f64, t: f64) -> Vec<(f64, f64)> {
    vec![(x - t, 0.0), (x + t, 0.0), (x, t)]
}

pub fn polygon_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise polygon `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let cross = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (cp, cq) = (cross(a, b, p), cross(a, b, q));
            if cp >= 0.0 {
                out.push(p);
            }
            if (cp >= 0.0) != (cq >= 0.0) {
                let s = cp / (cp - cq);
                out.push((p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1)));
            }
        }
    }
    out
}

/// `nu(Gamma(x1, t1) ∩ Gamma(x2, t2))`.
pub fn cone_overlap(a: [f64; 2], b: [f64; 2]) -> f64 {
    polygon_area(&clip_polygon(&light_cone(a[0], a[1]), &light_cone(b[0], b[1])))
}

/// `(1_Gamma(x, t) * k_eps ⊗ k_eps)(y, s)` for a symmetric kernel.
pub fn cone_test_function(kernel: &ScaledKernel, x: f64, t: f64, y: f64, s: f64) -> f64 {
    let r = kernel.support();
    let (lo, hi) = ((-r).max(-s), r.min(t - s));
    if lo >= hi {
        return 0.0;
    }
    let panels = ((hi - lo) / (0.5 * kernel.eps())).ceil().max(1.0) as usize;
    let d = x - y;
    quad::integrate(
        |b| {
            let w = t - s - b;
            kernel.eval(b, 0) * (kernel.cdf(d + w) - kernel.cdf(d - w))
        },
        lo,
        hi,
        panels,
        6,
    )
}

/// Sparse weights of the mollified cone indicator on the noise grid.
fn cone_weights(kernel: &ScaledKernel, grid: &Grid2D, x: f64, t: f64) -> Vec<(usize, f64)> {
    let r = kernel.support();
    let mass = kernel.cdf(r) - kernel.cdf(-r);
    let (gx, gt) = (grid.x, grid.t);
    let idx = |g: &Grid1D, v: f64| ((v - g.lower) / g.step).clamp(0.0, (g.count - 1) as f64);
    let (j0, j1) = (
        idx(&gx, x - t - r).floor() as usize,
        idx(&gx, x + t + r).ceil() as usize,
    );
    let (n0, n1) = (idx(&gt, -r).floor() as usize, idx(&gt, t + r).ceil() as usize);
    let mut out = Vec::new();
    for n in n0..=n1 {
        let s = gt.node(n);
        for j in j0..=j1 {
            let y = gx.node(j);
            let d = (y - x).abs();
            let w = if s - r >= 0.0 && d <= t - s - 2.0 * r {
                mass * mass
            } else if s + r < 0.0 || s - r > t || d > t - s + 2.0 * r {
                0.0
            } else {
                cone_test_function(kernel, x, t, y, s)
            };
            if w != 0.0 {
                out.push((n * gx.count + j, w));
            }
        }
    }
    out
}

fn noise_grid(probes: &[[f64; 2]], r: f64, cell: f64) -> Result<Grid2D> {
    let pad = r + cell;
    let xl = probes.iter().map(|p| p[0] - p[1]).fold(f64::INFINITY, f64::min) - pad;
    let xu = probes
        .iter()
        .map(|p| p[0] + p[1])
        .fold(f64::NEG_INFINITY, quad::nan_max)
        + pad;
    let tu = probes.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, quad::nan_max) + pad;
    Ok(Grid2D::new(
        Grid1D::with_max_step(xl, xu, cell)?,
        Grid1D::with_max_step(-pad, tu, cell)?,
    ))
}

pub fn run_additive_noise_wave(spec: &AdditiveNoiseSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("additive-noise-wave", seed);
    if spec.probes.is_empty() || spec.probes.iter().any(|p| !(p[1] > 0.0)) {
        return Err(param("probes", "need at least one probe with t > 0"));
    }
    if spec.pairs.iter().flatten().any(|&i| i >= spec.probes.len()) {
        return Err(param("pairs", "probe index out of range"));
    }
    let moll = Mollifier::new(spec.mollifier)?;
    let kernel = moll.scaled(spec.eps)?;
    let grid = noise_grid(&spec.probes, kernel.support(), spec.cell_ratio * spec.eps)?;
    let weights: Vec<Vec<(usize, f64)>> = spec
        .probes
        .par_iter()
        .map(|p| cone_weights(&kernel, &grid, p[0], p[1]))
        .collect();
    let master = seed::derive(seed, &[purpose::NOISE, 0]);
    let rows = sample_matrix(
        &|s: u64| -> Result<Vec<f64>> {
            let noise = sample_white_noise(NoiseGrid::Plane(grid), s)?;
            weights
                .iter()
                .map(|w| Ok(0.5 * white_noise_action_sparse(&noise, w)?))
                .collect()
        },
        spec.samples,
        master,
    )?;
    rep.record_interchange("u_eps(probes)", &rows)?;
    let cov = covariance_of(&rows);

    let mut tab = Table::new("covariance", &["i", "j", "estimate", "se", "reference", "z_score"]);
    let (x0, t0) = (spec.probes[0][0], spec.probes[0][1]);
    let var_ref = 0.25 * t0 * t0;
    let z = (cov.covariance[0][0] - var_ref).abs() / cov.standard_error[0][0];
    tab.push(vec![
        0.0,
        0.0,
        cov.covariance[0][0],
        cov.standard_error[0][0],
        var_ref,
        z,
    ]);
    rep.push_le(
        "variance",
        z,
        spec.se_factor,
        format!("Var u({x0}, {t0}) vs t^2/4 in units of SE"),
    );
    for &[i, j] in &spec.pairs {
        let reference = 0.25 * cone_overlap(spec.probes[i], spec.probes[j]);
        let z = (cov.covariance[i][j] - reference).abs() / cov.standard_error[i][j];
        tab.push(vec![
            i as f64,
            j as f64,
            cov.covariance[i][j],
            cov.standard_error[i][j],
            reference,
            z,
        ]);
        let kind = if reference == 0.0 { "disjoint" } else { "overlap" };
        rep.push_le(
            &format!("covariance_{i}_{j}"),
            z,
            spec.se_factor,
            format!("{kind} cones, in units of SE"),
        );
    }

    // L2 Cauchy behaviour along the ladder with one noise grid for all levels
    if spec.cauchy_eps.len() >= 2 {
        let emin = spec.cauchy_eps.iter().copied().fold(f64::INFINITY, f64::min);
        let kernels: Vec<ScaledKernel> = spec.cauchy_eps.iter().map(|&e| moll.scaled(e)).collect::<Result<_>>()?;
        let rmax = kernels.iter().map(ScaledKernel::support).fold(0.0, quad::nan_max);
        let cgrid = noise_grid(&spec.probes[..1], rmax, spec.cell_ratio * emin)?;
        let cw: Vec<Vec<(usize, f64)>> = kernels.par_iter().map(|k| cone_weights(k, &cgrid, x0, t0)).collect();
        let crow = sample_matrix(
            &|s: u64| -> Result<Vec<f64>> {
                let noise = sample_white_noise(NoiseGrid::Plane(cgrid), s)?;
                cw.iter()
                    .map(|w| Ok(0.5 * white_noise_action_sparse(&noise, w)?))
                    .collect()
            },
            spec.cauchy_samples,
            seed::derive(seed, &[purpose::NOISE, 1]),
        )?;
        let diffs: Vec<Vec<f64>> = crow
            .iter()
            .map(|r| r.windows(2).map(|w| w[1] - w[0]).collect())
            .collect();
        let m2 = moments_of(&diffs, 2);
        let mut ct = Table::new("cauchy", &["eps_coarse", "eps_fine", "mean_sq_difference", "se"]);
        for k in 0..m2.mean.len() {
            ct.push(vec![
                spec.cauchy_eps[k],
                spec.cauchy_eps[k + 1],
                m2.mean[k],
                m2.standard_error[k],
            ]);
        }
        let dec = m2.mean.windows(2).all(|w| w[1] < w[0]);
        rep.push_flag("cauchy", dec, "E(u_eps_k - u_eps_k+1)^2 decreasing along the ladder");
        rep.tables.push(ct);
    }
    rep.notes.push(format!(
        "noise cells {:.4e} x {:.4e}, {} cells",
        grid.x.step,
        grid.t.step,
        grid.x.count * grid.t.count
    ));
    rep.tables.push(tab);
    Ok(rep.finish(started, spec.max_seconds))
}

// ------------------------------------------------------------ geometric wave

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometricWaveSpec {
    pub ladder: EpsLadder,
    pub time: f64,
    pub probes: ProbeGrid,
    /// Half-width of the sampled curve.
    pub extent: f64,
    /// Half-width of the arc-length table.
    pub table_extent: f64,
    pub final_max: f64,
    pub sine_amplitude: f64,
    pub sine_tol: f64,
    pub flat_tol: f64,
    pub mollifier: MollifierSpec,
    pub max_seconds: Option<f64>,
}

impl Default for GeometricWaveSpec {
    fn default() -> Self {
        GeometricWaveSpec {
            ladder: EpsLadder {
                eps0: 0.01,
                ratio: 0.5,
                count: 8,
                ..EpsLadder::default()
            },
            time: 0.5,
            probes: ProbeGrid {
                lower: -0.4,
                upper: 0.4,
                count: 5,
            },
            extent: 1.5,
            table_extent: 1.0,
            final_max: 0.05,
            sine_amplitude: 1.0,
            sine_tol: 1e-3,
            flat_tol: 1e-4,
            mollifier: MollifierSpec::default(),
            max_seconds: Some(180.0),
        }
    }
}

fn curve_arc(path: &Arc<SampledProcess>, moll: &Mollifier, eps: f64, half: f64) -> Result<ArcLength> {
    let cp = embed_path(path.clone(), moll, eps, Axis::X)?.derivative(1);
    ArcLength::tabulate(&cp, -half, half, eps / 16.0)
}

/// Arc length of `c(x) = a sin x` from 0, by quadrature.
fn sine_arc(a: f64, z: f64) -> f64 {
    let panels = (z.abs() * 64.0).ceil().max(1.0) as usize;
    quad::integrate(|s| (1.0 + (a * s.cos()).powi(2)).sqrt(), 0.0, z, panels, 8)
}

/// `L^{-1}(L(x) - t)` for the sine curve, by Newton iteration.
pub fn sine_backward_foot(a: f64, x: f64, t: f64) -> f64 {
    let target = sine_arc(a, x) - t;
    let mut z = x - t;
    for _ in 0..50 {
        let step = (sine_arc(a, z) - target) / (1.0 + (a * z.cos()).powi(2)).sqrt();
        z -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    z
}

pub fn run_geometric_wave(spec: &GeometricWaveSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("geometric-wave", seed);
    spec.ladder.validate()?;
    let moll = Mollifier::new(spec.mollifier)?;
    let levels = spec.ladder.values();
    let emin = spec.ladder.finest();
    let px = spec.probes.grid()?;
    let path_grid = Grid1D::with_max_step(-spec.extent, spec.extent, emin / 8.0)?;
    let w = Arc::new(sample_brownian(path_grid, seed::derive(seed, &[purpose::PATH]))?);
    let sol_grid = Grid2D::new(px, Grid1D::new(0.0, spec.time, 2)?);
    let u0: FieldRef = Analytic::of_x(Profile::cos());
    let zero: FieldRef = Analytic::zero();

    let per_level: Vec<Result<(Vec<f64>, Vec<f64>)>> = levels
        .par_iter()
        .map(|&e| {
            let arc = curve_arc(&w, &moll, e, spec.table_extent)?;
            let dist = px
                .nodes()
                .map(|x| Ok((arclength_characteristics(&arc, x, spec.time)?.0 - x).abs()))
                .collect::<Result<Vec<f64>>>()?;
            let sol = geometric_wave_solve(&arc, u0.as_ref(), zero.as_ref(), sol_grid, 1)?;
            let gap = (0..px.count)
                .map(|j| (sol.level(0, 1)[j] - px.node(j).cos()).abs())
                .collect();
            Ok((dist, gap))
        })
        .collect();
    let mut dist_tab = Table::new(
        "brownian_foot_distance",
        &std::iter::once("eps".to_string())
            .chain(px.nodes().map(|x| format!("x={x}")))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    let mut gap_tab = Table::new(
        "brownian_solution_gap",
        &dist_tab.header.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let mut dists = Vec::new();
    let mut gaps = Vec::new();
    for (e, r) in levels.iter().zip(per_level) {
        let (d, g) = r?;
        dist_tab.push(std::iter::once(*e).chain(d.iter().copied()).collect());
        gap_tab.push(std::iter::once(*e).chain(g.iter().copied()).collect());
        dists.push(d);
        gaps.push(g);
    }
    let strictly = (0..px.count).all(|j| dists.windows(2).all(|w| w[1][j] < w[0][j]));
    rep.push_flag(
        "brownian_decreasing",
        strictly,
        "|gamma+_eps(x, t, 0) - x| strictly decreasing at every probe",
    );
    let final_max = dists
        .last()
        .map_or(f64::NAN, |d| d.iter().copied().fold(0.0, quad::nan_max));
    rep.push_le(
        "brownian_final",
        final_max,
        spec.final_max,
        "largest foot distance at the finest level",
    );
    let shrinks = (0..px.count).all(|j| gaps.last().unwrap()[j] < gaps[0][j]);
    rep.push_flag(
        "brownian_solution",
        shrinks,
        "|u_eps(x, t) - u0(x)| smaller at the finest than at the coarsest level",
    );

    // C1 sine curve
    let a = spec.sine_amplitude;
    let sine = Arc::new(SampledProcess::deterministic(path_grid, move |x| a * x.sin()));
    let mut sine_tab = Table::new("sine_foot_error", &["eps", "max_error"]);
    let mut last = f64::NAN;
    for &e in &levels {
        let arc = curve_arc(&sine, &moll, e, spec.table_extent)?;
        let err = px
            .nodes()
            .map(|x| Ok((arclength_characteristics(&arc, x, spec.time)?.0 - sine_backward_foot(a, x, spec.time)).abs()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, quad::nan_max);
        sine_tab.push(vec![e, err]);
        last = err;
    }
    rep.push_le(
        "sine_foot",
        last,
        spec.sine_tol,
        "|gamma_eps - L^-1(L(x) - t)| at the finest level",
    );

    // flat curve: unit speed d'Alembert with u0 = sin, u1 = cos
    let flat = Arc::new(SampledProcess::deterministic(path_grid, |_| 0.0));
    let arc = curve_arc(&flat, &moll, levels[0], spec.table_extent)?;
    let sol = geometric_wave_solve(
        &arc,
        Analytic::of_x(Profile::sin()).as_ref(),
        Analytic::of_x(Profile::cos()).as_ref(),
        sol_grid,
        8,
    )?;
    let e = sup_error(&sol, 0, |x, t| (x + t).sin());
    rep.push_le("flat", e, spec.flat_tol, "flat curve against sin(x + t)");
    rep.tables.extend([dist_tab, gap_tab, sine_tab]);
    Ok(rep.finish(started, spec.max_seconds))
}

// -------------------------------------------------------- random speed wave

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSpeedSpec {
    pub seeds: usize,
    pub ladder: EpsLadder,
    pub kappa: f64,
    pub horizon: f64,
    /// Slope of the domain of determinacy; must bound every mollified speed.
    pub speed_bound: f64,
    pub marginal_lo: f64,
    pub marginal_hi: f64,
    pub correlation_length: f64,
    pub coarse_step: f64,
    pub extent: f64,
    pub mollifier: MollifierSpec,
    pub nx: usize,
    pub nt: usize,
    pub tol: f64,
    pub u0: Profile,
    pub constant_tol: f64,
    pub max_seconds: Option<f64>,
}

impl Default for RandomSpeedSpec {
    fn default() -> Self {
        RandomSpeedSpec {
            seeds: 10,
            ladder: EpsLadder {
                eps0: 0.1,
                ratio: 0.5,
                count: 5,
                ..EpsLadder::default()
            },
            kappa: 2.0,
            horizon: 0.5,
            speed_bound: 2.02,
            marginal_lo: 0.5,
            marginal_hi: 2.0,
            correlation_length: 0.5,
            coarse_step: 0.1,
            extent: 6.0,
            mollifier: MollifierSpec {
                order: 2,
                ..MollifierSpec::default()
            },
            nx: 201,
            nt: 101,
            tol: 1e-12,
            u0: Profile::Gaussian {
                amplitude: 1.0,
                centre: 0.0,
                width: 0.5,
            },
            constant_tol: 1e-4,
            max_seconds: None,
        }
    }
}

struct SpeedRun {
    gaps: Vec<f64>,
    discretization: f64,
    sup_speed: f64,
    finest: Vec<f64>,
}

fn random_speed_one(
    spec: &RandomSpeedSpec,
    dom: &DeterminacyDomain,
    moll: &Mollifier,
    lam0: Arc<SampledProcess>,
) -> Result<SpeedRun> {
    let u0: FieldRef = Analytic::of_x(spec.u0.clone());
    let reach = 2.0 * spec.kappa;
    let rect = Rect::new(-reach, reach, 0.0, spec.horizon);
    let solve = |lam: FieldRef, nx: usize, nt: usize, rk4: f64| -> Result<SolutionField> {
        let sys = wave_to_system(
            &zero_wave(lam, u0.clone(), Analytic::zero()),
            rect,
            0.1 * spec.marginal_lo,
            201,
        )?;
        let opts = SolveOptions {
            tol: spec.tol,
            rk4_max_step: Some(rk4),
            ..SolveOptions::default()
        };
        solve_system(&sys, dom, domain_grid(dom, nx, nt)?, &opts)
    };
    let emin = spec.ladder.finest();
    let reference: FieldRef = Arc::new(SplinePath::new(&lam0, Axis::X));
    let coarse = solve(reference.clone(), spec.nx, spec.nt, emin / 16.0)?;
    let fine = solve(reference, 2 * spec.nx - 1, 2 * spec.nt - 1, emin / 16.0)?;
    let discretization = coarse
        .nodes()
        .map(|(j, n)| (coarse.node(2, j, n).unwrap() - fine.node(2, 2 * j, 2 * n).unwrap_or(f64::NAN)).abs())
        .fold(0.0, quad::nan_max);
    let mut gaps = Vec::new();
    let mut sup_speed: f64 = 0.0;
    let mut finest = Vec::new();
    for e in spec.ladder.values() {
        let emb = embed_path(lam0.clone(), moll, e, Axis::X)?;
        let (lo, hi) = emb.safe_interval();
        let tab = emb.tabulate(lo.max(-reach), hi.min(reach), e / 16.0, 2)?;
        let g = tab.grid();
        for s in g.nodes() {
            sup_speed = sup_speed.max(tab.value(s, 0.0)?.abs());
        }
        if sup_speed > spec.speed_bound {
            return Err(Error::Invariant(format!(
                "mollified speed {sup_speed} exceeds the domain slope {}",
                spec.speed_bound
            )));
        }
        let u = solve(Arc::new(tab), spec.nx, spec.nt, e / 16.0)?;
        gaps.push(
            u.nodes()
                .map(|(j, n)| (u.node(2, j, n).unwrap() - coarse.node(2, j, n).unwrap()).abs())
                .fold(0.0, quad::nan_max),
        );
        finest = u.nodes().map(|(j, n)| u.node(2, j, n).unwrap()).collect();
    }
    Ok(SpeedRun {
        gaps,
        discretization,
        sup_speed,
        finest,
    })
}

pub fn run_random_speed_wave(spec: &RandomSpeedSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("random-speed-wave", seed);
    spec.ladder.validate()?;
    if !(spec.marginal_lo > 0.0 && spec.marginal_hi > spec.marginal_lo) {
        return Err(param("marginal_lo", "need 0 < marginal_lo < marginal_hi"));
    }
    let moll = Mollifier::new(spec.mollifier)?;
    let dom = DeterminacyDomain::new(spec.kappa, spec.horizon, spec.speed_bound)?;
    let fine_grid = Grid1D::with_max_step(-spec.extent, spec.extent, spec.ladder.finest() / 8.0)?;
    let coarse_grid = Grid1D::with_max_step(-spec.extent, spec.extent, spec.coarse_step)?;
    let marginal = UniformMarginal {
        lo: spec.marginal_lo,
        hi: spec.marginal_hi,
    };
    let kernel = CovarianceKernel::SquaredExponential {
        ell: spec.correlation_length,
    };

    let runs: Vec<Result<SpeedRun>> = (0..spec.seeds)
        .into_par_iter()
        .map(|s| {
            let g = sample_gaussian(
                coarse_grid,
                &kernel,
                1.0,
                seed::derive(seed, &[purpose::FIELD, s as u64]),
            )?;
            let lam0 = Arc::new(translation_transform(&g.resample(fine_grid)?, &marginal));
            random_speed_one(spec, &dom, &moll, lam0)
        })
        .collect();
    let levels = spec.ladder.values();
    let mut header = vec!["seed".to_string(), "discretization".into(), "sup_speed".into()];
    header.extend(levels.iter().map(|e| format!("gap_eps={e}")));
    let mut tab = Table::new("gaps", &header.iter().map(String::as_str).collect::<Vec<_>>());
    let (mut decreasing, mut within) = (0, 0);
    let mut finest_rows = Vec::new();
    for (s, r) in runs.into_iter().enumerate() {
        let r = r?;
        let dec = r.gaps.windows(2).all(|w| w[1] < w[0]);
        let ok = r.gaps.last().is_some_and(|g| *g <= 2.0 * r.discretization);
        decreasing += dec as usize;
        within += ok as usize;
        let mut row = vec![s as f64, r.discretization, r.sup_speed];
        row.extend(&r.gaps);
        tab.push(row);
        finest_rows.push(r.finest);
    }
    rep.push_le(
        "decreasing",
        (spec.seeds - decreasing) as f64,
        0.0,
        format!("{decreasing}/{} seeds strictly decreasing", spec.seeds),
    );
    rep.push_le(
        "final_vs_discretization",
        (spec.seeds - within) as f64,
        0.0,
        format!(
            "{within}/{} seeds with final gap <= 2x discretization estimate",
            spec.seeds
        ),
    );
    if finest_rows.len() > 1 {
        rep.record_interchange("u_eps at the finest level over seeds", &finest_rows)?;
    }

    // constant speed through the same pipeline
    let one = Arc::new(SampledProcess::deterministic(fine_grid, |_| 1.0));
    let emb = embed_path(one, &moll, spec.ladder.finest(), Axis::X)?;
    let reach = 2.0 * spec.kappa;
    let (lo, hi) = emb.safe_interval();
    let tab1 = Arc::new(emb.tabulate(lo.max(-reach), hi.min(reach), spec.ladder.finest() / 16.0, 2)?);
    let u0: FieldRef = Analytic::of_x(spec.u0.clone());
    let sys = wave_to_system(
        &zero_wave(tab1, u0, Analytic::zero()),
        Rect::new(-reach, reach, 0.0, spec.horizon),
        0.1,
        201,
    )?;
    let sol = solve_system(
        &sys,
        &dom,
        domain_grid(&dom, spec.nx, spec.nt)?,
        &SolveOptions {
            tol: spec.tol,
            ..SolveOptions::default()
        },
    )?;
    let p = spec.u0.clone();
    let e = sup_error(&sol, 2, |x, t| 0.5 * (p.eval(x + t, 0) + p.eval(x - t, 0)));
    rep.push_le("constant_speed", e, spec.constant_tol, "lambda = 1 against d'Alembert");
    rep.tables.push(tab);
    Ok(rep.finish(started, spec.max_seconds))
}

// ---------------------------------------------------------------- classifier

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSpec {
    pub ladder: EpsLadder,
    pub options: ClassifyOptions,
    pub p_prime: f64,
    pub spike_omega: f64,
    pub spike_levels: usize,
    pub exponent_tol: f64,
    pub log_tol: f64,
    pub constant_rel_tol: f64,
    pub roughness_eps: Vec<f64>,
    pub roughness_samples: usize,
    pub max_seconds: Option<f64>,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            ladder: EpsLadder::default(),
            options: ClassifyOptions::default(),
            p_prime: 2.0,
            spike_omega: 0.3,
            spike_levels: 8,
            exponent_tol: 0.05,
            log_tol: 0.1,
            constant_rel_tol: 0.05,
            roughness_eps: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            roughness_samples: 20,
            max_seconds: None,
        }
    }
}

fn verdict_row(tab: &mut Table, case: usize, s: &EpsSeries, v: &asymptotics::Classification) {
    let code = match v.verdict {
        Verdict::Moderate { .. } => 0.0,
        Verdict::NegligibleToOrder { .. } => 1.0,
        Verdict::LogType { .. } => 2.0,
        Verdict::Bounded { .. } => 3.0,
        Verdict::L1Type { .. } => 4.0,
        Verdict::NonModerateToOrder { .. } => 5.0,
        Verdict::Inconclusive => 6.0,
    };
    let _ = s;
    tab.push(vec![
        case as f64,
        code,
        v.exponent,
        v.constant,
        v.residual,
        v.tail_decay,
        v.tail_growth,
        v.exponential_rate,
    ]);
}

pub fn run_classifier(spec: &ClassifierSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("classifier", seed);
    spec.ladder.validate()?;
    let eps = spec.ladder.values();
    let o = &spec.options;
    let mut tab = Table::new(
        "verdicts",
        &[
            "case",
            "verdict",
            "exponent",
            "constant",
            "residual",
            "tail_decay",
            "tail_growth",
            "exponential_rate",
        ],
    );
    let series = |f: &dyn Fn(f64) -> f64| {
        EpsSeries::from_values(eps.clone(), eps.iter().map(|&e| f(e)).collect(), NormOrder::Pathwise)
    };

    let s = series(&|e| e.powi(-2))?;
    let c = classify(&s, o)?;
    verdict_row(&mut tab, 0, &s, &c);
    let ok = matches!(c.verdict, Verdict::Moderate { a } if (a - 2.0).abs() <= spec.exponent_tol);
    rep.push_flag("power", ok, format!("eps^-2 -> {}", c.verdict));

    let s = series(&|e| 3.0 * e.ln().abs())?;
    let c = classify(&s, o)?;
    verdict_row(&mut tab, 1, &s, &c);
    let ok = matches!(c.verdict, Verdict::LogType { c } if (c - 3.0).abs() <= spec.log_tol);
    rep.push_flag("log", ok, format!("3|log eps| -> {}", c.verdict));

    let s = series(&|_| 2.5)?;
    let c = classify(&s, o)?;
    verdict_row(&mut tab, 2, &s, &c);
    let ok = matches!(c.verdict, Verdict::Bounded { c } if (c / 2.5 - 1.0).abs() <= spec.constant_rel_tol);
    rep.push_flag("constant", ok, format!("2.5 -> {}", c.verdict));

    let fam = ExponentialTail { p_prime: spec.p_prime };
    let s = fam.moment_series(&eps, spec.p_prime - 1.0)?;
    let c = classify(&s, o)?;
    verdict_row(&mut tab, 3, &s, &c);
    rep.push_flag(
        "tail_family_negligible",
        matches!(c.verdict, Verdict::NegligibleToOrder { .. }),
        format!("p = p' - 1 -> {}, rate {:.4}", c.verdict, c.exponential_rate),
    );
    let s = fam.moment_series(&eps, spec.p_prime)?;
    let c = classify(&s, o)?;
    verdict_row(&mut tab, 4, &s, &c);
    let exact_one = s.measurements.iter().all(|m| *m == 1.0);
    rep.push_flag(
        "tail_family_bounded",
        exact_one && matches!(c.verdict, Verdict::Bounded { .. }),
        format!("p = p' -> {}, all moments exactly 1: {exact_one}", c.verdict),
    );

    let spike = SlidingSpike;
    let path = spike.pathwise_series(spec.spike_omega, spec.spike_levels)?;
    let l1 = spike.l1_series(&path.eps)?;
    let cp = classify(&path, o)?;
    let cl = classify(&l1, o)?;
    verdict_row(&mut tab, 5, &path, &cp);
    verdict_row(&mut tab, 6, &l1, &cl);
    let bounded = l1.measurements.iter().all(|m| *m <= 1.0) && matches!(cl.verdict, Verdict::Bounded { .. });
    rep.push_flag("spike_l1", bounded, format!("E|u_eps| -> {}", cl.verdict));
    let non_moderate = matches!(cp.verdict, Verdict::NonModerateToOrder { .. });
    rep.push_flag(
        "spike_pathwise",
        non_moderate,
        format!("pathwise along the planted ladder -> {}", cp.verdict),
    );

    // roughness of the embedded Brownian derivative
    let r_eps = spec.roughness_eps.clone();
    let emin = r_eps.iter().copied().fold(f64::INFINITY, f64::min);
    let emax = r_eps.iter().copied().fold(0.0, quad::nan_max);
    let moll = Mollifier::new(MollifierSpec::default())?;
    let reach = moll.scaled(emax)?.support() + 0.05;
    let grid = Grid1D::with_max_step(-reach, 1.0 + reach, emin / 8.0)?;
    let rough = measure_series(
        |e, s| {
            let w = Arc::new(sample_brownian(grid, s)?);
            Ok(Arc::new(embed_path(w, &moll, e, Axis::X)?.derivative(1)) as FieldRef)
        },
        Rect::new(0.0, 1.0, 0.0, 0.0),
        Partial::VALUE,
        NormOrder::Lp(2),
        &r_eps,
        spec.roughness_samples,
        seed::derive(seed, &[purpose::PATH]),
    )?;
    let increasing = rough.measurements.windows(2).all(|w| w[1] > w[0]);
    rep.push_flag(
        "roughness_growth",
        increasing,
        "||sup |W'_eps| ||_2 increasing as eps decreases",
    );
    let rc = classify(&rough, o)?;
    verdict_row(&mut tab, 7, &rough, &rc);
    let son = rough.sup_of_norm.clone().unwrap_or_default();
    for (k, e) in rough.eps.iter().enumerate() {
        rep.interchange.push(crate::scenarios::InterchangeRecord {
            label: format!("W'_eps on [0, 1], eps = {e}"),
            p: 2,
            sup_of_norm: son[k],
            norm_of_sup: rough.measurements[k],
            holds: son[k] <= rough.measurements[k],
        });
    }
    let mut rt = Table::new("roughness", &["eps", "norm_of_sup", "sup_of_norm"]);
    for (k, e) in rough.eps.iter().enumerate() {
        rt.push(vec![*e, rough.measurements[k], son[k]]);
    }
    rep.notes.push(
        "verdict codes: 0 moderate, 1 negligible-to-order, 2 log-type, 3 bounded, 4 l1-type, 5 non-moderate-to-order, 6 inconclusive"
            .into(),
    );
    rep.notes.push(
        "cases: 0 eps^-2, 1 3|log eps|, 2 constant, 3-4 exponential tail, 5-6 sliding spike, 7 W'_eps roughness".into(),
    );
    rep.tables.extend([tab, rt]);
    Ok(rep.finish(started, spec.max_seconds))
}

// ---------------------------------------------------------- mollifier suite

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifierSuiteSpec {
    pub orders: Vec<u32>,
    pub eps: f64,
    pub mass_tol: f64,
    pub moment_tol: f64,
    pub commute_tol: f64,
    pub cutoff_tol: f64,
    pub polynomial_tol: f64,
    pub alternative_cutoff: [f64; 2],
    pub max_seconds: Option<f64>,
}

impl Default for MollifierSuiteSpec {
    fn default() -> Self {
        MollifierSuiteSpec {
            orders: vec![0, 2, 4, 6],
            eps: 0.05,
            mass_tol: 1e-10,
            moment_tol: 1e-8,
            commute_tol: 1e-6,
            cutoff_tol: 1e-8,
            polynomial_tol: 1e-8,
            alternative_cutoff: [1.5, 3.0],
            max_seconds: None,
        }
    }
}

pub fn run_mollifier_suite(spec: &MollifierSuiteSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("mollifier", seed);
    let mut tab = Table::new(
        "mollifier",
        &[
            "order",
            "mass_error",
            "max_moment",
            "commute_error",
            "cutoff_difference",
            "polynomial_error",
        ],
    );
    let grid = Grid1D::with_max_step(-3.0, 3.0, spec.eps / 8.0)?;
    let sin = Arc::new(SampledProcess::deterministic(grid, f64::sin));
    let cos = Arc::new(SampledProcess::deterministic(grid, f64::cos));
    let (mut mass_w, mut mom_w, mut com_w, mut cut_w, mut pol_w) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &m in &spec.orders {
        let ms = MollifierSpec {
            order: m,
            ..MollifierSpec::default()
        };
        let moll = Mollifier::new(ms)?;
        let k = moll.scaled(spec.eps)?;
        let mass = (k.moment(0) - 1.0).abs();
        let mom = (1..=m).map(|j| moll.moment(j).abs()).fold(0.0, quad::nan_max);

        let d_of_emb = embed_path(sin.clone(), &moll, spec.eps, Axis::X)?.derivative(1);
        let emb_of_d = embed_path(cos.clone(), &moll, spec.eps, Axis::X)?;
        let alt = Mollifier::new(MollifierSpec {
            cutoff_inner: spec.alternative_cutoff[0],
            cutoff_outer: spec.alternative_cutoff[1],
            ..ms
        })?;
        let emb_alt = embed_path(sin.clone(), &alt, spec.eps, Axis::X)?;
        let emb = embed_path(sin.clone(), &moll, spec.eps, Axis::X)?;
        let pts: Vec<f64> = (0..=20).map(|i| -2.0 + 0.2 * i as f64).collect();
        let mut com: f64 = 0.0;
        let mut cut: f64 = 0.0;
        for &x in &pts {
            com = com.max((d_of_emb.value(x, 0.0)? - emb_of_d.value(x, 0.0)?).abs());
            cut = cut.max((emb.value(x, 0.0)? - emb_alt.value(x, 0.0)?).abs());
        }
        let mut pol: f64 = 0.0;
        for d in 0..=m {
            let poly = Arc::new(SampledProcess::deterministic(grid, move |x| (x / 2.0).powi(d as i32)));
            let e = embed_path(poly, &moll, spec.eps, Axis::X)?;
            for &x in &pts {
                pol = pol.max((e.value(x, 0.0)? - (x / 2.0).powi(d as i32)).abs());
            }
        }
        tab.push(vec![m as f64, mass, mom, com, cut, pol]);
        mass_w = mass_w.max(mass);
        mom_w = mom_w.max(mom);
        com_w = com_w.max(com);
        cut_w = cut_w.max(cut);
        pol_w = pol_w.max(pol);
    }
    rep.push_le("mass", mass_w, spec.mass_tol, "|int chi rho_eps - 1|");
    rep.push_le("moments", mom_w, spec.moment_tol, "max_j |int x^j rho|, j = 1..M");
    rep.push_le(
        "commute",
        com_w,
        spec.commute_tol,
        "embedding of the derivative vs derivative of the embedding",
    );
    rep.push_le("cutoff", cut_w, spec.cutoff_tol, "embedding under two cutoffs");
    rep.push_le(
        "polynomial",
        pol_w,
        spec.polynomial_tol,
        "reproduction of (x/2)^d, d <= M",
    );
    rep.tables.push(tab);
    Ok(rep.finish(started, spec.max_seconds))
}

// -------------------------------------------------------------------- custom

/// Constant-coefficient system `u_t + diag(lambda) u_x = F u + g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomSpec {
    pub lambda: Vec<f64>,
    pub coupling: Vec<Vec<f64>>,
    pub source: Vec<f64>,
    pub initial: Vec<Profile>,
    pub kappa: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
    pub tol: f64,
    pub max_seconds: Option<f64>,
}

impl Default for CustomSpec {
    fn default() -> Self {
        CustomSpec {
            lambda: vec![1.0],
            coupling: vec![],
            source: vec![],
            initial: vec![Profile::sin()],
            kappa: 2.0,
            horizon: 1.0,
            nx: 101,
            nt: 51,
            tol: 1e-8,
            max_seconds: None,
        }
    }
}

pub fn run_custom(spec: &CustomSpec, seed: u64) -> Result<ScenarioReport> {
    let started = Instant::now();
    let mut rep = ScenarioReport::new("custom", seed);
    let n = spec.lambda.len();
    let coupling = if spec.coupling.is_empty() {
        vec![vec![0.0; n]; n]
    } else {
        spec.coupling.clone()
    };
    let source = if spec.source.is_empty() {
        vec![0.0; n]
    } else {
        spec.source.clone()
    };
    let c = |v: f64| Analytic::constant(v) as FieldRef;
    let problem = HyperbolicProblem::new(
        spec.lambda.iter().map(|&v| c(v)).collect(),
        coupling.iter().map(|r| r.iter().map(|&v| c(v)).collect()).collect(),
        source.iter().map(|&v| c(v)).collect(),
        spec.initial
            .iter()
            .map(|p| Analytic::of_x(p.clone()) as FieldRef)
            .collect(),
    )?;
    let dom = determinacy_domain(&problem.lambda, spec.kappa, spec.horizon)?;
    let opts = SolveOptions {
        tol: spec.tol,
        audit_seed: seed,
        ..SolveOptions::default()
    };
    let sol = solve_system(&problem, &dom, domain_grid(&dom, spec.nx, spec.nt)?, &opts)?;
    let g = &sol.diagnostics.gronwall;
    rep.push_flag(
        "gronwall",
        g.holds,
        format!("sup |u| = {:e}, bound = {:e}", g.sup_solution, g.bound),
    );
    rep.push_le(
        "audit_local",
        sol.diagnostics.audit.max_local_residual,
        10.0 * spec.tol,
        "one-step characteristic residual at random nodes",
    );
    let mut header = vec!["x".to_string(), "t".into()];
    header.extend((1..=n).map(|i| format!("u{i}")));
    let mut tab = Table::new("solution", &header.iter().map(String::as_str).collect::<Vec<_>>());
    for (j, k) in sol.nodes() {
        let mut row = vec![sol.grid.x.node(j), sol.grid.t.node(k)];
        row.extend((0..n).map(|i| sol.node(i, j, k).unwrap()));
        tab.push(row);
    }
    rep.notes.push(format!(
        "domain slope c = {:.6}, iterations {}",
        dom.speed, sol.diagnostics.iterations
    ));
    rep.tables.push(tab);
    Ok(rep.finish(started, spec.max_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_oracle() {
        assert!((cone_overlap([0.0, 1.0], [0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cone_overlap([0.0, 1.0], [2.5, 1.0]), 0.0);
        // identical apex heights shifted by d overlap in a triangle of half-base 1 - d/2
        let d: f64 = 0.5;
        assert!((cone_overlap([0.0, 1.0], [d, 1.0]) - (1.0 - d / 2.0).powi(2)).abs() < 1e-14);
        // a cone nested inside another
        assert!((cone_overlap([0.0, 1.0], [0.1, 0.5]) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn mollified_cone_mass() {
        let k = Mollifier::new(MollifierSpec::default()).unwrap().scaled(0.02).unwrap();
        // integral of the mollified indicator equals the cone area
        let area = quad::integrate(
            |s| quad::integrate(|y| cone_test_function(&k, 0.0, 1.0, y, s), -1.2, 1.2, 240, 4),
            -0.2,
            1.2,
            140,
            4,
        );
        assert!((area - 1.0).abs() < 1e-6, "{area}");
        assert!((cone_test_function(&k, 0.0, 1.0, 0.0, 0.5) - 1.0).abs() < 1e-10);
        assert_eq!(cone_test_function(&k, 0.0, 1.0, 3.0, 0.5), 0.0);
    }

    #[test]
    fn brownian_variance_quadrature() {
        let k = Mollifier::new(MollifierSpec::default()).unwrap().scaled(0.01).unwrap();
        // E W_eps(t)^2 = t - E max(A, B) for A, B iid N(0, eps^2)
        let v = mollified_brownian_covariance(&k, 1.0, 1.0);
        let expect = 1.0 - 0.01 / std::f64::consts::PI.sqrt();
        assert!((v - expect).abs() < 1e-9, "{v} {expect}");
        // E W_eps(1) W_eps(0) = E A^+
        let c = mollified_brownian_covariance(&k, 1.0, 0.0);
        assert!((c - 0.01 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9, "{c}");
    }

    #[test]
    fn heat_limit_residual() {
        let exact = |x: f64, t: f64| (-x * x / (1.0 + 2.0 * t)).exp() / (1.0 + 2.0 * t).sqrt();
        let smooth = |x: f64, t: f64| gaussian_smooth(|y| (-y * y).exp(), x, t);
        for x in [-1.0, 0.0, 0.7] {
            assert!((smooth(x, 0.8) - exact(x, 0.8)).abs() < 1e-13);
            let (res, bound) = heat_residual(&smooth, x, 1.0, 0.01);
            assert!(res.abs() <= bound, "{res} {bound}");
        }
    }

    #[test]
    fn sine_foot_reference() {
        // zero amplitude: unit speed
        assert!((sine_backward_foot(0.0, 0.3, 0.5) + 0.2).abs() < 1e-14);
        let z = sine_backward_foot(1.0, 0.2, 0.5);
        assert!((sine_arc(1.0, 0.2) - sine_arc(1.0, z) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn calibration_small() {
        let spec = CalibrationSpec {
            nx: 101,
            nt: 51,
            wave_tol: 1e-2,
            max_seconds: None,
            ..CalibrationSpec::default()
        };
        let rep = run_calibration(&spec, 1).unwrap();
        assert!(rep.passed(), "{}", rep.verdict_text());
    }

    #[test]
    fn custom_empty_domain() {
        let spec = CustomSpec {
            lambda: vec![3.0],
            kappa: 1.0,
            ..CustomSpec::default()
        };
        assert!(matches!(run_custom(&spec, 0), Err(Error::EmptyDomain { .. })));
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = ScenarioSpec::Ogawa(OgawaSpec::default());
        let text = toml::to_string(&s).unwrap();
        let back: ScenarioSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
        let bad = toml::from_str::<ScenarioSpec>("kind = \"ogawa\"\nepsilonn = 0.1\n");
        assert!(bad.is_err());
    }
}
