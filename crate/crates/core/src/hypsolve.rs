//! Solvers for `(d_t + Lambda d_x) u = F u + g` on a domain of determinacy.
//!
//! The integral form along characteristics is discretised on a space-time
//! grid: each sweep follows every characteristic back one time level
//! (RK4), interpolates the previous level with cubic Lagrange stencils and
//! applies the trapezoidal rule to the source. Sweeps are repeated as a
//! Picard iteration until successive iterates agree to `tol`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::characteristics::{rk4_flow, ArcLength, DeterminacyDomain};
use crate::error::{param, Error, Rect, Result};
use crate::fields::{Grid1D, Grid2D};
use crate::mollify::{negate, Analytic, FieldRef, FnField, Partial, SmoothField};
use crate::quad::Composite;
use crate::seed;

#[derive(Clone)]
pub struct HyperbolicProblem {
    /// Diagonal of the principal part.
    pub lambda: Vec<FieldRef>,
    /// `coupling[i][j] = f_ij`.
    pub coupling: Vec<Vec<FieldRef>>,
    pub source: Vec<FieldRef>,
    /// Initial data, evaluated at `t = 0`.
    pub initial: Vec<FieldRef>,
}

impl HyperbolicProblem {
    pub fn new(
        lambda: Vec<FieldRef>,
        coupling: Vec<Vec<FieldRef>>,
        source: Vec<FieldRef>,
        initial: Vec<FieldRef>,
    ) -> Result<Self> {
        let n = lambda.len();
        if n == 0 {
            return Err(Error::Shape("system has no components".into()));
        }
        if coupling.len() != n || coupling.iter().any(|r| r.len() != n) || source.len() != n || initial.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} speeds, an {n}x{n} coupling matrix, {n} sources and {n} initial values"
            )));
        }
        Ok(HyperbolicProblem {
            lambda,
            coupling,
            source,
            initial,
        })
    }

    /// Uncoupled transport of each component.
    pub fn transport(lambda: Vec<FieldRef>, initial: Vec<FieldRef>) -> Result<Self> {
        let n = lambda.len();
        let zero: FieldRef = Analytic::zero();
        HyperbolicProblem::new(lambda, vec![vec![zero.clone(); n]; n], vec![zero; n], initial)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest RK4 step used for characteristic feet (default: one step per time level).
    pub rk4_max_step: Option<f64>,
    /// Extra grid cells computed beyond `[-kappa, kappa]` where the data allow it.
    pub pad_cells: usize,
    pub audit_points: usize,
    pub audit_seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 64,
            rk4_max_step: None,
            pad_cells: 8,
            audit_points: 100,
            audit_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub points: usize,
    /// Residual of one discrete step with independently recomputed feet.
    pub max_local_residual: f64,
    /// Residual of the full characteristic integral equation back to `t = 0`.
    pub max_global_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    pub sup_solution: f64,
    pub sup_initial: f64,
    pub sup_source: f64,
    pub sup_coupling: f64,
    pub horizon: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub sup_differences: Vec<f64>,
    pub rk4_substeps: usize,
    pub audit: AuditReport,
    pub gronwall: GronwallReport,
}

/// Grid values on the part of a grid that lies in the domain.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub grid: Grid2D,
    pub domain: Option<DeterminacyDomain>,
    dim: usize,
    /// Inclusive node range per time level.
    ranges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    values: Vec<Vec<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl SolutionField {
    fn allocate(grid: Grid2D, dim: usize, ranges: Vec<(usize, usize)>, domain: Option<DeterminacyDomain>) -> Self {
        let mut offsets = Vec::with_capacity(ranges.len() + 1);
        let mut total = 0;
        for &(a, b) in &ranges {
            offsets.push(total);
            if b >= a {
                total += b - a + 1;
            }
        }
        offsets.push(total);
        SolutionField {
            grid,
            domain,
            dim,
            ranges,
            offsets,
            values: vec![vec![0.0; total]; dim],
            diagnostics: SolveDiagnostics::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level_range(&self, n: usize) -> (usize, usize) {
        self.ranges[n]
    }

    pub fn node(&self, comp: usize, j: usize, n: usize) -> Option<f64> {
        let (a, b) = self.ranges[n];
        if j < a || j > b {
            return None;
        }
        Some(self.values[comp][self.offsets[n] + j - a])
    }

    pub fn level(&self, comp: usize, n: usize) -> &[f64] {
        &self.values[comp][self.offsets[n]..self.offsets[n + 1]]
    }

    /// All stored nodes as `(j, n)`.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ranges
            .iter()
            .enumerate()
            .flat_map(|(n, &(a, b))| (a..=b).filter(move |_| b >= a).map(move |j| (j, n)))
    }

    pub fn sup_abs(&self, comp: usize) -> f64 {
        self.values[comp]
            .iter()
            .fold(0.0, |m, v| crate::quad::nan_max(m, v.abs()))
    }

    /// Cubic interpolation in `x` on the bracketing levels, linear in `t`.
    pub fn eval(&self, comp: usize, x: f64, t: f64) -> Result<f64> {
        let gt = &self.grid.t;
        let outside = || Error::Domain {
            x,
            t,
            domain: Rect::new(self.grid.x.lower, self.grid.x.upper(), gt.lower, gt.upper()),
        };
        if !gt.contains(t) {
            return Err(outside());
        }
        let pos = (t - gt.lower) / gt.step;
        let n = (pos.floor() as usize).min(gt.count - 1);
        let w = pos - n as f64;
        let at = |n: usize| -> Result<f64> {
            let (a, b) = self.ranges[n];
            if b < a {
                return Err(outside());
            }
            let s = (x - self.grid.x.lower) / self.grid.x.step;
            if s < a as f64 - 1e-9 || s > b as f64 + 1e-9 {
                return Err(outside());
            }
            let (start, wts, len) = stencil(s, a, b);
            Ok((0..len)
                .map(|q| wts[q] * self.values[comp][self.offsets[n] + start + q - a])
                .sum())
        };
        if w < 1e-12 || n + 1 == gt.count {
            return at(n);
        }
        Ok((1.0 - w) * at(n)? + w * at(n + 1)?)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "x,t")?;
        for c in 0..self.dim {
            write!(w, ",u{}", c + 1)?;
        }
        writeln!(w)?;
        for (j, n) in self.nodes() {
            write!(w, "{},{}", self.grid.x.node(j), self.grid.t.node(n))?;
            for c in 0..self.dim {
                write!(w, ",{}", self.node(c, j, n).unwrap())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Cubic Lagrange stencil on nodes `a..=b` for fractional index `s`.
/// Returns the first node, weights and the number of nodes used.
#[inline]
fn stencil(s: f64, a: usize, b: usize) -> (usize, [f64; 4], usize) {
    let avail = b - a + 1;
    if avail == 1 {
        return (a, [1.0, 0.0, 0.0, 0.0], 1);
    }
    let len = avail.min(4);
    let i = s.floor() as isize - if len == 4 { 1 } else { 0 };
    let start = i.clamp(a as isize, (b + 1 - len) as isize) as usize;
    let mut w = [0.0; 4];
    for q in 0..len {
        let xq = (start + q) as f64;
        let mut l = 1.0;
        for r in 0..len {
            if r != q {
                let xr = (start + r) as f64;
                l *= (s - xr) / (xq - xr);
            }
        }
        w[q] = l;
    }
    (start, w, len)
}

struct Foot {
    start: usize,
    weights: [f64; 4],
    len: usize,
    /// `sum_k f_ik u_k + g_i` needs `f_ik` and `g_i` at the foot.
    coupling: Vec<f64>,
    source: f64,
}

struct LevelData {
    /// Per component, per active node.
    feet: Vec<Vec<Foot>>,
    /// `f_ik` at the nodes of this level: `[comp][node][k]`.
    coupling_here: Vec<Vec<Vec<f64>>>,
    source_here: Vec<Vec<f64>>,
}

fn common_x_interval(problem: &HyperbolicProblem) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let all = problem
        .lambda
        .iter()
        .chain(problem.coupling.iter().flatten())
        .chain(&problem.source)
        .chain(&problem.initial);
    for f in all {
        let d = f.domain();
        lo = lo.max(d.x0);
        hi = hi.min(d.x1);
    }
    (lo, hi)
}

fn value_or_zero(f: &FieldRef, x: f64, t: f64) -> Result<f64> {
    if f.is_zero() {
        Ok(0.0)
    } else {
        f.value(x, t)
    }
}

/// Solves the system on the grid nodes inside `domain`.
///
/// The grid must start at `t = 0`, end at or before the horizon, and cover
/// `[-kappa, kappa]`.
pub fn solve_system(
    problem: &HyperbolicProblem,
    domain: &DeterminacyDomain,
    grid: Grid2D,
    opts: &SolveOptions,
) -> Result<SolutionField> {
    let n_comp = problem.dim();
    let (gx, gt) = (grid.x, grid.t);
    if gt.lower != 0.0 {
        return Err(Error::InvalidGrid("time grid must start at 0".into()));
    }
    if gt.upper() > domain.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidGrid(format!(
            "time grid ends at {} beyond the horizon {}",
            gt.upper(),
            domain.horizon
        )));
    }
    if gx.lower > -domain.kappa + 1e-12 || gx.upper() < domain.kappa - 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "space grid [{}, {}] does not cover [-{k}, {k}]",
            gx.lower,
            gx.upper(),
            k = domain.kappa
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(param("tol", "need tol > 0 and max_iter >= 1"));
    }

    // Extended grid: the user's grid plus padding where the data are defined.
    let (dlo, dhi) = common_x_interval(problem);
    let pad_left = (0..=opts.pad_cells)
        .rev()
        .find(|&p| gx.lower - p as f64 * gx.step >= dlo)
        .unwrap_or(0);
    let pad_right = (0..=opts.pad_cells)
        .rev()
        .find(|&p| gx.upper() + p as f64 * gx.step <= dhi)
        .unwrap_or(0);
    let ext = Grid1D {
        lower: gx.lower - pad_left as f64 * gx.step,
        step: gx.step,
        count: gx.count + pad_left + pad_right,
    };
    let ext_half = (domain.kappa + pad_left.min(pad_right) as f64 * gx.step)
        .min(-ext.lower)
        .min(ext.upper());
    let range_for = |g: &Grid1D, half: f64| -> (usize, usize) {
        let a = ((-half - 1e-12 - g.lower) / g.step).ceil().max(0.0) as usize;
        let b = (((half + 1e-12 - g.lower) / g.step).floor() as usize).min(g.count - 1);
        (a, b)
    };
    let ext_ranges: Vec<(usize, usize)> = (0..gt.count)
        .map(|n| range_for(&ext, ext_half - domain.speed * gt.node(n)))
        .collect();

    let dt = gt.step;
    let substeps = match opts.rk4_max_step {
        Some(h) if h > 0.0 => (dt / h).ceil().max(1.0) as usize,
        Some(h) => return Err(param("rk4_max_step", format!("must be positive, got {h}"))),
        None => 1,
    };

    let mut work = SolutionField::allocate(Grid2D::new(ext, gt), n_comp, ext_ranges.clone(), Some(*domain));
    {
        let (a, b) = ext_ranges[0];
        for c in 0..n_comp {
            for j in a..=b {
                work.values[c][j - a] = problem.initial[c].value(ext.node(j), 0.0)?;
            }
        }
    }

    // Precompute feet and coefficients.
    let mut levels: Vec<LevelData> = Vec::with_capacity(gt.count);
    levels.push(LevelData {
        feet: Vec::new(),
        coupling_here: Vec::new(),
        source_here: Vec::new(),
    });
    for n in 1..gt.count {
        let (t1, t0) = (gt.node(n), gt.node(n - 1));
        let (a, b) = ext_ranges[n];
        let (pa, pb) = ext_ranges[n - 1];
        let mut feet = Vec::with_capacity(n_comp);
        let mut coupling_here = Vec::with_capacity(n_comp);
        let mut source_here = Vec::with_capacity(n_comp);
        for i in 0..n_comp {
            let mut fi = Vec::with_capacity(b + 1 - a);
            let mut ch = Vec::with_capacity(b + 1 - a);
            let mut sh = Vec::with_capacity(b + 1 - a);
            for j in a..=b {
                let x = ext.node(j);
                let y = if problem.lambda[i].is_zero() {
                    x
                } else {
                    rk4_flow(problem.lambda[i].as_ref(), x, t1, t0, substeps)?
                };
                let s = (y - ext.lower) / ext.step;
                if s < pa as f64 - 1.5 || s > pb as f64 + 1.5 {
                    return Err(Error::DomainEscape { time: t0, position: y });
                }
                let (start, weights, len) = stencil(s, pa, pb);
                let coupling: Result<Vec<f64>> = problem.coupling[i].iter().map(|f| value_or_zero(f, y, t0)).collect();
                fi.push(Foot {
                    start,
                    weights,
                    len,
                    coupling: coupling?,
                    source: value_or_zero(&problem.source[i], y, t0)?,
                });
                let here: Result<Vec<f64>> = problem.coupling[i].iter().map(|f| value_or_zero(f, x, t1)).collect();
                ch.push(here?);
                sh.push(value_or_zero(&problem.source[i], x, t1)?);
            }
            feet.push(fi);
            coupling_here.push(ch);
            source_here.push(sh);
        }
        levels.push(LevelData {
            feet,
            coupling_here,
            source_here,
        });
    }

    let coupled = problem.coupling.iter().flatten().any(|f| !f.is_zero());
    let mut prev = work.values.clone();
    let mut diffs = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        for n in 1..gt.count {
            let (pa, _) = ext_ranges[n - 1];
            let (off, poff) = (work.offsets[n], work.offsets[n - 1]);
            let lv = &levels[n];
            for i in 0..n_comp {
                for (q, foot) in lv.feet[i].iter().enumerate() {
                    let interp = |vals: &[f64]| -> f64 {
                        (0..foot.len)
                            .map(|r| foot.weights[r] * vals[poff + foot.start + r - pa])
                            .sum()
                    };
                    let base = interp(&work.values[i]);
                    let mut s_prev = foot.source;
                    let mut s_here = lv.source_here[i][q];
                    if coupled {
                        for k in 0..n_comp {
                            let fk = foot.coupling[k];
                            if fk != 0.0 {
                                s_prev += fk * interp(&prev[k]);
                            }
                            let fh = lv.coupling_here[i][q][k];
                            if fh != 0.0 {
                                s_here += fh * prev[k][off + q];
                            }
                        }
                    }
                    work.values[i][off + q] = base + 0.5 * dt * (s_prev + s_here);
                }
            }
        }
        let d = work
            .values
            .iter()
            .zip(&prev)
            .flat_map(|(u, v)| u.iter().zip(v).map(|(a, b)| (a - b).abs()))
            .fold(0.0, crate::quad::nan_max);
        diffs.push(d);
        std::mem::swap(&mut prev, &mut work.values);
        work.values.clone_from(&prev);
        if d <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationLimit {
            iterations: diffs.len(),
            last_difference: *diffs.last().unwrap_or(&f64::NAN),
        });
    }

    let audit = audit_solution(problem, &work, &ext_ranges, substeps, opts)?;
    if audit.max_local_residual > 10.0 * opts.tol {
        return Err(Error::Invariant(format!(
            "audit residual {:e} exceeds 10 * tol",
            audit.max_local_residual
        )));
    }

    // Restrict to the user grid inside K_T.
    let user_ranges: Vec<(usize, usize)> = (0..gt.count)
        .map(|n| {
            let (a, b) = range_for(&gx, domain.half_width(gt.node(n)));
            if b < a {
                (1, 0)
            } else {
                (a, b)
            }
        })
        .collect();
    let mut out = SolutionField::allocate(grid, n_comp, user_ranges.clone(), Some(*domain));
    for (n, &(a, b)) in user_ranges.iter().enumerate() {
        if b < a {
            continue;
        }
        for c in 0..n_comp {
            for j in a..=b {
                let je = j + pad_left;
                out.values[c][out.offsets[n] + j - a] = work.node(c, je, n).ok_or_else(|| {
                    Error::Invariant(format!("node {j} at level {n} missing from the computed region"))
                })?;
            }
        }
    }
    out.diagnostics = SolveDiagnostics {
        iterations: diffs.len(),
        sup_differences: diffs,
        rk4_substeps: substeps,
        audit,
        gronwall: GronwallReport::default(),
    };
    out.diagnostics.gronwall = gronwall_at_nodes(problem, &out)?;
    Ok(out)
}

fn audit_solution(
    problem: &HyperbolicProblem,
    sol: &SolutionField,
    ranges: &[(usize, usize)],
    substeps: usize,
    opts: &SolveOptions,
) -> Result<AuditReport> {
    let (gx, gt) = (sol.grid.x, sol.grid.t);
    let n_comp = problem.dim();
    let nodes: Vec<(usize, usize)> = sol.nodes().filter(|&(_, n)| n > 0).collect();
    if nodes.is_empty() || opts.audit_points == 0 {
        return Ok(AuditReport::default());
    }
    let mut rng = seed::rng_at(opts.audit_seed, &[seed::purpose::AUDIT]);
    let interp_at = |c: usize, n: usize, y: f64| -> Result<f64> {
        let (a, b) = ranges[n];
        let s = (y - gx.lower) / gx.step;
        let (start, w, len) = stencil(s, a, b);
        Ok((0..len).map(|r| w[r] * sol.node(c, start + r, n).unwrap()).sum())
    };
    let rhs = |i: usize, x: f64, t: f64, n: usize, here: Option<usize>| -> Result<f64> {
        let mut s = value_or_zero(&problem.source[i], x, t)?;
        for k in 0..n_comp {
            let f = &problem.coupling[i][k];
            if f.is_zero() {
                continue;
            }
            let u = match here {
                Some(j) => sol.node(k, j, n).unwrap(),
                None => interp_at(k, n, x)?,
            };
            s += f.value(x, t)? * u;
        }
        Ok(s)
    };
    let mut report = AuditReport {
        points: opts.audit_points,
        ..Default::default()
    };
    let dt = gt.step;
    for _ in 0..opts.audit_points {
        let (j, n) = nodes[rng.random_range(0..nodes.len())];
        let i = rng.random_range(0..n_comp);
        let (x, t) = (gx.node(j), gt.node(n));
        let lam = problem.lambda[i].as_ref();
        let y = rk4_flow(lam, x, t, gt.node(n - 1), substeps)?;
        let local =
            interp_at(i, n - 1, y)? + 0.5 * dt * (rhs(i, y, gt.node(n - 1), n - 1, None)? + rhs(i, x, t, n, Some(j))?);
        report.max_local_residual = report
            .max_local_residual
            .max((sol.node(i, j, n).unwrap() - local).abs());

        let mut pos = x;
        let mut integral = 0.5 * dt * rhs(i, x, t, n, Some(j))?;
        for m in (0..n).rev() {
            pos = rk4_flow(lam, pos, gt.node(m + 1), gt.node(m), substeps)?;
            let w = if m == 0 { 0.5 } else { 1.0 };
            integral += w * dt * rhs(i, pos, gt.node(m), m, None)?;
        }
        let global = problem.initial[i].value(pos, 0.0)? + integral;
        report.max_global_residual = report
            .max_global_residual
            .max((sol.node(i, j, n).unwrap() - global).abs());
    }
    Ok(report)
}

fn row_norm(problem: &HyperbolicProblem, x: f64, t: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for row in &problem.coupling {
        let mut s = 0.0;
        for f in row {
            s += value_or_zero(f, x, t)?.abs();
        }
        best = best.max(s);
    }
    Ok(best)
}

fn max_norm(fields: &[FieldRef], x: f64, t: f64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for f in fields {
        best = best.max(value_or_zero(f, x, t)?.abs());
    }
    Ok(best)
}

fn gronwall_report(
    sup_solution: f64,
    sup_initial: f64,
    sup_source: f64,
    sup_coupling: f64,
    horizon: f64,
    slack: f64,
) -> GronwallReport {
    let bound = (sup_initial + horizon * sup_source) * (horizon * sup_coupling).exp();
    GronwallReport {
        sup_solution,
        sup_initial,
        sup_source,
        sup_coupling,
        horizon,
        bound,
        holds: sup_solution <= bound * (1.0 + 1e-9) + slack,
    }
}

fn gronwall_at_nodes(problem: &HyperbolicProblem, sol: &SolutionField) -> Result<GronwallReport> {
    let (gx, gt) = (sol.grid.x, sol.grid.t);
    let (mut su, mut s0, mut sg, mut sf) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (j, n) in sol.nodes() {
        let (x, t) = (gx.node(j), gt.node(n));
        for c in 0..sol.dim() {
            su = su.max(sol.node(c, j, n).unwrap().abs());
        }
        if n == 0 {
            s0 = s0.max(max_norm(&problem.initial, x, 0.0)?);
        }
        sg = sg.max(max_norm(&problem.source, x, t)?);
        sf = sf.max(row_norm(problem, x, t)?);
    }
    Ok(gronwall_report(su, s0, sg, sf, gt.upper(), 0.0))
}

/// Checks `sup|u| <= (sup|u0| + T sup|g|) exp(T sup|F|)` on `K_T`, with the
/// data suprema sampled on a grid refined by `refine` in both directions.
pub fn gronwall_check(
    problem: &HyperbolicProblem,
    sol: &SolutionField,
    refine: usize,
    tol: f64,
) -> Result<GronwallReport> {
    let domain = sol
        .domain
        .ok_or_else(|| param("solution", "no domain of determinacy attached"))?;
    let (gx, gt) = (sol.grid.x, sol.grid.t);
    let r = refine.max(1);
    let fx = Grid1D::new(
        -domain.kappa,
        domain.kappa,
        2 * r * ((domain.kappa / gx.step).ceil() as usize) + 1,
    )?;
    let ft = Grid1D::new(0.0, gt.upper(), r * (gt.count - 1) + 1)?;
    let mut su: f64 = 0.0;
    for c in 0..sol.dim() {
        su = su.max(sol.sup_abs(c));
    }
    let (mut s0, mut sg, mut sf) = (0.0f64, 0.0f64, 0.0f64);
    for x in fx.nodes() {
        s0 = s0.max(max_norm(&problem.initial, x, 0.0)?);
    }
    for t in ft.nodes() {
        for x in fx.nodes().filter(|&x| domain.contains(x, t)) {
            sg = sg.max(max_norm(&problem.source, x, t)?);
            sf = sf.max(row_norm(problem, x, t)?);
        }
    }
    Ok(gronwall_report(su, s0, sg, sf, gt.upper(), 10.0 * tol))
}

/// `u(x, t) = u0(x - int_0^t lambda)` for a speed depending on `t` only.
///
/// The time integral uses 3-point Gauss-Legendre panels no longer than `quad_step`.
pub fn transport_t_only(
    lambda: &dyn SmoothField,
    u0: &dyn SmoothField,
    grid: Grid2D,
    quad_step: f64,
) -> Result<SolutionField> {
    if lambda.depends_on_t() && lambda.eval(0.0, 0.0, Partial::DX).map(|v| v != 0.0).unwrap_or(false) {
        return Err(param("lambda", "speed must not depend on x"));
    }
    if !(quad_step > 0.0) {
        return Err(param("quad_step", format!("must be positive, got {quad_step}")));
    }
    let gt = grid.t;
    let mut shift = vec![0.0; gt.count];
    let mut acc = 0.0;
    let mut t_prev = 0.0;
    for n in 0..gt.count {
        let t = gt.node(n);
        if t != t_prev {
            let panels = ((t - t_prev).abs() / quad_step).ceil().max(1.0) as usize;
            let rule = Composite::new(t_prev, t, panels, 3);
            let mut err = None;
            acc += rule.integrate(|s| match lambda.value(0.0, s) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            t_prev = t;
        }
        shift[n] = acc;
    }
    let ranges = vec![(0, grid.x.count - 1); gt.count];
    let mut out = SolutionField::allocate(grid, 1, ranges, None);
    for n in 0..gt.count {
        let off = out.offsets[n];
        for j in 0..grid.x.count {
            out.values[0][off + j] = u0.value(grid.x.node(j) - shift[n], 0.0)?;
        }
    }
    Ok(out)
}

/// Coefficients of `u_tt - lambda^2 u_xx = f u + h u_t + k u_x + g`.
#[derive(Clone)]
pub struct WaveProblem {
    pub lambda: FieldRef,
    pub f: FieldRef,
    pub h: FieldRef,
    pub k: FieldRef,
    pub g: FieldRef,
    pub u0: FieldRef,
    pub u1: FieldRef,
}

/// Rewrites the wave equation for `(v, w, u)` with
/// `v = u_t - lambda u_x`, `w = u_t + lambda u_x`.
pub fn wave_to_system(
    wave: &WaveProblem,
    domain_rect: Rect,
    lambda_floor: f64,
    samples: usize,
) -> Result<HyperbolicProblem> {
    let lam = wave.lambda.clone();
    let needs_division = !wave.k.is_zero() || lam.depends_on_t();
    if needs_division {
        let nx = samples.max(2);
        let xs = Grid1D::new(domain_rect.x0, domain_rect.x1, nx)?;
        let ts = Grid1D::new(domain_rect.t0, domain_rect.t1.max(domain_rect.t0 + 1e-12), nx)?;
        let mut inf = f64::INFINITY;
        for t in ts.nodes() {
            for x in xs.nodes() {
                inf = inf.min(lam.value(x, t)?.abs());
            }
        }
        if inf < lambda_floor {
            return Err(Error::Invertibility {
                infimum: inf,
                floor: lambda_floor,
            });
        }
    }
    let dom = lam.domain();
    let half = |f: &FieldRef| -> FieldRef {
        Arc::new(crate::mollify::Affine {
            inner: f.clone(),
            scale: 0.5,
            offset: 0.0,
        })
    };
    // a_mp(x, t) = (k/lambda +- lambda_t/lambda - lambda_x) / 2
    let make_a = |sign: f64| -> FieldRef {
        let (lam, k) = (lam.clone(), wave.k.clone());
        let kz = k.is_zero();
        let tdep = lam.depends_on_t();
        FnField::new(dom, move |x, t| {
            let lx = lam.eval(x, t, Partial::DX).unwrap_or(f64::NAN);
            let mut a = -lx;
            if !kz || tdep {
                let l = lam.value(x, t).unwrap_or(f64::NAN);
                let kv = if kz { 0.0 } else { k.value(x, t).unwrap_or(f64::NAN) };
                let lt = if tdep {
                    lam.eval(x, t, Partial::DT).unwrap_or(f64::NAN)
                } else {
                    0.0
                };
                a += (kv + sign * lt) / l;
            }
            0.5 * a
        })
        .labelled("wave coupling")
        .into_ref()
    };
    let a_minus = make_a(-1.0);
    let a_plus = make_a(1.0);
    let h2 = half(&wave.h);
    let hz = wave.h.is_zero();
    let combine = |a: FieldRef, sa: f64| -> FieldRef {
        let h2 = h2.clone();
        FnField::new(dom, move |x, t| {
            sa * a.value(x, t).unwrap_or(f64::NAN) + if hz { 0.0 } else { h2.value(x, t).unwrap_or(f64::NAN) }
        })
        .into_ref()
    };
    let coupling = vec![
        vec![combine(a_minus.clone(), -1.0), combine(a_minus, 1.0), wave.f.clone()],
        vec![combine(a_plus.clone(), -1.0), combine(a_plus, 1.0), wave.f.clone()],
        vec![Analytic::constant(0.5), Analytic::constant(0.5), Analytic::zero()],
    ];
    let data = |sign: f64| -> FieldRef {
        let (lam, u0, u1) = (lam.clone(), wave.u0.clone(), wave.u1.clone());
        let d = u0.domain().intersect(&u1.domain());
        FnField::new(
            Rect::new(d.x0.max(dom.x0), d.x1.min(dom.x1), f64::NEG_INFINITY, f64::INFINITY),
            move |x, _| {
                let l = lam.value(x, 0.0).unwrap_or(f64::NAN);
                let du0 = u0.eval(x, 0.0, Partial::DX).unwrap_or(f64::NAN);
                u1.value(x, 0.0).unwrap_or(f64::NAN) + sign * l * du0
            },
        )
        .time_independent()
        .into_ref()
    };
    HyperbolicProblem::new(
        vec![lam.clone(), negate(lam.clone()), Analytic::zero()],
        coupling,
        vec![wave.g.clone(), wave.g.clone(), Analytic::zero()],
        vec![data(-1.0), data(1.0), wave.u0.clone()],
    )
}

/// Closed-form solution of `u_tt - lambda (lambda u_x)_x = 0` with
/// `lambda = (1 + c'^2)^{-1/2}` through arc-length characteristics.
pub fn geometric_wave_solve(
    arc: &ArcLength,
    u0: &dyn SmoothField,
    u1: &dyn SmoothField,
    grid: Grid2D,
    time_panels: usize,
) -> Result<SolutionField> {
    let ranges = vec![(0, grid.x.count - 1); grid.t.count];
    let mut out = SolutionField::allocate(grid, 1, ranges, None);
    let (z, w) = crate::quad::gauss_legendre(4);
    let u1_zero = u1.is_zero();
    for n in 0..grid.t.count {
        let t = grid.t.node(n);
        let off = out.offsets[n];
        for j in 0..grid.x.count {
            let x = grid.x.node(j);
            let lx = arc.eval(x)?;
            let (gp, gm) = (arc.inverse(lx - t)?, arc.inverse(lx + t)?);
            let mut u = 0.5 * (u0.value(gp, 0.0)? + u0.value(gm, 0.0)?);
            if !u1_zero && t > 0.0 {
                let panels = time_panels.max(1);
                let h = t / panels as f64;
                let mut acc = 0.0;
                for p in 0..panels {
                    let mid = (p as f64 + 0.5) * h;
                    for (zi, wi) in z.iter().zip(&w) {
                        let s = mid + 0.5 * h * zi;
                        let a = arc.inverse(lx - s)?;
                        let b = arc.inverse(lx + s)?;
                        acc += 0.5 * h * wi * (u1.value(a, 0.0)? + u1.value(b, 0.0)?);
                    }
                }
                u += 0.5 * acc;
            }
            out.values[0][off + j] = u;
        }
    }
    Ok(out)
}

/// Grid over `[-kappa, kappa] x [0, T]` with the given node counts.
pub fn domain_grid(domain: &DeterminacyDomain, nx: usize, nt: usize) -> Result<Grid2D> {
    Ok(Grid2D::new(
        Grid1D::new(-domain.kappa, domain.kappa, nx)?,
        Grid1D::new(0.0, domain.horizon, nt)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::determinacy_domain;
    use crate::mollify::Profile;

    fn kt(l: &[FieldRef], kappa: f64, t: f64) -> DeterminacyDomain {
        determinacy_domain(l, kappa, t).unwrap()
    }

    #[test]
    fn stencil_reproduces_cubics() {
        let f = |s: f64| 1.0 + s - 0.3 * s * s + 0.05 * s * s * s;
        let vals: Vec<f64> = (0..10).map(|i| f(i as f64)).collect();
        for &s in &[2.5, 0.2, 8.7, 9.6, 3.0] {
            let (start, w, len) = stencil(s, 0, 9);
            let v: f64 = (0..len).map(|q| w[q] * vals[start + q]).sum();
            assert!((v - f(s)).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn linear_transport_is_exact() {
        let lam: FieldRef = Analytic::constant(1.0);
        let u0: FieldRef = Analytic::of_x(Profile::Linear {
            slope: 1.0,
            intercept: 0.0,
        });
        let p = HyperbolicProblem::transport(vec![lam.clone()], vec![u0]).unwrap();
        let d = kt(&[lam], 2.0, 1.0);
        let g = domain_grid(&d, 81, 41).unwrap();
        let s = solve_system(&p, &d, g, &SolveOptions::default()).unwrap();
        for (j, n) in s.nodes() {
            let (x, t) = (g.x.node(j), g.t.node(n));
            assert!((s.node(0, j, n).unwrap() - (x - t)).abs() < 1e-12);
        }
        assert!(s.diagnostics.gronwall.holds);
    }

    #[test]
    fn scalar_growth_matches_exponential() {
        // u_t = 0.5 u  =>  u = e^{t/2} u0
        let zero: FieldRef = Analytic::zero();
        let u0: FieldRef = Analytic::of_x(Profile::cos());
        let p = HyperbolicProblem::new(
            vec![zero.clone()],
            vec![vec![Analytic::constant(0.5)]],
            vec![zero.clone()],
            vec![u0],
        )
        .unwrap();
        let d = kt(&[zero], 1.0, 1.0);
        let g = domain_grid(&d, 21, 201).unwrap();
        let s = solve_system(&p, &d, g, &SolveOptions::default()).unwrap();
        let v = s.node(0, 10, 200).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-5);
        assert!(s.diagnostics.audit.max_local_residual <= 1e-7);
    }

    #[test]
    fn iteration_limit_is_an_error() {
        let zero: FieldRef = Analytic::zero();
        let p = HyperbolicProblem::new(
            vec![zero.clone()],
            vec![vec![Analytic::constant(3.0)]],
            vec![zero.clone()],
            vec![Analytic::constant(1.0)],
        )
        .unwrap();
        let d = kt(&[zero], 1.0, 1.0);
        let g = domain_grid(&d, 11, 21).unwrap();
        let opts = SolveOptions {
            max_iter: 3,
            ..Default::default()
        };
        assert!(matches!(
            solve_system(&p, &d, g, &opts),
            Err(Error::IterationLimit { .. })
        ));
    }

    #[test]
    fn t_only_transport_sine_speed() {
        let lam = Analytic::of_t(Profile::sin());
        let u0 = Analytic::of_x(Profile::Gaussian {
            amplitude: 1.0,
            centre: 0.0,
            width: 0.5,
        });
        let g = Grid2D::new(Grid1D::new(-1.0, 1.0, 11).unwrap(), Grid1D::new(0.0, 2.0, 9).unwrap());
        let s = transport_t_only(lam.as_ref(), u0.as_ref(), g, 0.05).unwrap();
        for (j, n) in s.nodes() {
            let (x, t) = (g.x.node(j), g.t.node(n));
            let want = u0.value(x - 1.0 + t.cos(), 0.0).unwrap();
            assert!((s.node(0, j, n).unwrap() - want).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let lam: FieldRef = Analytic::of_x(Profile::Sine {
            amplitude: 0.5,
            frequency: 2.0,
            phase: 0.0,
        });
        let zero: FieldRef = Analytic::zero();
        let p = HyperbolicProblem::new(
            vec![lam.clone(), negate(lam.clone())],
            vec![
                vec![Analytic::constant(0.3), Analytic::constant(-0.2)],
                vec![zero.clone(), Analytic::constant(1.0)],
            ],
            vec![zero.clone(), zero.clone()],
            vec![zero.clone(), zero],
        )
        .unwrap();
        let d = kt(&[lam], 2.0, 1.0);
        let g = domain_grid(&d, 41, 21).unwrap();
        let s = solve_system(&p, &d, g, &SolveOptions::default()).unwrap();
        assert!(s.sup_abs(0) <= 1e-8 && s.sup_abs(1) <= 1e-8);
    }
}
