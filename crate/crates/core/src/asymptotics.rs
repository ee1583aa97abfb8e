//! Norm measurements along an ε-ladder, asymptotic classification, weak
//! limits, Monte Carlo moments and two synthetic counterexample families.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Rect, Result};
use crate::fields::Grid1D;
use crate::mollify::{FieldRef, Partial, ScaleMap};
use crate::quad;
use crate::seed::{self, purpose};

/// Samples are processed in fixed-size chunks so that parallel and serial
/// reductions add in the same order.
const CHUNK: usize = 64;

/// Geometric ladder `eps_k = eps0 * ratio^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsLadder {
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
    pub scale: ScaleMap,
}

impl Default for EpsLadder {
    fn default() -> Self {
        EpsLadder {
            eps0: 0.5,
            ratio: 0.5,
            count: 8,
            scale: ScaleMap::Identity,
        }
    }
}

impl EpsLadder {
    pub fn new(eps0: f64, ratio: f64, count: usize) -> Result<Self> {
        let l = EpsLadder {
            eps0,
            ratio,
            count,
            scale: ScaleMap::Identity,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn with_scale(mut self, scale: ScaleMap) -> Result<Self> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return Err(param("eps0", format!("must lie in (0, 1], got {}", self.eps0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(param("ratio", format!("must lie in (0, 1), got {}", self.ratio)));
        }
        if self.count == 0 {
            return Err(param("count", "ladder needs at least one level"));
        }
        for e in self.values() {
            if !(e > 0.0) {
                return Err(param("count", format!("level underflows to {e}")));
            }
            self.scale.apply(e)?;
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.eps0 * self.ratio.powi(k as i32)).collect()
    }

    /// `eta(eps_k)` for each level.
    pub fn scaled(&self) -> Result<Vec<f64>> {
        self.values().into_iter().map(|e| self.scale.apply(e)).collect()
    }

    pub fn finest(&self) -> f64 {
        self.eps0 * self.ratio.powi(self.count as i32 - 1)
    }
}

/// Which norm over the sample space is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    /// Per-seed values, no averaging.
    Pathwise,
    Lp(u32),
    /// Empirical maximum over samples; a lower bound for the true essential sup.
    Max,
}

impl NormOrder {
    fn check(self) -> Result<()> {
        match self {
            NormOrder::Lp(0) => Err(param("p", "use Pathwise for p = 0")),
            _ => Ok(()),
        }
    }

    fn combine(self, samples: &[f64]) -> f64 {
        match self {
            NormOrder::Max => samples.iter().fold(0.0, |m, &v| crate::quad::nan_max(m, v.abs())),
            NormOrder::Pathwise => median(samples),
            NormOrder::Lp(p) => {
                let s: f64 = ordered_sum(samples.iter().map(|v| v.abs().powi(p as i32)));
                (s / samples.len() as f64).powf(1.0 / p as f64)
            }
        }
    }
}

fn ordered_sum(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a, b| a + b)
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// What was measured: region, derivative, norm and sample count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub region: Rect,
    pub alpha: Partial,
    pub order: NormOrder,
    pub samples: usize,
    /// Set when the measurement is `int_0^T sup_x |.| dt` rather than a sup.
    pub time_integrated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSeries {
    pub eps: Vec<f64>,
    /// `||sup_K |d^alpha u_eps| ||_p` per level.
    pub measurements: Vec<f64>,
    /// `sup_K || d^alpha u_eps ||_p` per level; `None` for pathwise series.
    pub sup_of_norm: Option<Vec<f64>>,
    /// `per_seed[i][k]`: sup for sample `i` at level `k`.
    pub per_seed: Vec<Vec<f64>>,
    pub norm: NormDescriptor,
}

impl EpsSeries {
    /// A series given directly by its values.
    pub fn from_values(eps: Vec<f64>, measurements: Vec<f64>, order: NormOrder) -> Result<Self> {
        if eps.len() != measurements.len() {
            return Err(Error::Shape(format!(
                "{} levels but {} measurements",
                eps.len(),
                measurements.len()
            )));
        }
        if measurements.iter().any(|m| !(*m >= 0.0)) {
            return Err(param("measurements", "must be non-negative"));
        }
        Ok(EpsSeries {
            per_seed: vec![measurements.clone()],
            eps,
            measurements,
            sup_of_norm: None,
            norm: NormDescriptor {
                region: Rect::WHOLE_PLANE,
                alpha: Partial::VALUE,
                order,
                samples: 1,
                time_integrated: false,
            },
        })
    }

    /// The pathwise series of one sample.
    pub fn pathwise(&self, sample: usize) -> Option<EpsSeries> {
        let m = self.per_seed.get(sample)?.clone();
        let mut s = EpsSeries::from_values(self.eps.clone(), m, NormOrder::Pathwise).ok()?;
        s.norm = NormDescriptor {
            order: NormOrder::Pathwise,
            samples: 1,
            ..self.norm.clone()
        };
        Some(s)
    }

    /// Every level satisfies `sup_of_norm <= measurements`.
    pub fn interchange_holds(&self) -> bool {
        match &self.sup_of_norm {
            None => true,
            Some(s) => s.iter().zip(&self.measurements).all(|(a, b)| a <= b),
        }
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "eps,measurement,sup_of_norm")?;
        for (k, (e, m)) in self.eps.iter().zip(&self.measurements).enumerate() {
            match &self.sup_of_norm {
                Some(s) => writeln!(w, "{e:e},{m:e},{:e}", s[k])?,
                None => writeln!(w, "{e:e},{m:e},")?,
            }
        }
        Ok(())
    }
}

/// Points on which sups are sampled: spacing at most `eps / 8` per axis.
fn sup_points(region: &Rect, eps: f64, max_per_axis: usize) -> Result<Vec<(f64, f64)>> {
    let h = eps / 8.0;
    let axis = |a: f64, b: f64| -> Result<Vec<f64>> {
        if b == a {
            return Ok(vec![a]);
        }
        let n = (((b - a) / h).ceil() as usize + 1).max(2);
        if n > max_per_axis {
            return Err(Error::Resolution {
                step: (b - a) / (max_per_axis - 1) as f64,
                scale: eps,
            });
        }
        Ok(Grid1D::new(a, b, n)?.nodes().collect())
    };
    let xs = axis(region.x0, region.x1)?;
    let ts = axis(region.t0, region.t1)?;
    Ok(ts.iter().flat_map(|&t| xs.iter().map(move |&x| (x, t))).collect())
}

/// Upper bound on sampled points per axis in [`measure_series`].
pub const MAX_SUP_POINTS: usize = 1 << 16;

/// Measure `||sup_K |d^alpha u_eps| ||_p` along the ladder. The factory is
/// called with the same seed at every level so that each sample is one path.
pub fn measure_series<F>(
    factory: F,
    region: Rect,
    alpha: Partial,
    order: NormOrder,
    eps: &[f64],
    n_samples: usize,
    master: u64,
) -> Result<EpsSeries>
where
    F: Fn(f64, u64) -> Result<FieldRef> + Sync,
{
    order.check()?;
    if n_samples == 0 {
        return Err(param("n_samples", "must be positive"));
    }
    if region.is_empty() {
        return Err(param("region", format!("{region} is empty")));
    }
    let mut per_seed = vec![vec![0.0; eps.len()]; n_samples];
    let mut measurements = Vec::with_capacity(eps.len());
    let mut sup_of_norm = Vec::with_capacity(eps.len());
    for (k, &e) in eps.iter().enumerate() {
        let pts = sup_points(&region, e, MAX_SUP_POINTS)?;
        let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_samples.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut sups = Vec::new();
                let mut acc = vec![0.0; pts.len()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                    let s = seed::derive(master, &[purpose::SAMPLE, i as u64]);
                    let field = factory(e, s)?;
                    let mut sup = 0.0f64;
                    for (a, &(x, t)) in acc.iter_mut().zip(&pts) {
                        let v = field.eval(x, t, alpha)?.abs();
                        sup = sup.max(v);
                        match order {
                            NormOrder::Lp(p) => *a += v.powi(p as i32),
                            _ => *a = a.max(v),
                        }
                    }
                    sups.push(sup);
                }
                Ok((sups, acc))
            })
            .collect();
        let mut pointwise = vec![0.0; pts.len()];
        let mut i = 0;
        for c in chunks {
            let (sups, acc) = c?;
            for s in sups {
                per_seed[i][k] = s;
                i += 1;
            }
            for (p, a) in pointwise.iter_mut().zip(acc) {
                match order {
                    NormOrder::Lp(_) => *p += a,
                    _ => *p = p.max(a),
                }
            }
        }
        let sups: Vec<f64> = per_seed.iter().map(|r| r[k]).collect();
        measurements.push(order.combine(&sups));
        let son = match order {
            NormOrder::Lp(p) => pointwise
                .iter()
                .map(|s| (s / n_samples as f64).powf(1.0 / p as f64))
                .fold(0.0, crate::quad::nan_max),
            _ => pointwise.iter().copied().fold(0.0, crate::quad::nan_max),
        };
        sup_of_norm.push(son);
    }
    Ok(EpsSeries {
        eps: eps.to_vec(),
        measurements,
        sup_of_norm: (order != NormOrder::Pathwise).then_some(sup_of_norm),
        per_seed,
        norm: NormDescriptor {
            region,
            alpha,
            order,
            samples: n_samples,
            time_integrated: false,
        },
    })
}

/// Both orderings of sup over points and `L^p` over samples, from one
/// sample matrix `values[sample][point]`. Returns `(sup_x ||.||_p, ||sup_x|.| ||_p)`.
pub fn norm_interchange(values: &[Vec<f64>], p: u32) -> Result<(f64, f64)> {
    if values.is_empty() || p == 0 {
        return Err(param("values", "need samples and p >= 1"));
    }
    let n = values[0].len();
    if values.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("ragged sample matrix".into()));
    }
    let order = NormOrder::Lp(p);
    let sups: Vec<f64> = values
        .iter()
        .map(|r| r.iter().fold(0.0, |m, v| crate::quad::nan_max(m, v.abs())))
        .collect();
    let norm_of_sup = order.combine(&sups);
    let mut sup_of_norm = 0.0f64;
    let mut col = vec![0.0; values.len()];
    for j in 0..n {
        for (c, r) in col.iter_mut().zip(values) {
            *c = r[j];
        }
        sup_of_norm = sup_of_norm.max(order.combine(&col));
    }
    Ok((sup_of_norm, norm_of_sup))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// `m(eps) <= C eps^{-a}`.
    Moderate {
        a: f64,
    },
    /// Decay at least like `eps^{b_max}` on the tail of the ladder.
    NegligibleToOrder {
        b_max: f64,
    },
    /// `m(eps) ~ c |log eps|`.
    LogType {
        c: f64,
    },
    Bounded {
        c: f64,
    },
    /// Time integral of the sup norm is bounded or of log type.
    L1Type {
        c: f64,
    },
    /// Growth faster than `eps^{-b_max}` on the tail of the ladder.
    NonModerateToOrder {
        b_max: f64,
    },
    Inconclusive,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Moderate { .. } => "moderate",
            Verdict::NegligibleToOrder { .. } => "negligible-to-order",
            Verdict::LogType { .. } => "log-type",
            Verdict::Bounded { .. } => "bounded",
            Verdict::L1Type { .. } => "l1-type",
            Verdict::NonModerateToOrder { .. } => "non-moderate-to-order",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Moderate { a } => write!(f, "moderate(a={a:.4})"),
            Verdict::NegligibleToOrder { b_max } => write!(f, "negligible-to-order({b_max})"),
            Verdict::LogType { c } => write!(f, "log-type(c={c:.4})"),
            Verdict::Bounded { c } => write!(f, "bounded(c={c:.4})"),
            Verdict::L1Type { c } => write!(f, "l1-type(c={c:.4})"),
            Verdict::NonModerateToOrder { b_max } => write!(f, "non-moderate-to-order({b_max})"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    pub b_max: f64,
    /// Residuals closer than this are treated as a tie.
    pub tie: f64,
    /// Best residual above this gives an inconclusive verdict.
    pub max_residual: f64,
    /// Number of trailing intervals used for tail slopes.
    pub tail: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            b_max: 8.0,
            tie: 0.02,
            max_residual: 0.25,
            tail: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Least-squares slope of `log m` against `log(1/eps)`.
    pub exponent: f64,
    pub constant: f64,
    pub residual: f64,
    /// Smallest local decay order `d log m / d log eps` over the tail.
    pub tail_decay: f64,
    /// Smallest local growth order `d log m / d log(1/eps)` over the tail.
    pub tail_growth: f64,
    /// Least-squares slope of `log m` against `1/eps`.
    pub exponential_rate: f64,
    pub residual_bounded: f64,
    pub residual_log: f64,
    pub residual_moderate: f64,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, rms)
}

/// Minimum number of ladder levels accepted by [`classify`].
pub const MIN_LEVELS: usize = 5;

pub fn classify(series: &EpsSeries, opts: &ClassifyOptions) -> Result<Classification> {
    let (eps, m) = (&series.eps, &series.measurements);
    if eps.len() < MIN_LEVELS {
        return Err(param(
            "series",
            format!("need at least {MIN_LEVELS} levels, got {}", eps.len()),
        ));
    }
    if eps.iter().any(|e| !(*e > 0.0 && *e < 1.0 + 1e-15)) {
        return Err(param("eps", "levels must lie in (0, 1]"));
    }
    let mut out = Classification {
        verdict: Verdict::Inconclusive,
        exponent: f64::NAN,
        constant: f64::NAN,
        residual: f64::NAN,
        tail_decay: f64::NAN,
        tail_growth: f64::NAN,
        exponential_rate: f64::NAN,
        residual_bounded: f64::NAN,
        residual_log: f64::NAN,
        residual_moderate: f64::NAN,
    };
    if m.iter().all(|v| *v == 0.0) {
        out.verdict = Verdict::NegligibleToOrder { b_max: opts.b_max };
        out.constant = 0.0;
        out.residual = 0.0;
        return Ok(out);
    }
    if m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Ok(out);
    }
    let inv: Vec<f64> = eps.iter().map(|e| -e.ln()).collect();
    let lm: Vec<f64> = m.iter().map(|v| v.ln()).collect();

    let n = eps.len();
    let tail = opts.tail.clamp(1, n - 1);
    let local: Vec<f64> = (n - tail..n)
        .map(|k| (lm[k] - lm[k - 1]) / (inv[k] - inv[k - 1]))
        .collect();
    out.tail_growth = local.iter().copied().fold(f64::INFINITY, f64::min);
    out.tail_decay = local.iter().map(|s| -s).fold(f64::INFINITY, f64::min);
    let recip: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    out.exponential_rate = linear_fit(&recip, &lm).0;

    let (a, icpt, rms_mod) = linear_fit(&inv, &lm);
    out.exponent = a;
    out.residual_moderate = rms_mod;

    let mean = m.iter().sum::<f64>() / n as f64;
    let sd = (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    out.residual_bounded = sd / mean;

    let c_log = m.iter().zip(&inv).map(|(v, l)| v * l).sum::<f64>() / inv.iter().map(|l| l * l).sum::<f64>();
    let rel = m
        .iter()
        .zip(&inv)
        .map(|(v, l)| ((v - c_log * l) / v).powi(2))
        .sum::<f64>()
        / n as f64;
    out.residual_log = rel.sqrt();

    if out.tail_decay >= opts.b_max {
        out.verdict = Verdict::NegligibleToOrder { b_max: opts.b_max };
        out.constant = m[n - 1];
        out.residual = 0.0;
        return Ok(out);
    }
    if out.tail_growth >= opts.b_max {
        out.verdict = Verdict::NonModerateToOrder { b_max: opts.b_max };
        out.constant = m[n - 1];
        out.residual = 0.0;
        return Ok(out);
    }

    let candidates = [
        (out.residual_bounded, Verdict::Bounded { c: mean }, mean),
        (out.residual_log, Verdict::LogType { c: c_log }, c_log),
        (out.residual_moderate, Verdict::Moderate { a }, icpt.exp()),
    ];
    let best = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let pick = candidates.iter().find(|c| c.0 <= best + opts.tie).expect("non-empty");
    out.residual = pick.0;
    out.constant = pick.2;
    if pick.0 > opts.max_residual {
        return Ok(out);
    }
    out.verdict = match (pick.1, series.norm.time_integrated) {
        (Verdict::Bounded { c }, true) | (Verdict::LogType { c }, true) => Verdict::L1Type { c },
        (v, _) => v,
    };
    Ok(out)
}

/// Smooth bump supported on `[centre - half_width, centre + half_width]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub centre: f64,
    pub half_width: f64,
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let r = (x - self.centre) / self.half_width;
        if r.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - r * r)).exp()
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.centre - self.half_width, self.centre + self.half_width)
    }

    /// `int f psi dx` by composite Gauss-Legendre.
    pub fn pair(&self, f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        let (a, b) = self.support();
        let rule = quad::Composite::new(a, b, 64, 8);
        let mut f = f;
        let mut s = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * f(*x)? * self.eval(*x);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub eps: Vec<f64>,
    pub time: f64,
    /// `gaps[k][j]`: `|E int (u_eps - v) psi_j|` at level `k`.
    pub gaps: Vec<Vec<f64>>,
    /// Largest gap per level.
    pub max_gap: Vec<f64>,
    pub decreasing: bool,
    pub below_tolerance: bool,
    pub tolerance: f64,
}

/// Weak-limit comparison of `u_eps(., t)` with `reference` on bump test functions.
#[allow(clippy::too_many_arguments)]
pub fn association_check<F, R>(
    factory: F,
    reference: R,
    tests: &[TestFunction],
    time: f64,
    eps: &[f64],
    n_samples: usize,
    master: u64,
    tolerance: f64,
) -> Result<AssociationReport>
where
    F: Fn(f64, u64) -> Result<FieldRef> + Sync,
    R: Fn(f64) -> f64 + Sync,
{
    if n_samples == 0 || tests.is_empty() {
        return Err(param("n_samples", "need samples and test functions"));
    }
    let reference_pairs: Vec<f64> = tests
        .iter()
        .map(|psi| psi.pair(|x| Ok(reference(x))))
        .collect::<Result<_>>()?;
    let mut gaps = Vec::with_capacity(eps.len());
    for &e in eps {
        let chunks: Vec<Result<Vec<f64>>> = (0..n_samples.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; tests.len()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                    let field = factory(e, seed::derive(master, &[purpose::SAMPLE, i as u64]))?;
                    let dom = field.domain();
                    for (a, psi) in acc.iter_mut().zip(tests) {
                        let (lo, hi) = psi.support();
                        if !(dom.contains(lo, time) && dom.contains(hi, time)) {
                            return Err(Error::Domain {
                                x: if dom.contains(lo, time) { hi } else { lo },
                                t: time,
                                domain: dom,
                            });
                        }
                        *a += psi.pair(|x| field.value(x, time))?;
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![0.0; tests.len()];
        for c in chunks {
            for (t, a) in total.iter_mut().zip(c?) {
                *t += a;
            }
        }
        gaps.push(
            total
                .iter()
                .zip(&reference_pairs)
                .map(|(s, r)| (s / n_samples as f64 - r).abs())
                .collect::<Vec<f64>>(),
        );
    }
    let max_gap: Vec<f64> = gaps
        .iter()
        .map(|g| g.iter().copied().fold(0.0, crate::quad::nan_max))
        .collect();
    let decreasing = max_gap.windows(2).all(|w| w[1] <= w[0] || w[1] <= tolerance);
    let below_tolerance = max_gap.last().is_some_and(|g| *g <= tolerance);
    Ok(AssociationReport {
        eps: eps.to_vec(),
        time,
        gaps,
        max_gap,
        decreasing,
        below_tolerance,
        tolerance,
    })
}

/// Pointwise Monte Carlo mean of `u^p` with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentField {
    pub p: u32,
    pub samples: usize,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
}

/// Minimum sample count for moment and covariance estimates.
pub const MIN_SAMPLES: usize = 100;

/// `rows[i] = sampler(derive(master, [SAMPLE, i]))`, evaluated in parallel.
pub fn sample_matrix<S>(sampler: &S, n_samples: usize, master: u64) -> Result<Vec<Vec<f64>>>
where
    S: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks: Vec<Result<Vec<Vec<f64>>>> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(n_samples))
                .map(|i| sampler(seed::derive(master, &[purpose::SAMPLE, i as u64])))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n_samples);
    for c in chunks {
        out.extend(c?);
    }
    let n = out.first().map_or(0, Vec::len);
    if out.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("sampler returned ragged rows".into()));
    }
    Ok(out)
}

/// `sampler(seed)` returns the values of one realization at fixed points;
/// sample `i` receives `derive(master, [SAMPLE, i])`.
pub fn moment_field<S>(sampler: S, p: u32, n_samples: usize, master: u64) -> Result<MomentField>
where
    S: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if p == 0 {
        return Err(param("p", "must be at least 1"));
    }
    if n_samples < MIN_SAMPLES {
        return Err(param(
            "n_samples",
            format!("need at least {MIN_SAMPLES}, got {n_samples}"),
        ));
    }
    let rows = sample_matrix(&sampler, n_samples, master)?;
    Ok(moments_of(&rows, p))
}

/// Mean of `u^p` per column of `rows[sample][point]`.
pub fn moments_of(rows: &[Vec<f64>], p: u32) -> MomentField {
    let npts = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; npts];
    let mut se = vec![0.0; npts];
    for j in 0..npts {
        let vals: Vec<f64> = rows.iter().map(|r| r[j].powi(p as i32)).collect();
        let m = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        mean[j] = m;
        se[j] = (var / n).sqrt();
    }
    MomentField {
        p,
        samples: rows.len(),
        mean,
        standard_error: se,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocovariance {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub standard_error: Vec<Vec<f64>>,
}

pub fn autocovariance<S>(sampler: S, n_samples: usize, master: u64) -> Result<Autocovariance>
where
    S: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if n_samples < MIN_SAMPLES {
        return Err(param(
            "n_samples",
            format!("need at least {MIN_SAMPLES}, got {n_samples}"),
        ));
    }
    let rows = sample_matrix(&sampler, n_samples, master)?;
    Ok(covariance_of(&rows))
}

/// Sample covariance of `rows[sample][point]`.
pub fn covariance_of(rows: &[Vec<f64>]) -> Autocovariance {
    let n = rows.len() as f64;
    let npts = rows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..npts).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; npts]; npts];
    let mut se = vec![vec![0.0; npts]; npts];
    for i in 0..npts {
        for j in i..npts {
            let prods: Vec<f64> = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).collect();
            let c = prods.iter().sum::<f64>() / n;
            let v = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (n - 1.0);
            cov[i][j] = c;
            cov[j][i] = c;
            se[i][j] = (v / n).sqrt();
            se[j][i] = se[i][j];
        }
    }
    Autocovariance {
        samples: rows.len(),
        mean,
        covariance: cov,
        standard_error: se,
    }
}

/// `u_eps(omega) = e^{1/eps} 1{omega >= p'/eps}` on `omega ~ Exp(1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialTail {
    pub p_prime: f64,
}

impl ExponentialTail {
    pub fn value(&self, eps: f64, omega: f64) -> f64 {
        if omega >= self.p_prime / eps {
            (1.0 / eps).exp()
        } else {
            0.0
        }
    }

    /// `E(u_eps^p) = e^{(p - p')/eps}`.
    pub fn moment(&self, eps: f64, p: f64) -> f64 {
        ((p - self.p_prime) / eps).exp()
    }

    pub fn moment_series(&self, eps: &[f64], p: f64) -> Result<EpsSeries> {
        EpsSeries::from_values(
            eps.to_vec(),
            eps.iter().map(|&e| self.moment(e, p)).collect(),
            NormOrder::Lp(1),
        )
    }
}

/// `u_eps(omega) = e^{1/eps} 1{|omega - sin(1/eps)| < e^{-1/eps}}` on
/// `omega ~ U[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlidingSpike;

impl SlidingSpike {
    pub fn value(&self, eps: f64, omega: f64) -> f64 {
        self.value_at_offset(eps, omega - (1.0 / eps).sin())
    }

    /// `v_eps(offset)`; the spike half-width `e^{-1/eps}` is far below
    /// rounding of `sin(1/eps)` once `eps` is small.
    pub fn value_at_offset(&self, eps: f64, offset: f64) -> f64 {
        if offset.abs() < (-1.0 / eps).exp() {
            (1.0 / eps).exp()
        } else {
            0.0
        }
    }

    /// `E|u_eps|`, exact.
    pub fn mean_abs(&self, eps: f64) -> f64 {
        let (s, d) = ((1.0 / eps).sin(), (-1.0 / eps).exp());
        let len = if s - d > -1.0 && s + d < 1.0 {
            2.0 * d
        } else {
            ((s + d).min(1.0) - (s - d).max(-1.0)).max(0.0)
        };
        0.5 * len * (1.0 / eps).exp()
    }

    /// Scales `eps_k <= 1` with `sin(1/eps_k) = omega`, decreasing in `k`.
    pub fn planted_ladder(&self, omega: f64, count: usize) -> Result<Vec<f64>> {
        if !(-1.0..=1.0).contains(&omega) {
            return Err(param("omega", format!("must lie in [-1, 1], got {omega}")));
        }
        let theta = omega.asin();
        Ok((1..=count)
            .map(|k| 1.0 / (theta + 2.0 * std::f64::consts::PI * k as f64))
            .collect())
    }

    /// Pathwise values at `omega` along its planted ladder, where
    /// `omega - sin(1/eps_k) = 0` holds exactly.
    pub fn pathwise_series(&self, omega: f64, count: usize) -> Result<EpsSeries> {
        let eps = self.planted_ladder(omega, count)?;
        let m = eps.iter().map(|&e| self.value_at_offset(e, 0.0)).collect();
        EpsSeries::from_values(eps, m, NormOrder::Pathwise)
    }

    pub fn l1_series(&self, eps: &[f64]) -> Result<EpsSeries> {
        EpsSeries::from_values(
            eps.to_vec(),
            eps.iter().map(|&e| self.mean_abs(e)).collect(),
            NormOrder::Lp(1),
        )
    }
}

/// Sampled check of family (a): Monte Carlo mean of `u_eps^p` with standard error.
pub fn exponential_tail_mc(family: &ExponentialTail, eps: f64, p: f64, n_samples: usize, master: u64) -> (f64, f64) {
    use rand::Rng;
    use rand_distr::Exp1;
    let mut rng = seed::rng_at(master, &[purpose::SAMPLE]);
    let vals: Vec<f64> = (0..n_samples)
        .map(|_| {
            let w: f64 = rng.sample(Exp1);
            family.value(eps, w).powf(p)
        })
        .collect();
    let n = n_samples as f64;
    let m = vals.iter().sum::<f64>() / n;
    let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollify::{Analytic, FnField, Profile};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ladder() -> Vec<f64> {
        EpsLadder::default().values()
    }

    fn synth(f: impl Fn(f64) -> f64) -> EpsSeries {
        let e = ladder();
        let m = e.iter().map(|&x| f(x)).collect();
        EpsSeries::from_values(e, m, NormOrder::Pathwise).unwrap()
    }

    #[test]
    fn ladder_validation() {
        assert!(EpsLadder::new(0.5, 1.0, 8).is_err());
        assert!(EpsLadder::new(0.5, 0.0, 8).is_err());
        assert!(EpsLadder::new(1.5, 0.5, 8).is_err());
        let l = EpsLadder::new(0.5, 0.5, 8).unwrap();
        assert_eq!(l.values()[7], 0.5f64.powi(8));
        assert!(l.with_scale(ScaleMap::InverseLogLog).is_err());
        assert!(l.with_scale(ScaleMap::InverseLog).is_err());
        assert!(EpsLadder::new(0.3, 0.5, 8)
            .unwrap()
            .with_scale(ScaleMap::InverseLog)
            .is_ok());
    }

    #[test]
    fn planted_power_law() {
        let c = classify(&synth(|e| e.powi(-2)), &ClassifyOptions::default()).unwrap();
        match c.verdict {
            Verdict::Moderate { a } => assert!((a - 2.0).abs() < 0.05),
            v => panic!("{v}"),
        }
    }

    #[test]
    fn planted_log() {
        let c = classify(&synth(|e| 3.0 * e.ln().abs()), &ClassifyOptions::default()).unwrap();
        match c.verdict {
            Verdict::LogType { c } => assert!((c - 3.0).abs() < 0.1),
            v => panic!("{v}"),
        }
    }

    #[test]
    fn planted_constant_and_zero() {
        let c = classify(&synth(|_| 4.2), &ClassifyOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Bounded { c: 4.2 });
        let z = classify(&synth(|_| 0.0), &ClassifyOptions::default()).unwrap();
        assert!(matches!(z.verdict, Verdict::NegligibleToOrder { .. }));
        let bad = classify(&synth(|e| if e > 0.1 { 1.0 } else { 0.0 }), &ClassifyOptions::default()).unwrap();
        assert_eq!(bad.verdict, Verdict::Inconclusive);
        let short = EpsSeries::from_values(vec![0.5, 0.25], vec![1.0, 1.0], NormOrder::Pathwise).unwrap();
        assert!(classify(&short, &ClassifyOptions::default()).is_err());
    }

    #[test]
    fn exponential_tail_family() {
        let fam = ExponentialTail { p_prime: 2.0 };
        let e = ladder();
        let same = classify(&fam.moment_series(&e, 2.0).unwrap(), &ClassifyOptions::default()).unwrap();
        assert_eq!(same.verdict, Verdict::Bounded { c: 1.0 });
        let lower = fam.moment_series(&e, 1.0).unwrap();
        for (m, eps) in lower.measurements.iter().zip(&e) {
            assert_eq!(*m, (-1.0 / eps).exp());
        }
        let c = classify(&lower, &ClassifyOptions::default()).unwrap();
        assert!(matches!(c.verdict, Verdict::NegligibleToOrder { .. }), "{}", c.verdict);
        assert!((c.exponential_rate + 1.0).abs() < 1e-9);
        // Monte Carlo at a mild scale: E u^p = e^{-1/eps}.
        let (m, se) = exponential_tail_mc(&fam, 1.0, 1.0, 200_000, 3);
        assert!((m - (-1.0f64).exp()).abs() < 5.0 * se, "{m} {se}");
    }

    #[test]
    fn sliding_spike_family() {
        let fam = SlidingSpike;
        let path = fam.pathwise_series(0.3, 8).unwrap();
        for (e, m) in path.eps.iter().zip(&path.measurements) {
            assert!((m / (1.0 / e).exp() - 1.0).abs() < 1e-12);
        }
        let p = classify(&path, &ClassifyOptions::default()).unwrap();
        assert!(matches!(p.verdict, Verdict::NonModerateToOrder { .. }), "{}", p.verdict);
        let l1 = fam.l1_series(&path.eps).unwrap();
        assert!(l1.measurements.iter().all(|m| *m <= 1.0 + 1e-12));
        let c = classify(&l1, &ClassifyOptions::default()).unwrap();
        assert!(matches!(c.verdict, Verdict::Bounded { .. }), "{}", c.verdict);
    }

    #[test]
    fn measure_constant_field() {
        let e = [0.5, 0.25];
        let s = measure_series(
            |_, _| Ok(Analytic::constant(1.0) as FieldRef),
            Rect::new(0.0, 1.0, 0.0, 0.0),
            Partial::VALUE,
            NormOrder::Lp(2),
            &e,
            10,
            1,
        )
        .unwrap();
        assert_eq!(s.measurements, vec![1.0, 1.0]);
        assert!(s.interchange_holds());
    }

    #[test]
    fn interchange_on_random_field() {
        // u(x, omega) = Z cos x + Y sin x
        let s = measure_series(
            |_, seed| {
                let mut r = seed::rng(seed);
                let z: f64 = rand::Rng::sample(&mut r, rand_distr::StandardNormal);
                let y: f64 = rand::Rng::sample(&mut r, rand_distr::StandardNormal);
                Ok(FnField::new(Rect::WHOLE_PLANE, move |x, _| z * x.cos() + y * x.sin()).into_ref())
            },
            Rect::new(0.0, 3.0, 0.0, 0.0),
            Partial::VALUE,
            NormOrder::Lp(2),
            &[0.5, 0.25],
            200,
            9,
        )
        .unwrap();
        assert!(s.interchange_holds());
        let son = s.sup_of_norm.unwrap();
        assert!(son[0] < s.measurements[0]);
        // Var u(x) = 1 for every x.
        assert!((son[0] - 1.0).abs() < 0.25);
    }

    #[test]
    fn moments_and_covariance() {
        let det = moment_field(|_| Ok(vec![2.0, -1.0]), 3, 100, 0).unwrap();
        assert_eq!(det.mean, vec![8.0, -1.0]);
        assert_eq!(det.standard_error, vec![0.0, 0.0]);
        let normal = |s: u64| -> Result<Vec<f64>> {
            let z: f64 = rand::Rng::sample(&mut seed::rng(s), rand_distr::StandardNormal);
            Ok(vec![z, z])
        };
        let m2 = moment_field(normal, 2, 4000, 5).unwrap();
        assert!((m2.mean[0] - 1.0).abs() < 5.0 * m2.standard_error[0]);
        let c = autocovariance(normal, 4000, 5).unwrap();
        assert_eq!(c.covariance[0][1], c.covariance[1][0]);
        assert!((c.covariance[0][1] - 1.0).abs() < 5.0 * c.standard_error[0][1]);
        let d = autocovariance(|_| Ok(vec![1.0, 3.0]), 100, 0).unwrap();
        assert!(d.covariance.iter().flatten().all(|v| *v == 0.0));
        assert!(moment_field(normal, 1, 50, 0).is_err());
    }

    #[test]
    fn moment_derivative_commutes() {
        // u(x) = Z1 sin x + Z2 cos x; d/dx E u^2 against E d/dx u^2
        use rand::Rng;
        use rand_distr::StandardNormal;
        let xs: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        let h = 1e-4;
        let z = |s: u64| {
            let mut r = seed::rng(s);
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            (a, b)
        };
        let u = |a: f64, b: f64, x: f64| a * x.sin() + b * x.cos();
        let plus = moment_field(
            |s| {
                let (a, b) = z(s);
                Ok(xs.iter().map(|x| u(a, b, x + h)).collect())
            },
            2,
            400,
            3,
        )
        .unwrap();
        let minus = moment_field(
            |s| {
                let (a, b) = z(s);
                Ok(xs.iter().map(|x| u(a, b, x - h)).collect())
            },
            2,
            400,
            3,
        )
        .unwrap();
        let deriv = moment_field(
            |s| {
                let (a, b) = z(s);
                Ok(xs
                    .iter()
                    .map(|&x| 2.0 * u(a, b, x) * (a * x.cos() - b * x.sin()))
                    .collect())
            },
            1,
            400,
            3,
        )
        .unwrap();
        for k in 0..xs.len() {
            let fd = (plus.mean[k] - minus.mean[k]) / (2.0 * h);
            assert!((fd - deriv.mean[k]).abs() <= 5.0 * deriv.standard_error[k], "{k}");
        }
    }

    #[test]
    fn association_of_identical_fields() {
        let f: FieldRef = Analytic::of_x(Profile::sin());
        let r = association_check(
            |_, _| Ok(f.clone()),
            f64::sin,
            &[
                TestFunction {
                    centre: 0.0,
                    half_width: 1.0,
                },
                TestFunction {
                    centre: 0.7,
                    half_width: 0.3,
                },
            ],
            0.0,
            &[0.5, 0.25],
            3,
            0,
            1e-12,
        )
        .unwrap();
        assert!(r.max_gap.iter().all(|g| *g <= 1e-14));
        assert!(r.below_tolerance);
        let narrow: FieldRef = Arc::new(FnField::new(Rect::new(-0.5, 0.5, 0.0, 1.0), |x, _| x));
        let err = association_check(
            |_, _| Ok(narrow.clone()),
            |x| x,
            &[TestFunction {
                centre: 0.0,
                half_width: 1.0,
            }],
            0.0,
            &[0.5],
            1,
            0,
            1e-9,
        );
        assert!(matches!(err, Err(Error::Domain { .. })));
    }

    #[test]
    fn parallel_matches_serial() {
        let sampler = |s: u64| -> Result<Vec<f64>> {
            let z: f64 = rand::Rng::sample(&mut seed::rng(s), rand_distr::StandardNormal);
            Ok(vec![z, z * z])
        };
        let a = moment_field(sampler, 1, 500, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| moment_field(sampler, 1, 500, 11).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn interchange_is_exact(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..20), p in 1u32..4) {
            let (son, nos) = norm_interchange(&rows, p).unwrap();
            prop_assert!(son <= nos);
        }

        #[test]
        fn power_laws_recovered(a in 0.2f64..6.0, c in 0.1f64..10.0) {
            let cl = classify(&synth(|e| c * e.powf(-a)), &ClassifyOptions::default()).unwrap();
            match cl.verdict {
                Verdict::Moderate { a: got } => prop_assert!((got - a).abs() < 0.05),
                v => prop_assert!(false, "{}", v),
            }
            prop_assert!((cl.constant / c - 1.0).abs() < 0.05);
        }

        #[test]
        fn constants_recovered(c in 1e-3f64..1e3) {
            let cl = classify(&synth(|_| c), &ClassifyOptions::default()).unwrap();
            match cl.verdict {
                Verdict::Bounded { c: got } => prop_assert!((got / c - 1.0).abs() < 1e-12),
                v => prop_assert!(false, "{}", v),
            }
        }

        #[test]
        fn covariance_symmetric(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..30)) {
            let c = covariance_of(&rows);
            for i in 0..3 {
                prop_assert!(c.covariance[i][i] >= 0.0);
                for j in 0..3 {
                    prop_assert_eq!(c.covariance[i][j], c.covariance[j][i]);
                }
            }
        }
    }
}
