//! Mollifiers and the embedding of sampled paths into smooth nets.
//!
//! The kernel is `rho_M(x) = phi(x) P_M(x)` with `P_M` chosen so that all
//! moments of order `1..=M` vanish, multiplied by a fixed unscaled cutoff
//! `chi` that equals 1 on `[-a, a]` and vanishes outside `[-b, b]`.
//! The scaled kernel is `chi(x) rho(x / eps) / eps`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Rect, Result};
use crate::fields::{CubicSpline, Grid1D, SampledProcess};
use crate::jet::Jet;
use crate::quad::{gauss_legendre, normal_cdf, normal_pdf};

const MAX_DERIVATIVE: usize = 8;
const CUTOFF_JET: usize = MAX_DERIVATIVE + 1;

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn hermite_he(n: usize) -> Vec<f64> {
    // He_{n+1} = x He_n - n He_{n-1}
    let mut h0 = vec![1.0];
    if n == 0 {
        return h0;
    }
    let mut h1 = vec![0.0, 1.0];
    for k in 1..n {
        let mut h2 = vec![0.0; k + 2];
        for (i, &c) in h1.iter().enumerate() {
            h2[i + 1] += c;
        }
        for (i, &c) in h0.iter().enumerate() {
            h2[i] -= k as f64 * c;
        }
        h0 = h1;
        h1 = h2;
    }
    h1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSpec {
    /// Number of vanishing moments; one of 0, 2, 4, 6.
    #[serde(default)]
    pub order: u32,
    #[serde(default = "default_inner")]
    pub cutoff_inner: f64,
    #[serde(default = "default_outer")]
    pub cutoff_outer: f64,
}

fn default_inner() -> f64 {
    1.0
}
fn default_outer() -> f64 {
    2.0
}

impl Default for MollifierSpec {
    fn default() -> Self {
        MollifierSpec {
            order: 0,
            cutoff_inner: 1.0,
            cutoff_outer: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mollifier {
    spec: MollifierSpec,
    /// `Q_k` with `rho^(k) = Q_k phi`.
    polys: Vec<Vec<f64>>,
    radius: f64,
}

pub const TRUNCATION: f64 = 1e-12;

impl Mollifier {
    pub fn new(spec: MollifierSpec) -> Result<Self> {
        if ![0, 2, 4, 6].contains(&spec.order) {
            return Err(param("order", format!("must be one of 0, 2, 4, 6, got {}", spec.order)));
        }
        let (a, b) = (spec.cutoff_inner, spec.cutoff_outer);
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(param("cutoff_outer", format!("need 0 < a < b, got a = {a}, b = {b}")));
        }
        let m = spec.order as usize;
        let mut p = vec![0.0; m + 1];
        let mut double_fact = 1.0;
        let mut fact = 1.0;
        for j in 0..=m / 2 {
            let n = 2 * j;
            if j > 0 {
                double_fact *= (2 * j - 1) as f64;
                fact *= ((n - 1) * n) as f64;
            }
            let he0 = if j % 2 == 0 { double_fact } else { -double_fact };
            for (i, c) in hermite_he(n).iter().enumerate() {
                p[i] += he0 * c / fact;
            }
        }
        let mut polys = vec![p];
        for k in 0..MAX_DERIVATIVE {
            let q = &polys[k];
            let mut next = vec![0.0; q.len() + 1];
            for (i, &c) in q.iter().enumerate() {
                if i > 0 {
                    next[i - 1] += i as f64 * c;
                }
                next[i + 1] -= c;
            }
            polys.push(next);
        }
        let mut radius = 50.0;
        let weight = |x: f64| x.abs().max(1.0).powi(m as i32);
        while radius > 0.0 && (weight(radius) * poly_eval(&polys[0], radius) * normal_pdf(radius)).abs() < TRUNCATION {
            radius -= 1e-3;
        }
        Ok(Mollifier {
            spec,
            polys,
            radius: radius + 1e-3,
        })
    }

    pub fn spec(&self) -> MollifierSpec {
        self.spec
    }

    /// Coefficients of `P_M` in increasing degree.
    pub fn polynomial(&self) -> &[f64] {
        &self.polys[0]
    }

    /// Unit-scale radius beyond which `|x|^M |rho| < 1e-12`.
    pub fn truncation_radius(&self) -> f64 {
        self.radius
    }

    /// `rho^(k)(x)` at unit scale, truncated outside the radius.
    pub fn rho(&self, x: f64, k: usize) -> f64 {
        if x.abs() > self.radius {
            return 0.0;
        }
        poly_eval(&self.polys[k], x) * normal_pdf(x)
    }

    /// `chi^(k)(x)` for `k <= 8`.
    pub fn chi(&self, x: f64, k: usize) -> f64 {
        let (a, b) = (self.spec.cutoff_inner, self.spec.cutoff_outer);
        let ax = x.abs();
        if ax <= a {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if ax >= b {
            return 0.0;
        }
        let w = b - a;
        let u = Jet::<CUTOFF_JET>::variable(ax).scale(-1.0 / w) + b / w;
        let f = |v: Jet<CUTOFF_JET>| (-v.recip()).exp();
        let one_minus = -u + 1.0;
        let fu = f(u);
        let s = fu / (fu + f(one_minus));
        let d = s.derivative(k);
        if x < 0.0 && k % 2 == 1 {
            -d
        } else {
            d
        }
    }

    /// `int x^j rho` at unit scale, without cutoff.
    pub fn moment(&self, j: u32) -> f64 {
        crate::quad::integrate(|x| x.powi(j as i32) * self.rho(x, 0), -self.radius, self.radius, 512, 8)
    }

    pub fn scaled(&self, eps: f64) -> Result<ScaledKernel> {
        ScaledKernel::new(self.clone(), eps)
    }
}

/// `chi(x) rho(x / eps) / eps` and its derivatives.
#[derive(Clone)]
pub struct ScaledKernel {
    moll: Mollifier,
    eps: f64,
    support: f64,
    cutoff_active: bool,
    cdf_table: Option<(Grid1D, Vec<f64>)>,
    cdf_left: f64,
}

impl fmt::Debug for ScaledKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaledKernel")
            .field("eps", &self.eps)
            .field("support", &self.support)
            .field("cutoff_active", &self.cutoff_active)
            .finish()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `int_{-inf}^z x^n phi(x) dx` for `n = 0..=nmax`.
fn gaussian_partial_moments(z: f64, nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    out[0] = normal_cdf(z);
    if nmax >= 1 {
        out[1] = -normal_pdf(z);
    }
    for n in 2..=nmax {
        out[n] = -z.powi(n as i32 - 1) * normal_pdf(z) + (n - 1) as f64 * out[n - 2];
    }
    out
}

impl ScaledKernel {
    fn new(moll: Mollifier, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(param("eps", format!("must be positive, got {eps}")));
        }
        let support = (moll.radius * eps).min(moll.spec.cutoff_outer);
        let cutoff_active = moll.radius * eps > moll.spec.cutoff_inner;
        let mut k = ScaledKernel {
            moll,
            eps,
            support,
            cutoff_active,
            cdf_table: None,
            cdf_left: 0.0,
        };
        if cutoff_active {
            let g = Grid1D::new(-support, support, 4097)?;
            let (z, w) = gauss_legendre(8);
            let mut acc = vec![0.0; g.count];
            for i in 1..g.count {
                let (x0, h) = (g.node(i - 1), g.step);
                let cell: f64 = z
                    .iter()
                    .zip(&w)
                    .map(|(zi, wi)| 0.5 * h * wi * k.eval(x0 + 0.5 * h * (1.0 + zi), 0))
                    .sum();
                acc[i] = acc[i - 1] + cell;
            }
            k.cdf_table = Some((g, acc));
        } else {
            k.cdf_left = k.closed_cdf(-k.moll.radius);
        }
        Ok(k)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Radius of the support, `min(b, r eps)`.
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn cutoff_active(&self) -> bool {
        self.cutoff_active
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.moll
    }

    /// `d^k/dz^k [chi(z) rho_eps(z)]`.
    #[inline]
    pub fn eval(&self, z: f64, k: usize) -> f64 {
        let u = z / self.eps;
        if u.abs() > self.moll.radius {
            return 0.0;
        }
        let inv = 1.0 / self.eps;
        if !self.cutoff_active || z.abs() <= self.moll.spec.cutoff_inner {
            return poly_eval(&self.moll.polys[k], u) * normal_pdf(u) * inv.powi(k as i32 + 1);
        }
        if z.abs() >= self.moll.spec.cutoff_outer {
            return 0.0;
        }
        let g = normal_pdf(u);
        (0..=k)
            .map(|i| {
                let j = k - i;
                binomial(k, i) * self.moll.chi(z, i) * poly_eval(&self.moll.polys[j], u) * g * inv.powi(j as i32 + 1)
            })
            .sum()
    }

    fn closed_cdf(&self, u: f64) -> f64 {
        let p = &self.moll.polys[0];
        let moments = gaussian_partial_moments(u, p.len() - 1);
        p.iter().zip(&moments).map(|(c, m)| c * m).sum()
    }

    /// `int_{-inf}^z chi rho_eps`.
    pub fn cdf(&self, z: f64) -> f64 {
        match &self.cdf_table {
            None => {
                let u = (z / self.eps).clamp(-self.moll.radius, self.moll.radius);
                self.closed_cdf(u) - self.cdf_left
            }
            Some((g, acc)) => {
                if z <= g.lower {
                    return 0.0;
                }
                if z >= g.upper() {
                    return acc[acc.len() - 1];
                }
                let s = (z - g.lower) / g.step;
                let i = (s.floor() as usize).min(g.count - 2);
                let t = s - i as f64;
                let h = g.step;
                let (y0, y1) = (acc[i], acc[i + 1]);
                let (d0, d1) = (self.eval(g.node(i), 0) * h, self.eval(g.node(i + 1), 0) * h);
                let t2 = t * t;
                let t3 = t2 * t;
                (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * d0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * d1
            }
        }
    }

    /// `int z^j chi rho_eps` by Gauss-Legendre over the support.
    pub fn moment(&self, j: u32) -> f64 {
        crate::quad::integrate(
            |z| z.powi(j as i32) * self.eval(z, 0),
            -self.support,
            self.support,
            512,
            8,
        )
    }
}

/// Derivative multi-index `d^dx/dx^dx d^dt/dt^dt`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partial {
    pub dx: u32,
    pub dt: u32,
}

impl Partial {
    pub const VALUE: Partial = Partial { dx: 0, dt: 0 };
    pub const DX: Partial = Partial { dx: 1, dt: 0 };
    pub const DT: Partial = Partial { dx: 0, dt: 1 };

    pub fn new(dx: u32, dt: u32) -> Self {
        Partial { dx, dt }
    }

    pub fn order(&self) -> u32 {
        self.dx + self.dt
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub label: String,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(label: impl Into<String>) -> Self {
        Provenance {
            label: label.into(),
            ..Default::default()
        }
    }
}

/// A smooth function of `(x, t)` evaluable with derivatives on a rectangle.
pub trait SmoothField: Send + Sync {
    fn domain(&self) -> Rect;

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64>;

    fn value(&self, x: f64, t: f64) -> Result<f64> {
        self.eval(x, t, Partial::VALUE)
    }

    fn provenance(&self) -> Provenance {
        Provenance::default()
    }

    /// True only when the field is identically zero.
    fn is_zero(&self) -> bool {
        false
    }

    /// False when the field does not depend on `t`.
    fn depends_on_t(&self) -> bool {
        true
    }
}

pub type FieldRef = Arc<dyn SmoothField>;

fn outside(x: f64, t: f64, domain: Rect) -> Error {
    Error::Domain { x, t, domain }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    T,
}

impl Axis {
    fn pick(self, x: f64, t: f64) -> f64 {
        match self {
            Axis::X => x,
            Axis::T => t,
        }
    }

    /// Order along this axis, or `None` if `d` differentiates along the other one.
    fn order(self, d: Partial) -> Option<u32> {
        match self {
            Axis::X if d.dt == 0 => Some(d.dx),
            Axis::T if d.dx == 0 => Some(d.dt),
            _ => None,
        }
    }

    fn rect(self, lo: f64, hi: f64) -> Rect {
        match self {
            Axis::X => Rect::new(lo, hi, f64::NEG_INFINITY, f64::INFINITY),
            Axis::T => Rect::new(f64::NEG_INFINITY, f64::INFINITY, lo, hi),
        }
    }
}

/// Closed-form one-variable profiles with derivatives of every order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `amplitude * sin(frequency * s + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `amplitude * exp(-((s - centre) / width)^2)`
    Gaussian {
        amplitude: f64,
        centre: f64,
        width: f64,
    },
    /// Coefficients in increasing degree.
    Polynomial {
        coefficients: Vec<f64>,
    },
}

impl Profile {
    pub fn sin() -> Self {
        Profile::Sine {
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        }
    }

    pub fn cos() -> Self {
        Profile::Sine {
            amplitude: 1.0,
            frequency: 1.0,
            phase: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn constant(value: f64) -> Self {
        Profile::Constant { value }
    }

    pub fn eval(&self, s: f64, k: u32) -> f64 {
        match self {
            Profile::Constant { value } => {
                if k == 0 {
                    *value
                } else {
                    0.0
                }
            }
            Profile::Linear { slope, intercept } => match k {
                0 => slope * s + intercept,
                1 => *slope,
                _ => 0.0,
            },
            Profile::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                let arg = frequency * s + phase + k as f64 * std::f64::consts::FRAC_PI_2;
                amplitude * frequency.powi(k as i32) * arg.sin()
            }
            Profile::Gaussian {
                amplitude,
                centre,
                width,
            } => {
                // d^k exp(-y^2) = (-1)^k H_k(y) exp(-y^2) with physicists' Hermite H_k
                let y = (s - centre) / width;
                let (mut h0, mut h1) = (1.0, 2.0 * y);
                let hk = match k {
                    0 => h0,
                    1 => h1,
                    _ => {
                        for n in 1..k {
                            let h2 = 2.0 * y * h1 - 2.0 * n as f64 * h0;
                            h0 = h1;
                            h1 = h2;
                        }
                        h1
                    }
                };
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                amplitude * sign * hk * (-y * y).exp() / width.powi(k as i32)
            }
            Profile::Polynomial { coefficients } => {
                let mut c = coefficients.clone();
                for _ in 0..k {
                    c = c.iter().enumerate().skip(1).map(|(i, v)| i as f64 * v).collect();
                }
                poly_eval(&c, s)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Constant { value } => *value == 0.0,
            Profile::Linear { slope, intercept } => *slope == 0.0 && *intercept == 0.0,
            Profile::Sine { amplitude, .. } | Profile::Gaussian { amplitude, .. } => *amplitude == 0.0,
            Profile::Polynomial { coefficients } => coefficients.iter().all(|c| *c == 0.0),
        }
    }
}

/// A [`Profile`] along one axis, constant along the other.
#[derive(Clone, Debug)]
pub struct Analytic {
    pub profile: Profile,
    pub axis: Axis,
}

impl Analytic {
    pub fn new(profile: Profile, axis: Axis) -> Self {
        Analytic { profile, axis }
    }

    pub fn of_x(profile: Profile) -> Arc<Self> {
        Arc::new(Analytic::new(profile, Axis::X))
    }

    pub fn of_t(profile: Profile) -> Arc<Self> {
        Arc::new(Analytic::new(profile, Axis::T))
    }

    pub fn constant(v: f64) -> Arc<Self> {
        Arc::new(Analytic::new(Profile::constant(v), Axis::X))
    }

    pub fn zero() -> Arc<Self> {
        Analytic::constant(0.0)
    }
}

impl SmoothField for Analytic {
    fn domain(&self) -> Rect {
        Rect::WHOLE_PLANE
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        Ok(match self.axis.order(d) {
            Some(k) => self.profile.eval(self.axis.pick(x, t), k),
            None => 0.0,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(format!("{:?}", self.profile))
    }

    fn is_zero(&self) -> bool {
        self.profile.is_zero()
    }

    fn depends_on_t(&self) -> bool {
        self.axis == Axis::T && !matches!(self.profile, Profile::Constant { .. })
    }
}

type ValueFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type PartialFn = dyn Fn(f64, f64, Partial) -> f64 + Send + Sync;

/// Closure-backed field. Derivatives come from the closure when supplied,
/// otherwise from centred differences of step `fd_step`.
#[derive(Clone)]
pub struct FnField {
    domain: Rect,
    value: Arc<ValueFn>,
    partial: Option<Arc<PartialFn>>,
    fd_step: f64,
    t_dependent: bool,
    label: String,
}

impl FnField {
    pub fn new(domain: Rect, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        FnField {
            domain,
            value: Arc::new(f),
            partial: None,
            fd_step: 1e-4,
            t_dependent: true,
            label: "closure".into(),
        }
    }

    pub fn with_partials(mut self, f: impl Fn(f64, f64, Partial) -> f64 + Send + Sync + 'static) -> Self {
        self.partial = Some(Arc::new(f));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn time_independent(mut self) -> Self {
        self.t_dependent = false;
        self
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn into_ref(self) -> FieldRef {
        Arc::new(self)
    }

    fn fd(&self, x: f64, t: f64, d: Partial) -> f64 {
        if d.dx > 0 {
            let h = self.fd_step;
            let dm = Partial::new(d.dx - 1, d.dt);
            return (self.fd(x + h, t, dm) - self.fd(x - h, t, dm)) / (2.0 * h);
        }
        if d.dt > 0 {
            if !self.t_dependent {
                return 0.0;
            }
            let h = self.fd_step;
            let dm = Partial::new(0, d.dt - 1);
            return (self.fd(x, t + h, dm) - self.fd(x, t - h, dm)) / (2.0 * h);
        }
        (self.value)(x, t)
    }
}

impl SmoothField for FnField {
    fn domain(&self) -> Rect {
        self.domain
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        if !self.domain.contains(x, t) {
            return Err(outside(x, t, self.domain));
        }
        if d == Partial::VALUE {
            return Ok((self.value)(x, t));
        }
        Ok(match &self.partial {
            Some(p) => p(x, t, d),
            None => self.fd(x, t, d),
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(self.label.clone())
    }

    fn depends_on_t(&self) -> bool {
        self.t_dependent
    }
}

/// `scale * inner + offset`.
#[derive(Clone)]
pub struct Affine {
    pub inner: FieldRef,
    pub scale: f64,
    pub offset: f64,
}

impl SmoothField for Affine {
    fn domain(&self) -> Rect {
        self.inner.domain()
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        let v = self.scale * self.inner.eval(x, t, d)?;
        Ok(if d == Partial::VALUE { v + self.offset } else { v })
    }

    fn provenance(&self) -> Provenance {
        self.inner.provenance()
    }

    fn is_zero(&self) -> bool {
        self.offset == 0.0 && (self.scale == 0.0 || self.inner.is_zero())
    }

    fn depends_on_t(&self) -> bool {
        self.inner.depends_on_t()
    }
}

pub fn negate(f: FieldRef) -> FieldRef {
    Arc::new(Affine {
        inner: f,
        scale: -1.0,
        offset: 0.0,
    })
}

/// Scale map `eta(eps)` replacing `eps` in the kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMap {
    #[default]
    Identity,
    /// `eta = 1 / |log eps|`
    InverseLog,
    /// `eta = 1 / log |log eps|`
    InverseLogLog,
}

impl ScaleMap {
    pub fn apply(self, eps: f64) -> Result<f64> {
        let v = match self {
            ScaleMap::Identity => eps,
            ScaleMap::InverseLog => 1.0 / eps.ln().abs(),
            ScaleMap::InverseLogLog => 1.0 / eps.ln().abs().ln(),
        };
        if !(v > 0.0 && v < 1.0) || !v.is_finite() {
            return Err(Error::Scale { eps, value: v });
        }
        Ok(v)
    }
}

/// `p * (chi rho_eps)` for a path sampled along one axis.
#[derive(Clone)]
pub struct EmbeddedPath {
    path: Arc<SampledProcess>,
    kernel: Arc<ScaledKernel>,
    axis: Axis,
    offset: u32,
    eps: f64,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for EmbeddedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddedPath")
            .field("eps", &self.eps)
            .field("axis", &self.axis)
            .field("offset", &self.offset)
            .field("safe", &(self.lo, self.hi))
            .finish()
    }
}

pub fn embed_path(path: Arc<SampledProcess>, moll: &Mollifier, eps: f64, axis: Axis) -> Result<EmbeddedPath> {
    embed_path_scaled(path, moll, eps, ScaleMap::Identity, axis)
}

pub fn embed_path_scaled(
    path: Arc<SampledProcess>,
    moll: &Mollifier,
    eps: f64,
    scale: ScaleMap,
    axis: Axis,
) -> Result<EmbeddedPath> {
    if !(eps > 0.0) {
        return Err(param("eps", format!("must be positive, got {eps}")));
    }
    let eta = scale.apply(eps)?;
    if path.grid.step > eta / 8.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution {
            step: path.grid.step,
            scale: eta,
        });
    }
    let kernel = moll.scaled(eta)?;
    let r = kernel.support();
    let (lo, hi) = (path.grid.lower + r, path.grid.upper() - r);
    if lo > hi {
        return Err(Error::InvalidGrid(format!(
            "path interval [{}, {}] is shorter than the kernel support 2*{r}",
            path.grid.lower,
            path.grid.upper()
        )));
    }
    Ok(EmbeddedPath {
        path,
        kernel: Arc::new(kernel),
        axis,
        offset: 0,
        eps,
        lo,
        hi,
    })
}

/// Embedding of the `k`-th derivative of the path.
pub fn embed_derivative(
    path: Arc<SampledProcess>,
    moll: &Mollifier,
    eps: f64,
    k: u32,
    axis: Axis,
) -> Result<EmbeddedPath> {
    Ok(embed_path(path, moll, eps, axis)?.derivative(k))
}

impl EmbeddedPath {
    pub fn derivative(mut self, k: u32) -> Self {
        self.offset += k;
        self
    }

    pub fn safe_interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn kernel(&self) -> &ScaledKernel {
        &self.kernel
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    /// Convolution at `s` along the path axis with the `k`-th kernel derivative.
    pub fn convolve(&self, s: f64, k: usize) -> f64 {
        let g = &self.path.grid;
        let r = self.kernel.support();
        let j0 = (((s - r) - g.lower) / g.step).floor().max(0.0) as usize;
        let j1 = ((((s + r) - g.lower) / g.step).ceil() as usize).min(g.count - 1);
        let mut acc = 0.0;
        for j in j0..=j1 {
            let w = if j == 0 || j == g.count - 1 { 0.5 } else { 1.0 };
            acc += w * self.path.values[j] * self.kernel.eval(s - g.node(j), k);
        }
        acc * g.step
    }

    /// Tabulates this field on `[lo, hi]` for fast interpolated evaluation.
    pub fn tabulate(&self, lo: f64, hi: f64, step: f64, max_order: u32) -> Result<TabulatedPath> {
        TabulatedPath::from_field(self, self.axis, lo, hi, step, max_order)
    }
}

impl SmoothField for EmbeddedPath {
    fn domain(&self) -> Rect {
        self.axis.rect(self.lo, self.hi)
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        let s = self.axis.pick(x, t);
        if s < self.lo || s > self.hi {
            return Err(outside(x, t, self.domain()));
        }
        match self.axis.order(d) {
            None => Ok(0.0),
            Some(k) => {
                let k = (k + self.offset) as usize;
                if k > MAX_DERIVATIVE {
                    return Err(param(
                        "order",
                        format!("derivatives above {MAX_DERIVATIVE} are not supported"),
                    ));
                }
                Ok(self.convolve(s, k))
            }
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            label: format!("embedded path (derivative {})", self.offset),
            eps: Some(self.eps),
            seed: self.path.seed,
        }
    }

    fn depends_on_t(&self) -> bool {
        self.axis == Axis::T
    }
}

/// A one-axis field tabulated with its derivatives and evaluated by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct TabulatedPath {
    grid: Grid1D,
    axis: Axis,
    /// `derivs[k][i]` = k-th derivative at node i.
    derivs: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl TabulatedPath {
    pub fn from_field(
        field: &dyn SmoothField,
        axis: Axis,
        lo: f64,
        hi: f64,
        step: f64,
        max_order: u32,
    ) -> Result<Self> {
        let grid = Grid1D::with_max_step(lo, hi, step)?;
        let mut derivs = Vec::new();
        for k in 0..=max_order + 1 {
            let d = match axis {
                Axis::X => Partial::new(k, 0),
                Axis::T => Partial::new(0, k),
            };
            let col: Result<Vec<f64>> = grid
                .nodes()
                .map(|s| match axis {
                    Axis::X => field.eval(s, 0.0, d),
                    Axis::T => field.eval(0.0, s, d),
                })
                .collect();
            derivs.push(col?);
        }
        Ok(TabulatedPath {
            grid,
            axis,
            derivs,
            provenance: field.provenance(),
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    fn interp(&self, s: f64, k: usize) -> f64 {
        let g = &self.grid;
        let pos = (s - g.lower) / g.step;
        let i = (pos.floor() as usize).min(g.count - 2);
        let u = pos - i as f64;
        let h = g.step;
        let (y0, y1) = (self.derivs[k][i], self.derivs[k][i + 1]);
        let (d0, d1) = (self.derivs[k + 1][i] * h, self.derivs[k + 1][i + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * d0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * d1
    }
}

impl SmoothField for TabulatedPath {
    fn domain(&self) -> Rect {
        self.axis.rect(self.grid.lower, self.grid.upper())
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        let s = self.axis.pick(x, t);
        if !self.grid.contains(s) {
            return Err(outside(x, t, self.domain()));
        }
        match self.axis.order(d) {
            None => Ok(0.0),
            Some(k) if (k as usize) + 1 < self.derivs.len() => Ok(self.interp(s, k as usize)),
            Some(k) => Err(param("order", format!("derivative {k} was not tabulated"))),
        }
    }

    fn provenance(&self) -> Provenance {
        self.provenance.clone()
    }

    fn depends_on_t(&self) -> bool {
        self.axis == Axis::T
    }
}

/// Natural cubic spline through a sampled path, as an unmollified field.
#[derive(Clone, Debug)]
pub struct SplinePath {
    spline: CubicSpline,
    axis: Axis,
}

impl SplinePath {
    pub fn new(path: &SampledProcess, axis: Axis) -> Self {
        SplinePath {
            spline: path.spline(),
            axis,
        }
    }

    pub fn spline(&self) -> &CubicSpline {
        &self.spline
    }
}

impl SmoothField for SplinePath {
    fn domain(&self) -> Rect {
        let g = self.spline.grid();
        self.axis.rect(g.lower, g.upper())
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        let s = self.axis.pick(x, t);
        if !self.spline.grid().contains(s) {
            return Err(outside(x, t, self.domain()));
        }
        Ok(match self.axis.order(d) {
            None => 0.0,
            Some(k) => self.spline.eval(s, k),
        })
    }

    fn depends_on_t(&self) -> bool {
        self.axis == Axis::T
    }
}

/// Tensor-product embedding of a field sampled on a plane grid (values row-major in `t`).
#[derive(Clone)]
pub struct EmbeddedPlane {
    grid: crate::fields::Grid2D,
    values: Arc<Vec<f64>>,
    kernel: Arc<ScaledKernel>,
    domain: Rect,
}

pub fn embed_plane(
    grid: crate::fields::Grid2D,
    values: Arc<Vec<f64>>,
    moll: &Mollifier,
    eps: f64,
) -> Result<EmbeddedPlane> {
    if values.len() != grid.x.count * grid.t.count {
        return Err(Error::Shape(format!(
            "{} values for a {}x{} grid",
            values.len(),
            grid.x.count,
            grid.t.count
        )));
    }
    let step = grid.x.step.max(grid.t.step);
    if step > eps / 8.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution { step, scale: eps });
    }
    let kernel = moll.scaled(eps)?;
    let r = kernel.support();
    let domain = Rect::new(
        grid.x.lower + r,
        grid.x.upper() - r,
        grid.t.lower + r,
        grid.t.upper() - r,
    );
    if domain.is_empty() {
        return Err(Error::InvalidGrid(
            "plane grid is smaller than the kernel support".into(),
        ));
    }
    Ok(EmbeddedPlane {
        grid,
        values,
        kernel: Arc::new(kernel),
        domain,
    })
}

impl SmoothField for EmbeddedPlane {
    fn domain(&self) -> Rect {
        self.domain
    }

    fn eval(&self, x: f64, t: f64, d: Partial) -> Result<f64> {
        if !self.domain.contains(x, t) {
            return Err(outside(x, t, self.domain));
        }
        let (gx, gt) = (&self.grid.x, &self.grid.t);
        let r = self.kernel.support();
        let range = |g: &Grid1D, s: f64| {
            let a = (((s - r) - g.lower) / g.step).floor().max(0.0) as usize;
            let b = ((((s + r) - g.lower) / g.step).ceil() as usize).min(g.count - 1);
            a..=b
        };
        let kx: Vec<(usize, f64)> = range(gx, x)
            .map(|i| (i, self.kernel.eval(x - gx.node(i), d.dx as usize)))
            .collect();
        let mut acc = 0.0;
        for j in range(gt, t) {
            let kt = self.kernel.eval(t - gt.node(j), d.dt as usize);
            if kt == 0.0 {
                continue;
            }
            let row = &self.values[j * gx.count..(j + 1) * gx.count];
            let s: f64 = kx.iter().map(|&(i, k)| k * row[i]).sum();
            acc += kt * s;
        }
        Ok(acc * gx.step * gt.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moll(order: u32) -> Mollifier {
        Mollifier::new(MollifierSpec {
            order,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn polynomials_match_closed_forms() {
        let want: [&[f64]; 4] = [
            &[1.0],
            &[1.5, 0.0, -0.5],
            &[15.0 / 8.0, 0.0, -10.0 / 8.0, 0.0, 1.0 / 8.0],
            &[105.0 / 48.0, 0.0, -105.0 / 48.0, 0.0, 21.0 / 48.0, 0.0, -1.0 / 48.0],
        ];
        for (i, m) in [0, 2, 4, 6].into_iter().enumerate() {
            let p = moll(m).polynomial().to_vec();
            assert_eq!(p.len(), want[i].len());
            for (a, b) in p.iter().zip(want[i]) {
                assert!((a - b).abs() < 1e-14, "M={m}: {p:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_order_and_cutoff() {
        assert!(Mollifier::new(MollifierSpec {
            order: 3,
            ..Default::default()
        })
        .is_err());
        assert!(Mollifier::new(MollifierSpec {
            order: 0,
            cutoff_inner: 2.0,
            cutoff_outer: 1.0
        })
        .is_err());
    }

    #[test]
    fn cutoff_values_and_derivatives() {
        let m = moll(0);
        assert_eq!(m.chi(0.5, 0), 1.0);
        assert_eq!(m.chi(2.5, 0), 0.0);
        assert!((m.chi(1.5, 0) - 0.5).abs() < 1e-15);
        let h = 1e-5;
        for &x in &[1.2, 1.5, 1.9, -1.3] {
            for k in 0..4 {
                let fd = (m.chi(x + h, k) - m.chi(x - h, k)) / (2.0 * h);
                assert!((fd - m.chi(x, k + 1)).abs() < 1e-5 * (1.0 + fd.abs()), "x={x} k={k}");
            }
        }
    }

    #[test]
    fn kernel_derivatives_match_differences() {
        let m = moll(4);
        for eps in [0.05, 0.4] {
            let k = m.scaled(eps).unwrap();
            let h = 1e-6 * eps;
            for &z in &[0.01f64, 0.03, -0.07, 0.3, 1.3, -1.7] {
                if z.abs() > k.support() {
                    continue;
                }
                for d in 0..3 {
                    let fd = (k.eval(z + h, d) - k.eval(z - h, d)) / (2.0 * h);
                    let ex = k.eval(z, d + 1);
                    assert!(
                        (fd - ex).abs() < 1e-5 * (1.0 + ex.abs()),
                        "eps={eps} z={z} d={d}: {fd} {ex}"
                    );
                }
            }
        }
    }

    #[test]
    fn cdf_matches_quadrature() {
        for order in [0, 2, 6] {
            let m = moll(order);
            for eps in [0.01, 0.3] {
                let k = m.scaled(eps).unwrap();
                for &z in &[-0.5 * eps, 0.0, 0.7 * eps, 2.0 * eps] {
                    let q = crate::quad::integrate(|s| k.eval(s, 0), -k.support(), z, 256, 8);
                    assert!((k.cdf(z) - q).abs() < 1e-11, "M={order} eps={eps} z={z}");
                }
            }
        }
    }

    #[test]
    fn analytic_profiles_differentiate() {
        let g = Profile::Gaussian {
            amplitude: 2.0,
            centre: 0.3,
            width: 0.7,
        };
        let h = 1e-5;
        for k in 0..4 {
            let x = 0.8;
            let fd = (g.eval(x + h, k) - g.eval(x - h, k)) / (2.0 * h);
            assert!((fd - g.eval(x, k + 1)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        assert!((Profile::cos().eval(0.4, 0) - 0.4f64.cos()).abs() < 1e-15);
        assert!((Profile::sin().eval(0.4, 3) + 0.4f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn resolution_and_scale_errors() {
        let g = Grid1D::new(-1.0, 1.0, 101).unwrap();
        let p = Arc::new(SampledProcess::deterministic(g, |x| x));
        assert!(matches!(
            embed_path(p.clone(), &moll(0), 0.1, Axis::X),
            Err(Error::Resolution { .. })
        ));
        assert!(matches!(
            embed_path_scaled(p, &moll(0), 0.5, ScaleMap::InverseLog, Axis::X),
            Err(Error::Scale { .. })
        ));
    }

    #[test]
    fn tabulated_path_matches_direct() {
        let g = Grid1D::new(-2.0, 2.0, 4001).unwrap();
        let p = Arc::new(SampledProcess::deterministic(g, |x| (3.0 * x).sin()));
        let e = embed_path(p, &moll(2), 0.05, Axis::X).unwrap();
        let t = e.tabulate(-1.0, 1.0, 0.05 / 16.0, 1).unwrap();
        for &x in &[-0.77, 0.0, 0.31, 0.999] {
            for k in 0..2 {
                let a = e.eval(x, 0.0, Partial::new(k, 0)).unwrap();
                let b = t.eval(x, 0.0, Partial::new(k, 0)).unwrap();
                assert!((a - b).abs() < 1e-7, "{x} {k}");
            }
        }
    }
}
