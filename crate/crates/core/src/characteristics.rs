//! Characteristic curves `d gamma / ds = lambda(gamma, s)` and the
//! trapezoidal domain of determinacy.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::fields::Grid1D;
use crate::mollify::{FieldRef, Partial, SmoothField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    RungeKutta4,
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorInfo {
    pub method: Method,
    pub step: f64,
    /// Step-halving estimate of the endpoint error (RK4 only).
    pub error_estimate: Option<f64>,
    pub iterations: usize,
    pub sup_differences: Vec<f64>,
    pub converged: bool,
}

/// Tabulated characteristic `s -> gamma(x0, t0, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicCurve {
    pub x0: f64,
    pub t0: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub info: IntegratorInfo,
}

impl CharacteristicCurve {
    pub fn end(&self) -> f64 {
        *self.positions.last().unwrap()
    }

    /// Position at `s` by linear interpolation between stored steps.
    pub fn at(&self, s: f64) -> f64 {
        let n = self.times.len();
        if n == 1 {
            return self.positions[0];
        }
        let forward = self.times[n - 1] >= self.times[0];
        let i = self
            .times
            .windows(2)
            .position(|w| if forward { s <= w[1] } else { s >= w[1] })
            .unwrap_or(n - 2);
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let w = if tb == ta { 0.0 } else { (s - ta) / (tb - ta) };
        self.positions[i] + w * (self.positions[i + 1] - self.positions[i])
    }
}

fn speed(lambda: &dyn SmoothField, x: f64, s: f64) -> Result<f64> {
    lambda.eval(x, s, Partial::VALUE).map_err(|e| match e {
        Error::Domain { x, t, .. } => Error::DomainEscape { time: t, position: x },
        other => other,
    })
}

/// One classical RK4 step of signed length `h` from `(x, s)`.
#[inline]
pub fn rk4_step(lambda: &dyn SmoothField, x: f64, s: f64, h: f64) -> Result<f64> {
    let k1 = speed(lambda, x, s)?;
    let k2 = speed(lambda, x + 0.5 * h * k1, s + 0.5 * h)?;
    let k3 = speed(lambda, x + 0.5 * h * k2, s + 0.5 * h)?;
    let k4 = speed(lambda, x + h * k3, s + h)?;
    Ok(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrates from `(x, s0)` to time `s1` with `substeps` equal RK4 steps.
pub fn rk4_flow(lambda: &dyn SmoothField, x: f64, s0: f64, s1: f64, substeps: usize) -> Result<f64> {
    let h = (s1 - s0) / substeps as f64;
    let mut y = x;
    for m in 0..substeps {
        y = rk4_step(lambda, y, s0 + m as f64 * h, h)?;
    }
    Ok(y)
}

fn steps_for(t0: f64, t_end: f64, max_step: f64) -> Result<usize> {
    if !(max_step > 0.0) || !max_step.is_finite() {
        return Err(param("step", format!("must be positive, got {max_step}")));
    }
    Ok(((t_end - t0).abs() / max_step).ceil().max(1.0) as usize)
}

/// Characteristic through `(x0, t0)` followed to `t_end` (either direction).
pub fn integrate_characteristic(
    lambda: &dyn SmoothField,
    x0: f64,
    t0: f64,
    t_end: f64,
    max_step: f64,
) -> Result<CharacteristicCurve> {
    let n = steps_for(t0, t_end, max_step)?;
    let h = (t_end - t0) / n as f64;
    let mut times = vec![t0];
    let mut positions = vec![x0];
    let mut y = x0;
    for m in 0..n {
        let s = t0 + m as f64 * h;
        y = rk4_step(lambda, y, s, h)?;
        times.push(if m + 1 == n { t_end } else { s + h });
        positions.push(y);
    }
    let fine = rk4_flow(lambda, x0, t0, t_end, 2 * n)?;
    Ok(CharacteristicCurve {
        x0,
        t0,
        times,
        positions,
        info: IntegratorInfo {
            method: Method::RungeKutta4,
            step: h.abs(),
            error_estimate: Some((fine - y).abs() * 16.0 / 15.0),
            iterations: 1,
            sup_differences: Vec::new(),
            converged: true,
        },
    })
}

/// Fixed-point iteration of `h(s) = x0 + int_{t0}^{s} lambda(h(r), r) dr`
/// with cumulative trapezoidal quadrature on a uniform grid.
///
/// Non-convergence is reported through `info.converged`, not as an error.
pub fn picard_characteristic(
    lambda: &dyn SmoothField,
    x0: f64,
    t0: f64,
    t_end: f64,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CharacteristicCurve> {
    let n = steps_for(t0, t_end, step)?;
    let h = (t_end - t0) / n as f64;
    let times: Vec<f64> = (0..=n)
        .map(|m| if m == n { t_end } else { t0 + m as f64 * h })
        .collect();
    let mut cur = vec![x0; n + 1];
    let mut diffs = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let speeds: Result<Vec<f64>> = times.iter().zip(&cur).map(|(&s, &x)| speed(lambda, x, s)).collect();
        let speeds = speeds?;
        let mut next = vec![x0; n + 1];
        for m in 1..=n {
            next[m] = next[m - 1] + 0.5 * h * (speeds[m - 1] + speeds[m]);
        }
        let d = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, crate::quad::nan_max);
        diffs.push(d);
        cur = next;
        if d <= tol {
            converged = true;
            break;
        }
        if diffs.len() >= 4 && d > diffs[diffs.len() - 4] {
            break;
        }
    }
    Ok(CharacteristicCurve {
        x0,
        t0,
        times,
        positions: cur,
        info: IntegratorInfo {
            method: Method::Picard,
            step: h.abs(),
            error_estimate: None,
            iterations: diffs.len(),
            sup_differences: diffs,
            converged,
        },
    })
}

/// `K_T = { |t| <= T, |x| <= kappa - c |t| }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterminacyDomain {
    pub kappa: f64,
    pub horizon: f64,
    /// Slope of the sides; at least the sampled `sup |lambda|`.
    pub speed: f64,
    pub sampled_sup: f64,
}

impl DeterminacyDomain {
    pub fn new(kappa: f64, horizon: f64, speed: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(horizon > 0.0) || !(speed >= 0.0) {
            return Err(param(
                "kappa",
                format!("need kappa > 0, T > 0, c >= 0; got {kappa}, {horizon}, {speed}"),
            ));
        }
        if kappa <= speed * horizon {
            return Err(Error::EmptyDomain {
                kappa,
                reach: speed * horizon,
            });
        }
        Ok(DeterminacyDomain {
            kappa,
            horizon,
            speed,
            sampled_sup: speed,
        })
    }

    pub fn half_width(&self, t: f64) -> f64 {
        self.kappa - self.speed * t.abs()
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        t.abs() <= self.horizon * (1.0 + 1e-12) && x.abs() <= self.half_width(t) + 1e-12
    }
}

pub const SPEED_INFLATION: f64 = 1.01;

/// Samples `sup |lambda_i|` over `[-kappa, kappa] x [-T, T]` (clipped to
/// `t >= 0` when a field is not defined for negative times) and inflates it by 1%.
pub fn determinacy_domain(lambdas: &[FieldRef], kappa: f64, horizon: f64) -> Result<DeterminacyDomain> {
    determinacy_domain_sampled(lambdas, kappa, horizon, 401, 201)
}

pub fn determinacy_domain_sampled(
    lambdas: &[FieldRef],
    kappa: f64,
    horizon: f64,
    nx: usize,
    nt: usize,
) -> Result<DeterminacyDomain> {
    if !(kappa > 0.0) || !(horizon > 0.0) {
        return Err(param(
            "kappa",
            format!("need kappa > 0 and T > 0, got {kappa}, {horizon}"),
        ));
    }
    let xs = Grid1D::new(-kappa, kappa, nx.max(2))?;
    let mut sup: f64 = 0.0;
    for l in lambdas {
        if l.is_zero() {
            continue;
        }
        let t_lo = if l.domain().t0 <= -horizon { -horizon } else { 0.0 };
        let ts: Vec<f64> = if l.depends_on_t() {
            Grid1D::new(t_lo, horizon, nt.max(2))?.nodes().collect()
        } else {
            vec![0.0]
        };
        for &t in &ts {
            for x in xs.nodes() {
                sup = sup.max(l.value(x, t)?.abs());
            }
        }
    }
    let speed = SPEED_INFLATION * sup;
    let mut d = DeterminacyDomain::new(kappa, horizon, speed)?;
    d.sampled_sup = sup;
    Ok(d)
}

/// Arc length `L(z) = int sqrt(1 + c'(s)^2) ds` tabulated on a grid.
///
/// The integrand is interpolated linearly, so `L` is piecewise quadratic,
/// continuous and strictly increasing.
#[derive(Clone, Debug)]
pub struct ArcLength {
    grid: Grid1D,
    density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ArcLength {
    pub fn tabulate(c_prime: &dyn SmoothField, lo: f64, hi: f64, step: f64) -> Result<Self> {
        let grid = Grid1D::with_max_step(lo, hi, step)?;
        let density: Result<Vec<f64>> = grid
            .nodes()
            .map(|z| c_prime.value(z, 0.0).map(|d| (1.0 + d * d).sqrt()))
            .collect();
        let density = density?;
        let mut cumulative = vec![0.0; grid.count];
        for i in 1..grid.count {
            cumulative[i] = cumulative[i - 1] + 0.5 * grid.step * (density[i - 1] + density[i]);
        }
        Ok(ArcLength {
            grid,
            density,
            cumulative,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.grid.lower, self.grid.upper())
    }

    /// `L(z)` measured from the left end of the table.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !self.grid.contains(z) {
            return Err(Error::DomainEscape { time: 0.0, position: z });
        }
        let pos = (z - self.grid.lower) / self.grid.step;
        let i = (pos.floor() as usize).min(self.grid.count - 2);
        let u = pos - i as f64;
        let (g0, g1) = (self.density[i], self.density[i + 1]);
        Ok(self.cumulative[i] + self.grid.step * (g0 * u + 0.5 * (g1 - g0) * u * u))
    }

    /// `L^{-1}(value)` by bisection to `1e-10`.
    pub fn inverse(&self, value: f64) -> Result<f64> {
        let total = *self.cumulative.last().unwrap();
        if !(0.0..=total).contains(&value) {
            let position = if value < 0.0 {
                self.grid.lower
            } else {
                self.grid.upper()
            };
            return Err(Error::DomainEscape { time: value, position });
        }
        let i = match self.cumulative.partition_point(|&c| c <= value) {
            0 => 0,
            p => (p - 1).min(self.grid.count - 2),
        };
        let (mut a, mut b) = (self.grid.node(i), self.grid.node(i + 1));
        while b - a > 1e-10 {
            let m = 0.5 * (a + b);
            if self.eval(m)? < value {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// `gamma^{+-}(x, t, 0) = L^{-1}(L(x) -+ t)`.
pub fn arclength_characteristics(arc: &ArcLength, x: f64, t: f64) -> Result<(f64, f64)> {
    let l = arc.eval(x)?;
    Ok((arc.inverse(l - t)?, arc.inverse(l + t)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollify::{Analytic, FnField, Profile};
    use crate::Rect;
    use std::sync::Arc;

    #[test]
    fn constant_speed_is_exact() {
        let l = Analytic::constant(0.7);
        let c = integrate_characteristic(l.as_ref(), 0.2, 1.0, 0.0, 0.05).unwrap();
        assert!((c.end() - (0.2 - 0.7)).abs() < 1e-14);
        assert!((c.at(0.5) - (0.2 - 0.35)).abs() < 1e-14);
    }

    #[test]
    fn linear_speed_matches_exponential() {
        // dx/ds = x  =>  x(s) = x0 e^{s - t0}
        let l = FnField::new(Rect::WHOLE_PLANE, |x, _| x).into_ref();
        let c = integrate_characteristic(l.as_ref(), 1.0, 0.0, 1.0, 0.01).unwrap();
        assert!((c.end() - 1f64.exp()).abs() < 1e-9);
        assert!(c.info.error_estimate.unwrap() < 1e-9);
    }

    #[test]
    fn picard_agrees_with_rk4() {
        let l = FnField::new(Rect::WHOLE_PLANE, |x, s| (x + s).sin() + 0.3).into_ref();
        let a = integrate_characteristic(l.as_ref(), 0.4, 0.0, 1.0, 0.01).unwrap();
        let b = picard_characteristic(l.as_ref(), 0.4, 0.0, 1.0, 1e-3, 1e-12, 100).unwrap();
        assert!(b.info.converged);
        assert!((a.end() - b.end()).abs() < 1e-6);
    }

    #[test]
    fn escape_is_reported() {
        let l: FieldRef = Arc::new(FnField::new(Rect::new(-1.0, 1.0, -1.0, 1.0), |_, _| 5.0));
        let e = integrate_characteristic(l.as_ref(), 0.0, 0.0, 1.0, 0.01).unwrap_err();
        assert!(matches!(e, Error::DomainEscape { .. }));
    }

    #[test]
    fn determinacy_speeds() {
        let zero: FieldRef = Analytic::zero();
        let d = determinacy_domain(&[zero], 1.0, 5.0).unwrap();
        assert_eq!(d.speed, 0.0);
        assert!(d.contains(1.0, 5.0));
        let one: FieldRef = Analytic::constant(1.0);
        let d = determinacy_domain(&[one.clone()], 2.0, 1.0).unwrap();
        assert!((d.speed - 1.01).abs() < 1e-15);
        assert!(matches!(
            determinacy_domain(&[one], 1.0, 1.0),
            Err(Error::EmptyDomain { .. })
        ));
    }

    #[test]
    fn arclength_of_straight_line() {
        let cp = Analytic::of_x(Profile::constant(1.0));
        let arc = ArcLength::tabulate(cp.as_ref(), -3.0, 3.0, 0.01).unwrap();
        let (gp, gm) = arclength_characteristics(&arc, 0.3, 0.5).unwrap();
        assert!((gp - (0.3 - 0.5 / 2f64.sqrt())).abs() < 1e-8);
        assert!((gm - (0.3 + 0.5 / 2f64.sqrt())).abs() < 1e-8);
        let (a, b) = arclength_characteristics(&arc, 0.3, 0.0).unwrap();
        assert!((a - 0.3).abs() < 1e-9 && (b - 0.3).abs() < 1e-9);
    }

    #[test]
    fn arclength_inverse_residual() {
        let cp = Analytic::of_x(Profile::Sine {
            amplitude: 3.0,
            frequency: 7.0,
            phase: 0.0,
        });
        let arc = ArcLength::tabulate(cp.as_ref(), -2.0, 2.0, 1e-3).unwrap();
        for &x in &[-0.4, 0.1, 0.9] {
            let (gp, _) = arclength_characteristics(&arc, x, 0.5).unwrap();
            let r = arc.eval(x).unwrap() - arc.eval(gp).unwrap() - 0.5;
            assert!(r.abs() < 1e-8);
        }
    }
}
