//! Truncated Taylor arithmetic used for exact derivatives of smooth cutoffs.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Taylor coefficients `c[k] = f^(k)(x0) / k!` truncated at order `N - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = v;
        Jet { c }
    }

    pub fn variable(x0: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = x0;
        if N > 1 {
            c[1] = 1.0;
        }
        Jet { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn derivative(&self, k: usize) -> f64 {
        if k >= N {
            return 0.0;
        }
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.c[k] * fact
    }

    pub fn scale(self, s: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().for_each(|v| *v *= s);
        Jet { c }
    }

    pub fn exp(self) -> Self {
        // f' = f * a'  =>  k f_k = sum_{j=1..k} j a_j f_{k-j}
        let mut f = [0.0; N];
        f[0] = self.c[0].exp();
        for k in 1..N {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * f[k - j];
            }
            f[k] = s / k as f64;
        }
        Jet { c: f }
    }

    pub fn recip(self) -> Self {
        Jet::constant(1.0) / self
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(o.c) {
            *a += b;
        }
        Jet { c }
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; N];
        for i in 0..N {
            for j in 0..N - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Jet { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut q = [0.0; N];
        for k in 0..N {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= o.c[j] * q[k - j];
            }
            q[k] = s / o.c[0];
        }
        Jet { c: q }
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(self, v: f64) -> Self {
        let mut c = self.c;
        c[0] += v;
        Jet { c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_square() {
        // d^k/dx^k exp(x^2) at x = 0.3
        let x = Jet::<5>::variable(0.3);
        let f = (x * x).exp();
        let e = (0.09f64).exp();
        let d1 = 2.0 * 0.3 * e;
        let d2 = (2.0 + 4.0 * 0.09) * e;
        let d3 = (12.0 * 0.3 + 8.0 * 0.027) * e;
        assert!((f.derivative(0) - e).abs() < 1e-14);
        assert!((f.derivative(1) - d1).abs() < 1e-13);
        assert!((f.derivative(2) - d2).abs() < 1e-13);
        assert!((f.derivative(3) - d3).abs() < 1e-12);
    }

    #[test]
    fn quotient_matches_reciprocal_derivatives() {
        // 1/(1+x) at x = 0.5: k-th derivative (-1)^k k! / 1.5^(k+1)
        let x = Jet::<6>::variable(0.5);
        let f = (x + 1.0).recip();
        for k in 0..6 {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            let want = (-1f64).powi(k as i32) * fact / 1.5f64.powi(k as i32 + 1);
            assert!((f.derivative(k) - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }
}
