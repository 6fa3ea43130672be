//! Forward-mode differentiation for the trainable parameters.
//!
//! The whole pipeline (gates, force law, Verlet rollouts, losses) is written
//! against the [`Scalar`] trait, so the same code evaluates plain `f64`
//! values and [`Dual`] numbers carrying one tangent lane per parameter.
//! With at most a couple of dozen parameters a single forward sweep with an
//! `N`-lane dual yields the full gradient.
//!
//! Parameter vectors are ordered `[ℓ_1..ℓ_K, θ_1..θ_K]`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest parameter count the dual dispatch supports (K = 12 basis terms).
pub const MAX_PARAMS: usize = 24;

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn recip(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    /// Absolute value with subgradient 0 at the kink.
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn recip(self) -> Self {
        f64::recip(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Dual number with `N` independent tangent lanes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Seed lane `lane` with unit tangent.
    pub fn variable(re: f64, lane: usize) -> Self {
        let mut eps = [0.0; N];
        eps[lane] = 1.0;
        Self { re, eps }
    }

    /// Apply a scalar function with value `f` and derivative `df` at `self.re`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= df;
        }
        Self { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e += oe;
        }
        Self { re: self.re + o.re, eps }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e -= oe;
        }
        Self { re: self.re - o.re, eps }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * o.re + o.eps[i] * self.re;
        }
        Self { re: self.re * o.re, eps }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * o.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self { re: self.re + o, eps: self.eps }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self { re: self.re - o, eps: self.eps }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= o;
        }
        Self { re: self.re * o, eps }
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline]
    fn recip(self) -> Self {
        let inv = 1.0 / self.re;
        self.chain(inv, -inv * inv)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        let lower = self.re.powi(n - 1);
        self.chain(lower * self.re, n as f64 * lower)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        let lower = self.re.powf(p - 1.0);
        self.chain(lower * self.re, p * lower)
    }
    #[inline]
    fn abs(self) -> Self {
        let sign = if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.re.abs(), sign)
    }
}

/// A scalar objective over a parameter vector, evaluable at any [`Scalar`].
pub trait Objective {
    fn eval<S: Scalar>(&self, params: &[S]) -> S;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

fn grad_lanes<const N: usize, O: Objective>(obj: &O, at: &[f64]) -> GradResult {
    let params: Vec<Dual<N>> = (0..N)
        .map(|i| Dual::variable(at.get(i).copied().unwrap_or(0.0), i))
        .collect();
    let out = obj.eval(&params[..at.len()]);
    GradResult {
        value: out.re,
        gradient: out.eps[..at.len()].to_vec(),
    }
}

macro_rules! dispatch_lanes {
    ($n:expr, $obj:expr, $at:expr; $($lanes:literal),+) => {
        match $n {
            $(n if n <= $lanes => grad_lanes::<$lanes, _>($obj, $at),)+
            _ => unreachable!(),
        }
    };
}

/// Exact gradient of `obj` at `at` by one forward dual sweep.
pub fn grad<O: Objective>(obj: &O, at: &[f64]) -> Result<GradResult> {
    if at.is_empty() || at.len() > MAX_PARAMS {
        return Err(Error::Domain(format!(
            "parameter count {} outside 1..={MAX_PARAMS}",
            at.len()
        )));
    }
    if let Some(i) = at.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!("parameter {i} is not finite")));
    }
    let res = dispatch_lanes!(at.len(), obj, at; 2, 4, 6, 8, 10, 12, 14, 16, 20, 24);
    if !res.value.is_finite() {
        return Err(Error::Evaluation(format!("objective value {}", res.value)));
    }
    if let Some(i) = res.gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Evaluation(format!("gradient entry {i} is not finite")));
    }
    Ok(res)
}

/// Five-point central finite-difference gradient of an `f64` function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            let x0 = at[i];
            let mut eval = |dx: f64| {
                x[i] = x0 + dx;
                let v = f(&x);
                x[i] = x0;
                v
            };
            let (p2, p1, m1, m2) = (eval(2.0 * h), eval(h), eval(-h), eval(-2.0 * h));
            (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
        })
        .collect()
}

/// Largest relative deviation `|a-b| / max(|b|, floor)` over all entries.
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Parameter-vector convention: logits first, then coefficients.
pub fn split_params<S: Copy>(params: &[S]) -> (&[S], &[S]) {
    params.split_at(params.len() / 2)
}

pub fn join_params(logits: &[f64], thetas: &[f64]) -> Vec<f64> {
    logits.iter().chain(thetas).copied().collect()
}
