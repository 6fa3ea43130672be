//! Gated radial force basis.
//!
//! A model holds one logit and one coefficient per library term. Gates are
//! `A = softmax(ℓ / τ)` and the radial force magnitude is
//! `f(r) = Σ A_i θ_i φ_i(r)`, attractive along `-r̂`. Everything downstream
//! of the gates only sees the effective coefficients `c_i = A_i θ_i`, which
//! is what [`RadialLaw`] carries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffengine::Scalar;
use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Radii below this are treated as a collision with the centre.
pub const SINGULARITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisTerm {
    PowerLaw { exponent: f64 },
    LogR,
}

impl BasisTerm {
    pub fn power(exponent: f64) -> Self {
        BasisTerm::PowerLaw { exponent }
    }

    fn integer_exponent(p: f64) -> Option<i32> {
        (p.fract() == 0.0 && p.abs() <= 16.0).then_some(p as i32)
    }

    /// φ(r).
    #[inline]
    pub fn eval<S: Scalar>(&self, r: S) -> S {
        match *self {
            BasisTerm::PowerLaw { exponent } => match Self::integer_exponent(exponent) {
                Some(0) => S::cst(1.0),
                Some(n) => r.powi(n),
                None => r.powf(exponent),
            },
            BasisTerm::LogR => r.ln(),
        }
    }

    /// Antiderivative Φ with Φ' = φ, so that `V = Σ c_i Φ_i` pairs with the
    /// attractive force `-f(r) r̂`.
    #[inline]
    pub fn antiderivative<S: Scalar>(&self, r: S) -> S {
        match *self {
            BasisTerm::PowerLaw { exponent } => {
                let q = exponent + 1.0;
                if q == 0.0 {
                    r.ln()
                } else {
                    match Self::integer_exponent(q) {
                        Some(1) => r,
                        Some(n) => r.powi(n) / q,
                        None => r.powf(q) / q,
                    }
                }
            }
            BasisTerm::LogR => r * r.ln() - r,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BasisTerm::PowerLaw { exponent } if exponent == 0.0 => "1".to_string(),
            BasisTerm::PowerLaw { exponent } if exponent == 1.0 => "r".to_string(),
            BasisTerm::PowerLaw { exponent } => format!("r^{exponent}"),
            BasisTerm::LogR => "ln r".to_string(),
        }
    }
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisLibrary {
    pub terms: Vec<BasisTerm>,
}

impl Default for BasisLibrary {
    /// `[r⁻², r⁻¹, r, 1, r⁻³]`
    fn default() -> Self {
        Self::from_exponents(&[-2.0, -1.0, 1.0, 0.0, -3.0], false)
    }
}

impl BasisLibrary {
    pub fn from_exponents(exponents: &[f64], with_log: bool) -> Self {
        let mut terms: Vec<BasisTerm> = exponents.iter().map(|&p| BasisTerm::power(p)).collect();
        if with_log {
            terms.push(BasisTerm::LogR);
        }
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Config("basis library is empty".into()));
        }
        if self.terms.len() > crate::diffengine::MAX_PARAMS / 2 {
            return Err(Error::Config(format!(
                "basis library has {} terms, at most {} supported",
                self.terms.len(),
                crate::diffengine::MAX_PARAMS / 2
            )));
        }
        Ok(())
    }

    /// Index of the power law with the given exponent, if present.
    pub fn index_of_power(&self, exponent: f64) -> Option<usize> {
        self.terms
            .iter()
            .position(|t| matches!(t, BasisTerm::PowerLaw { exponent: p } if *p == exponent))
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(BasisTerm::label).collect()
    }
}

/// Numerically stable softmax of `logits / tau`.
pub fn softmax<S: Scalar>(logits: &[S], tau: f64) -> Vec<S> {
    let max = logits
        .iter()
        .map(Scalar::value)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<S> = logits.iter().map(|&l| ((l - max) / tau).exp()).collect();
    let total = exps.iter().fold(S::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisModel {
    pub library: BasisLibrary,
    pub logits: Vec<f64>,
    pub thetas: Vec<f64>,
    pub tau: f64,
}

impl BasisModel {
    pub fn new(library: BasisLibrary, logits: Vec<f64>, thetas: Vec<f64>, tau: f64) -> Result<Self> {
        library.validate()?;
        if logits.len() != library.len() || thetas.len() != library.len() {
            return Err(Error::Config(format!(
                "library has {} terms but got {} logits and {} coefficients",
                library.len(),
                logits.len(),
                thetas.len()
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { library, logits, thetas, tau })
    }

    /// A model whose gate is (numerically) one-hot on `index` with coefficient `theta`.
    pub fn one_hot(library: BasisLibrary, index: usize, theta: f64) -> Self {
        let k = library.len();
        let mut logits = vec![0.0; k];
        logits[index] = 1.0;
        let mut thetas = vec![0.0; k];
        thetas[index] = theta;
        Self { library, logits, thetas, tau: 1e-3 }
    }

    pub fn k(&self) -> usize {
        self.library.len()
    }

    pub fn params(&self) -> Vec<f64> {
        crate::diffengine::join_params(&self.logits, &self.thetas)
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let k = self.k();
        self.logits.copy_from_slice(&params[..k]);
        self.thetas.copy_from_slice(&params[k..]);
    }

    pub fn gates(&self) -> Result<Vec<f64>> {
        gates(self)
    }

    /// Effective coefficients `A_i θ_i`.
    pub fn effective_coefficients(&self) -> Result<Vec<f64>> {
        Ok(self.gates()?.iter().zip(&self.thetas).map(|(a, t)| a * t).collect())
    }

    pub fn law(&self) -> Result<RadialLaw<'_, f64>> {
        Ok(RadialLaw::new(&self.library, self.effective_coefficients()?))
    }

    pub fn dominant_index(&self) -> usize {
        argmax(&self.logits)
    }

    pub fn force(&self, r: Vec2<f64>) -> Result<Vec2<f64>> {
        self.law()?.force_checked(r)
    }

    pub fn potential(&self, r: f64) -> Result<f64> {
        if !(r > SINGULARITY_FLOOR) {
            return Err(Error::Singularity { radius: r, floor: SINGULARITY_FLOOR });
        }
        Ok(self.law()?.potential(r))
    }
}

pub fn gates(model: &BasisModel) -> Result<Vec<f64>> {
    if !(model.tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {}", model.tau)));
    }
    Ok(softmax(&model.logits, model.tau))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A radial force law `f(r) = Σ c_i φ_i(r)` with effective coefficients `c`.
#[derive(Clone, Debug)]
pub struct RadialLaw<'a, S> {
    pub library: &'a BasisLibrary,
    pub coeffs: Vec<S>,
}

impl<'a, S: Scalar> RadialLaw<'a, S> {
    pub fn new(library: &'a BasisLibrary, coeffs: Vec<S>) -> Self {
        debug_assert_eq!(library.len(), coeffs.len());
        Self { library, coeffs }
    }

    /// Attractive magnitude f(r).
    #[inline]
    pub fn magnitude(&self, r: S) -> S {
        let mut f = S::zero();
        for (term, &c) in self.library.terms.iter().zip(&self.coeffs) {
            f += c * term.eval(r);
        }
        f
    }

    #[inline]
    pub fn potential(&self, r: S) -> S {
        let mut v = S::zero();
        for (term, &c) in self.library.terms.iter().zip(&self.coeffs) {
            v += c * term.antiderivative(r);
        }
        v
    }

    /// Force with the radius clamped to the singularity floor. Returns the
    /// force and whether the clamp was hit; the clamped branch carries no
    /// gradient through the radius.
    #[inline]
    pub fn force_clamped(&self, pos: Vec2<S>) -> (Vec2<S>, bool) {
        let r = pos.norm();
        if r.value() < SINGULARITY_FLOOR {
            let rc = S::cst(SINGULARITY_FLOOR);
            let f = self.magnitude(rc);
            let dir = if r.value() > 0.0 {
                pos.values().scale(1.0 / r.value())
            } else {
                Vec2::new(1.0, 0.0)
            };
            return (Vec2::new(-f * dir.x, -f * dir.y), true);
        }
        let k = -self.magnitude(r) / r;
        (pos.scale(k), false)
    }

    pub fn force_checked(&self, pos: Vec2<S>) -> Result<Vec2<S>> {
        let r = pos.norm();
        if !(r.value() > SINGULARITY_FLOOR) {
            return Err(Error::Singularity { radius: r.value(), floor: SINGULARITY_FLOOR });
        }
        Ok(pos.scale(-self.magnitude(r) / r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub gates: Vec<f64>,
    pub selectivity: f64,
    pub dominant_index: usize,
    pub concentration: f64,
}

/// Largest over second-largest entry.
pub fn selectivity(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return f64::INFINITY;
    }
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in p {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    first / second
}

/// Normalized Herfindahl–Hirschman concentration `(K·HHI − 1)/(K − 1)` of a
/// probability vector.
pub fn concentration(p: &[f64]) -> f64 {
    let k = p.len() as f64;
    if p.len() < 2 {
        return 1.0;
    }
    let hhi: f64 = p.iter().map(|x| x * x).sum();
    ((k * hhi - 1.0) / (k - 1.0)).clamp(0.0, 1.0)
}

pub fn gate_stats(model: &BasisModel, theta_weighted: bool) -> Result<GateStats> {
    let gates = model.gates()?;
    let weights = if theta_weighted {
        let raw: Vec<f64> = gates.iter().zip(&model.thetas).map(|(a, t)| a * t.abs()).collect();
        let total: f64 = raw.iter().sum();
        if total < 1e-15 {
            gates.clone()
        } else {
            raw.iter().map(|w| w / total).collect()
        }
    } else {
        gates.clone()
    };
    Ok(GateStats {
        selectivity: selectivity(&gates),
        dominant_index: argmax(&gates),
        concentration: concentration(&weights),
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(logits: &[f64], thetas: &[f64], tau: f64) -> BasisModel {
        BasisModel::new(BasisLibrary::default(), logits.to_vec(), thetas.to_vec(), tau).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_gates() {
        let m = model(&[0.0; 5], &[1.0; 5], 1.0);
        let g = m.gates().unwrap();
        assert!(g.iter().all(|&a| (a - 0.2).abs() < 1e-15));
        assert_eq!(gate_stats(&m, false).unwrap().selectivity, 1.0);
    }

    #[test]
    fn biased_logit_gate_weight() {
        let m = model(&[1.5, 0.0, 0.0, 0.0, 0.0], &[1.0; 5], 1.0);
        let g = m.gates().unwrap();
        let e = 1.5f64.exp();
        assert!((g[0] - e / (e + 4.0)).abs() < 1e-15);
        assert!((g[0] - 0.5284).abs() < 1e-4);
        assert!((g[1] - 0.1179).abs() < 1e-4);
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let m = model(&[1.5, 0.0, 0.0, 0.0, 0.0], &[1.0; 5], 0.05);
        assert!(m.gates().unwrap()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let mut m = model(&[0.0; 5], &[1.0; 5], 1.0);
        m.tau = 0.0;
        assert!(matches!(m.gates(), Err(Error::Domain(_))));
        assert!(BasisModel::new(BasisLibrary::default(), vec![0.0; 5], vec![0.0; 5], -1.0).is_err());
    }

    #[test]
    fn newtonian_and_hooke_forces() {
        let lib = BasisLibrary::default();
        let kepler = BasisModel::one_hot(lib.clone(), 0, 1.0);
        let f = kepler.force(Vec2::new(2.0, 0.0)).unwrap();
        assert!((f.x + 0.25).abs() < 1e-12 && f.y.abs() < 1e-12);

        let hooke = BasisModel::one_hot(lib.clone(), 2, 1.0);
        let f = hooke.force(Vec2::new(0.0, 3.0)).unwrap();
        assert!(f.x.abs() < 1e-12 && (f.y + 3.0).abs() < 1e-12);

        let zero = model(&[0.3, 0.1, -0.2, 0.0, 0.05], &[0.0; 5], 1.0);
        assert_eq!(zero.force(Vec2::new(0.7, -1.1)).unwrap(), Vec2::new(-0.0, 0.0));
    }

    #[test]
    fn force_below_floor_is_an_error() {
        let m = BasisModel::one_hot(BasisLibrary::default(), 0, 1.0);
        assert!(matches!(m.force(Vec2::new(1e-7, 0.0)), Err(Error::Singularity { .. })));
        assert!(m.potential(0.0).is_err());
    }

    #[test]
    fn clamped_force_stays_finite() {
        let m = BasisModel::one_hot(BasisLibrary::default(), 0, 1.0);
        let law = m.law().unwrap();
        let (f, hit) = law.force_clamped(Vec2::new(1e-9, 0.0));
        assert!(hit);
        assert!(f.x.is_finite() && f.x < 0.0);
        let (_, hit) = law.force_clamped(Vec2::new(0.0, 0.0));
        assert!(hit);
    }

    #[test]
    fn potentials() {
        let lib = BasisLibrary::default();
        let v = BasisModel::one_hot(lib.clone(), 0, 1.0).potential(2.0).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
        let v = BasisModel::one_hot(lib, 2, 1.0).potential(2.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn potential_derivative_is_force_magnitude() {
        let lib = BasisLibrary {
            terms: vec![
                BasisTerm::power(-2.0),
                BasisTerm::power(-1.0),
                BasisTerm::power(1.0),
                BasisTerm::power(0.0),
                BasisTerm::power(-3.0),
                BasisTerm::power(-2.5),
                BasisTerm::power(2.0),
                BasisTerm::LogR,
            ],
        };
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..20 {
            let logits: Vec<f64> = (0..8).map(|_| next() - 0.5).collect();
            let thetas: Vec<f64> = (0..8).map(|_| 2.0 * next() - 1.0).collect();
            let m = BasisModel::new(lib.clone(), logits, thetas, 0.7).unwrap();
            let law = m.law().unwrap();
            let r = 0.5 + 3.0 * next();
            let h = 1e-5;
            let fd = (law.potential(r + h) - law.potential(r - h)) / (2.0 * h);
            assert!((fd - law.magnitude(r)).abs() < 1e-6, "r={r} fd={fd} f={}", law.magnitude(r));
        }
    }

    #[test]
    fn concentration_examples() {
        assert_eq!(concentration(&[1.0, 0.0, 0.0, 0.0, 0.0]), 1.0);
        assert!(concentration(&[0.2; 5]).abs() < 1e-15);
        let hhi: f64 = [0.6f64, 0.1, 0.1, 0.1, 0.1].iter().map(|x| x * x).sum();
        assert!((hhi - 0.40).abs() < 1e-12);
        assert!((concentration(&[0.6, 0.1, 0.1, 0.1, 0.1]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn theta_weighted_concentration_falls_back_to_gates() {
        let m = model(&[2.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 5], 1.0);
        let s = gate_stats(&m, true).unwrap();
        assert!((s.concentration - concentration(&s.gates)).abs() < 1e-15);

        let m = model(&[0.0; 5], &[1.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert_eq!(gate_stats(&m, true).unwrap().concentration, 1.0);
    }

    #[test]
    fn selectivity_identity_at_several_temperatures() {
        let logits = [0.8, 0.1, -0.3, 0.05, 0.2];
        let dl = 0.8 - 0.2;
        let mut last = 0.0;
        for tau in [1.0, 0.5, 0.2, 0.1, 0.05] {
            let m = model(&logits, &[1.0; 5], tau);
            let r = gate_stats(&m, false).unwrap().selectivity;
            assert!((r.ln() - dl / tau).abs() < 1e-10);
            assert!(r > last);
            last = r;
        }
    }

    proptest! {
        #[test]
        fn force_is_rotation_equivariant(
            logits in prop::collection::vec(-1.0f64..1.0, 5),
            thetas in prop::collection::vec(-2.0f64..2.0, 5),
            tau in 0.05f64..2.0,
            x in 0.2f64..5.0, y in -5.0f64..5.0,
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let m = model(&logits, &thetas, tau);
            let r = Vec2::new(x, y);
            let rotated = m.force(r.rotate(angle)).unwrap();
            let expected = m.force(r).unwrap().rotate(angle);
            let scale = 1.0 + expected.norm();
            prop_assert!((rotated.x - expected.x).abs() <= 1e-12 * scale);
            prop_assert!((rotated.y - expected.y).abs() <= 1e-12 * scale);
        }

        #[test]
        fn gates_normalized_and_selectivity_identity(
            logits in prop::collection::vec(-3.0f64..3.0, 5),
            tau in 0.05f64..3.0,
        ) {
            let m = model(&logits, &[1.0; 5], tau);
            let g = m.gates().unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut sorted = logits.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let r = selectivity(&g);
            prop_assert!((r.ln() - (sorted[0] - sorted[1]) / tau).abs() < 1e-10);
        }

        #[test]
        fn concentration_bounds(raw in prop::collection::vec(0.0f64..1.0, 2..9)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-9);
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let c = concentration(&p);
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
