//! Sequentially thresholded least squares on the radial basis library.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcebasis::BasisLibrary;
use crate::orbitgen::Trajectory;
use crate::stencil::{radial_samples, StencilConfig};

pub const RIDGE: f64 = 1e-12;

/// Sparse regression `targets ≈ features · ξ`: least squares on the active
/// terms, zero those below `threshold`, repeat until the support is stable.
pub fn stlsq(features: &DMatrix<f64>, targets: &DVector<f64>, threshold: f64, max_iters: usize) -> Result<Vec<f64>> {
    let (n, k) = features.shape();
    if targets.len() != n {
        return Err(Error::Domain(format!("{n} feature rows but {} targets", targets.len())));
    }
    if n < k {
        return Err(Error::Domain(format!("need at least {k} samples, got {n}")));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let mut active: Vec<usize> = (0..k).collect();
    let mut xi = vec![0.0; k];
    for _ in 0..max_iters.max(1) {
        let sol = least_squares(features, targets, &active)?;
        xi = vec![0.0; k];
        for (&i, &c) in active.iter().zip(&sol) {
            xi[i] = c;
        }
        let next: Vec<usize> = active.iter().copied().filter(|&i| xi[i].abs() >= threshold).collect();
        for i in 0..k {
            if !next.contains(&i) {
                xi[i] = 0.0;
            }
        }
        if next.is_empty() || next == active {
            return Ok(xi);
        }
        active = next;
    }
    // Refit on the final support so the returned coefficients are consistent.
    let sol = least_squares(features, targets, &active)?;
    let mut out = vec![0.0; k];
    for (&i, &c) in active.iter().zip(&sol) {
        out[i] = c;
    }
    Ok(out)
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, active: &[usize]) -> Result<Vec<f64>> {
    let sub = x.select_columns(active);
    let mut gram = sub.transpose() * &sub;
    let rhs = sub.transpose() * y;
    // Conditioning is judged on the correlation matrix so scale does not matter.
    let scale: Vec<f64> = (0..active.len()).map(|i| gram[(i, i)].sqrt()).collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::IllConditioned { terms: active.to_vec() });
    }
    let corr = DMatrix::from_fn(active.len(), active.len(), |i, j| gram[(i, j)] / (scale[i] * scale[j]));
    let pivots_ok = corr.cholesky().is_some_and(|c| {
        let d = c.l_dirty().diagonal();
        d.iter().all(|v| v * v > 1e-12)
    });
    if !pivots_ok {
        return Err(Error::IllConditioned { terms: active.to_vec() });
    }
    for i in 0..active.len() {
        gram[(i, i)] += RIDGE;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::IllConditioned { terms: active.to_vec() })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n_boot: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SindyConfig {
    pub stride: usize,
    pub threshold: f64,
    pub max_iters: usize,
    pub ensemble: Option<EnsembleConfig>,
    pub library: BasisLibrary,
}

impl Default for SindyConfig {
    fn default() -> Self {
        Self { stride: 10, threshold: 0.05, max_iters: 10, ensemble: None, library: BasisLibrary::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SindyResult {
    pub coefficients: Vec<f64>,
    pub selected: Vec<usize>,
    pub identified_basis: usize,
    pub basis: String,
    pub gm_estimate: f64,
    pub stride: usize,
    pub n_points: usize,
}

/// Feature matrix `φ_i(r_j)` and radial targets over the orbits' stencil midpoints.
pub fn design(orbits: &[&Trajectory], library: &BasisLibrary, stride: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut radii = Vec::new();
    let mut targets = Vec::new();
    for o in orbits {
        for (r, a) in radial_samples(&o.positions, StencilConfig::new(stride, o.dt())?)? {
            radii.push(r);
            targets.push(a);
        }
    }
    let x = DMatrix::from_fn(radii.len(), library.len(), |j, i| library.terms[i].eval(radii[j]));
    Ok((x, DVector::from_vec(targets)))
}

fn summarize(coefficients: Vec<f64>, cfg: &SindyConfig, n_points: usize) -> SindyResult {
    let selected: Vec<usize> = (0..coefficients.len()).filter(|&i| coefficients[i] != 0.0).collect();
    let identified_basis = crate::forcebasis::argmax(&coefficients.iter().map(|c| c.abs()).collect::<Vec<_>>());
    SindyResult {
        basis: cfg.library.terms[identified_basis].label(),
        gm_estimate: coefficients[identified_basis],
        coefficients,
        selected,
        identified_basis,
        stride: cfg.stride,
        n_points,
    }
}

/// STLSQ fit on the given orbits, optionally as a bootstrap ensemble over
/// trajectories aggregated by the coefficient median.
pub fn sindy_fit(orbits: &[&Trajectory], cfg: &SindyConfig) -> Result<SindyResult> {
    if orbits.is_empty() {
        return Err(Error::Domain("no orbits to fit".into()));
    }
    cfg.library.validate()?;
    let (x, y) = design(orbits, &cfg.library, cfg.stride)?;
    let n_points = y.len();
    let Some(ens) = cfg.ensemble.filter(|e| e.n_boot > 0) else {
        let xi = stlsq(&x, &y, cfg.threshold, cfg.max_iters)?;
        return Ok(summarize(xi, cfg, n_points));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ens.seed);
    let k = cfg.library.len();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(ens.n_boot); k];
    for _ in 0..ens.n_boot {
        let pick: Vec<&Trajectory> = (0..orbits.len()).map(|_| orbits[rng.random_range(0..orbits.len())]).collect();
        let (bx, by) = design(&pick, &cfg.library, cfg.stride)?;
        let xi = stlsq(&bx, &by, cfg.threshold, cfg.max_iters)?;
        for (s, c) in samples.iter_mut().zip(xi) {
            s.push(c);
        }
    }
    let xi = samples
        .iter_mut()
        .map(|s| {
            let m = median(s);
            if m.abs() >= cfg.threshold {
                m
            } else {
                0.0
            }
        })
        .collect();
    Ok(summarize(xi, cfg, n_points))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
