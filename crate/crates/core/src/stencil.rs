//! Wide-stencil finite differences on uniformly sampled position series.
//!
//! A second difference taken `s` samples apart divides the noise variance by
//! `s⁴` relative to the adjacent-sample stencil, at the price of an
//! `O((sΔt)²)` truncation bias. Outputs cover interior indices
//! `j ∈ [s, T−s−1]` only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbitgen::{ForceLawSpec, Trajectory};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilConfig {
    pub stride: usize,
    pub dt: f64,
}

impl StencilConfig {
    pub fn new(stride: usize, dt: f64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stencil stride must be at least 1".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("stencil dt must be positive, got {dt}")));
        }
        Ok(Self { stride, dt })
    }

    pub fn min_len(&self) -> usize {
        2 * self.stride + 1
    }

    /// Index range of the midpoints that receive an estimate.
    pub fn midpoints(&self, len: usize) -> std::ops::Range<usize> {
        self.stride..len.saturating_sub(self.stride)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len < self.min_len() {
            return Err(Error::TooShort { len, required: self.min_len() });
        }
        Ok(())
    }
}

/// `â_j = (r_{j+s} − 2 r_j + r_{j−s}) / (sΔt)²`
pub fn wide_accel(positions: &[Vec2<f64>], cfg: StencilConfig) -> Result<Vec<Vec2<f64>>> {
    cfg.check(positions.len())?;
    let s = cfg.stride;
    let h2 = (s as f64 * cfg.dt).powi(2);
    Ok(cfg
        .midpoints(positions.len())
        .map(|j| {
            let (a, b, c) = (positions[j + s], positions[j], positions[j - s]);
            Vec2::new((a.x - 2.0 * b.x + c.x) / h2, (a.y - 2.0 * b.y + c.y) / h2)
        })
        .collect())
}

/// `v̂_j = (r_{j+s} − r_{j−s}) / (2sΔt)`
pub fn wide_velocity(positions: &[Vec2<f64>], cfg: StencilConfig) -> Result<Vec<Vec2<f64>>> {
    cfg.check(positions.len())?;
    let s = cfg.stride;
    let h = 2.0 * s as f64 * cfg.dt;
    Ok(cfg
        .midpoints(positions.len())
        .map(|j| {
            let (a, c) = (positions[j + s], positions[j - s]);
            Vec2::new((a.x - c.x) / h, (a.y - c.y) / h)
        })
        .collect())
}

/// Radius and inward radial acceleration `−â·r̂` at every stencil midpoint.
pub fn radial_samples(positions: &[Vec2<f64>], cfg: StencilConfig) -> Result<Vec<(f64, f64)>> {
    let acc = wide_accel(positions, cfg)?;
    Ok(cfg
        .midpoints(positions.len())
        .zip(acc)
        .map(|(j, a)| {
            let r = positions[j];
            let radius = r.norm();
            (radius, -a.dot(r) / radius)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub stride: usize,
    pub sigma_pos: f64,
    pub dt: f64,
    pub sigma_a_analytic: f64,
    pub sigma_a_empirical: Option<f64>,
    pub signal_magnitude: f64,
    pub snr: f64,
}

/// Per-coordinate noise of the stride-`s` acceleration estimate,
/// `σ_a = √6 σ_pos / (s² Δt²)`.
pub fn predict_noise(sigma_pos: f64, dt: f64, stride: usize, signal: f64) -> Result<NoiseReport> {
    if !(sigma_pos >= 0.0) || !(dt > 0.0) || stride == 0 {
        return Err(Error::Domain(format!(
            "need sigma_pos >= 0, dt > 0, stride >= 1 (got {sigma_pos}, {dt}, {stride})"
        )));
    }
    let s2 = (stride * stride) as f64;
    let sigma_a = 6f64.sqrt() * sigma_pos / (s2 * dt * dt);
    Ok(NoiseReport {
        stride,
        sigma_pos,
        dt,
        sigma_a_analytic: sigma_a,
        sigma_a_empirical: None,
        signal_magnitude: signal,
        snr: if sigma_a > 0.0 { signal / sigma_a } else { f64::INFINITY },
    })
}

/// Monte Carlo check of [`predict_noise`]: apply [`wide_accel`] to a pure
/// noise series with `n_samples` interior outputs and measure the spread.
pub fn verify_noise(
    cfg: StencilConfig,
    sigma_pos: f64,
    signal: f64,
    n_samples: usize,
    seed: u64,
) -> Result<NoiseReport> {
    if n_samples < 1000 {
        return Err(Error::Domain(format!("need at least 1000 samples, got {n_samples}")));
    }
    let mut report = predict_noise(sigma_pos, cfg.dt, cfg.stride, signal)?;
    let len = n_samples + 2 * cfg.stride;
    let series: Vec<Vec2<f64>> = if sigma_pos == 0.0 {
        vec![Vec2::default(); len]
    } else {
        let normal = Normal::new(0.0, sigma_pos).expect("positive sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect()
    };
    let acc = wide_accel(&series, cfg)?;
    let n = (2 * acc.len()) as f64;
    let mean = acc.iter().map(|a| a.x + a.y).sum::<f64>() / n;
    let var = acc
        .iter()
        .map(|a| (a.x - mean).powi(2) + (a.y - mean).powi(2))
        .sum::<f64>()
        / n;
    report.sigma_a_empirical = Some(var.sqrt());
    Ok(report)
}

/// Root-mean-square vector deviation `√(mean ‖â − a‖²)` of the stencil
/// acceleration on clean positions from `law`, over every interior sample.
pub fn clean_rms(orbits: &[&Trajectory], law: &ForceLawSpec, stride: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for o in orbits {
        let cfg = StencilConfig::new(stride, o.dt())?;
        let acc = wide_accel(&o.clean_positions, cfg)?;
        for (a, j) in acc.iter().zip(cfg.midpoints(o.len())) {
            let d = *a - law.acceleration(o.clean_positions[j]);
            sum += d.x * d.x + d.y * d.y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no stencil samples".into()));
    }
    Ok((sum / n as f64).sqrt())
}
