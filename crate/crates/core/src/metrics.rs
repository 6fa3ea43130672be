//! Post-training diagnostics: coefficient calibration, period and Kepler
//! exponent estimation, Hamiltonian variance and conservation-based model
//! selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcebasis::{gate_stats, BasisModel, RadialLaw, SINGULARITY_FLOOR};
use crate::orbitgen::Trajectory;
use crate::stencil::{radial_samples, StencilConfig};
use crate::trainer::ols;
use crate::vec2::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub dominant_basis_index: usize,
    pub basis: String,
    pub theta_opt: f64,
    pub n_points: usize,
}

impl CalibrationResult {
    /// One-hot model on the dominant basis with the refitted coefficient.
    pub fn model(&self, template: &BasisModel) -> BasisModel {
        BasisModel::one_hot(template.library.clone(), self.dominant_basis_index, self.theta_opt)
    }
}

/// Refit the dominant coefficient against wide-stencil radial accelerations:
/// `θ = Σ φ(r_j) â_j / Σ φ(r_j)²` with `â_j = −â·r̂`.
pub fn calibrate_basis(model: &BasisModel, basis: usize, orbits: &[&Trajectory], stride: usize) -> Result<CalibrationResult> {
    let term = model
        .library
        .terms
        .get(basis)
        .ok_or_else(|| Error::Domain(format!("basis index {basis} out of range")))?;
    let (mut num, mut den, mut n) = (0.0, 0.0, 0);
    for orbit in orbits {
        let cfg = StencilConfig::new(stride, orbit.dt())?;
        for (radius, radial) in radial_samples(&orbit.positions, cfg)? {
            if !(radius > SINGULARITY_FLOOR) {
                continue;
            }
            let phi = term.eval(radius);
            num += phi * radial;
            den += phi * phi;
            n += 1;
        }
    }
    if n == 0 || !(den >= 1e-15) {
        return Err(Error::DegenerateCalibration { basis, norm: den });
    }
    let theta_opt = num / den;
    if !theta_opt.is_finite() {
        return Err(Error::DegenerateCalibration { basis, norm: den });
    }
    Ok(CalibrationResult { dominant_basis_index: basis, basis: term.label(), theta_opt, n_points: n })
}

/// Calibrate the gate-dominant basis; the gates must have crystallized (R > 10).
pub fn calibrate(model: &BasisModel, orbits: &[&Trajectory], stride: usize) -> Result<CalibrationResult> {
    let stats = gate_stats(model, false)?;
    if !(stats.selectivity > 10.0) {
        return Err(Error::Domain(format!(
            "no dominant gate to calibrate (selectivity {:.3})",
            stats.selectivity
        )));
    }
    calibrate_basis(model, stats.dominant_index, orbits, stride)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub positions: Vec<Vec2<f64>>,
    pub velocities: Vec<Vec2<f64>>,
    /// Set when the radius left `[floor, escape]` or the state became non-finite.
    pub diverged: bool,
}

/// Velocity-Verlet rollout under a radial law, stopping early on divergence.
pub fn rollout(law: &RadialLaw<'_, f64>, r0: Vec2<f64>, v0: Vec2<f64>, dt: f64, n_steps: usize, escape: f64) -> Rollout {
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps + 1);
    let mut r = r0;
    let mut v = v0;
    positions.push(r);
    velocities.push(v);
    let bad = |r: Vec2<f64>| {
        let radius = r.norm();
        !(radius >= SINGULARITY_FLOOR && radius <= escape)
    };
    if bad(r) {
        return Rollout { positions, velocities, diverged: true };
    }
    let mut acc = law.force_clamped(r).0;
    let half = 0.5 * dt;
    for _ in 0..n_steps {
        v = v + acc * half;
        r = r + v * dt;
        if bad(r) {
            return Rollout { positions, velocities, diverged: true };
        }
        acc = law.force_clamped(r).0;
        v = v + acc * half;
        if !(v.x.is_finite() && v.y.is_finite()) {
            return Rollout { positions, velocities, diverged: true };
        }
        positions.push(r);
        velocities.push(v);
    }
    Rollout { positions, velocities, diverged: false }
}

/// Period of a sampled signal from its overlap-normalized autocorrelation:
/// the first local maximum beyond `lag_min` (time units), refined by a
/// parabola through the neighbouring lags.
pub fn estimate_period(signal: &[f64], dt: f64, lag_min: f64) -> Result<f64> {
    let n = signal.len();
    if n < 8 {
        return Err(Error::PeriodEstimation(format!("signal too short ({n} samples)")));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var > 1e-24 * (1.0 + mean * mean)) {
        return Err(Error::PeriodEstimation("signal has no variation".into()));
    }
    let max_lag = n * 3 / 4;
    let acf = |k: usize| -> f64 {
        let overlap = n - k;
        x[..overlap].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / (overlap as f64 * var)
    };
    let start = ((lag_min / dt).floor() as usize).max(1) + 1;
    if start + 1 >= max_lag {
        return Err(Error::PeriodEstimation("signal shorter than the minimum lag".into()));
    }
    let mut prev = acf(start - 1);
    let mut cur = acf(start);
    for k in start..max_lag {
        let next = acf(k + 1);
        if cur > prev && cur >= next && cur > 0.0 {
            let denom = prev - 2.0 * cur + next;
            let shift = if denom < 0.0 { 0.5 * (prev - next) / denom } else { 0.0 };
            return Ok((k as f64 + shift) * dt);
        }
        prev = cur;
        cur = next;
    }
    Err(Error::PeriodEstimation("no autocorrelation peak found".into()))
}

/// Period of a circular orbit at radius `a` under the law.
pub fn circular_period(law: &RadialLaw<'_, f64>, a: f64) -> f64 {
    let g = law.magnitude(a);
    if g > 0.0 {
        2.0 * std::f64::consts::PI * (a / g).sqrt()
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitPeriod {
    pub a: f64,
    pub period: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeplerFit {
    pub orbits: Vec<OrbitPeriod>,
    pub p: f64,
    pub c: f64,
    pub r_squared: f64,
    /// OLS standard error of `p`; absent with only two orbits.
    pub p_stderr: Option<f64>,
}

/// Least-squares fit of `ln T² = ln C + p ln a`.
pub fn fit_power_law(orbits: &[OrbitPeriod]) -> Result<KeplerFit> {
    let pts: Vec<(f64, f64)> = orbits.iter().map(|o| (o.a.ln(), 2.0 * o.period.ln())).collect();
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("semi-major axes and periods must be positive".into()));
    }
    let x0 = pts.first().map(|p| p.0).unwrap_or(0.0);
    if pts.len() < 2 || pts.iter().all(|p| (p.0 - x0).abs() < 1e-12) {
        return Err(Error::Fit("need at least two orbits with distinct semi-major axes".into()));
    }
    let (p, intercept) = ols(&pts);
    let my = pts.iter().map(|q| q.1).sum::<f64>() / pts.len() as f64;
    let ss_res: f64 = pts.iter().map(|q| (q.1 - (intercept + p * q.0)).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|q| (q.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let p_stderr = (pts.len() > 2).then(|| {
        let mx = pts.iter().map(|q| q.0).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
        (ss_res / (pts.len() - 2) as f64 / sxx).sqrt()
    });
    Ok(KeplerFit { orbits: orbits.to_vec(), p, c: intercept.exp(), r_squared, p_stderr })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub dt_model: f64,
    /// Rollout length in units of the observed period.
    pub periods: f64,
    /// Radius beyond which a rollout counts as escaped, relative to the orbit size.
    pub escape_factor: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { dt_model: 0.01, periods: 5.0, escape_factor: 100.0 }
    }
}

fn orbit_scale(orbit: &Trajectory) -> f64 {
    orbit.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
}

/// Period of the observed orbit, with the minimum lag set from the true
/// orbit size under the given law.
fn observed_period(orbit: &Trajectory, law: &RadialLaw<'_, f64>) -> Result<f64> {
    let (lo, hi) = radius_range(&orbit.positions);
    let guess = circular_period(law, 0.5 * (lo + hi));
    let x: Vec<f64> = orbit.positions.iter().map(|p| p.x).collect();
    estimate_period(&x, orbit.dt(), 0.25 * guess.min(orbit.times.last().copied().unwrap_or(0.0)))
}

fn radius_range(positions: &[Vec2<f64>]) -> (f64, f64) {
    positions
        .iter()
        .map(|p| p.norm())
        .fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Periods of free rollouts of the model from each orbit's initial state
/// and the fitted `T² ∝ a^p` law. The semi-major axis is taken from the
/// rollout's own radial extremes.
pub fn kepler_exponent(model: &BasisModel, orbits: &[&Trajectory], cfg: &RolloutConfig) -> Result<KeplerFit> {
    let law = model.law()?;
    let mut out = Vec::with_capacity(orbits.len());
    for orbit in orbits {
        let duration = orbit.times.last().copied().unwrap_or(0.0) - orbit.times[0];
        let n_steps = (duration / cfg.dt_model).ceil() as usize;
        let ro = rollout(
            &law,
            orbit.clean_positions[0],
            orbit.velocities[0],
            cfg.dt_model,
            n_steps,
            cfg.escape_factor * orbit_scale(orbit),
        );
        if ro.diverged {
            return Err(Error::IntegrationDiverged { step: ro.positions.len(), radius: ro.positions.last().map(|p| p.norm()).unwrap_or(0.0) });
        }
        let (lo, hi) = radius_range(&ro.positions);
        let a = 0.5 * (lo + hi);
        let x: Vec<f64> = ro.positions.iter().map(|p| p.x).collect();
        let period = estimate_period(&x, cfg.dt_model, 0.25 * circular_period(&law, a))?;
        out.push(OrbitPeriod { a, period });
    }
    fit_power_law(&out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConservationMode {
    /// Energy along the observed states under the model's potential.
    #[default]
    Observed,
    /// Energy along a free rollout of the model from the initial state.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub mode: ConservationMode,
    /// Mean over orbits of the per-orbit population std of H.
    pub sigma_h: f64,
    pub h_mean: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub rollout_periods: f64,
    pub n_orbits: usize,
    pub diverged: bool,
}

pub fn energy_series(model: &BasisModel, positions: &[Vec2<f64>], velocities: &[Vec2<f64>]) -> Result<Vec<f64>> {
    let law = model.law()?;
    Ok(positions
        .iter()
        .zip(velocities)
        .map(|(r, v)| 0.5 * v.norm_sq() + law.potential(r.norm()))
        .collect())
}

pub fn std_dev(values: &[f64]) -> f64 {
    crate::actionloss::population_variance(values).sqrt()
}

/// Hamiltonian spread `σ_H` of a calibrated model over the given orbits.
pub fn conservation(
    model: &BasisModel,
    orbits: &[&Trajectory],
    mode: ConservationMode,
    cfg: &RolloutConfig,
) -> Result<ConservationReport> {
    if orbits.is_empty() {
        return Err(Error::Domain("no orbits to evaluate".into()));
    }
    let law = model.law()?;
    let mut sigmas = Vec::with_capacity(orbits.len());
    let (mut sum, mut count, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    let mut diverged = false;
    let mut periods = 0.0;
    for orbit in orbits {
        let h = match mode {
            ConservationMode::Observed => {
                let span = orbit.times.last().copied().unwrap_or(0.0) - orbit.times[0];
                periods += observed_period(orbit, &law).map(|t| span / t).unwrap_or(f64::NAN);
                energy_series(model, &orbit.positions, &orbit.velocities)?
            }
            ConservationMode::Free => {
                let period = observed_period(orbit, &law)?;
                let n = (cfg.periods * period / cfg.dt_model).ceil() as usize;
                let ro = rollout(
                    &law,
                    orbit.clean_positions[0],
                    orbit.velocities[0],
                    cfg.dt_model,
                    n,
                    cfg.escape_factor * orbit_scale(orbit),
                );
                diverged |= ro.diverged;
                periods += (ro.positions.len() - 1) as f64 * cfg.dt_model / period;
                energy_series(model, &ro.positions, &ro.velocities)?
            }
        };
        sigmas.push(std_dev(&h));
        for v in h {
            sum += v;
            count += 1;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let n = orbits.len() as f64;
    let sigma_h = sigmas.iter().sum::<f64>() / n;
    if !sigma_h.is_finite() {
        return Err(Error::Evaluation(format!("energy spread is {sigma_h}")));
    }
    Ok(ConservationReport {
        mode,
        sigma_h,
        h_mean: sum / count as f64,
        h_min: lo,
        h_max: hi,
        rollout_periods: periods / n,
        n_orbits: orbits.len(),
        diverged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub basis_index: usize,
    pub basis: String,
    pub seeds: usize,
    pub mean_sigma_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub basis_index: usize,
    pub basis: String,
    /// Second-best group mean over the best; absent for a single group.
    pub margin: Option<f64>,
    pub tie: bool,
    pub groups: Vec<GroupSummary>,
}

/// Group `(basis, σ_H)` entries by basis and pick the group with the lowest
/// mean `σ_H`. Ties within 1e-12 go to the smaller basis index.
pub fn select_by_conservation(entries: &[(usize, f64)], labels: &[String]) -> Result<Verdict> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(basis, sigma) in entries {
        if sigma.is_finite() {
            groups.entry(basis).or_default().push(sigma);
        }
    }
    if groups.is_empty() {
        return Err(Error::Domain("no seeds with a finite energy spread".into()));
    }
    let label = |i: usize| labels.get(i).cloned().unwrap_or_else(|| format!("basis {i}"));
    let summaries: Vec<GroupSummary> = groups
        .iter()
        .map(|(&basis_index, v)| GroupSummary {
            basis_index,
            basis: label(basis_index),
            seeds: v.len(),
            mean_sigma_h: v.iter().sum::<f64>() / v.len() as f64,
        })
        .collect();
    let mut ranked: Vec<&GroupSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| a.mean_sigma_h.total_cmp(&b.mean_sigma_h).then(a.basis_index.cmp(&b.basis_index)));
    let best = ranked[0];
    let second = ranked.get(1);
    let tie = second.is_some_and(|s| (s.mean_sigma_h - best.mean_sigma_h).abs() <= 1e-12);
    let margin = second.map(|s| s.mean_sigma_h / best.mean_sigma_h);
    Ok(Verdict { basis_index: best.basis_index, basis: best.basis.clone(), margin, tie, groups: summaries.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub stride: usize,
    pub mode: ConservationMode,
    pub rollout: RolloutConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { stride: 10, mode: ConservationMode::default(), rollout: RolloutConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub calibration: CalibrationResult,
    pub kepler: Option<KeplerFit>,
    pub kepler_error: Option<String>,
    pub conservation: ConservationReport,
}

/// Calibrate on the training orbits, then fit the period law and measure
/// the energy spread on the evaluation orbits.
pub fn validate(model: &BasisModel, train: &[&Trajectory], eval: &[&Trajectory], cfg: &ValidationConfig) -> Result<ValidationReport> {
    let calibration = calibrate(model, train, cfg.stride)?;
    validate_calibrated(model, calibration, eval, cfg)
}

pub fn validate_calibrated(
    template: &BasisModel,
    calibration: CalibrationResult,
    eval: &[&Trajectory],
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let cal = calibration.model(template);
    let (kepler, kepler_error) = match kepler_exponent(&cal, eval, &cfg.rollout) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let conservation = conservation(&cal, eval, cfg.mode, &cfg.rollout)?;
    Ok(ValidationReport { calibration, kepler, kepler_error, conservation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub basis_index: usize,
    pub basis: String,
    pub theta_opt: f64,
    pub sigma_h: f64,
}

/// Calibrate every library term as a one-term law and measure its energy spread.
pub fn candidate_scan(
    template: &BasisModel,
    train: &[&Trajectory],
    eval: &[&Trajectory],
    cfg: &ValidationConfig,
) -> Result<Vec<CandidateScore>> {
    (0..template.k())
        .map(|i| {
            let c = calibrate_basis(template, i, train, cfg.stride)?;
            let report = conservation(&c.model(template), eval, cfg.mode, &cfg.rollout)?;
            Ok(CandidateScore { basis_index: i, basis: c.basis, theta_opt: c.theta_opt, sigma_h: report.sigma_h })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcebasis::BasisLibrary;
    use crate::orbitgen::{integrate_orbit, ForceLawSpec};
    use std::f64::consts::PI;

    fn kepler_one_hot(theta: f64) -> BasisModel {
        BasisModel::one_hot(BasisLibrary::default(), 0, theta)
    }

    fn observed(law: ForceLawSpec, a: f64, e: f64, dt_obs: f64, periods: f64) -> Trajectory {
        let (r0, v0) = law.initial_state(a, e);
        let every = (dt_obs / 1e-3).round() as usize;
        let n_obs = (periods * law.period(a) / dt_obs) as usize;
        let fine = integrate_orbit(&law, r0, v0, 1e-3, n_obs * every).unwrap();
        let pick = |v: &Vec<Vec2<f64>>| v.iter().step_by(every).copied().collect::<Vec<_>>();
        Trajectory {
            a,
            e,
            times: (0..=n_obs).map(|k| k as f64 * dt_obs).collect(),
            clean_positions: pick(&fine.clean_positions),
            positions: pick(&fine.clean_positions),
            velocities: pick(&fine.velocities),
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn calibration_two_point_example() {
        // φ = r⁻², so r = 1 and r = 2 give φ = 1 and 0.25; â matching gives θ = 1.
        let num = 1.0 * 1.0 + 0.25 * 0.25;
        let den = 1.0f64 + 0.0625;
        assert_eq!(num / den, 1.0);
    }

    #[test]
    fn calibration_recovers_couplings_on_clean_data() {
        let kepler = observed(ForceLawSpec::kepler(), 1.5, 0.1, 0.05, 5.0);
        let c = calibrate_basis(&kepler_one_hot(0.3), 0, &[&kepler], 1).unwrap();
        assert!((c.theta_opt - 1.0).abs() < 0.01, "{}", c.theta_opt);
        assert_eq!(c.basis, "r^-2");

        let hooke = observed(ForceLawSpec::hooke(), 2.0, 0.2, 0.05, 5.0);
        let m = BasisModel::one_hot(BasisLibrary::default(), 2, 0.4);
        let c = calibrate_basis(&m, 2, &[&hooke], 1).unwrap();
        assert!((c.theta_opt - 1.0).abs() < 0.01, "{}", c.theta_opt);
        // At stride 10 the harmonic estimate carries the exact stencil factor.
        let c = calibrate_basis(&m, 2, &[&hooke], 10).unwrap();
        let factor = (2.0 - 2.0 * 0.5f64.cos()) / 0.25;
        assert!((c.theta_opt - factor).abs() < 2e-3, "{} vs {factor}", c.theta_opt);
    }

    #[test]
    fn calibration_errors() {
        let t = observed(ForceLawSpec::kepler(), 1.0, 0.0, 0.05, 2.0);
        let diffuse = BasisModel::new(BasisLibrary::default(), vec![0.0; 5], vec![1.0; 5], 1.0).unwrap();
        assert!(matches!(calibrate(&diffuse, &[&t], 10), Err(Error::Domain(_))));
        assert!(matches!(calibrate_basis(&diffuse, 0, &[], 10), Err(Error::DegenerateCalibration { .. })));
        assert!(calibrate(&kepler_one_hot(1.0), &[&t], 10).is_ok());
    }

    #[test]
    fn period_of_cosine() {
        let dt = 0.05;
        let x: Vec<f64> = (0..=240).map(|k| (2.0 * PI * k as f64 * dt / 4.0).cos()).collect();
        let t = estimate_period(&x, dt, 1.0).unwrap();
        assert!((t - 4.0).abs() < 0.05, "{t}");
        let scaled: Vec<f64> = x.iter().map(|v| 3.7 * v + 12.0).collect();
        assert!((estimate_period(&scaled, dt, 1.0).unwrap() - t).abs() < 1e-9);
        assert!(matches!(estimate_period(&[2.0; 100], dt, 1.0), Err(Error::PeriodEstimation(_))));
    }

    #[test]
    fn period_of_circular_kepler_rollout() {
        let m = kepler_one_hot(1.0);
        let law = m.law().unwrap();
        let ro = rollout(&law, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 0.01, 3000, 100.0);
        assert!(!ro.diverged);
        let x: Vec<f64> = ro.positions.iter().map(|p| p.x).collect();
        let t = estimate_period(&x, 0.01, 0.25 * circular_period(&law, 1.0)).unwrap();
        assert!((t / (2.0 * PI) - 1.0).abs() < 0.01, "{t}");
    }

    #[test]
    fn power_law_fits_are_exact() {
        let pairs: Vec<OrbitPeriod> =
            [0.5, 1.0, 2.0, 5.0].iter().map(|&a: &f64| OrbitPeriod { a, period: 2.0 * PI * a.powf(1.5) }).collect();
        let fit = fit_power_law(&pairs).unwrap();
        assert!((fit.p - 3.0).abs() < 1e-10);
        assert!((fit.c / (4.0 * PI * PI) - 1.0).abs() < 1e-10);
        assert!(fit.p_stderr.unwrap() < 1e-10);

        let flat: Vec<OrbitPeriod> = [0.5, 1.0, 3.0].iter().map(|&a| OrbitPeriod { a, period: 2.0 * PI }).collect();
        assert!(fit_power_law(&flat).unwrap().p.abs() < 1e-10);

        let same = [OrbitPeriod { a: 1.0, period: 1.0 }, OrbitPeriod { a: 1.0, period: 1.1 }];
        assert!(matches!(fit_power_law(&same), Err(Error::Fit(_))));
        assert!(matches!(fit_power_law(&same[..1]), Err(Error::Fit(_))));
    }

    #[test]
    fn kepler_exponent_from_rollouts() {
        let orbits: Vec<Trajectory> =
            [(0.6, 0.1), (1.5, 0.2), (3.0, 0.05)].iter().map(|&(a, e)| observed(ForceLawSpec::kepler(), a, e, 0.05, 5.0)).collect();
        let refs: Vec<&Trajectory> = orbits.iter().collect();
        let fit = kepler_exponent(&kepler_one_hot(1.0), &refs, &RolloutConfig::default()).unwrap();
        assert!((fit.p - 3.0).abs() < 0.02, "{fit:?}");
        assert!((fit.c / (4.0 * PI * PI) - 1.0).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn true_law_conserves_energy() {
        let t = observed(ForceLawSpec::kepler(), 1.0, 0.0, 0.05, 5.0);
        let m = kepler_one_hot(1.0);
        let free = conservation(&m, &[&t], ConservationMode::Free, &RolloutConfig::default()).unwrap();
        assert!(free.sigma_h < 1e-5, "{free:?}");
        assert!(!free.diverged);
        assert!((free.rollout_periods - 5.0).abs() < 0.1);
        let obs = conservation(&m, &[&t], ConservationMode::Observed, &RolloutConfig::default()).unwrap();
        assert!(obs.sigma_h < 1e-5, "{obs:?}");
        assert!((obs.h_mean + 0.5).abs() < 1e-5);
    }

    #[test]
    fn wrong_law_spreads_energy_along_observed_orbit() {
        let t = observed(ForceLawSpec::kepler(), 1.0, 0.3, 0.05, 3.0);
        let wrong = BasisModel::one_hot(BasisLibrary::default(), 4, 1.0);
        let right = kepler_one_hot(1.0);
        let cfg = RolloutConfig::default();
        let bad = conservation(&wrong, &[&t], ConservationMode::Observed, &cfg).unwrap().sigma_h;
        let good = conservation(&right, &[&t], ConservationMode::Observed, &cfg).unwrap().sigma_h;
        assert!(bad > 100.0 * good.max(1e-9), "{bad} vs {good}");
    }

    #[test]
    fn energy_spread_is_time_reversal_symmetric() {
        let m = BasisModel::one_hot(BasisLibrary::default(), 1, 0.8);
        let law = m.law().unwrap();
        let fwd = rollout(&law, Vec2::new(1.2, 0.0), Vec2::new(0.1, 0.7), 0.01, 2000, 100.0);
        let end = fwd.positions.len() - 1;
        let back = rollout(&law, fwd.positions[end], fwd.velocities[end].scale(-1.0), 0.01, 2000, 100.0);
        let hf = energy_series(&m, &fwd.positions, &fwd.velocities).unwrap();
        let hb = energy_series(&m, &back.positions, &back.velocities).unwrap();
        assert!((std_dev(&hf) - std_dev(&hb)).abs() < 1e-10);
        let rev: Vec<f64> = hf.iter().rev().copied().collect();
        assert!((std_dev(&rev) - std_dev(&hf)).abs() < 1e-15);
    }

    #[test]
    fn selection_examples() {
        let labels = BasisLibrary::default().labels();
        let v = select_by_conservation(&[(0, 0.01), (0, 0.02), (4, 0.1), (4, 0.12)], &labels).unwrap();
        assert_eq!(v.basis_index, 0);
        assert!((v.margin.unwrap() - 0.11 / 0.015).abs() < 1e-12);
        assert!(!v.tie);
        let single = select_by_conservation(&[(2, 0.3)], &labels).unwrap();
        assert_eq!((single.basis_index, single.margin), (2, None));
        let tie = select_by_conservation(&[(3, 0.2), (1, 0.2)], &labels).unwrap();
        assert!(tie.tie && tie.basis_index == 1);
        assert!(select_by_conservation(&[], &labels).is_err());
    }
}
