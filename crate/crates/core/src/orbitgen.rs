//! Synthetic orbit generation.
//!
//! Orbits are integrated with velocity Verlet at a fine step, downsampled to
//! the observation cadence and corrupted with i.i.d. Gaussian position noise.
//! Orbit parameters and noise draw from two independent sub-seeds, so the
//! noise realization can change while the clean orbits stay fixed.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcebasis::SINGULARITY_FLOOR;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Kepler,
    Hooke,
}

impl std::str::FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kepler" => Ok(System::Kepler),
            "hooke" => Ok(System::Hooke),
            other => Err(Error::Config(format!("unknown system {other:?}"))),
        }
    }
}

/// Ground-truth central force: `GM` for Kepler, `k` for Hooke.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceLawSpec {
    pub kind: System,
    pub coupling: f64,
}

impl ForceLawSpec {
    pub fn new(kind: System, coupling: f64) -> Result<Self> {
        if !(coupling > 0.0) {
            return Err(Error::Config(format!("coupling must be positive, got {coupling}")));
        }
        Ok(Self { kind, coupling })
    }

    pub fn kepler() -> Self {
        Self { kind: System::Kepler, coupling: 1.0 }
    }

    pub fn hooke() -> Self {
        Self { kind: System::Hooke, coupling: 1.0 }
    }

    #[inline]
    pub fn acceleration(&self, r: Vec2<f64>) -> Vec2<f64> {
        match self.kind {
            System::Kepler => {
                let d2 = r.norm_sq();
                r * (-self.coupling / (d2 * d2.sqrt()))
            }
            System::Hooke => r * -self.coupling,
        }
    }

    pub fn potential(&self, r: f64) -> f64 {
        match self.kind {
            System::Kepler => -self.coupling / r,
            System::Hooke => 0.5 * self.coupling * r * r,
        }
    }

    pub fn energy(&self, r: Vec2<f64>, v: Vec2<f64>) -> f64 {
        0.5 * v.norm_sq() + self.potential(r.norm())
    }

    /// Orbital period of a bound orbit with semi-major axis `a`.
    pub fn period(&self, a: f64) -> f64 {
        match self.kind {
            System::Kepler => TAU * a.powf(1.5) / self.coupling.sqrt(),
            System::Hooke => TAU / self.coupling.sqrt(),
        }
    }

    /// Initial state for an orbit of semi-major axis `a` and eccentricity `e`.
    ///
    /// Kepler: perihelion `(a(1−e), 0)` with tangential speed
    /// `√(GM(1+e)/(a(1−e)))`. Hooke: the ellipse `x = a cos ωt`,
    /// `y = a√(1−e²) sin ωt`, started at `(a, 0)` with speed `ω a √(1−e²)`.
    pub fn initial_state(&self, a: f64, e: f64) -> (Vec2<f64>, Vec2<f64>) {
        match self.kind {
            System::Kepler => {
                let rp = a * (1.0 - e);
                let vp = (self.coupling * (1.0 + e) / rp).sqrt();
                (Vec2::new(rp, 0.0), Vec2::new(0.0, vp))
            }
            System::Hooke => {
                let omega = self.coupling.sqrt();
                (Vec2::new(a, 0.0), Vec2::new(0.0, omega * a * (1.0 - e * e).sqrt()))
            }
        }
    }

    /// Semi-major axis and eccentricity of the orbit through `(r, v)`.
    pub fn elements(&self, r: Vec2<f64>, v: Vec2<f64>) -> (f64, f64) {
        let energy = self.energy(r, v);
        let l = r.cross(v);
        match self.kind {
            System::Kepler => {
                let gm = self.coupling;
                let a = -gm / (2.0 * energy);
                let e = (1.0 + 2.0 * energy * l * l / (gm * gm)).max(0.0).sqrt();
                (a, e)
            }
            System::Hooke => {
                // A² + B² = 2E/k and AB = |L|/ω for the ellipse semi-axes.
                let k = self.coupling;
                let sum = 2.0 * energy / k;
                let prod = l.abs() / k.sqrt();
                let disc = (sum * sum - 4.0 * prod * prod).max(0.0).sqrt();
                let a2 = 0.5 * (sum + disc);
                let b2 = 0.5 * (sum - disc);
                (a2.sqrt(), (1.0 - b2 / a2).max(0.0).sqrt())
            }
        }
    }
}

/// One observed orbit. `positions` carry observation noise;
/// `clean_positions` and `velocities` are the simulator's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub a: f64,
    pub e: f64,
    pub times: Vec<f64>,
    pub clean_positions: Vec<Vec2<f64>>,
    #[serde(rename = "noisy_positions")]
    pub positions: Vec<Vec2<f64>>,
    pub velocities: Vec<Vec2<f64>>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    /// Same orbit with positions replaced by their clean values.
    pub fn without_noise(&self) -> Self {
        Self { positions: self.clean_positions.clone(), noise_sigma: 0.0, ..self.clone() }
    }

    /// Rotate every position and velocity by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let rot = |v: &Vec<Vec2<f64>>| v.iter().map(|p| p.rotate(angle)).collect();
        Self {
            clean_positions: rot(&self.clean_positions),
            positions: rot(&self.positions),
            velocities: rot(&self.velocities),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n < 3 {
            return Err(Error::TooShort { len: n, required: 3 });
        }
        if self.positions.len() != n || self.clean_positions.len() != n || self.velocities.len() != n {
            return Err(Error::Config("trajectory arrays differ in length".into()));
        }
        let dt = self.dt();
        for (k, t) in self.times.iter().enumerate() {
            let expected = self.times[0] + k as f64 * dt;
            if (t - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(Error::Config(format!("non-uniform sampling at index {k}")));
            }
        }
        Ok(())
    }
}

/// Velocity-Verlet (kick–drift–kick) integration under `law`.
/// Returns `n_steps + 1` states including the initial one.
pub fn integrate_orbit(
    law: &ForceLawSpec,
    r0: Vec2<f64>,
    v0: Vec2<f64>,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    integrate_sampled(law, r0, v0, dt, n_steps, 1)
}

fn integrate_sampled(
    law: &ForceLawSpec,
    r0: Vec2<f64>,
    v0: Vec2<f64>,
    dt: f64,
    n_obs_steps: usize,
    every: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(r0.norm() > SINGULARITY_FLOOR) {
        return Err(Error::IntegrationDiverged { step: 0, radius: r0.norm() });
    }
    let mut r = r0;
    let mut v = v0;
    let mut acc = law.acceleration(r);
    let mut positions = Vec::with_capacity(n_obs_steps + 1);
    let mut velocities = Vec::with_capacity(n_obs_steps + 1);
    positions.push(r);
    velocities.push(v);
    let half = 0.5 * dt;
    for step in 1..=n_obs_steps * every {
        v = v + acc * half;
        r = r + v * dt;
        let radius = r.norm();
        if !(radius >= SINGULARITY_FLOOR) {
            return Err(Error::IntegrationDiverged { step, radius });
        }
        acc = law.acceleration(r);
        v = v + acc * half;
        if step % every == 0 {
            positions.push(r);
            velocities.push(v);
        }
    }
    let obs_dt = dt * every as f64;
    let times = (0..positions.len()).map(|k| k as f64 * obs_dt).collect();
    let (a, e) = law.elements(r0, v0);
    Ok(Trajectory {
        a,
        e,
        times,
        clean_positions: positions.clone(),
        positions,
        velocities,
        noise_sigma: 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub system: System,
    pub coupling: f64,
    pub n_orbits: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub dt_sim: f64,
    pub dt_obs: f64,
    pub periods: f64,
    pub noise_fraction: f64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Overrides the orbit-parameter sub-seed derived from the master seed.
    pub orbit_seed: Option<u64>,
    /// Overrides the noise sub-seed derived from the master seed.
    pub noise_seed: Option<u64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            system: System::Kepler,
            coupling: 1.0,
            n_orbits: 16,
            a_min: 0.5,
            a_max: 5.0,
            e_min: 0.0,
            e_max: 0.3,
            dt_sim: 1e-3,
            dt_obs: 0.05,
            periods: 5.0,
            noise_fraction: 0.01,
            split: [0.70, 0.15, 0.15],
            orbit_seed: None,
            noise_seed: None,
        }
    }
}

impl GeneratorConfig {
    pub fn hooke() -> Self {
        Self { system: System::Hooke, ..Self::default() }
    }

    pub fn law(&self) -> Result<ForceLawSpec> {
        ForceLawSpec::new(self.system, self.coupling)
    }

    /// Fine integration steps per observation.
    pub fn substeps_per_obs(&self) -> Result<usize> {
        let ratio = self.dt_obs / self.dt_sim;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "dt_obs / dt_sim = {ratio} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_orbits == 0 {
            return bad("n_orbits must be positive".into());
        }
        if !(self.a_min > 0.0) || !(self.a_min <= self.a_max) {
            return bad(format!("invalid a-range [{}, {}]", self.a_min, self.a_max));
        }
        if !(self.e_min >= 0.0) || !(self.e_min <= self.e_max) || !(self.e_max < 1.0) {
            return bad(format!("invalid e-range [{}, {}]", self.e_min, self.e_max));
        }
        if !(self.dt_sim > 0.0) || !(self.dt_obs > 0.0) || !(self.periods > 0.0) {
            return bad("time steps and duration must be positive".into());
        }
        if !(self.noise_fraction >= 0.0) {
            return bad(format!("noise fraction must be nonnegative, got {}", self.noise_fraction));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be nonnegative and sum to 1", self.split));
        }
        self.law()?;
        self.substeps_per_obs()?;
        Ok(())
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_orbits;
        let train = ((self.split[0] * n as f64).round() as usize).min(n);
        let test = ((self.split[2] * n as f64).round() as usize).min(n - train);
        (train, n - train - test, test)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub orbit_seed: u64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: GeneratorRecord,
    pub noise_sigma: f64,
    pub split: Split,
    pub orbits: Vec<Trajectory>,
}

impl Dataset {
    fn pick(&self, idx: &[usize]) -> Vec<&Trajectory> {
        idx.iter().map(|&i| &self.orbits[i]).collect()
    }

    pub fn train(&self) -> Vec<&Trajectory> {
        self.pick(&self.split.train)
    }

    pub fn val(&self) -> Vec<&Trajectory> {
        self.pick(&self.split.val)
    }

    pub fn test(&self) -> Vec<&Trajectory> {
        self.pick(&self.split.test)
    }

    pub fn law(&self) -> Result<ForceLawSpec> {
        self.config.generator.law()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.orbits.len()];
        for &i in self.split.train.iter().chain(&self.split.val).chain(&self.split.test) {
            if i >= self.orbits.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("split index {i} invalid or repeated")));
            }
        }
        self.orbits.iter().try_for_each(Trajectory::validate)
    }
}

pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over (seed, stream).
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let law = config.law()?;
    let every = config.substeps_per_obs()?;
    let orbit_seed = config.orbit_seed.unwrap_or_else(|| mix_seed(seed, 1));
    let noise_seed = config.noise_seed.unwrap_or_else(|| mix_seed(seed, 2));

    let mut rng = ChaCha8Rng::seed_from_u64(orbit_seed);
    let (ln_lo, ln_hi) = (config.a_min.ln(), config.a_max.ln());
    let params: Vec<(f64, f64)> = (0..config.n_orbits)
        .map(|_| {
            let a = if ln_hi > ln_lo { rng.random_range(ln_lo..ln_hi).exp() } else { config.a_min };
            let e = if config.e_max > config.e_min {
                rng.random_range(config.e_min..config.e_max)
            } else {
                config.e_min
            };
            (a, e)
        })
        .collect();

    let mut orbits = params
        .iter()
        .map(|&(a, e)| {
            let (r0, v0) = law.initial_state(a, e);
            let duration = config.periods * law.period(a);
            let n_obs = (duration / config.dt_obs + 1e-9).floor() as usize;
            let mut traj = integrate_sampled(&law, r0, v0, config.dt_sim, n_obs, every)?;
            traj.a = a;
            traj.e = e;
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;

    let a_values: Vec<f64> = params.iter().map(|p| p.0).collect();
    let sigma = config.noise_fraction * median(&a_values);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive sigma"));
    for traj in &mut orbits {
        traj.noise_sigma = sigma;
        if let Some(normal) = &normal {
            for p in &mut traj.positions {
                p.x += normal.sample(&mut noise_rng);
                p.y += normal.sample(&mut noise_rng);
            }
        }
    }

    let (n_train, n_val, _) = config.split_sizes();
    let split = Split {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..config.n_orbits).collect(),
    };
    Ok(Dataset {
        config: GeneratorRecord { generator: config.clone(), seed, orbit_seed, noise_seed },
        noise_sigma: sigma,
        split,
        orbits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_kepler_closes_after_one_period() {
        let law = ForceLawSpec::kepler();
        let t = integrate_orbit(&law, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 1e-3, 6284).unwrap();
        assert_eq!(t.len(), 6285);
        let end = *t.clean_positions.last().unwrap();
        assert!((end - Vec2::new(1.0, 0.0)).norm() < 2e-3, "{end:?}");
    }

    #[test]
    fn hooke_tracks_cosine() {
        let law = ForceLawSpec::hooke();
        let n = (TAU / 1e-3).ceil() as usize;
        let t = integrate_orbit(&law, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0), 1e-3, n).unwrap();
        let err = t
            .times
            .iter()
            .zip(&t.clean_positions)
            .map(|(time, p)| (p.x - time.cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "max error {err}");
    }

    #[test]
    fn third_law_period_for_a_equals_two() {
        let law = ForceLawSpec::kepler();
        let v = (0.5f64).sqrt();
        let expected = TAU * 2f64.powf(1.5);
        assert!((expected - 17.772).abs() < 1e-3);
        let n = (1.2 * expected / 1e-3) as usize;
        let t = integrate_orbit(&law, Vec2::new(2.0, 0.0), Vec2::new(0.0, v), 1e-3, n).unwrap();
        // First upward crossing of the x-axis after the start.
        let mut period = None;
        for k in 1..t.len() {
            let (p0, p1) = (t.clean_positions[k - 1], t.clean_positions[k]);
            if p0.y < 0.0 && p1.y >= 0.0 {
                let frac = -p0.y / (p1.y - p0.y);
                period = Some(t.times[k - 1] + frac * 1e-3);
                break;
            }
        }
        let period = period.unwrap();
        assert!((period / expected - 1.0).abs() < 0.005, "{period}");
    }

    #[test]
    fn collision_reports_step() {
        let law = ForceLawSpec::hooke();
        let err = integrate_orbit(&law, Vec2::new(0.01, 0.0), Vec2::new(-1.0, 0.0), 0.01, 10).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { step: 1, .. }), "{err}");
        let law = ForceLawSpec::kepler();
        assert!(integrate_orbit(&law, Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 1e-3, 3).is_err());
    }

    #[test]
    fn elements_round_trip() {
        for law in [ForceLawSpec::kepler(), ForceLawSpec::hooke()] {
            for (a, e) in [(1.0, 0.0), (2.5, 0.2), (0.6, 0.3)] {
                let (r, v) = law.initial_state(a, e);
                let (a2, e2) = law.elements(r, v);
                assert!((a2 - a).abs() < 1e-12 * a.max(1.0), "{law:?} a {a} vs {a2}");
                assert!((e2 - e).abs() < 1e-7, "{law:?} e {e} vs {e2}");
            }
        }
    }

    #[test]
    fn kepler_energy_and_momentum_conserved_over_five_periods() {
        let law = ForceLawSpec::kepler();
        for (a, e) in [(1.0, 0.1), (2.0, 0.3), (4.0, 0.0)] {
            let (r0, v0) = law.initial_state(a, e);
            let n = (5.0 * law.period(a) / 1e-3) as usize;
            let t = integrate_orbit(&law, r0, v0, 1e-3, n).unwrap();
            let energies: Vec<f64> =
                t.clean_positions.iter().zip(&t.velocities).map(|(r, v)| law.energy(*r, *v)).collect();
            let (lo, hi) = energies.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
            assert!((hi - lo) / energies[0].abs() < 1e-5, "a={a} e={e}: drift {}", (hi - lo) / energies[0].abs());
            let l0 = r0.cross(v0);
            for (r, v) in t.clean_positions.iter().zip(&t.velocities) {
                assert!((r.cross(*v) - l0).abs() / l0.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn default_dataset_shape() {
        let ds = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.orbits.len(), 16);
        assert_eq!((ds.split.train.len(), ds.split.val.len(), ds.split.test.len()), (11, 3, 2));
        let a: Vec<f64> = ds.orbits.iter().map(|o| o.a).collect();
        assert!((ds.noise_sigma - 0.01 * median(&a)).abs() < 1e-15);
        for o in &ds.orbits {
            assert!((0.5..=5.0).contains(&o.a) && (0.0..=0.3).contains(&o.e));
            assert!((o.dt() - 0.05).abs() < 1e-12);
            let expected = (5.0 * TAU * o.a.powf(1.5) / 0.05 + 1e-9).floor() as usize + 1;
            assert_eq!(o.len(), expected);
            for (k, t) in o.times.iter().enumerate() {
                assert_eq!(*t, k as f64 * 0.05);
            }
        }
    }

    #[test]
    fn zero_noise_keeps_clean_positions() {
        let cfg = GeneratorConfig { noise_fraction: 0.0, n_orbits: 4, ..Default::default() };
        let ds = generate_dataset(&cfg, 3).unwrap();
        for o in &ds.orbits {
            assert_eq!(o.positions, o.clean_positions);
        }
    }

    #[test]
    fn noise_seed_separation() {
        let base = GeneratorConfig { n_orbits: 4, orbit_seed: Some(42), ..Default::default() };
        let a = generate_dataset(&base, 0).unwrap();
        let b = generate_dataset(&base, 1).unwrap();
        for (x, y) in a.orbits.iter().zip(&b.orbits) {
            assert_eq!(x.clean_positions, y.clean_positions);
            assert_ne!(x.positions, y.positions);
        }
        let again = generate_dataset(&base, 0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn downsampling_matches_fine_integration() {
        let cfg = GeneratorConfig { n_orbits: 1, noise_fraction: 0.0, ..Default::default() };
        let ds = generate_dataset(&cfg, 5).unwrap();
        let o = &ds.orbits[0];
        let law = cfg.law().unwrap();
        let (r0, v0) = law.initial_state(o.a, o.e);
        let fine = integrate_orbit(&law, r0, v0, 1e-3, 50 * 20).unwrap();
        for k in 0..=20 {
            assert_eq!(fine.clean_positions[50 * k], o.clean_positions[k]);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            GeneratorConfig { a_min: 6.0, ..Default::default() },
            GeneratorConfig { e_min: 0.4, ..Default::default() },
            GeneratorConfig { noise_fraction: -0.1, ..Default::default() },
            GeneratorConfig { dt_obs: 0.0505, ..Default::default() },
            GeneratorConfig { coupling: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_dataset(&cfg, 0), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
