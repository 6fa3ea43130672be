//! Triple-action objective.
//!
//! ```text
//! total = α_I (traj + λ_accel accel) + α_S sym + α_E (λ_comp comp + λ_arch arch)
//! ```
//!
//! with `α_S` defaulting to `α_E`. `traj` and `sym` come from teacher-forced
//! Verlet rollouts (each observation step restarts from the observed state
//! and takes `substeps` model steps), `accel` matches the model force to
//! wide-stencil acceleration estimates, `comp = mean |A_i θ_i|` and `arch`
//! is the gate entropy.
//!
//! The data terms depend on the parameters only through the effective
//! coefficients `c = A ∘ θ`, so [`batch_loss_grad`] differentiates them with
//! a K-lane dual and chains into `(ℓ, θ)` by hand. [`TripleAction`] is the
//! same objective written generically for the 2K-lane route in
//! [`crate::diffengine::grad`].

use serde::{Deserialize, Serialize};

use crate::diffengine::{split_params, Dual, Objective, Scalar};
use crate::error::{Error, Result};
use crate::forcebasis::{softmax, BasisLibrary, BasisModel, RadialLaw};
use crate::orbitgen::Trajectory;
use crate::stencil::{wide_accel, wide_velocity, StencilConfig};
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TeacherVelocity {
    /// Simulator velocities stored with the dataset.
    Clean,
    /// Central differences of the noisy positions at the given stride.
    Stencil { stride: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum EnergyForm {
    /// `½|v|² + V_model(r)` with the model's own potential.
    ModelPotential,
    /// `½|v|² − GM/r` with a fixed coupling.
    PaperLiteral { gm: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_accel: f64,
    pub lambda_comp: f64,
    pub lambda_arch: f64,
    /// Weight of the energy-variance term; `None` uses `α_E`.
    pub alpha_s: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_accel: 1.0, lambda_comp: 0.01, lambda_arch: 0.5, alpha_s: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub alpha_i: f64,
    pub alpha_e: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub substeps: usize,
    pub stride: usize,
    pub teacher: TeacherVelocity,
    pub energy: EnergyForm,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            substeps: 5,
            stride: 10,
            teacher: TeacherVelocity::Clean,
            energy: EnergyForm::ModelPotential,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedWeights {
    pub alpha_i: f64,
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub lambda_accel: f64,
    pub lambda_comp: f64,
    pub lambda_arch: f64,
}

impl AppliedWeights {
    pub fn new(point: SchedulePoint, w: &LossWeights) -> Self {
        Self {
            alpha_i: point.alpha_i,
            alpha_e: point.alpha_e,
            alpha_s: w.alpha_s.unwrap_or(point.alpha_e),
            lambda_accel: w.lambda_accel,
            lambda_comp: w.lambda_comp,
            lambda_arch: w.lambda_arch,
        }
    }

    fn combine<S: Scalar>(&self, traj: S, accel: S, sym: S, comp: S, arch: S) -> S {
        (traj + accel * self.lambda_accel) * self.alpha_i
            + sym * self.alpha_s
            + (comp * self.lambda_comp + arch * self.lambda_arch) * self.alpha_e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub traj: f64,
    pub accel: f64,
    pub sym: f64,
    pub comp: f64,
    pub arch: f64,
    pub total: f64,
    pub weights: AppliedWeights,
    /// Rollout steps whose radius hit the singularity clamp.
    pub clamp_events: usize,
}

impl LossBreakdown {
    pub fn from_components(traj: f64, accel: f64, sym: f64, comp: f64, arch: f64, weights: AppliedWeights) -> Self {
        let total = weights.combine(traj, accel, sym, comp, arch);
        Self { traj, accel, sym, comp, arch, total, weights, clamp_events: 0 }
    }

    /// Recompute the total from the components.
    pub fn reconstruct(&self) -> f64 {
        self.weights.combine(self.traj, self.accel, self.sym, self.comp, self.arch)
    }
}

/// Per-trajectory data reused every epoch: teacher-forcing start states,
/// next observations and wide-stencil acceleration targets.
#[derive(Clone, Debug)]
pub struct PreparedTrajectory {
    starts: Vec<(Vec2<f64>, Vec2<f64>)>,
    targets: Vec<Vec2<f64>>,
    accel_points: Vec<(Vec2<f64>, Vec2<f64>)>,
    dt_model: f64,
    substeps: usize,
}

impl PreparedTrajectory {
    pub fn new(traj: &Trajectory, cfg: &LossConfig) -> Result<Self> {
        let n = traj.len();
        if n < 2 {
            return Err(Error::TooShort { len: n, required: 2 });
        }
        if cfg.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        let dt = traj.dt();
        let stencil = StencilConfig::new(cfg.stride, dt)?;
        let accel = wide_accel(&traj.positions, stencil)?;
        let accel_points = stencil
            .midpoints(n)
            .zip(accel)
            .map(|(j, a)| (traj.positions[j], a))
            .collect();

        let (starts, targets) = match cfg.teacher {
            TeacherVelocity::Clean => (
                (0..n - 1).map(|k| (traj.positions[k], traj.velocities[k])).collect(),
                traj.positions[1..].to_vec(),
            ),
            TeacherVelocity::Stencil { stride } => {
                let vcfg = StencilConfig::new(stride, dt)?;
                let vel = wide_velocity(&traj.positions, vcfg)?;
                let first = vcfg.midpoints(n).start;
                let starts: Vec<_> = vel
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (traj.positions[first + i], *v))
                    .collect();
                let targets = (0..starts.len()).map(|i| traj.positions[first + i + 1]).collect();
                (starts, targets)
            }
        };
        Ok(Self { starts, targets, accel_points, dt_model: dt / cfg.substeps as f64, substeps: cfg.substeps })
    }

    pub fn steps(&self) -> usize {
        self.starts.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DataTerms<S> {
    pub traj: S,
    pub accel: S,
    pub sym: S,
    pub clamps: usize,
}

#[inline]
fn energy<S: Scalar>(law: &RadialLaw<'_, S>, form: EnergyForm, r: Vec2<S>, v: Vec2<S>) -> S {
    let radius = r.norm();
    let pot = match form {
        EnergyForm::ModelPotential => law.potential(radius),
        EnergyForm::PaperLiteral { gm } => -(radius.recip() * gm),
    };
    v.norm_sq() * 0.5 + pot
}

/// Shifted running moments for a population variance.
struct Moments<S> {
    shift: f64,
    sum: S,
    sum_sq: S,
    n: usize,
}

impl<S: Scalar> Moments<S> {
    fn new() -> Self {
        Self { shift: f64::NAN, sum: S::zero(), sum_sq: S::zero(), n: 0 }
    }

    #[inline]
    fn push(&mut self, x: S) {
        if self.n == 0 {
            self.shift = x.value();
        }
        let d = x - self.shift;
        self.sum += d;
        self.sum_sq += d * d;
        self.n += 1;
    }

    fn variance(&self) -> S {
        if self.n == 0 {
            return S::zero();
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        self.sum_sq / n - mean * mean
    }
}

/// Teacher-forced rollout and acceleration matching on one trajectory.
pub fn data_terms<S: Scalar>(law: &RadialLaw<'_, S>, tr: &PreparedTrajectory, form: EnergyForm) -> DataTerms<S> {
    let h = tr.dt_model;
    let half = 0.5 * h;
    let mut clamps = 0;
    let mut traj = S::zero();
    let mut moments = Moments::new();
    for (&(r0, v0), &target) in tr.starts.iter().zip(&tr.targets) {
        let mut r: Vec2<S> = r0.lift();
        let mut v: Vec2<S> = v0.lift();
        let (mut acc, hit) = law.force_clamped(r);
        clamps += hit as usize;
        moments.push(energy(law, form, r, v));
        for _ in 0..tr.substeps {
            v = v + acc.scale(S::cst(half));
            r = r + v * h;
            let (a, hit) = law.force_clamped(r);
            clamps += hit as usize;
            acc = a;
            v = v + acc * half;
            moments.push(energy(law, form, r, v));
        }
        traj += (r - target.lift()).norm_sq();
    }
    let steps = tr.starts.len().max(1) as f64;

    let mut accel = S::zero();
    for &(pos, ahat) in &tr.accel_points {
        let (f, hit) = law.force_clamped(pos.lift());
        clamps += hit as usize;
        accel += (f - ahat.lift()).norm_sq();
    }
    let n_acc = tr.accel_points.len().max(1) as f64;

    DataTerms { traj: traj / steps, accel: accel / n_acc, sym: moments.variance(), clamps }
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

pub fn loss_traj(model: &BasisModel, traj: &Trajectory, cfg: &LossConfig) -> Result<f64> {
    let prepared = PreparedTrajectory::new(traj, cfg)?;
    let law = model.law()?;
    let value = data_terms(&law, &prepared, cfg.energy).traj;
    finite(value, "trajectory loss")
}

pub fn loss_accel(model: &BasisModel, traj: &Trajectory, cfg: &LossConfig) -> Result<f64> {
    let prepared = PreparedTrajectory::new(traj, cfg)?;
    let law = model.law()?;
    finite(data_terms(&law, &prepared, cfg.energy).accel, "acceleration loss")
}

/// Variance of the energy over every state of the teacher-forced rollout.
pub fn loss_sym(model: &BasisModel, traj: &Trajectory, cfg: &LossConfig) -> Result<f64> {
    let prepared = PreparedTrajectory::new(traj, cfg)?;
    let law = model.law()?;
    finite(data_terms(&law, &prepared, cfg.energy).sym, "energy variance")
}

/// `mean_i |A_i θ_i|`
pub fn loss_comp(model: &BasisModel) -> Result<f64> {
    let c = model.effective_coefficients()?;
    Ok(c.iter().map(|x| x.abs()).sum::<f64>() / c.len() as f64)
}

/// Gate entropy `−Σ A_i ln A_i`.
pub fn loss_arch(model: &BasisModel) -> Result<f64> {
    Ok(entropy(&model.gates()?))
}

fn entropy<S: Scalar>(p: &[S]) -> S {
    p.iter()
        .filter(|a| a.value() > 0.0)
        .fold(S::zero(), |acc, &a| acc - a * a.ln())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("{what} is {v}")))
    }
}

fn check_batch(batch: &[&PreparedTrajectory]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    Ok(())
}

/// Loss breakdown averaged over the batch.
pub fn total_loss(
    model: &BasisModel,
    batch: &[&PreparedTrajectory],
    cfg: &LossConfig,
    point: SchedulePoint,
) -> Result<LossBreakdown> {
    check_batch(batch)?;
    let model = BasisModel { tau: point.tau, ..model.clone() };
    let law = model.law()?;
    let mut sums = [0.0; 3];
    let mut clamps = 0;
    for tr in batch {
        let d = data_terms(&law, tr, cfg.energy);
        sums[0] += d.traj;
        sums[1] += d.accel;
        sums[2] += d.sym;
        clamps += d.clamps;
    }
    let n = batch.len() as f64;
    let weights = AppliedWeights::new(point, &cfg.weights);
    let mut out = LossBreakdown::from_components(
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        loss_comp(&model)?,
        loss_arch(&model)?,
        weights,
    );
    out.clamp_events = clamps;
    finite(out.total, "total loss")?;
    Ok(out)
}

fn coefficient_pass<const K: usize>(
    library: &BasisLibrary,
    coeffs: &[f64],
    batch: &[&PreparedTrajectory],
    cfg: &LossConfig,
    w: &AppliedWeights,
) -> ([f64; 4], Vec<f64>, usize) {
    let c: Vec<Dual<K>> = coeffs.iter().enumerate().map(|(i, &v)| Dual::variable(v, i)).collect();
    let comp = c.iter().fold(Dual::<K>::zero(), |acc, &x| acc + x.abs()) / coeffs.len() as f64;
    let law = RadialLaw::new(library, c);
    let mut traj = Dual::<K>::zero();
    let mut accel = Dual::<K>::zero();
    let mut sym = Dual::<K>::zero();
    let mut clamps = 0;
    for tr in batch {
        let d = data_terms(&law, tr, cfg.energy);
        traj += d.traj;
        accel += d.accel;
        sym += d.sym;
        clamps += d.clamps;
    }
    let n = batch.len() as f64;
    let (traj, accel, sym) = (traj / n, accel / n, sym / n);
    let partial = (traj + accel * w.lambda_accel) * w.alpha_i + sym * w.alpha_s + comp * (w.lambda_comp * w.alpha_e);
    (
        [traj.re, accel.re, sym.re, comp.re],
        partial.eps[..coeffs.len()].to_vec(),
        clamps,
    )
}

macro_rules! dispatch_k {
    ($k:expr; $call:ident $args:tt; $($lanes:literal),+) => {
        match $k {
            $($lanes => $call::<$lanes> $args,)+
            other => return Err(Error::Config(format!("unsupported library size {other}"))),
        }
    };
}

/// Loss breakdown and exact gradient over `[ℓ, θ]` in one forward sweep.
pub fn batch_loss_grad(
    model: &BasisModel,
    batch: &[&PreparedTrajectory],
    cfg: &LossConfig,
    point: SchedulePoint,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_batch(batch)?;
    let k = model.k();
    let tau = point.tau;
    let model = BasisModel { tau, ..model.clone() };
    let gates = model.gates()?;
    let coeffs: Vec<f64> = gates.iter().zip(&model.thetas).map(|(a, t)| a * t).collect();
    let w = AppliedWeights::new(point, &cfg.weights);
    let (vals, g_c, clamps) =
        dispatch_k!(k; coefficient_pass(&model.library, &coeffs, batch, cfg, &w); 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12);

    // dL/dA_i from the data terms (through c_i = A_i θ_i) and the entropy.
    let arch_weight = w.alpha_e * w.lambda_arch;
    let g_a: Vec<f64> = (0..k)
        .map(|i| {
            let ent = if gates[i] > 0.0 { -(gates[i].ln() + 1.0) * arch_weight } else { 0.0 };
            g_c[i] * model.thetas[i] + ent
        })
        .collect();
    let weighted: f64 = gates.iter().zip(&g_a).map(|(a, g)| a * g).sum();
    let mut grad = Vec::with_capacity(2 * k);
    grad.extend((0..k).map(|j| gates[j] * (g_a[j] - weighted) / tau));
    grad.extend((0..k).map(|j| g_c[j] * gates[j]));

    let mut out = LossBreakdown::from_components(vals[0], vals[1], vals[2], vals[3], entropy(&gates), w);
    out.clamp_events = clamps;
    finite(out.total, "total loss")?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Evaluation(format!("gradient entry {i} is not finite")));
    }
    Ok((out, grad))
}

/// The full objective as a function of `[ℓ, θ]`, for the generic dual route
/// and finite-difference checks.
pub struct TripleAction<'a> {
    pub library: &'a BasisLibrary,
    pub batch: Vec<&'a PreparedTrajectory>,
    pub cfg: LossConfig,
    pub point: SchedulePoint,
}

impl Objective for TripleAction<'_> {
    fn eval<S: Scalar>(&self, params: &[S]) -> S {
        let (logits, thetas) = split_params(params);
        let gates = softmax(logits, self.point.tau);
        let coeffs: Vec<S> = gates.iter().zip(thetas).map(|(&a, &t)| a * t).collect();
        let comp = coeffs.iter().fold(S::zero(), |acc, &c| acc + c.abs()) / coeffs.len() as f64;
        let arch = entropy(&gates);
        let law = RadialLaw::new(self.library, coeffs);
        let mut traj = S::zero();
        let mut accel = S::zero();
        let mut sym = S::zero();
        for tr in &self.batch {
            let d = data_terms(&law, tr, self.cfg.energy);
            traj += d.traj;
            accel += d.accel;
            sym += d.sym;
        }
        let n = self.batch.len() as f64;
        let w = AppliedWeights::new(self.point, &self.cfg.weights);
        w.combine(traj / n, accel / n, sym / n, comp, arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::{fd_gradient, grad, max_relative_error};
    use crate::orbitgen::{generate_dataset, integrate_orbit, ForceLawSpec, GeneratorConfig};

    fn circular(radius: f64, n_obs: usize) -> Trajectory {
        let law = ForceLawSpec::kepler();
        let v = (1.0 / radius).sqrt();
        let fine = integrate_orbit(&law, Vec2::new(radius, 0.0), Vec2::new(0.0, v), 1e-3, 50 * n_obs).unwrap();
        let pick = |v: &Vec<Vec2<f64>>| v.iter().step_by(50).copied().collect::<Vec<_>>();
        Trajectory {
            a: radius,
            e: 0.0,
            times: (0..=n_obs).map(|k| k as f64 * 0.05).collect(),
            clean_positions: pick(&fine.clean_positions),
            positions: pick(&fine.clean_positions),
            velocities: pick(&fine.velocities),
            noise_sigma: 0.0,
        }
    }

    fn kepler_model() -> BasisModel {
        BasisModel::one_hot(BasisLibrary::default(), 0, 1.0)
    }

    fn random_model(seed: u64) -> BasisModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
        let thetas = (0..5).map(|_| rng.random_range(-0.5..0.8)).collect();
        BasisModel::new(BasisLibrary::default(), logits, thetas, 0.6).unwrap()
    }

    #[test]
    fn exact_law_on_clean_data_has_tiny_trajectory_loss() {
        let t = circular(1.0, 200);
        let loss = loss_traj(&kepler_model(), &t, &LossConfig::default()).unwrap();
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn free_drift_on_circular_orbit() {
        let t = circular(1.0, 60);
        let zero = BasisModel::new(BasisLibrary::default(), vec![0.0; 5], vec![0.0; 5], 1.0).unwrap();
        let loss = loss_traj(&zero, &t, &LossConfig::default()).unwrap();
        // Free drift from (1, 0) with velocity (0, 1) against the arc:
        // |(cos h, sin h) − (1, h)|², h = 0.05.
        let h: f64 = 0.05;
        let oracle = (1.0 - h.cos()).powi(2) + (h - h.sin()).powi(2);
        assert!((oracle - 1.5625e-6).abs() < 2e-8);
        assert!((loss / oracle - 1.0).abs() < 1e-3, "{loss} vs {oracle}");
    }

    #[test]
    fn batch_of_duplicates_equals_single() {
        let t = circular(1.3, 120);
        let cfg = LossConfig::default();
        let p = PreparedTrajectory::new(&t, &cfg).unwrap();
        let point = SchedulePoint { alpha_i: 1.0, alpha_e: 0.3, tau: 0.7 };
        let m = random_model(1);
        let one = total_loss(&m, &[&p], &cfg, point).unwrap();
        let two = total_loss(&m, &[&p, &p], &cfg, point).unwrap();
        assert!((one.total - two.total).abs() < 1e-14 * one.total.abs().max(1.0));
    }

    #[test]
    fn acceleration_loss_cases() {
        let t = circular(2.0, 400);
        let cfg = LossConfig::default();
        let exact = loss_accel(&kepler_model(), &t, &cfg).unwrap();
        assert!(exact < 2.5e-5, "{exact}");
        let zero = BasisModel::new(BasisLibrary::default(), vec![0.0; 5], vec![0.0; 5], 1.0).unwrap();
        let l = loss_accel(&zero, &t, &cfg).unwrap();
        assert!((l - 0.0625).abs() < 0.0625 * 0.01, "{l}");
        let short = circular(2.0, 15);
        assert!(matches!(loss_accel(&zero, &short, &cfg), Err(Error::TooShort { .. })));
    }

    #[test]
    fn noise_floor_of_acceleration_loss() {
        let ds = generate_dataset(&GeneratorConfig::default(), 0).unwrap();
        let cfg = LossConfig::default();
        let m = kepler_model();
        let predicted = 2.0 * crate::stencil::predict_noise(ds.noise_sigma, 0.05, 10, 0.25).unwrap().sigma_a_analytic.powi(2);
        let mut total = 0.0;
        let mut n = 0.0;
        for o in &ds.orbits {
            let p = PreparedTrajectory::new(o, &cfg).unwrap();
            let w = p.accel_points.len() as f64;
            total += loss_accel(&m, o, &cfg).unwrap() * w;
            n += w;
        }
        let mean = total / n;
        assert!((mean / predicted - 1.0).abs() < 0.2, "{mean} vs {predicted}");
    }

    #[test]
    fn energy_variance_cases() {
        assert_eq!(population_variance(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(population_variance(&[0.0, 1.0]), 0.25);
        let t = circular(1.0, 200);
        let s = loss_sym(&kepler_model(), &t, &LossConfig::default()).unwrap();
        assert!(s < 1e-12, "{s}");
        let lit = LossConfig { energy: EnergyForm::PaperLiteral { gm: 1.0 }, ..Default::default() };
        assert!(loss_sym(&kepler_model(), &t, &lit).unwrap() < 1e-12);
    }

    #[test]
    fn sparsity_terms() {
        let uniform = BasisModel::new(BasisLibrary::default(), vec![0.0; 5], vec![1.0; 5], 1.0).unwrap();
        assert!((loss_comp(&uniform).unwrap() - 0.2).abs() < 1e-15);
        assert!((loss_arch(&uniform).unwrap() - 5f64.ln()).abs() < 1e-14);

        let hot = BasisModel::one_hot(BasisLibrary::default(), 0, 0.936);
        assert!((loss_comp(&hot).unwrap() - 0.1872).abs() < 1e-12);
        assert!(loss_arch(&hot).unwrap() < 1e-12);

        let zero = BasisModel::new(BasisLibrary::default(), vec![0.3; 5], vec![0.0; 5], 1.0).unwrap();
        assert_eq!(loss_comp(&zero).unwrap(), 0.0);

        let sharp = BasisModel::new(BasisLibrary::default(), vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![1.0; 5], 0.07).unwrap();
        assert!(crate::forcebasis::gate_stats(&sharp, false).unwrap().selectivity > 1e6);
        assert!(loss_arch(&sharp).unwrap() < 1e-4);
    }

    #[test]
    fn weighting_arithmetic() {
        let w = AppliedWeights::new(SchedulePoint { alpha_i: 1.0, alpha_e: 1.0, tau: 0.05 }, &LossWeights::default());
        let b = LossBreakdown::from_components(1.0, 1.0, 1.0, 1.0, 1.0, w);
        assert!((b.total - 3.51).abs() < 1e-12);
        let zero = LossBreakdown::from_components(0.0, 0.0, 0.0, 0.0, 0.0, w);
        assert_eq!(zero.total, 0.0);
        let ablate = AppliedWeights::new(SchedulePoint { alpha_i: 1.0, alpha_e: 0.0, tau: 1.0 }, &LossWeights::default());
        let b = LossBreakdown::from_components(0.3, 0.7, 5.0, 2.0, 1.5, ablate);
        assert_eq!(b.total, 0.3 + 0.7);
    }

    #[test]
    fn breakdown_reconstructs() {
        let ds = generate_dataset(&GeneratorConfig { n_orbits: 3, a_max: 1.5, ..Default::default() }, 2).unwrap();
        let cfg = LossConfig::default();
        let prepared: Vec<_> = ds.orbits.iter().map(|o| PreparedTrajectory::new(o, &cfg).unwrap()).collect();
        let batch: Vec<_> = prepared.iter().collect();
        for (seed, alpha_e) in [(1, 0.01), (2, 0.6), (3, 1.0)] {
            let point = SchedulePoint { alpha_i: 1.0, alpha_e, tau: 0.4 };
            let (b, _) = batch_loss_grad(&random_model(seed), &batch, &cfg, point).unwrap();
            assert!((b.total - b.reconstruct()).abs() <= 1e-12 * b.total.abs().max(1.0));
            let plain = total_loss(&random_model(seed), &batch, &cfg, point).unwrap();
            assert!((plain.total - b.total).abs() <= 1e-12 * b.total.abs().max(1.0));
            assert!(b.arch >= 0.0 && b.arch <= 5f64.ln() + 1e-12);
        }
    }

    #[test]
    fn losses_are_rotation_invariant() {
        let ds = generate_dataset(&GeneratorConfig { n_orbits: 2, a_max: 1.2, ..Default::default() }, 4).unwrap();
        let cfg = LossConfig::default();
        let m = random_model(9);
        for o in &ds.orbits {
            let rot = o.rotated(1.234);
            let (a, b) = (loss_traj(&m, o, &cfg).unwrap(), loss_traj(&m, &rot, &cfg).unwrap());
            assert!((a - b).abs() < 1e-10 * a.max(1.0));
            let (a, b) = (loss_accel(&m, o, &cfg).unwrap(), loss_accel(&m, &rot, &cfg).unwrap());
            assert!((a - b).abs() < 1e-10 * a.max(1.0));
        }
    }

    #[test]
    fn fast_gradient_matches_generic_dual_and_finite_differences() {
        let ds = generate_dataset(&GeneratorConfig { n_orbits: 2, a_max: 1.5, ..Default::default() }, 7).unwrap();
        let cfg = LossConfig::default();
        let prepared: Vec<_> = ds.orbits.iter().map(|o| PreparedTrajectory::new(o, &cfg).unwrap()).collect();
        let batch: Vec<_> = prepared.iter().collect();
        let point = SchedulePoint { alpha_i: 1.0, alpha_e: 0.5, tau: 0.5 };
        let m = random_model(5);
        let (_, fast) = batch_loss_grad(&m, &batch, &cfg, point).unwrap();
        let obj = TripleAction { library: &m.library, batch: batch.clone(), cfg, point };
        let generic = grad(&obj, &m.params()).unwrap();
        assert!(max_relative_error(&fast, &generic.gradient, 1e-8) < 1e-9);
        let fd = fd_gradient(|p| obj.eval(p), &m.params(), 1e-5);
        assert!(max_relative_error(&fast, &fd, 1e-8) < 1e-4);
    }

    #[test]
    fn stencil_teacher_mode_runs() {
        let t = circular(1.0, 200);
        let cfg = LossConfig { teacher: TeacherVelocity::Stencil { stride: 1 }, ..Default::default() };
        let loss = loss_traj(&kepler_model(), &t, &cfg).unwrap();
        assert!(loss < 1e-6, "{loss}");
    }
}
