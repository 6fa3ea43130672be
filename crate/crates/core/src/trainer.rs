//! Adam training under the two-phase schedule, crystallization telemetry
//! and schedule-node detection.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::actionloss::{batch_loss_grad, LossBreakdown, LossConfig, PreparedTrajectory, SchedulePoint};
use crate::error::{Error, Result};
use crate::forcebasis::{gate_stats, BasisLibrary, BasisModel};
use crate::metrics::{candidate_scan, select_by_conservation, validate, CandidateScore, ValidationConfig, Verdict};
use crate::orbitgen::{mix_seed, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub alpha_i: f64,
    pub alpha_e_start: f64,
    pub alpha_e_end: f64,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 50,
            total_epochs: 200,
            alpha_i: 1.0,
            alpha_e_start: 0.01,
            alpha_e_end: 1.0,
            tau_start: 1.0,
            tau_end: 0.05,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "need 0 < warmup ({}) < total ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) || !self.tau_start.is_finite() || !self.tau_end.is_finite() {
            return Err(Error::Config("temperatures must be positive and finite".into()));
        }
        if [self.alpha_i, self.alpha_e_start, self.alpha_e_end].iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Weights and temperature in effect during `epoch` (1-based).
pub fn schedule_at(schedule: &Schedule, epoch: usize) -> Result<SchedulePoint> {
    if epoch == 0 || epoch > schedule.total_epochs {
        return Err(Error::Domain(format!("epoch {epoch} outside 1..={}", schedule.total_epochs)));
    }
    let s = schedule;
    if epoch <= s.warmup_epochs {
        return Ok(SchedulePoint { alpha_i: s.alpha_i, alpha_e: s.alpha_e_start, tau: s.tau_start });
    }
    let frac = (epoch - s.warmup_epochs) as f64 / (s.total_epochs - s.warmup_epochs) as f64;
    Ok(SchedulePoint {
        alpha_i: s.alpha_i,
        alpha_e: s.alpha_e_start + (s.alpha_e_end - s.alpha_e_start) * frac,
        tau: s.tau_start * (s.tau_end / s.tau_start).powf(frac),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Domain("adam dimensions do not match".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Evaluation(format!("gradient entry {i} is not finite")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub library: BasisLibrary,
    pub batch_size: usize,
    /// Reshuffle the training orbits every epoch instead of the fixed order.
    pub shuffle: bool,
    pub logit_bias: Option<Vec<f64>>,
    pub logit_init_range: f64,
    pub theta_init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            library: BasisLibrary::default(),
            batch_size: 4,
            shuffle: false,
            logit_bias: None,
            logit_init_range: 0.1,
            theta_init_std: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.library.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(b) = &self.logit_bias {
            if b.len() != self.library.len() {
                return Err(Error::Config(format!(
                    "logit_bias has {} entries for {} basis terms",
                    b.len(),
                    self.library.len()
                )));
            }
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if !(self.logit_init_range >= 0.0) || !(self.theta_init_std >= 0.0) {
            return Err(Error::Config("initialization scales must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha_i: f64,
    pub alpha_e: f64,
    pub tau: f64,
    /// Batch-averaged components, each evaluated before its Adam step.
    pub loss: LossBreakdown,
    pub logits: Vec<f64>,
    pub thetas: Vec<f64>,
    pub gates: Vec<f64>,
    pub selectivity: f64,
    pub c_gate: f64,
    pub clamp_events: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Milestones {
    pub onset: Option<usize>,
    pub sparse: Option<usize>,
    pub frozen: Option<usize>,
    pub span: Option<usize>,
    pub growth_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioNode {
    pub epoch: usize,
    pub p: u32,
    pub q: u32,
    /// `|α_E q / (τ p) − 1|`
    pub deviation: f64,
}

pub const NODE_RATIOS: [(u32, u32); 4] = [(3, 1), (2, 1), (3, 2), (1, 1)];
pub const NODE_TOLERANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub milestones: Milestones,
    pub nodes: Vec<RatioNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: BasisModel,
    pub log: TrainLog,
}

/// First crossings of R ≥ 10, 100, 1000 and the geometric growth rate of R
/// between onset and frozen.
pub fn milestones(series: &[(usize, f64)]) -> Milestones {
    let first = |threshold: f64| series.iter().find(|(_, r)| *r >= threshold).map(|(e, _)| *e);
    let onset = first(10.0);
    let sparse = first(100.0);
    let frozen = first(1000.0);
    let span = match (onset, frozen) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let growth_rate = match (onset, frozen) {
        (Some(a), Some(b)) => {
            let pts: Vec<(f64, f64)> = series
                .iter()
                .filter(|(e, r)| (a..=b).contains(e) && *r > 0.0 && r.is_finite())
                .map(|(e, r)| (*e as f64, r.ln()))
                .collect();
            (pts.len() >= 3).then(|| ols(&pts).0.exp())
        }
        _ => None,
    };
    Milestones { onset, sparse, frozen, span, growth_rate }
}

/// Slope and intercept of an ordinary least-squares line.
pub(crate) fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn node_deviation(point: SchedulePoint, p: u32, q: u32) -> f64 {
    (point.alpha_e * q as f64 / (point.tau * p as f64) - 1.0).abs()
}

/// Epochs where `α_E/τ` sits within 10% of one of the ratios 3:1, 2:1, 3:2, 1:1.
pub fn ratio_nodes(schedule: &Schedule) -> Result<Vec<RatioNode>> {
    schedule.validate()?;
    let mut out = Vec::new();
    for epoch in 1..=schedule.total_epochs {
        let point = schedule_at(schedule, epoch)?;
        for (p, q) in NODE_RATIOS {
            let deviation = node_deviation(point, p, q);
            if deviation < NODE_TOLERANCE {
                out.push(RatioNode { epoch, p, q, deviation });
            }
        }
    }
    Ok(out)
}

/// Initial parameters: logits `U(−r, r)` plus the optional bias, `θ ~ N(0, σ²)`.
pub fn init_model(cfg: &TrainConfig, seed: u64) -> Result<BasisModel> {
    let k = cfg.library.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7261_696e));
    let r = cfg.logit_init_range;
    let mut logits: Vec<f64> = (0..k).map(|_| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 }).collect();
    if let Some(b) = &cfg.logit_bias {
        logits.iter_mut().zip(b).for_each(|(l, b)| *l += b);
    }
    let normal = Normal::new(0.0, cfg.theta_init_std).map_err(|e| Error::Config(e.to_string()))?;
    let thetas = (0..k).map(|_| normal.sample(&mut rng)).collect();
    BasisModel::new(cfg.library.clone(), logits, thetas, cfg.schedule.tau_start)
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainRun> {
    train_with_progress(dataset, cfg, seed, |_| {})
}

pub fn train_with_progress(
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    cfg.validate()?;
    let train_orbits = dataset.train();
    if train_orbits.is_empty() {
        return Err(Error::Domain("dataset has no training orbits".into()));
    }
    let prepared = train_orbits
        .iter()
        .map(|o| PreparedTrajectory::new(o, &cfg.loss))
        .collect::<Result<Vec<_>>>()?;

    let mut model = init_model(cfg, seed)?;
    let mut adam = AdamState::new(2 * model.k());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7368_7566));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.schedule.total_epochs);

    for epoch in 1..=cfg.schedule.total_epochs {
        let point = schedule_at(&cfg.schedule, epoch)?;
        model.tau = point.tau;
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut sums = [0.0; 6];
        let mut clamps = 0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedTrajectory> = chunk.iter().map(|&i| &prepared[i]).collect();
            let unstable = |reason: String| Error::Instability {
                epoch,
                batch: b,
                reason,
                last_good: Box::new(model.clone()),
            };
            let (loss, g) = batch_loss_grad(&model, &batch, &cfg.loss, point).map_err(|e| unstable(e.to_string()))?;
            let mut params = model.params();
            adam_step(&mut params, &g, &mut adam, &cfg.adam).map_err(|e| unstable(e.to_string()))?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(unstable("parameters became non-finite".into()));
            }
            model.set_params(&params);
            for (s, v) in sums.iter_mut().zip([loss.traj, loss.accel, loss.sym, loss.comp, loss.arch, loss.total]) {
                *s += v;
            }
            clamps += loss.clamp_events;
            n_batches += 1;
        }
        let n = n_batches as f64;
        let mut loss = LossBreakdown::from_components(
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n,
            sums[4] / n,
            crate::actionloss::AppliedWeights::new(point, &cfg.loss.weights),
        );
        loss.total = sums[5] / n;
        loss.clamp_events = clamps;
        let stats = gate_stats(&model, false)?;
        let weighted = gate_stats(&model, true)?;
        let record = EpochRecord {
            epoch,
            alpha_i: point.alpha_i,
            alpha_e: point.alpha_e,
            tau: point.tau,
            loss,
            logits: model.logits.clone(),
            thetas: model.thetas.clone(),
            gates: stats.gates,
            selectivity: stats.selectivity,
            c_gate: weighted.concentration,
            clamp_events: clamps,
        };
        progress(&record);
        epochs.push(record);
    }

    let series: Vec<(usize, f64)> = epochs.iter().map(|r| (r.epoch, r.selectivity)).collect();
    let log = TrainLog { seed, milestones: milestones(&series), nodes: ratio_nodes(&cfg.schedule)?, epochs };
    Ok(TrainRun { model, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub selected_basis_index: usize,
    pub basis: String,
    pub final_selectivity: f64,
    pub c_gate: f64,
    pub calibrated_coefficient: Option<f64>,
    pub kepler_exponent: Option<f64>,
    pub sigma_h: Option<f64>,
    pub milestones: Milestones,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seeds: Vec<SeedOutcome>,
    /// Seed groups ranked by mean energy spread.
    pub verdict: Option<Verdict>,
    /// Every library term calibrated as a one-term law.
    pub candidates: Vec<CandidateScore>,
    pub library_verdict: Option<Verdict>,
}

pub struct SweepOutput {
    pub result: SweepResult,
    pub runs: Vec<(u64, Result<TrainRun>)>,
}

fn outcome(seed: u64, run: &Result<TrainRun>, dataset: &Dataset, cfg: &ValidationConfig) -> SeedOutcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            return SeedOutcome {
                seed,
                selected_basis_index: 0,
                basis: String::new(),
                final_selectivity: f64::NAN,
                c_gate: f64::NAN,
                calibrated_coefficient: None,
                kepler_exponent: None,
                sigma_h: None,
                milestones: Milestones::default(),
                error: Some(e.to_string()),
            }
        }
    };
    let last = run.log.epochs.last();
    let idx = run.model.dominant_index();
    let mut out = SeedOutcome {
        seed,
        selected_basis_index: idx,
        basis: run.model.library.terms[idx].label(),
        final_selectivity: last.map_or(f64::NAN, |r| r.selectivity),
        c_gate: last.map_or(f64::NAN, |r| r.c_gate),
        calibrated_coefficient: None,
        kepler_exponent: None,
        sigma_h: None,
        milestones: run.log.milestones,
        error: None,
    };
    match validate(&run.model, &dataset.train(), &dataset.test(), cfg) {
        Ok(v) => {
            out.calibrated_coefficient = Some(v.calibration.theta_opt);
            out.kepler_exponent = v.kepler.map(|k| k.p);
            out.sigma_h = Some(v.conservation.sigma_h);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Train, calibrate and validate every seed on a shared dataset, using up
/// to `jobs` worker threads. Per-seed failures are recorded, not fatal.
pub fn sweep(dataset: &Dataset, cfg: &TrainConfig, validation: &ValidationConfig, seeds: &[u64], jobs: usize) -> Result<SweepOutput> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TrainRun>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let workers = jobs.clamp(1, seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let run = train(dataset, cfg, seeds[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(run);
            });
        }
    });
    let runs: Vec<(u64, Result<TrainRun>)> = seeds
        .iter()
        .zip(slots)
        .map(|(&s, slot)| {
            let run = slot.into_inner().unwrap_or_else(|e| e.into_inner());
            (s, run.unwrap_or_else(|| Err(Error::Evaluation("worker did not finish".into()))))
        })
        .collect();

    let outcomes: Vec<SeedOutcome> = runs.iter().map(|(s, r)| outcome(*s, r, dataset, validation)).collect();
    let labels = cfg.library.labels();
    let entries: Vec<(usize, f64)> =
        outcomes.iter().filter_map(|o| o.sigma_h.map(|s| (o.selected_basis_index, s))).collect();
    let verdict = select_by_conservation(&entries, &labels).ok();
    let template = init_model(cfg, 0)?;
    let candidates = candidate_scan(&template, &dataset.train(), &dataset.test(), validation)?;
    let scan: Vec<(usize, f64)> = candidates.iter().map(|c| (c.basis_index, c.sigma_h)).collect();
    let library_verdict = select_by_conservation(&scan, &labels).ok();
    Ok(SweepOutput { result: SweepResult { seeds: outcomes, verdict, candidates, library_verdict }, runs })
}
