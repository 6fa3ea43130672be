//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use minaction::actionloss::{batch_loss_grad, EnergyForm, PreparedTrajectory, SchedulePoint, TeacherVelocity, TripleAction};
use minaction::diffengine::{fd_gradient, grad, max_relative_error, Objective};
use minaction::forcebasis::{BasisLibrary, BasisModel};
use minaction::metrics::{self, select_by_conservation, ValidationReport, Verdict};
use minaction::orbitgen::{generate_dataset, mix_seed, Dataset, GeneratorConfig, System};
use minaction::presets::Preset;
use minaction::sindy::{sindy_fit, EnsembleConfig};
use minaction::stencil::{clean_rms, verify_noise, StencilConfig};
use minaction::trainer::{self, Milestones, RatioNode, SweepResult, TrainRun};
use minaction::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, RunConfig};
use crate::io::{csv_bytes, num, read_json, write_atomic, write_json};
use crate::report::trainlog_csv;
use crate::{Common, EnergyArg, LossFlags, SystemArg, TeacherArg};

#[derive(Serialize, Deserialize)]
pub struct DataFile {
    pub run_config: RunConfig,
    pub seed: u64,
    #[serde(flatten)]
    pub dataset: Dataset,
}

#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub selected_basis_index: usize,
    pub basis: String,
    pub model: BasisModel,
}

#[derive(Serialize, Deserialize)]
pub struct MilestonesFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub milestones: Milestones,
    pub nodes: Vec<RatioNode>,
    pub final_selectivity: f64,
    pub final_c_gate: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SweepFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub result: SweepResult,
}

#[derive(Serialize, Deserialize)]
pub struct ValidateFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub basis: String,
    pub theta_opt: f64,
    pub p: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "sigma_H")]
    pub sigma_h: f64,
    pub report: ValidationReport,
}

#[derive(Serialize, Deserialize)]
pub struct SelectFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub verdict: Verdict,
    pub library_verdict: Option<Verdict>,
}

#[derive(Serialize, Deserialize)]
pub struct GradRow {
    pub seed: u64,
    pub point: usize,
    pub alpha_e: f64,
    pub tau: f64,
    pub max_rel_error_fd: f64,
    pub max_rel_error_generic: f64,
}

#[derive(Serialize, Deserialize)]
pub struct GradcheckFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<GradRow>,
    pub max_rel_error: f64,
    pub passed: bool,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SindyRow {
    pub noise_seed: u64,
    pub identified_basis: Option<usize>,
    pub basis: Option<String>,
    pub correct: bool,
    pub gm_estimate: Option<f64>,
    pub coefficients: Vec<f64>,
    pub selected: Vec<usize>,
    /// Largest over second-largest coefficient magnitude.
    pub dominance: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct SindySummary {
    pub identified: usize,
    pub total: usize,
    pub rate: f64,
    pub gm_min: Option<f64>,
    pub gm_max: Option<f64>,
    pub mean_wall_time_s: f64,
    pub max_wall_time_s: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SindyFile {
    pub run_config: RunConfig,
    pub seed: u64,
    pub stride: usize,
    pub threshold: f64,
    pub ensemble: usize,
    pub target_basis: String,
    pub rows: Vec<SindyRow>,
    pub summary: SindySummary,
}

fn config_for(common: &Common, fallback: Option<Preset>) -> Result<RunConfig> {
    let preset = common.preset.or(if common.config.is_none() { fallback } else { None });
    resolve(common.config.as_deref(), preset, common.seed)
}

/// Run configuration plus the dataset, read from `data` or generated.
fn setup(common: &Common, data: Option<&Path>) -> Result<(RunConfig, Dataset)> {
    match data {
        Some(p) => {
            let file: DataFile = read_json(p)?;
            file.dataset.validate()?;
            let mut cfg = config_for(common, Some(file.run_config.preset))?;
            cfg.generator = file.dataset.config.generator.clone();
            Ok((cfg, file.dataset))
        }
        None => {
            let cfg = config_for(common, None)?;
            let ds = generate_dataset(&cfg.generator, cfg.seed)?;
            Ok((cfg, ds))
        }
    }
}

fn apply_loss_flags(cfg: &mut RunConfig, flags: &LossFlags) -> Result<()> {
    match flags.energy_form {
        Some(EnergyArg::Model) => cfg.train.loss.energy = EnergyForm::ModelPotential,
        Some(EnergyArg::Paper) => cfg.train.loss.energy = EnergyForm::PaperLiteral { gm: cfg.generator.coupling },
        None => {}
    }
    match flags.teacher {
        Some(TeacherArg::Clean) => cfg.train.loss.teacher = TeacherVelocity::Clean,
        Some(TeacherArg::Stencil) => cfg.train.loss.teacher = TeacherVelocity::Stencil { stride: cfg.train.loss.stride },
        None => {}
    }
    if let Some(n) = flags.epochs {
        cfg.train.schedule.total_epochs = n;
    }
    cfg.validate()
}

pub fn generate(
    common: &Common,
    system: Option<SystemArg>,
    n_orbits: Option<usize>,
    noise: Option<f64>,
    out: &Path,
) -> Result<()> {
    let fallback = system.map(|s| match s {
        SystemArg::Kepler => Preset::KeplerDefault,
        SystemArg::Hooke => Preset::HookeDefault,
    });
    let mut cfg = config_for(common, fallback)?;
    if let Some(s) = system {
        cfg.generator.system = match s {
            SystemArg::Kepler => System::Kepler,
            SystemArg::Hooke => System::Hooke,
        };
    }
    if let Some(n) = n_orbits {
        cfg.generator.n_orbits = n;
    }
    if let Some(f) = noise {
        cfg.generator.noise_fraction = f;
    }
    cfg.validate()?;
    let dataset = generate_dataset(&cfg.generator, cfg.seed)?;
    let seed = cfg.seed;
    write_json(out, &DataFile { run_config: cfg, seed, dataset })?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn noise_table(
    sigma_pos: f64,
    dt: f64,
    strides: &[usize],
    signal: f64,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if strides.is_empty() {
        return Err(Error::Config("no strides given".into()));
    }
    let clean = generate_dataset(&GeneratorConfig::default(), seed)?;
    let law = clean.law()?;
    let orbits: Vec<_> = clean.orbits.iter().collect();
    let mut rows = Vec::new();
    for &s in strides {
        let cfg = StencilConfig::new(s, dt)?;
        let report = verify_noise(cfg, sigma_pos, signal, samples, mix_seed(seed, s as u64))?;
        let rms = clean_rms(&orbits, &law, s)?;
        rows.push((report, rms));
    }
    let header: Vec<String> = [
        "stride",
        "sigma_pos",
        "dt",
        "sigma_a_analytic",
        "sigma_a_empirical",
        "relative_error",
        "signal",
        "snr",
        "clean_rms",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let bytes = csv_bytes(&header, |w| {
        for (r, rms) in &rows {
            let emp = r.sigma_a_empirical.unwrap_or(f64::NAN);
            let rel = if r.sigma_a_analytic > 0.0 { (emp - r.sigma_a_analytic).abs() / r.sigma_a_analytic } else { 0.0 };
            w.write_record([
                r.stride.to_string(),
                num(r.sigma_pos),
                num(r.dt),
                num(r.sigma_a_analytic),
                num(emp),
                num(rel),
                num(r.signal_magnitude),
                num(r.snr),
                num(*rms),
            ])?;
        }
        Ok(())
    })?;
    match out {
        Some(p) => write_atomic(p, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn random_point(library: &BasisLibrary, seed: u64, point: usize) -> Result<(BasisModel, SchedulePoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6772_6164 + point as u64));
    let k = library.len();
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let thetas: Vec<f64> = (0..k)
        .map(|_| {
            let m: f64 = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let point = SchedulePoint { alpha_i: 1.0, alpha_e: rng.random_range(0.01..1.0), tau: rng.random_range(0.1..1.0) };
    Ok((BasisModel::new(library.clone(), logits, thetas, point.tau)?, point))
}

pub fn gradcheck(
    common: &Common,
    data: Option<&Path>,
    seeds: &[u64],
    points: usize,
    tolerance: f64,
    out: Option<&Path>,
) -> Result<()> {
    let start = Instant::now();
    let (cfg, dataset) = setup(common, data)?;
    let loss = cfg.train.loss;
    let prepared: Vec<PreparedTrajectory> = dataset
        .train()
        .into_iter()
        .take(cfg.train.batch_size)
        .map(|t| PreparedTrajectory::new(t, &loss))
        .collect::<Result<_>>()?;
    let batch: Vec<&PreparedTrajectory> = prepared.iter().collect();
    let mut rows = Vec::new();
    for &seed in seeds {
        for point in 0..points {
            let (model, sp) = random_point(&cfg.train.library, seed, point)?;
            let (_, fast) = batch_loss_grad(&model, &batch, &loss, sp)?;
            let obj = TripleAction { library: &model.library, batch: batch.clone(), cfg: loss, point: sp };
            let params = model.params();
            let generic = grad(&obj, &params)?;
            let fd = fd_gradient(|p| obj.eval(p), &params, 1e-5);
            let row = GradRow {
                seed,
                point,
                alpha_e: sp.alpha_e,
                tau: sp.tau,
                max_rel_error_fd: max_relative_error(&fast, &fd, 1e-8),
                max_rel_error_generic: max_relative_error(&fast, &generic.gradient, 1e-8),
            };
            println!(
                "seed {seed} point {point}: fd {:.3e}  dual {:.3e}",
                row.max_rel_error_fd, row.max_rel_error_generic
            );
            rows.push(row);
        }
    }
    let max = rows.iter().map(|r| r.max_rel_error_fd.max(r.max_rel_error_generic)).fold(0.0, f64::max);
    let passed = max < tolerance;
    println!("max relative error {max:.3e} (tolerance {tolerance:.1e}): {}", if passed { "ok" } else { "FAILED" });
    if let Some(p) = out {
        let seed = cfg.seed;
        let wall = start.elapsed().as_secs_f64();
        write_json(p, &GradcheckFile { run_config: cfg, seed, tolerance, rows, max_rel_error: max, passed, wall_time_s: wall })?;
    }
    if !passed {
        return Err(Error::Domain(format!("gradient mismatch {max:.3e} exceeds {tolerance:.1e}")));
    }
    Ok(())
}

pub fn write_run(dir: &Path, cfg: &RunConfig, seed: u64, run: &TrainRun) -> Result<()> {
    let mut run_config = cfg.clone();
    run_config.seed = seed;
    let idx = run.model.dominant_index();
    let last = run.log.epochs.last();
    write_atomic(&dir.join("trainlog.csv"), &trainlog_csv(&run.log)?)?;
    write_json(
        &dir.join("milestones.json"),
        &MilestonesFile {
            run_config: run_config.clone(),
            seed,
            milestones: run.log.milestones,
            nodes: run.log.nodes.clone(),
            final_selectivity: last.map_or(f64::NAN, |r| r.selectivity),
            final_c_gate: last.map_or(f64::NAN, |r| r.c_gate),
        },
    )?;
    write_json(
        &dir.join("model.json"),
        &ModelFile {
            run_config,
            seed,
            selected_basis_index: idx,
            basis: run.model.library.terms[idx].label(),
            model: run.model.clone(),
        },
    )
}

pub fn train(common: &Common, flags: &LossFlags, data: Option<&Path>, out: &Path, quiet: bool) -> Result<()> {
    let (mut cfg, dataset) = setup(common, data)?;
    apply_loss_flags(&mut cfg, flags)?;
    let total = cfg.train.schedule.total_epochs;
    let run = trainer::train_with_progress(&dataset, &cfg.train, cfg.seed, |r| {
        if !quiet && (r.epoch == 1 || r.epoch % 25 == 0 || r.epoch == total) {
            eprintln!(
                "epoch {:4}  tau {:.3}  alpha_e {:.3}  loss {:.4e}  R {:.3e}  C {:.3}",
                r.epoch, r.tau, r.alpha_e, r.loss.total, r.selectivity, r.c_gate
            );
        }
    })?;
    write_run(out, &cfg, cfg.seed, &run)?;
    let idx = run.model.dominant_index();
    println!("seed {}: selected {} ; {:?}", cfg.seed, run.model.library.terms[idx].label(), run.log.milestones);
    Ok(())
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or("-".into(), |x| x.to_string())
}

pub fn sweep(
    common: &Common,
    flags: &LossFlags,
    data: Option<&Path>,
    seeds: &[u64],
    jobs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (mut cfg, dataset) = setup(common, data)?;
    apply_loss_flags(&mut cfg, flags)?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    let output = trainer::sweep(&dataset, &cfg.train, &cfg.validation, seeds, jobs)?;
    for (seed, run) in &output.runs {
        if let Ok(run) = run {
            write_run(&seed_dir(out, *seed), &cfg, *seed, run)?;
        }
    }
    println!("seed  basis  R_final  onset  sparse  frozen  span  gamma  theta  p  sigma_H");
    for s in &output.result.seeds {
        let m = &s.milestones;
        println!(
            "{}  {}  {:.3e}  {}  {}  {}  {}  {}  {}  {}  {}",
            s.seed,
            s.basis,
            s.final_selectivity,
            opt_usize(m.onset),
            opt_usize(m.sparse),
            opt_usize(m.frozen),
            opt_usize(m.span),
            opt(m.growth_rate, 3),
            opt(s.calibrated_coefficient, 4),
            opt(s.kepler_exponent, 4),
            opt(s.sigma_h, 5),
        );
    }
    if let Some(v) = &output.result.verdict {
        println!("verdict: {} (margin {})", v.basis, opt(v.margin, 2));
    }
    let seed = cfg.seed;
    write_json(&out.join("sweep.json"), &SweepFile { run_config: cfg, seed, seeds: seeds.to_vec(), result: output.result })
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn validate(model: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let mf: ModelFile = read_json(model)?;
    let df: DataFile = read_json(data)?;
    df.dataset.validate()?;
    let cfg = mf.run_config;
    let report = metrics::validate(&mf.model, &df.dataset.train(), &df.dataset.test(), &cfg.validation)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| model.with_file_name("validate.json"));
    println!(
        "{}: theta {:.4}  p {}  sigma_H {:.5}",
        report.calibration.basis,
        report.calibration.theta_opt,
        opt(report.kepler.as_ref().map(|k| k.p), 4),
        report.conservation.sigma_h
    );
    if let Some(e) = &report.kepler_error {
        eprintln!("period fit: {e}");
    }
    let file = ValidateFile {
        seed: mf.seed,
        run_config: cfg,
        basis: report.calibration.basis.clone(),
        theta_opt: report.calibration.theta_opt,
        p: report.kepler.as_ref().map(|k| k.p),
        c: report.kepler.as_ref().map(|k| k.c),
        sigma_h: report.conservation.sigma_h,
        report,
    };
    write_json(&out, &file)
}

pub fn select_verdict(sweep: &SweepFile) -> Result<Verdict> {
    let entries: Vec<(usize, f64)> =
        sweep.result.seeds.iter().filter_map(|o| o.sigma_h.map(|s| (o.selected_basis_index, s))).collect();
    select_by_conservation(&entries, &sweep.run_config.train.library.labels())
}

pub fn select(sweep: &Path, out: Option<&Path>) -> Result<()> {
    let sf: SweepFile = read_json(sweep)?;
    let verdict = select_verdict(&sf)?;
    let labels = sf.run_config.train.library.labels();
    let scan: Vec<(usize, f64)> = sf.result.candidates.iter().map(|c| (c.basis_index, c.sigma_h)).collect();
    let library_verdict = select_by_conservation(&scan, &labels).ok();
    for g in &verdict.groups {
        println!("{:>6}  seeds {:2}  mean sigma_H {:.5}", g.basis, g.seeds, g.mean_sigma_h);
    }
    println!("selected {} (margin {}{})", verdict.basis, opt(verdict.margin, 2), if verdict.tie { ", tie" } else { "" });
    if let Some(lv) = &library_verdict {
        println!("library scan: {} (margin {})", lv.basis, opt(lv.margin, 2));
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| sweep.with_file_name("select.json"));
    write_json(&out, &SelectFile { seed: sf.seed, run_config: sf.run_config, verdict, library_verdict })
}

fn dominance(xi: &[f64]) -> Option<f64> {
    let mut m: Vec<f64> = xi.iter().map(|c| c.abs()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    match m.as_slice() {
        [a, b, ..] if *b > 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn sindy(
    common: &Common,
    data: Option<&Path>,
    stride: Option<usize>,
    ensemble: usize,
    seeds: &[u64],
    threshold: Option<f64>,
    out: &Path,
) -> Result<()> {
    let (mut cfg, dataset) = setup(common, data)?;
    if let Some(s) = stride {
        cfg.sindy.stride = s;
    }
    if let Some(t) = threshold {
        cfg.sindy.threshold = t;
    }
    cfg.sindy.ensemble = (ensemble > 0).then_some(EnsembleConfig { n_boot: ensemble, seed: 0 });
    let record = &dataset.config;
    let exponent = match record.generator.system {
        System::Kepler => -2.0,
        System::Hooke => 1.0,
    };
    let target = cfg
        .sindy
        .library
        .index_of_power(exponent)
        .ok_or_else(|| Error::Config(format!("library lacks the r^{exponent} term")))?;
    let mut rows = Vec::new();
    for &noise_seed in seeds {
        let gen = GeneratorConfig {
            orbit_seed: Some(record.orbit_seed),
            noise_seed: Some(noise_seed),
            ..record.generator.clone()
        };
        let ds = generate_dataset(&gen, record.seed)?;
        let mut scfg = cfg.sindy.clone();
        if let Some(e) = scfg.ensemble.as_mut() {
            e.seed = noise_seed;
        }
        let t0 = Instant::now();
        let fit = sindy_fit(&ds.train(), &scfg);
        let wall = t0.elapsed().as_secs_f64();
        let row = match fit {
            Ok(r) => SindyRow {
                noise_seed,
                identified_basis: Some(r.identified_basis),
                correct: r.identified_basis == target,
                dominance: dominance(&r.coefficients),
                basis: Some(r.basis),
                gm_estimate: Some(r.gm_estimate),
                coefficients: r.coefficients,
                selected: r.selected,
                wall_time_s: wall,
                error: None,
            },
            Err(e) => SindyRow {
                noise_seed,
                identified_basis: None,
                basis: None,
                correct: false,
                gm_estimate: None,
                coefficients: Vec::new(),
                selected: Vec::new(),
                dominance: None,
                wall_time_s: wall,
                error: Some(e.to_string()),
            },
        };
        println!(
            "noise seed {noise_seed}: {}  gm {}  dominance {}  {:.1} ms",
            row.basis.as_deref().unwrap_or("error"),
            opt(row.gm_estimate, 3),
            opt(row.dominance, 2),
            1e3 * wall
        );
        rows.push(row);
    }
    let good: Vec<f64> = rows.iter().filter(|r| r.correct).filter_map(|r| r.gm_estimate).collect();
    let identified = good.len();
    let summary = SindySummary {
        identified,
        total: rows.len(),
        rate: identified as f64 / rows.len().max(1) as f64,
        gm_min: good.iter().copied().reduce(f64::min),
        gm_max: good.iter().copied().reduce(f64::max),
        mean_wall_time_s: rows.iter().map(|r| r.wall_time_s).sum::<f64>() / rows.len().max(1) as f64,
        max_wall_time_s: rows.iter().map(|r| r.wall_time_s).fold(0.0, f64::max),
    };
    let target_basis = cfg.sindy.library.terms[target].label();
    println!("identified {target_basis} in {}/{}", summary.identified, summary.total);
    let seed = cfg.seed;
    write_json(
        out,
        &SindyFile {
            stride: cfg.sindy.stride,
            threshold: cfg.sindy.threshold,
            run_config: cfg,
            seed,
            ensemble,
            target_basis,
            rows,
            summary,
        },
    )
}
