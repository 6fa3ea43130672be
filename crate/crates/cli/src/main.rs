//! `minaction`: force-law identification from noisy orbits.

mod commands;
mod config;
mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minaction::presets::Preset;

#[derive(Parser, Debug)]
#[command(name = "minaction", version, about = "Select a central force law from noisy orbits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset supplying defaults.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Master seed (overrides MINACTION_SEED and the config file).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemArg {
    Kepler,
    Hooke,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyArg {
    /// Model-implied potential.
    Model,
    /// ½|v|² − GM/r with the generating coupling.
    Paper,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherArg {
    Clean,
    Stencil,
}

#[derive(Args, Debug, Clone)]
pub struct LossFlags {
    /// Energy used by the conservation term.
    #[arg(long, value_enum)]
    pub energy_form: Option<EnergyArg>,
    /// Velocity at teacher-forced segment starts.
    #[arg(long, value_enum)]
    pub teacher: Option<TeacherArg>,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset of noisy orbits.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        system: Option<SystemArg>,
        #[arg(long)]
        n_orbits: Option<usize>,
        /// Noise as a fraction of the median semi-major axis.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value = "data.json")]
        out: PathBuf,
    },
    /// Analytic and Monte Carlo acceleration noise per stride.
    NoiseTable {
        #[arg(long, default_value_t = 0.016)]
        sigma_pos: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
        #[arg(long, default_value = "1,5,10,20", value_parser = config::parse_usize_list)]
        strides: std::vec::Vec<usize>,
        #[arg(long, default_value_t = 0.25)]
        signal: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the training gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seeds for the random parameter points.
        #[arg(long, default_value = "0..2", value_parser = config::parse_seeds)]
        seeds: std::vec::Vec<u64>,
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        loss: LossFlags,
        /// Dataset file; generated from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Train and validate over a list of seeds on one dataset.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        loss: LossFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "0..9", value_parser = config::parse_seeds)]
        seeds: std::vec::Vec<u64>,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Calibrate a trained model and check its period law and energy.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to validate.json beside the model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick the force law with the smallest energy spread.
    Select {
        #[arg(long)]
        sweep: PathBuf,
        /// Defaults to select.json beside the sweep file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sparse-regression baseline over noise seeds.
    Sindy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
        /// Bootstrap ensemble size; 0 for a single fit.
        #[arg(long, default_value_t = 0)]
        ensemble: usize,
        /// Noise seeds; the orbits stay fixed.
        #[arg(long, default_value = "0..9", value_parser = config::parse_seeds)]
        seeds: std::vec::Vec<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value = "sindy.json")]
        out: PathBuf,
    },
    /// Summarize a sweep directory as Markdown plus CSV series.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: minaction::Error| e.to_string())
}

fn run(cli: Cli) -> minaction::Result<()> {
    use commands as c;
    match cli.command {
        Command::Generate { common, system, n_orbits, noise, out } => c::generate(&common, system, n_orbits, noise, &out),
        Command::NoiseTable { sigma_pos, dt, strides, signal, samples, seed, out } => {
            c::noise_table(sigma_pos, dt, &strides, signal, samples, seed, out.as_deref())
        }
        Command::Gradcheck { common, data, seeds, points, tolerance, out } => {
            c::gradcheck(&common, data.as_deref(), &seeds, points, tolerance, out.as_deref())
        }
        Command::Train { common, loss, data, out, quiet } => c::train(&common, &loss, data.as_deref(), &out, quiet),
        Command::Sweep { common, loss, data, seeds, jobs, out } => {
            c::sweep(&common, &loss, data.as_deref(), &seeds, jobs, &out)
        }
        Command::Validate { model, data, out } => c::validate(&model, &data, out.as_deref()),
        Command::Select { sweep, out } => c::select(&sweep, out.as_deref()),
        Command::Sindy { common, data, stride, ensemble, seeds, threshold, out } => {
            c::sindy(&common, data.as_deref(), stride, ensemble, &seeds, threshold, &out)
        }
        Command::Report { dir } => report::report(&dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
