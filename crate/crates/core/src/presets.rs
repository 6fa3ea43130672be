//! Named experiment configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbitgen::GeneratorConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    KeplerDefault,
    HookeDefault,
    /// Logits start with +1.5 on the inverse-square gate.
    BiasedInit,
    /// Teacher forcing alone: no sparsity, entropy or energy terms and a
    /// fixed unit temperature.
    AblationTf,
    /// 300 epochs cooling to τ = 0.001.
    SlowAnneal,
    /// 100 warmup epochs.
    ExtendedWarmup,
    /// Observation noise at 0.5% of the median semi-major axis.
    LowNoise,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::KeplerDefault,
        Preset::HookeDefault,
        Preset::BiasedInit,
        Preset::AblationTf,
        Preset::SlowAnneal,
        Preset::ExtendedWarmup,
        Preset::LowNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::KeplerDefault => "kepler-default",
            Preset::HookeDefault => "hooke-default",
            Preset::BiasedInit => "biased-init",
            Preset::AblationTf => "ablation-tf",
            Preset::SlowAnneal => "slow-anneal",
            Preset::ExtendedWarmup => "extended-warmup",
            Preset::LowNoise => "low-noise",
        }
    }

    pub fn generator(self) -> GeneratorConfig {
        match self {
            Preset::HookeDefault => GeneratorConfig::hooke(),
            Preset::LowNoise => GeneratorConfig { noise_fraction: 0.005, ..Default::default() },
            _ => GeneratorConfig::default(),
        }
    }

    pub fn train(self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        match self {
            Preset::KeplerDefault | Preset::HookeDefault | Preset::LowNoise => {}
            Preset::BiasedInit => {
                let mut bias = vec![0.0; cfg.library.len()];
                bias[0] = 1.5;
                cfg.logit_bias = Some(bias);
            }
            Preset::AblationTf => {
                cfg.schedule.alpha_e_start = 0.0;
                cfg.schedule.alpha_e_end = 0.0;
                cfg.schedule.tau_end = cfg.schedule.tau_start;
            }
            Preset::SlowAnneal => {
                cfg.schedule.total_epochs = 300;
                cfg.schedule.tau_end = 0.001;
            }
            Preset::ExtendedWarmup => cfg.schedule.warmup_epochs = 100,
        }
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
        })
    }
}
