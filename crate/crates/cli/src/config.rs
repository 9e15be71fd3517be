//! Run configuration: one TOML file with a section per component. Command
//! line flags override file values and the merged result is written back
//! next to the run's outputs.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! graphs = ["graphs/fft.json"]
//! out_dir = "runs/fft"
//!
//! [device]
//! num_tiles = 16
//! ii = 3
//!
//! [train]
//! epochs = 500
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use se_mapper::baselines::SaConfig;
use se_mapper::device::DeviceConfig;
use se_mapper::policy::ModelConfig;
use se_mapper::ppo::TrainConfig;

pub const SEED_ENV: &str = "SE_MAPPER_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub graphs: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single source of randomness; copied into the train and sa sections.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub device: DeviceConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub sa: SaConfig,
}

/// Values taken from the command line; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tiles: Option<usize>,
    pub slots: Option<usize>,
    pub ii: Option<usize>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub no_gga: bool,
    pub no_mask: bool,
    pub random_order: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    /// Applies flags, resolves the seed (flag, then file, then the
    /// environment, then 0) and validates every section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}={v:?} is not an integer"))?),
            Err(_) => None,
        };
        let seed = o.seed.or(self.seed).or(env_seed).unwrap_or(0);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.sa.seed = seed;
        if let Some(t) = o.tiles {
            self.device.num_tiles = t;
        }
        if let Some(s) = o.slots {
            self.device.num_slots = s;
        }
        if let Some(ii) = o.ii {
            self.device.ii = ii;
        }
        if let Some(w) = o.workers {
            self.train.workers = w;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if o.out_dir.is_some() {
            self.paths.out_dir = o.out_dir.clone();
        }
        if o.no_gga {
            self.model.use_gga = false;
        }
        if o.no_mask {
            self.train.masking = false;
        }
        if o.random_order {
            self.train.random_order = true;
        }
        self.device.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        self.sa.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values always serialize")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        match &self.paths.out_dir {
            Some(p) => Ok(p),
            None => bail!("no output directory: pass --out or set paths.out_dir"),
        }
    }

    /// Writes the effective config into the output directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("seed = 3\n[device]\nnum_tiles = 8\n[train]\nepochs = 5\n").unwrap();
        let c = c.resolve(&Overrides::default()).unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), c.to_toml());
        assert_eq!((c.train.seed, c.sa.seed, c.device.num_tiles), (3, 3, 8));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[train]\nepoch = 5\n").unwrap_err();
        assert!(format!("{err:#}").contains("epoch"), "{err:#}");
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let c = RunConfig::parse("seed = 3\n[device]\nnum_tiles = 8\nii = 2\n").unwrap();
        let o = Overrides { seed: Some(9), tiles: Some(4), no_mask: true, ..Default::default() };
        let c = c.resolve(&o).unwrap();
        assert_eq!((c.seed, c.device.num_tiles, c.device.ii, c.train.masking), (Some(9), 4, 2, false));
    }

    #[test]
    fn invalid_sections_fail_validation() {
        let c = RunConfig::parse("[device]\nii = 9\nnum_slots = 2\n").unwrap();
        assert!(c.resolve(&Overrides::default()).is_err());
    }
}
