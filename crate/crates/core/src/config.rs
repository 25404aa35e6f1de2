//! Run configuration read from TOML; every field has a default so a partial
//! file (or none) is enough.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine_models::{Profile, SchemaSet, SystemParameters};
use crate::moo::MooSettings;
use crate::training::TrainSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub dataset: u64,
    pub split: u64,
    pub training: u64,
    pub moo: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            dataset: 42,
            split: 7,
            training: 1,
            moo: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_technology: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub oversample: f64,
    pub max_rounds: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_technology: 8000,
            split: [0.8, 0.1, 0.1],
            oversample: 1.3,
            max_rounds: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Profile default when absent.
    pub latent_dim: Option<usize>,
    pub kl_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        TrainingConfig {
            epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            lr_start: t.lr_start,
            lr_end: t.lr_end,
            latent_dim: None,
            kl_weight: crate::vae::DEFAULT_KL_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MooConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub eta_c: f64,
    pub eta_m: f64,
}

impl Default for MooConfig {
    fn default() -> Self {
        let m = MooSettings::default();
        MooConfig {
            population: m.population,
            generations: m.generations,
            crossover_prob: m.crossover_prob,
            mutation_prob: m.mutation_prob,
            eta_c: m.eta_c,
            eta_m: m.eta_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub out_dir: PathBuf,
    pub seeds: Seeds,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    pub moo: MooConfig,
    pub system: SystemParameters,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: Profile::Desk.as_str().to_string(),
            out_dir: PathBuf::from("out"),
            seeds: Seeds::default(),
            dataset: DatasetConfig::default(),
            training: TrainingConfig::default(),
            moo: MooConfig::default(),
            system: SystemParameters::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            Error::config(field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn profile(&self) -> Result<Profile> {
        self.profile
            .parse()
            .map_err(|_| Error::config("profile", format!("unknown profile `{}`", self.profile)))
    }

    pub fn schemas(&self) -> Result<SchemaSet> {
        Ok(SchemaSet::for_profile(self.profile()?))
    }

    pub fn train_settings(&self) -> TrainSettings {
        let t = &self.training;
        TrainSettings {
            epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            lr_start: t.lr_start,
            lr_end: t.lr_end,
            seed: self.seeds.training,
        }
    }

    pub fn moo_settings(&self) -> MooSettings {
        let m = &self.moo;
        MooSettings {
            population: m.population,
            generations: m.generations,
            crossover_prob: m.crossover_prob,
            mutation_prob: m.mutation_prob,
            eta_c: m.eta_c,
            eta_m: m.eta_m,
            seed: self.seeds.moo,
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.dataset.split;
        (a, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile()?;
        if self.dataset.per_technology == 0 {
            return Err(Error::config("dataset.per_technology", "must be at least 1"));
        }
        let sum: f64 = self.dataset.split.iter().sum();
        if self.dataset.split.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("dataset.split", "fractions must be positive and sum to 1"));
        }
        if !(self.dataset.oversample >= 1.0) || self.dataset.max_rounds == 0 {
            return Err(Error::config("dataset.oversample", "must be >= 1 with at least one round"));
        }
        self.train_settings().validate().map_err(|e| prefix(e, "training"))?;
        self.moo_settings().validate().map_err(|e| prefix(e, "moo"))?;
        self.system.validate().map_err(|e| prefix(e, "system"))?;
        if !(self.training.kl_weight >= 0.0 && self.training.kl_weight.is_finite()) {
            return Err(Error::config("training.kl_weight", "must be finite and non-negative"));
        }
        if let Some(l) = self.training.latent_dim {
            let s = self.schemas()?;
            if l < s.max_native_dim() || l > s.combined_dim() {
                return Err(Error::config(
                    "training.latent_dim",
                    format!("must lie in [{}, {}]", s.max_native_dim(), s.combined_dim()),
                ));
            }
        }
        Ok(())
    }
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => Error::config(section, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn partial_override() {
        let c = RunConfig::from_toml_str("profile = \"paper_shape\"\n[training]\nepochs = 5\n").unwrap();
        assert_eq!(c.profile().unwrap(), Profile::PaperShape);
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.training.patience, 20);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match RunConfig::from_toml_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("[training]\nbatch_size = 0\n"), "training.batch_size");
        assert_eq!(field("[moo]\npopulation = 7\n"), "moo.population");
        assert_eq!(field("profile = \"huge\"\n"), "profile");
        assert_eq!(field("[dataset]\nsplit = [0.5, 0.1, 0.1]\n"), "dataset.split");
        assert_eq!(field("[training]\nlatent_dim = 3\n"), "training.latent_dim");
        assert_eq!(field("bogus = 1\n"), "bogus");
    }
}
