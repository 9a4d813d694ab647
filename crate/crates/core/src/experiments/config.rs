//! Training configuration and its flat `key = value` text format.
//!
//! ```text
//! # toy regression, ensemble of five
//! task = regression
//! method = ensemble
//! loss = beta_nll
//! beta = 0.5
//! seed = 7
//! ```
//!
//! Keys not given keep the task defaults. `UQD_SEED` in the environment
//! overrides `seed` when loading from a file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::Task;
use crate::uq::{UqKind, UqMethodConfig};

use super::optim::AdamConfig;

pub const SEED_ENV: &str = "UQD_SEED";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub uq: UqMethodConfig,
    pub seed: u64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    /// Sampling-softmax N used in classification training and evaluation.
    pub sampling_samples: usize,
    /// Seed of the generated dataset.
    pub data_seed: u64,
    /// Size of the generated classification dataset.
    pub n_points: usize,
}

impl TrainConfig {
    pub fn regression() -> Self {
        Self {
            task: Task::Regression,
            epochs: 700,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossConfig::Nll,
            uq: UqMethodConfig::default(),
            seed: 0,
            hidden_width: 32,
            hidden_depth: 2,
            sampling_samples: 100,
            data_seed: 0,
            n_points: 1000,
        }
    }

    pub fn classification() -> Self {
        Self {
            task: Task::Classification,
            epochs: 120,
            batch_size: 64,
            loss: LossConfig::SoftCe,
            hidden_width: 256,
            n_points: 2000,
            ..Self::regression()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Self::regression(),
            Task::Classification => Self::classification(),
        }
    }

    pub fn with_method(mut self, kind: UqKind) -> Self {
        self.uq.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.uq.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_width == 0 || self.hidden_depth == 0 {
            return Err(Error::Config("epochs, batch_size and hidden sizes must be >= 1".into()));
        }
        if self.sampling_samples == 0 {
            return Err(Error::Config("sampling_samples must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        match (self.task, self.loss) {
            (Task::Classification, LossConfig::SoftCe) => Ok(()),
            (Task::Regression, LossConfig::Nll) => Ok(()),
            (Task::Regression, LossConfig::BetaNll { beta }) if (0.0..=1.0).contains(&beta) => Ok(()),
            (task, loss) => Err(Error::Config(format!(
                "loss {} does not apply to {:?}",
                loss.name(),
                task
            ))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let task = match self.task {
            Task::Regression => "regression",
            Task::Classification => "classification",
        };
        let _ = writeln!(s, "task = {task}");
        let _ = writeln!(s, "method = {}", self.uq.kind);
        let _ = writeln!(s, "loss = {}", self.loss.name());
        if let LossConfig::BetaNll { beta } = self.loss {
            let _ = writeln!(s, "beta = {beta:?}");
        }
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {:?}", self.adam.lr);
        let _ = writeln!(s, "adam_beta1 = {:?}", self.adam.beta1);
        let _ = writeln!(s, "adam_beta2 = {:?}", self.adam.beta2);
        let _ = writeln!(s, "adam_epsilon = {:?}", self.adam.epsilon);
        let _ = writeln!(s, "forward_passes = {}", self.uq.forward_passes);
        let _ = writeln!(s, "ensemble_size = {}", self.uq.ensemble_size);
        let _ = writeln!(s, "dropout_p = {:?}", self.uq.dropout_p);
        let _ = writeln!(s, "dropconnect_p = {:?}", self.uq.dropconnect_p);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "hidden_width = {}", self.hidden_width);
        let _ = writeln!(s, "hidden_depth = {}", self.hidden_depth);
        let _ = writeln!(s, "sampling_samples = {}", self.sampling_samples);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "n_points = {}", self.n_points);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key '{}'", k.trim())));
            }
        }

        let task = match kv.remove("task").as_deref() {
            None | Some("regression") => Task::Regression,
            Some("classification") => Task::Classification,
            Some(other) => return Err(Error::Config(format!("unknown task '{other}'"))),
        };
        let mut cfg = Self::for_task(task);
        let mut beta = None;
        let mut loss_name = None;

        for (k, v) in &kv {
            match k.as_str() {
                "method" => cfg.uq.kind = v.parse()?,
                "loss" => loss_name = Some(v.clone()),
                "beta" => beta = Some(parse(k, v)?),
                "epochs" => cfg.epochs = parse(k, v)?,
                "batch_size" => cfg.batch_size = parse(k, v)?,
                "learning_rate" => cfg.adam.lr = parse(k, v)?,
                "adam_beta1" => cfg.adam.beta1 = parse(k, v)?,
                "adam_beta2" => cfg.adam.beta2 = parse(k, v)?,
                "adam_epsilon" => cfg.adam.epsilon = parse(k, v)?,
                "forward_passes" => cfg.uq.forward_passes = parse(k, v)?,
                "ensemble_size" => cfg.uq.ensemble_size = parse(k, v)?,
                "dropout_p" => cfg.uq.dropout_p = parse(k, v)?,
                "dropconnect_p" => cfg.uq.dropconnect_p = parse(k, v)?,
                "seed" => cfg.seed = parse(k, v)?,
                "hidden_width" => cfg.hidden_width = parse(k, v)?,
                "hidden_depth" => cfg.hidden_depth = parse(k, v)?,
                "sampling_samples" => cfg.sampling_samples = parse(k, v)?,
                "data_seed" => cfg.data_seed = parse(k, v)?,
                "n_points" => cfg.n_points = parse(k, v)?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }

        cfg.loss = match (loss_name.as_deref(), beta) {
            (None, None) => cfg.loss,
            (Some("nll"), None) => LossConfig::Nll,
            (Some("soft_ce"), None) => LossConfig::SoftCe,
            (Some("beta_nll"), Some(b)) => LossConfig::beta_nll(b)?,
            (Some("beta_nll"), None) => return Err(Error::Config("beta_nll needs 'beta'".into())),
            (_, Some(_)) => return Err(Error::Config("'beta' only applies to loss = beta_nll".into())),
            (Some(other), None) => return Err(Error::Config(format!("unknown loss '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file and applies the `UQD_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_text(&text)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let r = TrainConfig::regression();
        assert_eq!((r.epochs, r.batch_size, r.hidden_width), (700, 32, 32));
        assert_eq!((r.adam.lr, r.adam.beta1, r.adam.beta2), (0.001, 0.9, 0.999));
        let c = TrainConfig::classification();
        assert_eq!((c.epochs, c.batch_size, c.hidden_width), (120, 64, 256));
        assert_eq!(c.uq.forward_passes, 20);
        assert_eq!(c.uq.ensemble_size, 5);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::regression().with_method(UqKind::Ensemble);
        cfg.loss = LossConfig::beta_nll(0.5).unwrap();
        cfg.seed = 42;
        cfg.adam.lr = 3e-4;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        let c = TrainConfig::classification().with_method(UqKind::Flipout);
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_errors() {
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("epochs = ten").is_err());
        assert!(TrainConfig::from_text("loss = beta_nll").is_err());
        assert!(TrainConfig::from_text("loss = nll\nbeta = 0.5").is_err());
        assert!(TrainConfig::from_text("task = classification\nloss = nll").is_err());
        assert!(TrainConfig::from_text("seed = 1\nseed = 2").is_err());
        assert!(TrainConfig::from_text("no equals sign").is_err());
        let c = TrainConfig::from_text("# comment\ntask = classification  # trailing\nmethod = dropout\n").unwrap();
        assert_eq!(c.uq.kind, UqKind::McDropout);
        assert_eq!(c.loss, LossConfig::SoftCe);
    }

    #[test]
    fn seed_override() {
        let mut c = TrainConfig::regression();
        c.apply_seed_override(Some("99")).unwrap();
        assert_eq!(c.seed, 99);
        c.apply_seed_override(None).unwrap();
        assert_eq!(c.seed, 99);
        assert!(c.apply_seed_override(Some("x")).is_err());
    }
}
