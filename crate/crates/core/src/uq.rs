//! Turning a trained model into M stochastic predictions per input.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::config::TrainConfig;
use crate::experiments::train::{train_members, TrainingData};
use crate::nn::{Mode, Network, Task, TrunkKind};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UqKind {
    Baseline,
    McDropout,
    McDropConnect,
    Flipout,
    Ensemble,
}

impl UqKind {
    pub const ALL: [UqKind; 5] = [
        UqKind::Baseline,
        UqKind::McDropout,
        UqKind::McDropConnect,
        UqKind::Flipout,
        UqKind::Ensemble,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UqKind::Baseline => "baseline",
            UqKind::McDropout => "mc_dropout",
            UqKind::McDropConnect => "mc_dropconnect",
            UqKind::Flipout => "flipout",
            UqKind::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for UqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UqKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(UqKind::Baseline),
            "mc_dropout" | "dropout" => Ok(UqKind::McDropout),
            "mc_dropconnect" | "dropconnect" => Ok(UqKind::McDropConnect),
            "flipout" => Ok(UqKind::Flipout),
            "ensemble" | "ensembles" => Ok(UqKind::Ensemble),
            other => Err(Error::Config(format!("unknown uq method '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UqMethodConfig {
    pub kind: UqKind,
    /// Stochastic passes M; unused by ensembles.
    pub forward_passes: usize,
    /// Member count; used by ensembles only.
    pub ensemble_size: usize,
    pub dropout_p: f64,
    pub dropconnect_p: f64,
}

impl UqMethodConfig {
    pub const DEFAULT_PASSES: usize = 20;
    pub const DEFAULT_ENSEMBLE: usize = 5;
    pub const DEFAULT_DROPOUT_P: f64 = 0.25;
    pub const DEFAULT_DROPCONNECT_P: f64 = 0.10;

    pub fn new(kind: UqKind) -> Self {
        Self {
            kind,
            forward_passes: Self::DEFAULT_PASSES,
            ensemble_size: Self::DEFAULT_ENSEMBLE,
            dropout_p: Self::DEFAULT_DROPOUT_P,
            dropconnect_p: Self::DEFAULT_DROPCONNECT_P,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.forward_passes == 0 || self.ensemble_size == 0 {
            return Err(Error::Config("forward_passes and ensemble_size must be >= 1".into()));
        }
        for p in [self.dropout_p, self.dropconnect_p] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("drop probability {p} not in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Trunk layer family of each member network.
    pub fn trunk(&self) -> TrunkKind {
        match self.kind {
            UqKind::Baseline | UqKind::Ensemble => TrunkKind::Plain,
            UqKind::McDropout => TrunkKind::Dropout(self.dropout_p),
            UqKind::McDropConnect => TrunkKind::DropConnect(self.dropconnect_p),
            UqKind::Flipout => TrunkKind::Flipout,
        }
    }

    /// Number of samples produced per input.
    pub fn sample_count(&self) -> usize {
        match self.kind {
            UqKind::Ensemble => self.ensemble_size,
            _ => self.forward_passes,
        }
    }
}

impl Default for UqMethodConfig {
    fn default() -> Self {
        Self::new(UqKind::Baseline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSamples {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// M logit mean/variance vector pairs for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitSamples {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl LogitSamples {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let s = Self { means, variances };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::EmptySamples);
        }
        let c = self.means[0].len();
        if c == 0 {
            return Err(Error::Dimension("no classes".into()));
        }
        if self.variances.len() != self.means.len()
            || self.means.iter().chain(&self.variances).any(|r| r.len() != c)
        {
            return Err(Error::Dimension("logit samples differ in shape".into()));
        }
        if self.variances.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::Domain("negative logit variance".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PredictionSamples {
    Regression(RegressionSamples),
    Classification(LogitSamples),
}

impl PredictionSamples {
    pub fn len(&self) -> usize {
        match self {
            PredictionSamples::Regression(s) => s.means.len(),
            PredictionSamples::Classification(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_regression(&self) -> Result<&RegressionSamples> {
        match self {
            PredictionSamples::Regression(s) => Ok(s),
            _ => Err(Error::Contract("expected regression samples".into())),
        }
    }

    pub fn as_logits(&self) -> Result<&LogitSamples> {
        match self {
            PredictionSamples::Classification(s) => Ok(s),
            _ => Err(Error::Contract("expected classification samples".into())),
        }
    }
}

/// One network for single-model methods, several for ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct UqModel {
    pub kind: UqKind,
    pub members: Vec<Network>,
}

impl UqModel {
    pub fn new(kind: UqKind, members: Vec<Network>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract("model without members".into()));
        }
        if kind != UqKind::Ensemble && members.len() != 1 {
            return Err(Error::Contract(format!(
                "{kind} model must have exactly one network, got {}",
                members.len()
            )));
        }
        let task = members[0].task();
        if members.iter().any(|m| m.task() != task) {
            return Err(Error::Contract("ensemble members disagree on task".into()));
        }
        Ok(Self { kind, members })
    }

    pub fn task(&self) -> Task {
        self.members[0].task()
    }
}

/// M predictions per row of `x`.
///
/// Baseline repeats one deterministic pass M times; dropout, DropConnect and
/// Flipout run M stochastic passes, pass `i` drawing from `rng.derive(i)`;
/// ensembles run one deterministic pass per member.
pub fn sample_predictions(
    model: &UqModel,
    x: &Tensor,
    config: &UqMethodConfig,
    rng: &RngStream,
) -> Result<Vec<PredictionSamples>> {
    config.validate()?;
    if model.kind != config.kind {
        return Err(Error::MethodMismatch(format!(
            "model is {}, config asks for {}",
            model.kind, config.kind
        )));
    }
    if model.kind == UqKind::Ensemble && model.members.len() != config.ensemble_size {
        return Err(Error::MethodMismatch(format!(
            "ensemble has {} members, config expects {}",
            model.members.len(),
            config.ensemble_size
        )));
    }
    let mut unused = rng.clone();
    let passes = match model.kind {
        UqKind::Baseline => {
            let p = model.members[0].predict(x, Mode::Deterministic, &mut unused)?;
            vec![p; config.forward_passes]
        }
        UqKind::Ensemble => model
            .members
            .par_iter()
            .map(|m| m.predict(x, Mode::Deterministic, &mut rng.clone()))
            .collect::<Result<Vec<_>>>()?,
        _ => (0..config.forward_passes)
            .into_par_iter()
            .map(|i| model.members[0].predict(x, Mode::Stochastic, &mut rng.derive(i as u64)))
            .collect::<Result<Vec<_>>>()?,
    };

    let rows = x.rows();
    let task = model.task();
    let out = (0..rows)
        .map(|r| match task {
            Task::Regression => PredictionSamples::Regression(RegressionSamples {
                means: passes.iter().map(|p| p.mean.data()[r]).collect(),
                variances: passes.iter().map(|p| p.variance.data()[r]).collect(),
            }),
            Task::Classification => PredictionSamples::Classification(LogitSamples {
                means: passes.iter().map(|p| p.mean.row(r).to_vec()).collect(),
                variances: passes.iter().map(|p| p.variance.row(r).to_vec()).collect(),
            }),
        })
        .collect();
    Ok(out)
}

/// Trains `count` independent members with seeds `seed + i`.
pub fn train_ensemble(
    base_config: &TrainConfig,
    data: &TrainingData,
    count: usize,
    seed: u64,
) -> Result<Vec<Network>> {
    if count == 0 {
        return Err(Error::Parameter("ensemble needs at least one member".into()));
    }
    let mut member_config = *base_config;
    member_config.uq.kind = UqKind::Baseline;
    Ok(train_members(&member_config, data, count, seed)?
        .into_iter()
        .map(|r| r.network)
        .collect())
}
