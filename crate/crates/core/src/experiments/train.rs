//! Mini-batch Adam training of one network or an ensemble.

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::disentangle::sampling_softmax_var;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::nn::{Architecture, Mode, Network, Parameterized, Task};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::uq::{UqKind, UqModel};

use super::config::TrainConfig;
use super::data::{SoftLabelDataset, ToyRegressionDataset};
use super::optim::{adam_step, AdamState};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Inputs `[n, d]` and targets (`[n, 1]` or `[n, C]` soft labels).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub task: Task,
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl TrainingData {
    pub fn new(task: Task, inputs: Tensor, targets: Tensor) -> Result<Self> {
        if inputs.ndim() != 2 || targets.ndim() != 2 || inputs.rows() != targets.rows() || inputs.rows() == 0 {
            return Err(Error::Dimension(format!(
                "training inputs {:?} and targets {:?}",
                inputs.shape(),
                targets.shape()
            )));
        }
        if task == Task::Regression && targets.last_dim() != 1 {
            return Err(Error::Dimension("regression targets must be [n, 1]".into()));
        }
        Ok(Self { task, inputs, targets })
    }

    pub fn from_toy(ds: &ToyRegressionDataset) -> Self {
        Self {
            task: Task::Regression,
            inputs: Tensor::column(&ds.train_x),
            targets: Tensor::column(&ds.train_y),
        }
    }

    pub fn from_soft_labels(ds: &SoftLabelDataset) -> Self {
        Self {
            task: Task::Classification,
            inputs: ds.input_tensor(),
            targets: ds.label_tensor(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
        let w = t.last_dim();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        Tensor::new(vec![idx.len(), w], data).expect("gathered rows")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberResult {
    pub network: Network,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: UqModel,
    pub histories: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

pub fn architecture(config: &TrainConfig, data: &TrainingData) -> Architecture {
    Architecture {
        task: config.task,
        trunk: config.uq.trunk(),
        input_dim: data.inputs.last_dim(),
        width: config.hidden_width,
        depth: config.hidden_depth,
        outputs: data.targets.last_dim(),
    }
}

fn check(config: &TrainConfig, data: &TrainingData) -> Result<()> {
    config.validate()?;
    if config.task != data.task {
        return Err(Error::Config(format!(
            "config is for {:?} but data is {:?}",
            config.task, data.task
        )));
    }
    Ok(())
}

/// Trains a single network from `seed`.
pub fn train_member(config: &TrainConfig, data: &TrainingData, seed: u64) -> Result<MemberResult> {
    check(config, data)?;
    let mut network = Network::build(&architecture(config, data), &mut RngStream::new(seed, INIT_STREAM))?;
    let mut shuffle_rng = RngStream::new(seed, SHUFFLE_STREAM);
    let mut noise_rng = RngStream::new(seed, NOISE_STREAM);
    let mut state = AdamState::new(network.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let x = TrainingData::gather(&data.inputs, batch);
            let y = TrainingData::gather(&data.targets, batch);
            let tape = Tape::new();
            let p = network.bind(&tape, true);
            let out = network.forward(&p, tape.constant(x), Mode::Stochastic, &mut noise_rng)?;
            let target = tape.constant(y);
            let loss = match config.loss {
                LossConfig::SoftCe => {
                    let mut shape = vec![config.sampling_samples];
                    shape.extend(out.mean.shape());
                    let eps = Tensor::gaussian_noise(&shape, &mut noise_rng);
                    let probs = sampling_softmax_var(out.mean, out.variance, &eps)?;
                    losses::soft_cross_entropy(probs, target)?
                }
                ref other => losses::apply(other, out.mean, out.variance, target)?,
            };
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = p.iter().map(|v| grads.get_or_zeros(*v)).collect();
            adam_step(&mut network.params_mut(), &grads, &mut state, &config.adam)?;
            total += value * batch.len() as f64;
        }
        history.push(total / data.len() as f64);
    }
    Ok(MemberResult { network, history, seed })
}

/// Trains `count` members with seeds `seed, seed + 1, ...` concurrently.
pub fn train_members(config: &TrainConfig, data: &TrainingData, count: usize, seed: u64) -> Result<Vec<MemberResult>> {
    (0..count)
        .into_par_iter()
        .map(|i| train_member(config, data, seed.wrapping_add(i as u64)))
        .collect()
}

/// Trains the model described by `config.uq`.
pub fn train(config: &TrainConfig, data: &TrainingData) -> Result<TrainedModel> {
    check(config, data)?;
    let results = if config.uq.kind == UqKind::Ensemble {
        let mut member = *config;
        member.uq.kind = UqKind::Baseline;
        train_members(&member, data, config.uq.ensemble_size, config.seed)?
    } else {
        vec![train_member(config, data, config.seed)?]
    };
    let seeds = results.iter().map(|r| r.seed).collect();
    let histories = results.iter().map(|r| r.history.clone()).collect();
    let model = UqModel::new(config.uq.kind, results.into_iter().map(|r| r.network).collect())?;
    Ok(TrainedModel { model, histories, seeds })
}
