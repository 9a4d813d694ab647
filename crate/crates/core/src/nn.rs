//! Dense layers, their stochastic variants and the two-head output blocks.
//!
//! Layers own plain [`Tensor`] parameters. A forward pass first binds them to
//! a [`Tape`] (as leaves when training, as constants when evaluating) and then
//! consumes the bound [`Var`]s in the order given by `params()`.

use crate::autodiff::{softplus_inverse, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Added to every emitted standard deviation and logit variance.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Initial Flipout posterior standard deviation.
pub const FLIPOUT_INIT_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply<'t>(self, v: Var<'t>) -> Var<'t> {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.relu(),
            Activation::Softplus => v.softplus(),
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Linear),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Softplus),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Whether stochastic layers draw randomness on this pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().len()
    }

    fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("drop probability {p} not in [0, 1)")))
    }
}

fn init_limit(fan_in: usize, activation: Activation) -> f64 {
    let fan_in = fan_in.max(1) as f64;
    match activation {
        Activation::Relu => (6.0 / fan_in).sqrt(),
        _ => (3.0 / fan_in).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: Tensor,
    /// `out`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weights.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} for {out} outputs",
                bias.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = init_limit(fan_in, activation);
        Self {
            weights: Tensor::uniform(&[fan_out, fan_in], limit, rng),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `activation(x · Wᵀ + b)` with `p = [W, b]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        affine(p[0], p[1], x, self.fan_in(), self.activation)
    }
}

fn affine<'t>(w: Var<'t>, b: Var<'t>, x: Var<'t>, fan_in: usize, act: Activation) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != fan_in {
        return Err(Error::Dimension(format!(
            "dense input {shape:?}, expected [n, {fan_in}]"
        )));
    }
    Ok(act.apply(x.matmul(w.transpose()?)?.add(b)?))
}

impl Parameterized for DenseLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// Evaluates a dense layer with its parameters held constant.
pub fn dense_forward<'t>(layer: &DenseLayer, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
    let p = layer.bind(tape, false);
    layer.forward(&p, x)
}

/// Inverted dropout on activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McDropout {
    p: f64,
}

impl McDropout {
    pub fn new(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward<'t>(&self, x: Var<'t>, mode: Mode, rng: &mut RngStream) -> Result<Var<'t>> {
        mc_dropout_forward(self.p, x, mode, rng)
    }
}

/// Zeroes each activation with probability `p` and scales survivors by
/// `1/(1-p)` in stochastic mode; identity in deterministic mode.
pub fn mc_dropout_forward<'t>(p: f64, x: Var<'t>, mode: Mode, rng: &mut RngStream) -> Result<Var<'t>> {
    check_p(p)?;
    if mode == Mode::Deterministic || p == 0.0 {
        return Ok(x);
    }
    let mask = bernoulli_mask(&x.shape(), p, rng);
    x.mul(x.tape().constant(mask))
}

fn bernoulli_mask(shape: &[usize], p: f64, rng: &mut RngStream) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let mut m = Tensor::zeros(shape);
    for v in m.data_mut() {
        *v = if rng.bernoulli(p) { 0.0 } else { keep };
    }
    m
}

/// Dense layer whose weights are dropped (inverted scaling) per pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DropConnectDense {
    pub dense: DenseLayer,
    p: f64,
}

impl DropConnectDense {
    pub fn new(dense: DenseLayer, p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(Self { dense, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Same mask for the whole batch; `p = [W, b]`.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        x: Var<'t>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var<'t>> {
        let w = if mode == Mode::Stochastic && self.p > 0.0 {
            let mask = bernoulli_mask(self.dense.weights.shape(), self.p, rng);
            p[0].mul(x.tape().constant(mask))?
        } else {
            p[0]
        };
        affine(w, p[1], x, self.dense.fan_in(), self.dense.activation)
    }
}

impl Parameterized for DropConnectDense {
    fn params(&self) -> Vec<&Tensor> {
        self.dense.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.dense.params_mut()
    }
}

pub fn dropconnect_forward<'t>(
    layer: &DropConnectDense,
    x: Var<'t>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var<'t>> {
    let p = layer.bind(x.tape(), false);
    layer.forward(&p, x, mode, rng)
}

/// Mean-field Gaussian weights sampled with Flipout sign decorrelation.
/// `σ = softplus(ρ)`; the bias is a point estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipoutDense {
    pub weight_mean: Tensor,
    pub weight_rho: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl FlipoutDense {
    pub fn new(weight_mean: Tensor, weight_rho: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weight_mean.dims2()?;
        if weight_rho.shape() != weight_mean.shape() || bias.shape() != [out] {
            return Err(Error::Dimension("flipout parameter shapes disagree".into()));
        }
        Ok(Self {
            weight_mean,
            weight_rho,
            bias,
            activation,
        })
    }

    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let dense = DenseLayer::init(fan_in, fan_out, activation, rng);
        Self {
            weight_mean: dense.weights,
            weight_rho: Tensor::full(&[fan_out, fan_in], softplus_inverse(FLIPOUT_INIT_SIGMA)),
            bias: dense.bias,
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight_mean.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight_mean.shape()[0]
    }

    /// `p = [W_mean, ρ, b]`. Stochastic output is
    /// `x·W_meanᵀ + b + ((x ∘ s)·(σ ∘ E)ᵀ) ∘ r` with one Gaussian `E` per batch
    /// and per-example sign vectors `s`, `r`.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        x: Var<'t>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.fan_in() {
            return Err(Error::Dimension(format!(
                "flipout input {shape:?}, expected [n, {}]",
                self.fan_in()
            )));
        }
        let base = x.matmul(p[0].transpose()?)?.add(p[2])?;
        if mode == Mode::Deterministic {
            return Ok(self.activation.apply(base));
        }
        let tape = x.tape();
        let n = shape[0];
        let (fan_out, fan_in) = (self.fan_out(), self.fan_in());
        let eps = tape.constant(Tensor::gaussian_noise(&[fan_out, fan_in], rng));
        let s = tape.constant(sign_matrix(n, fan_in, rng));
        let r = tape.constant(sign_matrix(n, fan_out, rng));
        let delta = p[1].softplus().mul(eps)?;
        let perturbation = x.mul(s)?.matmul(delta.transpose()?)?.mul(r)?;
        Ok(self.activation.apply(base.add(perturbation)?))
    }
}

fn sign_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let mut m = Tensor::zeros(&[rows, cols]);
    for v in m.data_mut() {
        *v = rng.sign();
    }
    m
}

impl Parameterized for FlipoutDense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight_mean, &self.weight_rho, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight_mean, &mut self.weight_rho, &mut self.bias]
    }
}

pub fn flipout_forward<'t>(
    layer: &FlipoutDense,
    x: Var<'t>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var<'t>> {
    let p = layer.bind(x.tape(), false);
    layer.forward(&p, x, mode, rng)
}

/// Mean head `Dense(1, linear)` and std head `Dense(1, softplus)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRegressionHead {
    pub mean_head: DenseLayer,
    pub std_head: DenseLayer,
}

impl GaussianRegressionHead {
    pub fn init(features: usize, rng: &mut RngStream) -> Self {
        Self {
            mean_head: DenseLayer::init(features, 1, Activation::Linear, rng),
            std_head: DenseLayer::init(features, 1, Activation::Softplus, rng),
        }
    }

    /// Returns `(μ, σ)`, both `[n, 1]`, with `σ = softplus(raw) + SIGMA_FLOOR`.
    pub fn forward<'t>(&self, p: &[Var<'t>], features: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.mean_head.forward(&p[0..2], features)?;
        let sigma = self.std_head.forward(&p[2..4], features)?;
        let floor = features.tape().constant(Tensor::scalar(SIGMA_FLOOR));
        Ok((mu, sigma.add(floor)?))
    }
}

impl Parameterized for GaussianRegressionHead {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.mean_head.params();
        v.extend(self.std_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mean_head.params_mut();
        v.extend(self.std_head.params_mut());
        v
    }
}

pub fn regression_head_forward<'t>(
    head: &GaussianRegressionHead,
    features: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let p = head.bind(features.tape(), false);
    head.forward(&p, features)
}

/// Per-class logit mean (linear) and logit variance (softplus).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLogitHead {
    pub mean_layer: DenseLayer,
    pub var_layer: DenseLayer,
}

impl GaussianLogitHead {
    pub fn init(features: usize, classes: usize, rng: &mut RngStream) -> Self {
        Self {
            mean_layer: DenseLayer::init(features, classes, Activation::Linear, rng),
            var_layer: DenseLayer::init(features, classes, Activation::Softplus, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.mean_layer.fan_out()
    }

    /// Returns `(μ, σ²)`, both `[n, C]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], features: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mu = self.mean_layer.forward(&p[0..2], features)?;
        let var = self.var_layer.forward(&p[2..4], features)?;
        let floor = features.tape().constant(Tensor::scalar(SIGMA_FLOOR));
        Ok((mu, var.add(floor)?))
    }
}

impl Parameterized for GaussianLogitHead {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.mean_layer.params();
        v.extend(self.var_layer.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mean_layer.params_mut();
        v.extend(self.var_layer.params_mut());
        v
    }
}

pub fn logit_head_forward<'t>(head: &GaussianLogitHead, features: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let p = head.bind(features.tape(), false);
    head.forward(&p, features)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Hidden {
    Dense(DenseLayer),
    Dropout(McDropout),
    DropConnect(DropConnectDense),
    Flipout(FlipoutDense),
}

impl Hidden {
    fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>, mode: Mode, rng: &mut RngStream) -> Result<Var<'t>> {
        match self {
            Hidden::Dense(l) => l.forward(p, x),
            Hidden::Dropout(l) => l.forward(x, mode, rng),
            Hidden::DropConnect(l) => l.forward(p, x, mode, rng),
            Hidden::Flipout(l) => l.forward(p, x, mode, rng),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Hidden::Dense(_))
    }
}

impl Parameterized for Hidden {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Hidden::Dense(l) => l.params(),
            Hidden::Dropout(_) => Vec::new(),
            Hidden::DropConnect(l) => l.params(),
            Hidden::Flipout(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Hidden::Dense(l) => l.params_mut(),
            Hidden::Dropout(_) => Vec::new(),
            Hidden::DropConnect(l) => l.params_mut(),
            Hidden::Flipout(l) => l.params_mut(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Regression(GaussianRegressionHead),
    Logit(GaussianLogitHead),
}

impl Parameterized for Head {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Head::Regression(h) => h.params(),
            Head::Logit(h) => h.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Head::Regression(h) => h.params_mut(),
            Head::Logit(h) => h.params_mut(),
        }
    }
}

/// Hidden-layer family used for a trunk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrunkKind {
    Plain,
    Dropout(f64),
    DropConnect(f64),
    Flipout,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub task: Task,
    pub trunk: TrunkKind,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    /// 1 for regression, C for classification.
    pub outputs: usize,
}

/// Head outputs of one forward pass. `variance` is `σ²` for regression
/// and the logit variance for classification.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput<'t> {
    pub mean: Var<'t>,
    pub variance: Var<'t>,
}

/// Plain-value per-input mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Tensor,
    pub variance: Tensor,
}

/// Trunk of hidden layers followed by a two-head output block.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub hidden: Vec<Hidden>,
    pub head: Head,
}

impl Network {
    /// Dropout follows each hidden dense layer; DropConnect and Flipout
    /// replace the hidden dense layers.
    pub fn build(arch: &Architecture, rng: &mut RngStream) -> Result<Self> {
        let mut hidden = Vec::new();
        let mut fan_in = arch.input_dim;
        for _ in 0..arch.depth {
            match arch.trunk {
                TrunkKind::Plain => {
                    hidden.push(Hidden::Dense(DenseLayer::init(fan_in, arch.width, Activation::Relu, rng)))
                }
                TrunkKind::Dropout(p) => {
                    hidden.push(Hidden::Dense(DenseLayer::init(fan_in, arch.width, Activation::Relu, rng)));
                    hidden.push(Hidden::Dropout(McDropout::new(p)?));
                }
                TrunkKind::DropConnect(p) => hidden.push(Hidden::DropConnect(DropConnectDense::new(
                    DenseLayer::init(fan_in, arch.width, Activation::Relu, rng),
                    p,
                )?)),
                TrunkKind::Flipout => hidden.push(Hidden::Flipout(FlipoutDense::init(
                    fan_in,
                    arch.width,
                    Activation::Relu,
                    rng,
                ))),
            }
            fan_in = arch.width;
        }
        let head = match arch.task {
            Task::Regression => Head::Regression(GaussianRegressionHead::init(fan_in, rng)),
            Task::Classification => Head::Logit(GaussianLogitHead::init(fan_in, arch.outputs, rng)),
        };
        Ok(Self { hidden, head })
    }

    pub fn task(&self) -> Task {
        match self.head {
            Head::Regression(_) => Task::Regression,
            Head::Logit(_) => Task::Classification,
        }
    }

    pub fn input_dim(&self) -> usize {
        for h in &self.hidden {
            match h {
                Hidden::Dense(l) => return l.fan_in(),
                Hidden::DropConnect(l) => return l.dense.fan_in(),
                Hidden::Flipout(l) => return l.fan_in(),
                Hidden::Dropout(_) => {}
            }
        }
        match &self.head {
            Head::Regression(h) => h.mean_head.fan_in(),
            Head::Logit(h) => h.mean_layer.fan_in(),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        self.hidden.iter().any(Hidden::is_stochastic)
    }

    /// Runs the network on `x` (`[n, input_dim]`) with bound parameters `p`.
    pub fn forward<'t>(
        &self,
        p: &[Var<'t>],
        x: Var<'t>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<HeadOutput<'t>> {
        if p.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "{} bound parameters for a network with {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        let mut h = x;
        for layer in &self.hidden {
            let k = layer.param_count();
            h = layer.forward(&p[offset..offset + k], h, mode, rng)?;
            offset += k;
        }
        let hp = &p[offset..];
        match &self.head {
            Head::Regression(head) => {
                let (mean, sigma) = head.forward(hp, h)?;
                Ok(HeadOutput {
                    mean,
                    variance: sigma.square(),
                })
            }
            Head::Logit(head) => {
                let (mean, variance) = head.forward(hp, h)?;
                Ok(HeadOutput { mean, variance })
            }
        }
    }

    /// Gradient-free evaluation.
    pub fn predict(&self, x: &Tensor, mode: Mode, rng: &mut RngStream) -> Result<GaussianPrediction> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&p, xv, mode, rng)?;
        Ok(GaussianPrediction {
            mean: out.mean.value(),
            variance: out.variance.value(),
        })
    }
}

impl Parameterized for Network {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.hidden.iter().flat_map(|h| h.params()).collect();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.hidden.iter_mut().flat_map(|h| h.params_mut()).collect();
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn input(n: usize, d: usize, seed: u64) -> Tensor {
        Tensor::gaussian_noise(&[n, d], &mut RngStream::new(seed, 99))
    }

    #[test]
    fn dense_identity_and_constant() {
        let tape = Tape::new();
        let x = tape.constant(input(4, 3, 1));
        let id = DenseLayer::new(Tensor::identity(3), Tensor::zeros(&[3]), Activation::Linear).unwrap();
        assert_eq!(dense_forward(&id, &tape, x).unwrap().value(), x.value());
        let c = DenseLayer::new(Tensor::zeros(&[2, 3]), Tensor::vector(vec![1.5, -2.0]), Activation::Linear)
            .unwrap();
        let y = dense_forward(&c, &tape, x).unwrap().value();
        for i in 0..4 {
            assert_eq!(y.row(i), &[1.5, -2.0]);
        }
        let bad = tape.constant(input(4, 2, 1));
        assert!(matches!(dense_forward(&id, &tape, bad), Err(Error::Dimension(_))));
        assert!(DenseLayer::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3]), Activation::Linear).is_err());
    }

    #[test]
    fn dropout_edge_cases() {
        let tape = Tape::new();
        let x = tape.constant(input(5, 4, 2));
        let mut rng = RngStream::new(0, 0);
        let y = mc_dropout_forward(0.0, x, Mode::Stochastic, &mut rng).unwrap();
        assert_eq!(y.value(), x.value());
        let y = mc_dropout_forward(0.9, x, Mode::Deterministic, &mut rng).unwrap();
        assert_eq!(y.value(), x.value());
        assert!(matches!(mc_dropout_forward(1.0, x, Mode::Stochastic, &mut rng), Err(Error::Parameter(_))));
        assert!(McDropout::new(-0.1).is_err());
        let y = mc_dropout_forward(0.5, x, Mode::Stochastic, &mut rng).unwrap().value();
        for (a, b) in y.data().iter().zip(x.value().data()) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn dropconnect_edge_cases() {
        let mut rng = RngStream::new(3, 0);
        let dense = DenseLayer::init(4, 3, Activation::Relu, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(input(6, 4, 3));
        let want = dense_forward(&dense, &tape, x).unwrap().value();
        let zero = DropConnectDense::new(dense.clone(), 0.0).unwrap();
        assert_eq!(dropconnect_forward(&zero, x, Mode::Stochastic, &mut rng).unwrap().value(), want);
        let some = DropConnectDense::new(dense.clone(), 0.5).unwrap();
        assert_eq!(dropconnect_forward(&some, x, Mode::Deterministic, &mut rng).unwrap().value(), want);
        assert!(DropConnectDense::new(dense, 1.0).is_err());
    }

    #[test]
    fn flipout_zero_sigma_and_variability() {
        let mut rng = RngStream::new(4, 0);
        let mut layer = FlipoutDense::init(3, 5, Activation::Linear, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(input(7, 3, 4));
        let det = flipout_forward(&layer, x, Mode::Deterministic, &mut rng).unwrap().value();
        let a = flipout_forward(&layer, x, Mode::Stochastic, &mut rng).unwrap().value();
        let b = flipout_forward(&layer, x, Mode::Stochastic, &mut rng).unwrap().value();
        assert_ne!(a, b);
        assert_ne!(a, det);
        layer.weight_rho = Tensor::full(&[5, 3], -1.0e4);
        let s = flipout_forward(&layer, x, Mode::Stochastic, &mut rng).unwrap().value();
        assert_eq!(s, det);
    }

    #[test]
    fn regression_head_floor() {
        let head = GaussianRegressionHead {
            mean_head: DenseLayer::new(Tensor::zeros(&[1, 2]), Tensor::zeros(&[1]), Activation::Linear).unwrap(),
            std_head: DenseLayer::new(Tensor::zeros(&[1, 2]), Tensor::zeros(&[1]), Activation::Softplus).unwrap(),
        };
        let tape = Tape::new();
        let f = tape.constant(input(3, 2, 5));
        let (mu, sigma) = regression_head_forward(&head, f).unwrap();
        assert_eq!(mu.value().data(), &[0.0; 3]);
        for s in sigma.value().data() {
            assert!((s - (LN_2 + SIGMA_FLOOR)).abs() < 1e-15);
        }
    }

    #[test]
    fn regression_head_sigma_positive_on_extreme_inputs() {
        let mut rng = RngStream::new(6, 0);
        let head = GaussianRegressionHead::init(4, &mut rng);
        let tape = Tape::new();
        let f = tape.constant(input(50, 4, 6).map(|v| v * 1e4));
        let (_, sigma) = regression_head_forward(&head, f).unwrap();
        assert!(sigma.value().data().iter().all(|&s| s >= SIGMA_FLOOR));
    }

    #[test]
    fn logit_head_shapes_and_variance() {
        let mut rng = RngStream::new(7, 0);
        let mut head = GaussianLogitHead::init(5, 8, &mut rng);
        let tape = Tape::new();
        let f = tape.constant(input(1, 5, 7));
        let (mu, var) = logit_head_forward(&head, f).unwrap();
        assert_eq!(mu.shape(), vec![1, 8]);
        assert_eq!(var.shape(), vec![1, 8]);
        assert!(var.value().data().iter().all(|&v| v >= 0.0));
        head.var_layer.weights = Tensor::zeros(&[8, 5]);
        head.var_layer.bias = Tensor::zeros(&[8]);
        let (_, var) = logit_head_forward(&head, f).unwrap();
        assert!(var.value().data().iter().all(|&v| (v - LN_2).abs() < 1e-5));
    }

    #[test]
    fn network_deterministic_mode_is_pure() {
        for trunk in [TrunkKind::Plain, TrunkKind::Dropout(0.25), TrunkKind::DropConnect(0.1), TrunkKind::Flipout] {
            let arch = Architecture {
                task: Task::Regression,
                trunk,
                input_dim: 1,
                width: 8,
                depth: 2,
                outputs: 1,
            };
            let net = Network::build(&arch, &mut RngStream::new(8, 0)).unwrap();
            let x = input(10, 1, 8);
            let a = net.predict(&x, Mode::Deterministic, &mut RngStream::new(1, 0)).unwrap();
            let b = net.predict(&x, Mode::Deterministic, &mut RngStream::new(2, 0)).unwrap();
            assert_eq!(a, b);
            assert_eq!(net.input_dim(), 1);
            assert_eq!(net.is_stochastic(), trunk != TrunkKind::Plain);
        }
    }
}
