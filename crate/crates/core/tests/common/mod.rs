#![allow(dead_code)]

use uqd::{RngStream, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero
/// analytically are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

pub fn normal(shape: &[usize], rng: &mut RngStream) -> Tensor {
    Tensor::gaussian_noise(shape, rng)
}

/// Value of `f` with all inputs held constant.
pub fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars).item().unwrap()
}

/// Tape gradients of the scalar `f` with respect to every input.
pub fn analytic<F>(inputs: &[Tensor], f: &F) -> Vec<Tensor>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let g = tape.backward(out).unwrap();
    vars.iter().map(|v| g.get_or_zeros(*v)).collect()
}

/// Central finite differences of `f` with respect to every input element.
pub fn numeric<F>(inputs: &[Tensor], f: &F) -> Vec<Tensor>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut out = Vec::with_capacity(inputs.len());
    for j in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[j].shape());
        for k in 0..inputs[j].len() {
            let mut plus = inputs.to_vec();
            plus[j].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[j].data_mut()[k] -= FD_STEP;
            g.data_mut()[k] = (eval(&plus, f) - eval(&minus, f)) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between tape and finite-difference gradients.
pub fn max_gradient_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let a = analytic(inputs, &f);
    let n = numeric(inputs, &f);
    a.iter()
        .zip(&n)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(x, y)| rel_err(*x, *y)))
        .fold(0.0, f64::max)
}

/// NLL instance: `(μ, σ², y)` columns of length `n`.
pub fn nll_instance(n: usize, rng: &mut RngStream) -> [Tensor; 3] {
    [
        uniform(&[n, 1], -3.0, 3.0, rng),
        uniform(&[n, 1], 0.1, 3.0, rng),
        uniform(&[n, 1], -3.0, 3.0, rng),
    ]
}

/// Worst error of the NLL gradient over `instances` random batches.
pub fn nll_gradient_suite(instances: usize, seed: u64) -> f64 {
    let root = RngStream::new(seed, 0);
    (0..instances)
        .map(|i| {
            let [mu, var, y] = nll_instance(4, &mut root.derive(i as u64));
            max_gradient_error(&[mu, var], move |t, v| {
                uqd::losses::gaussian_nll(v[0], v[1], t.constant(y.clone())).unwrap()
            })
        })
        .fold(0.0, f64::max)
}

/// Worst error of the β-NLL gradient against `σ^{2β} · ∂NLL` with the
/// NLL part differentiated numerically.
pub fn beta_nll_gradient_suite(instances: usize, seed: u64) -> f64 {
    let root = RngStream::new(seed, 1);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = root.derive(i as u64);
        let [mu, var, y] = nll_instance(4, &mut rng);
        let beta = rng.uniform();
        let yc = y.clone();
        let analytic_grads = analytic(&[mu.clone(), var.clone()], &move |t, v| {
            uqd::losses::beta_nll(v[0], v[1], t.constant(yc.clone()), beta).unwrap()
        });
        let yc = y.clone();
        let nll_fd = numeric(&[mu.clone(), var.clone()], &move |t, v| {
            uqd::losses::gaussian_nll(v[0], v[1], t.constant(yc.clone())).unwrap()
        });
        for (a, n) in analytic_grads.iter().zip(&nll_fd) {
            for k in 0..a.len() {
                let weight = var.data()[k].powf(beta);
                worst = worst.max(rel_err(a.data()[k], weight * n.data()[k]));
            }
        }
    }
    worst
}

/// Worst error of soft CE through the sampling softmax with frozen noise,
/// differentiated in the logit means and variances.
pub fn sampling_softmax_ce_gradient_suite(instances: usize, seed: u64) -> f64 {
    let root = RngStream::new(seed, 2);
    (0..instances)
        .map(|i| {
            let mut rng = root.derive(i as u64);
            let (n, c, samples) = (3, 4, 16);
            let mu = uniform(&[n, c], -2.0, 2.0, &mut rng);
            let var = uniform(&[n, c], 0.05, 2.0, &mut rng);
            let noise = normal(&[samples, n, c], &mut rng);
            let raw = uniform(&[n, c], 0.0, 1.0, &mut rng);
            let mut target = raw.clone();
            for r in 0..n {
                let s: f64 = raw.row(r).iter().sum();
                for k in 0..c {
                    target.data_mut()[r * c + k] /= s;
                }
            }
            max_gradient_error(&[mu, var], move |t, v| {
                let p = uqd::disentangle::sampling_softmax_var(v[0], v[1], &noise).unwrap();
                uqd::losses::soft_cross_entropy(p, t.constant(target.clone())).unwrap()
            })
        })
        .fold(0.0, f64::max)
}
