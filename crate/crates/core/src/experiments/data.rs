//! Synthetic datasets.
//!
//! The toy regression target is `y = x·sin(x) + ε₁·x + ε₂` with independent
//! `ε₁, ε₂ ~ N(0, 0.3²)`, so the noise standard deviation at `x` is
//! `0.3·√(x² + 1)`.
//!
//! The soft-label task places eight isotropic Gaussian clusters on a circle.
//! Each point's label is the vote histogram of ten simulated annotators who
//! draw from the point's exact class posterior.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const TOY_NOISE_STD: f64 = 0.3;
pub const TOY_TRAIN_SIZE: usize = 1000;
pub const TOY_OOD_SIZE: usize = 200;
pub const TOY_TRAIN_RANGE: (f64, f64) = (0.0, 10.0);
pub const TOY_OOD_RANGE: (f64, f64) = (10.0, 15.0);

pub fn toy_mean(x: f64) -> f64 {
    x * x.sin()
}

pub fn toy_noise_std(x: f64) -> f64 {
    TOY_NOISE_STD * (x * x + 1.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRegressionDataset {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub ood_x: Vec<f64>,
    pub ood_y: Vec<f64>,
    pub noise_std: f64,
}

fn toy_split(n: usize, (lo, hi): (f64, f64), rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform_range(lo, hi);
        let e1 = TOY_NOISE_STD * rng.normal();
        let e2 = TOY_NOISE_STD * rng.normal();
        xs.push(x);
        ys.push(toy_mean(x) + e1 * x + e2);
    }
    (xs, ys)
}

pub fn gen_toy_regression(seed: u64) -> ToyRegressionDataset {
    let (train_x, train_y) = toy_split(TOY_TRAIN_SIZE, TOY_TRAIN_RANGE, &mut RngStream::new(seed, 0));
    let (ood_x, ood_y) = toy_split(TOY_OOD_SIZE, TOY_OOD_RANGE, &mut RngStream::new(seed, 1));
    ToyRegressionDataset {
        train_x,
        train_y,
        ood_x,
        ood_y,
        noise_std: TOY_NOISE_STD,
    }
}

impl ToyRegressionDataset {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "split;x;y")?;
        for (x, y) in self.train_x.iter().zip(&self.train_y) {
            writeln!(out, "train;{x:.12e};{y:.12e}")?;
        }
        for (x, y) in self.ood_x.iter().zip(&self.ood_y) {
            writeln!(out, "ood;{x:.12e};{y:.12e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut ds = ToyRegressionDataset {
            train_x: Vec::new(),
            train_y: Vec::new(),
            ood_x: Vec::new(),
            ood_y: Vec::new(),
            noise_std: TOY_NOISE_STD,
        };
        let mut lines = input.lines();
        if lines.next().transpose()?.as_deref() != Some("split;x;y") {
            return Err(Error::Format("expected header 'split;x;y'".into()));
        }
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(';').collect();
            let bad = || Error::Format(format!("bad regression row '{line}'"));
            if f.len() != 3 {
                return Err(bad());
            }
            let x: f64 = f[1].parse().map_err(|_| bad())?;
            let y: f64 = f[2].parse().map_err(|_| bad())?;
            match f[0] {
                "train" => {
                    ds.train_x.push(x);
                    ds.train_y.push(y);
                }
                "ood" => {
                    ds.ood_x.push(x);
                    ds.ood_y.push(y);
                }
                _ => return Err(bad()),
            }
        }
        Ok(ds)
    }
}

/// Geometry of the soft-label proxy task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftLabelSpec {
    pub classes: usize,
    pub radius: f64,
    pub cluster_std: f64,
    pub annotators: usize,
}

impl Default for SoftLabelSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            radius: 3.0,
            cluster_std: 1.0,
            annotators: 10,
        }
    }
}

impl SoftLabelSpec {
    pub fn center(&self, k: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * k as f64 / self.classes as f64;
        [self.radius * a.cos(), self.radius * a.sin()]
    }

    /// Exact class posterior under equal priors.
    pub fn posterior(&self, x: [f64; 2]) -> Vec<f64> {
        let s2 = self.cluster_std * self.cluster_std;
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| {
                let c = self.center(k);
                -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * s2)
            })
            .collect();
        let mut p = vec![0.0; self.classes];
        crate::autodiff::softmax_into(&logits, &mut p);
        p
    }

    /// Vote histogram of the annotators, normalized.
    pub fn annotate(&self, posterior: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut votes = vec![0usize; self.classes];
        for _ in 0..self.annotators {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = self.classes - 1;
            for (k, p) in posterior.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            votes[pick] += 1;
        }
        votes.iter().map(|&v| v as f64 / self.annotators as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelDataset {
    pub inputs: Vec<[f64; 2]>,
    pub labels: Vec<Vec<f64>>,
    /// Cluster each point was drawn from.
    pub source_class: Vec<usize>,
    pub classes: usize,
}

pub fn gen_soft_label_classification(n_points: usize, seed: u64) -> Result<SoftLabelDataset> {
    gen_soft_labels(&SoftLabelSpec::default(), n_points, seed)
}

pub fn gen_soft_labels(spec: &SoftLabelSpec, n_points: usize, seed: u64) -> Result<SoftLabelDataset> {
    if n_points == 0 {
        return Err(Error::Parameter("n_points must be >= 1".into()));
    }
    let mut rng = RngStream::new(seed, 0);
    let mut ds = SoftLabelDataset {
        inputs: Vec::with_capacity(n_points),
        labels: Vec::with_capacity(n_points),
        source_class: Vec::with_capacity(n_points),
        classes: spec.classes,
    };
    for _ in 0..n_points {
        let k = rng.below(spec.classes);
        let c = spec.center(k);
        let x = [c[0] + spec.cluster_std * rng.normal(), c[1] + spec.cluster_std * rng.normal()];
        let label = spec.annotate(&spec.posterior(x), &mut rng);
        ds.inputs.push(x);
        ds.labels.push(label);
        ds.source_class.push(k);
    }
    Ok(ds)
}

impl SoftLabelDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_tensor(&self) -> Tensor {
        let data = self.inputs.iter().flat_map(|x| x.iter().copied()).collect();
        Tensor::new(vec![self.len(), 2], data).expect("2-D inputs")
    }

    pub fn label_tensor(&self) -> Tensor {
        let data = self.labels.iter().flatten().copied().collect();
        Tensor::new(vec![self.len(), self.classes], data).expect("label matrix")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let labels: Vec<String> = (0..self.classes).map(|k| format!("p{k}")).collect();
        writeln!(out, "x0;x1;{}", labels.join(";"))?;
        for (x, l) in self.inputs.iter().zip(&self.labels) {
            let ls: Vec<String> = l.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{:.12e};{:.12e};{}", x[0], x[1], ls.join(";"))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format("empty soft-label file".into()))?;
        let cols: Vec<&str> = header.split(';').collect();
        if cols.len() < 3 || cols[0] != "x0" || cols[1] != "x1" {
            return Err(Error::Format("expected header 'x0;x1;p0;...'".into()));
        }
        let classes = cols.len() - 2;
        let mut ds = SoftLabelDataset {
            inputs: Vec::new(),
            labels: Vec::new(),
            source_class: Vec::new(),
            classes,
        };
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(';')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("bad soft-label row '{line}'")))?;
            if vals.len() != classes + 2 {
                return Err(Error::Format(format!("bad soft-label row '{line}'")));
            }
            let label = vals[2..].to_vec();
            ds.source_class.push(crate::stats::argmax(&label));
            ds.inputs.push([vals[0], vals[1]]);
            ds.labels.push(label);
        }
        Ok(ds)
    }
}
