//! Evaluation drivers and their CSV/JSON outputs.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disentangle::{
    classification_uncertainty, disentangle_regression, entropy, mean_probability_prediction,
    ClassificationDisentangled, SamplingSoftmaxConfig,
};
use crate::error::{Error, Result};
use crate::losses::soft_cross_entropy_value;
use crate::nn::Task;
use crate::rng::RngStream;
use crate::stats::{argmax, mean, pearson};
use crate::tensor::Tensor;
use crate::uq::{sample_predictions, UqMethodConfig, UqModel};

use super::data::SoftLabelDataset;

pub const REGRESSION_CSV_HEADER: &str = "x;pred_mu;pred_sigma;pred_sigma_ale;pred_sigma_epi";
pub const PANEL_SIZE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionRow {
    pub x: f64,
    pub pred_mu: f64,
    pub pred_sigma: f64,
    pub pred_sigma_ale: f64,
    pub pred_sigma_epi: f64,
}

/// `0, 0.05, ..., 15`.
pub fn default_grid() -> Vec<f64> {
    (0..=300).map(|i| i as f64 * 0.05).collect()
}

pub fn eval_regression_disentangled(
    model: &UqModel,
    config: &UqMethodConfig,
    grid: &[f64],
    rng: &RngStream,
) -> Result<Vec<RegressionRow>> {
    if model.task() != Task::Regression {
        return Err(Error::Contract("regression evaluation of a classifier".into()));
    }
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    let samples = sample_predictions(model, &Tensor::column(grid), config, rng)?;
    grid.iter()
        .zip(&samples)
        .map(|(&x, s)| {
            let d = disentangle_regression(s.as_regression()?)?;
            Ok(RegressionRow {
                x,
                pred_mu: d.mean,
                pred_sigma: d.predictive_variance.sqrt(),
                pred_sigma_ale: d.aleatoric_variance.sqrt(),
                pred_sigma_epi: d.epistemic_variance.sqrt(),
            })
        })
        .collect()
}

pub fn write_disentangled_csv<W: Write>(rows: &[RegressionRow], mut out: W) -> Result<()> {
    writeln!(out, "{REGRESSION_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:.12e};{:.12e};{:.12e};{:.12e};{:.12e}",
            r.x, r.pred_mu, r.pred_sigma, r.pred_sigma_ale, r.pred_sigma_epi
        )?;
    }
    Ok(())
}

pub fn emit_disentangled_csv(rows: &[RegressionRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Contract("no rows to emit".into()));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_disentangled_csv(rows, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_disentangled_csv<R: BufRead>(input: R) -> Result<Vec<RegressionRow>> {
    let mut lines = input.lines();
    if lines.next().transpose()?.as_deref() != Some(REGRESSION_CSV_HEADER) {
        return Err(Error::Format(format!("expected header '{REGRESSION_CSV_HEADER}'")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let v = line
            .split(';')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("bad row '{line}'")))?;
        if v.len() != 5 {
            return Err(Error::Format(format!("bad row '{line}'")));
        }
        rows.push(RegressionRow {
            x: v[0],
            pred_mu: v[1],
            pred_sigma: v[2],
            pred_sigma_ale: v[3],
            pred_sigma_epi: v[4],
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationPoint {
    pub index: usize,
    pub input: Vec<f64>,
    pub true_label: Vec<f64>,
    pub true_entropy: f64,
    pub result: ClassificationDisentangled,
    /// Entropy of the mean over passes of per-pass probabilities.
    pub h_pred_mean_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationEval {
    pub points: Vec<ClassificationPoint>,
    pub accuracy: f64,
    pub mean_soft_ce: f64,
}

impl ClassificationEval {
    /// The `k` points of highest true-label entropy, ties broken by index.
    pub fn top_by_true_entropy(&self, k: usize) -> Vec<&ClassificationPoint> {
        let mut v: Vec<&ClassificationPoint> = self.points.iter().collect();
        v.sort_by(|a, b| {
            b.true_entropy
                .total_cmp(&a.true_entropy)
                .then(a.index.cmp(&b.index))
        });
        v.truncate(k);
        v
    }

    pub fn mean_h_epi(&self) -> f64 {
        mean(&self.points.iter().map(|p| p.result.h_epi).collect::<Vec<_>>())
    }

    /// Pearson correlation of `H_ale` with the true-label entropy.
    pub fn aleatoric_true_entropy_pearson(&self) -> f64 {
        let h: Vec<f64> = self.points.iter().map(|p| p.result.h_ale).collect();
        let t: Vec<f64> = self.points.iter().map(|p| p.true_entropy).collect();
        pearson(&h, &t)
    }
}

/// Per-point disentanglement on a labelled set.
///
/// Pass samples come from `rng.derive(0)`; point `i` draws its shared
/// sampling-softmax noise from `rng.derive(1).derive(i)`.
pub fn eval_classification_disentangled(
    model: &UqModel,
    config: &UqMethodConfig,
    dataset: &SoftLabelDataset,
    softmax: SamplingSoftmaxConfig,
    rng: &RngStream,
) -> Result<ClassificationEval> {
    if model.task() != Task::Classification {
        return Err(Error::Contract("classification evaluation of a regressor".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptySamples);
    }
    let samples = sample_predictions(model, &dataset.input_tensor(), config, &rng.derive(0))?;
    let noise_root = rng.derive(1);
    let diag_root = rng.derive(2);
    let points = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let logits = s.as_logits()?;
            let result = classification_uncertainty(logits, softmax, &mut noise_root.derive(i as u64))?;
            let (_, h_mean) = mean_probability_prediction(logits, softmax, &mut diag_root.derive(i as u64))?;
            let label = dataset.labels[i].clone();
            Ok(ClassificationPoint {
                index: i,
                input: dataset.inputs[i].to_vec(),
                true_entropy: entropy(&label)?,
                true_label: label,
                result,
                h_pred_mean_prob: h_mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = points.len() as f64;
    let correct = points
        .iter()
        .filter(|p| argmax(&p.result.p_pred) == argmax(&p.true_label))
        .count();
    let ce = points
        .iter()
        .map(|p| soft_cross_entropy_value(&p.result.p_pred, &p.true_label))
        .sum::<f64>();
    Ok(ClassificationEval {
        points,
        accuracy: correct as f64 / n,
        mean_soft_ce: ce / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub rank: usize,
    pub index: usize,
    pub input: Vec<f64>,
    pub true_label: Vec<f64>,
    pub true_entropy: f64,
    pub p_pred: Vec<f64>,
    pub p_ale: Vec<f64>,
    pub p_epi: Vec<f64>,
    pub h_pred: f64,
    pub h_ale: f64,
    pub h_epi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub method: String,
    pub test_points: usize,
    pub accuracy: f64,
    pub mean_soft_ce: f64,
    pub mean_h_ale: f64,
    pub mean_h_epi: f64,
    pub h_ale_true_entropy_pearson: f64,
    pub panels: Vec<PanelEntry>,
    /// `H_epi(Flipout) / H_epi(Ensemble)` over the test set, when both are known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flipout_ensemble_h_epi_ratio: Option<f64>,
}

impl ClassificationReport {
    pub fn from_eval(method: &str, eval: &ClassificationEval) -> Self {
        let panels = eval
            .top_by_true_entropy(PANEL_SIZE)
            .into_iter()
            .enumerate()
            .map(|(rank, p)| PanelEntry {
                rank: rank + 1,
                index: p.index,
                input: p.input.clone(),
                true_label: p.true_label.clone(),
                true_entropy: p.true_entropy,
                p_pred: p.result.p_pred.clone(),
                p_ale: p.result.p_ale.clone(),
                p_epi: p.result.p_epi.clone(),
                h_pred: p.result.h_pred,
                h_ale: p.result.h_ale,
                h_epi: p.result.h_epi,
            })
            .collect();
        Self {
            method: method.to_string(),
            test_points: eval.points.len(),
            accuracy: eval.accuracy,
            mean_soft_ce: eval.mean_soft_ce,
            mean_h_ale: mean(&eval.points.iter().map(|p| p.result.h_ale).collect::<Vec<_>>()),
            mean_h_epi: eval.mean_h_epi(),
            h_ale_true_entropy_pearson: eval.aleatoric_true_entropy_pearson(),
            panels,
            flipout_ensemble_h_epi_ratio: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// One line per panel and distribution: `rank;index;kind;entropy;p0;...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let classes = self.panels.first().map_or(0, |p| p.p_pred.len());
        let cols: Vec<String> = (0..classes).map(|k| format!("p{k}")).collect();
        writeln!(out, "rank;index;kind;entropy;{}", cols.join(";"))?;
        for p in &self.panels {
            for (kind, h, dist) in [
                ("true", p.true_entropy, &p.true_label),
                ("pred", p.h_pred, &p.p_pred),
                ("ale", p.h_ale, &p.p_ale),
                ("epi", p.h_epi, &p.p_epi),
            ] {
                let vals: Vec<String> = dist.iter().map(|v| format!("{v:.12e}")).collect();
                writeln!(out, "{};{};{kind};{h:.12e};{}", p.rank, p.index, vals.join(";"))?;
            }
        }
        Ok(())
    }
}

/// `H_epi(Flipout) / H_epi(Ensemble)`; `None` when the ensemble mean is zero.
pub fn epistemic_entropy_ratio(flipout: &ClassificationEval, ensemble: &ClassificationEval) -> Option<f64> {
    let d = ensemble.mean_h_epi();
    (d > 0.0).then(|| flipout.mean_h_epi() / d)
}
