//! End-to-end acceptance suite. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use uqd::calibration::{sweep, LogitDistSpec, DEFAULT_N_GRID};
use uqd::experiments::eval::{default_grid, ClassificationReport};
use uqd::experiments::{
    eval_classification_disentangled, eval_regression_disentangled, gen_soft_label_classification, gen_toy_regression,
    train, RegressionRow, TrainConfig, TrainedModel, TrainingData,
};
use uqd::model_io::save_model;
use uqd::stats::{pearson, spearman};
use uqd::{
    disentangle_regression, sampling_softmax, LossConfig, RegressionSamples, RngStream, SamplingSoftmaxConfig, UqKind,
};

const FIG2_TOLERANCE: f64 = 0.02;
const FIG2_SAMPLES: usize = 100_000;
const MISS_TRIALS: usize = 10_000;
const MISS_LIMIT: f64 = 0.005;
const SPEARMAN_LIMIT: f64 = -0.9;
const ADDITIVITY_CASES: usize = 1000;
const ADDITIVITY_TOLERANCE: f64 = 1e-9;
const GRADIENT_INSTANCES: usize = 100;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const OOD_RATIO: f64 = 2.0;
const HETERO_PEARSON: f64 = 0.8;
const CLASSIFICATION_PEARSON: f64 = 0.3;
const TEST_POINTS: usize = 600;
const TEST_SEED: u64 = 7_000;
const NORMALIZATION_TOLERANCE: f64 = 1e-9;
const EVAL_STREAM: u64 = 10;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, id: &'static str, name: &'static str, pass: bool, detail: String) {
    println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome { id, name, pass, detail });
}

fn fig2() -> (bool, String) {
    let means = [[50.0, 10.0], [50.0, 50.0], [50.0, 100.0]];
    let stds = [[0.0, 1.0], [0.0, 50.0], [0.0, 100.0]];
    let expected = [
        [[1.0, 0.0], [0.79, 0.21], [0.66, 0.34]],
        [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
        [[0.0, 1.0], [0.16, 0.84], [0.31, 0.69]],
    ];
    let root = RngStream::new(0, 2);
    let mut worst: f64 = 0.0;
    let mut cells = Vec::new();
    for (i, mu) in means.iter().enumerate() {
        for (j, sd) in stds.iter().enumerate() {
            let var = [sd[0] * sd[0], sd[1] * sd[1]];
            let cfg = SamplingSoftmaxConfig::new(FIG2_SAMPLES).unwrap();
            let p = sampling_softmax(mu, &var, cfg, &mut root.derive((3 * i + j) as u64)).unwrap();
            for k in 0..2 {
                worst = worst.max((p[k] - expected[i][j][k]).abs());
            }
            cells.push(format!("[{:.3},{:.3}]", p[0], p[1]));
        }
    }
    (
        worst <= FIG2_TOLERANCE,
        format!("max |p - target| = {worst:.4} (tol {FIG2_TOLERANCE}); cells {}", cells.join(" ")),
    )
}

fn calibration() -> (bool, String) {
    let spec = LogitDistSpec::new(vec![10.0, 0.0], vec![10.0, 10.0]).unwrap();
    let rows = sweep(&spec, &DEFAULT_N_GRID, MISS_TRIALS, &RngStream::new(0, 0)).unwrap();
    let miss = rows.iter().find(|r| r.num_samples == 100).unwrap().mean_miss;
    let ns: Vec<f64> = rows.iter().map(|r| r.num_samples as f64).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.mean_error).collect();
    let rho = spearman(&ns, &errs);
    (
        miss < MISS_LIMIT && rho < SPEARMAN_LIMIT,
        format!("mean_miss(N=100) = {miss:.5} (< {MISS_LIMIT}), Spearman(N, mean_error) = {rho:.4} (< {SPEARMAN_LIMIT})"),
    )
}

fn additivity() -> (bool, String) {
    let root = RngStream::new(0, 3);
    let mut worst: f64 = 0.0;
    for i in 0..ADDITIVITY_CASES {
        let mut rng = root.derive(i as u64);
        let m = 1 + rng.below(50);
        let scale = 10f64.powf(rng.uniform_range(-3.0, 4.0));
        let s = RegressionSamples {
            means: (0..m).map(|_| scale * rng.normal()).collect(),
            variances: (0..m).map(|_| scale * rng.uniform()).collect(),
        };
        let d = disentangle_regression(&s).unwrap();
        let total = d.predictive_variance;
        let gap = (total - (d.aleatoric_variance + d.epistemic_variance)).abs() / total.max(1.0);
        worst = worst.max(gap);
    }
    (
        worst <= ADDITIVITY_TOLERANCE,
        format!("max |σ²* - (ale + epi)| / max(1, σ²*) = {worst:.3e} over {ADDITIVITY_CASES} sets"),
    )
}

fn gradients() -> (bool, String) {
    let nll = common::nll_gradient_suite(GRADIENT_INSTANCES, 11);
    let beta = common::beta_nll_gradient_suite(GRADIENT_INSTANCES, 12);
    let ce = common::sampling_softmax_ce_gradient_suite(GRADIENT_INSTANCES, 13);
    (
        nll.max(beta).max(ce) < GRADIENT_TOLERANCE,
        format!("max relative error: NLL {nll:.2e}, β-NLL vs σ^(2β)·FD(NLL) {beta:.2e}, soft CE {ce:.2e}"),
    )
}

fn mean_over(rows: &[RegressionRow], lo: f64, hi: f64, f: impl Fn(&RegressionRow) -> f64) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.x >= lo && r.x <= hi).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn regression_model(kind: UqKind, loss: LossConfig) -> (TrainConfig, TrainedModel) {
    let cfg = TrainConfig {
        loss,
        ..TrainConfig::regression().with_method(kind)
    };
    let data = TrainingData::from_toy(&gen_toy_regression(cfg.data_seed));
    let trained = train(&cfg, &data).unwrap();
    (cfg, trained)
}

fn ood(baseline_rows: &[RegressionRow]) -> (bool, String) {
    let (cfg, trained) = regression_model(UqKind::Ensemble, LossConfig::BetaNll { beta: 0.5 });
    let rows =
        eval_regression_disentangled(&trained.model, &cfg.uq, &default_grid(), &RngStream::new(0, EVAL_STREAM)).unwrap();
    let inside = mean_over(&rows, 1.0, 9.0, |r| r.pred_sigma_epi);
    let outside = mean_over(&rows, 11.0, 15.0, |r| r.pred_sigma_epi);
    let baseline_zero = baseline_rows.iter().all(|r| r.pred_sigma_epi == 0.0);
    (
        outside >= OOD_RATIO * inside && baseline_zero,
        format!(
            "epistemic std mean [11,15] = {outside:.4}, [1,9] = {inside:.4}, ratio {:.2} (>= {OOD_RATIO}); baseline epistemic identically 0: {baseline_zero}",
            outside / inside
        ),
    )
}

fn heteroscedastic(rows: &[RegressionRow]) -> (bool, String) {
    let inside: Vec<&RegressionRow> = rows.iter().filter(|r| r.x <= 10.0).collect();
    let ale: Vec<f64> = inside.iter().map(|r| r.pred_sigma_ale).collect();
    let truth: Vec<f64> = inside.iter().map(|r| 0.3 * (r.x * r.x + 1.0).sqrt()).collect();
    let r = pearson(&ale, &truth);
    (
        r > HETERO_PEARSON,
        format!("Pearson(aleatoric std, 0.3·sqrt(x²+1)) = {r:.4} (> {HETERO_PEARSON}) over {} grid points", ale.len()),
    )
}

fn classification_model(kind: UqKind, dir: &Path) -> (TrainConfig, TrainedModel) {
    let cfg = TrainConfig::classification().with_method(kind);
    let data = TrainingData::from_soft_labels(&gen_soft_label_classification(cfg.n_points, cfg.data_seed).unwrap());
    let trained = train(&cfg, &data).unwrap();
    save_model(dir, &trained, &cfg).unwrap();
    (cfg, trained)
}

fn dropout_classification(cfg: &TrainConfig, trained: &TrainedModel) -> (bool, String) {
    let test = gen_soft_label_classification(TEST_POINTS, TEST_SEED).unwrap();
    let softmax = SamplingSoftmaxConfig::new(cfg.sampling_samples).unwrap();
    let eval = eval_classification_disentangled(&trained.model, &cfg.uq, &test, softmax, &RngStream::new(0, EVAL_STREAM))
        .unwrap();
    let r = eval.aleatoric_true_entropy_pearson();
    (
        r > CLASSIFICATION_PEARSON && eval.points.len() >= 500,
        format!(
            "Pearson(H_ale, true entropy) = {r:.4} (> {CLASSIFICATION_PEARSON}) over {} points; accuracy {:.3}",
            eval.points.len(),
            eval.accuracy
        ),
    )
}

fn report_panels(work: &Path, dropout: &Path, flipout: &Path, ensemble: &Path) -> (bool, String) {
    let test = work.join("test.csv");
    let mut f = std::fs::File::create(&test).unwrap();
    gen_soft_label_classification(TEST_POINTS, TEST_SEED).unwrap().write_csv(&mut f).unwrap();
    let out = work.join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_uqd"))
        .arg("report")
        .arg("--model")
        .arg(dropout)
        .arg("--test-set")
        .arg(&test)
        .arg("--compare")
        .arg(flipout)
        .arg(ensemble)
        .arg("--out")
        .arg(&out)
        .env_remove("UQD_SEED")
        .status()
        .unwrap();
    if !status.success() {
        return (false, format!("report command failed with {status}"));
    }
    let report = ClassificationReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let ln8 = 8f64.ln();
    let mut ok = report.panels.len() == 5;
    let mut worst_norm: f64 = 0.0;
    for p in &report.panels {
        for (dist, h) in [
            (&p.true_label, p.true_entropy),
            (&p.p_pred, p.h_pred),
            (&p.p_ale, p.h_ale),
            (&p.p_epi, p.h_epi),
        ] {
            ok &= dist.len() == 8 && (0.0..=ln8).contains(&h);
            worst_norm = worst_norm.max((dist.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ok &= worst_norm <= NORMALIZATION_TOLERANCE;
    let ratio = report
        .flipout_ensemble_h_epi_ratio
        .map_or("n/a".to_string(), |r| format!("{r:.4}"));
    (
        ok,
        format!(
            "{} panels, entropies in [0, ln 8], max |Σp - 1| = {worst_norm:.2e}; diagnostic H_epi(Flipout)/H_epi(Ensemble) = {ratio} (non-binding)",
            report.panels.len()
        ),
    )
}

fn timed<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    eprintln!("  {label}: {:.1}s", start.elapsed().as_secs_f64());
    out
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let (pass, detail) = timed("sampling softmax reference table", fig2);
    report(&mut results, "C1", "sampling softmax reference table", pass, detail);

    let (pass, detail) = timed("sample-count calibration", calibration);
    report(&mut results, "C2", "sample-count calibration", pass, detail);

    let (pass, detail) = timed("variance additivity", additivity);
    report(&mut results, "C3", "variance additivity", pass, detail);

    let (pass, detail) = timed("gradient suite", gradients);
    report(&mut results, "C4", "gradient suite", pass, detail);

    let (base_cfg, baseline) = timed("train baseline regression", || regression_model(UqKind::Baseline, LossConfig::Nll));
    let base_rows =
        eval_regression_disentangled(&baseline.model, &base_cfg.uq, &default_grid(), &RngStream::new(0, EVAL_STREAM))
            .unwrap();

    let (pass, detail) = timed("ensemble OOD epistemic", || ood(&base_rows));
    report(&mut results, "C5", "ensemble OOD epistemic uncertainty", pass, detail);

    let (pass, detail) = heteroscedastic(&base_rows);
    report(&mut results, "C6", "heteroscedastic aleatoric std", pass, detail);

    let work = tempfile::tempdir().unwrap();
    let dirs = ["dropout", "flipout", "ensemble"].map(|m| work.path().join(m));
    let (drop_cfg, dropout) = timed("train dropout classifier", || classification_model(UqKind::McDropout, &dirs[0]));
    let (pass, detail) = timed("dropout classification eval", || dropout_classification(&drop_cfg, &dropout));
    report(&mut results, "C7", "dropout aleatoric entropy tracks label entropy", pass, detail);

    timed("train flipout classifier", || classification_model(UqKind::Flipout, &dirs[1]));
    timed("train ensemble classifier", || classification_model(UqKind::Ensemble, &dirs[2]));
    let (pass, detail) = timed("report", || report_panels(work.path(), &dirs[0], &dirs[1], &dirs[2]));
    report(&mut results, "C8", "report panels", pass, detail);

    let failed: Vec<&Outcome> = results.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    for o in &failed {
        println!("  failed {} {}: {}", o.id, o.name, o.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
