use std::io::BufReader;

use uqd::experiments::eval::{default_grid, read_disentangled_csv, write_disentangled_csv};
use uqd::experiments::{
    eval_classification_disentangled, eval_regression_disentangled, gen_soft_label_classification, gen_toy_regression,
    train, TrainConfig, TrainingData,
};
use uqd::model_io::{load_model, save_model};
use uqd::{sample_predictions, LossConfig, RngStream, SamplingSoftmaxConfig, Tensor, UqKind};

fn quick_regression(kind: UqKind, loss: LossConfig, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::regression().with_method(kind);
    cfg.loss = loss;
    cfg.epochs = epochs;
    cfg.uq.ensemble_size = 3;
    cfg
}

fn quick_classification(kind: UqKind) -> TrainConfig {
    let mut cfg = TrainConfig::classification().with_method(kind);
    cfg.epochs = 2;
    cfg.hidden_width = 32;
    cfg.sampling_samples = 20;
    cfg.uq.forward_passes = 5;
    cfg.uq.ensemble_size = 2;
    cfg
}

#[test]
fn regression_csv_is_additive_for_every_method_and_loss() {
    let data = TrainingData::from_toy(&gen_toy_regression(0));
    let grid = default_grid();
    for kind in UqKind::ALL {
        for loss in [LossConfig::Nll, LossConfig::BetaNll { beta: 0.5 }] {
            let cfg = quick_regression(kind, loss, 3);
            let trained = train(&cfg, &data).unwrap();
            let rows = eval_regression_disentangled(&trained.model, &cfg.uq, &grid, &RngStream::new(0, 10)).unwrap();
            let mut buf = Vec::new();
            write_disentangled_csv(&rows, &mut buf).unwrap();
            let back = read_disentangled_csv(BufReader::new(&buf[..])).unwrap();
            assert_eq!(back.len(), grid.len());
            for r in &back {
                let total = r.pred_sigma * r.pred_sigma;
                let parts = r.pred_sigma_ale.powi(2) + r.pred_sigma_epi.powi(2);
                assert!(
                    (total - parts).abs() <= 1e-9 * total.max(1.0),
                    "{kind} {}: x = {}: {total} vs {parts}",
                    loss.name(),
                    r.x
                );
            }
            if kind == UqKind::Baseline {
                assert!(back.iter().all(|r| r.pred_sigma_epi == 0.0));
            }
        }
    }
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let data = TrainingData::from_toy(&gen_toy_regression(3));
    for kind in UqKind::ALL {
        let cfg = quick_regression(kind, LossConfig::Nll, 2);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a, b, "{kind}");
        let grid = [0.0, 7.5, 14.0];
        let ra = eval_regression_disentangled(&a.model, &cfg.uq, &grid, &RngStream::new(1, 10)).unwrap();
        let rb = eval_regression_disentangled(&b.model, &cfg.uq, &grid, &RngStream::new(1, 10)).unwrap();
        assert_eq!(ra, rb, "{kind}");
    }
}

#[test]
fn deterministic_methods_ignore_the_evaluation_stream() {
    let data = TrainingData::from_toy(&gen_toy_regression(4));
    let x = Tensor::column(&[1.0, 12.0]);
    for kind in [UqKind::Baseline, UqKind::Ensemble] {
        let cfg = quick_regression(kind, LossConfig::Nll, 2);
        let model = train(&cfg, &data).unwrap().model;
        let a = sample_predictions(&model, &x, &cfg.uq, &RngStream::new(1, 0)).unwrap();
        let b = sample_predictions(&model, &x, &cfg.uq, &RngStream::new(999, 5)).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn stochastic_methods_produce_epistemic_spread() {
    let data = TrainingData::from_toy(&gen_toy_regression(5));
    for kind in [UqKind::McDropout, UqKind::McDropConnect, UqKind::Flipout, UqKind::Ensemble] {
        let cfg = quick_regression(kind, LossConfig::Nll, 2);
        let model = train(&cfg, &data).unwrap().model;
        let rows = eval_regression_disentangled(&model, &cfg.uq, &[2.0, 13.0], &RngStream::new(0, 10)).unwrap();
        assert!(rows.iter().all(|r| r.pred_sigma_epi > 0.0), "{kind}: {rows:?}");
    }
}

#[test]
fn saved_models_reload_identically() {
    let reg = TrainingData::from_toy(&gen_toy_regression(6));
    let test = gen_soft_label_classification(40, 99).unwrap();
    let cls = TrainingData::from_soft_labels(&gen_soft_label_classification(200, 6).unwrap());
    for kind in UqKind::ALL {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_regression(kind, LossConfig::BetaNll { beta: 0.5 }, 1);
        let trained = train(&cfg, &reg).unwrap();
        save_model(dir.path(), &trained, &cfg).unwrap();
        let (model, back) = load_model(dir.path()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(model, trained.model);

        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_classification(kind);
        let trained = train(&cfg, &cls).unwrap();
        save_model(dir.path(), &trained, &cfg).unwrap();
        let (model, back) = load_model(dir.path()).unwrap();
        assert_eq!(model, trained.model);
        let softmax = SamplingSoftmaxConfig::new(back.sampling_samples).unwrap();
        let a = eval_classification_disentangled(&model, &back.uq, &test, softmax, &RngStream::new(0, 10)).unwrap();
        let b = eval_classification_disentangled(&trained.model, &cfg.uq, &test, softmax, &RngStream::new(0, 10))
            .unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn tampered_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_regression(UqKind::Baseline, LossConfig::Nll, 1);
    let trained = train(&cfg, &TrainingData::from_toy(&gen_toy_regression(7))).unwrap();
    save_model(dir.path(), &trained, &cfg).unwrap();
    let path = dir.path().join("config.txt");
    let text = std::fs::read_to_string(&path).unwrap().replace("epochs = 1", "epochs = 2");
    std::fs::write(&path, text).unwrap();
    assert!(load_model(dir.path()).is_err());
}

#[test]
fn classification_eval_is_well_formed() {
    let cls = TrainingData::from_soft_labels(&gen_soft_label_classification(200, 8).unwrap());
    let test = gen_soft_label_classification(30, 80).unwrap();
    let ln8 = 8f64.ln();
    for kind in UqKind::ALL {
        let cfg = quick_classification(kind);
        let model = train(&cfg, &cls).unwrap().model;
        let softmax = SamplingSoftmaxConfig::new(cfg.sampling_samples).unwrap();
        let eval = eval_classification_disentangled(&model, &cfg.uq, &test, softmax, &RngStream::new(0, 10)).unwrap();
        assert_eq!(eval.points.len(), 30);
        for p in &eval.points {
            let r = &p.result;
            for (dist, h) in [(&r.p_pred, r.h_pred), (&r.p_ale, r.h_ale), (&r.p_epi, r.h_epi)] {
                assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!((0.0..=ln8 + 1e-12).contains(&h), "{kind}: {h}");
            }
            if kind == UqKind::Baseline {
                assert!(r.epistemic_logit_var.iter().all(|&v| v == 0.0));
            }
        }
    }
}
