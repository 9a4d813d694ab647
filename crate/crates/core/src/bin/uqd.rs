use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uqd::calibration::{emit_sweep_csv, sweep, LogitDistSpec, DEFAULT_N_GRID, DEFAULT_TRIALS};
use uqd::disentangle::SamplingSoftmaxConfig;
use uqd::experiments::data::{gen_soft_label_classification, gen_toy_regression, SoftLabelDataset};
use uqd::experiments::eval::{
    default_grid, emit_disentangled_csv, epistemic_entropy_ratio, eval_classification_disentangled,
    eval_regression_disentangled, ClassificationEval, ClassificationReport,
};
use uqd::experiments::train::{train, TrainingData};
use uqd::experiments::TrainConfig;
use uqd::model_io::{load_model, save_model};
use uqd::{Error, Result, RngStream, Task, UqModel};

const EVAL_STREAM: u64 = 10;

#[derive(Parser)]
#[command(name = "uqd", version, about = "Aleatoric/epistemic uncertainty disentanglement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Toy,
    SoftLabel,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset as semicolon-separated CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of soft-label points.
        #[arg(long, default_value_t = 2000)]
        n_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a config file and save it to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Disentangle a trained model on a grid (regression) or test set (classification).
    EvalDisentangle {
        #[arg(long)]
        model: PathBuf,
        /// `start:stop:step`; defaults to 0:15:0.05.
        #[arg(long)]
        grid: Option<String>,
        /// Soft-label CSV from `gen-data`.
        #[arg(long)]
        test_set: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error of the sampling softmax as a function of N.
    SsoftmaxSweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        means: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        stds: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file, or a directory to receive `ssoftmax_<tag>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-5 highest-entropy panel of a classification model.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test_set: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flipout and ensemble model directories for the epistemic entropy ratio.
        #[arg(long, num_args = 2, value_names = ["FLIPOUT", "ENSEMBLE"])]
        compare: Option<Vec<PathBuf>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad grid '{spec}'")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Error::Config(format!("grid '{spec}' is not start:stop:step")));
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(Error::Config(format!("grid '{spec}' is empty")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

fn load_test_set(path: &Path) -> Result<SoftLabelDataset> {
    SoftLabelDataset::read_csv(BufReader::new(File::open(path)?))
}

fn eval_classifier(dir: &Path, test: &SoftLabelDataset, seed: u64) -> Result<(UqModel, TrainConfig, ClassificationEval)> {
    let (model, config) = load_model(dir)?;
    let softmax = SamplingSoftmaxConfig::new(config.sampling_samples)?;
    let eval = eval_classification_disentangled(&model, &config.uq, test, softmax, &RngStream::new(seed, EVAL_STREAM))?;
    Ok((model, config, eval))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            kind,
            seed,
            n_points,
            out,
        } => {
            let mut f = create(&out)?;
            match kind {
                DataKind::Toy => gen_toy_regression(seed).write_csv(&mut f)?,
                DataKind::SoftLabel => gen_soft_label_classification(n_points, seed)?.write_csv(&mut f)?,
            }
            f.flush()?;
        }
        Command::Train { config, out_dir } => {
            let cfg = TrainConfig::load(&config)?;
            let data = match cfg.task {
                Task::Regression => TrainingData::from_toy(&gen_toy_regression(cfg.data_seed)),
                Task::Classification => {
                    TrainingData::from_soft_labels(&gen_soft_label_classification(cfg.n_points, cfg.data_seed)?)
                }
            };
            let trained = train(&cfg, &data)?;
            save_model(&out_dir, &trained, &cfg)?;
            for (seed, h) in trained.seeds.iter().zip(&trained.histories) {
                eprintln!("member seed {seed}: final loss {:.6}", h.last().copied().unwrap_or(f64::NAN));
            }
        }
        Command::EvalDisentangle {
            model,
            grid,
            test_set,
            seed,
            out,
        } => {
            let (m, config) = load_model(&model)?;
            match m.task() {
                Task::Regression => {
                    let xs = grid.as_deref().map(parse_grid).transpose()?.unwrap_or_else(default_grid);
                    let rows = eval_regression_disentangled(&m, &config.uq, &xs, &RngStream::new(seed, EVAL_STREAM))?;
                    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                        std::fs::create_dir_all(dir)?;
                    }
                    emit_disentangled_csv(&rows, &out)?;
                }
                Task::Classification => {
                    let path = test_set.ok_or_else(|| Error::Config("classification needs --test-set".into()))?;
                    let (_, _, eval) = eval_classifier(&model, &load_test_set(&path)?, seed)?;
                    let mut f = create(&out)?;
                    writeln!(f, "index;true_entropy;h_pred;h_ale;h_epi;h_pred_mean_prob")?;
                    for p in &eval.points {
                        writeln!(
                            f,
                            "{};{:.12e};{:.12e};{:.12e};{:.12e};{:.12e}",
                            p.index, p.true_entropy, p.result.h_pred, p.result.h_ale, p.result.h_epi, p.h_pred_mean_prob
                        )?;
                    }
                    f.flush()?;
                    eprintln!("accuracy {:.4}, mean soft CE {:.4}", eval.accuracy, eval.mean_soft_ce);
                }
            }
        }
        Command::SsoftmaxSweep {
            means,
            stds,
            ns,
            trials,
            seed,
            out,
        } => {
            let spec = LogitDistSpec::new(means, stds)?;
            let ns = ns.unwrap_or_else(|| DEFAULT_N_GRID.to_vec());
            let rows = sweep(&spec, &ns, trials, &RngStream::new(seed, 0))?;
            let path = if out.is_dir() {
                out.join(format!("ssoftmax_{}.csv", spec.tag()))
            } else {
                out
            };
            emit_sweep_csv(&rows, &path)?;
        }
        Command::Report {
            model,
            test_set,
            format,
            seed,
            compare,
            out,
        } => {
            let test = load_test_set(&test_set)?;
            let (m, _, eval) = eval_classifier(&model, &test, seed)?;
            let mut report = ClassificationReport::from_eval(m.kind.as_str(), &eval);
            if let Some(dirs) = compare {
                let (_, _, flipout) = eval_classifier(&dirs[0], &test, seed)?;
                let (_, _, ensemble) = eval_classifier(&dirs[1], &test, seed)?;
                report.flipout_ensemble_h_epi_ratio = epistemic_entropy_ratio(&flipout, &ensemble);
            }
            let mut f = create(&out)?;
            match format {
                ReportFormat::Json => writeln!(f, "{}", report.to_json()?)?,
                ReportFormat::Csv => report.write_csv(&mut f)?,
            }
            f.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
