//! Experiment orchestration: per-seed pipelines, evaluation and reports.

pub mod config;
pub mod report;

use std::time::Instant;

pub use config::{DataConfig, ExperimentConfig, Method, OutputConfig, TeacherSource};
pub use report::{mean, population_std, strip_wall_clock, ExperimentReport, MethodSummary, RunRecord, CSV_HEADER};

use crate::dataset::{one_hot, Dataset};
use crate::dictionary::Dictionary;
use crate::distill::{self, DistillConfig};
use crate::error::{Error, Result};
use crate::koopman::{self, FrontEnd, LinearStudent};
use crate::linalg::DenseMatrix;
use crate::preprocess::{self, PcaModel, Scaler};
use crate::teacher::{self, argmax, import_logits, EpochLog, TeacherMlp};

/// Anything that maps a batch of inputs to class logits.
pub trait Classifier {
    fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
}

impl Classifier for TeacherMlp {
    fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        TeacherMlp::logits(self, x)
    }
}

impl Classifier for LinearStudent {
    fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        LinearStudent::logits(self, x)
    }
}

/// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
pub fn evaluate_accuracy<C: Classifier + ?Sized>(model: &C, x: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if x.rows() != labels.len() {
        return Err(Error::dims("evaluate_accuracy", x.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let logits = model.logits(x)?;
    let correct = (0..x.rows()).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
    Ok(correct as f64 / x.rows() as f64)
}

/// PCA followed by standardization, both fitted on `x` only.
pub fn fit_preprocessing(x: &DenseMatrix, pca_dim: usize) -> Result<(PcaModel, Scaler)> {
    let pca = preprocess::fit_pca(x, pca_dim)?;
    let scaler = preprocess::fit_scaler(&preprocess::pca_transform_rows(&pca, x)?)?;
    Ok((pca, scaler))
}

/// Trains a fresh teacher for `seed` under `config`'s settings.
pub fn train_teacher_for_seed(config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<(TeacherMlp, Vec<EpochLog>)> {
    let mut mlp = TeacherMlp::init(config.architecture.clone(), seed)?;
    let log = teacher::train_teacher(&mut mlp, &data.train_features, &data.train_labels, &config.teacher_training, seed)?;
    Ok((mlp, log))
}

/// Teacher network (if any) and its training-set logits for one seed.
struct TeacherState {
    network: Option<TeacherMlp>,
    train_logits: DenseMatrix,
    log: Vec<EpochLog>,
    wall_ms: u128,
}

struct Outcome {
    accuracy: f64,
    epochs: usize,
    log: Vec<EpochLog>,
}

/// Runs every configured method for every seed. Stage failures are recorded
/// per run; only setup errors (bad config, unreadable data) abort.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = config.data.load()?;
    run_experiment_on(config, &data)
}

/// As [`run_experiment`] with the dataset already in memory.
pub fn run_experiment_on(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentReport> {
    let pca_dict = Dictionary::build(config.pca_dictionary(), config.max_terms)?;
    let hidden_dict = Dictionary::build(config.hidden_dictionary(), config.max_terms)?;
    let shared_teacher = match &config.teacher {
        TeacherSource::Model { path } => Some(TeacherMlp::load(path)?),
        _ => None,
    };
    let shared_logits = match &config.teacher {
        TeacherSource::Logits { path } => {
            let f = import_logits(path)?;
            f.check_against(data.train_features.rows(), data.classes)?;
            Some(f.logits)
        }
        _ => None,
    };

    // the fit depends on the training split only, so one fit serves every seed
    let needs_pca = config.methods.iter().any(|m| matches!(m, Method::NaivePca | Method::Distill));
    let preprocessing = if needs_pca {
        let t = Instant::now();
        let r = fit_preprocessing(&data.train_features, config.pca_dim).map_err(|e| e.to_string());
        eprintln!(
            "[{}] pca D={} fitted in {} ms, cumulative explained ratio {}",
            config.name,
            config.pca_dim,
            t.elapsed().as_millis(),
            r.as_ref().map_or("-".into(), |(p, _)| format!("{:.4}", p.cumulative_explained()))
        );
        Some(r)
    } else {
        None
    };
    let needs_teacher = config.methods.iter().any(|&m| m != Method::NaivePca);

    let mut records = Vec::new();
    for &seed in &config.seeds {
        let teacher_state: Option<std::result::Result<TeacherState, String>> = needs_teacher.then(|| {
            let t = Instant::now();
            let (network, log) = match (&config.teacher, &shared_teacher) {
                (TeacherSource::Train, _) => {
                    let (m, log) = train_teacher_for_seed(config, data, seed).map_err(|e| e.to_string())?;
                    (Some(m), log)
                }
                (_, Some(m)) => (Some(m.clone()), Vec::new()),
                _ => (None, Vec::new()),
            };
            let train_logits = match (&network, &shared_logits) {
                (_, Some(l)) => l.clone(),
                (Some(m), None) => m.logits(&data.train_features).map_err(|e| e.to_string())?,
                (None, None) => unreachable!("teacher source provides a network or logits"),
            };
            Ok(TeacherState { network, train_logits, log, wall_ms: t.elapsed().as_millis() })
        });

        for &method in &config.methods {
            let t = Instant::now();
            let (pca_dim, dict) = match method {
                Method::Teacher => (0, None),
                Method::Naive => (hidden_dict.input_dim(), Some(&hidden_dict)),
                Method::NaivePca | Method::Distill => (config.pca_dim, Some(&pca_dict)),
            };
            let outcome = run_method(config, data, seed, method, dict, teacher_state.as_ref(), preprocessing.as_ref());
            let mut wall_ms = t.elapsed().as_millis();
            if method == Method::Teacher {
                if let Some(Ok(ts)) = &teacher_state {
                    wall_ms += ts.wall_ms;
                }
            }
            let (accuracy, epochs, epoch_log, error) = match outcome {
                Ok(o) => (Some(o.accuracy), o.epochs, o.log, None),
                Err(e) => (None, 0, Vec::new(), Some(e)),
            };
            eprintln!(
                "[{}] seed={seed} method={method} accuracy={} ({wall_ms} ms){}",
                config.name,
                accuracy.map_or("-".into(), |a| format!("{:.4}", a)),
                error.as_deref().map_or(String::new(), |e| format!(" error: {e}"))
            );
            records.push(RunRecord {
                seed,
                method,
                pca_dim,
                degree: dict.map_or(0, |d| d.max_degree()),
                dict_size: dict.map_or(0, |d| d.len()),
                accuracy,
                epochs,
                wall_ms,
                epoch_log,
                error,
            });
        }
    }
    let mut report = ExperimentReport::new(config.clone(), records);
    report.pca_explained = preprocessing
        .as_ref()
        .and_then(|p| p.as_ref().ok())
        .map(|(pca, _)| pca.cumulative_explained());
    if let Some(p) = &config.output.csv {
        report.write_csv(p)?;
    }
    if let Some(p) = &config.output.json {
        report.write_json(p)?;
    }
    Ok(report)
}

fn run_method(
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    method: Method,
    dict: Option<&Dictionary>,
    teacher: Option<&std::result::Result<TeacherState, String>>,
    preprocessing: Option<&std::result::Result<(PcaModel, Scaler), String>>,
) -> std::result::Result<Outcome, String> {
    let teacher = || -> std::result::Result<&TeacherState, String> {
        match teacher {
            Some(Ok(t)) => Ok(t),
            Some(Err(e)) => Err(format!("teacher unavailable: {e}")),
            None => Err("teacher not prepared".into()),
        }
    };
    let network = || -> std::result::Result<&TeacherMlp, String> {
        teacher()?
            .network
            .as_ref()
            .ok_or_else(|| format!("method {method} needs a teacher network, not a logits file"))
    };
    let prep = || -> std::result::Result<&(PcaModel, Scaler), String> {
        match preprocessing {
            Some(Ok(p)) => Ok(p),
            Some(Err(e)) => Err(format!("preprocessing failed: {e}")),
            None => Err("preprocessing not prepared".into()),
        }
    };
    let eval = |m: &dyn Classifier| {
        evaluate_accuracy(m, &data.test_features, &data.test_labels).map_err(|e| e.to_string())
    };
    let dict = || dict.ok_or_else(|| "no dictionary".to_string());
    match method {
        Method::Teacher => {
            let t = teacher()?;
            Ok(Outcome { accuracy: eval(network()?)?, epochs: t.log.len(), log: t.log.clone() })
        }
        Method::Naive => {
            let student = koopman::naive_pipeline(network()?, &data.train_features, dict()?, config.rcond)
                .map_err(|e| e.to_string())?;
            Ok(Outcome { accuracy: eval(&student)?, epochs: 0, log: Vec::new() })
        }
        Method::NaivePca => {
            let (pca, scaler) = prep()?;
            let y = one_hot(&data.train_labels, data.classes).map_err(|e| e.to_string())?;
            let student =
                koopman::naive_pca_pipeline(&data.train_features, &y, pca, scaler, dict()?, config.rcond)
                    .map_err(|e| e.to_string())?;
            Ok(Outcome { accuracy: eval(&student)?, epochs: 0, log: Vec::new() })
        }
        Method::Distill => {
            let (pca, scaler) = prep()?;
            let t = teacher()?;
            let cfg = DistillConfig { seed, ..config.distill.clone() };
            let front = FrontEnd::Pca { pca: pca.clone(), scaler: scaler.clone() };
            let (student, log) = distill::train_student(
                front,
                dict()?.clone(),
                &data.train_features,
                &data.train_labels,
                &t.train_logits,
                None,
                &cfg,
            )
            .map_err(|e| e.to_string())?;
            Ok(Outcome { accuracy: eval(&student)?, epochs: log.len(), log })
        }
    }
}
