use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use koopman_distill::dataset::{one_hot, Dataset};
use koopman_distill::dictionary::Dictionary;
use koopman_distill::distill::{train_student, DistillConfig};
use koopman_distill::harness::{
    evaluate_accuracy, fit_preprocessing, run_experiment, train_teacher_for_seed, Classifier, DataConfig,
    ExperimentConfig, Method,
};
use koopman_distill::koopman::{naive_pca_pipeline, naive_pipeline, FrontEnd, LinearStudent};
use koopman_distill::teacher::{export_logits, import_logits, TeacherMlp};
use koopman_distill::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Linear Koopman students distilled from MLP teachers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (JSON). Defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the four IDX files; overrides `data.dir`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Replaces the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    /// Replaces the config's method list; repeatable.
    #[arg(long)]
    method: Vec<Method>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher MLP and save it.
    TrainTeacher(Common),
    /// Write teacher logits for the training split.
    ExportLogits {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "")]
        provenance: String,
    },
    /// Least-squares fit on the teacher's hidden layers.
    FitNaive {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Least-squares fit of one-hot labels on lifted PCA features.
    FitNaivePca(Common),
    /// Distill a linear student from a teacher network or a logits file.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "logits")]
        model: Option<PathBuf>,
        #[arg(long)]
        logits: Option<PathBuf>,
    },
    /// Test accuracy of a saved teacher or student.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Multi-seed comparison with CSV and JSON reports.
    Experiment(Common),
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &self.data_dir {
            cfg.data = DataConfig { dir: Some(dir.clone()), ..cfg.data };
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = self.pca_dim {
            cfg.pca_dim = d;
        }
        if let Some(d) = self.degree {
            cfg.degree = d;
        }
        if !self.method.is_empty() {
            cfg.methods = self.method.clone();
        }
        Ok(cfg)
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
    }
}

fn seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds.first().copied().unwrap_or(0)
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.data.load()
}

fn report<C: Classifier>(model: &C, data: &Dataset) -> Result<()> {
    let acc = evaluate_accuracy(model, &data.test_features, &data.test_labels)?;
    println!("test_accuracy {acc}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher(c) => {
            let cfg = c.config()?;
            let data = load_data(&cfg)?;
            let (mlp, log) = train_teacher_for_seed(&cfg, &data, seed(&cfg))?;
            for e in &log {
                eprintln!("epoch {} lr {} loss {} train_acc {}", e.epoch, e.learning_rate, e.loss, e.train_accuracy);
            }
            mlp.save(c.out()?)?;
            report(&mlp, &data)
        }
        Command::ExportLogits { common, model, provenance } => {
            let cfg = common.config()?;
            let data = load_data(&cfg)?;
            let mlp = TeacherMlp::load(&model)?;
            let provenance = if provenance.is_empty() { model.display().to_string() } else { provenance };
            let f = export_logits(&mlp, &data.train_features, &provenance, common.out()?)?;
            eprintln!("wrote {}x{} logits", f.samples(), f.classes());
            Ok(())
        }
        Command::FitNaive { common, model } => {
            let cfg = common.config()?;
            let data = load_data(&cfg)?;
            let mlp = TeacherMlp::load(&model)?;
            let dict = Dictionary::build(cfg.hidden_dictionary(), cfg.max_terms)?;
            let student = naive_pipeline(&mlp, &data.train_features, &dict, cfg.rcond)?;
            student.save(common.out()?)?;
            report(&student, &data)
        }
        Command::FitNaivePca(c) => {
            let cfg = c.config()?;
            let data = load_data(&cfg)?;
            let (pca, scaler) = fit_preprocessing(&data.train_features, cfg.pca_dim)?;
            eprintln!("pca cumulative explained ratio {}", pca.cumulative_explained());
            let dict = Dictionary::build(cfg.pca_dictionary(), cfg.max_terms)?;
            let y = one_hot(&data.train_labels, data.classes)?;
            let student = naive_pca_pipeline(&data.train_features, &y, &pca, &scaler, &dict, cfg.rcond)?;
            student.save(c.out()?)?;
            report(&student, &data)
        }
        Command::Distill { common, model, logits } => {
            let cfg = common.config()?;
            let data = load_data(&cfg)?;
            let teacher_logits = match (model, logits) {
                (Some(m), None) => TeacherMlp::load(m)?.logits(&data.train_features)?,
                (None, Some(l)) => {
                    let f = import_logits(l)?;
                    f.check_against(data.train_features.rows(), data.classes)?;
                    f.logits
                }
                _ => return Err(Error::InvalidArgument("pass exactly one of --model or --logits".into())),
            };
            let (pca, scaler) = fit_preprocessing(&data.train_features, cfg.pca_dim)?;
            eprintln!("pca cumulative explained ratio {}", pca.cumulative_explained());
            let dict = Dictionary::build(cfg.pca_dictionary(), cfg.max_terms)?;
            let dcfg = DistillConfig { seed: seed(&cfg), ..cfg.distill.clone() };
            let (student, log) = train_student(
                FrontEnd::Pca { pca, scaler },
                dict,
                &data.train_features,
                &data.train_labels,
                &teacher_logits,
                None,
                &dcfg,
            )?;
            for e in &log {
                eprintln!("epoch {} lr {} loss {} train_acc {}", e.epoch, e.learning_rate, e.loss, e.train_accuracy);
            }
            student.save(common.out()?)?;
            report(&student, &data)
        }
        Command::Evaluate { common, model } => {
            let cfg = common.config()?;
            let data = load_data(&cfg)?;
            let bytes = std::fs::read(&model).map_err(|e| Error::io(&model, e))?;
            match LinearStudent::from_json(&bytes) {
                Ok(s) => report(&s, &data),
                Err(_) => report(&TeacherMlp::from_json(&bytes)?, &data),
            }
        }
        Command::Experiment(c) => {
            let mut cfg = c.config()?;
            if let Some(out) = &c.out {
                cfg.output.csv = Some(out.clone());
                cfg.output.json = Some(out.with_extension("json"));
            }
            let rep = run_experiment(&cfg)?;
            if let Some(r) = rep.pca_explained {
                println!("pca cumulative explained ratio {r:.4}");
            }
            for s in &rep.summary {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
                println!(
                    "{:<10} mean {} std {} over {} seeds{}",
                    s.method,
                    fmt(s.mean),
                    fmt(s.std),
                    s.seeds.len(),
                    if s.failed > 0 { format!(" ({} failed)", s.failed) } else { String::new() }
                );
            }
            if cfg.output.csv.is_none() {
                print!("{}", rep.to_csv());
            }
            Ok(())
        }
    }
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
