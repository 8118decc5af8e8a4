//! End-to-end runs on a small synthetic IDX dataset, through the library and
//! through the command-line binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use koopman_distill::harness::{run_experiment, DataConfig, ExperimentConfig, Method, TeacherSource, CSV_HEADER};
use koopman_distill::rng::SeededRng;
use koopman_distill::teacher::{export_logits, MlpArchitecture, TeacherMlp};

const SIDE: usize = 6;
const CLASSES: usize = 3;

/// Class `c` lights up band `c` of the image, plus noise.
fn write_split(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let mut images = 0x0803u32.to_be_bytes().to_vec();
    for d in [n as u32, SIDE as u32, SIDE as u32] {
        images.extend_from_slice(&d.to_be_bytes());
    }
    let mut labels = 0x0801u32.to_be_bytes().to_vec();
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let c = i % CLASSES;
        labels.push(c as u8);
        for r in 0..SIDE {
            for _ in 0..SIDE {
                let base = if r / 2 == c { 180.0 } else { 30.0 };
                images.push((base + 40.0 * rng.normal()).clamp(0.0, 255.0) as u8);
            }
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

fn toy_config(dir: &Path) -> ExperimentConfig {
    write_split(dir, "train", 240, 1);
    write_split(dir, "t10k", 60, 2);
    let mut cfg = ExperimentConfig {
        name: "toy".into(),
        data: DataConfig {
            classes: Some(CLASSES),
            ..DataConfig::from_dir(dir)
        },
        architecture: MlpArchitecture {
            layer_sizes: vec![SIDE * SIDE, 5, 5, 5, CLASSES],
            ..MlpArchitecture::default()
        },
        pca_dim: 4,
        degree: 2,
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    cfg.teacher_training.epochs = 4;
    cfg.teacher_training.batch_size = 8;
    cfg.distill.epochs = 4;
    cfg.distill.batch_size = 8;
    cfg
}

#[test]
fn experiment_runs_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.output.csv = Some(dir.path().join("out/report.csv"));
    cfg.output.json = Some(dir.path().join("out/report.json"));
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.partial, "{:?}", report.records);
    assert_eq!(report.records.len(), 8);
    let csv = fs::read_to_string(cfg.output.csv.as_ref().unwrap()).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 9);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(cfg.output.json.as_ref().unwrap()).unwrap()).unwrap();
    assert_eq!(json["summary"].as_array().unwrap().len(), 4);
    let explained = report.pca_explained.unwrap();
    assert!(explained > 0.0 && explained <= 1.0);
    for s in &report.summary {
        let mean = s.accuracies.iter().sum::<f64>() / s.accuracies.len() as f64;
        assert_eq!(s.mean, Some(mean));
    }
    let pca = report.summary_for(Method::NaivePca).unwrap();
    assert!(pca.mean.unwrap() > 0.9, "{pca:?}");
    let naive = report.records.iter().find(|r| r.method == Method::Naive).unwrap();
    assert_eq!((naive.pca_dim, naive.dict_size), (5, 21));
}

#[test]
fn logits_source_supports_pca_methods_and_records_naive_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    let data = cfg.data.load().unwrap();
    let teacher = TeacherMlp::init(cfg.architecture.clone(), 3).unwrap();
    let path = dir.path().join("logits.json");
    export_logits(&teacher, &data.train_features, "toy", &path).unwrap();
    cfg.teacher = TeacherSource::Logits { path };
    cfg.methods = vec![Method::NaivePca, Method::Distill, Method::Naive];
    let report = run_experiment(&cfg).unwrap();
    assert!(report.partial);
    assert!(report.accuracy(1, Method::Distill).is_some());
    let naive = report.records.iter().find(|r| r.method == Method::Naive).unwrap();
    assert!(naive.error.as_deref().unwrap().contains("teacher network"));
}

#[test]
fn logits_with_wrong_count_fail_at_setup() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    let data = cfg.data.load().unwrap();
    let teacher = TeacherMlp::init(cfg.architecture.clone(), 3).unwrap();
    let path = dir.path().join("short.json");
    let idx: Vec<usize> = (0..10).collect();
    export_logits(&teacher, &data.train_features.select_rows(&idx), "short", &path).unwrap();
    cfg.teacher = TeacherSource::Logits { path };
    cfg.methods = vec![Method::Distill];
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn missing_data_fails_before_work() {
    let cfg = ExperimentConfig {
        data: DataConfig::from_dir("/definitely/not/here"),
        ..ExperimentConfig::default()
    };
    assert!(run_experiment(&cfg).is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_koopman-distill"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed:\n{}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn accuracy_of(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("test_accuracy "))
        .expect("accuracy line")
        .parse()
        .unwrap()
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let config = dir.path().join("config.json");
    fs::write(&config, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let with_config = |sub: &str| {
        let mut c = bin();
        c.arg(sub).arg("--config").arg(&config);
        c
    };

    let trained = accuracy_of(&run_ok(with_config("train-teacher").args(["--seed", "4", "--out"]).arg(p("teacher.json"))));
    let evaluated = accuracy_of(&run_ok(with_config("evaluate").arg("--model").arg(p("teacher.json"))));
    assert_eq!(trained, evaluated);

    run_ok(with_config("export-logits").arg("--model").arg(p("teacher.json")).arg("--out").arg(p("logits.json")));
    run_ok(with_config("fit-naive").arg("--model").arg(p("teacher.json")).arg("--out").arg(p("naive.json")));
    run_ok(with_config("fit-naive-pca").arg("--out").arg(p("naive_pca.json")));
    let a = run_ok(with_config("distill").arg("--model").arg(p("teacher.json")).arg("--out").arg(p("d1.json")));
    let b = run_ok(with_config("distill").arg("--logits").arg(p("logits.json")).arg("--out").arg(p("d2.json")));
    assert_eq!(accuracy_of(&a), accuracy_of(&b));
    assert_eq!(fs::read(p("d1.json")).unwrap(), fs::read(p("d2.json")).unwrap());
    for m in ["naive.json", "naive_pca.json", "d1.json"] {
        let acc = accuracy_of(&run_ok(with_config("evaluate").arg("--model").arg(p(m))));
        assert!((0.0..=1.0).contains(&acc));
    }

    let stdout = run_ok(
        with_config("experiment")
            .args(["--seed", "9", "--pca-dim", "3", "--degree", "1", "--method", "naive-pca", "--method", "distill", "--out"])
            .arg(p("rep/report.csv")),
    );
    assert!(stdout.contains("distill"));
    let csv = fs::read_to_string(p("rep/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("9,naive-pca,3,1,4,"), "{}", rows[0]);
    assert!(p("rep/report.json").exists());

    let out = bin().args(["experiment", "--method", "bogus"]).output().unwrap();
    assert!(!out.status.success());
    let out = with_config("fit-naive-pca").output().unwrap();
    assert!(!out.status.success());
}
