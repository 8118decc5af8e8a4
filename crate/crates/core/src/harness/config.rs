use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dictionary::{DictionarySpec, DEFAULT_MAX_TERMS};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::koopman::DEFAULT_FIT_RCOND;
use crate::teacher::{MlpArchitecture, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The teacher network itself, as a reference row.
    Teacher,
    Naive,
    NaivePca,
    Distill,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Teacher, Method::Naive, Method::NaivePca, Method::Distill];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Teacher => "teacher",
            Method::Naive => "naive",
            Method::NaivePca => "naive-pca",
            Method::Distill => "distill",
        }
    }

    /// Whether the method needs the teacher network (not just its logits).
    pub fn needs_network(self) -> bool {
        matches!(self, Method::Teacher | Method::Naive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Where the teacher comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSource {
    /// Train a fresh teacher per seed.
    Train,
    /// One saved teacher shared by every seed.
    Model { path: PathBuf },
    /// Precomputed training-set logits; only `naive-pca` and `distill` apply.
    Logits { path: PathBuf },
}

/// Dataset location. When `dir` is set, missing file paths default to the
/// usual IDX names inside it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub classes: Option<usize>,
    /// Keep only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

const DEFAULT_NAMES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl DataConfig {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        DataConfig {
            dir: Some(dir.into()),
            ..DataConfig::default()
        }
    }

    pub fn classes(&self) -> usize {
        self.classes.unwrap_or(10)
    }

    /// `[train_images, train_labels, test_images, test_labels]`.
    pub fn paths(&self) -> Result<[PathBuf; 4]> {
        let given = [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels];
        let mut out: [PathBuf; 4] = Default::default();
        for (i, p) in given.into_iter().enumerate() {
            out[i] = match (p, &self.dir) {
                (Some(p), _) => p.clone(),
                (None, Some(dir)) => resolve_default(dir, DEFAULT_NAMES[i]),
                (None, None) => {
                    return Err(Error::InvalidArgument(format!(
                        "data config needs `dir` or an explicit path for {}",
                        DEFAULT_NAMES[i]
                    )))
                }
            };
        }
        Ok(out)
    }

    pub fn load(&self) -> Result<Dataset> {
        let [a, b, c, d] = self.paths()?;
        Dataset::load(&a, &b, &c, &d, self.classes(), self.train_limit, self.test_limit)
    }
}

/// Prefers the plain name, falling back to a gzipped copy.
fn resolve_default(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataConfig,
    pub teacher: TeacherSource,
    pub architecture: MlpArchitecture,
    pub teacher_training: TrainConfig,
    pub pca_dim: usize,
    pub degree: usize,
    pub diagonal_only: bool,
    pub max_terms: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub rcond: f64,
    /// `seed` inside is replaced by each experiment seed.
    pub distill: DistillConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data: DataConfig::default(),
            teacher: TeacherSource::Train,
            architecture: MlpArchitecture::default(),
            teacher_training: TrainConfig::default(),
            pca_dim: 20,
            degree: 2,
            diagonal_only: false,
            max_terms: DEFAULT_MAX_TERMS,
            methods: Method::ALL.to_vec(),
            seeds: vec![0],
            rcond: DEFAULT_FIT_RCOND,
            distill: DistillConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn pca_dictionary(&self) -> DictionarySpec {
        DictionarySpec {
            input_dim: self.pca_dim,
            max_degree: self.degree,
            diagonal_only: self.diagonal_only,
        }
    }

    /// Dictionary over the teacher's first hidden layer.
    pub fn hidden_dictionary(&self) -> DictionarySpec {
        DictionarySpec {
            input_dim: self.architecture.layer_sizes.get(1).copied().unwrap_or(0),
            ..self.pca_dictionary()
        }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods must not be empty".into()));
        }
        if self.pca_dim == 0 {
            return Err(Error::InvalidArgument("pca_dim must be at least 1".into()));
        }
        self.architecture.validate()?;
        self.distill.validate()?;
        if self.architecture.classes() != self.data.classes() {
            return Err(Error::dims(
                "teacher output width",
                self.data.classes(),
                self.architecture.classes(),
            ));
        }
        for p in self.data.paths()? {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("data file {} does not exist", p.display())));
            }
        }
        match &self.teacher {
            TeacherSource::Train => {}
            TeacherSource::Model { path } | TeacherSource::Logits { path } => {
                if !path.exists() {
                    return Err(Error::InvalidArgument(format!("teacher file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }
}
