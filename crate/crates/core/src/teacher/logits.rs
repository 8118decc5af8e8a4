use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TeacherMlp;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const FORMAT: &str = "koopman-distill/logits";
const VERSION: u32 = 1;

/// Teacher logits for a fixed, ordered set of samples. Lets any external
/// model act as the teacher for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsFile {
    pub provenance: String,
    pub logits: DenseMatrix,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    format: String,
    version: u32,
    samples: usize,
    classes: usize,
    provenance: String,
    /// Row-major, `samples × classes`.
    logits: Vec<f64>,
}

impl LogitsFile {
    pub fn samples(&self) -> usize {
        self.logits.rows()
    }

    pub fn classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        if !self.logits.is_finite() {
            return Err(Error::NonFinite("logits export"));
        }
        let wire = Wire {
            format: FORMAT.into(),
            version: VERSION,
            samples: self.samples(),
            classes: self.classes(),
            provenance: self.provenance.clone(),
            logits: self.logits.as_slice().to_vec(),
        };
        Ok(serde_json::to_vec(&wire)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let wire: Wire = serde_json::from_slice(bytes)?;
        let malformed = |reason: String| Error::Malformed {
            kind: "logits",
            reason,
        };
        if wire.format != FORMAT || wire.version != VERSION {
            return Err(malformed(format!(
                "unsupported format {} v{}",
                wire.format, wire.version
            )));
        }
        let expected = wire
            .samples
            .checked_mul(wire.classes)
            .ok_or_else(|| malformed("samples × classes overflows".into()))?;
        if wire.logits.len() != expected {
            return Err(malformed(format!(
                "header says {}x{} = {expected} values, found {}",
                wire.samples,
                wire.classes,
                wire.logits.len()
            )));
        }
        if wire.logits.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite logit".into()));
        }
        Ok(LogitsFile {
            provenance: wire.provenance,
            logits: DenseMatrix::from_vec(wire.samples, wire.classes, wire.logits)?,
        })
    }

    /// Fails unless there is one row per sample of a dataset with `samples`
    /// rows and `classes` classes.
    pub fn check_against(&self, samples: usize, classes: usize) -> Result<()> {
        if self.samples() != samples || self.classes() != classes {
            return Err(Error::dims(
                "teacher logits",
                format!("{samples}x{classes} (dataset)"),
                format!("{}x{} (logits file)", self.samples(), self.classes()),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates `mlp` on `x` and writes the logits to `path`.
pub fn export_logits(
    mlp: &TeacherMlp,
    x: &DenseMatrix,
    provenance: &str,
    path: impl AsRef<Path>,
) -> Result<LogitsFile> {
    let file = LogitsFile {
        provenance: provenance.to_string(),
        logits: mlp.logits(x)?,
    };
    file.save(path)?;
    Ok(file)
}

pub fn import_logits(path: impl AsRef<Path>) -> Result<LogitsFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    LogitsFile::from_json(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::teacher::MlpArchitecture;

    #[test]
    fn export_import_is_bit_exact() {
        let arch = MlpArchitecture {
            layer_sizes: vec![5, 4, 4, 3],
            ..MlpArchitecture::default()
        };
        let m = TeacherMlp::init(arch, 12).unwrap();
        let mut rng = SeededRng::new(1);
        let x = DenseMatrix::from_fn(7, 5, |_, _| rng.normal() * 1e3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logits.json");
        let written = export_logits(&m, &x, "mlp seed=12 \"quoted\" ✓", &path).unwrap();
        let read = import_logits(&path).unwrap();
        assert_eq!(read.provenance, "mlp seed=12 \"quoted\" ✓");
        let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&read.logits), bits(&written.logits));
    }

    #[test]
    fn count_mismatch_is_detected() {
        let f = LogitsFile {
            provenance: String::new(),
            logits: DenseMatrix::zeros(3, 2),
        };
        assert!(f.check_against(3, 2).is_ok());
        assert!(f.check_against(4, 2).is_err());
        assert!(f.check_against(3, 10).is_err());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let bad_len = br#"{"format":"koopman-distill/logits","version":1,"samples":2,"classes":2,"provenance":"","logits":[1.0,2.0,3.0]}"#;
        assert!(matches!(LogitsFile::from_json(bad_len), Err(Error::Malformed { .. })));
        let bad_fmt = br#"{"format":"other","version":1,"samples":0,"classes":0,"provenance":"","logits":[]}"#;
        assert!(LogitsFile::from_json(bad_fmt).is_err());
        assert!(LogitsFile::from_json(b"not json").is_err());
    }
}
