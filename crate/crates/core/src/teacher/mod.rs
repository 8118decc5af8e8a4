//! The teacher: a fully connected ReLU network trained with AdaDelta on
//! softmax cross-entropy, plus logits import/export for external teachers.

pub mod adadelta;
mod logits;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::shuffled_batch_indices;
use crate::distill::softmax_t;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::rng::SeededRng;

pub use adadelta::{AdaDeltaConfig, AdaDeltaState};
pub use logits::{export_logits, import_logits, LogitsFile};

const MODEL_FORMAT: &str = "koopman-distill/teacher";
const MODEL_VERSION: u32 = 1;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub layer_sizes: Vec<usize>,
    /// No ReLU after the first hidden layer.
    #[serde(default = "yes")]
    pub first_hidden_linear: bool,
    /// No ReLU on the logits.
    #[serde(default = "yes")]
    pub output_linear: bool,
    #[serde(default = "yes")]
    pub use_bias: bool,
}

fn yes() -> bool {
    true
}

impl Default for MlpArchitecture {
    /// `(784, 20, 20, 20, 20, 20, 10)` with a linear first hidden layer.
    fn default() -> Self {
        MlpArchitecture {
            layer_sizes: vec![784, 20, 20, 20, 20, 20, 10],
            first_hidden_linear: true,
            output_linear: true,
            use_bias: true,
        }
    }
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least 3 layer sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive: {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn relu_after(&self, layer: usize) -> bool {
        let last = self.depth() - 1;
        !((layer == 0 && self.first_hidden_linear) || (layer == last && self.output_linear))
    }
}

/// `out = W · in + b`, with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

impl DenseLayer {
    fn apply(&self, input: &DenseMatrix, relu: bool) -> Result<DenseMatrix> {
        let mut out = linalg::matmul_transpose_b(input, &self.weight)?;
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            if let Some(b) = &self.bias {
                for (o, &bj) in row.iter_mut().zip(b) {
                    *o += bj;
                }
            }
            if relu {
                row.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(out)
    }

    fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherMlp {
    pub architecture: MlpArchitecture,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: DenseMatrix,
    /// Post-activation values of each hidden layer; `hidden[0]` is `z₁`,
    /// the last entry is `z_L`.
    pub hidden: Vec<DenseMatrix>,
}

/// Gradient of the mean cross-entropy with respect to every layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub correct: usize,
    pub layers: Vec<DenseLayer>,
}

impl TeacherMlp {
    /// Kaiming-uniform weights, `U(−√(6/fan_in), √(6/fan_in))`, and zero
    /// biases. Deterministic in `seed`.
    pub fn init(architecture: MlpArchitecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = SeededRng::derive(seed, INIT_STREAM);
        let layers = architecture
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                DenseLayer {
                    weight: DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.uniform(-bound, bound)),
                    bias: architecture.use_bias.then(|| vec![0.0; fan_out]),
                }
            })
            .collect();
        Ok(TeacherMlp {
            architecture,
            layers,
        })
    }

    /// Builds a model from explicit layers, checking shapes against the
    /// architecture.
    pub fn from_layers(architecture: MlpArchitecture, layers: Vec<DenseLayer>) -> Result<Self> {
        architecture.validate()?;
        if layers.len() != architecture.depth() {
            return Err(Error::dims("TeacherMlp::from_layers", architecture.depth(), layers.len()));
        }
        for (l, (layer, w)) in layers.iter().zip(architecture.layer_sizes.windows(2)).enumerate() {
            if layer.weight.shape() != (w[1], w[0]) {
                return Err(Error::dims(
                    "TeacherMlp::from_layers",
                    format!("layer {l} weight {}x{}", w[1], w[0]),
                    format!("{:?}", layer.weight.shape()),
                ));
            }
            match (&layer.bias, architecture.use_bias) {
                (Some(b), true) if b.len() == w[1] => {}
                (None, false) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {l} bias does not match use_bias = {}",
                        architecture.use_bias
                    )))
                }
            }
        }
        Ok(TeacherMlp {
            architecture,
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn first_layer(&self) -> &DenseLayer {
        &self.layers[0]
    }

    pub fn output_layer(&self) -> &DenseLayer {
        self.layers.last().expect("validated depth")
    }

    /// Post-activation outputs of every layer, logits last.
    fn activations(&self, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        if x.cols() != self.architecture.input_dim() {
            return Err(Error::dims("forward", self.architecture.input_dim(), x.cols()));
        }
        let mut acts: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap_or(x);
            let out = layer.apply(input, self.architecture.relu_after(l))?;
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<ForwardPass> {
        let mut acts = self.activations(x)?;
        let logits = acts.pop().expect("depth >= 2");
        Ok(ForwardPass {
            logits,
            hidden: acts,
        })
    }

    pub fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward(x)?.logits)
    }

    /// Mean softmax cross-entropy and its gradient by backpropagation.
    pub fn gradients(&self, x: &DenseMatrix, labels: &[usize]) -> Result<Gradients> {
        let b = x.rows();
        if labels.len() != b {
            return Err(Error::dims("gradients", b, labels.len()));
        }
        let classes = self.architecture.classes();
        let acts = self.activations(x)?;
        let logits = acts.last().expect("depth >= 2");

        let mut delta = DenseMatrix::zeros(b, classes);
        let mut loss = 0.0;
        let mut correct = 0;
        for i in 0..b {
            let y = logits.row(i);
            let label = labels[i];
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label,
                    classes,
                });
            }
            let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - y[label];
            if argmax(y) == label {
                correct += 1;
            }
            let p = softmax_t(y, 1.0);
            for (c, d) in delta.row_mut(i).iter_mut().enumerate() {
                *d = (p[c] - if c == label { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        loss /= b as f64;
        if self.architecture.relu_after(self.layers.len() - 1) {
            for (d, &a) in delta.as_mut_slice().iter_mut().zip(logits.as_slice()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let weight = linalg::matmul_transpose_a(&delta, input)?;
            let bias = self.architecture.use_bias.then(|| {
                let mut db = vec![0.0; delta.cols()];
                for row in delta.row_iter() {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                db
            });
            grads.push(DenseLayer { weight, bias });
            if l > 0 {
                let mut prev = linalg::matmul(&delta, &self.layers[l].weight)?;
                if self.architecture.relu_after(l - 1) {
                    for (d, &a) in prev.as_mut_slice().iter_mut().zip(acts[l - 1].as_slice()) {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        grads.reverse();
        Ok(Gradients {
            loss,
            correct,
            layers: grads,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = TeacherFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            architecture: self.architecture.clone(),
            layers: self.layers.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: TeacherFile = serde_json::from_slice(bytes)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Malformed {
                kind: "teacher",
                reason: format!("unsupported format {} v{}", file.format, file.version),
            });
        }
        Self::from_layers(file.architecture, file.layers)
    }
}

#[derive(Serialize, Deserialize)]
struct TeacherFile {
    format: String,
    version: u32,
    architecture: MlpArchitecture,
    layers: Vec<DenseLayer>,
}

/// Index of the largest entry, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub optimizer: AdaDeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1.0,
            lr_decay: 0.75,
            optimizer: AdaDeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Trains `mlp` in place. Batch order is drawn from `seed`.
pub fn train_teacher(
    mlp: &mut TeacherMlp,
    x: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if x.rows() != labels.len() {
        return Err(Error::dims("train_teacher", x.rows(), labels.len()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut states: Vec<(AdaDeltaState, Option<AdaDeltaState>)> = mlp
        .layers
        .iter()
        .map(|l| {
            (
                AdaDeltaState::new(l.weight.as_slice().len(), config.optimizer),
                l.bias.as_ref().map(|b| AdaDeltaState::new(b.len(), config.optimizer)),
            )
        })
        .collect();
    let mut rng = SeededRng::derive(seed, SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in shuffled_batch_indices(x.rows(), config.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let xb = x.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let g = mlp.gradients(&xb, &yb)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: g.loss,
                });
            }
            loss_sum += g.loss * idx.len() as f64;
            correct += g.correct;
            for ((layer, grad), (ws, bs)) in mlp.layers.iter_mut().zip(&g.layers).zip(&mut states) {
                ws.step(layer.weight.as_mut_slice(), grad.weight.as_slice(), lr);
                if let (Some(p), Some(gb), Some(s)) = (layer.bias.as_mut(), grad.bias.as_ref(), bs.as_mut()) {
                    s.step(p, gb, lr);
                }
            }
        }
        log.push(EpochLog {
            epoch,
            learning_rate: lr,
            loss: loss_sum / x.rows() as f64,
            train_accuracy: correct as f64 / x.rows() as f64,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(sizes: &[usize]) -> MlpArchitecture {
        MlpArchitecture {
            layer_sizes: sizes.to_vec(),
            ..MlpArchitecture::default()
        }
    }

    fn random_x(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = TeacherMlp::init(tiny_arch(&[30, 8, 8, 3]), 5).unwrap();
        let b = TeacherMlp::init(tiny_arch(&[30, 8, 8, 3]), 5).unwrap();
        let c = TeacherMlp::init(tiny_arch(&[30, 8, 8, 3]), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0].weight, c.layers[0].weight);
        for layer in &a.layers {
            let bound = (6.0 / layer.weight.cols() as f64).sqrt();
            assert!(layer.weight.max_abs() <= bound);
        }
    }

    #[test]
    fn architecture_validation() {
        assert!(TeacherMlp::init(tiny_arch(&[4, 2]), 0).is_err());
        assert!(TeacherMlp::init(tiny_arch(&[4, 0, 2]), 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let arch = MlpArchitecture {
            use_bias: false,
            ..tiny_arch(&[3, 4, 4, 2])
        };
        let mut m = TeacherMlp::init(arch, 0).unwrap();
        for l in &mut m.layers {
            l.weight = DenseMatrix::zeros(l.weight.rows(), l.weight.cols());
        }
        let fw = m.forward(&random_x(5, 3, 1)).unwrap();
        assert_eq!(fw.logits.max_abs(), 0.0);
        assert!(fw.hidden.iter().all(|h| h.max_abs() == 0.0));
        assert_eq!(fw.hidden.len(), 2);
    }

    #[test]
    fn identity_hidden_passes_non_negative_input_through() {
        let arch = MlpArchitecture {
            use_bias: false,
            first_hidden_linear: false,
            ..tiny_arch(&[2, 2, 3])
        };
        let w1 = DenseMatrix::identity(2);
        let wout = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, -1.0], [0.5, 0.5]]).unwrap();
        let m = TeacherMlp::from_layers(
            arch,
            vec![
                DenseLayer { weight: w1, bias: None },
                DenseLayer { weight: wout.clone(), bias: None },
            ],
        )
        .unwrap();
        let x = DenseMatrix::from_rows(&[[0.3, 1.2]]).unwrap();
        let logits = m.logits(&x).unwrap();
        let expect = linalg::matvec(&wout, &[0.3, 1.2]).unwrap();
        assert_eq!(logits.row(0), expect.as_slice());
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let arch = MlpArchitecture {
            use_bias: false,
            first_hidden_linear: false,
            ..tiny_arch(&[1, 2, 1])
        };
        let m = TeacherMlp::from_layers(
            arch,
            vec![
                DenseLayer {
                    weight: DenseMatrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
                    bias: None,
                },
                DenseLayer {
                    weight: DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap(),
                    bias: None,
                },
            ],
        )
        .unwrap();
        let fw = m.forward(&DenseMatrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(fw.hidden[0].row(0), &[2.0, 0.0]);
    }

    #[test]
    fn first_hidden_layer_is_linear() {
        let m = TeacherMlp::init(tiny_arch(&[3, 5, 4, 2]), 11).unwrap();
        let x = random_x(20, 3, 2);
        let fw = m.forward(&x).unwrap();
        assert!(fw.hidden[0].as_slice().iter().any(|&v| v < 0.0));
        assert!(fw.hidden[1].as_slice().iter().all(|&v| v >= 0.0));
        assert!(fw.logits.as_slice().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn batched_forward_equals_per_row() {
        let m = TeacherMlp::init(tiny_arch(&[6, 5, 5, 3]), 3).unwrap();
        let x = random_x(9, 6, 4);
        let all = m.logits(&x).unwrap();
        for i in 0..9 {
            let one = m.logits(&x.select_rows(&[i])).unwrap();
            for (a, b) in one.row(0).iter().zip(all.row(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut m = TeacherMlp::init(tiny_arch(&[4, 3, 3, 2]), 21).unwrap();
        // non-zero biases so their gradients are exercised too
        let mut rng = SeededRng::new(8);
        for l in &mut m.layers {
            if let Some(b) = l.bias.as_mut() {
                b.iter_mut().for_each(|v| *v = rng.uniform(-0.3, 0.3));
            }
        }
        let x = random_x(5, 4, 13);
        let labels = vec![0, 1, 1, 0, 1];
        let g = m.gradients(&x, &labels).unwrap();
        let h = 1e-5;
        let loss_at = |m: &TeacherMlp| m.gradients(&x, &labels).unwrap().loss;
        for l in 0..m.layers.len() {
            for k in 0..m.layers[l].weight.as_slice().len() {
                let mut plus = m.clone();
                plus.layers[l].weight.as_mut_slice()[k] += h;
                let mut minus = m.clone();
                minus.layers[l].weight.as_mut_slice()[k] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = g.layers[l].weight.as_slice()[k];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-6 || (fd - an).abs() < 1e-10, "layer {l} w{k}: {an} vs {fd}");
            }
            for k in 0..m.layers[l].bias.as_ref().unwrap().len() {
                let mut plus = m.clone();
                plus.layers[l].bias.as_mut().unwrap()[k] += h;
                let mut minus = m.clone();
                minus.layers[l].bias.as_mut().unwrap()[k] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = g.layers[l].bias.as_ref().unwrap()[k];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-6 || (fd - an).abs() < 1e-10, "layer {l} b{k}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let mut m = TeacherMlp::init(tiny_arch(&[4, 3, 3, 2]), 1).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let log = train_teacher(&mut m, &random_x(10, 4, 1), &[0; 10], &cfg, 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn separable_toy_problem_is_learned() {
        let mut rng = SeededRng::new(77);
        let n = 200;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -1.5 } else { 1.5 };
            rows.push(vec![centre + 0.5 * rng.normal(), centre + 0.5 * rng.normal()]);
            labels.push(c);
        }
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let mut m = TeacherMlp::init(tiny_arch(&[2, 8, 8, 2]), 4).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let log = train_teacher(&mut m, &x, &labels, &cfg, 4).unwrap();
        assert_eq!(log.len(), 10);
        let logits = m.logits(&x).unwrap();
        let acc = (0..n).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
        assert_eq!(acc, n, "{log:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let x = random_x(40, 4, 9);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let run = || {
            let mut m = TeacherMlp::init(tiny_arch(&[4, 5, 5, 2]), 2).unwrap();
            let log = train_teacher(&mut m, &x, &labels, &TrainConfig::default(), 2).unwrap();
            (m, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la[3].learning_rate, 0.75f64.powi(3));
    }

    #[test]
    fn json_round_trip() {
        let m = TeacherMlp::init(tiny_arch(&[4, 3, 3, 2]), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        m.save(&p).unwrap();
        assert_eq!(TeacherMlp::load(&p).unwrap(), m);
        assert!(TeacherMlp::from_json(br#"{"format":"x","version":1,"architecture":{"layer_sizes":[1,1,1]},"layers":[]}"#).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
