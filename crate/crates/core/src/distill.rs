//! Knowledge distillation of the Koopman matrix from teacher logits.
//!
//! For a batch of lifted inputs `ψ` (`B × M`), student logits are `y_s = ψ K`
//! and the loss is
//!
//! ```text
//! L = α T² · mean_n KL(p_n ‖ q_n) + (1 − α) · mean_n CE(label_n, q1_n)
//! p = softmax(y_t / T), q = softmax(y_s / T), q1 = softmax(y_s)
//! ```
//!
//! with gradient `dL/dK = ψᵀ [α T (q − p) / B + (1 − α)(q1 − onehot) / B]`.

use serde::{Deserialize, Serialize};

use crate::dataset::shuffled_batch_indices;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::koopman::{FrontEnd, LinearStudent};
use crate::linalg::{self, DenseMatrix};
use crate::rng::SeededRng;
use crate::teacher::adadelta::{AdaDeltaConfig, AdaDeltaState};
use crate::teacher::{argmax, EpochLog};

const SHUFFLE_STREAM: u64 = 3;

/// `exp((y_c − max y)/T) / Σ`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&y| ((y - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

fn log_softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&y| (y - max) / temperature).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

/// Per-sample probabilities used by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets {
    /// Teacher at temperature `T`.
    pub p: DenseMatrix,
    /// Student at temperature `T`.
    pub q: DenseMatrix,
    /// Student at `T = 1`.
    pub q1: DenseMatrix,
}

fn check_mix(alpha: f64, temperature: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    Ok(())
}

/// Composite distillation loss, averaged over the batch.
pub fn kd_loss(
    y_t: &DenseMatrix,
    y_s: &DenseMatrix,
    labels: &[usize],
    alpha: f64,
    temperature: f64,
) -> Result<(f64, SoftTargets)> {
    check_mix(alpha, temperature)?;
    if y_t.shape() != y_s.shape() {
        return Err(Error::dims("kd_loss", format!("{:?}", y_t.shape()), format!("{:?}", y_s.shape())));
    }
    if labels.len() != y_t.rows() {
        return Err(Error::dims("kd_loss labels", y_t.rows(), labels.len()));
    }
    let (b, c) = y_t.shape();
    let mut p = DenseMatrix::zeros(b, c);
    let mut q = DenseMatrix::zeros(b, c);
    let mut q1 = DenseMatrix::zeros(b, c);
    let (mut kl, mut ce) = (0.0, 0.0);
    for n in 0..b {
        let label = labels[n];
        if label >= c {
            return Err(Error::LabelOutOfRange { index: n, label, classes: c });
        }
        let lp = log_softmax_t(y_t.row(n), temperature);
        let lq = log_softmax_t(y_s.row(n), temperature);
        let lq1 = log_softmax_t(y_s.row(n), 1.0);
        for j in 0..c {
            let pj = lp[j].exp();
            if pj > 0.0 {
                kl += pj * (lp[j] - lq[j]);
            }
            p.row_mut(n)[j] = pj;
            q.row_mut(n)[j] = lq[j].exp();
            q1.row_mut(n)[j] = lq1[j].exp();
        }
        ce -= lq1[label];
    }
    let loss = alpha * temperature * temperature * kl / b as f64 + (1.0 - alpha) * ce / b as f64;
    Ok((loss, SoftTargets { p, q, q1 }))
}

fn loss_and_grad(
    psi: &DenseMatrix,
    y_t: &DenseMatrix,
    labels: &[usize],
    k: &DenseMatrix,
    alpha: f64,
    temperature: f64,
) -> Result<(f64, SoftTargets, DenseMatrix)> {
    let y_s = linalg::matmul(psi, k)?;
    let (loss, st) = kd_loss(y_t, &y_s, labels, alpha, temperature)?;
    let (b, c) = y_s.shape();
    let inv_b = 1.0 / b as f64;
    let delta = DenseMatrix::from_fn(b, c, |n, j| {
        let hard = if labels[n] == j { 1.0 } else { 0.0 };
        alpha * temperature * (st.q[(n, j)] - st.p[(n, j)]) * inv_b
            + (1.0 - alpha) * (st.q1[(n, j)] - hard) * inv_b
    });
    Ok((loss, st, linalg::matmul_transpose_a(psi, &delta)?))
}

/// `dL/dK` (`M × C`) for the batch `ψ` with student logits `ψ K`.
pub fn kd_loss_grad(
    psi: &DenseMatrix,
    y_t: &DenseMatrix,
    labels: &[usize],
    k: &DenseMatrix,
    alpha: f64,
    temperature: f64,
) -> Result<DenseMatrix> {
    Ok(loss_and_grad(psi, y_t, labels, k, alpha, temperature)?.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub optimizer: AdaDeltaConfig,
    /// Apply `optimizer.weight_decay` to `K`. Off by default.
    pub weight_decay_on_k: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.9,
            temperature: 2.0,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1.0,
            lr_decay: 0.75,
            optimizer: AdaDeltaConfig::default(),
            weight_decay_on_k: false,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_mix(self.alpha, self.temperature)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    fn effective_optimizer(&self) -> AdaDeltaConfig {
        AdaDeltaConfig {
            weight_decay: if self.weight_decay_on_k { self.optimizer.weight_decay } else { 0.0 },
            ..self.optimizer
        }
    }
}

/// Trains `K` by AdaDelta on the distillation loss. `teacher_logits` must
/// hold one row per row of `x`. `init` defaults to the zero matrix.
pub fn train_student(
    front: FrontEnd,
    dictionary: Dictionary,
    x: &DenseMatrix,
    labels: &[usize],
    teacher_logits: &DenseMatrix,
    init: Option<DenseMatrix>,
    config: &DistillConfig,
) -> Result<(LinearStudent, Vec<EpochLog>)> {
    config.validate()?;
    if teacher_logits.rows() != x.rows() {
        return Err(Error::dims(
            "train_student: teacher logits rows",
            x.rows(),
            teacher_logits.rows(),
        ));
    }
    if labels.len() != x.rows() {
        return Err(Error::dims("train_student labels", x.rows(), labels.len()));
    }
    let classes = teacher_logits.cols();
    let mut k = init.unwrap_or_else(|| DenseMatrix::zeros(dictionary.len(), classes));
    if k.shape() != (dictionary.len(), classes) {
        return Err(Error::dims(
            "train_student init",
            format!("{}x{classes}", dictionary.len()),
            format!("{:?}", k.shape()),
        ));
    }
    // lifting is cheap per batch; the low-dimensional state is computed once
    let state = front.apply(x)?;
    let mut opt = AdaDeltaState::new(k.as_slice().len(), config.effective_optimizer());
    let mut rng = SeededRng::derive(config.seed, SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in shuffled_batch_indices(x.rows(), config.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let psi = dictionary.lift_rows(&state.select_rows(&idx))?;
            let yt = teacher_logits.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, st, grad) = loss_and_grad(&psi, &yt, &yb, &k, config.alpha, config.temperature)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            loss_sum += loss * idx.len() as f64;
            correct += (0..idx.len()).filter(|&n| argmax(st.q1.row(n)) == yb[n]).count();
            opt.step(k.as_mut_slice(), grad.as_slice(), lr);
        }
        log.push(EpochLog {
            epoch,
            learning_rate: lr,
            loss: loss_sum / x.rows() as f64,
            train_accuracy: correct as f64 / x.rows() as f64,
        });
    }
    Ok((LinearStudent::new(front, dictionary, k)?, log))
}
