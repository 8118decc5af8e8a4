//! EDMD least squares for the Koopman matrix, the linear student it defines,
//! and the two least-squares baselines:
//!
//! * hidden-layer extraction: snapshot pairs `(ψ(z₁), z_L)` taken from the
//!   teacher, then folded through the teacher's output layer;
//! * PCA variant: snapshot pairs `(ψ(z̃), one-hot label)` on preprocessed
//!   inputs, no teacher involved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::preprocess::{self, PcaModel, Scaler};
use crate::teacher::{DenseLayer, TeacherMlp};

/// Relative singular value cutoff used for `G†`.
pub const DEFAULT_FIT_RCOND: f64 = 1e-10;

/// Rows processed at a time when streaming data through the lifting.
const CHUNK_ROWS: usize = 2048;

const GRAM_BLOCK: usize = 256;

const MODEL_FORMAT: &str = "koopman-distill/student";
const MODEL_VERSION: u32 = 1;

/// Paired lifted inputs `ψ(s)` and outputs `ψ(s̃)` (or raw targets).
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    inputs: DenseMatrix,
    outputs: DenseMatrix,
}

impl SnapshotSet {
    pub fn new(inputs: DenseMatrix, outputs: DenseMatrix) -> Result<Self> {
        if inputs.rows() != outputs.rows() {
            return Err(Error::dims("SnapshotSet", inputs.rows(), outputs.rows()));
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("snapshot set is empty".into()));
        }
        if !inputs.is_finite() || !outputs.is_finite() {
            return Err(Error::NonFinite("snapshot set"));
        }
        Ok(SnapshotSet { inputs, outputs })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &DenseMatrix {
        &self.outputs
    }

    /// `J = ½ Σ_n ‖ψ(s̃ₙ) − Kᵀ ψ(sₙ)‖²`.
    pub fn residual(&self, k: &DenseMatrix) -> Result<f64> {
        let pred = linalg::matmul(&self.inputs, k)?;
        Ok(0.5 * pred.sub(&self.outputs)?.frobenius_norm().powi(2))
    }
}

/// Streams snapshot pairs into `G = (1/N) Σ ψ(s)ᵀψ(s)` and
/// `A = (1/N) Σ ψ(s)ᵀψ(s̃)` without holding every lifted row.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    m: usize,
    p: usize,
    count: usize,
    /// Upper triangle of the unnormalized Gram matrix, row-major `m × m`.
    gram: Vec<f64>,
    cross: Vec<f64>,
}

impl GramAccumulator {
    pub fn new(input_terms: usize, output_dim: usize) -> Self {
        GramAccumulator {
            m: input_terms,
            p: output_dim,
            count: 0,
            gram: vec![0.0; input_terms * input_terms],
            cross: vec![0.0; input_terms * output_dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add_rows(&mut self, psi: &DenseMatrix, out: &DenseMatrix) -> Result<()> {
        if psi.cols() != self.m || out.cols() != self.p || psi.rows() != out.rows() {
            return Err(Error::dims(
                "GramAccumulator::add_rows",
                format!("N x {} and N x {}", self.m, self.p),
                format!("{:?} and {:?}", psi.shape(), out.shape()),
            ));
        }
        if !psi.is_finite() || !out.is_finite() {
            return Err(Error::NonFinite("snapshot rows"));
        }
        let m = self.m;
        // Gram tiles as dot products of contiguous columns over short row
        // blocks, which keeps the working set in cache
        let mut cols = vec![0.0; m * GRAM_BLOCK];
        for start in (0..psi.rows()).step_by(GRAM_BLOCK) {
            let b = GRAM_BLOCK.min(psi.rows() - start);
            for r in 0..b {
                for (i, &v) in psi.row(start + r).iter().enumerate() {
                    cols[i * b + r] = v;
                }
            }
            for i0 in (0..m).step_by(4) {
                let rows = 4.min(m - i0);
                for j in i0..m {
                    let cj = &cols[j * b..(j + 1) * b];
                    let acc = if rows == 4 {
                        dot4(&cols[i0 * b..(i0 + 4) * b], cj)
                    } else {
                        let mut acc = [0.0; 4];
                        for (k, a) in acc.iter_mut().enumerate().take(rows) {
                            *a = linalg::dot(&cols[(i0 + k) * b..(i0 + k + 1) * b], cj);
                        }
                        acc
                    };
                    for (k, a) in acc.iter().enumerate().take(rows.min(j - i0 + 1)) {
                        self.gram[(i0 + k) * m + j] += a;
                    }
                }
            }
            for r in 0..b {
                let (row, target) = (psi.row(start + r), out.row(start + r));
                for (i, &a) in row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let c = &mut self.cross[i * self.p..(i + 1) * self.p];
                    for (cij, &t) in c.iter_mut().zip(target) {
                        *cij += a * t;
                    }
                }
            }
        }
        self.count += psi.rows();
        Ok(())
    }

    /// Normalized `(G, A)`.
    pub fn matrices(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("no snapshots accumulated".into()));
        }
        let inv_n = 1.0 / self.count as f64;
        let m = self.m;
        let g = DenseMatrix::from_fn(m, m, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.gram[a * m + b] * inv_n
        });
        let a = DenseMatrix::from_vec(m, self.p, self.cross.iter().map(|v| v * inv_n).collect())?;
        Ok((g, a))
    }

    /// `K = G† A`.
    pub fn solve(&self, rcond: f64) -> Result<DenseMatrix> {
        let (g, a) = self.matrices()?;
        let k = linalg::matmul(&linalg::pinv(&g, rcond)?, &a)?;
        Ok(k)
    }
}

/// Dot products of four consecutive length-`b.len()` columns in `a` with `b`.
fn dot4(a: &[f64], b: &[f64]) -> [f64; 4] {
    let n = b.len();
    let (a0, rest) = a.split_at(n);
    let (a1, rest) = rest.split_at(n);
    let (a2, a3) = rest.split_at(n);
    let mut acc = [[0.0; 2]; 4];
    let pairs = n / 2;
    for r in 0..pairs {
        let k = 2 * r;
        for l in 0..2 {
            let y = b[k + l];
            acc[0][l] += a0[k + l] * y;
            acc[1][l] += a1[k + l] * y;
            acc[2][l] += a2[k + l] * y;
            acc[3][l] += a3[k + l] * y;
        }
    }
    let mut out = [0.0; 4];
    for (o, (lane, col)) in out.iter_mut().zip(acc.iter().zip([a0, a1, a2, a3])) {
        *o = lane[0] + lane[1] + if n % 2 == 1 { col[n - 1] * b[n - 1] } else { 0.0 };
    }
    out
}

/// Least-squares Koopman matrix `K = G† A` (`M × M'`), the minimum-norm
/// minimizer of the snapshot residual.
pub fn edmd_fit(snapshots: &SnapshotSet, rcond: f64) -> Result<DenseMatrix> {
    let mut acc = GramAccumulator::new(snapshots.inputs.cols(), snapshots.outputs.cols());
    acc.add_rows(&snapshots.inputs, &snapshots.outputs)?;
    acc.solve(rcond)
}

/// `K′ = K · W_outᵀ`, i.e. `(K′)ᵀ = W_out Kᵀ`.
pub fn fold_output(k: &DenseMatrix, w_out: &DenseMatrix) -> Result<DenseMatrix> {
    if k.cols() != w_out.cols() {
        return Err(Error::dims("fold_output", k.cols(), w_out.cols()));
    }
    linalg::matmul_transpose_b(k, w_out)
}

/// What maps a raw input vector to the state the dictionary lifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrontEnd {
    /// PCA projection followed by standardization.
    Pca { pca: PcaModel, scaler: Scaler },
    /// The teacher's first layer, `z₁ = f(W₁ x + b₁)`.
    TeacherLayer { layer: DenseLayer, relu: bool },
}

impl FrontEnd {
    pub fn input_dim(&self) -> usize {
        match self {
            FrontEnd::Pca { pca, .. } => pca.input_dim(),
            FrontEnd::TeacherLayer { layer, .. } => layer.weight.cols(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FrontEnd::Pca { pca, .. } => pca.dim(),
            FrontEnd::TeacherLayer { layer, .. } => layer.weight.rows(),
        }
    }

    /// Maps each row of `x` to its dictionary input.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("FrontEnd::apply", self.input_dim(), x.cols()));
        }
        match self {
            FrontEnd::Pca { pca, scaler } => {
                preprocess::standardize_rows(scaler, &preprocess::pca_transform_rows(pca, x)?)
            }
            FrontEnd::TeacherLayer { layer, relu } => {
                let mut z = linalg::matmul_transpose_b(x, &layer.weight)?;
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    if let Some(b) = &layer.bias {
                        row.iter_mut().zip(b).for_each(|(v, &bj)| *v += bj);
                    }
                    if *relu {
                        row.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                Ok(z)
            }
        }
    }
}

/// `y = Kᵀ ψ(front(x))`: one matrix after a fixed nonlinear lifting.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStudent {
    pub front: FrontEnd,
    pub dictionary: Dictionary,
    /// `M × D_out`.
    pub koopman: DenseMatrix,
}

#[derive(Serialize, Deserialize)]
struct StudentFile {
    format: String,
    version: u32,
    front: FrontEnd,
    dictionary: Dictionary,
    koopman: DenseMatrix,
}

impl LinearStudent {
    pub fn new(front: FrontEnd, dictionary: Dictionary, koopman: DenseMatrix) -> Result<Self> {
        if front.state_dim() != dictionary.input_dim() {
            return Err(Error::dims(
                "LinearStudent",
                format!("dictionary over {} coordinates", front.state_dim()),
                dictionary.input_dim(),
            ));
        }
        if koopman.rows() != dictionary.len() {
            return Err(Error::dims(
                "LinearStudent",
                format!("K with {} rows", dictionary.len()),
                koopman.rows(),
            ));
        }
        if !koopman.is_finite() {
            return Err(Error::NonFinite("Koopman matrix"));
        }
        Ok(LinearStudent {
            front,
            dictionary,
            koopman,
        })
    }

    pub fn outputs(&self) -> usize {
        self.koopman.cols()
    }

    /// Lifted observables `ψ(front(x))` for each row of `x`.
    pub fn lifted(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.dictionary.lift_rows(&self.front.apply(x)?)
    }

    pub fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(x.rows(), self.outputs());
        for start in (0..x.rows()).step_by(CHUNK_ROWS) {
            let idx: Vec<usize> = (start..(start + CHUNK_ROWS).min(x.rows())).collect();
            let psi = self.lifted(&x.select_rows(&idx))?;
            let y = linalg::matmul(&psi, &self.koopman)?;
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(i).copy_from_slice(y.row(r));
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&StudentFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            front: self.front.clone(),
            dictionary: self.dictionary.clone(),
            koopman: self.koopman.clone(),
        })?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let f: StudentFile = serde_json::from_slice(bytes)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Malformed {
                kind: "student",
                reason: format!("unsupported format {} v{}", f.format, f.version),
            });
        }
        LinearStudent::new(f.front, f.dictionary, f.koopman)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(CHUNK_ROWS)
        .map(move |s| (s..(s + CHUNK_ROWS).min(n)).collect())
}

/// Replaces the teacher's hidden stack by one least-squares matrix fitted on
/// `(ψ(z₁), z_L)` and folded through the output layer (bias lands on the
/// constant term).
pub fn naive_pipeline(
    teacher: &TeacherMlp,
    x: &DenseMatrix,
    dictionary: &Dictionary,
    rcond: f64,
) -> Result<LinearStudent> {
    let arch = &teacher.architecture;
    let first_width = arch.layer_sizes[1];
    if dictionary.input_dim() != first_width {
        return Err(Error::dims(
            "naive_pipeline",
            format!("dictionary over first hidden width {first_width}"),
            dictionary.input_dim(),
        ));
    }
    let hidden_out = arch.layer_sizes[arch.layer_sizes.len() - 2];
    let mut acc = GramAccumulator::new(dictionary.len(), hidden_out);
    for idx in chunks(x.rows()) {
        let fw = teacher.forward(&x.select_rows(&idx))?;
        let psi = dictionary.lift_rows(&fw.hidden[0])?;
        acc.add_rows(&psi, fw.hidden.last().expect("at least one hidden layer"))?;
    }
    let k = acc.solve(rcond)?;
    let out_layer = teacher.output_layer();
    let mut folded = fold_output(&k, &out_layer.weight)?;
    if let Some(b) = &out_layer.bias {
        for (v, &bj) in folded.row_mut(0).iter_mut().zip(b) {
            *v += bj;
        }
    }
    let front = FrontEnd::TeacherLayer {
        layer: teacher.first_layer().clone(),
        relu: !arch.first_hidden_linear,
    };
    LinearStudent::new(front, dictionary.clone(), folded)
}

/// Least-squares regression of one-hot labels on lifted, preprocessed inputs.
pub fn naive_pca_pipeline(
    x: &DenseMatrix,
    y_onehot: &DenseMatrix,
    pca: &PcaModel,
    scaler: &Scaler,
    dictionary: &Dictionary,
    rcond: f64,
) -> Result<LinearStudent> {
    if x.rows() != y_onehot.rows() {
        return Err(Error::dims("naive_pca_pipeline", x.rows(), y_onehot.rows()));
    }
    let front = FrontEnd::Pca {
        pca: pca.clone(),
        scaler: scaler.clone(),
    };
    if dictionary.input_dim() != front.state_dim() {
        return Err(Error::dims("naive_pca_pipeline", front.state_dim(), dictionary.input_dim()));
    }
    let mut acc = GramAccumulator::new(dictionary.len(), y_onehot.cols());
    for idx in chunks(x.rows()) {
        let psi = dictionary.lift_rows(&front.apply(&x.select_rows(&idx))?)?;
        acc.add_rows(&psi, &y_onehot.select_rows(&idx))?;
    }
    LinearStudent::new(front, dictionary.clone(), acc.solve(rcond)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionarySpec;
    use crate::rng::SeededRng;
    use crate::teacher::MlpArchitecture;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn identity_dynamics() {
        let psi = random(30, 5, 1);
        let s = SnapshotSet::new(psi.clone(), psi.clone()).unwrap();
        let k = edmd_fit(&s, DEFAULT_FIT_RCOND).unwrap();
        assert!(k.sub(&DenseMatrix::identity(5)).unwrap().max_abs() < 1e-10);
        let recon = linalg::matmul(&psi, &k).unwrap();
        assert!(recon.sub(&psi).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn identity_dynamics_with_singular_gram() {
        // duplicated column => G singular, K ≠ I but the action on data is exact
        let base = random(20, 3, 2);
        let psi = DenseMatrix::from_fn(20, 4, |i, j| base[(i, j.min(2))]);
        let s = SnapshotSet::new(psi.clone(), psi.clone()).unwrap();
        let k = edmd_fit(&s, DEFAULT_FIT_RCOND).unwrap();
        let recon = linalg::matmul(&psi, &k).unwrap();
        assert!(recon.sub(&psi).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn blocked_gram_matches_direct_products() {
        for (rows, m) in [(1, 1), (3, 6), (GRAM_BLOCK + 7, 9), (2 * GRAM_BLOCK + 1, 13)] {
            let psi = random(rows, m, 30 + m as u64);
            let out = random(rows, 2, 31);
            let mut acc = GramAccumulator::new(m, 2);
            acc.add_rows(&psi, &out).unwrap();
            let (g, a) = acc.matrices().unwrap();
            let n = rows as f64;
            let g_ref = linalg::matmul_transpose_a(&psi, &psi).unwrap().scale(1.0 / n);
            let a_ref = linalg::matmul_transpose_a(&psi, &out).unwrap().scale(1.0 / n);
            assert!(g.sub(&g_ref).unwrap().max_abs() < 1e-12, "rows={rows} m={m}");
            assert!(a.sub(&a_ref).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_snapshots_leave_k_unchanged() {
        let psi = random(25, 4, 3);
        let out = random(25, 2, 4);
        let k1 = edmd_fit(&SnapshotSet::new(psi.clone(), out.clone()).unwrap(), 1e-10).unwrap();
        let idx: Vec<usize> = (0..25).flat_map(|i| [i, i]).collect();
        let k2 = edmd_fit(
            &SnapshotSet::new(psi.select_rows(&idx), out.select_rows(&idx)).unwrap(),
            1e-10,
        )
        .unwrap();
        assert!(k1.sub(&k2).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn normal_equations_hold() {
        let psi = random(12, 7, 5);
        let out = random(12, 3, 6);
        let s = SnapshotSet::new(psi, out).unwrap();
        let k = edmd_fit(&s, 1e-12).unwrap();
        let mut acc = GramAccumulator::new(7, 3);
        acc.add_rows(s.inputs(), s.outputs()).unwrap();
        let (g, a) = acc.matrices().unwrap();
        let resid = linalg::matmul(&g, &k).unwrap().sub(&a).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * (1.0 + a.frobenius_norm()), "{resid}");
    }

    #[test]
    fn random_perturbations_never_improve_residual() {
        let s = SnapshotSet::new(random(40, 6, 7), random(40, 3, 8)).unwrap();
        let k = edmd_fit(&s, 1e-12).unwrap();
        let best = s.residual(&k).unwrap();
        let mut rng = SeededRng::new(9);
        for _ in 0..100 {
            let d = DenseMatrix::from_fn(6, 3, |_, _| rng.normal());
            let d = d.scale(1e-3 / d.frobenius_norm());
            let worse = s.residual(&k.add(&d).unwrap()).unwrap();
            assert!(worse >= best - 1e-12);
        }
    }

    #[test]
    fn fold_output_cases() {
        let k = random(3, 4, 10);
        assert!(fold_output(&k, &DenseMatrix::identity(4)).unwrap().sub(&k).unwrap().max_abs() < 1e-15);
        assert_eq!(fold_output(&k, &DenseMatrix::zeros(2, 4)).unwrap(), DenseMatrix::zeros(3, 2));
        let w = random(2, 4, 11);
        let kp = fold_output(&k, &w).unwrap();
        let mut rng = SeededRng::new(12);
        for _ in 0..10 {
            let psi: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let direct = linalg::matvec_transpose(&kp, &psi).unwrap();
            let staged = linalg::matvec(&w, &linalg::matvec_transpose(&k, &psi).unwrap()).unwrap();
            for (a, b) in direct.iter().zip(&staged) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert!(fold_output(&k, &DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn naive_pipeline_is_exact_for_identity_hidden_stack() {
        // z₁ = W₁x ≥ 0, hidden layers are identities so z_L = z₁ exactly,
        // which the degree-1 part of the dictionary spans.
        let arch = MlpArchitecture {
            layer_sizes: vec![3, 2, 2, 2, 3],
            first_hidden_linear: true,
            output_linear: true,
            use_bias: true,
        };
        let w1 = DenseMatrix::from_rows(&[[0.5, 0.2, 0.1], [0.3, 0.9, 0.4]]).unwrap();
        let wout = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 0.5], [-1.0, 3.0]]).unwrap();
        let layers = vec![
            DenseLayer { weight: w1, bias: Some(vec![0.1, 0.2]) },
            DenseLayer { weight: DenseMatrix::identity(2), bias: Some(vec![0.0; 2]) },
            DenseLayer { weight: DenseMatrix::identity(2), bias: Some(vec![0.0; 2]) },
            DenseLayer { weight: wout, bias: Some(vec![0.3, -0.1, 0.7]) },
        ];
        let teacher = TeacherMlp::from_layers(arch, layers).unwrap();
        let mut rng = SeededRng::new(13);
        let x = DenseMatrix::from_fn(50, 3, |_, _| rng.uniform(0.0, 1.0));
        let dict = Dictionary::new(2, 2).unwrap();
        let student = naive_pipeline(&teacher, &x, &dict, DEFAULT_FIT_RCOND).unwrap();
        let diff = student.logits(&x).unwrap().sub(&teacher.logits(&x).unwrap()).unwrap();
        assert!(diff.max_abs() < 1e-6, "{}", diff.max_abs());
    }

    #[test]
    fn naive_pipeline_checks_width() {
        let teacher = TeacherMlp::init(
            MlpArchitecture {
                layer_sizes: vec![4, 3, 3, 2],
                ..MlpArchitecture::default()
            },
            0,
        )
        .unwrap();
        let dict = Dictionary::new(2, 2).unwrap();
        assert!(naive_pipeline(&teacher, &random(5, 4, 1), &dict, 1e-10).is_err());
    }

    #[test]
    fn separable_blobs_with_naive_pca() {
        let mut rng = SeededRng::new(14);
        let n = 400;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let m = if c == 0 { -2.0 } else { 2.0 };
            rows.push(vec![m + rng.normal() * 0.5, m + rng.normal() * 0.5, rng.normal() * 0.1]);
            labels.push(c);
        }
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let pca = preprocess::fit_pca(&x, 2).unwrap();
        let scaler = preprocess::fit_scaler(&preprocess::pca_transform_rows(&pca, &x).unwrap()).unwrap();
        let dict = Dictionary::new(2, 1).unwrap();
        let y = crate::dataset::one_hot(&labels, 2).unwrap();
        let student = naive_pca_pipeline(&x, &y, &pca, &scaler, &dict, DEFAULT_FIT_RCOND).unwrap();
        let logits = student.logits(&x).unwrap();
        let correct = (0..n)
            .filter(|&i| crate::teacher::argmax(logits.row(i)) == labels[i])
            .count();
        assert!(correct as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn student_json_round_trip() {
        let x = random(30, 4, 20);
        let pca = preprocess::fit_pca(&x, 2).unwrap();
        let scaler = preprocess::fit_scaler(&preprocess::pca_transform_rows(&pca, &x).unwrap()).unwrap();
        let dict = Dictionary::build(
            DictionarySpec { input_dim: 2, max_degree: 2, diagonal_only: true },
            100,
        )
        .unwrap();
        let k = random(dict.len(), 3, 21);
        let s = LinearStudent::new(FrontEnd::Pca { pca, scaler }, dict, k).unwrap();
        let back = LinearStudent::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.logits(&x).unwrap(), s.logits(&x).unwrap());
    }

    #[test]
    fn student_rejects_inconsistent_shapes() {
        let x = random(10, 3, 1);
        let pca = preprocess::fit_pca(&x, 2).unwrap();
        let scaler = preprocess::fit_scaler(&preprocess::pca_transform_rows(&pca, &x).unwrap()).unwrap();
        let front = FrontEnd::Pca { pca, scaler };
        let dict = Dictionary::new(2, 2).unwrap();
        assert!(LinearStudent::new(front.clone(), dict.clone(), DenseMatrix::zeros(5, 2)).is_err());
        assert!(LinearStudent::new(front, Dictionary::new(3, 2).unwrap(), DenseMatrix::zeros(10, 2)).is_err());
    }
}
