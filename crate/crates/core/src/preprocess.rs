//! The student's two linear preprocessing layers: PCA projection onto the
//! leading principal components, then per-coordinate standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};

/// Fitted PCA projection. `components` is `D_in × D` with orthonormal
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub components: DenseMatrix,
    pub input_mean: Vec<f64>,
    /// Fraction of total variance carried by each retained component.
    pub explained_ratio: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.components.cols()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }
}

/// Fits PCA on the rows of `x` via the SVD of the mean-centered data.
///
/// Signs are fixed so that the largest-magnitude entry of each component is
/// positive (first such entry on ties), which makes the fit reproducible.
pub fn fit_pca(x: &DenseMatrix, dim: usize) -> Result<PcaModel> {
    let (n, d_in) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs N >= 2 samples, got {n}")));
    }
    if dim == 0 || dim > n.min(d_in) {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {dim} outside 1..={}",
            n.min(d_in)
        )));
    }
    let mean = column_means(x);

    // Centered data in column-major order; when N < D_in the SVD of the
    // transpose is taken, whose left vectors are what we need.
    let (s, directions) = if n >= d_in {
        let mut cm = vec![0.0; n * d_in];
        for (i, row) in x.row_iter().enumerate() {
            for (j, (&v, &m)) in row.iter().zip(&mean).enumerate() {
                cm[j * n + i] = v - m;
            }
        }
        let (s, vt) = linalg::right_singular_vectors(n, d_in, cm)?;
        (s, vt.transpose())
    } else {
        let centered = DenseMatrix::from_fn(n, d_in, |i, j| x[(i, j)] - mean[j]);
        let f = linalg::svd(&centered)?;
        (f.singular_values, f.vt.transpose())
    };

    let total: f64 = s.iter().map(|v| v * v).sum();
    if s[0] <= 1e-12 * (n as f64 * d_in as f64).sqrt() * x.max_abs() {
        return Err(Error::Degenerate("all rows of the PCA input are identical".into()));
    }

    let mut components = DenseMatrix::zeros(d_in, dim);
    for k in 0..dim {
        let col = directions.column(k);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, &v)| {
                if v.abs() > bv.abs() {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .1;
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (i, v) in col.into_iter().enumerate() {
            components[(i, k)] = sign * v;
        }
    }

    Ok(PcaModel {
        components,
        input_mean: mean,
        explained_ratio: s[..dim].iter().map(|v| v * v / total).collect(),
        singular_values: s[..dim].to_vec(),
    })
}

/// `z = Uᵀ (x − mean)`.
pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return Err(Error::dims("pca_transform", model.input_dim(), x.len()));
    }
    let centered: Vec<f64> = x.iter().zip(&model.input_mean).map(|(a, m)| a - m).collect();
    linalg::matvec_transpose(&model.components, &centered)
}

/// Row-wise [`pca_transform`] of a whole matrix.
pub fn pca_transform_rows(model: &PcaModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != model.input_dim() {
        return Err(Error::dims("pca_transform_rows", model.input_dim(), x.cols()));
    }
    let d = model.dim();
    let mut out = DenseMatrix::zeros(x.rows(), d);
    let mut centered = vec![0.0; x.cols()];
    for (i, row) in x.row_iter().enumerate() {
        for ((c, &v), &m) in centered.iter_mut().zip(row).zip(&model.input_mean) {
            *c = v - m;
        }
        let z = out.row_mut(i);
        for (j, &c) in centered.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (zk, &u) in z.iter_mut().zip(model.components.row(j)) {
                *zk += c * u;
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation per coordinate.
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    fn divisor(&self, d: usize) -> f64 {
        self.std[d].max(self.epsilon)
    }
}

pub fn fit_scaler(z: &DenseMatrix) -> Result<Scaler> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("scaler needs N >= 2 samples, got {n}")));
    }
    let mean = column_means(z);
    let mut var = vec![0.0; z.cols()];
    for row in z.row_iter() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    Ok(Scaler {
        mean,
        std: var.into_iter().map(|v| (v / n as f64).sqrt()).collect(),
        epsilon: DEFAULT_SIGMA_FLOOR,
    })
}

/// `(z_d − μ_d) / max(σ_d, ε)`.
pub fn standardize(scaler: &Scaler, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != scaler.dim() {
        return Err(Error::dims("standardize", scaler.dim(), z.len()));
    }
    Ok(z.iter()
        .enumerate()
        .map(|(d, &v)| (v - scaler.mean[d]) / scaler.divisor(d))
        .collect())
}

pub fn standardize_rows(scaler: &Scaler, z: &DenseMatrix) -> Result<DenseMatrix> {
    if z.cols() != scaler.dim() {
        return Err(Error::dims("standardize_rows", scaler.dim(), z.cols()));
    }
    let mut out = z.clone();
    for i in 0..out.rows() {
        for (d, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - scaler.mean[d]) / scaler.divisor(d);
        }
    }
    Ok(out)
}

fn column_means(x: &DenseMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}
