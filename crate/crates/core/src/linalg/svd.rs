//! Thin SVD by Householder QR followed by one-sided (Hestenes) Jacobi on the
//! triangular factor.
//!
//! Working storage is column-major so every Jacobi rotation and Householder
//! reflection streams over contiguous memory.

use super::{dot, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// `a = u · diag(singular_values) · vt`, with `r = min(rows, cols)`:
/// `u` is `rows × r`, `vt` is `r × cols`, singular values non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub vt: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let (m, r) = self.u.shape();
        let n = self.vt.cols();
        let mut out = DenseMatrix::zeros(m, n);
        for i in 0..m {
            let ui = self.u.row(i);
            let row = out.row_mut(i);
            for k in 0..r {
                let w = ui[k] * self.singular_values[k];
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in row.iter_mut().zip(self.vt.row(k)) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

/// Thin singular value decomposition.
pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    check_input(a, "svd")?;
    let (m, n) = a.shape();
    if m >= n {
        let f = factor_tall(ColMajor::from_dense(a), true)?;
        Ok(f.into_svd())
    } else {
        let f = factor_tall(ColMajor::from_dense_transposed(a), true)?;
        let t = f.into_svd();
        // aᵀ = u s vt  =>  a = vtᵀ s uᵀ
        Ok(Svd {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        })
    }
}

/// Singular values and right singular vectors (rows of `vt`) of a matrix with
/// at least as many rows as columns, given in column-major layout. Skips the
/// left factor, which for data matrices is far larger than anything else.
pub fn right_singular_vectors(
    rows: usize,
    cols: usize,
    col_major: Vec<f64>,
) -> Result<(Vec<f64>, DenseMatrix)> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    if rows < cols {
        return Err(Error::InvalidArgument(format!(
            "right_singular_vectors needs rows >= cols, got {rows}x{cols}"
        )));
    }
    if col_major.len() != rows * cols {
        return Err(Error::dims("right_singular_vectors", rows * cols, col_major.len()));
    }
    if col_major.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right_singular_vectors input"));
    }
    let f = factor_tall(
        ColMajor {
            rows,
            cols,
            data: col_major,
        },
        false,
    )?;
    let n = f.v.cols;
    let mut order: Vec<usize> = (0..n).collect();
    sort_desc(&mut order, &f.sigma);
    let s = order.iter().map(|&j| f.sigma[j]).collect();
    let vt = DenseMatrix::from_fn(n, n, |i, j| f.v.get(j, order[i]));
    Ok((s, vt))
}

/// Default relative cutoff: `max(rows, cols) · ε`.
pub fn default_rcond(a: &DenseMatrix) -> f64 {
    a.rows().max(a.cols()) as f64 * f64::EPSILON
}

/// Moore–Penrose pseudo-inverse. Singular values `≤ rcond · s_max` are treated
/// as zero.
pub fn pinv(a: &DenseMatrix, rcond: f64) -> Result<DenseMatrix> {
    if rcond.is_nan() || rcond < 0.0 || rcond.is_infinite() {
        return Err(Error::InvalidArgument(format!(
            "rcond must be finite and non-negative, got {rcond}"
        )));
    }
    let Svd {
        u,
        singular_values: s,
        vt,
    } = svd(a)?;
    let (m, n) = a.shape();
    let cutoff = rcond * s.first().copied().unwrap_or(0.0);
    let kept: Vec<(usize, f64)> = s
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v > cutoff && v > 0.0)
        .map(|(i, &v)| (i, 1.0 / v))
        .collect();
    // out[j][l] = Σ_k vt[k][j] / s_k · u[l][k]
    let mut out = DenseMatrix::zeros(n, m);
    for j in 0..n {
        let row = out.row_mut(j);
        for &(k, inv) in &kept {
            let w = vt[(k, j)] * inv;
            if w == 0.0 {
                continue;
            }
            for (l, o) in row.iter_mut().enumerate() {
                *o += w * u[(l, k)];
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("pinv"));
    }
    Ok(out)
}

fn check_input(a: &DenseMatrix, op: &'static str) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{op} of an empty matrix")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

fn sort_desc(order: &mut [usize], sigma: &[f64]) {
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
}

struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_dense(a: &DenseMatrix) -> Self {
        let (m, n) = a.shape();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for (j, &v) in a.row(i).iter().enumerate() {
                data[j * m + i] = v;
            }
        }
        ColMajor {
            rows: m,
            cols: n,
            data,
        }
    }

    fn from_dense_transposed(a: &DenseMatrix) -> Self {
        // column j of aᵀ is row j of a
        ColMajor {
            rows: a.cols(),
            cols: a.rows(),
            data: a.as_slice().to_vec(),
        }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ColMajor {
            rows: n,
            cols: n,
            data,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let m = self.rows;
        &mut self.data[j * m..(j + 1) * m]
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let m = self.rows;
        let (head, tail) = self.data.split_at_mut(q * m);
        (&mut head[p * m..(p + 1) * m], &mut tail[..m])
    }
}

/// Jacobi output for a tall input: `a = q · w · vᵀ` where the columns of `w`
/// are mutually orthogonal with norms `sigma`.
struct Factored {
    /// Householder vectors of the QR step; `None` when the left factor was
    /// not requested.
    reflectors: Option<Vec<(Vec<f64>, f64)>>,
    rows: usize,
    w: ColMajor,
    v: ColMajor,
    sigma: Vec<f64>,
}

impl Factored {
    fn into_svd(self) -> Svd {
        let n = self.w.cols;
        let m = self.rows;
        let mut order: Vec<usize> = (0..n).collect();
        sort_desc(&mut order, &self.sigma);
        let sigma_max = self.sigma[order[0]];
        let null_cutoff = sigma_max * f64::EPSILON * n as f64;

        // Normalized columns of w become the left singular vectors of r.
        let nr = self.w.rows;
        let mut ur = ColMajor {
            rows: nr,
            cols: n,
            data: vec![0.0; nr * n],
        };
        let mut missing = Vec::new();
        for (dst, &src) in order.iter().enumerate() {
            let s = self.sigma[src];
            if s > null_cutoff && s > 0.0 {
                let scale = 1.0 / s;
                for (o, &x) in ur.col_mut(dst).iter_mut().zip(self.w.col(src)) {
                    *o = x * scale;
                }
            } else {
                missing.push(dst);
            }
        }
        complete_orthonormal(&mut ur, &missing);

        let mut u = ColMajor {
            rows: m,
            cols: n,
            data: vec![0.0; m * n],
        };
        for j in 0..n {
            u.col_mut(j)[..nr].copy_from_slice(ur.col(j));
        }
        if let Some(reflectors) = &self.reflectors {
            for (k, (v, tau)) in reflectors.iter().enumerate().rev() {
                if *tau == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let col = &mut u.col_mut(j)[k..];
                    let s = tau * dot(v, col);
                    for (c, &vi) in col.iter_mut().zip(v) {
                        *c -= s * vi;
                    }
                }
            }
        }

        Svd {
            u: DenseMatrix::from_fn(m, n, |i, j| u.get(i, j)),
            singular_values: order.iter().map(|&j| self.sigma[j]).collect(),
            vt: DenseMatrix::from_fn(n, n, |i, j| self.v.get(j, order[i])),
        }
    }
}

/// Gram–Schmidt fill-in for columns belonging to zero singular values, so the
/// returned factor always has orthonormal columns.
fn complete_orthonormal(u: &mut ColMajor, missing: &[usize]) {
    let m = u.rows;
    let mut candidate = 0;
    for &j in missing {
        loop {
            assert!(candidate < m, "no basis vector left to complete column {j}");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of modified Gram–Schmidt
            for _ in 0..2 {
                for k in 0..u.cols {
                    if k == j {
                        continue;
                    }
                    let c = dot(&e, u.col(k));
                    for (ei, &uk) in e.iter_mut().zip(u.col(k)) {
                        *ei -= c * uk;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                for (o, x) in u.col_mut(j).iter_mut().zip(&e) {
                    *o = x / norm;
                }
                break;
            }
        }
    }
}

/// Householder QR in place; returns the reflectors and the `n × n` upper
/// triangle.
fn householder_qr(mut a: ColMajor, keep_reflectors: bool) -> (Option<Vec<(Vec<f64>, f64)>>, ColMajor) {
    let (m, n) = (a.rows, a.cols);
    let mut reflectors = keep_reflectors.then(|| Vec::with_capacity(n));
    for k in 0..n {
        let x = &a.col(k)[k..];
        let norm = dot(x, x).sqrt();
        let (v, tau) = if norm == 0.0 {
            (vec![0.0; m - k], 0.0)
        } else {
            let alpha = if x[0] > 0.0 { -norm } else { norm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vv = dot(&v, &v);
            let tau = if vv == 0.0 { 0.0 } else { 2.0 / vv };
            let col = &mut a.col_mut(k)[k..];
            col[0] = alpha;
            col[1..].iter_mut().for_each(|c| *c = 0.0);
            (v, tau)
        };
        if tau != 0.0 {
            for j in k + 1..n {
                let col = &mut a.col_mut(j)[k..];
                let s = tau * dot(&v, col);
                if s != 0.0 {
                    for (c, &vi) in col.iter_mut().zip(&v) {
                        *c -= s * vi;
                    }
                }
            }
        }
        if let Some(r) = reflectors.as_mut() {
            r.push((v, tau));
        }
    }
    let mut r = ColMajor {
        rows: n,
        cols: n,
        data: vec![0.0; n * n],
    };
    for j in 0..n {
        r.col_mut(j)[..=j].copy_from_slice(&a.col(j)[..=j]);
    }
    (reflectors, r)
}

fn factor_tall(a: ColMajor, want_u: bool) -> Result<Factored> {
    let rows = a.rows;
    let n = a.cols;
    // QR only pays off when it actually shrinks the problem.
    let (reflectors, mut w) = if rows > n {
        householder_qr(a, want_u)
    } else {
        (None, a)
    };
    let mut v = ColMajor::identity(n);
    let sigma = jacobi(&mut w, &mut v)?;
    Ok(Factored {
        reflectors,
        rows,
        w,
        v,
        sigma,
    })
}

/// One-sided Jacobi: rotates column pairs of `w` until they are mutually
/// orthogonal, accumulating the rotations into `v`. Returns column norms.
fn jacobi(w: &mut ColMajor, v: &mut ColMajor) -> Result<Vec<f64>> {
    let n = w.cols;
    let tol = f64::EPSILON * (w.rows.max(n) as f64);
    let mut norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j))).collect();
    let mut worst = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0_f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(w.col(p), w.col(q));
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w, p, q, c, s);
                rotate(v, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // drop accumulated drift in the running norms
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(w.col(j), w.col(j));
        }
        if !rotated {
            return Ok(norms.into_iter().map(f64::sqrt).collect());
        }
    }
    Err(Error::SvdNonConvergence {
        sweeps: MAX_SWEEPS,
        residual: worst,
    })
}

#[inline]
fn rotate(m: &mut ColMajor, p: usize, q: usize, c: f64, s: f64) {
    let (cp, cq) = m.two_cols_mut(p, q);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use crate::rng::SeededRng;

    fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        let qtq = crate::linalg::matmul_transpose_a(q, q).unwrap();
        qtq.sub(&DenseMatrix::identity(q.cols()))
            .unwrap()
            .frobenius_norm()
    }

    #[test]
    fn diagonal_case() {
        let a = DenseMatrix::from_diag(&[3.0, 2.0]);
        let f = svd(&a).unwrap();
        assert_eq!(f.singular_values, vec![3.0, 2.0]);
        assert!(f.u.sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-15);
        assert!(f.vt.sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one_ones_matrix() {
        // Gram matrix [[2,2],[2,2]] has eigenvalues 4 and 0 => s = [2, 0]
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = svd(&a).unwrap();
        assert!((f.singular_values[0] - 2.0).abs() < 1e-14);
        assert!(f.singular_values[1].abs() < 1e-14);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.vt.transpose()) < 1e-12);
    }

    #[test]
    fn random_shapes_reconstruct() {
        let mut rng = SeededRng::new(7);
        for &(m, n) in &[(1, 1), (1, 5), (5, 1), (4, 4), (9, 3), (3, 9), (30, 17), (17, 30)] {
            let a = random(m, n, &mut rng);
            let f = svd(&a).unwrap();
            let err = f.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm(), "{m}x{n}: {err}");
            assert!(orthonormality_error(&f.u) < 1e-10, "{m}x{n}");
            assert!(orthonormality_error(&f.vt.transpose()) < 1e-10, "{m}x{n}");
            assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(f.singular_values.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_factors() {
        let mut rng = SeededRng::new(11);
        let b = random(8, 2, &mut rng);
        let c = random(2, 5, &mut rng);
        let a = matmul(&b, &c).unwrap();
        let f = svd(&a).unwrap();
        assert!(f.singular_values[2] < 1e-12 * f.singular_values[0]);
        assert!(orthonormality_error(&f.u) < 1e-10);
        assert!(f.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn zero_matrix() {
        let f = svd(&DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_error(&f.u) < 1e-12);
    }

    #[test]
    fn empty_and_non_finite_inputs_fail() {
        assert!(svd(&DenseMatrix::zeros(0, 3)).is_err());
        let mut a = DenseMatrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn right_only_matches_full() {
        let mut rng = SeededRng::new(3);
        let a = random(40, 6, &mut rng);
        let full = svd(&a).unwrap();
        let mut cm = vec![0.0; 240];
        for i in 0..40 {
            for j in 0..6 {
                cm[j * 40 + i] = a[(i, j)];
            }
        }
        let (s, vt) = right_singular_vectors(40, 6, cm).unwrap();
        assert_eq!(s, full.singular_values);
        assert_eq!(vt, full.vt);
    }

    #[test]
    fn pinv_drops_zero_singular_value() {
        let p = pinv(&DenseMatrix::from_diag(&[2.0, 0.0]), 1e-15).unwrap();
        assert_eq!(p, DenseMatrix::from_diag(&[0.5, 0.0]));
    }

    #[test]
    fn pinv_of_identity() {
        let i4 = DenseMatrix::identity(4);
        let p = pinv(&i4, default_rcond(&i4)).unwrap();
        assert!(p.sub(&i4).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn pinv_is_an_involution() {
        let mut rng = SeededRng::new(99);
        let a = random(5, 3, &mut rng);
        let p = pinv(&a, default_rcond(&a)).unwrap();
        assert_eq!(p.shape(), (3, 5));
        let pp = pinv(&p, default_rcond(&p)).unwrap();
        assert!(pp.sub(&a).unwrap().frobenius_norm() <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn pinv_rejects_negative_rcond() {
        assert!(pinv(&DenseMatrix::identity(2), -1.0).is_err());
    }
}
