//! Small symmetric matrices with Frobenius geometry and Loewner order.
//!
//! Storage is packed (upper triangle, `D(D+1)/2` coefficients), so symmetry
//! holds by construction. Spectral operations use cyclic Jacobi rotations,
//! which are accurate to machine precision at the dimensions used here.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default absolute tolerance on eigenvalues for PSD tests.
pub const PSD_TOL: f64 = 1e-12;

/// Eigenvalues below this are treated as zero when taking rank-reduced roots.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

/// Spectral decomposition `a = Σ λ_k v_k v_kᵀ`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

#[inline]
fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * dim - i - 1) / 2 + j
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diag(&vec![1.0; dim])
    }

    /// The all-ones matrix.
    pub fn ones(dim: usize) -> Self {
        Self::from_fn(dim, |_, _| 1.0)
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self::diag(&[value])
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    /// Parses a square row-major array, rejecting asymmetry beyond `1e-12`
    /// relative to the largest entry. The result is the symmetric part.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
        }
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = packed_index(self.dim, i, j);
        self.data[k] = value;
    }

    fn check_dim(&self, other: &SymMat) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> Result<SymMat> {
        self.check_dim(other)?;
        Ok(SymMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn add(&self, other: &SymMat) -> Result<SymMat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymMat) -> Result<SymMat> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &SymMat) -> Result<SymMat> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Entrywise power `a^{∘k}`; `k = 0` gives the all-ones matrix.
    pub fn hadamard_pow(&self, k: u32) -> SymMat {
        self.map(|v| v.powi(k as i32))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMat {
        SymMat {
            dim: self.dim,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> SymMat {
        self.map(|v| v * c)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &SymMat) -> Result<SymMat> {
        self.zip_with(other, |a, b| a + c * b)
    }

    /// Frobenius inner product `Σ_ij a_ij b_ij`.
    pub fn dot(&self, other: &SymMat) -> Result<f64> {
        self.check_dim(other)?;
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        Ok(s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.dot(self).unwrap_or(0.0).sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `xᵀ a x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `x · (a y)` for two vectors.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn dense(&self) -> Vec<Vec<f64>> {
        self.to_rows()
    }

    /// Matrix square `a a` (symmetric).
    pub fn square(&self) -> SymMat {
        let d = self.dense();
        Self::from_fn(self.dim, |i, j| (0..self.dim).map(|k| d[i][k] * d[k][j]).sum())
    }

    /// Anticommutator `a b + b a` (symmetric).
    pub fn anticommutator(&self, other: &SymMat) -> Result<SymMat> {
        self.check_dim(other)?;
        let a = self.dense();
        let b = other.dense();
        Ok(Self::from_fn(self.dim, |i, j| {
            (0..self.dim)
                .map(|k| a[i][k] * b[k][j] + b[i][k] * a[k][j])
                .sum()
        }))
    }

    /// Congruence `a b a` (symmetric).
    pub fn sandwich(&self, middle: &SymMat) -> Result<SymMat> {
        self.check_dim(middle)?;
        let a = self.dense();
        let b = middle.dense();
        let n = self.dim;
        let mut ab = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                ab[i][j] = (0..n).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Ok(Self::from_fn(n, |i, j| (0..n).map(|k| ab[i][k] * a[k][j]).sum()))
    }

    /// Cyclic Jacobi eigendecomposition.
    pub fn eigen(&self) -> Eigen {
        let n = self.dim;
        let mut a = self.dense();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let scale = self.max_abs();
        if scale > 0.0 {
            for _sweep in 0..100 {
                let mut off = 0.0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        off += a[i][j] * a[i][j];
                    }
                }
                if off.sqrt() <= f64::EPSILON * 1e-3 * scale {
                    break;
                }
                for p in 0..n {
                    for q in (p + 1)..n {
                        let apq = a[p][q];
                        if apq == 0.0 {
                            continue;
                        }
                        let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                        let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                        let c = 1.0 / (t * t + 1.0).sqrt();
                        let s = t * c;
                        for k in 0..n {
                            let akp = a[k][p];
                            let akq = a[k][q];
                            a[k][p] = c * akp - s * akq;
                            a[k][q] = s * akp + c * akq;
                        }
                        for k in 0..n {
                            let apk = a[p][k];
                            let aqk = a[q][k];
                            a[p][k] = c * apk - s * aqk;
                            a[q][k] = s * apk + c * aqk;
                        }
                        for row in v.iter_mut() {
                            let vkp = row[p];
                            let vkq = row[q];
                            row[p] = c * vkp - s * vkq;
                            row[q] = s * vkp + c * vkq;
                        }
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
        Eigen {
            values: order.iter().map(|&k| a[k][k]).collect(),
            vectors: order
                .iter()
                .map(|&k| (0..n).map(|i| v[i][k]).collect())
                .collect(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigen().values.last().expect("dim >= 1")
    }

    /// True iff the smallest eigenvalue is at least `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// `a ≼ b` in the Loewner order, i.e. `b - a` is PSD up to `tol`.
    pub fn loewner_leq(&self, other: &SymMat, tol: f64) -> Result<bool> {
        Ok(other.sub(self)?.is_psd(tol))
    }

    /// PSD square root; eigenvalues in `[-PSD_TOL, 0)` are clamped to zero.
    pub fn sqrt_psd(&self) -> Result<SymMat> {
        self.sqrt_psd_tol(PSD_TOL)
    }

    pub fn sqrt_psd_tol(&self, tol: f64) -> Result<SymMat> {
        let eig = self.eigen();
        if eig.values[0] < -tol {
            return Err(Error::NotPsd {
                min_eigenvalue: eig.values[0],
            });
        }
        let mut out = SymMat::zeros(self.dim);
        for (lam, vec) in eig.values.iter().zip(&eig.vectors) {
            if *lam > 0.0 {
                let r = lam.sqrt();
                for i in 0..self.dim {
                    for j in i..self.dim {
                        let k = packed_index(self.dim, i, j);
                        out.data[k] += r * vec[i] * vec[j];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Square-root factors `(√λ_k, v_k)` for eigenvalues above [`RANK_TOL`].
    /// A Gaussian with this covariance is `Σ_k √λ_k v_k g_k`.
    pub fn principal_factors(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let eig = self.eigen();
        if eig.values[0] < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: eig.values[0],
            });
        }
        Ok(eig
            .values
            .into_iter()
            .zip(eig.vectors)
            .filter(|(lam, _)| *lam > RANK_TOL)
            .map(|(lam, v)| (lam.sqrt(), v))
            .collect())
    }
}

impl Serialize for SymMat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
