use crate::error::{MeeeError, Result};
use crate::scalar::Scalar;

/// Small dense row-major matrix used by the LQR task and its Riccati oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// `v^T M v`
    pub fn quadratic_form(&self, v: &[T]) -> T {
        v.iter().zip(self.matvec(v)).map(|(&a, b)| a * b).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> T {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c).abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn abs_sum(&self) -> T {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| (0..r).all(|c| (self.get(r, c) - self.get(c, r)).abs() <= tol))
    }

    /// Whether a Cholesky factorization of `self + shift * I` exists.
    pub fn is_positive_definite_shifted(&self, shift: T) -> bool {
        let n = self.rows;
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                if i == j {
                    sum += shift;
                }
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > T::zero()) {
                        return false;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        true
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(MeeeError::InvalidArgument("inverse of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a.get(x, col).abs().partial_cmp(&a.get(y, col).abs()).unwrap())
                .unwrap();
            if a.get(pivot, col).abs() <= T::epsilon() {
                return Err(MeeeError::InvalidArgument("singular matrix".into()));
            }
            for c in 0..n {
                a.data.swap(col * n + c, pivot * n + c);
                inv.data.swap(col * n + c, pivot * n + c);
            }
            let p = a.get(col, col);
            for c in 0..n {
                a.data[col * n + c] /= p;
                inv.data[col * n + c] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a.get(r, col);
                    if f != T::zero() {
                        for c in 0..n {
                            let (ac, ic) = (a.get(col, c), inv.get(col, c));
                            a.data[r * n + c] -= f * ac;
                            inv.data[r * n + c] -= f * ic;
                        }
                    }
                }
            }
        }
        Ok(inv)
    }
}
