//! Small dense complex matrices with an LU factorization (partial pivoting).
//! Block sizes in the harmonic solver are at most M^2, so a plain row-major
//! layout is enough.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *t.at_mut(j, i) = self.at(i, j);
            }
        }
        t
    }

    /// `self - a * b`, in place.
    pub fn sub_mul(&mut self, a: &Dense, b: &Dense) {
        debug_assert_eq!(a.cols, b.rows);
        debug_assert_eq!((self.rows, self.cols), (a.rows, b.cols));
        for i in 0..a.rows {
            for k in 0..a.cols {
                let aik = a.at(i, k);
                if aik.re == 0.0 && aik.im == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                let srow = &mut self.data[i * self.cols..(i + 1) * self.cols];
                for (s, bkj) in srow.iter_mut().zip(brow) {
                    *s -= aik * bkj;
                }
            }
        }
    }

    /// `y -= self * x`.
    pub fn sub_mul_vec(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yi -= acc;
        }
    }
}

/// LU factors `P A = L U` stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(a: Dense) -> Result<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let mut lu = a.data;
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].norm();
            for i in k + 1..n {
                let v = lu[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let inv = 1.0 / lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] * inv;
                lu[i * n + k] = f;
                if f.re == 0.0 && f.im == 0.0 {
                    continue;
                }
                for j in k + 1..n {
                    let u = lu[k * n + j];
                    lu[i * n + j] -= f * u;
                }
            }
        }
        Ok(Self { n, lu, piv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        let permuted: Vec<C64> = self.piv.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * b[j];
            }
            b[i] = acc / self.lu[i * n + i];
        }
    }

    /// `A^{-1} B` for a dense right-hand side.
    pub fn solve_mat(&self, b: &Dense) -> Dense {
        assert_eq!(b.rows, self.n);
        let mut out = Dense::zeros(b.rows, b.cols);
        let mut col = vec![C64::new(0.0, 0.0); self.n];
        for j in 0..b.cols {
            for i in 0..self.n {
                col[i] = b.at(i, j);
            }
            self.solve_in_place(&mut col);
            for i in 0..self.n {
                *out.at_mut(i, j) = col[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn solves_pivoting_system() {
        let a = Dense {
            rows: 3,
            cols: 3,
            data: vec![
                c(0.0, 0.0),
                c(2.0, 1.0),
                c(1.0, 0.0),
                c(1.0, -1.0),
                c(0.0, 0.0),
                c(3.0, 0.0),
                c(4.0, 0.0),
                c(1.0, 1.0),
                c(0.0, 2.0),
            ],
        };
        let x = [c(1.0, 2.0), c(-1.0, 0.5), c(0.0, -3.0)];
        let mut b = vec![c(0.0, 0.0); 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a.at(i, j) * x[j];
            }
        }
        let lu = Lu::factor(a).unwrap();
        lu.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(x) {
            assert!((u - v).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = Dense {
            rows: 2,
            cols: 2,
            data: vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)],
        };
        assert_eq!(Lu::factor(a).unwrap_err(), Error::Singular);
    }

    #[test]
    fn sub_mul_matches_manual_product() {
        let a = Dense {
            rows: 1,
            cols: 2,
            data: vec![c(1.0, 1.0), c(2.0, 0.0)],
        };
        let b = Dense {
            rows: 2,
            cols: 1,
            data: vec![c(0.0, 1.0), c(3.0, 0.0)],
        };
        let mut s = Dense::zeros(1, 1);
        s.sub_mul(&a, &b);
        assert_eq!(s.at(0, 0), -(c(1.0, 1.0) * c(0.0, 1.0) + c(6.0, 0.0)));
    }
}
