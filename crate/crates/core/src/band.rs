//! Symmetric banded storage, used for the assembled stiffness and mass
//! matrices and for the shifted factorizations inside the eigensolver.
//!
//! Only the lower band is stored, column by column: entry `(i, j)` with
//! `j <= i <= j + kd` lives at `data[j * (kd + 1) + (i - j)]`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    kd: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, kd: usize) -> Self {
        let kd = kd.min(n.saturating_sub(1));
        Self {
            n,
            kd,
            data: vec![0.0; n * (kd + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Half bandwidth.
    pub fn bandwidth(&self) -> usize {
        self.kd
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.kd || i >= self.n {
            None
        } else {
            Some(j * (self.kd + 1) + (i - j))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` to the symmetric pair `(i, j)`/`(j, i)`.
    ///
    /// Panics when the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .idx(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band {}", self.kd));
        self.data[k] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.data[j * (self.kd + 1)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Largest absolute entry.
    pub fn amax(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Maximum absolute row sum, an upper bound on the spectral norm.
    pub fn norm_inf(&self) -> f64 {
        let (n, kd) = (self.n, self.kd);
        let mut rows = vec![0.0; n];
        for j in 0..n {
            let col = &self.data[j * (kd + 1)..(j + 1) * (kd + 1)];
            rows[j] += col[0].abs();
            for i in j + 1..=(j + kd).min(n - 1) {
                let a = col[i - j].abs();
                rows[i] += a;
                rows[j] += a;
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// `self += alpha * other`; both must share dimension and bandwidth.
    pub fn axpy(&mut self, alpha: f64, other: &SymBandMatrix) {
        assert_eq!(self.n, other.n);
        assert_eq!(self.kd, other.kd);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let (n, kd) = (self.n, self.kd);
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let col = &self.data[j * (kd + 1)..(j + 1) * (kd + 1)];
            let xj = x[j];
            let mut acc = col[0] * xj;
            let end = (j + kd).min(n - 1);
            for i in j + 1..=end {
                let a = col[i - j];
                y[i] += a * xj;
                acc += a * x[i];
            }
            y[j] += acc;
        }
    }

    pub fn mul_vec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let y = self.mul_vec_alloc(x);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in j..=(j + self.kd).min(self.n.saturating_sub(1)) {
                let v = self.data[j * (self.kd + 1) + (i - j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Stored nonzeros of the lower triangle as `(row, col, value)`.
    pub fn lower_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n {
            for i in j..=(j + self.kd).min(self.n.saturating_sub(1)) {
                let v = self.data[j * (self.kd + 1) + (i - j)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// Matrix Market coordinate dump (symmetric, lower triangle, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let trip = self.lower_triplets();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, trip.len());
        for (i, j, v) in trip {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }

    /// Banded Cholesky factorization `A = L Lᵀ`. Returns `None` when a pivot
    /// is not positive.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        let mut l = self.data.clone();
        for j in 0..n {
            let d = l[j * w];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * w] = d;
            let end = (j + kd).min(n - 1);
            for i in j + 1..=end {
                l[j * w + (i - j)] /= d;
            }
            // trailing update of columns j+1..=end
            for k in j + 1..=end {
                let lkj = l[j * w + (k - j)];
                if lkj == 0.0 {
                    continue;
                }
                let (head, tail) = l.split_at_mut(k * w);
                let colj = &head[j * w..j * w + w];
                let colk = &mut tail[..w];
                for i in k..=end {
                    colk[i - k] -= colj[i - j] * lkj;
                }
            }
        }
        Some(BandCholesky { n, kd, l })
    }
}

/// Lower banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    kd: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kd) = (self.n, self.kd);
        let w = kd + 1;
        assert_eq!(b.len(), n);
        for j in 0..n {
            let col = &self.l[j * w..j * w + w];
            let yj = b[j] / col[0];
            b[j] = yj;
            let end = (j + kd).min(n - 1);
            for i in j + 1..=end {
                b[i] -= col[i - j] * yj;
            }
        }
        for j in (0..n).rev() {
            let col = &self.l[j * w..j * w + w];
            let end = (j + kd).min(n - 1);
            let mut acc = b[j];
            for i in j + 1..=end {
                acc -= col[i - j] * b[i];
            }
            b[j] = acc / col[0];
        }
    }

    /// Product of the pivots squared, as a log to avoid overflow.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|j| 2.0 * self.l[j * (self.kd + 1)].ln()).sum()
    }
}
