//! Small dense linear algebra used by the embedder: row-major matrices,
//! Gram-Schmidt orthonormalization and a cyclic Jacobi eigensolver for the
//! k×k Rayleigh-Ritz step.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.rows, other.rows);
        let mut out = Dense::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            for (i, &a) in self.row(r).iter().enumerate() {
                for (j, &b) in other.row(r).iter().enumerate() {
                    out.data[i * other.cols + j] += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt).
/// Columns that collapse numerically are replaced by fresh random
/// directions drawn from `rng`, so the result always has full column rank.
pub fn orthonormalize_columns<R: Rng>(m: &mut Dense, rng: &mut R) {
    let (n, k) = (m.rows, m.cols);
    for j in 0..k {
        let mut attempts = 0;
        loop {
            for p in 0..j {
                let dot: f64 = (0..n).map(|r| m.get(r, j) * m.get(r, p)).sum();
                for r in 0..n {
                    let v = m.get(r, j) - dot * m.get(r, p);
                    m.set(r, j, v);
                }
            }
            let norm = (0..n).map(|r| m.get(r, j).powi(2)).sum::<f64>().sqrt();
            if norm > 1e-10 || attempts > 8 {
                let norm = norm.max(f64::MIN_POSITIVE);
                for r in 0..n {
                    let v = m.get(r, j) / norm;
                    m.set(r, j, v);
                }
                break;
            }
            for r in 0..n {
                m.set(r, j, rng.gen_range(-1.0..1.0));
            }
            attempts += 1;
        }
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns `(eigenvalues, eigenvectors)` where eigenvector `c`
/// is column `c` of the returned matrix.
pub fn symmetric_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.rows;
    assert_eq!(n, a.cols);
    let mut a = a.clone();
    let mut v = Dense::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = a.frobenius().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}
