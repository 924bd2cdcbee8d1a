//! Small dense linear-algebra toolkit: row-major matrices, a cyclic Jacobi
//! eigensolver for symmetric matrices, power-iteration spectral estimates,
//! LU solves and a Pade scaling-and-squaring matrix exponential.

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |r| r.len());
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for j in 0..self.cols {
                s += row[j] * x[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("eigensolver failed to converge; condition estimate {cond:.3e}")]
    NoConvergence { cond: f64 },
    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns, so `A = V diag(w) V^T`.
pub fn jacobi_eigen(a: &Mat) -> Result<(Vec<f64>, Mat), LinalgError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    if n <= 1 {
        return Ok((m.data.clone(), v));
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    let max_sweeps = 64;
    for _sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= tol {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
            let w: Vec<f64> = idx.iter().map(|&i| m[(i, i)]).collect();
            let mut vs = Mat::zeros(n, n);
            for (newc, &oldc) in idx.iter().enumerate() {
                for r in 0..n {
                    vs[(r, newc)] = v[(r, oldc)];
                }
            }
            return Ok((w, vs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let cond = {
        let mut dmax = 0.0f64;
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            dmax = dmax.max(m[(i, i)].abs());
            dmin = dmin.min(m[(i, i)].abs());
        }
        dmax / dmin.max(f64::MIN_POSITIVE)
    };
    Err(LinalgError::NoConvergence { cond })
}

/// Symmetric square root of an SPD matrix via its eigendecomposition.
/// Eigenvalues below zero (roundoff) are clipped.
pub fn spd_sqrt(a: &Mat) -> Result<Mat, LinalgError> {
    let (w, v) = jacobi_eigen(a)?;
    let n = a.rows;
    let mut out = Mat::zeros(n, n);
    for k in 0..n {
        let s = w[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = v[(i, k)] * s;
            for j in 0..n {
                out[(i, j)] += vik * v[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Deterministic power-iteration estimates of the extreme eigenvalues of a
/// symmetric PSD matrix. Returns (lambda_min, lambda_max).
pub fn psd_extreme_eigenvalues(a: &Mat, iters: usize) -> (f64, f64) {
    let n = a.rows;
    if n == 0 {
        return (0.0, 0.0);
    }
    let start: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618).sin()).collect();
    let lam_max = power_iter(|x| a.matvec(x), &start, iters);
    // shift-and-invert-free estimate: largest eigenvalue of (lam_max I - A)
    let shifted = |x: &[f64]| {
        let ax = a.matvec(x);
        x.iter().zip(ax).map(|(xi, axi)| lam_max * xi - axi).collect::<Vec<_>>()
    };
    let mu = power_iter(shifted, &start, iters);
    ((lam_max - mu).max(0.0), lam_max)
}

fn power_iter(mut apply: impl FnMut(&[f64]) -> Vec<f64>, start: &[f64], iters: usize) -> f64 {
    let mut x = start.to_vec();
    let mut norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    let mut lam = 0.0;
    for _ in 0..iters {
        let y = apply(&x);
        lam = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / norm).collect();
    }
    lam
}

/// LU decomposition with partial pivoting; solves A X = B in place.
pub fn lu_solve(a: &Mat, b: &Mat) -> Result<Mat, LinalgError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pmax = lu[(k, k)].abs();
        let mut prow = k;
        for i in (k + 1)..n {
            if lu[(i, k)].abs() > pmax {
                pmax = lu[(i, k)].abs();
                prow = i;
            }
        }
        if pmax == 0.0 {
            return Err(LinalgError::Singular { pivot: k });
        }
        if prow != k {
            for j in 0..n {
                lu.data.swap(k * n + j, prow * n + j);
            }
            piv.swap(k, prow);
            for j in 0..x.cols {
                x.data.swap(k * x.cols + j, prow * x.cols + j);
            }
        }
        let inv = 1.0 / lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] * inv;
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols {
                let t = f * x[(k, j)];
                x[(i, j)] -= t;
            }
        }
    }
    for j in 0..x.cols {
        for i in (0..n).rev() {
            let mut s = x[(i, j)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Matrix exponential by scaling-and-squaring with a diagonal Pade(6)
/// approximant.
pub fn expm(a: &Mat) -> Result<Mat, LinalgError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let norm = a.norm_inf();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(0.5f64.powi(s));
    // Pade(6,6) coefficients: c_0 = 1, c_{k+1} = c_k (6-k)/((12-k)(k+1))
    let p = 6usize;
    let mut c = vec![1.0f64; p + 1];
    for k in 0..p {
        c[k + 1] = c[k] * ((p - k) as f64) / (((2 * p - k) * (k + 1)) as f64);
    }
    let mut term = Mat::identity(n);
    let mut num = Mat::identity(n); // sum c_k A^k
    let mut den = Mat::identity(n); // sum c_k (-A)^k
    for (k, ck) in c.iter().enumerate().skip(1) {
        term = term.matmul(&scaled);
        num = num.add(&term.scale(*ck));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den = den.add(&term.scale(sign * ck));
    }
    let mut e = lu_solve(&den, &num)?;
    for _ in 0..s {
        e = e.matmul(&e);
    }
    Ok(e)
}

/// Coefficients of det(lambda I - A) by the Faddeev-LeVerrier recurrence:
/// returns `[1, c1, ..., cn]` for `lambda^n + c1 lambda^(n-1) + ... + cn`.
pub fn char_poly(a: &Mat) -> Vec<f64> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut mk = Mat::identity(n);
    for k in 1..=n {
        mk = a.matmul(&mk);
        let tr: f64 = (0..n).map(|i| mk[(i, i)]).sum();
        c[k] = -tr / k as f64;
        for i in 0..n {
            mk[(i, i)] += c[k];
        }
    }
    c
}

/// All (possibly complex) roots of a real monic polynomial by Durand-Kerner
/// iteration, returned as (re, im) pairs.
pub fn poly_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return vec![];
    }
    let radius = 1.0 + coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * (k as f64 + 0.354) / n as f64;
            (radius * ang.cos(), radius * ang.sin())
        })
        .collect();
    let eval = |c: &[f64], x: (f64, f64)| {
        let mut acc = (0.0, 0.0);
        for &ck in c {
            acc = cmul(acc, x);
            acc.0 += ck;
        }
        acc
    };
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let p = eval(coeffs, z[i]);
            let mut denom = (1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom = cmul(denom, csub(z[i], z[j]));
                }
            }
            let step = cdiv(p, denom);
            z[i] = csub(z[i], step);
            max_step = max_step.max((step.0 * step.0 + step.1 * step.1).sqrt());
        }
        if max_step < 1e-15 * radius.max(1.0) {
            break;
        }
    }
    z
}

#[inline]
fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

#[inline]
fn csub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

#[inline]
fn cdiv(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}
