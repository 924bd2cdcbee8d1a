//! Residual-NTK diagnostics: the Gram matrix K = J J^T, residual energy,
//! the first-order score S = r^T K gamma, modal decompositions and the
//! positive-part violation statistics.

use crate::linalg::{jacobi_eigen, psd_extreme_eigenvalues, LinalgError, Mat};
use serde::Serialize;

/// Symmetric PSD Gram matrix of residual parameter-gradients.
#[derive(Clone, Debug)]
pub struct NtkGram {
    pub n: usize,
    mat: Mat,
}

impl NtkGram {
    pub fn as_mat(&self) -> &Mat {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    /// `K v` for a residual-space vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.mat.matvec(v)
    }

    /// Power-iteration estimates of the extreme eigenvalues.
    pub fn extreme_eigenvalues(&self, iters: usize) -> (f64, f64) {
        psd_extreme_eigenvalues(&self.mat, iters)
    }

    /// Largest symmetry defect relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.mat.max_abs().max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

/// Wraps an already-assembled symmetric Gram matrix.
pub fn ntk_gram_from_mat(mat: Mat) -> NtkGram {
    assert_eq!(mat.rows, mat.cols);
    NtkGram { n: mat.rows, mat }
}

/// Gram matrix from a residual Jacobian (rows = d r_i / d theta). The upper
/// triangle is computed once and mirrored, so K is exactly symmetric.
pub fn ntk_gram(jac: &[Vec<f64>]) -> NtkGram {
    let n = jac.len();
    let mut mat = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum();
            mat[(i, j)] = dot;
            mat[(j, i)] = dot;
        }
    }
    NtkGram { n, mat }
}

/// Residual energy E = ||r||^2 / 2.
pub fn residual_energy(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// First-order score S = r^T K gamma; S < 0 predicts energy descent.
pub fn first_order_score(r: &[f64], k: &NtkGram, gamma: &[f64]) -> f64 {
    let kg = k.apply(gamma);
    r.iter().zip(&kg).map(|(a, b)| a * b).sum()
}

/// S from a precomputed `K r` vector (K is symmetric, so
/// `r^T K gamma = (K r) . gamma`). Used when many gammas are scored
/// against one residual state.
pub fn score_from_kr(kr: &[f64], gamma: &[f64]) -> f64 {
    kr.iter().zip(gamma).map(|(a, b)| a * b).sum()
}

/// Modal decomposition of the score: eigenpairs of K, modal coordinates of
/// r and gamma, and per-mode contributions `lambda_j r~_j gamma~_j`.
#[derive(Clone, Debug)]
pub struct ModalView {
    pub eigenvalues: Vec<f64>,
    /// Eigenvector columns, ordered like the eigenvalues (descending).
    pub vectors: Mat,
    pub r_modal: Vec<f64>,
    pub gamma_modal: Vec<f64>,
    pub terms: Vec<f64>,
}

impl ModalView {
    pub fn score(&self) -> f64 {
        self.terms.iter().sum()
    }
}

pub fn modal_view(k: &NtkGram, r: &[f64], gamma: &[f64]) -> Result<ModalView, LinalgError> {
    let (w, u) = jacobi_eigen(&k.mat)?;
    let ut = u.transpose();
    let r_modal = ut.matvec(r);
    let gamma_modal = ut.matvec(gamma);
    let terms: Vec<f64> = w
        .iter()
        .zip(r_modal.iter().zip(&gamma_modal))
        .map(|(l, (rm, gm))| l * rm * gm)
        .collect();
    Ok(ModalView { eigenvalues: w, vectors: u, r_modal, gamma_modal, terms })
}

/// First-order prediction of one generator step: `r+ = r + eta K gamma`,
/// `dE = eta S`.
pub fn predicted_step(r: &[f64], k: &NtkGram, gamma: &[f64], eta: f64) -> (Vec<f64>, f64) {
    assert!(eta > 0.0);
    let kg = k.apply(gamma);
    let r_next: Vec<f64> = r.iter().zip(&kg).map(|(a, b)| a + eta * b).collect();
    let de = eta * r.iter().zip(&kg).map(|(a, b)| a * b).sum::<f64>();
    (r_next, de)
}

/// Statistics of the positive part of an S series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ViolationStats {
    pub positive_ratio: f64,
    pub positive_mean: f64,
    pub max_value: f64,
    pub l1_violation: f64,
    pub l2_violation: f64,
}

pub fn violation_stats(series: &[f64]) -> ViolationStats {
    assert!(!series.is_empty(), "violation stats need a nonempty series");
    let mut n_pos = 0usize;
    let mut sum_pos = 0.0;
    let mut max_value = 0.0f64;
    let mut l2 = 0.0;
    for &s in series {
        let pos = s.max(0.0);
        if s > 0.0 {
            n_pos += 1;
            sum_pos += s;
        }
        max_value = max_value.max(pos);
        l2 += pos * pos;
    }
    ViolationStats {
        positive_ratio: n_pos as f64 / series.len() as f64,
        positive_mean: if n_pos > 0 { sum_pos / n_pos as f64 } else { 0.0 },
        max_value,
        l1_violation: sum_pos,
        l2_violation: l2,
    }
}
