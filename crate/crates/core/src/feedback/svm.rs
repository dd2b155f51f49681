//! Soft-margin C-SVM on a precomputed kernel, solved with SMO using
//! second-order working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Stopping tolerance on the maximal KKT violation.
const EPS: f64 = 1e-5;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// `alpha_i * y_i` for every training point (zero for non-support points).
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
}

impl SvmModel {
    /// `f(x) = sum_i alpha_i y_i K(x_i, x) + b`, given the kernel column of `x`
    /// against the training points.
    pub fn decision(&self, k_col: &[f64]) -> f64 {
        self.coef.iter().zip(k_col).map(|(c, k)| c * k).sum::<f64>() + self.bias
    }

    pub fn alpha(&self, labels: &[f64]) -> Vec<f64> {
        self.coef.iter().zip(labels).map(|(c, y)| c * y).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.coef.len()).filter(|&i| self.coef[i] != 0.0).collect()
    }

    /// Per-point KKT violation: `max(0, 1 - y f)` at `alpha = 0`,
    /// `max(0, y f - 1)` at `alpha = C` and `|y f - 1|` in between.
    pub fn kkt_residuals(&self, kernel: &[f64], labels: &[f64]) -> Vec<f64> {
        let n = labels.len();
        (0..n)
            .map(|i| {
                let yf = labels[i] * self.decision(&kernel[i * n..(i + 1) * n]);
                let a = self.coef[i] * labels[i];
                if a <= 0.0 {
                    (1.0 - yf).max(0.0)
                } else if a >= self.c {
                    (yf - 1.0).max(0.0)
                } else {
                    (yf - 1.0).abs()
                }
            })
            .collect()
    }
}

/// Trains on an `n x n` row-major kernel matrix with labels in `{-1, +1}`.
pub fn train_svm(kernel: &[f64], labels: &[f64], c: f64) -> Result<SvmModel> {
    let n = labels.len();
    if kernel.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            actual: kernel.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("SVM C must be positive, got {c}")));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidParameter("SVM labels must be -1 or +1".into()));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    if let Some(index) = kernel.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (kernel[i * n + j], kernel[j * n + i]);
            if (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidParameter(format!(
                    "kernel matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let k = |i: usize, j: usize| kernel[i * n + j];
    let y = labels;
    let mut alpha = vec![0.0f64; n];
    // gradient of 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0f64; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = 100_000usize.max(100 * n);
    let mut iter = 0;
    while iter < max_iter {
        // i maximizes -y_t G_t over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        // j minimizes the second-order objective over I_low
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let mut a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -b * b / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax - gmin < EPS || j == usize::MAX {
            break;
        }
        iter += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let mut quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(t, i) * di + y[j] * k(t, j) * dj);
        }
    }
    if iter == max_iter {
        log::warn!("SMO stopped after {max_iter} iterations before reaching tolerance");
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok(SvmModel {
        coef: alpha.iter().zip(y).map(|(a, y)| a * y).collect(),
        bias: -rho,
        c,
        iterations: iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_kernel(points: &[[f64; 2]]) -> Vec<f64> {
        let n = points.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = points[i][0] * points[j][0] + points[i][1] * points[j][1];
            }
        }
        k
    }

    fn hi_kernel(points: &[[f64; 2]]) -> Vec<f64> {
        let n = points.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = points[i][0].min(points[j][0]) + points[i][1].min(points[j][1]);
            }
        }
        k
    }

    fn accuracy(m: &SvmModel, k: &[f64], y: &[f64]) -> f64 {
        let n = y.len();
        (0..n)
            .filter(|&i| m.decision(&k[i * n..(i + 1) * n]).signum() == y[i])
            .count() as f64
            / n as f64
    }

    #[test]
    fn separable_pair() {
        let k = linear_kernel(&[[1.0, 0.0], [-1.0, 0.0]]);
        let y = [1.0, -1.0];
        let m = train_svm(&k, &y, 100.0).unwrap();
        assert_eq!(accuracy(&m, &k, &y), 1.0);
        // hard-margin solution: alpha = 0.5 each, b = 0
        assert!((m.coef[0] - 0.5).abs() < 1e-6 && (m.coef[1] + 0.5).abs() < 1e-6);
        assert!(m.bias.abs() < 1e-6);
    }

    #[test]
    fn xor_histograms_with_hi_kernel() {
        // histograms near (1,0)/(0,1) vs mixed ones; HI separates them
        let pts = [[0.9, 0.1], [0.1, 0.9], [0.5, 0.5], [0.55, 0.45], [1.0, 0.0], [0.0, 1.0], [0.45, 0.55]];
        let y = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
        let k = hi_kernel(&pts);
        let m = train_svm(&k, &y, 1e4).unwrap();
        assert_eq!(accuracy(&m, &k, &y), 1.0);
        let sum: f64 = m.coef.iter().sum();
        assert!(sum.abs() < 1e-6);
        assert!(m.kkt_residuals(&k, &y).iter().all(|&r| r <= 1e-4));
    }

    #[test]
    fn dual_constraints_hold_on_overlapping_data() {
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let t = i as f64 / 29.0;
                [t, ((i * 7919) % 13) as f64 / 13.0]
            })
            .collect();
        let y: Vec<f64> = (0..30).map(|i| if (i * 31) % 7 < 4 { 1.0 } else { -1.0 }).collect();
        let k = linear_kernel(&pts);
        let c = 2.0;
        let m = train_svm(&k, &y, c).unwrap();
        let alpha = m.alpha(&y);
        assert!(alpha.iter().all(|&a| (-1e-12..=c + 1e-12).contains(&a)));
        assert!(m.coef.iter().sum::<f64>().abs() < 1e-6);
        let worst = m.kkt_residuals(&k, &y).into_iter().fold(0.0, f64::max);
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn rejects_bad_input() {
        let k = linear_kernel(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(train_svm(&k, &[1.0, 1.0], 1.0), Err(Error::SingleClass)));
        assert!(train_svm(&k, &[1.0, 0.0], 1.0).is_err());
        assert!(train_svm(&k, &[1.0, -1.0], 0.0).is_err());
        assert!(train_svm(&[1.0, 0.5, 0.0, 1.0], &[1.0, -1.0], 1.0).is_err());
    }
}
