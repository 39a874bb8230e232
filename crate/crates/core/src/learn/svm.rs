//! Binary RBF-kernel SVM trained by sequential minimal optimization.
//!
//! The solver follows the LIBSVM formulation: maximal-violating-pair
//! selection with second-order gain for the second index, analytic
//! two-variable updates with box clipping, and the bias taken as the mean
//! of `y_i * G_i` over free support vectors.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Action;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

const TAU: f64 = 1e-12;
const KERNEL_CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c_reg: f64,
    /// RBF width; `None` means `1 / feature dimension`.
    pub gamma: Option<f64>,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    /// Iteration budget, in multiples of the training-set size.
    pub max_passes: usize,
    /// Scale each class's box constraint by its inverse frequency.
    pub class_weighting: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c_reg: 10.0, gamma: None, tol: 1e-3, max_passes: 200, class_weighting: true }
    }
}

impl SvmParams {
    pub fn gamma_for(&self, dim: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / dim.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg > 0.0) || !(self.tol > 0.0) || self.gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::invalid("SVM c_reg, tol and gamma must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub dim: usize,
    pub gamma: f64,
    pub c_reg: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `y_i * alpha_i` for each support vector.
    pub alphas: Vec<f64>,
    pub bias: f64,
}

#[inline]
fn rbf(gamma: f64, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    /// Model with no support vectors: the decision is the constant `bias`.
    pub fn constant(dim: usize, gamma: f64, c_reg: f64, bias: f64) -> Self {
        SvmModel { dim, gamma, c_reg, support_vectors: Vec::new(), alphas: Vec::new(), bias }
    }

    /// Random starting point for reward learning: one random support vector
    /// in the unit cube with a random weight, and a random bias.
    pub fn random(dim: usize, gamma: f64, c_reg: f64, rng: &mut impl Rng) -> Self {
        let sv: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let alpha = rng.random_range(-1.0..1.0);
        let bias = rng.random_range(-0.5..0.5);
        SvmModel { dim, gamma, c_reg, support_vectors: vec![sv], alphas: vec![alpha], bias }
    }

    /// Signed margin `sum_i y_i alpha_i K(sv_i, x) + b`; positive means merge.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * rbf(self.gamma, sv, x))
            .sum();
        Ok(s + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Action> {
        Ok(if self.decision(x)? > 0.0 { Action::Merge } else { Action::NotMerge })
    }

    /// Fraction of `data` whose action the model predicts.
    pub fn accuracy(&self, data: &[(FeatureVector, Action)]) -> Result<f64> {
        if data.is_empty() {
            return Ok(1.0);
        }
        let mut hits = 0usize;
        for (x, a) in data {
            hits += usize::from(self.predict(x.as_slice())? == *a);
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Rows of `Q_ij = y_i y_j K(x_i, x_j)`, computed on demand and kept in a
/// FIFO cache bounded by `KERNEL_CACHE_BYTES`.
struct QRows<'a> {
    xs: &'a [&'a [f64]],
    y: &'a [f64],
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> QRows<'a> {
    fn new(xs: &'a [&'a [f64]], y: &'a [f64], gamma: f64) -> Self {
        let capacity = (KERNEL_CACHE_BYTES / (8 * xs.len().max(1))).max(2);
        QRows { xs, y, gamma, rows: HashMap::new(), order: VecDeque::new(), capacity }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.xs[i];
            let yi = self.y[i];
            let row = self
                .xs
                .iter()
                .zip(self.y)
                .map(|(xk, yk)| yi * yk * rbf(self.gamma, xi, xk))
                .collect();
            self.rows.insert(i, row);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

/// Fits a soft-margin RBF SVM with merge as the positive class.
pub fn svm_fit(data: &[(FeatureVector, Action)], params: &SvmParams) -> Result<SvmModel> {
    params.validate()?;
    let Some(first) = data.first() else {
        return Err(Error::invalid("SVM training set is empty"));
    };
    let dim = first.0.len();
    let n = data.len();
    for (x, _) in data {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("SVM training set contains non-finite features"));
        }
    }
    let y: Vec<f64> = data.iter().map(|(_, a)| a.sign()).collect();
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("SVM training set needs both merge and not-merge examples"));
    }
    let (c_pos, c_neg) = if params.class_weighting {
        (
            params.c_reg * n as f64 / (2.0 * n_pos as f64),
            params.c_reg * n as f64 / (2.0 * n_neg as f64),
        )
    } else {
        (params.c_reg, params.c_reg)
    };
    let c: Vec<f64> = y.iter().map(|&yi| if yi > 0.0 { c_pos } else { c_neg }).collect();
    let gamma = params.gamma_for(dim);
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| x.as_slice()).collect();

    let mut q = QRows::new(&xs, &y, gamma);
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    // RBF diagonal is 1.
    let qd = 1.0;
    let max_iter = params.max_passes.saturating_mul(n).max(100_000);

    for _ in 0..max_iter {
        // First index: maximal violation among I_up.
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c[t] } else { alpha[t] > 0.0 };
            if up && -y[t] * grad[t] >= g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        let qi = q.row(i).to_vec();

        // Second index: best second-order gain among I_low.
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c[t] };
            if !low {
                continue;
            }
            let yg = y[t] * grad[t];
            g_max2 = g_max2.max(yg);
            let grad_diff = g_max + yg;
            if grad_diff > 0.0 {
                let k_it = y[i] * y[t] * qi[t];
                let mut quad = qd + qd - 2.0 * k_it;
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = t;
                }
            }
        }
        if g_max + g_max2 < params.tol || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let qj = q.row(j).to_vec();

        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (ci, cj) = (c[i], c[j]);
        if y[i] != y[j] {
            let mut quad = qd + qd + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
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
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = qd + qd - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for k in 0..n {
            grad[k] += qi[k] * dai + qj[k] * daj;
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c[t] {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(xs[t].to_vec());
            alphas.push(y[t] * alpha[t]);
        }
    }
    Ok(SvmModel { dim, gamma, c_reg: params.c_reg, support_vectors, alphas, bias: -rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    fn xor() -> Vec<(FeatureVector, Action)> {
        vec![
            (fv(&[0.0, 0.0]), Action::NotMerge),
            (fv(&[1.0, 1.0]), Action::NotMerge),
            (fv(&[0.0, 1.0]), Action::Merge),
            (fv(&[1.0, 0.0]), Action::Merge),
        ]
    }

    #[test]
    fn two_points_separated() {
        let data = vec![(fv(&[0.1, 0.1]), Action::Merge), (fv(&[0.9, 0.8]), Action::NotMerge)];
        let m = svm_fit(&data, &SvmParams::default()).unwrap();
        assert!(m.decision(&[0.1, 0.1]).unwrap() > 0.0);
        assert!(m.decision(&[0.9, 0.8]).unwrap() < 0.0);
        assert_eq!(m.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn xor_is_fit_by_rbf() {
        // Grid-search oracle: XOR is separable for every width tried, and the
        // default width is one of them.
        for gamma in [0.5, 1.0, 2.0, 5.0] {
            let p = SvmParams { gamma: Some(gamma), c_reg: 100.0, ..Default::default() };
            let m = svm_fit(&xor(), &p).unwrap();
            assert_eq!(m.accuracy(&xor()).unwrap(), 1.0, "gamma {gamma}");
            for (sv, _) in xor() {
                let _ = m.decision(sv.as_slice()).unwrap();
            }
            assert!(m.alphas.iter().all(|a| a.abs() <= 100.0 + 1e-9));
        }
        let m = svm_fit(&xor(), &SvmParams { c_reg: 100.0, ..Default::default() }).unwrap();
        assert_eq!(m.accuracy(&xor()).unwrap(), 1.0);
    }

    #[test]
    fn duplicated_dataset_same_decision() {
        let data = vec![
            (fv(&[0.0, 0.1]), Action::Merge),
            (fv(&[0.2, 0.0]), Action::Merge),
            (fv(&[1.0, 0.9]), Action::NotMerge),
            (fv(&[0.8, 1.0]), Action::NotMerge),
        ];
        let p = SvmParams { gamma: Some(1.0), c_reg: 1e3, tol: 1e-10, ..Default::default() };
        let once = svm_fit(&data, &p).unwrap();
        let twice: Vec<_> = data.iter().chain(&data).cloned().collect();
        let twice = svm_fit(&twice, &p).unwrap();
        for x in [[0.5, 0.5], [0.0, 0.0], [1.0, 1.0], [0.3, 0.7]] {
            let (a, b) = (once.decision(&x).unwrap(), twice.decision(&x).unwrap());
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![(fv(&[0.0, 0.1]), Action::Merge), (fv(&[0.2, 0.0]), Action::Merge)];
        assert!(matches!(svm_fit(&data, &SvmParams::default()), Err(Error::InvalidArgument(_))));
        assert!(svm_fit(&[], &SvmParams::default()).is_err());
    }

    #[test]
    fn dimension_checked() {
        let m = svm_fit(&xor(), &SvmParams::default()).unwrap();
        assert!(matches!(m.decision(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn decision_is_continuous() {
        let m = svm_fit(&xor(), &SvmParams { c_reg: 100.0, ..Default::default() }).unwrap();
        let f0 = m.decision(&[0.3, 0.6]).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let h = 10f64.powi(-k);
            let d = (m.decision(&[0.3 + h, 0.6 - h]).unwrap() - f0).abs();
            assert!(d <= last + 1e-15);
            last = d;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn support_vector_sign() {
        let data = vec![(fv(&[0.1, 0.1]), Action::Merge), (fv(&[0.9, 0.8]), Action::NotMerge)];
        let m = svm_fit(&data, &SvmParams::default()).unwrap();
        let pos = m.alphas.iter().position(|&a| a > 0.0).unwrap();
        assert!(m.decision(&m.support_vectors[pos]).unwrap() > 0.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let p = SvmParams { c_reg: 100.0, ..Default::default() };
        assert_eq!(svm_fit(&xor(), &p).unwrap(), svm_fit(&xor(), &p).unwrap());
    }
}
