//! Linear probes over fixed feature vectors: train-split z-scoring,
//! unregularized logistic regression and ridge regression with a
//! validation-selected penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature matrix with one row per admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * cols {
            return Err(Error::invalid(format!(
                "feature data has {} entries for {} rows x {cols} cols",
                data.len(),
                ids.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(FeatureMatrix { ids, cols, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged feature rows"));
        }
        FeatureMatrix::new(ids, cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            cols: self.cols,
            data,
        }
    }
}

/// Per-feature train mean and population SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::invalid("cannot standardize an empty training matrix"));
        }
        let mut mean = vec![0.0; x.cols];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; x.cols];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Standardizer { mean, sd })
    }

    /// `(x - mean) / sd`, with zero-variance features mapped to 0.
    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.cols,
            });
        }
        let mut data = x.data.clone();
        for row in data.chunks_mut(x.cols.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
        }
        Ok(FeatureMatrix {
            ids: x.ids.clone(),
            cols: x.cols,
            data,
        })
    }
}

pub struct Standardized {
    pub train: FeatureMatrix,
    pub val: FeatureMatrix,
    pub test: FeatureMatrix,
    pub stats: Standardizer,
}

/// Fits z-scoring on `train` and applies it to all three splits.
pub fn zscore_fit_apply(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<Standardized> {
    let stats = Standardizer::fit(train)?;
    Ok(Standardized {
        train: stats.apply(train)?,
        val: stats.apply(val)?,
        test: stats.apply(test)?,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Logistic,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradNorm {
    Inf,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Armijo backtracking; the trial step doubles after each accepted step.
    Backtracking,
    /// Constant step `1 / L` with `L` the Lipschitz bound of the gradient.
    Lipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub norm: GradNorm,
    pub step: StepRule,
    /// L2 penalty on the weights (not the intercept); 0 disables it.
    pub l2: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 10_000,
            tol: 1e-6,
            norm: GradNorm::Inf,
            step: StepRule::Backtracking,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss (plus `l2/2 * |w|^2`).
pub fn logistic_loss(x: &FeatureMatrix, y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.rows();
    let mut loss = 0.0;
    for i in 0..n {
        let m = dot(x.row(i), w) + b;
        // -[y log s(m) + (1-y) log(1 - s(m))] = softplus(m) - y m
        loss += softplus(m) - y[i] * m;
    }
    loss / n as f64 + 0.5 * l2 * dot(w, w)
}

/// Loss and gradient; the gradient has the intercept in its last slot.
pub fn logistic_loss_grad(
    x: &FeatureMatrix,
    y: &[f64],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = x.rows();
    let d = x.cols;
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let m = dot(row, w) + b;
        loss += softplus(m) - y[i] * m;
        let r = sigmoid(m) - y[i];
        for (g, v) in grad[..d].iter_mut().zip(row) {
            *g += r * v;
        }
        grad[d] += r;
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    for (g, wj) in grad[..d].iter_mut().zip(w) {
        *g += l2 * wj;
    }
    (loss * inv + 0.5 * l2 * dot(w, w), grad)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(g: &[f64], kind: GradNorm) -> f64 {
    match kind {
        GradNorm::Inf => g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        GradNorm::L2 => dot(g, g).sqrt(),
    }
}

fn check_labels(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::invalid("logistic regression needs both classes"));
    }
    Ok(())
}

/// Logistic regression by deterministic full-batch gradient descent with
/// backtracking, stopping at gradient ∞-norm < 1e-6 or 10 000 iterations.
pub fn fit_logistic(x: &FeatureMatrix, y: &[f64]) -> Result<ProbeModel> {
    fit_logistic_with(x, y, &LogisticOptions::default()).map(|(m, _)| m)
}

pub fn fit_logistic_with(
    x: &FeatureMatrix,
    y: &[f64],
    opts: &LogisticOptions,
) -> Result<(ProbeModel, FitDiagnostics)> {
    check_labels(x, y)?;
    let d = x.cols;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let lipschitz_step = || {
        let max_sq = (0..x.rows())
            .map(|i| dot(x.row(i), x.row(i)) + 1.0)
            .fold(0.0f64, f64::max);
        1.0 / (0.25 * max_sq + opts.l2)
    };
    let mut step = match opts.step {
        StepRule::Backtracking => 1.0,
        StepRule::Lipschitz => lipschitz_step(),
    };
    let mut diag = FitDiagnostics {
        iterations: 0,
        grad_norm: f64::INFINITY,
        converged: false,
    };
    let mut w_new = vec![0.0; d];
    for it in 0..=opts.max_iter {
        let (loss, g) = logistic_loss_grad(x, y, &w, b, opts.l2);
        diag.iterations = it;
        diag.grad_norm = norm(&g, opts.norm);
        if diag.grad_norm < opts.tol {
            diag.converged = true;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        match opts.step {
            StepRule::Lipschitz => {
                for (wj, gj) in w.iter_mut().zip(&g) {
                    *wj -= step * gj;
                }
                b -= step * g[d];
            }
            StepRule::Backtracking => {
                let g_sq = dot(&g, &g);
                // near the optimum the Armijo decrease drops below the
                // rounding error of the loss itself
                let slack = 4.0 * f64::EPSILON * loss.abs();
                step = (step * 2.0).min(1e6);
                loop {
                    for ((wn, wj), gj) in w_new.iter_mut().zip(&w).zip(&g) {
                        *wn = wj - step * gj;
                    }
                    let b_new = b - step * g[d];
                    let trial = logistic_loss(x, y, &w_new, b_new, opts.l2);
                    if trial <= loss - 0.5 * step * g_sq + slack || step < 1e-16 {
                        std::mem::swap(&mut w, &mut w_new);
                        b = b_new;
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
    }
    if !diag.converged {
        log::debug!(
            "logistic fit stopped after {} iterations, gradient norm {:.3e}",
            diag.iterations,
            diag.grad_norm
        );
    }
    Ok((
        ProbeModel {
            kind: ProbeKind::Logistic,
            weights: w,
            intercept: b,
            lambda: if opts.l2 > 0.0 { Some(opts.l2) } else { None },
            standardizer: None,
        },
        diag,
    ))
}

/// Default penalty grid for ridge probes.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];

/// Solves the centered normal equations `(XcᵀXc + λI) w = Xcᵀyc`; the
/// intercept is `ȳ - x̄ᵀw` and is never penalized. Fails when the system is
/// not positive definite.
pub fn ridge_solve(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::invalid("ridge needs at least one training row"));
    }
    let (xc, yc, x_mean, y_mean) = center(x, y);
    let d = x.cols;
    let mut a = xc.transpose() * &xc;
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * &yc;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::invalid(format!("ridge system not positive definite at λ={lambda}")))?;
    let w = chol.solve(&rhs);
    let b = y_mean - w.dot(&x_mean);
    Ok((w.iter().copied().collect(), b))
}

fn center(x: &FeatureMatrix, y: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let n = x.rows();
    let d = x.cols;
    let m = DMatrix::from_row_slice(n, d, &x.data);
    let x_mean = DVector::from_iterator(d, (0..d).map(|j| m.column(j).mean()));
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = m;
    for j in 0..d {
        let mu = x_mean[j];
        xc.column_mut(j).add_scalar_mut(-mu);
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    (xc, yc, x_mean, y_mean)
}

/// `max |(XcᵀXc + λI) w - Xcᵀyc|` for a ridge solution.
pub fn ridge_residual(x: &FeatureMatrix, y: &[f64], lambda: f64, w: &[f64]) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    let wv = DVector::from_column_slice(w);
    let lhs = xc.transpose() * (&xc * &wv) + wv * lambda;
    let rhs = xc.transpose() * yc;
    (lhs - rhs).amax()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub model: ProbeModel,
    /// `(λ, validation MSE)` for every grid point that could be solved.
    pub path: Vec<(f64, f64)>,
}

/// Fits ridge for every λ in the grid and keeps the one with the lowest
/// validation MSE (ties go to the smaller λ).
pub fn fit_ridge(
    x: &FeatureMatrix,
    y: &[f64],
    grid: &[f64],
    val_x: &FeatureMatrix,
    val_y: &[f64],
) -> Result<RidgeFit> {
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::invalid("λ grid must be non-empty and non-negative"));
    }
    if val_x.rows() != val_y.len() {
        return Err(Error::DimensionMismatch {
            expected: val_x.rows(),
            got: val_y.len(),
        });
    }
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let smallest_positive = lambdas.iter().copied().find(|&l| l > 0.0);
    let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
    let mut path = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let (w, b) = match ridge_solve(x, y, lambda) {
            Ok(sol) => sol,
            Err(e) if lambda == 0.0 => {
                log::warn!("{e}; using smallest positive λ instead");
                match smallest_positive {
                    Some(l) => ridge_solve(x, y, l)?,
                    None => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        let model = ProbeModel {
            kind: ProbeKind::Ridge,
            weights: w.clone(),
            intercept: b,
            lambda: Some(lambda),
            standardizer: None,
        };
        let mse = if val_x.rows() == 0 {
            0.0
        } else {
            let pred = predict(&model, val_x)?;
            pred.iter()
                .zip(val_y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / val_y.len() as f64
        };
        path.push((lambda, mse));
        if best.as_ref().is_none_or(|(_, m, _, _)| mse < *m) {
            best = Some((lambda, mse, w, b));
        }
    }
    let (lambda, _, weights, intercept) = best.expect("non-empty grid");
    Ok(RidgeFit {
        model: ProbeModel {
            kind: ProbeKind::Ridge,
            weights,
            intercept,
            lambda: Some(lambda),
            standardizer: None,
        },
        path,
    })
}

/// Probabilities for logistic models, real predictions for ridge.
pub fn predict(model: &ProbeModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.cols != model.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: model.weights.len(),
            got: x.cols,
        });
    }
    let standardized;
    let x = match &model.standardizer {
        Some(s) => {
            standardized = s.apply(x)?;
            &standardized
        }
        None => x,
    };
    Ok((0..x.rows())
        .map(|i| {
            let m = dot(x.row(i), &model.weights) + model.intercept;
            match model.kind {
                ProbeKind::Logistic => sigmoid(m),
                ProbeKind::Ridge => m,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn mat(rows: &[Vec<f64>]) -> FeatureMatrix {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        FeatureMatrix::from_rows(ids, rows).unwrap()
    }

    fn gaussian(rng: &mut SplitMix64) -> f64 {
        // Box-Muller
        let u1 = rng.unit().max(1e-300);
        let u2 = rng.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn zscore_constant_and_two_point() {
        let train = mat(&[vec![3.0, 0.0], vec![3.0, 2.0]]);
        let s = zscore_fit_apply(&train, &train, &train).unwrap();
        assert_eq!(s.train.data, vec![0.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn zscore_matches_direct_computation() {
        let mut rng = SplitMix64::new(5);
        let rows: Vec<Vec<f64>> = (0..37).map(|_| (0..4).map(|_| gaussian(&mut rng) * 3.0 + 1.0).collect()).collect();
        let x = mat(&rows);
        let st = Standardizer::fit(&x).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mu = col.iter().sum::<f64>() / 37.0;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 37.0;
            assert!((st.mean[j] - mu).abs() < 1e-12);
            assert!((st.sd[j] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_symmetric_data_has_zero_intercept() {
        let rows = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0], vec![-2.0], vec![2.0]];
        let y = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        // mirror-symmetric: (x, y) and (-x, 1-y) both present
        let (m, diag) = fit_logistic_with(&mat(&rows), &y, &LogisticOptions::default()).unwrap();
        assert!(diag.converged, "{diag:?} {m:?}");
        assert!(m.intercept.abs() < 1e-4, "{}", m.intercept);
    }

    #[test]
    fn logistic_separable_reaches_full_accuracy() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![f64::from(i) - 9.5]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i >= 10 { 1.0 } else { 0.0 }).collect();
        let x = mat(&rows);
        let m = fit_logistic(&x, &y).unwrap();
        let p = predict(&m, &x).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
        assert_eq!(acc, 20);
    }

    #[test]
    fn logistic_two_group_closed_form() {
        // x=0: 1 of 4 positive; x=1: 3 of 4 positive. The MLE reproduces
        // the group log-odds: b = logit(1/4), w = logit(3/4) - logit(1/4).
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (x, labels) in [(0.0, [1.0, 0.0, 0.0, 0.0]), (1.0, [1.0, 1.0, 1.0, 0.0])] {
            for l in labels {
                rows.push(vec![x]);
                y.push(l);
            }
        }
        let opts = LogisticOptions { tol: 1e-8, ..LogisticOptions::default() };
        let (m, diag) = fit_logistic_with(&mat(&rows), &y, &opts).unwrap();
        assert!(diag.converged, "{diag:?} {m:?}");
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert!((m.intercept - logit(0.25)).abs() < 1e-6);
        assert!((m.weights[0] - (logit(0.75) - logit(0.25))).abs() < 1e-6);
    }

    #[test]
    fn logistic_rejects_single_class() {
        let x = mat(&[vec![1.0], vec![2.0]]);
        assert!(fit_logistic(&x, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(11);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| gaussian(&mut rng)).collect()).collect();
        let y: Vec<f64> = (0..50).map(|i| f64::from(i % 3 == 0)).collect();
        let x = mat(&rows);
        let w = vec![0.3, -0.7, 0.2];
        let b = 0.1;
        let (_, g) = logistic_loss_grad(&x, &y, &w, b, 0.0);
        let h = 1e-6;
        for j in 0..4 {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if j < 3 {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let fd = (logistic_loss(&x, &y, &wp, bp, 0.0) - logistic_loss(&x, &y, &wm, bm, 0.0)) / (2.0 * h);
            assert!(((fd - g[j]) / g[j]).abs() < 1e-4, "{fd} vs {}", g[j]);
        }
    }

    /// Normal equations solved by Gaussian elimination with partial pivoting
    /// on the augmented system; independent of the Cholesky path.
    fn oracle_ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
        let n = rows.len();
        let d = rows[0].len();
        let xm: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![vec![0.0; d + 1]; d];
        for p in 0..d {
            for q in 0..d {
                a[p][q] = (0..n).map(|i| (rows[i][p] - xm[p]) * (rows[i][q] - xm[q])).sum::<f64>();
            }
            a[p][p] += lambda;
            a[p][d] = (0..n).map(|i| (rows[i][p] - xm[p]) * (y[i] - ym)).sum::<f64>();
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let w: Vec<f64> = (0..d).map(|j| a[j][d] / a[j][j]).collect();
        let b = ym - w.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }

    #[test]
    fn ridge_matches_elimination_oracle() {
        let mut rng = SplitMix64::new(3);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| gaussian(&mut rng)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] - 2.0 * r[3] + 0.5 + 0.1 * gaussian(&mut rng)).collect();
        let x = mat(&rows);
        for lambda in [0.0, 0.1, 10.0] {
            let (w, b) = ridge_solve(&x, &y, lambda).unwrap();
            let (wo, bo) = oracle_ridge(&rows, &y, lambda);
            let diff = w.iter().zip(&wo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "λ={lambda}: {diff}");
            assert!((b - bo).abs() < 1e-8);
            assert!(ridge_residual(&x, &y, lambda, &w) < 1e-8);
        }
    }

    #[test]
    fn ridge_recovers_noiseless_coefficients() {
        let mut rng = SplitMix64::new(8);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| gaussian(&mut rng)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.5 * r[0] - 0.25 * r[1] + 3.0 * r[2] - 4.0).collect();
        let (w, b) = ridge_solve(&mat(&rows), &y, 0.0).unwrap();
        for (got, want) in w.iter().zip([1.5, -0.25, 3.0]) {
            assert!((got - want).abs() < 1e-8);
        }
        assert!((b + 4.0).abs() < 1e-8);
    }

    #[test]
    fn ridge_large_penalty_predicts_mean() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = vec![2.0, 4.0, 5.0, 9.0];
        let x = mat(&rows);
        let (w, b) = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(w[0].abs() < 1e-9);
        assert!((b - 5.0).abs() < 1e-8);
    }

    #[test]
    fn ridge_falls_back_when_singular() {
        // duplicated column makes λ=0 singular
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(i), f64::from(i)]).collect();
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let x = mat(&rows);
        let fit = fit_ridge(&x, &y, &[0.0, 0.5], &x, &y).unwrap();
        assert!(fit.model.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn ridge_selects_validation_minimum() {
        let mut rng = SplitMix64::new(21);
        let gen = |rng: &mut SplitMix64, n: usize| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| gaussian(rng)).collect()).collect();
            let y: Vec<f64> = rows.iter().map(|r| 0.3 * r[0] + gaussian(rng)).collect();
            (rows, y)
        };
        let (tr, ytr) = gen(&mut rng, 25);
        let (va, yva) = gen(&mut rng, 200);
        let grid = DEFAULT_LAMBDA_GRID;
        let fit = fit_ridge(&mat(&tr), &ytr, &grid, &mat(&va), &yva).unwrap();
        let best = fit.path.iter().min_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
        assert_eq!(fit.model.lambda, Some(best.0));
    }

    #[test]
    fn predictions_basic() {
        let x = mat(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        let zero = ProbeModel {
            kind: ProbeKind::Logistic,
            weights: vec![0.0, 0.0],
            intercept: 0.0,
            lambda: None,
            standardizer: None,
        };
        assert_eq!(predict(&zero, &x).unwrap(), vec![0.5, 0.5]);
        let ridge = ProbeModel {
            kind: ProbeKind::Ridge,
            intercept: 2.5,
            ..zero.clone()
        };
        assert_eq!(predict(&ridge, &x).unwrap(), vec![2.5, 2.5]);
        let bad = mat(&[vec![1.0]]);
        assert!(predict(&zero, &bad).is_err());
    }

    #[test]
    fn prediction_monotone_in_positive_weight() {
        let model = ProbeModel {
            kind: ProbeKind::Logistic,
            weights: vec![0.7, -0.2],
            intercept: 0.1,
            lambda: None,
            standardizer: None,
        };
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let x = mat(&[vec![-5.0 + 0.2 * f64::from(k), 1.0]]);
            let p = predict(&model, &x).unwrap()[0];
            assert!(p > prev);
            prev = p;
        }
    }
}
