//! Closed-form math for the trace-polynomial DAG penalty
//! `f(W) = mu * Tr(I + alpha W)^n`, the Bregman kernel
//! `h(W) = mu (n - 1) (1 + alpha ||W||_F)^n`, their gradients, the induced
//! Bregman divergence, and numerical checks of the relative smoothness of
//! `f` with respect to `h`.
//!
//! For a nonnegative `W`, `Tr(I + alpha W)^n >= n` with equality exactly when
//! the support of `W` is acyclic, so `residual(W) = Tr(I + alpha W)^n - n`
//! measures how far the graph is from a DAG.
//!
//! The signed (split) formulation composes every function with the sum map
//! `s(W+, W-) = W+ + W-`.

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, inner, matrix_power, shifted_identity, trace_of_product};
use crate::weights::{SplitWeights, MIN_NODES};

/// Norm below which the kernel gradient direction `W / ||W||_F` is treated
/// as undefined.
pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// Default tolerance on the acyclicity residual.
pub const DEFAULT_ACYCLIC_TOL: f64 = 1e-8;

/// Relative and absolute slack of the relative-smoothness inequality
/// `|q_f| <= q_h (1 + rel) + abs`.
pub const SMOOTHNESS_REL_SLACK: f64 = 1e-6;
pub const SMOOTHNESS_ABS_SLACK: f64 = 1e-8;

/// `(n, alpha, mu)` shared by the penalty and the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    n: usize,
    alpha: f64,
    mu: f64,
}

impl PenaltyParams {
    pub fn new(n: usize, alpha: f64, mu: f64) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::InvalidParameter(format!(
                "penalty needs n >= {MIN_NODES}, got {n}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mu must be nonnegative and finite, got {mu}"
            )));
        }
        if alpha * n as f64 > 1.0 {
            warn!(
                "alpha * n = {:.3} exceeds 1; (1 + alpha ||W||)^n may overflow for large weights",
                alpha * n as f64
            );
        }
        Ok(PenaltyParams { n, alpha, mu })
    }

    /// `alpha = 0.1 / n`.
    pub fn with_default_alpha(n: usize, mu: f64) -> Result<Self> {
        PenaltyParams::new(n, default_alpha(n), mu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Lower bound `n / ((n - 2) alpha)` on `sum_ij W_ij` defining the convex
    /// feasible set used by the solver.
    pub fn norm_floor(&self) -> f64 {
        self.n as f64 / ((self.n as f64 - 2.0) * self.alpha)
    }

    /// Lower bound `1 / ((n - 2) alpha)` on `||W||_F` under which `f` is
    /// 1-smooth relative to `h`.
    pub fn frobenius_floor(&self) -> f64 {
        1.0 / ((self.n as f64 - 2.0) * self.alpha)
    }

    fn check(&self, w: ArrayView2<f64>) -> Result<()> {
        let (rows, cols) = w.dim();
        if rows != self.n || cols != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                rows,
                cols,
            });
        }
        Ok(())
    }
}

pub fn default_alpha(n: usize) -> f64 {
    0.1 / n as f64
}

/// `(I + alpha W)` and `(I + alpha W)^(n-1)`.
fn shifted_powers(w: ArrayView2<f64>, p: &PenaltyParams) -> (Array2<f64>, Array2<f64>) {
    let shifted = shifted_identity(w, p.alpha);
    let power = matrix_power(shifted.view(), p.n - 1);
    (shifted, power)
}

/// `f(W) = mu Tr(I + alpha W)^n`.
pub fn penalty_value(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<f64> {
    p.check(w)?;
    let (shifted, power) = shifted_powers(w, p);
    Ok(p.mu * trace_of_product(shifted.view(), power.view()))
}

/// `Tr(I + alpha W)^n - n`, accumulated diagonal entry by diagonal entry.
///
/// For an acyclic support every diagonal entry of the power is exactly one,
/// so the residual is exactly zero.
pub fn penalty_residual(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<f64> {
    p.check(w)?;
    let (shifted, power) = shifted_powers(w, p);
    Ok(residual_from_powers(&shifted, &power))
}

fn residual_from_powers(shifted: &Array2<f64>, power: &Array2<f64>) -> f64 {
    let n = shifted.nrows();
    (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|k| shifted[[i, k]] * power[[k, i]]).sum();
            d - 1.0
        })
        .sum()
}

/// `grad f(W) = mu n alpha ((I + alpha W)^(n-1))^T`.
pub fn penalty_gradient(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<Array2<f64>> {
    Ok(penalty_value_and_gradient(w, p)?.1)
}

/// Value and gradient from a single matrix power.
pub fn penalty_value_and_gradient(
    w: ArrayView2<f64>,
    p: &PenaltyParams,
) -> Result<(f64, Array2<f64>)> {
    p.check(w)?;
    let (shifted, power) = shifted_powers(w, p);
    let value = p.mu * trace_of_product(shifted.view(), power.view());
    let scale = p.mu * p.n as f64 * p.alpha;
    let gradient = power.t().mapv(|x| scale * x);
    Ok((value, gradient))
}

/// `h(W) = mu (n - 1) (1 + alpha ||W||_F)^n`.
pub fn kernel_value(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<f64> {
    p.check(w)?;
    Ok(kernel_of_norm(frobenius_norm(w), p))
}

fn kernel_of_norm(norm: f64, p: &PenaltyParams) -> f64 {
    p.mu * (p.n as f64 - 1.0) * (1.0 + p.alpha * norm).powi(p.n as i32)
}

/// `grad h(W) = mu n (n - 1) alpha (1 + alpha ||W||_F)^(n-1) W / ||W||_F`.
///
/// Fails with [`Error::DegenerateNorm`] when `||W||_F < DEFAULT_NORM_EPS`;
/// see [`kernel_gradient_clamped`] for the zero-limit convention.
pub fn kernel_gradient(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<Array2<f64>> {
    p.check(w)?;
    let norm = frobenius_norm(w);
    if norm < DEFAULT_NORM_EPS {
        return Err(Error::DegenerateNorm {
            norm,
            floor: DEFAULT_NORM_EPS,
        });
    }
    Ok(kernel_gradient_with_norm(w, norm, p))
}

/// Kernel gradient with the norm in the quotient clamped at
/// `DEFAULT_NORM_EPS`. At `W = 0` this returns the zero matrix.
pub fn kernel_gradient_clamped(w: ArrayView2<f64>, p: &PenaltyParams) -> Result<Array2<f64>> {
    p.check(w)?;
    let norm = frobenius_norm(w);
    Ok(kernel_gradient_with_norm(w, norm, p))
}

fn kernel_gradient_with_norm(w: ArrayView2<f64>, norm: f64, p: &PenaltyParams) -> Array2<f64> {
    let n = p.n as f64;
    let radial = p.mu * n * (n - 1.0) * p.alpha * (1.0 + p.alpha * norm).powi(p.n as i32 - 1);
    let scale = radial / norm.max(DEFAULT_NORM_EPS);
    w.mapv(|x| scale * x)
}

/// `D_h(A, B) = h(A) - h(B) - <grad h(B), A - B>`.
pub fn bregman_divergence(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    p: &PenaltyParams,
) -> Result<f64> {
    p.check(a)?;
    let grad_b = kernel_gradient(b, p)?;
    let diff = &a - &b;
    Ok(kernel_value(a, p)? - kernel_value(b, p)? - inner(grad_b.view(), diff.view()))
}

/// Acyclicity through the penalty residual: `residual(W) <= tol`.
///
/// `W` must be nonnegative; pass `|W|` for signed weights.
pub fn is_acyclic_numeric(w: ArrayView2<f64>, p: &PenaltyParams, tol: f64) -> Result<bool> {
    Ok(penalty_residual(w, p)? <= tol)
}

/// Depth-first cycle detection on the support `{(i, j) : W_ij != 0}`.
pub fn is_acyclic_exact(w: ArrayView2<f64>) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = w.nrows();
    let mut mark = vec![Mark::New; n];
    // (node, next child to inspect)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        mark[root] = Mark::Active;
        stack.push((root, 0));
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next == n {
                mark[node] = Mark::Done;
                stack.pop();
                continue;
            }
            let child = *next;
            *next += 1;
            if w[[node, child]] == 0.0 {
                continue;
            }
            match mark[child] {
                Mark::Active => return false,
                Mark::New => {
                    mark[child] = Mark::Active;
                    stack.push((child, 0));
                }
                Mark::Done => {}
            }
        }
    }
    true
}

/// A topological order of the support of `W` (parents first), or `None`
/// when the support has a cycle.
pub fn topological_order(w: ArrayView2<f64>) -> Option<Vec<usize>> {
    let n = w.nrows();
    let mut indegree: Vec<usize> = (0..n)
        .map(|j| (0..n).filter(|&i| w[[i, j]] != 0.0).count())
        .collect();
    let mut ready: std::collections::VecDeque<usize> =
        (0..n).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_front() {
        order.push(i);
        for j in 0..n {
            if w[[i, j]] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push_back(j);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

pub fn split_penalty_value(s: &SplitWeights, p: &PenaltyParams) -> Result<f64> {
    penalty_value(s.sum().view(), p)
}

/// Gradient blocks with respect to `W+` and `W-`; both equal `grad f(W+ + W-)`.
pub fn split_penalty_gradient(
    s: &SplitWeights,
    p: &PenaltyParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let g = penalty_gradient(s.sum().view(), p)?;
    Ok((g.clone(), g))
}

pub fn split_kernel_value(s: &SplitWeights, p: &PenaltyParams) -> Result<f64> {
    kernel_value(s.sum().view(), p)
}

pub fn split_kernel_gradient(
    s: &SplitWeights,
    p: &PenaltyParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let g = kernel_gradient(s.sum().view(), p)?;
    Ok((g.clone(), g))
}

/// Second directional derivatives `(grad^2 f(W)[H, H], grad^2 h(W)[H, H])`
/// estimated by central differences of the analytic gradients along `H`.
pub fn hessian_forms(
    w: ArrayView2<f64>,
    dir: ArrayView2<f64>,
    p: &PenaltyParams,
) -> Result<(f64, f64)> {
    p.check(w)?;
    p.check(dir)?;
    let dir_norm = frobenius_norm(dir);
    if dir_norm == 0.0 {
        return Ok((0.0, 0.0));
    }
    let step = 1e-4 * frobenius_norm(w).max(1.0) / dir_norm;
    let plus = &w + &dir.mapv(|x| step * x);
    let minus = &w - &dir.mapv(|x| step * x);
    let df = &penalty_gradient(plus.view(), p)? - &penalty_gradient(minus.view(), p)?;
    let dh = &kernel_gradient(plus.view(), p)? - &kernel_gradient(minus.view(), p)?;
    Ok((
        inner(df.view(), dir) / (2.0 * step),
        inner(dh.view(), dir) / (2.0 * step),
    ))
}

/// Hessian forms of the split penalty and kernel along `(H+, H-)`.
///
/// Differences are taken on the joint `2 n^2` variable using the split
/// gradients, not by reducing to the sum map.
pub fn split_hessian_forms(
    s: &SplitWeights,
    dir: (ArrayView2<f64>, ArrayView2<f64>),
    p: &PenaltyParams,
) -> Result<(f64, f64)> {
    let dir_norm = (frobenius_norm(dir.0).powi(2) + frobenius_norm(dir.1).powi(2)).sqrt();
    if dir_norm == 0.0 {
        return Ok((0.0, 0.0));
    }
    let base = frobenius_norm(s.sum().view()).max(1.0);
    let step = 1e-4 * base / dir_norm;
    let shift = |sign: f64| -> Array2<f64> {
        // Perturbed sum; shifted blocks may leave the nonnegative orthant,
        // which the smooth formulas do not require.
        let pos = s.pos().as_array() + &dir.0.mapv(|x| sign * step * x);
        let neg = s.neg().as_array() + &dir.1.mapv(|x| sign * step * x);
        pos + neg
    };
    let (plus, minus) = (shift(1.0), shift(-1.0));
    let blocks = |g_plus: Array2<f64>, g_minus: Array2<f64>| -> f64 {
        // Each block's gradient is the gradient at the sum.
        let d = g_plus - g_minus;
        (inner(d.view(), dir.0) + inner(d.view(), dir.1)) / (2.0 * step)
    };
    let qf = blocks(
        penalty_gradient(plus.view(), p)?,
        penalty_gradient(minus.view(), p)?,
    );
    let qh = blocks(
        kernel_gradient(plus.view(), p)?,
        kernel_gradient(minus.view(), p)?,
    );
    Ok((qf, qh))
}

/// Outcome of a sampled relative-smoothness check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `|q_f| / q_h`.
    pub max_ratio: f64,
    pub passed: bool,
}

impl SmoothnessReport {
    fn new() -> Self {
        SmoothnessReport {
            trials: 0,
            violations: 0,
            max_ratio: 0.0,
            passed: true,
        }
    }

    fn record(&mut self, qf: f64, qh: f64) {
        self.trials += 1;
        if qh > 0.0 {
            self.max_ratio = self.max_ratio.max(qf.abs() / qh);
        }
        if !smoothness_holds(qf, qh) {
            self.violations += 1;
            self.passed = false;
        }
    }
}

/// `|q_f| <= q_h (1 + 1e-6) + 1e-8`.
pub fn smoothness_holds(qf: f64, qh: f64) -> bool {
    qf.abs() <= qh * (1.0 + SMOOTHNESS_REL_SLACK) + SMOOTHNESS_ABS_SLACK
}

/// Random nonnegative zero-diagonal matrix with `||W||_F` in
/// `[floor, 4 floor]`.
fn sample_in_frobenius_set(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Array2<f64> {
    let density: f64 = rng.random_range(0.05..=1.0);
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < density {
                w[[i, j]] = rng.random::<f64>();
            }
        }
    }
    if frobenius_norm(w.view()) == 0.0 {
        w[[0, 1]] = 1.0;
    }
    // Every tenth draw sits on the boundary of the set.
    let target = if rng.random_range(0..10) == 0 {
        floor
    } else {
        floor * rng.random_range(1.0..4.0)
    };
    let scale = target / frobenius_norm(w.view());
    w.mapv_inplace(|x| x * scale);
    w
}

fn sample_direction(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(StandardNormal))
}

/// Samples `W` with `||W||_F >= 1 / ((n - 2) alpha)` and random directions
/// `H`, and checks `|grad^2 f(W)[H, H]| <= grad^2 h(W)[H, H]` up to the
/// finite-difference slack.
pub fn relative_smoothness_check(p: &PenaltyParams, trials: usize, seed: u64) -> SmoothnessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SmoothnessReport::new();
    for _ in 0..trials {
        let w = sample_in_frobenius_set(&mut rng, p.n, p.frobenius_floor());
        let dir = sample_direction(&mut rng, p.n);
        match hessian_forms(w.view(), dir.view(), p) {
            Ok((qf, qh)) => report.record(qf, qh),
            Err(_) => {
                report.trials += 1;
                report.violations += 1;
                report.passed = false;
            }
        }
    }
    report
}

/// Split-mode variant: pairs `(W+, W-)` with `W+ + W-` in the Frobenius set
/// and joint directions `(H+, H-)`.
pub fn split_relative_smoothness_check(
    p: &PenaltyParams,
    trials: usize,
    seed: u64,
) -> SmoothnessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SmoothnessReport::new();
    for _ in 0..trials {
        let total = sample_in_frobenius_set(&mut rng, p.n, p.frobenius_floor());
        // Split each entry at a random fraction.
        let frac = Array2::from_shape_simple_fn((p.n, p.n), || rng.random::<f64>());
        let pos = &total * &frac;
        let neg = &total - &pos;
        let split = crate::weights::WeightMatrix::with_zero_diagonal(pos).and_then(|pos| {
            crate::weights::WeightMatrix::with_zero_diagonal(neg.mapv(|x| x.max(0.0)))
                .and_then(|neg| SplitWeights::new(pos, neg))
        });
        let dir_pos = sample_direction(&mut rng, p.n);
        let dir_neg = sample_direction(&mut rng, p.n);
        let forms =
            split.and_then(|s| split_hessian_forms(&s, (dir_pos.view(), dir_neg.view()), p));
        match forms {
            Ok((qf, qh)) => report.record(qf, qh),
            Err(_) => {
                report.trials += 1;
                report.violations += 1;
                report.passed = false;
            }
        }
    }
    report
}
