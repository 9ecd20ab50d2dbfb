//! Convex Bregman proximal subproblem
//!
//! ```text
//! min_W  Tr((I - D)^T S (I - D)) + lambda sum(W) + <G, s(W)> + h(s(W)) / gamma
//! s.t.   W >= 0, diag(W) = 0, [sum(W) >= floor]
//! ```
//!
//! where `S = X^T X / m`, `G` is the linear term built by the outer loop,
//! `D` is the signed matrix and `s(W)` the summed one (both equal `W` in
//! positive mode). Solved by accelerated proximal gradient with backtracking
//! and a function-value restart that keeps the objective monotone.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dag_penalty::{kernel_gradient_clamped, kernel_value, PenaltyParams};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, inner, spectral_norm_psd};
use crate::weights::{Mode, SplitWeights, WeightMatrix};

/// Optimisation variable of the subproblem: one nonnegative block in
/// positive mode, `(W+, W-)` in split mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    blocks: Vec<Array2<f64>>,
}

impl Variable {
    pub fn positive(w: Array2<f64>) -> Self {
        Variable { blocks: vec![w] }
    }

    pub fn split(pos: Array2<f64>, neg: Array2<f64>) -> Self {
        Variable {
            blocks: vec![pos, neg],
        }
    }

    pub fn from_weights(w: &WeightMatrix) -> Self {
        Variable::positive(w.as_array().clone())
    }

    pub fn from_split(s: &SplitWeights) -> Self {
        Variable::split(s.pos().as_array().clone(), s.neg().as_array().clone())
    }

    pub fn mode(&self) -> Mode {
        if self.blocks.len() == 1 {
            Mode::Positive
        } else {
            Mode::Split
        }
    }

    pub fn n(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    /// `W+ - W-` (or `W`).
    pub fn signed(&self) -> Array2<f64> {
        match self.blocks.as_slice() {
            [w] => w.clone(),
            [p, n] => p - n,
            _ => unreachable!(),
        }
    }

    /// `W+ + W-` (or `W`).
    pub fn summed(&self) -> Array2<f64> {
        match self.blocks.as_slice() {
            [w] => w.clone(),
            [p, n] => p + n,
            _ => unreachable!(),
        }
    }

    /// Sum of all entries over all blocks.
    pub fn total(&self) -> f64 {
        self.blocks.iter().map(|b| b.sum()).sum()
    }

    pub fn dot(&self, other: &Variable) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| inner(a.view(), b.view()))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &Variable) -> Variable {
        Variable {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + &b.mapv(|x| scale * x))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Variable) -> Variable {
        self.add_scaled(-1.0, other)
    }

    pub fn is_feasible(&self, floor: Option<f64>) -> bool {
        let orthant = self
            .blocks
            .iter()
            .all(|b| b.iter().all(|&x| x >= 0.0) && (0..b.nrows()).all(|i| b[[i, i]] == 0.0));
        orthant && floor.is_none_or(|f| self.total() >= f)
    }

    pub fn into_weights(self) -> Result<WeightMatrix> {
        WeightMatrix::new(self.signed())
    }

    pub fn into_split(self) -> Result<SplitWeights> {
        let mut it = self.blocks.into_iter();
        match (it.next(), it.next()) {
            (Some(p), Some(n)) => SplitWeights::new(WeightMatrix::new(p)?, WeightMatrix::new(n)?),
            _ => Err(Error::InvalidParameter(
                "variable is not in split mode".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct InnerOptions {
    pub max_iter: usize,
    /// Relative successive decrease of the objective below which the fixed
    /// point residual is tested.
    pub rel_tol: f64,
    pub backtrack_factor: f64,
    /// Starting Lipschitz estimate; estimated from `S` and the kernel
    /// curvature when absent.
    pub initial_lipschitz: Option<f64>,
    /// Required `||W - prox(W - grad / L)||_F` at exit.
    pub kkt_tol: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            max_iter: 2000,
            rel_tol: 1e-9,
            backtrack_factor: 2.0,
            initial_lipschitz: None,
            kkt_tol: 1e-8,
        }
    }
}

impl InnerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "inner max_iter must be >= 1".into(),
            ));
        }
        if !(self.rel_tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "inner tolerances must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 1.0) {
            return Err(Error::InvalidParameter(
                "backtrack_factor must exceed 1".into(),
            ));
        }
        if let Some(l) = self.initial_lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(
                    "initial_lipschitz must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One Bregman proximal subproblem.
#[derive(Debug, Clone)]
pub struct ProxProblem<'a> {
    /// `S = X^T X / m`.
    pub gram: ArrayView2<'a, f64>,
    /// `grad f(W_k) - grad h(W_k) / gamma`, applied to `s(W)`.
    pub linear_term: Array2<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub params: PenaltyParams,
    pub enforce_norm_floor: bool,
    pub mode: Mode,
}

impl<'a> ProxProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        let n = self.params.n();
        for (name, dim) in [
            ("gram", self.gram.dim()),
            ("linear_term", self.linear_term.dim()),
        ] {
            if dim != (n, n) {
                return Err(Error::InvalidParameter(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    dim.0, dim.1
                )));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn floor(&self) -> Option<f64> {
        self.enforce_norm_floor.then(|| self.params.norm_floor())
    }

    fn check_variable(&self, w: &Variable) -> Result<()> {
        if w.mode() != self.mode || w.n() != self.params.n() {
            return Err(Error::InvalidParameter(format!(
                "variable ({} mode, n = {}) does not match problem ({} mode, n = {})",
                w.mode(),
                w.n(),
                self.mode,
                self.params.n()
            )));
        }
        Ok(())
    }

    /// Smooth part of the objective.
    pub fn smooth_value(&self, w: &Variable) -> Result<f64> {
        self.check_variable(w)?;
        let residual = identity_minus(w.signed());
        let loss = inner(residual.view(), self.gram.dot(&residual).view());
        let sum = w.summed();
        Ok(loss
            + inner(self.linear_term.view(), sum.view())
            + kernel_value(sum.view(), &self.params)? / self.gamma)
    }

    /// Smooth part plus `lambda * sum(W)` (the l1 norm on the feasible set).
    pub fn objective(&self, w: &Variable) -> Result<f64> {
        Ok(self.smooth_value(w)? + self.lambda * w.total())
    }

    fn smooth_value_and_gradient(&self, w: &Variable) -> Result<(f64, Variable)> {
        self.check_variable(w)?;
        let residual = identity_minus(w.signed());
        let s_res = self.gram.dot(&residual);
        let loss = inner(residual.view(), s_res.view());
        let sum = w.summed();
        let value = loss
            + inner(self.linear_term.view(), sum.view())
            + kernel_value(sum.view(), &self.params)? / self.gamma;
        // d loss / dD = 2 S (D - I) = -2 S (I - D)
        let loss_grad = s_res.mapv(|x| -2.0 * x);
        let shared = &self.linear_term
            + &kernel_gradient_clamped(sum.view(), &self.params)?.mapv(|x| x / self.gamma);
        let grad = match self.mode {
            Mode::Positive => Variable::positive(&loss_grad + &shared),
            Mode::Split => Variable::split(&shared + &loss_grad, &shared - &loss_grad),
        };
        Ok((value, grad))
    }

    /// Local Lipschitz estimate of the smooth gradient around `w`.
    fn lipschitz_estimate(&self, w: &Variable) -> f64 {
        let blocks = w.blocks().len() as f64;
        let loss = 2.0 * blocks * spectral_norm_psd(self.gram, 100);
        let p = &self.params;
        let (n, alpha) = (p.n() as f64, p.alpha());
        let r = frobenius_norm(w.summed().view()).max(p.frobenius_floor());
        let kernel = p.mu()
            * n
            * (n - 1.0)
            * (1.0 + alpha * r).powi(p.n() as i32 - 2)
            * ((n - 1.0) * alpha * alpha).max(alpha * (1.0 + alpha * r) / r)
            / self.gamma;
        (loss + blocks * kernel).max(1e-8)
    }
}

fn identity_minus(mut d: Array2<f64>) -> Array2<f64> {
    d.mapv_inplace(|x| -x);
    for i in 0..d.nrows() {
        d[[i, i]] += 1.0;
    }
    d
}

/// Gradient of the smooth part of the subproblem objective.
pub fn smooth_gradient(w: &Variable, prob: &ProxProblem<'_>) -> Result<Variable> {
    Ok(prob.smooth_value_and_gradient(w)?.1)
}

/// Proximal map of `t lambda ||.||_1` plus the indicator of
/// `{W >= 0, diag(W) = 0, sum(W) >= floor}` for a single matrix.
pub fn composite_prox(
    v: ArrayView2<f64>,
    t: f64,
    lambda: f64,
    floor: Option<f64>,
) -> Result<Array2<f64>> {
    let mut out = composite_prox_blocks(&[v.to_owned()], t, lambda, floor)?;
    Ok(out.remove(0))
}

/// Blockwise composite prox with one floor shared by the total of all blocks.
///
/// Off-diagonal entries become `max(v - t lambda + nu, 0)` where `nu = 0`
/// unless that violates the floor, in which case `nu > 0` solves
/// `sum max(v - t lambda + nu, 0) = floor`.
pub fn composite_prox_blocks(
    blocks: &[Array2<f64>],
    t: f64,
    lambda: f64,
    floor: Option<f64>,
) -> Result<Vec<Array2<f64>>> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prox step must be positive, got {t}"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let shift = t * lambda;
    let mut shifted: Vec<f64> = Vec::new();
    for b in blocks {
        for ((i, j), &x) in b.indexed_iter() {
            if i != j {
                shifted.push(x - shift);
            }
        }
    }
    let nu = match floor {
        None => 0.0,
        Some(f) => {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "norm floor must be positive, got {f}"
                )));
            }
            if shifted.is_empty() {
                return Err(Error::InvalidParameter(
                    "norm floor is infeasible without off-diagonal entries".into(),
                ));
            }
            floor_shift(&shifted, f)
        }
    };
    Ok(blocks
        .iter()
        .map(|b| {
            let mut out = b.mapv(|x| (x - shift + nu).max(0.0));
            for i in 0..out.nrows() {
                out[[i, i]] = 0.0;
            }
            out
        })
        .collect())
}

fn positive_sum(values: &[f64], nu: f64) -> f64 {
    values.iter().map(|&x| (x + nu).max(0.0)).sum()
}

/// Smallest `nu >= 0` with `sum max(x + nu, 0) >= floor`.
fn floor_shift(values: &[f64], floor: f64) -> f64 {
    if positive_sum(values, 0.0) >= floor {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // With the top k entries active: sum_{i<k} x_i + k nu = floor.
    let mut nu = None;
    let mut prefix = 0.0;
    for k in 1..=sorted.len() {
        prefix += sorted[k - 1];
        let candidate = (floor - prefix) / k as f64;
        let active = sorted[k - 1] + candidate > 0.0;
        let rest_inactive = k == sorted.len() || sorted[k] + candidate <= 0.0;
        if active && rest_inactive {
            nu = Some(candidate.max(0.0));
            break;
        }
    }
    let mut nu = nu.unwrap_or_else(|| bisect_shift(values, floor));
    // Absorb roundoff so the floor holds exactly.
    for _ in 0..64 {
        let total = positive_sum(values, nu);
        if total >= floor {
            break;
        }
        let active = values.iter().filter(|&&x| x + nu > 0.0).count().max(1);
        nu += ((floor - total) / active as f64)
            .max(nu.abs() * f64::EPSILON)
            .max(f64::MIN_POSITIVE);
    }
    nu
}

fn bisect_shift(values: &[f64], floor: f64) -> f64 {
    let mut lo = 0.0;
    let max_neg = values.iter().fold(0.0f64, |m, &x| m.max(-x));
    let mut hi = max_neg + floor / values.len() as f64 + 1.0;
    while positive_sum(values, hi) < floor {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if positive_sum(values, mid) >= floor {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub point: Variable,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final Lipschitz estimate `L`; the fixed-point residual uses `t = 1 / L`.
    pub lipschitz: f64,
    pub kkt_residual: f64,
}

/// `||W - prox(W - t grad(W), t)||_F`.
pub fn kkt_residual(prob: &ProxProblem<'_>, w: &Variable, t: f64) -> Result<f64> {
    let grad = smooth_gradient(w, prob)?;
    let step = w.add_scaled(-t, &grad);
    let prox = Variable {
        blocks: composite_prox_blocks(&step.blocks, t, prob.lambda, prob.floor())?,
    };
    Ok(w.sub(&prox).norm())
}

/// Accelerated proximal gradient on the subproblem starting from `start`.
///
/// An infeasible start is first projected onto the feasible set. Stops when
/// the relative decrease falls below `rel_tol` and the fixed-point residual is
/// below `kkt_tol`; otherwise returns the last (best) iterate with
/// `converged = false` after `max_iter` iterations.
pub fn solve(
    prob: &ProxProblem<'_>,
    start: &Variable,
    opts: &InnerOptions,
) -> Result<InnerSolution> {
    prob.validate()?;
    opts.validate()?;
    prob.check_variable(start)?;
    let floor = prob.floor();
    let lambda = prob.lambda;
    let prox = |v: &Variable, t: f64| -> Result<Variable> {
        Ok(Variable {
            blocks: composite_prox_blocks(&v.blocks, t, lambda, floor)?,
        })
    };

    let mut x = if start.is_feasible(floor) {
        start.clone()
    } else {
        // Euclidean projection onto the feasible set.
        Variable {
            blocks: composite_prox_blocks(&start.blocks, 1.0, 0.0, floor)?,
        }
    };
    let mut lipschitz = opts
        .initial_lipschitz
        .unwrap_or_else(|| prob.lipschitz_estimate(&x));

    let (mut fx_smooth, mut gx) = prob.smooth_value_and_gradient(&x)?;
    let mut fx = fx_smooth + lambda * x.total();
    let mut y = x.clone();
    let (mut fy, mut gy) = (fx_smooth, gx.clone());
    let mut y_is_x = true;
    let mut theta = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;
        let (z, fz) = loop {
            let t = 1.0 / lipschitz;
            let z = prox(&y.add_scaled(-t, &gy), t)?;
            let fz = prob.smooth_value(&z)?;
            let d = z.sub(&y);
            let model = fy + gy.dot(&d) + 0.5 * lipschitz * d.dot(&d);
            let slack = 10.0 * f64::EPSILON * (fy.abs() + fz.abs());
            if fz <= model + slack || !lipschitz.is_finite() {
                break (z, fz);
            }
            lipschitz *= opts.backtrack_factor;
        };
        let big_fz = fz + lambda * z.total();

        // Steps that change the objective by less than its rounding error
        // are still taken: they keep shrinking the fixed-point residual.
        if big_fz > fx + 10.0 * f64::EPSILON * fx.abs() {
            if y_is_x {
                // A plain proximal step from x increases the objective:
                // numerical fixed point.
                residual = kkt_residual(prob, &x, 1.0 / lipschitz)?;
                converged = residual <= opts.kkt_tol;
                break;
            }
            // Restart momentum from the current best point.
            theta = 1.0;
            y = x.clone();
            fy = fx_smooth;
            gy = gx.clone();
            y_is_x = true;
            continue;
        }

        let previous = fx;
        let x_prev = std::mem::replace(&mut x, z);
        fx = big_fz;
        let next_theta = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / next_theta;
        theta = next_theta;
        let (fxs, gxs) = prob.smooth_value_and_gradient(&x)?;
        fx_smooth = fxs;
        gx = gxs;
        if momentum > 0.0 {
            y = x.add_scaled(momentum, &x.sub(&x_prev));
            let (fys, gys) = prob.smooth_value_and_gradient(&y)?;
            fy = fys;
            gy = gys;
            y_is_x = false;
        } else {
            y = x.clone();
            fy = fx_smooth;
            gy = gx.clone();
            y_is_x = true;
        }

        if previous - fx <= opts.rel_tol * previous.abs().max(1.0) {
            residual = kkt_residual(prob, &x, 1.0 / lipschitz)?;
            if residual <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !residual.is_finite() {
        residual = kkt_residual(prob, &x, 1.0 / lipschitz)?;
    }
    Ok(InnerSolution {
        objective: fx,
        point: x,
        iterations,
        converged,
        lipschitz,
        kkt_residual: residual,
    })
}
