//! Dynamic NoLips outer loop.
//!
//! Each outer step solves the Bregman proximal subproblem at step size
//! `gamma`, halving `gamma` until the sufficient-decrease test on the DAG
//! penalty holds, then accepts the step and retries with
//! `min(2 gamma, gamma_max)`. Iteration stops once the relative change of the
//! least-squares error falls below `tau`.
//!
//! With [`KernelKind::Euclidean`] the loop becomes a classical proximal
//! gradient method on penalty plus least squares, used as a baseline.

use std::fmt;
use std::time::Instant;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dag_penalty::{
    bregman_divergence, default_alpha, kernel_gradient_clamped, penalty_value,
    penalty_value_and_gradient, PenaltyParams,
};
use crate::error::{Error, Result};
use crate::linalg::{inner, l1_norm};
use crate::prox_solver::{composite_prox_blocks, solve, InnerOptions, ProxProblem, Variable};
use crate::scm_gen::Dataset;
use crate::weights::{Adjacency, Mode, SplitWeights, WeightMatrix};

/// Halvings of `gamma` tried before a step is accepted regardless.
pub const MAX_HALVINGS: u32 = 60;

/// Absolute slack of the sufficient-decrease test.
pub const DECREASE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Bregman,
    Euclidean,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Bregman => f.write_str("bregman"),
            KernelKind::Euclidean => f.write_str("euclidean"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Penalty scale; `0.1 / n` when absent.
    pub alpha: Option<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub tau: f64,
    pub gamma0: f64,
    pub gamma_max: f64,
    pub max_outer: usize,
    pub mode: Mode,
    pub kernel: KernelKind,
    pub threshold_omega: f64,
    pub enforce_norm_floor: bool,
    pub inner: InnerOptions,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: None,
            mu: 100.0,
            lambda: 1e-4,
            tau: 1e-7,
            gamma0: 1.0,
            gamma_max: 1000.0,
            max_outer: 500,
            mode: Mode::Positive,
            kernel: KernelKind::Bregman,
            threshold_omega: 0.3,
            enforce_norm_floor: false,
            inner: InnerOptions::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn alpha_for(&self, n: usize) -> f64 {
        self.alpha.unwrap_or_else(|| default_alpha(n))
    }

    pub fn penalty_params(&self, n: usize) -> Result<PenaltyParams> {
        PenaltyParams::new(n, self.alpha_for(n), self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= self.gamma_max && self.gamma_max.is_finite()) {
            return bad(format!(
                "need 0 < gamma0 <= gamma_max, got {} and {}",
                self.gamma0, self.gamma_max
            ));
        }
        if !(self.threshold_omega >= 0.0) {
            return bad(format!(
                "threshold_omega must be >= 0, got {}",
                self.threshold_omega
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.kernel == KernelKind::Bregman && !(self.mu > 0.0) {
            return bad("the Bregman kernel needs mu > 0".into());
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    /// Signed weights (`W+ - W-` in split mode).
    pub weights: WeightMatrix,
    /// Final `(W+, W-)` in split mode.
    #[serde(skip)]
    pub split: Option<SplitWeights>,
    pub binary: Adjacency,
    /// Objective at the start point followed by one value per accepted step.
    pub objective_trace: Vec<f64>,
    /// Least-squares error, indexed like `objective_trace`.
    pub l2_trace: Vec<f64>,
    /// Accepted step size per outer iteration.
    pub gamma_trace: Vec<f64>,
    /// Number of halvings before each acceptance.
    pub halvings: Vec<u32>,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    /// Inner solves that hit their iteration budget.
    pub inner_not_converged: usize,
    pub converged: bool,
    /// Some step was accepted after `MAX_HALVINGS` failed decrease tests.
    pub halving_limit_hit: bool,
    /// Share of thresholded edges with positive weight.
    pub positive_edge_fraction: Option<f64>,
    pub wall_time_seconds: f64,
}

/// `Psi(W) = ||X (I - W)||^2 / m + lambda ||W||_1 + mu Tr(I + alpha W)^n`,
/// with the split conventions (loss on `W+ - W-`, penalty on `W+ + W-`).
pub fn objective(w: &Variable, data: &Dataset, cfg: &FitConfig) -> Result<f64> {
    let n = data.n();
    let params = cfg.penalty_params(n)?;
    let signed = w.signed();
    if signed.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            rows: signed.nrows(),
            cols: signed.ncols(),
        });
    }
    let l1: f64 = w.blocks().iter().map(|b| l1_norm(b.view())).sum();
    Ok(l2_error(signed.view(), data.samples().view())?
        + cfg.lambda * l1
        + penalty_value(w.summed().view(), &params)?)
}

/// `||X (I - W)||_F^2 / m`.
pub fn l2_error(w: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<f64> {
    let n = x.ncols();
    if w.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            rows: w.nrows(),
            cols: w.ncols(),
        });
    }
    let residual = &x - &x.dot(&w);
    Ok(residual.iter().map(|r| r * r).sum::<f64>() / x.nrows() as f64)
}

/// `f(W+) <= f(W) + <grad f(W), W+ - W> + D_h(W+, W) / gamma`, for the DAG
/// penalty `f` and Bregman kernel `h`. In split mode pass the summed
/// matrices `W+ + W-`.
pub fn sufficient_decrease(
    w: ArrayView2<f64>,
    w_plus: ArrayView2<f64>,
    gamma: f64,
    p: &PenaltyParams,
) -> Result<bool> {
    let (f_w, grad) = penalty_value_and_gradient(w, p)?;
    let f_plus = penalty_value(w_plus, p)?;
    let diff = &w_plus - &w;
    let bound = f_w + inner(grad.view(), diff.view()) + bregman_divergence(w_plus, w, p)? / gamma;
    Ok(f_plus <= bound + decrease_slack(f_w))
}

/// Absolute slack plus a few ulps of the penalty value.
fn decrease_slack(scale: f64) -> f64 {
    DECREASE_SLACK + 8.0 * f64::EPSILON * scale.abs()
}

/// Default start: every off-diagonal entry `0.1 / n` (split: `0.05 / n` in
/// each part), scaled up to the norm floor when it is enforced.
pub fn initial_point(cfg: &FitConfig, n: usize) -> Result<Variable> {
    let c0 = 0.1 / n as f64;
    let off_diag = (n * n - n) as f64;
    let params = cfg.penalty_params(n)?;
    let blocks = match cfg.mode {
        Mode::Positive => 1.0,
        Mode::Split => 2.0,
    };
    let mut value = c0 / blocks;
    if cfg.enforce_norm_floor {
        value = value.max(params.norm_floor() / (off_diag * blocks));
    }
    let mut block = Array2::from_elem((n, n), value);
    for i in 0..n {
        block[[i, i]] = 0.0;
    }
    Ok(match cfg.mode {
        Mode::Positive => Variable::positive(block),
        Mode::Split => Variable::split(block.clone(), block),
    })
}

/// Binary graph `|W_ij| > omega`.
pub fn threshold(w: &WeightMatrix, omega: f64) -> Adjacency {
    Adjacency::new(w.as_array().mapv(|x| x.abs() > omega)).expect("square input")
}

/// Removes the common part `min(W+_ij, W-_ij)` of each split pair. The signed
/// matrix is unchanged while both the l1 term and the penalty (increasing in
/// every entry) can only drop. With a norm floor the removal is scaled back so
/// that `s(W)` stays on or above it.
pub fn cancel_ambiguous(w: &Variable, floor: Option<f64>) -> Variable {
    let [pos, neg] = w.blocks() else {
        return w.clone();
    };
    let common = ndarray::Zip::from(pos)
        .and(neg)
        .map_collect(|a, b| a.min(*b));
    let removed = 2.0 * common.sum();
    if removed == 0.0 {
        return w.clone();
    }
    let scale = match floor {
        Some(floor) => ((w.total() - floor) / removed).clamp(0.0, 1.0),
        None => 1.0,
    };
    if scale == 0.0 {
        return w.clone();
    }
    Variable::split(pos - &(&common * scale), neg - &(&common * scale))
}

/// Objective pieces evaluated through `S = X^T X / m`.
struct Model<'a> {
    gram: &'a Array2<f64>,
    params: PenaltyParams,
    cfg: &'a FitConfig,
}

impl Model<'_> {
    fn loss_and_gradient(&self, signed: &Array2<f64>) -> (f64, Array2<f64>) {
        let mut residual = signed.mapv(|x| -x);
        for i in 0..residual.nrows() {
            residual[[i, i]] += 1.0;
        }
        let s_res = self.gram.dot(&residual);
        (
            inner(residual.view(), s_res.view()),
            s_res.mapv(|x| -2.0 * x),
        )
    }

    fn psi(&self, w: &Variable) -> Result<f64> {
        let (loss, _) = self.loss_and_gradient(&w.signed());
        Ok(loss + self.cfg.lambda * w.total() + penalty_value(w.summed().view(), &self.params)?)
    }

    /// Bregman proximal map `T_gamma(w)`.
    fn bregman_step(&self, w: &Variable, gamma: f64) -> Result<(Variable, usize, bool)> {
        let sum = w.summed();
        let grad_f = penalty_value_and_gradient(sum.view(), &self.params)?.1;
        let grad_h = kernel_gradient_clamped(sum.view(), &self.params)?;
        let prob = ProxProblem {
            gram: self.gram.view(),
            linear_term: &grad_f - &grad_h.mapv(|x| x / gamma),
            lambda: self.cfg.lambda,
            gamma,
            params: self.params,
            enforce_norm_floor: self.cfg.enforce_norm_floor,
            mode: self.cfg.mode,
        };
        let sol = solve(&prob, w, &self.cfg.inner)?;
        Ok((sol.point, sol.iterations, sol.converged))
    }

    /// Smooth part `f(s(W)) + loss(W)` and its gradient, for the Euclidean
    /// baseline.
    fn euclidean_smooth(&self, w: &Variable) -> Result<(f64, Variable)> {
        let (f, grad_f) = penalty_value_and_gradient(w.summed().view(), &self.params)?;
        let (loss, grad_loss) = self.loss_and_gradient(&w.signed());
        let grad = match self.cfg.mode {
            Mode::Positive => Variable::positive(&grad_f + &grad_loss),
            Mode::Split => Variable::split(&grad_f + &grad_loss, &grad_f - &grad_loss),
        };
        Ok((f + loss, grad))
    }

    /// Soft-thresholded projected gradient step of length `gamma`.
    fn euclidean_step(&self, w: &Variable, grad: &Variable, gamma: f64) -> Result<Variable> {
        let moved = w.add_scaled(-gamma, grad);
        let floor = self
            .cfg
            .enforce_norm_floor
            .then(|| self.params.norm_floor());
        let blocks = composite_prox_blocks(moved.blocks(), gamma, self.cfg.lambda, floor)?;
        Ok(match blocks.len() {
            1 => Variable::positive(blocks.into_iter().next().expect("one block")),
            _ => {
                let mut it = blocks.into_iter();
                Variable::split(it.next().expect("pos"), it.next().expect("neg"))
            }
        })
    }
}

/// One Bregman proximal step `T_gamma(w)` as taken inside [`fit`].
pub fn bregman_step(w: &Variable, data: &Dataset, cfg: &FitConfig, gamma: f64) -> Result<Variable> {
    let gram = data.gram();
    let model = Model {
        gram: &gram,
        params: cfg.penalty_params(data.n())?,
        cfg,
    };
    Ok(model.bregman_step(w, gamma)?.0)
}

/// One step of the Euclidean baseline: prox of `lambda ||.||_1` plus the
/// constraints, applied to a gradient step on penalty plus least squares.
pub fn euclidean_step(
    w: &Variable,
    data: &Dataset,
    cfg: &FitConfig,
    gamma: f64,
) -> Result<Variable> {
    let gram = data.gram();
    let model = Model {
        gram: &gram,
        params: cfg.penalty_params(data.n())?,
        cfg,
    };
    let (_, grad) = model.euclidean_smooth(w)?;
    model.euclidean_step(w, &grad, gamma)
}

/// Runs dynamic NoLips on `data`.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let started = Instant::now();
    let n = data.n();
    let gram = data.gram();
    let model = Model {
        gram: &gram,
        params: cfg.penalty_params(n)?,
        cfg,
    };
    let x = data.samples().view();

    let mut w = initial_point(cfg, n)?;
    let mut objective_trace = vec![model.psi(&w)?];
    let mut l2_trace = vec![l2_error(w.signed().view(), x)?];
    let mut gamma_trace = Vec::new();
    let mut halvings = Vec::new();
    let mut inner_iterations_total = 0;
    let mut inner_not_converged = 0;
    let mut converged = false;
    let mut halving_limit_hit = false;
    let mut gamma = cfg.gamma0;

    while gamma_trace.len() < cfg.max_outer {
        let previous_l2 = *l2_trace.last().expect("nonempty");
        if previous_l2 == 0.0 {
            converged = true;
            break;
        }
        let mut halved = 0u32;
        let euclid = match cfg.kernel {
            KernelKind::Euclidean => Some(model.euclidean_smooth(&w)?),
            KernelKind::Bregman => None,
        };
        let next = loop {
            let (candidate, accepted) = match &euclid {
                None => {
                    let (candidate, its, ok) = model.bregman_step(&w, gamma)?;
                    inner_iterations_total += its;
                    inner_not_converged += usize::from(!ok);
                    let accepted = sufficient_decrease(
                        w.summed().view(),
                        candidate.summed().view(),
                        gamma,
                        &model.params,
                    )?;
                    (candidate, accepted)
                }
                Some((value, grad)) => {
                    let candidate = model.euclidean_step(&w, grad, gamma)?;
                    let (next_value, _) = model.euclidean_smooth(&candidate)?;
                    let d = candidate.sub(&w);
                    let bound = value + grad.dot(&d) + d.dot(&d) / (2.0 * gamma);
                    (candidate, next_value <= bound + decrease_slack(*value))
                }
            };
            if accepted {
                break candidate;
            }
            if halved == MAX_HALVINGS {
                warn!("accepting step after {MAX_HALVINGS} halvings (gamma = {gamma:e})");
                halving_limit_hit = true;
                break candidate;
            }
            gamma /= 2.0;
            halved += 1;
        };
        w = match cfg.mode {
            Mode::Split => {
                let floor = cfg.enforce_norm_floor.then(|| model.params.norm_floor());
                cancel_ambiguous(&next, floor)
            }
            Mode::Positive => next,
        };
        gamma_trace.push(gamma);
        halvings.push(halved);
        objective_trace.push(model.psi(&w)?);
        let l2 = l2_error(w.signed().view(), x)?;
        l2_trace.push(l2);
        debug!(
            "outer {}: psi = {:.10e}, l2 = {:.6e}, gamma = {gamma:e}",
            gamma_trace.len(),
            objective_trace.last().expect("nonempty"),
            l2
        );
        gamma = (2.0 * gamma).min(cfg.gamma_max);
        if ((l2 - previous_l2) / previous_l2).abs() <= cfg.tau {
            converged = true;
            break;
        }
    }

    let split = match cfg.mode {
        Mode::Split => Some(w.clone().into_split()?),
        Mode::Positive => None,
    };
    let weights = w.into_weights()?;
    let binary = threshold(&weights, cfg.threshold_omega);
    let edges = binary.edges();
    let positive_edge_fraction = (!edges.is_empty()).then(|| {
        let positive = edges
            .iter()
            .filter(|&&(i, j)| weights.as_array()[[i, j]] > 0.0)
            .count();
        positive as f64 / edges.len() as f64
    });
    Ok(FitResult {
        weights,
        split,
        binary,
        objective_trace,
        l2_trace,
        outer_iterations: gamma_trace.len(),
        gamma_trace,
        halvings,
        inner_iterations_total,
        inner_not_converged,
        converged,
        halving_limit_hit,
        positive_edge_fraction,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}
