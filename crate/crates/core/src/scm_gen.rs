//! Synthetic linear SEM benchmarks: random DAGs (Erdős–Rényi or scale-free)
//! with uniform edge weights, and i.i.d. samples `X = X W + E` under
//! Gaussian, Exponential or Gumbel noise.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::dag_penalty::topological_order;
use crate::error::{Error, Result};
use crate::weights::{WeightMatrix, MIN_NODES};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphModel {
    /// Erdős–Rényi.
    Er,
    /// Scale-free (preferential attachment).
    Sf,
}

impl fmt::Display for GraphModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphModel::Er => f.write_str("er"),
            GraphModel::Sf => f.write_str("sf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n: usize,
    /// Expected number of edges is `k * n`.
    pub k: usize,
    pub model: GraphModel,
    pub weight_low: f64,
    pub weight_high: f64,
    pub positive_only: bool,
    pub seed: u64,
}

impl GraphSpec {
    pub fn new(n: usize, k: usize, model: GraphModel, seed: u64) -> Self {
        GraphSpec {
            n,
            k,
            model,
            weight_low: 0.5,
            weight_high: 2.0,
            positive_only: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_NODES {
            return Err(Error::InvalidParameter(format!(
                "graph needs at least {MIN_NODES} nodes, got {}",
                self.n
            )));
        }
        if self.k < 1 || self.k * self.n > self.n * (self.n - 1) / 2 {
            return Err(Error::InvalidParameter(format!(
                "k = {} must satisfy 1 <= k n <= n (n - 1) / 2 for n = {}",
                self.k, self.n
            )));
        }
        if !(self.weight_low > 0.0
            && self.weight_low <= self.weight_high
            && self.weight_high.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "weight range [{}, {}] must satisfy 0 < low <= high",
                self.weight_low, self.weight_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Exponential,
    Gumbel,
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseFamily::Gaussian => f.write_str("gaussian"),
            NoiseFamily::Exponential => f.write_str("exponential"),
            NoiseFamily::Gumbel => f.write_str("gumbel"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    /// Subtract the family mean so every noise term is centered.
    #[serde(default = "centered_by_default")]
    pub centered: bool,
}

fn unit_scale() -> f64 {
    1.0
}

fn centered_by_default() -> bool {
    true
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily) -> Self {
        NoiseSpec {
            family,
            scale: 1.0,
            centered: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Mean of the uncentered family.
    fn mean(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => 0.0,
            NoiseFamily::Exponential => self.scale,
            NoiseFamily::Gumbel => EULER_MASCHERONI * self.scale,
        }
    }

    /// `m x n` i.i.d. noise, filled row by row.
    pub fn sample(&self, m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = if self.centered { self.mean() } else { 0.0 };
        let bad =
            |e: &dyn fmt::Display| Error::InvalidParameter(format!("noise distribution: {e}"));
        let draws: Vec<f64> = match self.family {
            NoiseFamily::Gaussian => {
                let d = Normal::new(0.0, self.scale).map_err(|e| bad(&e))?;
                (0..m * n).map(|_| d.sample(&mut rng)).collect()
            }
            NoiseFamily::Exponential => {
                let d = Exp::new(1.0 / self.scale).map_err(|e| bad(&e))?;
                (0..m * n).map(|_| d.sample(&mut rng)).collect()
            }
            NoiseFamily::Gumbel => {
                let d = Gumbel::new(0.0, self.scale).map_err(|e| bad(&e))?;
                (0..m * n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let mut e = Array2::from_shape_vec((m, n), draws).expect("shape matches draw count");
        if shift != 0.0 {
            e.mapv_inplace(|x| x - shift);
        }
        Ok(e)
    }
}

/// Observations with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Array2<f64>,
    variable_names: Vec<String>,
    truth: Option<WeightMatrix>,
}

impl Dataset {
    pub fn new(
        samples: Array2<f64>,
        variable_names: Vec<String>,
        truth: Option<WeightMatrix>,
    ) -> Result<Self> {
        let (m, n) = samples.dim();
        if m < 1 {
            return Err(Error::InvalidParameter(
                "dataset needs at least one sample".into(),
            ));
        }
        if variable_names.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} variable names for {n} columns",
                variable_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = variable_names
            .iter()
            .find(|name| !seen.insert(name.as_str()))
        {
            return Err(Error::InvalidParameter(format!(
                "duplicate variable name {dup:?}"
            )));
        }
        if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample value {x}"
            )));
        }
        if let Some(t) = &truth {
            if t.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    rows: t.n(),
                    cols: t.n(),
                });
            }
        }
        Ok(Dataset {
            samples,
            variable_names,
            truth,
        })
    }

    /// Names `X1 .. Xn`.
    pub fn default_names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("X{i}")).collect()
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn truth(&self) -> Option<&WeightMatrix> {
        self.truth.as_ref()
    }

    pub fn m(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n(&self) -> usize {
        self.samples.ncols()
    }

    /// `S = X^T X / m`.
    pub fn gram(&self) -> Array2<f64> {
        self.samples.t().dot(&self.samples) / self.m() as f64
    }
}

/// Samples a weighted DAG. Entry `(i, j)` is the weight of `i -> j`.
pub fn sample_dag(spec: &GraphSpec) -> Result<WeightMatrix> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = match spec.model {
        GraphModel::Er => erdos_renyi_edges(&mut rng, n, spec.k),
        GraphModel::Sf => scale_free_edges(&mut rng, n, spec.k),
    };
    let mut w = Array2::zeros((n, n));
    for (i, j) in edges {
        let magnitude = rng.random_range(spec.weight_low..=spec.weight_high);
        let negative = !spec.positive_only && rng.random_bool(0.5);
        w[[i, j]] = if negative { -magnitude } else { magnitude };
    }
    WeightMatrix::new(w)
}

/// Each unordered pair kept with probability `2k / (n - 1)`, oriented along a
/// random permutation of the nodes.
fn erdos_renyi_edges(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let prob = (2.0 * k as f64 / (n as f64 - 1.0)).min(1.0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random_bool(prob) {
                edges.push((order[a], order[b]));
            }
        }
    }
    edges
}

/// Preferential attachment: node `t` links to `min(k, t)` distinct earlier
/// nodes chosen with probability proportional to degree + 1; edges point from
/// the older node to the newer one, then labels are permuted.
fn scale_free_edges(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for t in 1..n {
        let mut targets: Vec<usize> = Vec::with_capacity(k);
        while targets.len() < k.min(t) {
            let total: usize = (0..t)
                .filter(|s| !targets.contains(s))
                .map(|s| degree[s] + 1)
                .sum();
            let mut pick = rng.random_range(0..total);
            for s in (0..t).filter(|s| !targets.contains(s)) {
                let weight = degree[s] + 1;
                if pick < weight {
                    targets.push(s);
                    break;
                }
                pick -= weight;
            }
        }
        for s in targets {
            degree[s] += 1;
            degree[t] += 1;
            edges.push((s, t));
        }
    }
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    edges
        .into_iter()
        .map(|(a, b)| (labels[a], labels[b]))
        .collect()
}

/// Propagates a given noise matrix through the SEM: column `j` of the result
/// is `E_j + sum_i W_ij X_i`, visiting nodes in topological order.
pub fn propagate_noise(w: ArrayView2<f64>, noise: &Array2<f64>) -> Result<Array2<f64>> {
    let n = w.nrows();
    if noise.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            rows: noise.nrows(),
            cols: noise.ncols(),
        });
    }
    let order = topological_order(w).ok_or(Error::Cyclic)?;
    let mut x = noise.clone();
    for &j in &order {
        let mut col: Array1<f64> = noise.column(j).to_owned();
        for i in 0..n {
            let wij = w[[i, j]];
            if wij != 0.0 {
                col.scaled_add(wij, &x.column(i));
            }
        }
        x.column_mut(j).assign(&col);
    }
    Ok(x)
}

/// `m` i.i.d. samples from the linear SEM with weights `w`.
pub fn sample_data(w: &WeightMatrix, m: usize, noise: &NoiseSpec, seed: u64) -> Result<Dataset> {
    Ok(sample_data_with_noise(w, m, noise, seed)?.0)
}

/// Like [`sample_data`], also returning the noise matrix `E = X (I - W)`.
pub fn sample_data_with_noise(
    w: &WeightMatrix,
    m: usize,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(Dataset, Array2<f64>)> {
    if m < 1 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if topological_order(w.view()).is_none() {
        return Err(Error::Cyclic);
    }
    let e = noise.sample(m, w.n(), seed)?;
    let x = propagate_noise(w.view(), &e)?;
    let data = Dataset::new(x, Dataset::default_names(w.n()), Some(w.clone()))?;
    Ok((data, e))
}

/// Gaussian noise whose columns are exactly orthogonal with `E^T E / m = I`,
/// i.e. data without sampling error in its second moments. Requires `m >= n`.
pub fn whitened_gaussian_noise(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "whitened noise needs m >= n, got m = {m}, n = {n}"
        )));
    }
    let mut e = NoiseSpec::new(NoiseFamily::Gaussian).sample(m, n, seed)?;
    // Modified Gram-Schmidt, twice for orthogonality to working precision.
    for _ in 0..2 {
        for j in 0..n {
            for i in 0..j {
                let proj = e.column(i).dot(&e.column(j));
                let qi = e.column(i).to_owned();
                e.column_mut(j).scaled_add(-proj, &qi);
            }
            let norm = e.column(j).dot(&e.column(j)).sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidParameter("degenerate noise draw".into()));
            }
            e.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    let scale = (m as f64).sqrt();
    e.mapv_inplace(|x| x * scale);
    Ok(e)
}

/// Samples whose empirical covariance equals the population covariance of
/// the SEM with unit-variance Gaussian noise.
pub fn sample_data_exact_moments(w: &WeightMatrix, m: usize, seed: u64) -> Result<Dataset> {
    let e = whitened_gaussian_noise(m, w.n(), seed)?;
    let x = propagate_noise(w.view(), &e)?;
    Dataset::new(x, Dataset::default_names(w.n()), Some(w.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag_penalty::is_acyclic_exact;

    #[test]
    fn er_and_sf_are_acyclic_and_signed() {
        for model in [GraphModel::Er, GraphModel::Sf] {
            for seed in 0..20 {
                let w = sample_dag(&GraphSpec::new(20, 2, model, seed)).unwrap();
                assert!(is_acyclic_exact(w.view()));
                assert!(w
                    .view()
                    .iter()
                    .all(|&x| x == 0.0 || (0.5..=2.0).contains(&x.abs())));
            }
        }
        let mut spec = GraphSpec::new(20, 2, GraphModel::Er, 3);
        spec.positive_only = true;
        assert!(sample_dag(&spec).unwrap().is_nonnegative());
    }

    #[test]
    fn scale_free_edge_count() {
        // Node t contributes min(k, t) edges.
        let w = sample_dag(&GraphSpec::new(30, 2, GraphModel::Sf, 5)).unwrap();
        assert_eq!(w.support().edge_count(), 1 + 2 * 28);
    }

    #[test]
    fn spec_validation() {
        assert!(GraphSpec::new(2, 1, GraphModel::Er, 0).validate().is_err());
        assert!(GraphSpec::new(5, 3, GraphModel::Er, 0).validate().is_err());
        let mut s = GraphSpec::new(10, 2, GraphModel::Er, 0);
        s.weight_low = 3.0;
        assert!(s.validate().is_err());
        let mut noise = NoiseSpec::new(NoiseFamily::Gumbel);
        noise.scale = 0.0;
        assert!(noise.validate().is_err());
    }

    #[test]
    fn cyclic_weights_are_rejected() {
        let mut a = Array2::zeros((3, 3));
        a[[0, 1]] = 1.0;
        a[[1, 0]] = 1.0;
        let w = WeightMatrix::new(a).unwrap();
        assert!(matches!(
            sample_data(&w, 10, &NoiseSpec::new(NoiseFamily::Gaussian), 0),
            Err(Error::Cyclic)
        ));
    }

    #[test]
    fn zero_noise_gives_zero_residual() {
        let mut spec = GraphSpec::new(8, 2, GraphModel::Er, 9);
        spec.positive_only = true;
        let w = sample_dag(&spec).unwrap();
        let x = propagate_noise(w.view(), &Array2::zeros((50, 8))).unwrap();
        let resid = x.dot(&(Array2::<f64>::eye(8) - w.as_array()));
        assert!(resid.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn whitened_noise_has_identity_gram() {
        let e = whitened_gaussian_noise(200, 6, 1).unwrap();
        let g = e.t().dot(&e) / 200.0;
        for ((i, j), &x) in g.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((x - target).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_validation() {
        let x = Array2::zeros((4, 3));
        assert!(Dataset::new(x.clone(), vec!["a".into(), "a".into(), "b".into()], None).is_err());
        assert!(Dataset::new(x.clone(), vec!["a".into()], None).is_err());
        let mut bad = x.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(Dataset::new(bad, Dataset::default_names(3), None).is_err());
        assert!(Dataset::new(Array2::zeros((0, 3)), Dataset::default_names(3), None).is_err());
    }
}
