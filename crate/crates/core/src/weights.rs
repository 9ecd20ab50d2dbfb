//! Matrix types for weighted and binary adjacency.
//!
//! Entry `(i, j)` is the weight of the edge `i -> j`, so a data matrix with
//! samples as rows satisfies `X = X W + E`.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Smallest node count for which the penalty's feasible set is defined.
pub const MIN_NODES: usize = 3;

/// Which parametrisation of the weights is optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Nonnegative weights only.
    #[default]
    Positive,
    /// Signed weights written as `W+ - W-` with both parts nonnegative.
    Split,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Positive => f.write_str("positive"),
            Mode::Split => f.write_str("split"),
        }
    }
}

/// Dense `n x n` weighted adjacency with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch {
                expected: rows,
                rows,
                cols,
            });
        }
        if rows < MIN_NODES {
            return Err(Error::InvalidParameter(format!(
                "weight matrix needs at least {MIN_NODES} nodes, got {rows}"
            )));
        }
        if let Some(x) = entries.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight matrix has a non-finite entry ({x})"
            )));
        }
        if let Some(i) = (0..rows).find(|&i| entries[[i, i]] != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "diagonal entry ({i},{i}) is {} but must be zero",
                entries[[i, i]]
            )));
        }
        Ok(WeightMatrix(entries))
    }

    /// Builds a weight matrix, overwriting the diagonal with zeros.
    pub fn with_zero_diagonal(mut entries: Array2<f64>) -> Result<Self> {
        let n = entries.nrows().min(entries.ncols());
        for i in 0..n {
            entries[[i, i]] = 0.0;
        }
        WeightMatrix::new(entries)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        WeightMatrix::new(Array2::zeros((n, n)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                a[[i, j]] = x;
            }
        }
        WeightMatrix::new(a)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn abs(&self) -> WeightMatrix {
        WeightMatrix(self.0.mapv(f64::abs))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&x| x >= 0.0)
    }

    /// Directed graph `{(i, j) : W_ij != 0}`.
    pub fn support(&self) -> Adjacency {
        Adjacency(self.0.mapv(|x| x != 0.0))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

impl Serialize for WeightMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for WeightMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        WeightMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Nonnegative pair `(W+, W-)` representing the signed matrix `W+ - W-`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitWeights {
    pos: WeightMatrix,
    neg: WeightMatrix,
}

impl SplitWeights {
    pub fn new(pos: WeightMatrix, neg: WeightMatrix) -> Result<Self> {
        if pos.n() != neg.n() {
            return Err(Error::DimensionMismatch {
                expected: pos.n(),
                rows: neg.n(),
                cols: neg.n(),
            });
        }
        if !pos.is_nonnegative() || !neg.is_nonnegative() {
            return Err(Error::InvalidParameter(
                "split weights must be entrywise nonnegative".into(),
            ));
        }
        Ok(SplitWeights { pos, neg })
    }

    /// Positive and negative parts of a signed matrix.
    pub fn from_signed(w: &WeightMatrix) -> Self {
        SplitWeights {
            pos: WeightMatrix(w.0.mapv(|x| x.max(0.0))),
            neg: WeightMatrix(w.0.mapv(|x| (-x).max(0.0))),
        }
    }

    pub fn n(&self) -> usize {
        self.pos.n()
    }

    pub fn pos(&self) -> &WeightMatrix {
        &self.pos
    }

    pub fn neg(&self) -> &WeightMatrix {
        &self.neg
    }

    /// `W+ + W-`, the weights of the absolute-value graph.
    pub fn sum(&self) -> Array2<f64> {
        &self.pos.0 + &self.neg.0
    }

    /// `W+ - W-`.
    pub fn signed(&self) -> WeightMatrix {
        WeightMatrix(&self.pos.0 - &self.neg.0)
    }
}

/// Binary directed adjacency with a false diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency(Array2<bool>);

impl Adjacency {
    pub fn new(mut edges: Array2<bool>) -> Result<Self> {
        let (rows, cols) = edges.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch {
                expected: rows,
                rows,
                cols,
            });
        }
        for i in 0..rows {
            edges[[i, i]] = false;
        }
        Ok(Adjacency(edges))
    }

    pub fn empty(n: usize) -> Self {
        Adjacency(Array2::from_elem((n, n), false))
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Array2::from_elem((n, n), false);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i},{j}) out of range for {n} nodes"
                )));
            }
            a[[i, j]] = true;
        }
        Adjacency::new(a)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.0[[i, j]]
    }

    pub fn edge_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.0
            .indexed_iter()
            .filter(|(_, &b)| b)
            .map(|((i, j), _)| (i, j))
            .collect()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.0
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}

impl Serialize for Adjacency {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Adjacency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(deserializer)?;
        let n = rows.len();
        let mut a = Array2::from_elem((n, n), false);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(serde::de::Error::custom("adjacency rows must be square"));
            }
            for (j, &x) in row.iter().enumerate() {
                a[[i, j]] = x != 0;
            }
        }
        Adjacency::new(a).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_nonzero_diagonal_and_small_graphs() {
        assert!(WeightMatrix::new(array![[0.0, 1.0], [0.0, 0.0]]).is_err());
        assert!(WeightMatrix::new(Array2::eye(3)).is_err());
        assert!(WeightMatrix::with_zero_diagonal(Array2::eye(3)).is_ok());
    }

    #[test]
    fn split_round_trip() {
        let w = WeightMatrix::new(array![[0.0, -1.5, 2.0], [0.5, 0.0, 0.0], [0.0, -0.25, 0.0]])
            .unwrap();
        let s = SplitWeights::from_signed(&w);
        assert_eq!(s.signed(), w);
        assert_eq!(s.sum(), w.abs().into_inner());
    }

    #[test]
    fn adjacency_serializes_as_bits() {
        let a = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[[0,1,0],[0,0,1],[0,0,0]]");
        let back: Adjacency = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
