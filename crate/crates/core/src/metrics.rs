//! Graph comparison: true positives, missing, extra and reversed edges, SHD,
//! FDR and TPR.

use serde::{Deserialize, Serialize};

use crate::dag_penalty::is_acyclic_exact;
use crate::error::{Error, Result};
use crate::weights::Adjacency;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub missing: usize,
    pub extra: usize,
    pub reversed: usize,
    pub shd: usize,
    /// `(extra + reversed) / p_true`; absent when the truth has no edges.
    pub fdr: Option<f64>,
    /// `tp / p_true`; absent when the truth has no edges.
    pub tpr: Option<f64>,
    pub p_true: usize,
    pub predicted: usize,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "tp",
        "missing",
        "extra",
        "reversed",
        "shd",
        "fdr",
        "tpr",
        "p_true",
        "predicted",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.tp.to_string(),
            self.missing.to_string(),
            self.extra.to_string(),
            self.reversed.to_string(),
            self.shd.to_string(),
            fmt_opt(self.fdr),
            fmt_opt(self.tpr),
            self.p_true.to_string(),
            self.predicted.to_string(),
        ]
    }
}

pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Compares a predicted graph with the true DAG, edge by edge.
///
/// A predicted `(i, j)` is a true positive if `(i, j)` is true, reversed if
/// only `(j, i)` is true, and extra otherwise. A true edge is missing when
/// neither orientation is predicted. Predicting both orientations of a true
/// edge counts one true positive and one reversal.
pub fn evaluate(pred: &Adjacency, truth: &Adjacency) -> Result<EvalReport> {
    let n = truth.n();
    if pred.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            rows: pred.n(),
            cols: pred.n(),
        });
    }
    if !is_acyclic_exact(truth.as_array().mapv(f64::from).view()) {
        return Err(Error::Cyclic);
    }
    let (mut tp, mut extra, mut reversed, mut missing) = (0, 0, 0, 0);
    for (i, j) in pred.edges() {
        if truth.has_edge(i, j) {
            tp += 1;
        } else if truth.has_edge(j, i) {
            reversed += 1;
        } else {
            extra += 1;
        }
    }
    for (i, j) in truth.edges() {
        if !pred.has_edge(i, j) && !pred.has_edge(j, i) {
            missing += 1;
        }
    }
    let p_true = truth.edge_count();
    let ratio = |num: usize| (p_true > 0).then(|| num as f64 / p_true as f64);
    Ok(EvalReport {
        tp,
        missing,
        extra,
        reversed,
        shd: missing + extra + reversed,
        fdr: ratio(extra + reversed),
        tpr: ratio(tp),
        p_true,
        predicted: pred.edge_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_graphs() {
        let t = Adjacency::from_edges(4, &[(0, 1), (1, 2), (0, 3)]).unwrap();
        let r = evaluate(&t, &t).unwrap();
        assert_eq!((r.shd, r.fdr, r.tpr), (0, Some(0.0), Some(1.0)));
    }

    #[test]
    fn one_reversal() {
        let truth = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let pred = Adjacency::from_edges(3, &[(0, 1), (2, 1)]).unwrap();
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!(
            (r.tp, r.reversed, r.extra, r.missing, r.shd),
            (1, 1, 0, 0, 1)
        );
        assert_eq!(r.fdr, Some(0.5));
        assert_eq!(r.tpr, Some(0.5));
    }

    #[test]
    fn empty_prediction() {
        let truth = Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let r = evaluate(&Adjacency::empty(3), &truth).unwrap();
        assert_eq!((r.shd, r.tpr, r.fdr), (2, Some(0.0), Some(0.0)));
    }

    #[test]
    fn empty_truth_has_no_rates() {
        let pred = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
        let r = evaluate(&pred, &Adjacency::empty(3)).unwrap();
        assert_eq!((r.shd, r.extra, r.fdr, r.tpr), (1, 1, None, None));
    }

    #[test]
    fn double_prediction_counted_per_edge() {
        let truth = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
        let pred = Adjacency::from_edges(3, &[(0, 1), (1, 0)]).unwrap();
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!((r.tp, r.reversed, r.shd), (1, 1, 1));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cyc = Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(matches!(evaluate(&cyc, &cyc), Err(Error::Cyclic)));
        assert!(evaluate(&Adjacency::empty(4), &Adjacency::empty(3)).is_err());
    }
}
