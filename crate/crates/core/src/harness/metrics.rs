use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ConfigEcho;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_type: BTreeMap<usize, TypeScores>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Multiclass scores over `(gold, predicted)` pairs. Macro-F1 averages over
/// every label seen as gold or prediction; undefined ratios count as 0.
pub fn compute_metrics(pairs: &[(usize, usize)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Metrics("no predictions to score".into()));
    }
    let labels: BTreeSet<usize> = pairs.iter().flat_map(|&(g, p)| [g, p]).collect();
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let wrong = pairs.len() - correct;
    let mut per_type = BTreeMap::new();
    for &l in &labels {
        let tp = pairs.iter().filter(|&&(g, p)| g == l && p == l).count();
        let fp = pairs.iter().filter(|&&(g, p)| g != l && p == l).count();
        let fn_ = pairs.iter().filter(|&&(g, p)| g == l && p != l).count();
        per_type.insert(
            l,
            TypeScores {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                support: tp + fn_,
            },
        );
    }
    let macro_f1 = per_type.values().map(|s| s.f1).sum::<f64>() / per_type.len() as f64;
    Ok(Metrics {
        accuracy: ratio(correct, pairs.len()),
        // Pooled counts: every wrong prediction is one false positive and one
        // false negative.
        micro_f1: ratio(2 * correct, 2 * correct + 2 * wrong),
        macro_f1,
        per_type,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: String,
    pub seed: u64,
    pub episodes: usize,
    pub queries: usize,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Mean over episodes of the mean query log predictive probability.
    pub mean_log_likelihood: f64,
    /// Mean gate value per frame match kind (`ake` only).
    pub mean_lambda: BTreeMap<String, f64>,
    pub per_type: BTreeMap<String, TypeScores>,
    pub config: ConfigEcho,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::load(path, e.line(), e.to_string()))
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let c = &self.config.run;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode {}  seed {}  episodes {}  queries {}",
            self.mode, self.seed, self.episodes, self.queries
        );
        let _ = writeln!(
            out,
            "{}-way {}-shot  N_s {}  eps {}  steps {}  dropout {}  lr {:e}",
            c.n_way, c.m_shot, c.n_samples, c.epsilon, c.langevin_steps, c.dropout, c.learning_rate
        );
        let _ = writeln!(out, "accuracy        {:.4}", self.accuracy);
        let _ = writeln!(out, "micro-F1        {:.4}", self.micro_f1);
        let _ = writeln!(out, "macro-F1        {:.4}", self.macro_f1);
        let _ = writeln!(out, "mean log-lik    {:.4}", self.mean_log_likelihood);
        for (kind, v) in &self.mean_lambda {
            let _ = writeln!(out, "mean lambda     {kind:<15} {v:.4}");
        }
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            "type", "precision", "recall", "f1", "support"
        );
        for (t, s) in &self.per_type {
            let _ = writeln!(
                out,
                "{t:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                s.precision, s.recall, s.f1, s.support
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_worst() {
        let m = compute_metrics(&[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.micro_f1), (1.0, 1.0, 1.0));
        let m = compute_metrics(&[(0, 1), (1, 0)]).unwrap();
        assert_eq!(m.accuracy, 0.0);
    }

    #[test]
    fn hand_computed_confusion() {
        let (a, b, c) = (0, 1, 2);
        let m = compute_metrics(&[(a, a), (a, b), (b, b), (c, c)]).unwrap();
        assert_eq!(m.accuracy, 0.75);
        // Per class: a has P=1, R=1/2; b has P=1/2, R=1; c is perfect.
        let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let expected = (f1(1.0, 0.5) + f1(0.5, 1.0) + 1.0) / 3.0;
        assert!((m.macro_f1 - expected).abs() < 1e-15);
        assert!((m.macro_f1 - 0.778).abs() < 1e-3);
        assert_eq!(m.per_type[&a].recall, 0.5);
        assert_eq!(m.per_type[&b].precision, 0.5);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(Error::Metrics(_))));
    }

    proptest::proptest! {
        #[test]
        fn micro_f1_is_accuracy(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..200)) {
            let m = compute_metrics(&pairs).unwrap();
            proptest::prop_assert_eq!(m.micro_f1, m.accuracy);
            proptest::prop_assert!((0.0..=1.0).contains(&m.accuracy));
        }
    }
}
