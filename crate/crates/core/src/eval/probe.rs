//! Linear classification probe: multinomial logistic regression under
//! stratified k-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CwtmError, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const L2_PENALTY: f64 = 1e-4;
pub const ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub folds: usize,
    pub classes: Vec<String>,
    pub l2_penalty: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Fold index of every sample; each class is shuffled and dealt round-robin
/// so that fold sizes per class differ by at most one.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

/// Plain multinomial logistic regression on standardized features.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(d + 1) × classes`, last row is the bias.
    weights: Vec<f64>,
    classes: usize,
}

fn softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Largest eigenvalue of `AᵀA / n` by power iteration.
fn gram_spectral_norm(a: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let n = a.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut w = vec![0.0; d];
        for row in a {
            let dot: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(row).for_each(|(o, x)| *o += dot * x / n);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-10 * norm;
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, l2: f64, iterations: usize) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(CwtmError::Eval("probe needs one label per feature vector".into()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut s: Vec<f64> = (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect();
                s.push(1.0);
                s
            })
            .collect();
        let dp = d + 1;
        // The softmax cross-entropy Hessian is bounded by ½ ZᵀZ/n.
        let step = 1.0 / (0.5 * gram_spectral_norm(&z) + l2);
        let mut w = vec![0.0; dp * classes];
        let mut p = vec![0.0; classes];
        for _ in 0..iterations {
            let mut grad = vec![0.0; dp * classes];
            for (row, &label) in z.iter().zip(y) {
                for (c, pc) in p.iter_mut().enumerate() {
                    *pc = (0..dp).map(|j| row[j] * w[j * classes + c]).sum();
                }
                softmax(&mut p);
                p[label] -= 1.0;
                for j in 0..dp {
                    for c in 0..classes {
                        grad[j * classes + c] += row[j] * p[c] / n;
                    }
                }
            }
            for j in 0..d {
                for c in 0..classes {
                    grad[j * classes + c] += l2 * w[j * classes + c];
                }
            }
            w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= step * g);
        }
        Ok(LogisticRegression {
            mean,
            scale,
            weights: w,
            classes,
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let d = self.mean.len();
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.classes {
            let mut s = self.weights[d * self.classes + c];
            for j in 0..d {
                s += (x[j] - self.mean[j]) / self.scale[j] * self.weights[j * self.classes + c];
            }
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

/// Mean held-out accuracy of the probe over stratified folds.
pub fn classify_probe(vectors: &[Vec<f64>], labels: &[String], folds: usize, seed: u64) -> Result<ProbeReport> {
    if vectors.len() != labels.len() || vectors.is_empty() {
        return Err(CwtmError::Eval("probe needs one label per vector".into()));
    }
    if folds < 2 {
        return Err(CwtmError::Config("at least 2 folds are needed".into()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(CwtmError::Eval("probe vectors must be finite and of equal length".into()));
    }
    let classes: Vec<String> = {
        let mut c: Vec<String> = labels.to_vec();
        c.sort();
        c.dedup();
        c
    };
    let report = |accuracy: f64, fold_accuracies: Vec<f64>, warning: Option<String>| ProbeReport {
        accuracy,
        fold_accuracies,
        folds,
        classes: classes.clone(),
        l2_penalty: L2_PENALTY,
        iterations: ITERATIONS,
        warning,
    };
    if classes.len() == 1 {
        let msg = format!("only one class ('{}'); accuracy is trivially 1", classes[0]);
        log::warn!("{msg}");
        return Ok(report(1.0, vec![1.0; folds], Some(msg)));
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("known class")).collect();
    for (c, name) in classes.iter().enumerate() {
        let n = y.iter().filter(|&&v| v == c).count();
        if n < folds {
            return Err(CwtmError::Eval(format!("class '{name}' has {n} members, need at least {folds}")));
        }
    }
    let assignment = stratified_folds(&y, folds, seed);
    let mut accs = Vec::with_capacity(folds);
    for f in 0..folds {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..vectors.len() {
            if assignment[i] == f {
                vx.push(vectors[i].clone());
                vy.push(y[i]);
            } else {
                tx.push(vectors[i].clone());
                ty.push(y[i]);
            }
        }
        let model = LogisticRegression::fit(&tx, &ty, classes.len(), L2_PENALTY, ITERATIONS)?;
        let correct = vx.iter().zip(&vy).filter(|(x, y)| model.predict(x) == **y).count();
        accs.push(correct as f64 / vx.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / folds as f64;
    Ok(report(mean, accs, None))
}
