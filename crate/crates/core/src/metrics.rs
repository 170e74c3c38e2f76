//! Calibration, accuracy and uncertainty metrics.

use serde::Serialize;

use crate::autodiff::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::models::{log_mean_exp, Vae};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Zero for empty bins, which carry no weight.
    pub accuracy: f64,
    pub confidence: f64,
}

/// Equal-width partition of `[0, 1]` into `M` bins, `(lo, hi]` except the first, which includes 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<Bin>,
}

fn bin_index(c: f64, m: usize) -> usize {
    ((c * m as f64).ceil() as usize).clamp(1, m) - 1
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ReliabilityDiagram {
    /// From per-point confidence `max_y p(y|x)` and whether the argmax was correct.
    pub fn from_confidences(confidence: &[f64], correct: &[bool], m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::contract("need at least one bin"));
        }
        if confidence.is_empty() {
            return Err(Error::contract("empty test set"));
        }
        if confidence.len() != correct.len() {
            return Err(Error::contract("confidence and correctness lengths differ"));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::contract("confidences must lie in [0, 1]"));
        }
        let mut count = vec![0usize; m];
        let mut hits = vec![0usize; m];
        let mut conf = vec![0.0; m];
        for (&c, &ok) in confidence.iter().zip(correct) {
            let b = bin_index(c, m);
            count[b] += 1;
            hits[b] += ok as usize;
            conf[b] += c;
        }
        let bins = (0..m)
            .map(|b| {
                let n = count[b].max(1) as f64;
                Bin {
                    lo: b as f64 / m as f64,
                    hi: (b + 1) as f64 / m as f64,
                    count: count[b],
                    accuracy: hits[b] as f64 / n,
                    confidence: conf[b] / n,
                }
            })
            .collect();
        Ok(ReliabilityDiagram { bins })
    }

    /// From an `n × classes` matrix of predictive probabilities.
    pub fn from_probs(probs: &Tensor, labels: &[usize], m: usize) -> Result<Self> {
        if probs.rank() != 2 || probs.rows() != labels.len() {
            return Err(Error::contract("one probability row per label required"));
        }
        let (conf, correct): (Vec<f64>, Vec<bool>) = (0..labels.len())
            .map(|i| {
                let row = probs.row(i);
                let k = argmax(row);
                (row[k], k == labels[i])
            })
            .unzip();
        Self::from_confidences(&conf, &correct, m)
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn ece(&self) -> f64 {
        let n = self.total() as f64;
        self.bins
            .iter()
            .map(|b| b.count as f64 / n * (b.confidence - b.accuracy).abs())
            .sum()
    }
}

pub fn ece(probs: &Tensor, labels: &[usize], m: usize) -> Result<f64> {
    Ok(ReliabilityDiagram::from_probs(probs, labels, m)?.ece())
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || probs.rank() != 2 || probs.rows() != labels.len() {
        return Err(Error::contract("one probability row per label required"));
    }
    let hits = (0..labels.len())
        .filter(|&i| argmax(probs.row(i)) == labels[i])
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean Euclidean error norm, or mean squared norm when `squared`.
pub fn mse(pred: &Tensor, targets: &Tensor, squared: bool) -> Result<f64> {
    if pred.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: pred.shape().to_vec(),
            right: targets.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let n = pred.rows();
    let total: f64 = (0..n)
        .map(|i| {
            let ss: f64 = pred
                .row(i)
                .iter()
                .zip(targets.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if squared {
                ss
            } else {
                ss.sqrt()
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// `-(1/N) Σ log p`, densities clamped at the log floor.
pub fn nll(densities: &[f64]) -> Result<f64> {
    if densities.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    Ok(-densities.iter().map(|p| p.max(LOG_FLOOR).ln()).sum::<f64>() / densities.len() as f64)
}

/// NLL from log-densities, which avoids the clamp for very small values.
pub fn nll_from_log(log_densities: &[f64]) -> Result<f64> {
    if log_densities.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    Ok(-log_densities.iter().sum::<f64>() / log_densities.len() as f64)
}

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn mean_kernel(x: &Tensor, y: &Tensor) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            s += kernel(x.row(i), y.row(j));
        }
    }
    s / (x.rows() * y.rows()) as f64
}

/// Biased V-statistic estimate of the squared MMD with kernel `N(‖x - x'‖ | 0, 1)`.
pub fn mmd(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rank() != 2 || y.rank() != 2 || x.row_len() != y.row_len() {
        return Err(Error::ShapeMismatch {
            op: "mmd",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::contract("both samples must be nonempty"));
    }
    let v = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
    Ok(v.max(0.0))
}

/// Probability that an in-distribution score exceeds an out-of-distribution one, ties ½.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract("both score lists must be nonempty"));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::contract("scores must not be NaN"));
    }
    let mut sorted = ood.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let wins: f64 = id
        .iter()
        .map(|&s| {
            let below = sorted.partition_point(|&o| o < s);
            let upto = sorted.partition_point(|&o| o <= s);
            below as f64 + 0.5 * (upto - below) as f64
        })
        .sum();
    Ok(wins / (id.len() * ood.len()) as f64)
}

/// `ln[(1/(mL)) Σ_{i,j} p(x | h_j, θ_i)]` for every row of `x`.
///
/// `latents` is `L × latent` with rows drawn from the latent prior.
pub fn model_density_log_score(
    vae: &Vae,
    decoders: &[Vec<f64>],
    latents: &Tensor,
    x: &Tensor,
) -> Result<Vec<f64>> {
    if decoders.is_empty() || latents.rows() == 0 {
        return Err(Error::contract("density score needs m >= 1 and L >= 1"));
    }
    let mut per: Vec<Vec<f64>> =
        vec![Vec::with_capacity(decoders.len() * latents.rows()); x.rows()];
    for dec in decoders {
        for (i, row) in vae
            .decoder_log_prob_values(dec, latents, x)?
            .into_iter()
            .enumerate()
        {
            per[i].extend(row);
        }
    }
    Ok(per.iter().map(|l| log_mean_exp(l)).collect())
}

pub fn model_density_score(
    vae: &Vae,
    decoders: &[Vec<f64>],
    latents: &Tensor,
    x: &Tensor,
) -> Result<Vec<f64>> {
    Ok(model_density_log_score(vae, decoders, latents, x)?
        .into_iter()
        .map(f64::exp)
        .collect())
}
