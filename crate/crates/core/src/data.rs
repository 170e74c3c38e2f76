//! Synthetic data generators and ε-contamination.
//!
//! All generators are pure functions of their parameters and the supplied
//! rng stream. Outlier flags are bookkeeping for evaluation only; training
//! code never reads them.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Density estimation: features only.
    None,
    Classes {
        labels: Vec<usize>,
        classes: usize,
    },
    /// Real-valued targets, `n × dy`.
    Real(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × dx`
    pub features: Tensor,
    pub targets: Targets,
    pub is_outlier: Vec<bool>,
}

impl Dataset {
    pub fn unlabeled(features: Tensor) -> Result<Self> {
        Dataset::build(features, Targets::None)
    }

    pub fn classification(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Dataset::build(features, Targets::Classes { labels, classes })
    }

    pub fn regression(features: Tensor, targets: Tensor) -> Result<Self> {
        Dataset::build(features, Targets::Real(targets))
    }

    fn build(features: Tensor, targets: Targets) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::contract(format!(
                "features must be n × dx, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        let tn = match &targets {
            Targets::None => n,
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(t) => {
                if t.rank() != 2 {
                    return Err(Error::contract("real targets must be n × dy"));
                }
                t.rows()
            }
        };
        if tn != n {
            return Err(Error::contract(format!(
                "{n} feature rows but {tn} target rows"
            )));
        }
        Ok(Dataset {
            features,
            targets,
            is_outlier: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.row_len()
    }

    pub fn target_dim(&self) -> usize {
        match &self.targets {
            Targets::None => 0,
            Targets::Classes { .. } => 1,
            Targets::Real(t) => t.row_len(),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { classes, .. } => Some(*classes),
            _ => None,
        }
    }

    pub fn real_targets(&self) -> Option<&Tensor> {
        match &self.targets {
            Targets::Real(t) => Some(t),
            _ => None,
        }
    }

    pub fn outlier_count(&self) -> usize {
        self.is_outlier.iter().filter(|&&b| b).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let targets = match &self.targets {
            Targets::None => Targets::None,
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Real(t) => Targets::Real(t.select_rows(idx)),
        };
        Dataset {
            features: self.features.select_rows(idx),
            targets,
            is_outlier: idx.iter().map(|&i| self.is_outlier[i]).collect(),
        }
    }

    /// Appends one feature-only row marked as an outlier.
    pub fn with_outlier_point(&self, x: &[f64]) -> Result<Dataset> {
        if !matches!(self.targets, Targets::None) || x.len() != self.feature_dim() {
            return Err(Error::contract(
                "point outliers apply to unlabeled data of matching dimension",
            ));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(x);
        let mut out = Dataset::unlabeled(Tensor::matrix(self.len() + 1, x.len(), data)?)?;
        out.is_outlier[..self.len()].copy_from_slice(&self.is_outlier);
        out.is_outlier[self.len()] = true;
        Ok(out)
    }

    /// CSV with a header row: features `x0..`, then targets (`label` or `y0..`), then `is_outlier`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.feature_dim()).map(|j| format!("x{j}")).collect();
        match &self.targets {
            Targets::None => {}
            Targets::Classes { .. } => header.push("label".into()),
            Targets::Real(t) => header.extend((0..t.row_len()).map(|j| format!("y{j}"))),
        }
        header.push("is_outlier".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            match &self.targets {
                Targets::None => {}
                Targets::Classes { labels, .. } => rec.push(labels[i].to_string()),
                Targets::Real(t) => rec.extend(t.row(i).iter().map(|v| v.to_string())),
            }
            rec.push(u8::from(self.is_outlier[i]).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`]. Class count is `max label + 1`.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(String::from)
            .collect();
        let xcols: Vec<usize> = (0..header.len())
            .filter(|&j| header[j].starts_with('x'))
            .collect();
        let ycols: Vec<usize> = (0..header.len())
            .filter(|&j| header[j].starts_with('y'))
            .collect();
        let label_col = header.iter().position(|h| h == "label");
        let flag_col = header
            .iter()
            .position(|h| h == "is_outlier")
            .ok_or_else(|| Error::config("dataset CSV lacks an is_outlier column"))?;

        let (mut xs, mut ys, mut labels, mut flags) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("bad number {:?}: {e}", &rec[j])))
            };
            for &j in &xcols {
                xs.push(num(j)?);
            }
            for &j in &ycols {
                ys.push(num(j)?);
            }
            if let Some(j) = label_col {
                labels.push(num(j)? as usize);
            }
            flags.push(num(flag_col)? != 0.0);
        }
        let n = flags.len();
        let features = Tensor::matrix(n, xcols.len(), xs)?;
        let mut ds = if label_col.is_some() {
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            Dataset::classification(features, labels, classes)?
        } else if !ycols.is_empty() {
            Dataset::regression(features, Tensor::matrix(n, ycols.len(), ys)?)?
        } else {
            Dataset::unlabeled(features)?
        };
        ds.is_outlier = flags;
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Two-component channel-gain mixture `0.7 N(0.5, 0.05) + 0.3 N(0.8, 0.02)` (variances).
pub mod channel_gain {
    use super::*;

    pub const WEIGHTS: [f64; 2] = [0.7, 0.3];
    pub const MEANS: [f64; 2] = [0.5, 0.8];
    pub const VARIANCES: [f64; 2] = [0.05, 0.02];

    /// One draw and the index of the component it came from.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> (f64, usize) {
        let c = usize::from(rng.random::<f64>() >= WEIGHTS[0]);
        let z: f64 = StandardNormal.sample(rng);
        (MEANS[c] + VARIANCES[c].sqrt() * z, c)
    }

    /// Target density `ν(x)`.
    pub fn density(x: f64) -> f64 {
        (0..2)
            .map(|c| {
                let v = VARIANCES[c];
                WEIGHTS[c] * (-(x - MEANS[c]).powi(2) / (2.0 * v)).exp()
                    / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .sum()
    }
}

pub fn gen_channel_gain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::contract("n must be at least 1"));
    }
    let xs = (0..n).map(|_| channel_gain::draw(rng).0).collect();
    Dataset::unlabeled(Tensor::matrix(n, 1, xs)?)
}

/// Class-conditional Gaussian features standing in for modulation classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationTask {
    pub classes: usize,
    pub dim: usize,
    /// Typical distance between class means, in units of the noise std.
    pub separation: f64,
    pub noise_std: f64,
    /// Fixes the class means; shared by train and test draws.
    pub task_seed: u64,
}

impl Default for ClassificationTask {
    fn default() -> Self {
        ClassificationTask {
            classes: 8,
            dim: 16,
            separation: 2.5,
            noise_std: 1.0,
            task_seed: 7,
        }
    }
}

impl ClassificationTask {
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.task_seed);
        // N(0, c²) coordinates with c = s/√(2·dim) put pairs of means about s apart.
        let c = self.separation * self.noise_std / (2.0 * self.dim as f64).sqrt();
        (0..self.classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| c * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

pub fn gen_classification<R: Rng + ?Sized>(
    n: usize,
    task: &ClassificationTask,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 || task.classes < 2 || task.dim == 0 {
        return Err(Error::contract(
            "classification needs n ≥ 1, at least 2 classes and a positive dimension",
        ));
    }
    let means = task.class_means();
    let mut xs = Vec::with_capacity(n * task.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..task.classes);
        for &m in &means[y] {
            let z: f64 = StandardNormal.sample(rng);
            xs.push(m + task.noise_std * z);
        }
        labels.push(y);
    }
    Dataset::classification(Tensor::matrix(n, task.dim, xs)?, labels, task.classes)
}

/// RSSI-style fingerprints from anchors on the vertical centre line of the
/// unit square. Mirror-image positions `(x, y)` and `(1 - x, y)` produce the
/// same signature up to shadowing, so the inverse map is bimodal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationTask {
    pub anchors: usize,
    pub pathloss_exponent: f64,
    pub shadowing_std: f64,
    pub reference_distance: f64,
}

impl Default for LocalizationTask {
    fn default() -> Self {
        LocalizationTask {
            anchors: 8,
            pathloss_exponent: 3.0,
            shadowing_std: 0.1,
            reference_distance: 0.05,
        }
    }
}

impl LocalizationTask {
    pub fn anchor_positions(&self) -> Vec<[f64; 2]> {
        (0..self.anchors)
            .map(|k| [0.5, (k as f64 + 0.5) / self.anchors as f64])
            .collect()
    }

    fn signature<R: Rng + ?Sized>(&self, pos: [f64; 2], rng: &mut R) -> Vec<f64> {
        self.anchor_positions()
            .iter()
            .map(|a| {
                let d = ((pos[0] - a[0]).powi(2) + (pos[1] - a[1]).powi(2)).sqrt();
                let z: f64 = StandardNormal.sample(rng);
                -self.pathloss_exponent * (d + self.reference_distance).log10() - 2.0
                    + self.shadowing_std * z
            })
            .collect()
    }
}

pub fn gen_localization<R: Rng + ?Sized>(
    n: usize,
    task: &LocalizationTask,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 || task.anchors == 0 {
        return Err(Error::contract(
            "localization needs n ≥ 1 and at least one anchor",
        ));
    }
    let mut xs = Vec::with_capacity(n * task.anchors);
    let mut ys = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let pos = [rng.random::<f64>(), rng.random::<f64>()];
        xs.extend(task.signature(pos, rng));
        ys.extend_from_slice(&pos);
    }
    Dataset::regression(
        Tensor::matrix(n, task.anchors, xs)?,
        Tensor::matrix(n, 2, ys)?,
    )
}

/// Magnitude profiles of a dense tapped-delay-line channel with an
/// exponential power-delay profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultipathTask {
    pub samples: usize,
    pub sample_period_ns: f64,
    pub delay_spread_ns: f64,
    /// Overall magnitude scale.
    pub gain: f64,
}

impl Default for MultipathTask {
    fn default() -> Self {
        MultipathTask {
            samples: 128,
            sample_period_ns: 10.0,
            delay_spread_ns: 100.0,
            gain: 1.0,
        }
    }
}

impl MultipathTask {
    /// Energy-decay time constant in samples.
    pub fn decay_samples(&self, delay_spread_ns: f64) -> f64 {
        delay_spread_ns / self.sample_period_ns
    }

    fn profile<R: Rng + ?Sized>(&self, delay_spread_ns: f64, rng: &mut R) -> Vec<f64> {
        let tau = self.decay_samples(delay_spread_ns);
        // Each tap is CN(0, e^{-k/τ}); the magnitude keeps E[x_k²] = gain² e^{-k/τ}.
        (0..self.samples)
            .map(|k| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let amp = (0.5 * (re * re + im * im)).sqrt();
                self.gain * amp * (-(k as f64) / (2.0 * tau)).exp()
            })
            .collect()
    }
}

pub fn gen_multipath<R: Rng + ?Sized>(
    n: usize,
    task: &MultipathTask,
    delay_spread_ns: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 || task.samples == 0 || delay_spread_ns <= 0.0 {
        return Err(Error::contract(
            "multipath needs n ≥ 1, at least one sample and a positive delay spread",
        ));
    }
    let mut xs = Vec::with_capacity(n * task.samples);
    for _ in 0..n {
        xs.extend(task.profile(delay_spread_ns, rng));
    }
    Dataset::unlabeled(Tensor::matrix(n, task.samples, xs)?)
}

/// Out-of-distribution component `ξ` used to corrupt a clean sample.
#[derive(Clone, Debug, PartialEq)]
pub enum OodGenerator {
    /// Adds the features of a random row with a different label.
    Interference,
    /// Replaces the real-valued target with a uniform draw from `[lo, hi]^dy`.
    UniformTarget { lo: f64, hi: f64 },
    /// Replaces the profile with one drawn at a larger delay spread.
    WideDelay {
        task: MultipathTask,
        delay_spread_ns: f64,
    },
}

impl OodGenerator {
    /// Resolves a configured name. `multipath` supplies the base channel for `wide-delay`.
    pub fn from_name(name: &str, multipath: Option<&MultipathTask>) -> Result<Self> {
        match name {
            "interference" => Ok(OodGenerator::Interference),
            "uniform-target" => Ok(OodGenerator::UniformTarget { lo: 0.0, hi: 1.0 }),
            "wide-delay" => {
                let task = multipath
                    .cloned()
                    .ok_or_else(|| Error::config("wide-delay contamination needs a multipath task"))?;
                let delay_spread_ns = 3.0 * task.delay_spread_ns;
                Ok(OodGenerator::WideDelay {
                    task,
                    delay_spread_ns,
                })
            }
            other => Err(Error::config(format!(
                "unknown ood generator {other:?} (expected interference, uniform-target or wide-delay)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub ood: OodGenerator,
}

/// Replaces each row with probability `ε` by a draw from `ξ`, flagging it.
pub fn contaminate<R: Rng + ?Sized>(
    dataset: &Dataset,
    spec: &ContaminationSpec,
    rng: &mut R,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&spec.epsilon) {
        return Err(Error::contract(format!(
            "epsilon must lie in [0, 1), got {}",
            spec.epsilon
        )));
    }
    let mut out = dataset.clone();
    let n = dataset.len();
    if spec.epsilon == 0.0 {
        return Ok(out);
    }
    let dx = dataset.feature_dim();
    for i in 0..n {
        if rng.random::<f64>() >= spec.epsilon {
            continue;
        }
        out.is_outlier[i] = true;
        match &spec.ood {
            OodGenerator::Interference => {
                if n < 2 {
                    continue;
                }
                let j = pick_interferer(dataset, i, rng);
                let src = dataset.features.row(j).to_vec();
                let row = &mut out.features.data_mut()[i * dx..(i + 1) * dx];
                row.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
            OodGenerator::UniformTarget { lo, hi } => {
                let Targets::Real(t) = &mut out.targets else {
                    return Err(Error::config(
                        "uniform-target contamination needs real targets",
                    ));
                };
                let dy = t.row_len();
                for v in &mut t.data_mut()[i * dy..(i + 1) * dy] {
                    *v = rng.random_range(*lo..*hi);
                }
            }
            OodGenerator::WideDelay {
                task,
                delay_spread_ns,
            } => {
                if task.samples != dx {
                    return Err(Error::contract(
                        "wide-delay profile length differs from features",
                    ));
                }
                let p = task.profile(*delay_spread_ns, rng);
                out.features.data_mut()[i * dx..(i + 1) * dx].copy_from_slice(&p);
            }
        }
    }
    Ok(out)
}

fn pick_interferer<R: Rng + ?Sized>(d: &Dataset, i: usize, rng: &mut R) -> usize {
    let n = d.len();
    match d.labels() {
        Some(labels) if labels.iter().any(|&l| l != labels[i]) => loop {
            let j = rng.random_range(0..n);
            if labels[j] != labels[i] {
                return j;
            }
        },
        _ => loop {
            let j = rng.random_range(0..n);
            if j != i {
                return j;
            }
        },
    }
}

/// Deterministic shuffled split; `train_fraction` of the rows go to the first part.
pub fn split<R: Rng + ?Sized>(d: &Dataset, train_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
    let n = d.len();
    let k = ((n as f64) * train_fraction).round() as usize;
    let perm = sample_indices(rng, n, n).into_vec();
    (d.subset(&perm[..k]), d.subset(&perm[k..]))
}
