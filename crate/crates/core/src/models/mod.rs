//! Likelihood families `p(y | x, θ)` and `p(x | θ)`.

pub mod mlp;
pub mod vae;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use mlp::Mlp;
pub use vae::{Vae, LATENT_DIM};

/// `-(d/2) ln(2π·variance)`.
pub fn gaussian_log_norm(d: usize, variance: f64) -> f64 {
    -0.5 * d as f64 * (2.0 * std::f64::consts::PI * variance).ln()
}

/// `N(x | θ, variance)` with a one-dimensional location parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLocationModel {
    variance: f64,
}

impl GaussianLocationModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::config("location model variance must be positive"));
        }
        Ok(GaussianLocationModel { variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn log_density(&self, x: f64, theta: f64) -> f64 {
        gaussian_log_norm(1, self.variance) - (x - theta).powi(2) / (2.0 * self.variance)
    }
}

/// Categorical output over the network's final layer via normalized exponentials.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    pub net: Mlp,
}

impl MlpClassifier {
    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    /// Softmax class probabilities, `n × classes`.
    pub fn class_probs(&self, theta: &[f64], x: &Tensor) -> Result<Tensor> {
        let mut logits = self.net.forward_values(theta, x)?;
        let k = self.classes();
        for row in logits.data_mut().chunks_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(logits)
    }
}

/// `N(y | f_θ(x), variance·I)` with fixed variance.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpRegressor {
    pub net: Mlp,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    GaussianLocation(GaussianLocationModel),
    Classifier(MlpClassifier),
    Regressor(MlpRegressor),
    Vae(Vae),
}

/// A dataset registered on a tape as constants.
#[derive(Clone, Copy, Debug)]
pub struct DataOnTape {
    pub x: Var,
    pub target: TargetVar,
    pub rows: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum TargetVar {
    None,
    /// `n × classes` indicator matrix.
    OneHot(Var),
    Real(Var),
}

impl DataOnTape {
    pub fn new(tape: &mut Tape, data: &Dataset) -> Result<Self> {
        let x = tape.constant(data.features.clone());
        let target = match &data.targets {
            Targets::None => TargetVar::None,
            Targets::Classes { labels, classes } => {
                let mut oh = vec![0.0; labels.len() * classes];
                for (i, &l) in labels.iter().enumerate() {
                    oh[i * classes + l] = 1.0;
                }
                TargetVar::OneHot(tape.constant(Tensor::matrix(labels.len(), *classes, oh)?))
            }
            Targets::Real(t) => TargetVar::Real(tape.constant(t.clone())),
        };
        Ok(DataOnTape {
            x,
            target,
            rows: data.len(),
        })
    }
}

impl Model {
    /// Size of the parameter vector the posterior is placed on (the decoder, for a VAE).
    pub fn param_count(&self) -> usize {
        match self {
            Model::GaussianLocation(_) => 1,
            Model::Classifier(c) => c.net.param_count(),
            Model::Regressor(r) => r.net.param_count(),
            Model::Vae(v) => v.decoder_param_count(),
        }
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        let (dx, ok_target) = match self {
            Model::GaussianLocation(_) => (1, matches!(data.targets, Targets::None)),
            Model::Classifier(c) => (c.net.input_dim(), data.num_classes() == Some(c.classes())),
            Model::Regressor(r) => (
                r.net.input_dim(),
                data.real_targets().map(|t| t.row_len()) == Some(r.net.output_dim()),
            ),
            Model::Vae(v) => (v.input_dim(), matches!(data.targets, Targets::None)),
        };
        if data.feature_dim() != dx || !ok_target {
            return Err(Error::contract(format!(
                "dataset ({} features, {} target dims) does not fit the model",
                data.feature_dim(),
                data.target_dim()
            )));
        }
        Ok(())
    }

    /// Per-row log-likelihood `log p(z | θ)`, shape `[n]`, computed in the log domain.
    pub fn log_prob(&self, tape: &mut Tape, theta: Var, data: &DataOnTape) -> Result<Var> {
        let d = tape.value(theta).len();
        if d != self.param_count() {
            return Err(Error::contract(format!(
                "theta has length {d}, model expects {}",
                self.param_count()
            )));
        }
        match (self, data.target) {
            (Model::GaussianLocation(m), TargetVar::None) => {
                let r = tape.sub(data.x, theta)?;
                let r2 = tape.square(r);
                let s = tape.sum_axis(r2, 1)?;
                let q = tape.scale(s, -0.5 / m.variance);
                Ok(tape.add_scalar(q, gaussian_log_norm(1, m.variance)))
            }
            (Model::Classifier(c), TargetVar::OneHot(oh)) => {
                let logits = c.net.forward(tape, theta, data.x)?;
                let lse = tape.logsumexp(logits, 1)?;
                let picked = tape.mul(logits, oh)?;
                let picked = tape.sum_axis(picked, 1)?;
                tape.sub(picked, lse)
            }
            (Model::Regressor(r), TargetVar::Real(y)) => {
                let f = r.net.forward(tape, theta, data.x)?;
                let res = tape.sub(y, f)?;
                let r2 = tape.square(res);
                let s = tape.sum_axis(r2, 1)?;
                let q = tape.scale(s, -0.5 / r.variance);
                Ok(tape.add_scalar(q, gaussian_log_norm(r.net.output_dim(), r.variance)))
            }
            (Model::Vae(_), _) => Err(Error::contract(
                "VAE likelihoods need an encoder; use the vae objective",
            )),
            _ => Err(Error::contract(
                "target kind does not match the model family",
            )),
        }
    }

    /// `log p(z | θ)` per row without recording gradients.
    pub fn log_prob_values(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        match self {
            Model::Classifier(c) => {
                let p = c.class_probs(theta, &data.features)?;
                let labels = data.labels().expect("checked");
                Ok(labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| p.row(i)[l].ln())
                    .collect())
            }
            Model::Regressor(r) => {
                let f = r.net.forward_values(theta, &data.features)?;
                let y = data.real_targets().expect("checked");
                let c = gaussian_log_norm(r.net.output_dim(), r.variance);
                Ok((0..data.len())
                    .map(|i| {
                        let ss: f64 = y
                            .row(i)
                            .iter()
                            .zip(f.row(i))
                            .map(|(a, b)| (a - b).powi(2))
                            .sum();
                        c - 0.5 * ss / r.variance
                    })
                    .collect())
            }
            _ => {
                let mut tape = Tape::new();
                let t = tape.constant(Tensor::vector(theta.to_vec()));
                let dv = DataOnTape::new(&mut tape, data)?;
                let lp = self.log_prob(&mut tape, t, &dv)?;
                Ok(tape.value(lp).data().to_vec())
            }
        }
    }
}

/// `ln((1/m) Σ exp(l_i))`, stable for large magnitudes.
pub fn log_mean_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (ls.iter().map(|l| (l - m).exp()).sum::<f64>() / ls.len() as f64).ln()
}

/// Log of the m-sample predictive `(1/m) Σ_i p(z | θ_i)` for every row.
pub fn predictive_log_prob(model: &Model, thetas: &[Vec<f64>], data: &Dataset) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::contract(
            "predictive needs at least one parameter draw",
        ));
    }
    let per: Vec<Vec<f64>> = thetas
        .iter()
        .map(|t| model.log_prob_values(t, data))
        .collect::<Result<_>>()?;
    Ok((0..data.len())
        .map(|i| log_mean_exp(&per.iter().map(|p| p[i]).collect::<Vec<_>>()))
        .collect())
}

/// m-sample predictive probability (or density) `(1/m) Σ_i p(z | θ_i)` per row.
pub fn predictive_prob(model: &Model, thetas: &[Vec<f64>], data: &Dataset) -> Result<Vec<f64>> {
    Ok(predictive_log_prob(model, thetas, data)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    GaussianLocation,
    MlpClassifier,
    MlpRegressor,
    Vae,
}

/// Architecture block of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub layer_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
}

impl ModelSpec {
    /// For a VAE, `layer_widths` is `[input, hidden..]`.
    pub fn build(&self) -> Result<Model> {
        match self.family {
            ModelFamily::GaussianLocation => Ok(Model::GaussianLocation(
                GaussianLocationModel::new(self.fixed_variance.unwrap_or(0.25))?,
            )),
            ModelFamily::MlpClassifier => Ok(Model::Classifier(MlpClassifier {
                net: Mlp::new(self.layer_widths.clone())?,
            })),
            ModelFamily::MlpRegressor => {
                let variance = self.fixed_variance.unwrap_or(0.01);
                if !(variance > 0.0) {
                    return Err(Error::config("model.fixed_variance must be positive"));
                }
                Ok(Model::Regressor(MlpRegressor {
                    net: Mlp::new(self.layer_widths.clone())?,
                    variance,
                }))
            }
            ModelFamily::Vae => {
                if let Some(l) = self.latent_dim {
                    if l != LATENT_DIM {
                        return Err(Error::config(format!(
                            "model.latent_dim must be {LATENT_DIM}, got {l}"
                        )));
                    }
                }
                let (input, hidden) = self.layer_widths.split_first().ok_or_else(|| {
                    Error::config("model.layer_widths must start with the input dimension")
                })?;
                Ok(Model::Vae(Vae::new(
                    *input,
                    hidden,
                    self.fixed_variance.unwrap_or(0.01),
                )?))
            }
        }
    }
}
