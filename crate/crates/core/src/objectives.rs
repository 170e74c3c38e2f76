//! The free-energy family: standard, m-sample, t-tempered and (m, t) criteria.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, LOG_FLOOR};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{DataOnTape, GaussianLocationModel, Model};
use crate::tensor::Tensor;
use crate::variational::{kl_to_prior, sample, GaussianPrior, PosteriorVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    Discriminative,
    Density,
    Vae,
}

/// One member of the free-energy family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub m: usize,
    pub t: f64,
    pub beta: f64,
    pub family: LossFamily,
    #[serde(default)]
    pub frequentist: bool,
}

impl ObjectiveSpec {
    pub fn new(m: usize, t: f64, beta: f64, family: LossFamily, frequentist: bool) -> Result<Self> {
        let s = ObjectiveSpec {
            m,
            t,
            beta,
            family,
            frequentist,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::contract("m must be at least 1"));
        }
        check_t(self.t)?;
        if !(self.beta > 0.0) || self.beta.is_nan() {
            return Err(Error::contract(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Weight `m/β` on the KL term, zero in frequentist mode.
    pub fn kl_weight(&self) -> f64 {
        if self.frequentist {
            0.0
        } else {
            self.m as f64 / self.beta
        }
    }

    pub fn check_model(&self, model: &Model) -> Result<()> {
        let ok = matches!(
            (self.family, model),
            (LossFamily::Density, Model::GaussianLocation(_))
                | (LossFamily::Discriminative, Model::Classifier(_))
                | (LossFamily::Discriminative, Model::Regressor(_))
                | (LossFamily::Vae, Model::Vae(_))
        );
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "loss family {:?} does not apply to this model",
                self.family
            )))
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::contract(format!("t must lie in [0, 1], got {t}")))
    }
}

/// `-log_t(p)`. Probabilities below the log floor are clamped.
pub fn t_log_loss(p: f64, t: f64) -> Result<f64> {
    check_t(t)?;
    if p.is_nan() || p < 0.0 {
        return Err(Error::contract(format!(
            "probability must be nonnegative, got {p}"
        )));
    }
    let p = p.max(LOG_FLOOR);
    if t == 1.0 {
        Ok(-p.ln())
    } else {
        Ok(-(p.powf(1.0 - t) - 1.0) / (1.0 - t))
    }
}

/// `-log_t(exp(l))` elementwise for log-probabilities `l`.
pub fn neg_log_t(tape: &mut Tape, log_p: Var, t: f64) -> Result<Var> {
    check_t(t)?;
    if t == 1.0 {
        return Ok(tape.neg(log_p));
    }
    let a = 1.0 - t;
    let s = tape.scale(log_p, a);
    let e = tape.exp(s);
    let shifted = tape.add_scalar(e, -1.0);
    Ok(tape.scale(shifted, -1.0 / a))
}

/// Per-row `ln((1/m) Σ_i exp(l_i))` over the leading axis of stacked log-likelihoods.
pub fn log_mixture(tape: &mut Tape, per_draw: &[Var]) -> Result<Var> {
    if per_draw.is_empty() {
        return Err(Error::contract("mixture needs at least one component"));
    }
    let stacked = tape.stack(per_draw)?;
    let lse = tape.logsumexp(stacked, 0)?;
    Ok(tape.add_scalar(lse, -(per_draw.len() as f64).ln()))
}

/// `-Σ_z log_t((1/m) Σ_i p(z | θ_i))` over the dataset.
pub fn mt_training_loss(
    tape: &mut Tape,
    model: &Model,
    thetas: &[Var],
    data: &DataOnTape,
    t: f64,
) -> Result<Var> {
    if data.rows == 0 {
        return Err(Error::contract("training loss over an empty dataset"));
    }
    if thetas.is_empty() {
        return Err(Error::contract(
            "training loss needs at least one parameter draw",
        ));
    }
    let per: Vec<Var> = thetas
        .iter()
        .map(|&th| model.log_prob(tape, th, data))
        .collect::<Result<_>>()?;
    let mix = log_mixture(tape, &per)?;
    let losses = neg_log_t(tape, mix, t)?;
    Ok(tape.sum(losses))
}

/// Scalar form of the (m, t) training loss from per-model probabilities `probs[i][z]`.
pub fn mt_loss_from_probs(probs: &[Vec<f64>], t: f64) -> Result<f64> {
    let m = probs.len();
    if m == 0 {
        return Err(Error::contract(
            "training loss needs at least one parameter draw",
        ));
    }
    let n = probs[0].len();
    if n == 0 {
        return Err(Error::contract("training loss over an empty dataset"));
    }
    if probs.iter().any(|p| p.len() != n) {
        return Err(Error::contract(
            "every draw needs one probability per datapoint",
        ));
    }
    (0..n)
        .map(|z| t_log_loss(probs.iter().map(|p| p[z]).sum::<f64>() / m as f64, t))
        .sum()
}

/// Standard-normal noise for one optimizer step.
#[derive(Clone, Debug)]
pub struct Draws {
    /// One vector per ensemble member, each of the posterior's dimension.
    pub theta: Vec<Tensor>,
    /// Latent noise `n × latent` shared by all decoder draws (VAE only).
    pub latent: Option<Tensor>,
}

/// Value handles for the two parts of a free energy.
#[derive(Clone, Copy, Debug)]
pub struct Terms {
    pub total: Var,
    pub loss: Var,
    /// Absent in frequentist mode.
    pub kl: Option<Var>,
}

/// A fully specified criterion: spec, model and prior.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub spec: ObjectiveSpec,
    pub model: &'a Model,
    pub prior: &'a GaussianPrior,
}

impl<'a> Objective<'a> {
    pub fn new(spec: ObjectiveSpec, model: &'a Model, prior: &'a GaussianPrior) -> Result<Self> {
        spec.validate()?;
        spec.check_model(model)?;
        prior.validate()?;
        Ok(Objective { spec, model, prior })
    }

    /// `loss_scale · L_t(θ_1..θ_m) + (m/β) KL(q ‖ p)`.
    ///
    /// `loss_scale` is 1 for full-batch steps and `|D| / batch` for minibatches.
    /// `enc` must hold the encoder parameters for a VAE and be `None` otherwise.
    pub fn free_energy(
        &self,
        tape: &mut Tape,
        q: &PosteriorVars,
        enc: Option<Var>,
        data: &DataOnTape,
        draws: &Draws,
        loss_scale: f64,
    ) -> Result<Terms> {
        if draws.theta.len() != self.spec.m {
            return Err(Error::contract(format!(
                "expected {} parameter draws, got {}",
                self.spec.m,
                draws.theta.len()
            )));
        }
        let thetas: Vec<Var> = draws
            .theta
            .iter()
            .map(|e| sample(tape, q, e))
            .collect::<Result<_>>()?;
        let loss = match (self.model, enc) {
            (Model::Vae(_), Some(enc)) => {
                let latent = draws
                    .latent
                    .as_ref()
                    .ok_or_else(|| Error::contract("VAE objective needs latent draws"))?;
                self.vae_loss(tape, &thetas, enc, data, latent)?
            }
            (Model::Vae(_), None) => {
                return Err(Error::contract("VAE objective needs encoder parameters"))
            }
            (_, Some(_)) => {
                return Err(Error::contract(
                    "encoder parameters given to a non-VAE model",
                ))
            }
            (model, None) => mt_training_loss(tape, model, &thetas, data, self.spec.t)?,
        };
        let loss = if loss_scale == 1.0 {
            loss
        } else {
            tape.scale(loss, loss_scale)
        };
        if self.spec.frequentist {
            return Ok(Terms {
                total: loss,
                loss,
                kl: None,
            });
        }
        let kl = kl_to_prior(tape, q, self.prior)?;
        let weighted = tape.scale(kl, self.spec.kl_weight());
        let total = tape.add(loss, weighted)?;
        Ok(Terms {
            total,
            loss,
            kl: Some(kl),
        })
    }

    /// `Σ_x [ -log_t((1/m) Σ_i p(x | h, θ_i)) + KL(q(h|x) ‖ p(h)) ]` at one shared latent draw.
    fn vae_loss(
        &self,
        tape: &mut Tape,
        thetas: &[Var],
        enc: Var,
        data: &DataOnTape,
        latent: &Tensor,
    ) -> Result<Var> {
        let Model::Vae(vae) = self.model else {
            return Err(Error::contract("VAE loss on a non-VAE model"));
        };
        if data.rows == 0 {
            return Err(Error::contract("training loss over an empty dataset"));
        }
        let (mu, sigma) = vae.encode(tape, enc, data.x)?;
        let h = vae.reparameterize(tape, mu, sigma, latent)?;
        let per: Vec<Var> = thetas
            .iter()
            .map(|&th| vae.decoder_log_prob(tape, th, h, data.x))
            .collect::<Result<_>>()?;
        let mix = log_mixture(tape, &per)?;
        let rec = neg_log_t(tape, mix, self.spec.t)?;
        let kl = vae.encoder_kl(tape, mu, sigma)?;
        let per_row = tape.add(rec, kl)?;
        Ok(tape.sum(per_row))
    }
}

/// Grid approximation of `p(θ) Π p(x|θ)^β`, normalized by the trapezoid rule.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperedPosterior {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Set when the density at either grid end exceeds `1e-6` of its maximum.
    pub warning: Option<String>,
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

impl TemperedPosterior {
    pub fn mean(&self) -> f64 {
        let f: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(x, p)| x * p)
            .collect();
        trapezoid(&self.grid, &f)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let f: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(x, p)| (x - m).powi(2) * p)
            .collect();
        trapezoid(&self.grid, &f)
    }
}

pub fn tempered_posterior_1d(
    model: &GaussianLocationModel,
    prior: &GaussianPrior,
    data: &Dataset,
    beta: f64,
    grid: &[f64],
) -> Result<TemperedPosterior> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::contract(
            "grid needs at least two strictly increasing points",
        ));
    }
    if !(beta >= 0.0) {
        return Err(Error::contract("beta must be nonnegative"));
    }
    if data.feature_dim() != 1 && !data.is_empty() {
        return Err(Error::contract(
            "tempered posterior needs one-dimensional data",
        ));
    }
    let pm = prior.means(1)?[0];
    let pv = prior.variances(1)?[0];
    let xs = data.features.data();
    let log_un: Vec<f64> = grid
        .iter()
        .map(|&th| {
            let lp = -0.5 * (th - pm).powi(2) / pv;
            let ll: f64 = xs.iter().map(|&x| model.log_density(x, th)).sum();
            lp + beta * ll
        })
        .collect();
    let top = log_un.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = log_un.iter().map(|l| (l - top).exp()).collect();
    let z = trapezoid(grid, &un);
    let density: Vec<f64> = un.iter().map(|u| u / z).collect();
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let edge = density[0].max(*density.last().expect("nonempty"));
    let warning = (edge > 1e-6 * peak).then(|| {
        format!(
            "grid [{}, {}] is too narrow: boundary density is {:.3e} of the maximum",
            grid[0],
            grid[grid.len() - 1],
            edge / peak
        )
    });
    Ok(TemperedPosterior {
        grid: grid.to_vec(),
        density,
        warning,
    })
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
