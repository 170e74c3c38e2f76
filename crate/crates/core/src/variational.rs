//! Mean-field Gaussian posteriors `q(θ) = N(μ, diag σ²)` with `σ = softplus(ρ)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation used for the frequentist point-mass limit.
pub const POINT_MASS_SIGMA: f64 = 1e-8;
pub const INIT_MEAN_STD: f64 = 0.05;
pub const INIT_SIGMA: f64 = 0.05;

pub fn softplus(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(f64::MIN_POSITIVE)
}

/// Inverse of [`softplus`] for `s > 0`.
pub fn softplus_inv(s: f64) -> f64 {
    if s > 30.0 {
        s + (-(-s).exp()).ln_1p()
    } else {
        s.exp_m1().ln()
    }
}

/// Either a single value broadcast to every coordinate or one value per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoord {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerCoord {
    fn expand(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            PerCoord::Scalar(v) => Ok(vec![*v; d]),
            PerCoord::Vector(v) if v.len() == d => Ok(v.clone()),
            PerCoord::Vector(v) => Err(Error::contract(format!(
                "prior has {} coordinates, posterior has {}",
                v.len(),
                d
            ))),
        }
    }

    fn all(&self, f: impl Fn(f64) -> bool) -> bool {
        match self {
            PerCoord::Scalar(v) => f(*v),
            PerCoord::Vector(v) => v.iter().all(|x| f(*x)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: PerCoord,
    pub variance: PerCoord,
}

impl GaussianPrior {
    pub fn new(mean: PerCoord, variance: PerCoord) -> Result<Self> {
        let p = GaussianPrior { mean, variance };
        p.validate()?;
        Ok(p)
    }

    /// `N(mean, variance·I)`.
    pub fn isotropic(mean: f64, variance: f64) -> Result<Self> {
        GaussianPrior::new(PerCoord::Scalar(mean), PerCoord::Scalar(variance))
    }

    /// `N(0, I)`.
    pub fn standard() -> Self {
        GaussianPrior {
            mean: PerCoord::Scalar(0.0),
            variance: PerCoord::Scalar(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variance.all(|v| v > 0.0 && v.is_finite()) {
            return Err(Error::contract("prior variance must be positive"));
        }
        if !self.mean.all(f64::is_finite) {
            return Err(Error::contract("prior mean must be finite"));
        }
        Ok(())
    }

    pub fn means(&self, d: usize) -> Result<Vec<f64>> {
        self.mean.expand(d)
    }

    pub fn variances(&self, d: usize) -> Result<Vec<f64>> {
        self.variance.expand(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    mu: Vec<f64>,
    rho: Vec<f64>,
    /// Point-mass mode: `ρ` is pinned and never optimized.
    frozen_sigma: bool,
}

/// A posterior registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mu: Var,
    pub rho: Var,
    pub sigma: Var,
    pub frozen: bool,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::contract(format!(
                "mu has length {}, rho has length {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(GaussianPosterior {
            mu,
            rho,
            frozen_sigma: false,
        })
    }

    /// `μ ~ N(0, 0.05²)` per coordinate and `σ = 0.05`.
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mu = (0..d)
            .map(|_| INIT_MEAN_STD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        GaussianPosterior {
            mu,
            rho: vec![softplus_inv(INIT_SIGMA); d],
            frozen_sigma: false,
        }
    }

    /// Frequentist limit: all mass at `theta`, with `σ` pinned to [`POINT_MASS_SIGMA`].
    pub fn point_mass(theta: Vec<f64>) -> Self {
        let d = theta.len();
        GaussianPosterior {
            mu: theta,
            rho: vec![softplus_inv(POINT_MASS_SIGMA); d],
            frozen_sigma: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn is_point_mass(&self) -> bool {
        self.frozen_sigma
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    /// Registers `μ` and `ρ` as tape inputs. `ρ` is a constant in point-mass mode.
    pub fn on_tape(&self, tape: &mut Tape) -> PosteriorVars {
        let mu = tape.param(Tensor::vector(self.mu.clone()));
        let rho_t = Tensor::vector(self.rho.clone());
        let rho = if self.frozen_sigma {
            tape.constant(rho_t)
        } else {
            tape.param(rho_t)
        };
        let sigma = tape.softplus(rho);
        PosteriorVars {
            mu,
            rho,
            sigma,
            frozen: self.frozen_sigma,
        }
    }

    /// One draw `μ + σ ⊙ ε` off the tape.
    pub fn draw(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::contract(format!(
                "eps has length {}, posterior has dimension {}",
                eps.len(),
                self.dim()
            )));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((m, r), e)| m + softplus(*r) * e)
            .collect())
    }

    pub fn draw_random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps = standard_normal_vec(self.dim(), rng);
        self.draw(&eps).expect("dimension matches by construction")
    }

    pub fn checkpoint(&self, prior: &GaussianPrior) -> Checkpoint {
        Checkpoint {
            d: self.dim(),
            mu: self.mu.clone(),
            rho: self.rho.clone(),
            prior: prior.clone(),
            point_mass: self.frozen_sigma,
        }
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Reparameterized sample `θ = μ + σ ⊙ ε`, differentiable in `(μ, ρ)`.
pub fn sample(tape: &mut Tape, q: &PosteriorVars, eps: &Tensor) -> Result<Var> {
    let d = tape.value(q.mu).len();
    if eps.len() != d {
        return Err(Error::contract(format!(
            "eps has length {}, posterior has dimension {}",
            eps.len(),
            d
        )));
    }
    let e = tape.constant(Tensor::vector(eps.data().to_vec()));
    let noise = tape.mul(q.sigma, e)?;
    tape.add(q.mu, noise)
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_to_prior(tape: &mut Tape, q: &PosteriorVars, prior: &GaussianPrior) -> Result<Var> {
    prior.validate()?;
    let d = tape.value(q.mu).len();
    let pm = prior.means(d)?;
    let pv = prior.variances(d)?;
    let offset: f64 = pv.iter().map(|v| 0.5 * v.ln() - 0.5).sum();
    let inv2v = tape.constant(Tensor::vector(pv.iter().map(|v| 0.5 / v).collect()));
    let pm = tape.constant(Tensor::vector(pm));

    let s2 = tape.square(q.sigma);
    let diff = tape.sub(q.mu, pm)?;
    let d2 = tape.square(diff);
    let num = tape.add(s2, d2)?;
    let quad = tape.mul(num, inv2v)?;
    let log_s = tape.log_clamped(q.sigma);
    let per = tape.sub(quad, log_s)?;
    let total = tape.sum(per);
    Ok(tape.add_scalar(total, offset))
}

/// Plain-number KL, used for reporting and as a reference in tests.
pub fn kl_value(mu: &[f64], sigma: &[f64], prior: &GaussianPrior) -> Result<f64> {
    prior.validate()?;
    let d = mu.len();
    let pm = prior.means(d)?;
    let pv = prior.variances(d)?;
    Ok((0..d)
        .map(|i| {
            let sp = pv[i].sqrt();
            (sp / sigma[i]).ln() + (sigma[i].powi(2) + (mu[i] - pm[i]).powi(2)) / (2.0 * pv[i])
                - 0.5
        })
        .sum())
}

/// Posterior checkpoint file: `{d, mu, rho, prior: {mean, variance}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub prior: GaussianPrior,
    #[serde(default)]
    pub point_mass: bool,
}

impl Checkpoint {
    pub fn posterior(&self) -> Result<GaussianPosterior> {
        if self.mu.len() != self.d || self.rho.len() != self.d {
            return Err(Error::contract(format!(
                "checkpoint declares d = {} but has {} means and {} rhos",
                self.d,
                self.mu.len(),
                self.rho.len()
            )));
        }
        self.prior.validate()?;
        let mut q = GaussianPosterior::new(self.mu.clone(), self.rho.clone())?;
        q.frozen_sigma = self.point_mass;
        Ok(q)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        c.posterior()?;
        Ok(c)
    }
}
