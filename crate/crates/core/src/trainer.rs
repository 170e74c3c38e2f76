//! Adam over the variational parameters `(μ, ρ)` and, for a VAE, the encoder weights.

use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{vae::standard_normal_matrix, DataOnTape, Model, LATENT_DIM};
use crate::objectives::{Draws, Objective, ObjectiveSpec};
use crate::tensor::Tensor;
use crate::variational::{
    standard_normal_vec, Checkpoint, GaussianPosterior, GaussianPrior, INIT_MEAN_STD,
};

fn default_lr() -> f64 {
    0.001
}
fn default_steps() -> usize {
    5000
}
fn default_one() -> usize {
    1
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Independent noise replications averaged per step.
    #[serde(default = "default_one")]
    pub mc_draws: usize,
    /// `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            steps: default_steps(),
            seed: 0,
            mc_draws: 1,
            batch_size: None,
            adam_betas: default_betas(),
            adam_eps: default_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("training.learning_rate must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("training.steps must be at least 1"));
        }
        if self.mc_draws == 0 {
            return Err(Error::config("training.mc_draws must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("training.batch_size must be at least 1"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("training.adam_betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("training.adam_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts without touching `params`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let step = state.t as usize + 1;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            step,
            reason: format!("non-finite gradient at coordinate {i}"),
            last_good: None,
        });
    }
    let (b1, b2) = cfg.adam_betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: Vec<f64>,
    pub loss: Vec<f64>,
    /// Zero throughout in frequentist mode.
    pub kl: Vec<f64>,
    pub checkpoint: Checkpoint,
    /// Encoder weights, VAE only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<Vec<f64>>,
    pub config: TrainConfig,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl TrainReport {
    pub fn posterior(&self) -> Result<GaussianPosterior> {
        self.checkpoint.posterior()
    }

    /// `step,objective,loss,kl` rows.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("step,objective,loss,kl\n");
        for i in 0..self.objective.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.objective[i],
                self.loss[i],
                self.kl[i]
            ));
        }
        s
    }
}

/// Initial variational state: a point mass in frequentist mode, otherwise the default Gaussian.
pub fn initial_state(
    model: &Model,
    spec: &ObjectiveSpec,
    rng: &mut ChaCha8Rng,
) -> (GaussianPosterior, Option<Vec<f64>>) {
    let q = GaussianPosterior::init(model.param_count(), rng);
    let q = if spec.frequentist {
        GaussianPosterior::point_mass(q.mu().to_vec())
    } else {
        q
    };
    let enc = match model {
        Model::Vae(v) => Some(
            standard_normal_vec(v.encoder_param_count(), rng)
                .into_iter()
                .map(|z| INIT_MEAN_STD * z)
                .collect(),
        ),
        _ => None,
    };
    (q, enc)
}

/// Minimizes the free energy selected by `spec` with a fixed number of Adam steps.
pub fn fit(
    model: &Model,
    spec: &ObjectiveSpec,
    prior: &GaussianPrior,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (q, enc) = initial_state(model, spec, &mut rng);
    fit_from(model, spec, prior, data, cfg, q, enc, &mut rng)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_from(
    model: &Model,
    spec: &ObjectiveSpec,
    prior: &GaussianPrior,
    data: &Dataset,
    cfg: &TrainConfig,
    mut q: GaussianPosterior,
    mut enc: Option<Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport> {
    cfg.validate()?;
    let objective = Objective::new(*spec, model, prior)?;
    model.check_data(data)?;
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    if q.dim() != model.param_count() {
        return Err(Error::contract(
            "initial posterior does not match the model",
        ));
    }
    if matches!(model, Model::Vae(_)) != enc.is_some() {
        return Err(Error::contract(
            "encoder weights are required for a VAE and only for a VAE",
        ));
    }
    let started = Instant::now();
    let n = data.len();
    let batch = cfg.batch_size.map(|b| b.min(n)).unwrap_or(n);
    let loss_scale = n as f64 / batch as f64;
    let d = q.dim();
    let frozen = q.is_point_mass();
    let n_enc = enc.as_ref().map_or(0, Vec::len);
    let n_params = d + if frozen { 0 } else { d } + n_enc;
    let mut adam = AdamState::new(n_params);

    let mut objective_log = Vec::with_capacity(cfg.steps);
    let mut loss_log = Vec::with_capacity(cfg.steps);
    let mut kl_log = Vec::with_capacity(cfg.steps);
    let reps = cfg.mc_draws as f64;

    for step in 1..=cfg.steps {
        let sub;
        let batch_data = if batch < n {
            let mut idx = sample_indices(rng, n, batch).into_vec();
            idx.sort_unstable();
            sub = data.subset(&idx);
            &sub
        } else {
            data
        };
        let mut grads = vec![0.0; n_params];
        let (mut obj_v, mut loss_v, mut kl_v) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.mc_draws {
            let draws = Draws {
                theta: (0..spec.m)
                    .map(|_| Tensor::vector(standard_normal_vec(d, rng)))
                    .collect(),
                latent: enc
                    .as_ref()
                    .map(|_| standard_normal_matrix(batch_data.len(), LATENT_DIM, rng)),
            };
            let mut tape = Tape::new();
            let qv = q.on_tape(&mut tape);
            let ev = enc.as_ref().map(|e| tape.param(Tensor::vector(e.clone())));
            let dv = DataOnTape::new(&mut tape, batch_data)?;
            let terms = objective.free_energy(&mut tape, &qv, ev, &dv, &draws, loss_scale)?;
            let total = tape.scalar_value(terms.total)?;
            if !total.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: format!("objective is {total}"),
                    last_good: Some(Box::new(q.checkpoint(prior))),
                });
            }
            obj_v += total / reps;
            loss_v += tape.scalar_value(terms.loss)? / reps;
            if let Some(k) = terms.kl {
                kl_v += tape.scalar_value(k)? / reps;
            }
            let g = tape.backward(terms.total)?;
            let mut at = 0;
            let mut add = |src: &Tensor| {
                for (dst, s) in grads[at..at + src.len()].iter_mut().zip(src.data()) {
                    *dst += s / reps;
                }
                at += src.len();
            };
            add(&g.wrt(qv.mu));
            if !frozen {
                add(&g.wrt(qv.rho));
            }
            if let Some(ev) = ev {
                add(&g.wrt(ev));
            }
        }

        let mut params = Vec::with_capacity(n_params);
        params.extend_from_slice(q.mu());
        if !frozen {
            params.extend_from_slice(q.rho());
        }
        if let Some(e) = &enc {
            params.extend_from_slice(e);
        }
        if let Err(Error::Training { reason, .. }) = adam_step(&mut params, &grads, &mut adam, cfg)
        {
            return Err(Error::Training {
                step,
                reason,
                last_good: Some(Box::new(q.checkpoint(prior))),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                step,
                reason: "parameters became non-finite".into(),
                last_good: Some(Box::new(q.checkpoint(prior))),
            });
        }
        q.mu_mut().copy_from_slice(&params[..d]);
        let mut at = d;
        if !frozen {
            q.rho_mut().copy_from_slice(&params[d..2 * d]);
            at = 2 * d;
        }
        if let Some(e) = enc.as_mut() {
            e.copy_from_slice(&params[at..]);
        }
        objective_log.push(obj_v);
        loss_log.push(loss_v);
        kl_log.push(kl_v);
    }

    Ok(TrainReport {
        objective: objective_log,
        loss: loss_log,
        kl: kl_log,
        checkpoint: q.checkpoint(prior),
        encoder: enc,
        config: cfg.clone(),
        wall_clock: started.elapsed(),
    })
}
