//! Check routines shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robayes::autodiff::Tape;
use robayes::data::Dataset;
use robayes::metrics::{self, ReliabilityDiagram};
use robayes::models::vae::{standard_normal_matrix, LATENT_DIM};
use robayes::models::{DataOnTape, Model, ModelFamily, ModelSpec};
use robayes::objectives::{
    linspace, mt_loss_from_probs, mt_training_loss, t_log_loss, tempered_posterior_1d, Draws,
    LossFamily, Objective, ObjectiveSpec,
};
use robayes::variational::{kl_to_prior, kl_value, softplus_inv, GaussianPosterior, GaussianPrior};
use robayes::Tensor;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            name: name.into(),
            ok,
            detail: detail.into(),
        }
    }

    fn failed(name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Outcome::new(name, false, format!("error: {err}"))
    }
}

pub fn close(name: &str, got: f64, want: f64, tol: f64) -> Outcome {
    let ok = (got - want).abs() <= tol;
    Outcome::new(
        name,
        ok,
        format!("got {got:.15}, want {want:.15}, tol {tol:e}"),
    )
}

fn from<T>(name: &str, r: robayes::Result<T>, f: impl FnOnce(T) -> Outcome) -> Outcome {
    match r {
        Ok(v) => f(v),
        Err(e) => Outcome::failed(name, e),
    }
}

/// Panics with every failing outcome listed.
pub fn assert_all(outcomes: &[Outcome]) {
    let bad: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.ok)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(bad.is_empty(), "failing checks:\n{}", bad.join("\n"));
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(n: usize, scale: f64, shift: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| shift + scale * r.sample::<f64, _>(StandardNormal))
        .collect()
}

fn location_model(variance: f64) -> Model {
    ModelSpec {
        family: ModelFamily::GaussianLocation,
        layer_widths: vec![],
        fixed_variance: Some(variance),
        latent_dim: None,
    }
    .build()
    .expect("valid location model")
}

fn column(xs: &[f64]) -> Dataset {
    Dataset::unlabeled(Tensor::matrix(xs.len(), 1, xs.to_vec()).unwrap()).unwrap()
}

fn kl_on_tape(mu: f64, sigma: f64, prior: &GaussianPrior) -> robayes::Result<f64> {
    let q = GaussianPosterior::new(vec![mu], vec![softplus_inv(sigma)])?;
    let mut tape = Tape::new();
    let qv = q.on_tape(&mut tape);
    let kl = kl_to_prior(&mut tape, &qv, prior)?;
    tape.scalar_value(kl)
}

/// Closed-form examples for the KL, t-loss, training loss, calibration and sample metrics.
pub fn oracle_checks() -> Vec<Outcome> {
    let mut out = Vec::new();
    let std_prior = GaussianPrior::standard();

    out.push(from(
        "kl q=N(1,1) p=N(0,1)",
        kl_on_tape(1.0, 1.0, &std_prior),
        |v| close("kl q=N(1,1) p=N(0,1)", v, 0.5, 1e-9),
    ));
    out.push(from(
        "kl q=N(0,e) p=N(0,1)",
        kl_on_tape(0.0, E.sqrt(), &std_prior),
        |v| close("kl q=N(0,e) p=N(0,1)", v, (E - 2.0) / 2.0, 1e-9),
    ));
    out.push(from(
        "kl plain value",
        kl_value(&[0.0], &[E.sqrt()], &std_prior),
        |v| close("kl plain value", v, (E - 2.0) / 2.0, 1e-9),
    ));

    let tl = |name: &str, p: f64, t: f64, want: f64| {
        from(name, t_log_loss(p, t), |v| close(name, v, want, 1e-9))
    };
    out.push(tl("t-loss p=1 t=0.3", 1.0, 0.3, 0.0));
    out.push(tl("t-loss p=1/e t=1", (-1.0f64).exp(), 1.0, 1.0));
    out.push(tl("t-loss p=0.25 t=0.5", 0.25, 0.5, 1.0));
    out.push(tl("t-loss p=1e-300 t=0.5", 1e-300, 0.5, 2.0));
    out.push(Outcome::new(
        "t-loss rejects t=1.5",
        t_log_loss(0.5, 1.5).is_err(),
        "t outside [0, 1] must be a contract error",
    ));

    let ml = |name: &str, probs: Vec<Vec<f64>>, t: f64, want: f64| {
        from(name, mt_loss_from_probs(&probs, t), |v| {
            close(name, v, want, 1e-9)
        })
    };
    out.push(ml(
        "mt-loss m=1 t=1 p=e^-2",
        vec![vec![(-2.0f64).exp()]],
        1.0,
        2.0,
    ));
    out.push(ml(
        "mt-loss m=2 t=1",
        vec![vec![0.2], vec![0.4]],
        1.0,
        -(0.3f64.ln()),
    ));
    out.push(ml(
        "mt-loss m=2 t=0.5",
        vec![vec![0.2], vec![0.4]],
        0.5,
        -2.0 * (0.3f64.sqrt() - 1.0),
    ));
    out.push(mt_loss_on_tape());

    let ece = |name: &str, conf: &[f64], correct: &[bool], want: f64| {
        from(
            name,
            ReliabilityDiagram::from_confidences(conf, correct, 10),
            |d| close(name, d.ece(), want, 1e-9),
        )
    };
    out.push(ece(
        "ece calibrated",
        &[0.75, 0.75, 0.75, 0.75],
        &[true, true, true, false],
        0.0,
    ));
    out.push(ece(
        "ece one bin conf 0.9 acc 0.5",
        &[0.9, 0.9],
        &[true, false],
        0.4,
    ));
    out.push(ece(
        "ece bins {1,3} gaps {0.2,0}",
        &[0.2, 1.0, 1.0, 1.0],
        &[false, true, true, true],
        0.05,
    ));

    let au = |name: &str, id: &[f64], ood: &[f64], want: f64| {
        from(name, metrics::auroc(id, ood), |v| {
            close(name, v, want, 1e-9)
        })
    };
    out.push(au("auroc separated", &[0.9, 0.8], &[0.1, 0.2], 1.0));
    out.push(au(
        "auroc identical",
        &[0.3, 0.6, 0.9],
        &[0.3, 0.6, 0.9],
        0.5,
    ));
    out.push(au("auroc 3 of 4", &[0.9, 0.8], &[0.85, 0.1], 0.75));

    let mm = |name: &str, x: Vec<f64>, y: Vec<f64>, dim: usize, want: f64| {
        let xt = Tensor::matrix(x.len() / dim, dim, x).unwrap();
        let yt = Tensor::matrix(y.len() / dim, dim, y).unwrap();
        from(name, metrics::mmd(&xt, &yt), |v| close(name, v, want, 1e-9))
    };
    out.push(mm(
        "mmd X=Y",
        vec![0.0, 1.0, 2.0, 0.5],
        vec![2.0, 0.5, 0.0, 1.0],
        2,
        0.0,
    ));
    let d: f64 = 1.3;
    out.push(mm(
        "mmd singletons at distance 1.3",
        vec![0.0, 0.0],
        vec![0.5, 1.2],
        2,
        2.0 / (2.0 * PI).sqrt() * (1.0 - (-d * d / 2.0).exp()),
    ));
    out.push(mm(
        "mmd coincident singletons",
        vec![0.4],
        vec![0.4],
        1,
        0.0,
    ));

    let errs = Tensor::matrix(2, 1, vec![3.0, -4.0]).unwrap();
    let zero = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
    out.push(from(
        "mse errors {3,4}",
        metrics::mse(&errs, &zero, false),
        |v| close("mse errors {3,4}", v, 3.5, 1e-9),
    ));
    out.push(from(
        "nll {e^-1, e^-3}",
        metrics::nll(&[(-1.0f64).exp(), (-3.0f64).exp()]),
        |v| close("nll {e^-1, e^-3}", v, 2.0, 1e-9),
    ));

    out.extend(conjugate_posterior_checks());
    out
}

/// Tape-based training loss on a one-point location model with hand-set probabilities.
fn mt_loss_on_tape() -> Outcome {
    let name = "mt-loss on tape m=2 t=0.5";
    let model = location_model(0.25);
    let data = column(&[0.0]);
    let c = (2.0 * PI * 0.25).sqrt();
    // θ with p(0 | θ) = 0.2 and 0.4.
    let th = |p: f64| (-2.0 * 0.25 * (p * c).ln()).sqrt();
    let r = (|| {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![th(0.2)]));
        let b = tape.constant(Tensor::vector(vec![th(0.4)]));
        let d = DataOnTape::new(&mut tape, &data)?;
        let l = mt_training_loss(&mut tape, &model, &[a, b], &d, 0.5)?;
        tape.scalar_value(l)
    })();
    from(name, r, |v| {
        close(name, v, -2.0 * (0.3f64.sqrt() - 1.0), 1e-9)
    })
}

/// The quadrature posterior against the conjugate closed form (β = 1 and β = 0.5).
pub fn conjugate_posterior_checks() -> Vec<Outcome> {
    let xs = [0.48, 0.55, 0.79, 0.52, 0.81, 0.46];
    let (m0, v0, s2) = (-5.0, 5.0, 0.25);
    let model = match location_model(s2) {
        Model::GaussianLocation(g) => g,
        _ => unreachable!(),
    };
    let prior = GaussianPrior::isotropic(m0, v0).unwrap();
    let data = column(&xs);
    let grid = linspace(-4.0, 5.0, 20001);
    let mut out = Vec::new();
    for beta in [1.0, 0.5] {
        let prec = 1.0 / v0 + beta * xs.len() as f64 / s2;
        let var = 1.0 / prec;
        let mean = var * (m0 / v0 + beta * xs.iter().sum::<f64>() / s2);
        let name = format!("tempered posterior beta={beta}");
        match tempered_posterior_1d(&model, &prior, &data, beta, &grid) {
            Ok(tp) => {
                out.push(close(&format!("{name} mean"), tp.mean(), mean, 1e-6));
                out.push(close(&format!("{name} variance"), tp.variance(), var, 1e-6));
                out.push(Outcome::new(
                    format!("{name} grid"),
                    tp.warning.is_none(),
                    "grid covers the mass",
                ));
            }
            Err(e) => out.push(Outcome::failed(name, e)),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Gradients

/// One random objective instance with fixed noise draws.
pub struct Instance {
    pub label: String,
    pub model: Model,
    pub data: Dataset,
    pub spec: ObjectiveSpec,
    pub prior: GaussianPrior,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub enc: Option<Vec<f64>>,
    pub draws: Draws,
    pub loss_scale: f64,
}

pub struct Evaluated {
    pub value: f64,
    pub loss: f64,
    pub kl: Option<f64>,
    pub d_mu: Vec<f64>,
    pub d_rho: Vec<f64>,
    pub d_enc: Option<Vec<f64>>,
}

impl Instance {
    pub fn posterior(&self, mu: &[f64], rho: &[f64]) -> robayes::Result<GaussianPosterior> {
        if self.spec.frequentist {
            Ok(GaussianPosterior::point_mass(mu.to_vec()))
        } else {
            GaussianPosterior::new(mu.to_vec(), rho.to_vec())
        }
    }

    pub fn eval_at(
        &self,
        mu: &[f64],
        rho: &[f64],
        enc: Option<&[f64]>,
    ) -> robayes::Result<Evaluated> {
        let q = self.posterior(mu, rho)?;
        let mut tape = Tape::new();
        let qv = q.on_tape(&mut tape);
        let ev = enc.map(|e| tape.param(Tensor::vector(e.to_vec())));
        let data = DataOnTape::new(&mut tape, &self.data)?;
        let obj = Objective::new(self.spec, &self.model, &self.prior)?;
        let terms = obj.free_energy(&mut tape, &qv, ev, &data, &self.draws, self.loss_scale)?;
        let g = tape.backward(terms.total)?;
        Ok(Evaluated {
            value: tape.scalar_value(terms.total)?,
            loss: tape.scalar_value(terms.loss)?,
            kl: terms.kl.map(|k| tape.scalar_value(k)).transpose()?,
            d_mu: g.wrt(qv.mu).data().to_vec(),
            d_rho: g.wrt(qv.rho).data().to_vec(),
            d_enc: ev.map(|v| g.wrt(v).data().to_vec()),
        })
    }

    pub fn eval(&self) -> robayes::Result<Evaluated> {
        self.eval_at(&self.mu, &self.rho, self.enc.as_deref())
    }

    fn value_at(&self, mu: &[f64], rho: &[f64], enc: Option<&[f64]>) -> f64 {
        self.eval_at(mu, rho, enc)
            .expect("finite-difference probe")
            .value
    }
}

/// `‖a - b‖ / ‖b‖`, or the absolute error when `b` vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 1e-12 {
        diff / norm
    } else {
        diff
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let up = f(&x);
            x[i] = x0 - h;
            let down = f(&x);
            x[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Finite-difference check of every parameter block of one instance.
pub fn gradient_check(inst: &Instance) -> Vec<Outcome> {
    let e = match inst.eval() {
        Ok(e) => e,
        Err(err) => return vec![Outcome::failed(&inst.label, err)],
    };
    let enc = inst.enc.as_deref();
    let mut out = Vec::new();
    let mut push = |block: &str, analytic: &[f64], numeric: &[f64]| {
        let r = rel_err(analytic, numeric);
        out.push(Outcome::new(
            format!("{} d/d{block}", inst.label),
            r < FD_TOL,
            format!("relative error {r:.3e} over {} coordinates", numeric.len()),
        ));
    };
    let n_mu = central_diff(|m| inst.value_at(m, &inst.rho, enc), &inst.mu, FD_STEP);
    push("mu", &e.d_mu, &n_mu);
    if !inst.spec.frequentist {
        let n_rho = central_diff(|r| inst.value_at(&inst.mu, r, enc), &inst.rho, FD_STEP);
        push("rho", &e.d_rho, &n_rho);
    }
    if let (Some(enc0), Some(d_enc)) = (enc, e.d_enc.as_ref()) {
        let n_enc = central_diff(
            |x| inst.value_at(&inst.mu, &inst.rho, Some(x)),
            enc0,
            FD_STEP,
        );
        push("encoder", d_enc, &n_enc);
    }
    out
}

fn draws_for(m: usize, d: usize, latent_rows: Option<usize>, r: &mut ChaCha8Rng) -> Draws {
    Draws {
        theta: (0..m)
            .map(|_| Tensor::vector(normal_vec(d, 1.0, 0.0, r)))
            .collect(),
        latent: latent_rows.map(|n| standard_normal_matrix(n, LATENT_DIM, r)),
    }
}

/// Random small instances covering every model family, several `(m, t)`,
/// frequentist mode and a minibatch loss scale.
pub fn gradient_instances() -> Vec<Instance> {
    let mut r = rng(2024);
    let mut out = Vec::new();
    let grid: [(usize, f64, bool, f64); 6] = [
        (1, 1.0, false, 1.0),
        (3, 1.0, false, 1.0),
        (1, 0.5, false, 1.0),
        (3, 0.7, false, 2.5),
        (2, 0.0, false, 1.0),
        (1, 0.8, true, 1.0),
    ];

    for &(m, t, freq, scale) in &grid {
        let xs = normal_vec(6, 0.4, 0.5, &mut r);
        let model = location_model(0.25);
        let mu = normal_vec(1, 0.3, 0.4, &mut r);
        let rho = normal_vec(1, 0.2, -1.5, &mut r);
        out.push(Instance {
            label: format!("location (m={m}, t={t}, freq={freq})"),
            model,
            data: column(&xs),
            spec: ObjectiveSpec::new(m, t, 2.0, LossFamily::Density, freq).unwrap(),
            prior: GaussianPrior::isotropic(-1.0, 3.0).unwrap(),
            mu,
            rho,
            enc: None,
            draws: draws_for(m, 1, None, &mut r),
            loss_scale: scale,
        });
    }

    for &(m, t, freq, scale) in &grid {
        let (n, din, k) = (5, 3, 3);
        let model = ModelSpec {
            family: ModelFamily::MlpClassifier,
            layer_widths: vec![din, 4, k],
            fixed_variance: None,
            latent_dim: None,
        }
        .build()
        .unwrap();
        let x = Tensor::matrix(n, din, normal_vec(n * din, 1.0, 0.0, &mut r)).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let d = model.param_count();
        out.push(Instance {
            label: format!("classifier (m={m}, t={t}, freq={freq})"),
            model,
            data: Dataset::classification(x, labels, k).unwrap(),
            spec: ObjectiveSpec::new(m, t, 5.0, LossFamily::Discriminative, freq).unwrap(),
            prior: GaussianPrior::standard(),
            mu: normal_vec(d, 0.5, 0.0, &mut r),
            rho: normal_vec(d, 0.2, -2.0, &mut r),
            enc: None,
            draws: draws_for(m, d, None, &mut r),
            loss_scale: scale,
        });
    }

    for &(m, t, freq, scale) in &grid {
        let (n, din, dout) = (4, 3, 2);
        let model = ModelSpec {
            family: ModelFamily::MlpRegressor,
            layer_widths: vec![din, 4, dout],
            fixed_variance: Some(0.5),
            latent_dim: None,
        }
        .build()
        .unwrap();
        let x = Tensor::matrix(n, din, normal_vec(n * din, 1.0, 0.0, &mut r)).unwrap();
        let y = Tensor::matrix(n, dout, normal_vec(n * dout, 0.5, 0.0, &mut r)).unwrap();
        let d = model.param_count();
        out.push(Instance {
            label: format!("regressor (m={m}, t={t}, freq={freq})"),
            model,
            data: Dataset::regression(x, y).unwrap(),
            spec: ObjectiveSpec::new(m, t, 5.0, LossFamily::Discriminative, freq).unwrap(),
            prior: GaussianPrior::standard(),
            mu: normal_vec(d, 0.4, 0.0, &mut r),
            rho: normal_vec(d, 0.2, -2.0, &mut r),
            enc: None,
            draws: draws_for(m, d, None, &mut r),
            loss_scale: scale,
        });
    }

    for &(m, t, freq, scale) in &grid {
        let (n, dx) = (3, 4);
        let model = ModelSpec {
            family: ModelFamily::Vae,
            layer_widths: vec![dx, 3],
            fixed_variance: Some(0.5),
            latent_dim: Some(LATENT_DIM),
        }
        .build()
        .unwrap();
        let Model::Vae(v) = &model else {
            unreachable!()
        };
        let d = v.decoder_param_count();
        let de = v.encoder_param_count();
        let x = Tensor::matrix(n, dx, normal_vec(n * dx, 0.5, 0.0, &mut r)).unwrap();
        out.push(Instance {
            label: format!("vae (m={m}, t={t}, freq={freq})"),
            model,
            data: Dataset::unlabeled(x).unwrap(),
            spec: ObjectiveSpec::new(m, t, 5.0, LossFamily::Vae, freq).unwrap(),
            prior: GaussianPrior::standard(),
            mu: normal_vec(d, 0.4, 0.0, &mut r),
            rho: normal_vec(d, 0.2, -2.0, &mut r),
            enc: Some(normal_vec(de, 0.4, 0.0, &mut r)),
            draws: draws_for(m, d, Some(n), &mut r),
            loss_scale: scale,
        });
    }
    out
}

pub fn gradient_checks() -> Vec<Outcome> {
    gradient_instances()
        .iter()
        .flat_map(gradient_check)
        .collect()
}

// ---------------------------------------------------------------------------
// Reduction identities

pub const IDENTITY_TOL: f64 = 1e-12;

fn rel_close(name: &str, got: f64, want: f64) -> Outcome {
    let tol = IDENTITY_TOL * want.abs().max(1.0);
    Outcome::new(
        name,
        (got - want).abs() <= tol,
        format!(
            "got {got:.17e}, want {want:.17e}, |diff| {:.3e}",
            (got - want).abs()
        ),
    )
}

/// Free energy of an instance evaluated with plain arithmetic from per-point
/// likelihoods, following the standard, m-sample and t-free energies.
fn direct_free_energy(inst: &Instance) -> robayes::Result<f64> {
    let q = inst.posterior(&inst.mu, &inst.rho)?;
    let thetas: Vec<Vec<f64>> = inst
        .draws
        .theta
        .iter()
        .map(|e| q.draw(e.data()))
        .collect::<robayes::Result<_>>()?;
    let per: Vec<Vec<f64>> = thetas
        .iter()
        .map(|th| inst.model.log_prob_values(th, &inst.data))
        .collect::<robayes::Result<_>>()?;
    let m = thetas.len() as f64;
    let t = inst.spec.t;
    let mut loss = 0.0;
    for z in 0..inst.data.len() {
        let loss_z = if m == 1.0 && t == 1.0 {
            // standard free energy: training log-loss at the single draw
            -per[0][z]
        } else if t == 1.0 {
            // m-sample: log of the ensemble average
            let mx = per.iter().map(|p| p[z]).fold(f64::NEG_INFINITY, f64::max);
            -(mx + (per.iter().map(|p| (p[z] - mx).exp()).sum::<f64>() / m).ln())
        } else {
            let mx = per.iter().map(|p| p[z]).fold(f64::NEG_INFINITY, f64::max);
            let l = mx + (per.iter().map(|p| (p[z] - mx).exp()).sum::<f64>() / m).ln();
            -(((1.0 - t) * l).exp() - 1.0) / (1.0 - t)
        };
        loss += loss_z;
    }
    let loss = inst.loss_scale * loss;
    if inst.spec.frequentist {
        return Ok(loss);
    }
    let kl = kl_value(q.mu(), &q.sigma(), &inst.prior)?;
    Ok(loss + m / inst.spec.beta * kl)
}

/// `(1,1)`, `(m,1)` and `(1,t)` free energies against direct evaluation on shared inputs.
pub fn reduction_checks() -> Vec<Outcome> {
    let mut out = Vec::new();
    for inst in gradient_instances() {
        if inst.spec.family == LossFamily::Vae {
            continue;
        }
        let form = match (inst.spec.m, inst.spec.t == 1.0) {
            (1, true) => "standard",
            (_, true) => "m-sample",
            (1, false) => "t",
            _ => "(m,t)",
        };
        let name = format!("{form} free energy, {}", inst.label);
        let got = inst.eval().map(|e| e.value);
        match (got, direct_free_energy(&inst)) {
            (Ok(g), Ok(w)) => out.push(rel_close(&name, g, w)),
            (Err(e), _) | (_, Err(e)) => out.push(Outcome::failed(name, e)),
        }
    }
    out.push(point_mass_erm_check());
    out.push(beta_infinity_check());
    out
}

/// Point-mass q at θ*, m = t = 1, frequentist: equals the summed log-loss at θ*.
fn point_mass_erm_check() -> Outcome {
    let name = "frequentist point mass equals training log-loss";
    let xs = [0.3, 0.9, 0.55];
    let theta: f64 = 0.6;
    let s2 = 0.25;
    let want: f64 = xs
        .iter()
        .map(|x| 0.5 * (2.0 * PI * s2).ln() + (x - theta).powi(2) / (2.0 * s2))
        .sum();
    let inst = Instance {
        label: name.into(),
        model: location_model(s2),
        data: column(&xs),
        spec: ObjectiveSpec::new(1, 1.0, 1.0, LossFamily::Density, true).unwrap(),
        prior: GaussianPrior::standard(),
        mu: vec![theta],
        rho: vec![0.0],
        enc: None,
        draws: Draws {
            theta: vec![Tensor::vector(vec![0.7])],
            latent: None,
        },
        loss_scale: 1.0,
    };
    // σ = 1e-8 shifts θ by 7e-9; the loss moves by about |dL/dθ|·7e-9.
    from(name, inst.eval(), |e| close(name, e.value, want, 1e-7))
}

/// A huge β leaves the expected training loss alone.
fn beta_infinity_check() -> Outcome {
    let name = "beta to infinity drops the KL term";
    let mut inst = gradient_instances().remove(1);
    inst.spec =
        ObjectiveSpec::new(inst.spec.m, inst.spec.t, 1e300, inst.spec.family, false).unwrap();
    from(name, inst.eval(), |e| close(name, e.value, e.loss, 1e-12))
}

// ---------------------------------------------------------------------------
// Linear-Gaussian VAE oracles

/// Decoder `x = hW + b + noise` with no hidden layer, so `p(x) = N(b, WᵀW + s²I)`.
pub struct LinearVae {
    pub model: Model,
    pub dec: Vec<f64>,
    pub enc: Vec<f64>,
    pub dx: usize,
    pub s2: f64,
}

pub fn linear_vae(seed: u64) -> LinearVae {
    let dx = 3;
    let s2 = 0.3;
    let model = ModelSpec {
        family: ModelFamily::Vae,
        layer_widths: vec![dx],
        fixed_variance: Some(s2),
        latent_dim: None,
    }
    .build()
    .unwrap();
    let Model::Vae(v) = &model else {
        unreachable!()
    };
    let mut r = rng(seed);
    let dec = normal_vec(v.decoder_param_count(), 0.5, 0.0, &mut r);
    let enc = normal_vec(v.encoder_param_count(), 0.3, 0.0, &mut r);
    LinearVae {
        model,
        dec,
        enc,
        dx,
        s2,
    }
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                l[i * n + i] = (a[i * n + i] - s).sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    l
}

impl LinearVae {
    fn vae(&self) -> &robayes::models::vae::Vae {
        match &self.model {
            Model::Vae(v) => v,
            _ => unreachable!(),
        }
    }

    fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.dec[..LATENT_DIM * self.dx].to_vec();
        let b = self.dec[LATENT_DIM * self.dx..].to_vec();
        (w, b)
    }

    /// Exact `log p(x)` under the linear-Gaussian generative model.
    pub fn log_marginal(&self, x: &[f64]) -> f64 {
        let n = self.dx;
        let (w, b) = self.weights();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] = (0..LATENT_DIM).map(|k| w[k * n + i] * w[k * n + j]).sum();
            }
            cov[i * n + i] += self.s2;
        }
        let l = cholesky(&cov, n);
        let mut z = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * z[k]).sum();
            z[i] = (x[i] - b[i] - s) / l[i * n + i];
        }
        let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0;
        -0.5 * (n as f64 * (2.0 * PI).ln() + logdet + z.iter().map(|v| v * v).sum::<f64>())
    }

    /// Exact ELBO for the encoder's diagonal Gaussian q(h | x).
    pub fn elbo(&self, x: &[f64]) -> f64 {
        let n = self.dx;
        let (w, b) = self.weights();
        let xt = Tensor::matrix(1, n, x.to_vec()).unwrap();
        let out = self.vae().encoder().forward_values(&self.enc, &xt).unwrap();
        let mu = &out.data()[..LATENT_DIM];
        let sig: Vec<f64> = out.data()[LATENT_DIM..]
            .iter()
            .map(|&r| robayes::variational::softplus(r))
            .collect();
        let mut mean = b.clone();
        for (k, &m) in mu.iter().enumerate() {
            for i in 0..n {
                mean[i] += m * w[k * n + i];
            }
        }
        let sq: f64 = x.iter().zip(&mean).map(|(a, c)| (a - c).powi(2)).sum();
        let spread: f64 = (0..LATENT_DIM)
            .map(|k| sig[k].powi(2) * (0..n).map(|i| w[k * n + i].powi(2)).sum::<f64>())
            .sum();
        let rec = -0.5 * n as f64 * (2.0 * PI * self.s2).ln() - (sq + spread) / (2.0 * self.s2);
        let kl: f64 = (0..LATENT_DIM)
            .map(|k| 0.5 * (sig[k].powi(2) + mu[k].powi(2)) - sig[k].ln() - 0.5)
            .sum();
        rec - kl
    }

    /// Minus the library's frequentist (1,1) VAE loss at one latent draw.
    pub fn library_elbo_draw(&self, x: &[f64], eps: &Tensor) -> robayes::Result<f64> {
        let inst = Instance {
            label: "linear vae".into(),
            model: self.model.clone(),
            data: Dataset::unlabeled(Tensor::matrix(1, self.dx, x.to_vec())?)?,
            spec: ObjectiveSpec::new(1, 1.0, 1.0, LossFamily::Vae, true)?,
            prior: GaussianPrior::standard(),
            mu: self.dec.clone(),
            rho: vec![0.0; self.dec.len()],
            enc: Some(self.enc.clone()),
            draws: Draws {
                theta: vec![Tensor::vector(vec![0.0; self.dec.len()])],
                latent: Some(eps.clone()),
            },
            loss_scale: 1.0,
        };
        Ok(-inst.eval()?.value)
    }
}

/// ELBO ≤ log p(x) for a linear-Gaussian VAE, the library's one-draw ELBO is
/// unbiased for it, and the density score converges to the exact marginal.
pub fn vae_oracle_checks() -> Vec<Outcome> {
    let mut out = Vec::new();
    let lv = linear_vae(5);
    let mut r = rng(17);
    let points: Vec<Vec<f64>> = (0..4)
        .map(|_| normal_vec(lv.dx, 1.0, 0.0, &mut r))
        .collect();
    for (i, x) in points.iter().enumerate() {
        let lm = lv.log_marginal(x);
        let elbo = lv.elbo(x);
        out.push(Outcome::new(
            format!("linear vae point {i}: elbo <= log marginal"),
            elbo <= lm + 1e-12,
            format!("elbo {elbo:.6}, log p(x) {lm:.6}"),
        ));

        let draws = 4000;
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let eps = standard_normal_matrix(1, LATENT_DIM, &mut r);
            match lv.library_elbo_draw(x, &eps) {
                Ok(v) => vals.push(v),
                Err(e) => {
                    out.push(Outcome::failed(format!("linear vae point {i}"), e));
                    break;
                }
            }
        }
        if vals.len() == draws {
            let (mean, se) = mean_se(&vals);
            out.push(Outcome::new(
                format!("linear vae point {i}: one-draw loss is unbiased for the elbo"),
                (mean - elbo).abs() <= 4.0 * se,
                format!("MC {mean:.5} ± {se:.5}, exact {elbo:.5}"),
            ));
        }

        let latents = standard_normal_matrix(200_000, LATENT_DIM, &mut r);
        let xt = Tensor::matrix(1, lv.dx, x.clone()).unwrap();
        let score = metrics::model_density_log_score(
            lv.vae(),
            std::slice::from_ref(&lv.dec),
            &latents,
            &xt,
        );
        let weights: Vec<f64> = lv
            .vae()
            .decoder_log_prob_values(&lv.dec, &latents, &xt)
            .unwrap()[0]
            .iter()
            .map(|l| (l - lm).exp())
            .collect();
        let (_, se_ratio) = mean_se(&weights);
        out.push(from("density score", score, |s| {
            Outcome::new(
                format!("linear vae point {i}: density score matches log marginal"),
                (s[0] - lm).abs() <= 4.0 * se_ratio,
                format!(
                    "score {:.6}, exact {lm:.6}, 4 s.e. {:.2e}",
                    s[0],
                    4.0 * se_ratio
                ),
            )
        }));
    }

    // One datapoint with hand-set decoder outputs: the shared-latent (m,t) loss by hand.
    out.push(vae_hand_check());
    out
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two decoders with zero weights output their biases; the loss is the
/// t-log of the mixture of two Gaussians plus the encoder KL.
fn vae_hand_check() -> Outcome {
    let name = "vae (2, 0.5) loss on one point with hand-set decoders";
    let lv = linear_vae(9);
    let v = lv.vae();
    let d = v.decoder_param_count();
    let dx = lv.dx;
    let x = vec![0.2, -0.1, 0.4];
    let b1 = vec![0.0, 0.0, 0.0];
    let b2 = vec![0.5, -0.5, 0.5];
    let mut dec1 = vec![0.0; d];
    dec1[LATENT_DIM * dx..].copy_from_slice(&b1);
    let mut dec2 = vec![0.0; d];
    dec2[LATENT_DIM * dx..].copy_from_slice(&b2);
    // Encoder with zero weights and biases: mu = 0, sigma = softplus(0) = ln 2.
    let enc = vec![0.0; v.encoder_param_count()];
    let sig = 2f64.ln();
    let kl = LATENT_DIM as f64 * (0.5 * sig * sig - sig.ln() - 0.5);
    let lg = |b: &[f64]| {
        -0.5 * dx as f64 * (2.0 * PI * lv.s2).ln()
            - x.iter().zip(b).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / (2.0 * lv.s2)
    };
    let mix = 0.5 * (lg(&b1).exp() + lg(&b2).exp());
    let want = -2.0 * (mix.sqrt() - 1.0) + kl;

    // mu holds dec1; the second draw reaches dec2 through sigma·eps with sigma = 1.
    let mu = dec1.clone();
    let rho = vec![softplus_inv(1.0); d];
    let eps2: Vec<f64> = dec2.iter().zip(&dec1).map(|(a, b)| a - b).collect();
    let inst = Instance {
        label: name.into(),
        model: lv.model.clone(),
        data: Dataset::unlabeled(Tensor::matrix(1, dx, x.clone()).unwrap()).unwrap(),
        spec: ObjectiveSpec::new(2, 0.5, 1e300, LossFamily::Vae, false).unwrap(),
        prior: GaussianPrior::standard(),
        mu,
        rho,
        enc: Some(enc),
        draws: Draws {
            theta: vec![Tensor::vector(vec![0.0; d]), Tensor::vector(eps2)],
            latent: Some(Tensor::matrix(1, LATENT_DIM, vec![0.3, -1.0, 0.2, 0.0, 1.1]).unwrap()),
        },
        loss_scale: 1.0,
    };
    from(name, inst.eval(), |e| close(name, e.loss, want, 1e-9))
}
