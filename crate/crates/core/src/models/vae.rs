use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gaussian_log_norm;
use super::mlp::Mlp;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 5;

/// Encoder and decoder over a fixed 5-dimensional latent with prior `N(0, I)`.
///
/// The encoder maps `x` to `2·LATENT_DIM` outputs: means, then
/// pre-softplus standard deviations. The decoder mean is linear in its last
/// layer and the decoder likelihood is `N(x | μ_dec(h), variance·I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    encoder: Mlp,
    decoder: Mlp,
    decoder_variance: f64,
}

impl Vae {
    pub fn new(input_dim: usize, hidden: &[usize], decoder_variance: f64) -> Result<Self> {
        if !(decoder_variance > 0.0 && decoder_variance.is_finite()) {
            return Err(Error::config("decoder variance must be positive"));
        }
        let mut enc = vec![input_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * LATENT_DIM);
        let mut dec = vec![LATENT_DIM];
        dec.extend(hidden.iter().rev());
        dec.push(input_dim);
        Ok(Vae {
            encoder: Mlp::new(enc)?,
            decoder: Mlp::new(dec)?,
            decoder_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_variance(&self) -> f64 {
        self.decoder_variance
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.param_count()
    }

    /// Latent means and standard deviations, each `n × LATENT_DIM`.
    pub fn encode(&self, tape: &mut Tape, enc: Var, x: Var) -> Result<(Var, Var)> {
        let out = self.encoder.forward(tape, enc, x)?;
        let mu = tape.cols(out, 0, LATENT_DIM)?;
        let rho = tape.cols(out, LATENT_DIM, LATENT_DIM)?;
        let sigma = tape.softplus(rho);
        Ok((mu, sigma))
    }

    /// `h = μ + σ ⊙ ε` with caller-supplied `ε` of shape `n × LATENT_DIM`.
    pub fn reparameterize(
        &self,
        tape: &mut Tape,
        mu: Var,
        sigma: Var,
        eps: &Tensor,
    ) -> Result<Var> {
        let e = tape.constant(eps.clone());
        let noise = tape.mul(sigma, e)?;
        tape.add(mu, noise)
    }

    /// `log N(x | μ_dec(h), variance·I)` per row.
    pub fn decoder_log_prob(&self, tape: &mut Tape, dec: Var, h: Var, x: Var) -> Result<Var> {
        let mean = self.decoder.forward(tape, dec, h)?;
        let r = tape.sub(x, mean)?;
        let r2 = tape.square(r);
        let ss = tape.sum_axis(r2, 1)?;
        let q = tape.scale(ss, -0.5 / self.decoder_variance);
        Ok(tape.add_scalar(
            q,
            gaussian_log_norm(self.input_dim(), self.decoder_variance),
        ))
    }

    /// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))` per row.
    pub fn encoder_kl(&self, tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
        let s2 = tape.square(sigma);
        let m2 = tape.square(mu);
        let a = tape.add(s2, m2)?;
        let a = tape.scale(a, 0.5);
        let ls = tape.log_clamped(sigma);
        let per = tape.sub(a, ls)?;
        let row = tape.sum_axis(per, 1)?;
        Ok(tape.add_scalar(row, -0.5 * LATENT_DIM as f64))
    }

    /// One-draw estimate of the expected reconstruction log-likelihood, and the encoder KL.
    pub fn reconstruction_terms(
        &self,
        tape: &mut Tape,
        enc: Var,
        dec: Var,
        x: Var,
        eps: &Tensor,
    ) -> Result<(Var, Var)> {
        let (mu, sigma) = self.encode(tape, enc, x)?;
        let h = self.reparameterize(tape, mu, sigma, eps)?;
        let ll = self.decoder_log_prob(tape, dec, h, x)?;
        let kl = self.encoder_kl(tape, mu, sigma)?;
        Ok((ll, kl))
    }

    pub fn decode_values(&self, dec: &[f64], h: &Tensor) -> Result<Tensor> {
        self.decoder.forward_values(dec, h)
    }

    /// Draws `x ~ p(x | h, θ_d)` with `h ~ N(0, I)`.
    pub fn generate<R: Rng + ?Sized>(&self, dec: &[f64], n: usize, rng: &mut R) -> Result<Tensor> {
        let h = standard_normal_matrix(n, LATENT_DIM, rng);
        let mut mean = self.decode_values(dec, &h)?;
        let sd = self.decoder_variance.sqrt();
        for v in mean.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
        Ok(mean)
    }

    /// `log p(x | h, θ_d)` for every row of `x` against every row of `h` (`n × L`).
    pub fn decoder_log_prob_values(
        &self,
        dec: &[f64],
        h: &Tensor,
        x: &Tensor,
    ) -> Result<Vec<Vec<f64>>> {
        let means = self.decode_values(dec, h)?;
        let d = self.input_dim();
        if x.row_len() != d {
            return Err(Error::ShapeMismatch {
                op: "decoder log prob",
                left: x.shape().to_vec(),
                right: vec![d],
            });
        }
        let c = gaussian_log_norm(d, self.decoder_variance);
        Ok((0..x.rows())
            .map(|i| {
                let xi = x.row(i);
                (0..means.rows())
                    .map(|j| {
                        let ss: f64 = xi
                            .iter()
                            .zip(means.row(j))
                            .map(|(a, b)| (a - b).powi(2))
                            .sum();
                        c - 0.5 * ss / self.decoder_variance
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}
