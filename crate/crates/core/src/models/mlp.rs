use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

pub const ELU_ALPHA: f64 = 1.0;

/// Dense network with ELU hidden activations and a linear output layer.
///
/// Parameters live in one flat vector, layer by layer: the `in × out`
/// weight matrix (row-major) followed by the `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    input: usize,
    output: usize,
    weight_at: usize,
    bias_at: usize,
}

impl Mlp {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!(
                "layer widths need at least input and output and no zero entries, got {widths:?}"
            )));
        }
        Ok(Mlp { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut at = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = Layer {
                    input: w[0],
                    output: w[1],
                    weight_at: at,
                    bias_at: at + w[0] * w[1],
                };
                at += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    fn check_theta(&self, len: usize) -> Result<()> {
        if len != self.param_count() {
            return Err(Error::contract(format!(
                "parameter vector has length {len}, network {:?} needs {}",
                self.widths,
                self.param_count()
            )));
        }
        Ok(())
    }

    /// `x` is `n × input_dim`; returns `n × output_dim`.
    pub fn forward(&self, tape: &mut Tape, theta: Var, x: Var) -> Result<Var> {
        self.check_theta(tape.value(theta).len())?;
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x;
        for (i, l) in layers.iter().enumerate() {
            let w = tape.slice(theta, l.weight_at, &[l.input, l.output])?;
            let b = tape.slice(theta, l.bias_at, &[l.output])?;
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = if i == last { z } else { tape.elu(z, ELU_ALPHA) };
        }
        Ok(h)
    }

    /// Forward pass on plain values.
    pub fn forward_values(&self, theta: &[f64], x: &Tensor) -> Result<Tensor> {
        self.check_theta(theta.len())?;
        if x.rank() != 2 || x.row_len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp forward",
                left: x.shape().to_vec(),
                right: vec![self.input_dim()],
            });
        }
        let n = x.rows();
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut h = x.data().to_vec();
        for (i, l) in layers.iter().enumerate() {
            let w = &theta[l.weight_at..l.weight_at + l.input * l.output];
            let b = &theta[l.bias_at..l.bias_at + l.output];
            let mut z = matmul_raw(&h, w, n, l.input, l.output);
            for row in z.chunks_mut(l.output) {
                for (v, bb) in row.iter_mut().zip(b) {
                    *v += bb;
                    if i != last && *v <= 0.0 {
                        *v = ELU_ALPHA * v.exp_m1();
                    }
                }
            }
            h = z;
        }
        Tensor::matrix(n, self.output_dim(), h)
    }

    /// Per-layer `(weight, bias)` tensors.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<(Tensor, Tensor)>> {
        self.check_theta(theta.len())?;
        self.layers()
            .iter()
            .map(|l| {
                let w = theta[l.weight_at..l.weight_at + l.input * l.output].to_vec();
                let b = theta[l.bias_at..l.bias_at + l.output].to_vec();
                Ok((Tensor::matrix(l.input, l.output, w)?, Tensor::vector(b)))
            })
            .collect()
    }

    pub fn flatten(&self, layers: &[(Tensor, Tensor)]) -> Result<Vec<f64>> {
        let spec = self.layers();
        if layers.len() != spec.len() {
            return Err(Error::contract("layer count mismatch"));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (l, (w, b)) in spec.iter().zip(layers) {
            if w.shape() != [l.input, l.output] || b.shape() != [l.output] {
                return Err(Error::ShapeMismatch {
                    op: "flatten",
                    left: w.shape().to_vec(),
                    right: vec![l.input, l.output],
                });
            }
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        Ok(out)
    }
}
