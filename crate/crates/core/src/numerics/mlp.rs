use serde::{Deserialize, Serialize};

use super::{Matrix, Parameters, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer computing `x · weight + bias`; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(input, output, |_, _| rng.uniform_range(-limit, limit)),
            bias: vec![0.0; output],
        }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weight)?;
        z.add_row_vector(&self.bias)?;
        Ok(z)
    }
}

/// Feed-forward network: hidden layers use their activation, the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    activations: Vec<Activation>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("an Mlp has at least one layer")
    }

    pub fn into_output(mut self) -> Matrix {
        self.post.pop().expect("an Mlp has at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// Ordered like [`Parameters::tensors`]: weight, bias per layer.
    pub params: Vec<Vec<f64>>,
    pub input: Matrix,
    /// Gradient w.r.t. each hidden layer's pre-activation, which is also the
    /// gradient w.r.t. any term injected there.
    pub hidden_pre: Vec<Matrix>,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`, Glorot-uniform initialized from `rng`.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Ok(Self {
            layers,
            activations: vec![activation; widths.len() - 2],
        })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layers,
            activations: vec![activation; widths.len() - 2],
        })
    }

    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an Mlp needs at least one layer".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::Config(format!(
                "{} layers need {} hidden activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::dim("Mlp layer bias", l.out_dim(), l.bias.len()));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::dim("Mlp layer chain", layers[i - 1].out_dim(), l.in_dim()));
            }
        }
        Ok(Self { layers, activations })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer widths {widths:?}: need at least input and output, all nonzero"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Dense::out_dim));
        w
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::out_dim)
            .collect()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(batch, None)?.into_output())
    }

    /// Forward pass that keeps intermediates. `inject`, if given, holds one
    /// `rows × width` matrix per hidden layer, added to that layer's
    /// pre-activation.
    pub fn forward_cached(&self, batch: &Matrix, inject: Option<&[Matrix]>) -> Result<MlpCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::dim(
                "mlp_forward",
                format!("batch with {} cols", self.input_dim()),
                format!("{}x{}", batch.rows(), batch.cols()),
            ));
        }
        if let Some(inj) = inject {
            if inj.len() != self.activations.len() {
                return Err(Error::dim("mlp_forward injections", self.activations.len(), inj.len()));
            }
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let x = if k == 0 { batch } else { &post[k - 1] };
            let mut z = layer.forward(x)?;
            if let Some(act) = self.activations.get(k) {
                if let Some(inj) = inject {
                    z.add_assign(&inj[k])?;
                }
                let a = z.map(|v| act.apply(v));
                pre.push(z);
                post.push(a);
            } else {
                pre.push(Matrix::zeros(0, 0));
                post.push(z);
            }
        }
        Ok(MlpCache {
            input: batch.clone(),
            pre,
            post,
        })
    }

    /// Exact reverse-mode gradients given `upstream = ∂L/∂output`.
    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix) -> Result<MlpGrads> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::dim(
                "mlp_backward",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let n_layers = self.layers.len();
        let mut params = vec![Vec::new(); 2 * n_layers];
        let mut hidden_pre = vec![Matrix::zeros(0, 0); n_layers - 1];
        let mut delta = upstream.clone();
        for k in (0..n_layers).rev() {
            if let Some(act) = self.activations.get(k) {
                // delta currently holds ∂L/∂a_k; turn it into ∂L/∂z_k
                let z = &cache.pre[k];
                let a = &cache.post[k];
                for ((d, &zv), &av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                    *d *= act.derivative(zv, av);
                }
                hidden_pre[k] = delta.clone();
            }
            let x = if k == 0 { &cache.input } else { &cache.post[k - 1] };
            params[2 * k] = x.t_matmul(&delta)?.into_vec();
            params[2 * k + 1] = delta.col_sums();
            delta = delta.matmul_t(&self.layers[k].weight)?;
        }
        Ok(MlpGrads {
            params,
            input: delta,
            hidden_pre,
        })
    }

    /// Forward then backward in one call.
    pub fn gradients(&self, batch: &Matrix, upstream: &Matrix) -> Result<MlpGrads> {
        let cache = self.forward_cached(batch, None)?;
        self.backward(&cache, upstream)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
