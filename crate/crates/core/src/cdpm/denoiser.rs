use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, MlpCache, Parameters, Rng};

/// An ε-prediction model conditioned on a class label and a diffusion step.
///
/// Samplers and objectives are generic over this trait so analytic noise
/// predictors can be substituted for the trained network.
pub trait NoisePredictor {
    fn data_dim(&self) -> usize;
    fn classes(&self) -> usize;
    /// Predicted noise for each row of `x_t`, at per-row `labels` and `steps`.
    fn predict_eps(&self, x_t: &Matrix, labels: &[usize], steps: &[usize]) -> Result<Matrix>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.classes == 0 {
            return Err(Error::Config("denoiser needs data_dim > 0 and classes > 0".into()));
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding dimension must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("denoiser needs nonzero hidden widths".into()));
        }
        Ok(())
    }
}

/// MLP ε-predictor. The combined embedding (sinusoidal time embedding plus
/// learned label embedding) is concatenated to `x_t` at the input and, through
/// a learned projection per hidden layer, added to every hidden pre-activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDenoiser {
    config: DenoiserConfig,
    backbone: Mlp,
    label_embedding: Matrix,
    projections: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct DenoiserCache {
    embedding: Matrix,
    labels: Vec<usize>,
    mlp: MlpCache,
}

impl DenoiserCache {
    pub fn output(&self) -> &Matrix {
        self.mlp.output()
    }
}

/// Angular frequencies `10000^{-k/(half-1)}`, geometric from 1 down to 1e-4.
fn frequencies(embed_dim: usize) -> Vec<f64> {
    let half = embed_dim / 2;
    if half == 1 {
        return vec![1.0];
    }
    (0..half)
        .map(|k| (-(10_000f64.ln()) * k as f64 / (half - 1) as f64).exp())
        .collect()
}

/// Sinusoidal embedding `[sin(t·ω_k) …, cos(t·ω_k) …]`.
pub fn time_embedding(t: usize, embed_dim: usize) -> Vec<f64> {
    let freqs = frequencies(embed_dim);
    let mut e = Vec::with_capacity(embed_dim);
    e.extend(freqs.iter().map(|w| (t as f64 * w).sin()));
    e.extend(freqs.iter().map(|w| (t as f64 * w).cos()));
    e
}

impl ConditionalDenoiser {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.data_dim + config.embed_dim];
        widths.extend(&config.hidden);
        widths.push(config.data_dim);
        let backbone = Mlp::new(&widths, config.activation, rng)?;
        let glorot = |rows: usize, cols: usize, rng: &mut Rng| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-limit, limit))
        };
        let label_embedding = glorot(config.classes, config.embed_dim, rng);
        let projections = config
            .hidden
            .iter()
            .map(|&h| glorot(config.embed_dim, h, rng))
            .collect();
        Ok(Self {
            config,
            backbone,
            label_embedding,
            projections,
        })
    }

    pub(crate) fn from_parts(
        config: DenoiserConfig,
        backbone: Mlp,
        label_embedding: Matrix,
        projections: Vec<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.data_dim + config.embed_dim];
        widths.extend(&config.hidden);
        widths.push(config.data_dim);
        if backbone.widths() != widths {
            return Err(Error::dim(
                "denoiser backbone",
                format!("{widths:?}"),
                format!("{:?}", backbone.widths()),
            ));
        }
        if label_embedding.shape() != (config.classes, config.embed_dim) {
            return Err(Error::dim(
                "label embedding",
                format!("{}x{}", config.classes, config.embed_dim),
                format!("{}x{}", label_embedding.rows(), label_embedding.cols()),
            ));
        }
        if projections.len() != config.hidden.len()
            || projections
                .iter()
                .zip(&config.hidden)
                .any(|(p, &h)| p.shape() != (config.embed_dim, h))
        {
            return Err(Error::dim("embedding projections", "embed_dim x hidden", "other"));
        }
        Ok(Self {
            config,
            backbone,
            label_embedding,
            projections,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    pub fn label_embedding(&self) -> &Matrix {
        &self.label_embedding
    }

    pub fn label_embedding_mut(&mut self) -> &mut Matrix {
        &mut self.label_embedding
    }

    pub fn projections(&self) -> &[Matrix] {
        &self.projections
    }

    /// Time embedding plus label embedding, one row per sample.
    pub fn combined_embedding(&self, labels: &[usize], steps: &[usize]) -> Result<Matrix> {
        if labels.len() != steps.len() {
            return Err(Error::dim("combined_embedding", labels.len(), steps.len()));
        }
        let de = self.config.embed_dim;
        let freqs = frequencies(de);
        let half = de / 2;
        let mut e = Matrix::zeros(labels.len(), de);
        for (i, (&l, &t)) in labels.iter().zip(steps).enumerate() {
            if l >= self.config.classes {
                return Err(Error::Label {
                    label: l,
                    classes: self.config.classes,
                });
            }
            let lab = self.label_embedding.row(l);
            let row = e.row_mut(i);
            for (k, w) in freqs.iter().enumerate() {
                let (s, c) = (t as f64 * w).sin_cos();
                row[k] = s + lab[k];
                row[half + k] = c + lab[half + k];
            }
        }
        Ok(e)
    }

    pub fn forward_cached(&self, x_t: &Matrix, labels: &[usize], steps: &[usize]) -> Result<DenoiserCache> {
        if x_t.cols() != self.config.data_dim || x_t.rows() != labels.len() {
            return Err(Error::dim(
                "denoiser forward",
                format!("{}x{}", labels.len(), self.config.data_dim),
                format!("{}x{}", x_t.rows(), x_t.cols()),
            ));
        }
        let embedding = self.combined_embedding(labels, steps)?;
        let input = x_t.hstack(&embedding)?;
        let inject = self
            .projections
            .iter()
            .map(|p| embedding.matmul(p))
            .collect::<Result<Vec<_>>>()?;
        let mlp = self.backbone.forward_cached(&input, Some(&inject))?;
        Ok(DenoiserCache {
            embedding,
            labels: labels.to_vec(),
            mlp,
        })
    }

    /// Gradients ordered like [`Parameters::tensors`], given `∂L/∂ε̂`.
    pub fn backward(&self, cache: &DenoiserCache, upstream: &Matrix) -> Result<Vec<Vec<f64>>> {
        let g = self.backbone.backward(&cache.mlp, upstream)?;
        let d = self.config.data_dim;
        let mut d_emb = g.input.cols_range(d, d + self.config.embed_dim);
        let mut proj_grads = Vec::with_capacity(self.projections.len());
        for (p, dz) in self.projections.iter().zip(&g.hidden_pre) {
            proj_grads.push(cache.embedding.t_matmul(dz)?.into_vec());
            d_emb.add_assign(&dz.matmul_t(p)?)?;
        }
        let mut d_label = Matrix::zeros(self.config.classes, self.config.embed_dim);
        for (i, &l) in cache.labels.iter().enumerate() {
            for (acc, &v) in d_label.row_mut(l).iter_mut().zip(d_emb.row(i)) {
                *acc += v;
            }
        }
        let mut grads = g.params;
        grads.push(d_label.into_vec());
        grads.extend(proj_grads);
        Ok(grads)
    }
}

impl NoisePredictor for ConditionalDenoiser {
    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn predict_eps(&self, x_t: &Matrix, labels: &[usize], steps: &[usize]) -> Result<Matrix> {
        Ok(self.forward_cached(x_t, labels, steps)?.mlp.into_output())
    }
}

impl Parameters for ConditionalDenoiser {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.backbone.tensors();
        t.push(self.label_embedding.as_slice());
        t.extend(self.projections.iter().map(Matrix::as_slice));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.backbone.tensors_mut();
        t.push(self.label_embedding.as_mut_slice());
        t.extend(self.projections.iter_mut().map(Matrix::as_mut_slice));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Stream;

    fn tiny() -> ConditionalDenoiser {
        let cfg = DenoiserConfig {
            data_dim: 2,
            classes: 3,
            embed_dim: 4,
            hidden: vec![5, 6],
            activation: Activation::Tanh,
        };
        ConditionalDenoiser::new(cfg, &mut Rng::new(11, Stream::Init)).unwrap()
    }

    #[test]
    fn time_embedding_layout() {
        let e = time_embedding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = time_embedding(3, 4);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
        assert!((e[1] - (3e-4f64).sin()).abs() < 1e-15);
        assert!((e[3] - (3e-4f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn embedding_is_sum_of_time_and_label() {
        let m = tiny();
        let e = m.combined_embedding(&[2], &[17]).unwrap();
        let te = time_embedding(17, 4);
        for k in 0..4 {
            assert!((e.get(0, k) - te[k] - m.label_embedding().get(2, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn output_dimension_and_label_check() {
        let m = tiny();
        let x = Matrix::zeros(3, 2);
        let y = m.predict_eps(&x, &[0, 1, 2], &[1, 5, 9]).unwrap();
        assert_eq!(y.shape(), (3, 2));
        assert!(matches!(
            m.predict_eps(&x, &[0, 1, 3], &[1, 1, 1]),
            Err(Error::Label { label: 3, .. })
        ));
    }

    #[test]
    fn gradients_shape_match_parameters() {
        let m = tiny();
        let x = Matrix::from_fn(4, 2, |i, j| 0.3 * (i as f64) - 0.2 * j as f64);
        let cache = m.forward_cached(&x, &[0, 1, 2, 0], &[1, 2, 3, 4]).unwrap();
        let g = m.backward(&cache, &Matrix::filled(4, 2, 1.0)).unwrap();
        let shapes: Vec<usize> = m.tensors().iter().map(|t| t.len()).collect();
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), shapes);
        // class 1 appears once, class 2 once, class 0 twice; all get gradient
        assert!(g[g.len() - 3].iter().any(|&v| v != 0.0));
    }
}
