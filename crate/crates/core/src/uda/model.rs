use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::softmax;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, Parameters, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    Mmd,
    Adversarial,
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularizerKind::Mmd => "mmd",
            RegularizerKind::Adversarial => "adversarial",
        })
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmd" => Ok(RegularizerKind::Mmd),
            "adversarial" => Ok(RegularizerKind::Adversarial),
            other => Err(Error::Config(format!("unknown regularizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdaArch {
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for UdaArch {
    fn default() -> Self {
        Self {
            feature_hidden: vec![32],
            feature_dim: 16,
            head_hidden: vec![],
            disc_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// Feature transform `T`, classifier head, and an optional domain discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdaModel {
    pub transform: Mlp,
    pub head: Mlp,
    pub discriminator: Option<Mlp>,
    pub regularizer: RegularizerKind,
    pub lambda: f64,
}

pub const CHECKPOINT_FORMAT: &str = "dtskit-uda";
pub const CHECKPOINT_VERSION: u32 = 1;

impl UdaModel {
    /// Transform and head come from the `Init` stream, the discriminator from
    /// its own stream, so the classifier's initialization does not depend on
    /// the regularizer.
    pub fn new(
        input_dim: usize,
        classes: usize,
        arch: &UdaArch,
        regularizer: RegularizerKind,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("trade-off weight must be >= 0, got {lambda}")));
        }
        let mut init = Rng::new(seed, Stream::Init).keyed(0x0da);
        let widths = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let transform = Mlp::new(
            &widths(input_dim, &arch.feature_hidden, arch.feature_dim),
            arch.activation,
            &mut init,
        )?;
        let head = Mlp::new(
            &widths(arch.feature_dim, &arch.head_hidden, classes),
            arch.activation,
            &mut init,
        )?;
        let discriminator = match regularizer {
            RegularizerKind::Adversarial => {
                let mut drng = Rng::new(seed, Stream::Discriminator).keyed(0x0da);
                Some(Mlp::new(
                    &widths(arch.feature_dim, &arch.disc_hidden, 1),
                    Activation::Relu,
                    &mut drng,
                )?)
            }
            RegularizerKind::Mmd => None,
        };
        Ok(Self {
            transform,
            head,
            discriminator,
            regularizer,
            lambda,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.transform.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.transform.forward(x)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.head.forward(&self.transform.forward(x)?)
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }

    pub fn to_text(&self) -> Result<String> {
        crate::checkpoint::to_string(CHECKPOINT_FORMAT, CHECKPOINT_VERSION, self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let m: Self = crate::checkpoint::from_str(CHECKPOINT_FORMAT, CHECKPOINT_VERSION, text)?;
        if m.head.input_dim() != m.transform.output_dim() {
            return Err(Error::Checkpoint(
                "head input width differs from transform output".into(),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Transform then head; the discriminator is optimized separately.
impl Parameters for UdaModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.transform.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.transform.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_matches_transform_and_softmax_normalizes() {
        let m = UdaModel::new(2, 3, &UdaArch::default(), RegularizerKind::Adversarial, 1.0, 5).unwrap();
        assert_eq!(m.head.input_dim(), m.transform.output_dim());
        assert!(m.discriminator.is_some());
        let p = m.probabilities(&Matrix::from_fn(4, 2, |i, j| (i * j) as f64)).unwrap();
        for r in p.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classifier_init_is_independent_of_regularizer() {
        let a = UdaModel::new(2, 2, &UdaArch::default(), RegularizerKind::Adversarial, 1.0, 5).unwrap();
        let b = UdaModel::new(2, 2, &UdaArch::default(), RegularizerKind::Mmd, 0.0, 5).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = UdaModel::new(2, 2, &UdaArch::default(), RegularizerKind::Adversarial, 0.5, 1).unwrap();
        assert_eq!(UdaModel::from_text(&m.to_text().unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(UdaModel::new(2, 1, &UdaArch::default(), RegularizerKind::Mmd, 1.0, 0).is_err());
        assert!(UdaModel::new(2, 2, &UdaArch::default(), RegularizerKind::Mmd, -1.0, 0).is_err());
    }
}
