//! Synthetic domain pairs with known shift, and the delimited dataset format.
//!
//! File layout: a header `d=<dim>;labeled=<0|1>;domain=<tag>`, then one
//! comma-separated row per sample with the label last when present.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, DomainPair, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ShiftFamily {
    /// Two interleaved half circles; the target is rotated about the origin.
    TwoMoonsRotation { degrees: f64 },
    /// Isotropic Gaussian per class; the target is `A·x + b` of a source draw.
    GaussianMixtureAffine {
        means: Vec<Vec<f64>>,
        scales: Vec<f64>,
        a: Matrix,
        b: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub family: ShiftFamily,
    /// Gaussian jitter added to every point before the shift.
    pub noise: f64,
    pub n_source: usize,
    pub n_target: usize,
    /// Extra labeled target rows used only for evaluation.
    pub n_target_eval: usize,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            family: ShiftFamily::TwoMoonsRotation { degrees: 30.0 },
            noise: 0.1,
            n_source: 2000,
            n_target: 100,
            n_target_eval: 2000,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn classes(&self) -> usize {
        match &self.family {
            ShiftFamily::TwoMoonsRotation { .. } => 2,
            ShiftFamily::GaussianMixtureAffine { means, .. } => means.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            ShiftFamily::TwoMoonsRotation { .. } => 2,
            ShiftFamily::GaussianMixtureAffine { means, .. } => means.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.n_source < self.classes() || self.n_target < 2 || self.n_target_eval == 0 {
            return bad("need n_source >= classes, n_target >= 2 and n_target_eval >= 1".into());
        }
        match &self.family {
            ShiftFamily::TwoMoonsRotation { degrees } => {
                if !(0.0..=90.0).contains(degrees) {
                    return bad(format!("rotation must be within [0, 90] degrees, got {degrees}"));
                }
            }
            ShiftFamily::GaussianMixtureAffine { means, scales, a, b } => {
                let d = self.dim();
                if means.len() < 2 || d == 0 || means.iter().any(|m| m.len() != d) {
                    return bad("need at least 2 class means of one common nonzero dimension".into());
                }
                if scales.len() != means.len() || scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return bad("need one positive scale per class".into());
                }
                if a.shape() != (d, d) || b.len() != d {
                    return bad(format!("affine map must be {d}x{d} with a length-{d} offset"));
                }
            }
        }
        Ok(())
    }

    fn draw_base(&self, n: usize, rng: &mut Rng) -> (Matrix, Vec<usize>) {
        let c = self.classes();
        let d = self.dim();
        let mut x = Matrix::zeros(n, d);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        for (i, &y) in labels.iter().enumerate() {
            let row = x.row_mut(i);
            match &self.family {
                ShiftFamily::TwoMoonsRotation { .. } => {
                    let th = rng.uniform() * std::f64::consts::PI;
                    let (px, py) = if y == 0 {
                        (th.cos(), th.sin())
                    } else {
                        (1.0 - th.cos(), 0.5 - th.sin())
                    };
                    row[0] = px + self.noise * rng.normal();
                    row[1] = py + self.noise * rng.normal();
                }
                ShiftFamily::GaussianMixtureAffine { means, scales, .. } => {
                    let sd = scales[y].hypot(self.noise);
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = means[y][j] + sd * rng.normal();
                    }
                }
            }
        }
        (x, labels)
    }

    fn shift(&self, x: &Matrix) -> Result<Matrix> {
        match &self.family {
            ShiftFamily::TwoMoonsRotation { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                Ok(Matrix::from_fn(x.rows(), 2, |i, j| {
                    let (px, py) = (x.get(i, 0), x.get(i, 1));
                    if j == 0 {
                        c * px - s * py
                    } else {
                        s * px + c * py
                    }
                }))
            }
            ShiftFamily::GaussianMixtureAffine { a, b, .. } => {
                let mut out = x.matmul_t(a)?;
                out.add_row_vector(b)?;
                Ok(out)
            }
        }
    }
}

/// Source, target and held-out target drawn from independent sub-streams of
/// the spec's seed; the target's labels are hidden inside the pair.
pub fn generate_pair(spec: &ShiftSpec) -> Result<DomainPair> {
    spec.validate()?;
    let base = Rng::new(spec.seed, Stream::Data);
    let c = spec.classes();
    let (xs, ys) = spec.draw_base(spec.n_source, &mut base.substream(0));
    let (xt, yt) = spec.draw_base(spec.n_target, &mut base.substream(1));
    let (xe, ye) = spec.draw_base(spec.n_target_eval, &mut base.substream(2));
    DomainPair::new(
        LabeledDataset::labeled(xs, ys, c, Domain::Source)?,
        LabeledDataset::labeled(spec.shift(&xt)?, yt, c, Domain::Target)?,
        LabeledDataset::labeled(spec.shift(&xe)?, ye, c, Domain::Target)?,
    )
}

pub fn dataset_to_string(ds: &LabeledDataset) -> String {
    let mut s = format!(
        "d={};labeled={};domain={}\n",
        ds.dim(),
        u8::from(ds.is_labeled()),
        ds.domain()
    );
    for i in 0..ds.len() {
        let row = ds.features().row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v:?}").expect("writing to a String");
        }
        if let Some(labels) = ds.labels() {
            if !row.is_empty() {
                s.push(',');
            }
            write!(s, "{}", labels[i]).expect("writing to a String");
        }
        s.push('\n');
    }
    s
}

/// Labeled datasets get `classes = max label + 1`.
pub fn dataset_from_str(text: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file, expected a header".into(),
    })?;
    let (dim, labeled, domain) = parse_header(header)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let want = dim + usize::from(labeled);
        if cells.len() != want {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {want} fields, found {}", cells.len()),
            });
        }
        for cell in &cells[..dim] {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("'{cell}' is not a number"),
            })?;
            data.push(v);
        }
        if labeled {
            let cell = cells[dim];
            labels.push(cell.parse::<usize>().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("'{cell}' is not a class label"),
            })?);
        }
        rows += 1;
    }
    let features = Matrix::from_vec(rows, dim, data)?;
    if labeled {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        LabeledDataset::labeled(features, labels, classes, domain)
    } else {
        Ok(LabeledDataset::unlabeled(features, domain))
    }
}

fn parse_header(header: &str) -> Result<(usize, bool, Domain)> {
    let err = |msg: String| Error::Parse { line: 1, msg };
    let mut dim = None;
    let mut labeled = None;
    let mut domain = None;
    for part in header.trim().split(';') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field '{part}'")))?;
        match k {
            "d" => dim = Some(v.parse::<usize>().map_err(|_| err(format!("bad dimension '{v}'")))?),
            "labeled" => {
                labeled = Some(match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(format!("labeled must be 0 or 1, got '{v}'"))),
                })
            }
            "domain" => domain = Some(v.parse::<Domain>().map_err(|e| err(e.to_string()))?),
            other => return Err(err(format!("unknown header field '{other}'"))),
        }
    }
    match (dim, labeled, domain) {
        (Some(d), Some(l), Some(t)) => Ok((d, l, t)),
        _ => Err(err("header must contain d, labeled and domain".into())),
    }
}

pub fn write_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let f = Matrix::from_rows(&[vec![0.1 + 0.2, -1e-300], vec![f64::MAX, 7.0]]).unwrap();
        let ds = LabeledDataset::labeled(f, vec![1, 0], 2, Domain::Generated).unwrap();
        assert_eq!(dataset_from_str(&dataset_to_string(&ds)).unwrap(), ds);
        let un = LabeledDataset::unlabeled(Matrix::from_rows(&[vec![1.5]]).unwrap(), Domain::Target);
        assert_eq!(dataset_from_str(&dataset_to_string(&un)).unwrap(), un);
    }

    #[test]
    fn header_is_bit_exact() {
        let ds = LabeledDataset::labeled(
            Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap(),
            vec![0],
            1,
            Domain::Source,
        )
        .unwrap();
        assert_eq!(dataset_to_string(&ds), "d=2;labeled=1;domain=source\n1.0,0.5,0\n");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = dataset_from_str("d=2;labeled=0;domain=target\n1,2\n3,abc\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = dataset_from_str("d=2;labeled=1;domain=target\n1,2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(matches!(
            dataset_from_str("d=2;domain=x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(dataset_from_str(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn zero_rotation_gives_identical_distributions() {
        let spec = ShiftSpec {
            family: ShiftFamily::TwoMoonsRotation { degrees: 0.0 },
            ..ShiftSpec::default()
        };
        let base = Rng::new(spec.seed, Stream::Data);
        let (x, _) = spec.draw_base(50, &mut base.substream(1));
        assert_eq!(spec.shift(&x).unwrap(), x);
    }

    #[test]
    fn invalid_specs_rejected() {
        for degrees in [-1.0, 91.0] {
            let spec = ShiftSpec {
                family: ShiftFamily::TwoMoonsRotation { degrees },
                ..ShiftSpec::default()
            };
            assert!(matches!(generate_pair(&spec), Err(Error::Config(_))));
        }
        let spec = ShiftSpec {
            family: ShiftFamily::GaussianMixtureAffine {
                means: vec![vec![0.0], vec![1.0]],
                scales: vec![1.0, 0.0],
                a: Matrix::identity(1),
                b: vec![0.0],
            },
            ..ShiftSpec::default()
        };
        assert!(generate_pair(&spec).is_err());
    }

    #[test]
    fn pairs_are_reproducible() {
        let spec = ShiftSpec::default();
        assert_eq!(generate_pair(&spec).unwrap(), generate_pair(&spec).unwrap());
    }
}
