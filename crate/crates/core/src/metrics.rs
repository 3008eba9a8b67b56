//! Domain-divergence diagnostics: proxy A-distance, sliced Wasserstein, and
//! the generalization-bound term report.

use serde::{Deserialize, Serialize};

use crate::dataset::{DomainPair, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, Rng, SgdMomentum};
use crate::uda::{accuracy, UdaModel};

pub const A_DISTANCE_STEPS: usize = 500;
pub const A_DISTANCE_LR: f64 = 0.1;

/// `2(1 − 2ν)` clipped to `[0, 2]`.
pub fn a_distance_from_error(nu: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * nu)).clamp(0.0, 2.0)
}

/// Proxy A-distance: a logistic-regression domain classifier is fit on a
/// random half of each set (features standardized on the training half),
/// and `ν` is its balanced error on the other halves.
pub fn a_distance(a: &Matrix, b: &Matrix, rng: &mut Rng) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dim("a_distance", a.cols(), b.cols()));
    }
    if a.rows() < 4 || b.rows() < 4 {
        return Err(Error::Estimator(format!(
            "a_distance needs at least 4 rows per side, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    let split = |m: &Matrix, rng: &mut Rng| {
        let p = rng.permutation(m.rows());
        let half = m.rows() / 2;
        (m.select_rows(&p[..half]), m.select_rows(&p[half..]))
    };
    let (a_tr, a_te) = split(a, rng);
    let (b_tr, b_te) = split(b, rng);

    let train = a_tr.vstack(&b_tr)?;
    let mean = train.col_means();
    let sd: Vec<f64> = train
        .covariance()
        .as_slice()
        .iter()
        .step_by(train.cols() + 1)
        .map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    let standardize = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| (m.get(i, j) - mean[j]) / sd[j]);
    let train = standardize(&train);

    // class-balanced logistic loss, side a = 1
    let (na, nb) = (a_tr.rows() as f64, b_tr.rows() as f64);
    let mut upstream_w = vec![0.0; train.rows()];
    let mut y = vec![0.0; train.rows()];
    for i in 0..train.rows() {
        if i < a_tr.rows() {
            y[i] = 1.0;
            upstream_w[i] = 0.5 / na;
        } else {
            upstream_w[i] = 0.5 / nb;
        }
    }
    let mut clf = Mlp::zeros(&[a.cols(), 1], Activation::Tanh)?;
    let mut opt = SgdMomentum::new(A_DISTANCE_LR, 0.9)?;
    for _ in 0..A_DISTANCE_STEPS {
        let cache = clf.forward_cached(&train, None)?;
        let z = cache.output();
        let up = Matrix::from_fn(train.rows(), 1, |i, _| {
            let p = 1.0 / (1.0 + (-z.get(i, 0)).exp());
            upstream_w[i] * (p - y[i])
        });
        let g = clf.backward(&cache, &up)?;
        opt.step(&mut clf, &g.params)?;
    }
    let err = |m: &Matrix, positive: bool| -> Result<f64> {
        let z = clf.forward(&standardize(m))?;
        let wrong = (0..z.rows()).filter(|&i| (z.get(i, 0) > 0.0) != positive).count();
        Ok(wrong as f64 / z.rows() as f64)
    };
    let nu = 0.5 * (err(&a_te, true)? + err(&b_te, false)?);
    Ok(a_distance_from_error(nu))
}

/// `k` uniformly random unit directions in `d` dimensions.
pub fn random_directions(d: usize, k: usize, rng: &mut Rng) -> Matrix {
    let mut m = rng.normal_matrix(k, d);
    for i in 0..k {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row[0] = 1.0;
        }
    }
    m
}

/// 1-D Wasserstein-1 between two empirical distributions given sorted samples,
/// as the integral of the quantile-function gap.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Mean over the rows of `directions` of the projected 1-D W1.
pub fn sliced_wasserstein_with(a: &Matrix, b: &Matrix, directions: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() || directions.cols() != a.cols() {
        return Err(Error::dim("sliced_wasserstein", a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 || directions.rows() == 0 {
        return Err(Error::Argument(
            "sliced_wasserstein needs nonempty inputs and projections".into(),
        ));
    }
    let pa = a.matmul_t(directions)?;
    let pb = b.matmul_t(directions)?;
    let mut total = 0.0;
    for k in 0..directions.rows() {
        let mut xa: Vec<f64> = (0..pa.rows()).map(|i| pa.get(i, k)).collect();
        let mut xb: Vec<f64> = (0..pb.rows()).map(|i| pb.get(i, k)).collect();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        total += wasserstein_1d_sorted(&xa, &xb);
    }
    Ok(total / directions.rows() as f64)
}

pub fn sliced_wasserstein(a: &Matrix, b: &Matrix, projections: usize, rng: &mut Rng) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dim("sliced_wasserstein", a.cols(), b.cols()));
    }
    sliced_wasserstein_with(a, b, &random_directions(a.cols(), projections, rng))
}

/// Empirical terms of the augmented-source generalization bound. Every
/// distance is the proxy A-distance, not the true `H∆H` divergence, measured
/// against the held-out target sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub source_risk: f64,
    /// Risk on generated rows against the labels they were conditioned on.
    pub generated_risk: Option<f64>,
    pub augmented_risk: f64,
    pub proxy_d_source_target: f64,
    pub proxy_d_generated_target: Option<f64>,
    pub proxy_d_augmented_target: f64,
    /// `N_s / (N_s + N_g)`.
    pub alpha: f64,
    /// Whether the generated set is closer to the target than the source is.
    pub premise_holds: Option<bool>,
    pub constant_c: String,
}

/// `(d(S,T), d(G,T), d(Ŝ,T))`, drawn from `rng` in that order. The
/// generated distance is absent when the generated set is too small.
pub fn proxy_distances(
    source: &Matrix,
    target: &Matrix,
    generated: &Matrix,
    augmented: &Matrix,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>, f64)> {
    let d_st = a_distance(source, target, rng)?;
    let d_gt = if generated.rows() >= 4 {
        Some(a_distance(generated, target, rng)?)
    } else {
        None
    };
    let d_at = a_distance(augmented, target, rng)?;
    Ok((d_st, d_gt, d_at))
}

pub fn bound_report(
    pair: &DomainPair,
    generated: &LabeledDataset,
    augmented: &LabeledDataset,
    model: &UdaModel,
    rng: &mut Rng,
) -> Result<BoundReport> {
    let target = pair.target_eval().features();
    let risk = |d: &LabeledDataset| accuracy(model, d).map(|a| 1.0 - a);
    let (d_st, d_gt, d_at) = proxy_distances(
        pair.source.features(),
        target,
        generated.features(),
        augmented.features(),
        rng,
    )?;
    let (ns, ng) = (pair.source.len() as f64, generated.len() as f64);
    Ok(BoundReport {
        source_risk: risk(&pair.source)?,
        generated_risk: if generated.is_empty() {
            None
        } else {
            Some(risk(generated)?)
        },
        augmented_risk: risk(augmented)?,
        proxy_d_source_target: d_st,
        proxy_d_generated_target: d_gt,
        proxy_d_augmented_target: d_at,
        alpha: ns / (ns + ng),
        premise_holds: d_gt.map(|g| g < d_st),
        constant_c: "not estimated".into(),
    })
}
