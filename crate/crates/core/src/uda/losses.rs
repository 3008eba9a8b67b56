use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, Mlp};

/// Mean negative log-softmax of the true class, with `∂L/∂logits`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Argument("cross_entropy on an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::dim("cross_entropy labels", n, labels.len()));
    }
    let c = logits.cols();
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Label { label: y, classes: c });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            *gv = (row[j] - log_z).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Median-heuristic bandwidths `γ_med · 2^k`, `k ∈ {−2, …, 2}`, where `γ_med`
/// is the median pairwise distance over the pooled rows.
pub fn median_bandwidths(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let pooled: Vec<&[f64]> = a.iter_rows().chain(b.iter_rows()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    let med = if d.is_empty() {
        1.0
    } else {
        let mid = d.len() / 2;
        let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
        m.sqrt()
    };
    let base = if med > 1e-12 { med } else { 1.0 };
    (-2..=2).map(|k| base * 2f64.powi(k)).collect()
}

/// Mean over bandwidths of `exp(−‖x−y‖² / (2γ²))` and its gradient factor
/// `Σ_γ exp(·)/γ² / |γ|` so that `∂k/∂x = −factor · (x − y)`.
#[inline]
fn kernel_and_factor(sq: f64, inv_two_g2: &[f64]) -> (f64, f64) {
    let mut k = 0.0;
    let mut f = 0.0;
    for &c in inv_two_g2 {
        let e = (-sq * c).exp();
        k += e;
        f += 2.0 * c * e;
    }
    let m = inv_two_g2.len() as f64;
    (k / m, f / m)
}

#[derive(Debug, Clone)]
pub struct MmdOutput {
    /// Unbiased MMD² estimate (may be slightly negative).
    pub unbiased: f64,
    /// `max(unbiased, 0)`, for reporting.
    pub reported: f64,
    /// `∂ unbiased / ∂a`.
    pub grad_a: Matrix,
    /// `∂ unbiased / ∂b`.
    pub grad_b: Matrix,
}

fn check_bandwidths(a: &Matrix, b: &Matrix, bandwidths: &[f64]) -> Result<Vec<f64>> {
    if a.cols() != b.cols() {
        return Err(Error::dim("mmd", a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Estimator("mmd needs nonempty inputs".into()));
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::Argument("mmd bandwidths must be positive".into()));
    }
    Ok(bandwidths.iter().map(|g| 1.0 / (2.0 * g * g)).collect())
}

/// Biased (V-statistic) multi-kernel RBF MMD²; zero for identical multisets.
pub fn mmd_biased(a: &Matrix, b: &Matrix, bandwidths: &[f64]) -> Result<f64> {
    let c = check_bandwidths(a, b, bandwidths)?;
    let mean_k = |x: &Matrix, y: &Matrix| {
        let mut s = 0.0;
        for xr in x.iter_rows() {
            for yr in y.iter_rows() {
                s += kernel_and_factor(sq_dist(xr, yr), &c).0;
            }
        }
        s / (x.rows() * y.rows()) as f64
    };
    Ok(mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b))
}

/// Unbiased multi-kernel RBF MMD² with gradients w.r.t. both inputs.
pub fn mmd(a: &Matrix, b: &Matrix, bandwidths: &[f64]) -> Result<MmdOutput> {
    let c = check_bandwidths(a, b, bandwidths)?;
    let (m, n) = (a.rows(), b.rows());
    if m < 2 || n < 2 {
        return Err(Error::Estimator(format!(
            "unbiased mmd needs at least 2 rows per side, got {m} and {n}"
        )));
    }
    let d = a.cols();
    let mut grad_a = Matrix::zeros(m, d);
    let mut grad_b = Matrix::zeros(n, d);

    // within-set terms: each unordered pair counted twice
    let within = |x: &Matrix, grad: &mut Matrix, scale: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in i + 1..x.rows() {
                let (xi, xj) = (x.row(i), x.row(j));
                let (k, f) = kernel_and_factor(sq_dist(xi, xj), &c);
                s += 2.0 * k;
                // ∂/∂x_i of 2k(x_i, x_j) = −2f(x_i − x_j)
                for p in 0..d {
                    let diff = xi[p] - xj[p];
                    grad.row_mut(i)[p] -= scale * 2.0 * f * diff;
                    grad.row_mut(j)[p] += scale * 2.0 * f * diff;
                }
            }
        }
        s * scale
    };
    let saa = within(a, &mut grad_a, 1.0 / (m * (m - 1)) as f64);
    let sbb = within(b, &mut grad_b, 1.0 / (n * (n - 1)) as f64);

    let cross = 2.0 / (m * n) as f64;
    let mut sab = 0.0;
    for i in 0..m {
        for j in 0..n {
            let (ai, bj) = (a.row(i), b.row(j));
            let (k, f) = kernel_and_factor(sq_dist(ai, bj), &c);
            sab += k;
            for p in 0..d {
                let diff = ai[p] - bj[p];
                // −cross·k: ∂/∂a_i = cross·f·diff, ∂/∂b_j = −cross·f·diff
                grad_a.row_mut(i)[p] += cross * f * diff;
                grad_b.row_mut(j)[p] -= cross * f * diff;
            }
        }
    }
    let unbiased = saa + sbb - cross * sab;
    Ok(MmdOutput {
        unbiased,
        reported: unbiased.max(0.0),
        grad_a,
        grad_b,
    })
}

#[derive(Debug, Clone)]
pub struct AdversarialOutput {
    /// Binary cross-entropy of source-vs-target classification.
    pub loss: f64,
    /// `∂loss/∂θ_D`: the discriminator descends this.
    pub disc_grads: Vec<Vec<f64>>,
    /// Sign-reversed `∂loss/∂features` for the source rows.
    pub reversed_src: Matrix,
    /// Sign-reversed `∂loss/∂features` for the target rows.
    pub reversed_tgt: Matrix,
    /// Fraction of rows the discriminator classifies correctly.
    pub disc_accuracy: f64,
}

/// Domain-adversarial regularizer: the discriminator (one output logit,
/// source = 1) is scored by mean BCE; feature gradients pass through a
/// gradient-reversal so the feature transform ascends the same loss.
pub fn adversarial_reg(
    discriminator: Option<&Mlp>,
    src_feats: &Matrix,
    tgt_feats: &Matrix,
) -> Result<AdversarialOutput> {
    let disc =
        discriminator.ok_or_else(|| Error::Config("adversarial regularizer requires a domain discriminator".into()))?;
    if disc.output_dim() != 1 {
        return Err(Error::dim("discriminator output", 1, disc.output_dim()));
    }
    let pooled = src_feats.vstack(tgt_feats)?;
    let total = pooled.rows();
    if total == 0 {
        return Err(Error::Argument("adversarial_reg on empty batches".into()));
    }
    let cache = disc.forward_cached(&pooled, None)?;
    let logits = cache.output();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut upstream = Matrix::zeros(total, 1);
    for i in 0..total {
        let z = logits.get(i, 0);
        let y = if i < src_feats.rows() { 1.0 } else { 0.0 };
        // softplus(z) − y·z, stable
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        let p = 1.0 / (1.0 + (-z).exp());
        upstream.set(i, 0, (p - y) / total as f64);
        if (z > 0.0) == (y == 1.0) {
            correct += 1;
        }
    }
    let g = disc.backward(&cache, &upstream)?;
    let reversed = g.input.scale(-1.0);
    Ok(AdversarialOutput {
        loss: loss / total as f64,
        disc_grads: g.params,
        reversed_src: reversed.select_rows(&(0..src_feats.rows()).collect::<Vec<_>>()),
        reversed_tgt: reversed.select_rows(&(src_feats.rows()..total).collect::<Vec<_>>()),
        disc_accuracy: correct as f64 / total as f64,
    })
}
