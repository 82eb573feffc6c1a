//! Loss functions over embedding batches and their analytic gradients.
//!
//! Three objectives share one core:
//!
//! * `contrastive_loss` — softmax cross-entropy over cosine similarities,
//!   pulling each query toward its own index against in-batch negatives
//!   (plus an optional per-row hard negative in the denominator).
//! * `entropy_loss` — the contrastive term plus `phi` times the entropy of
//!   each row's off-diagonal similarity distribution. Positive `phi`
//!   sharpens the query-to-index score distribution, negative `phi`
//!   flattens it.
//! * `rcl_loss` — the contrastive term plus, for each augmented-embedding
//!   store, one query-side and one index-side regulator: a contrastive term
//!   that pulls the live embedding toward its own frozen augmented
//!   embedding against the batch's other augmented embeddings. No gradient
//!   flows into the augmented constants.
//!
//! All losses report the mean over rows, so batch size does not rescale the
//! learning rate, and gradients are with respect to that mean. Softmax
//! denominators use max-subtraction. A `temperature` divides every cosine
//! logit; 1.0 reproduces the plain objectives.

use crate::backend;
use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};

const ZERO_NORM_EPS: f64 = 1e-12;

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(
            "cosine",
            format!("dim {}", u.len()),
            format!("dim {}", v.len()),
        ));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector("cosine: left operand".into()));
    }
    if nv <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector("cosine: right operand".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Unit rows plus original norms, shared by the loss internals.
struct Normed {
    unit: Vec<Vec<f64>>,
    norm: Vec<f64>,
}

impl Normed {
    fn new(rows: &[Vec<f64>], what: &str) -> Result<Self> {
        let mut unit = Vec::with_capacity(rows.len());
        let mut norm = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !n.is_finite() {
                return Err(Error::NonFinite(format!("{what} row {i}")));
            }
            if n <= ZERO_NORM_EPS {
                return Err(Error::ZeroVector(format!("{what} row {i}")));
            }
            unit.push(row.iter().map(|x| x / n).collect());
            norm.push(n);
        }
        Ok(Normed { unit, norm })
    }

    fn len(&self) -> usize {
        self.unit.len()
    }

    fn cos(&self, i: usize, other: &Normed, j: usize) -> f64 {
        let dot: f64 = self.unit[i]
            .iter()
            .zip(&other.unit[j])
            .map(|(a, b)| a * b)
            .sum();
        dot.clamp(-1.0, 1.0)
    }
}

/// Loss output: scalar total (mean over rows), per-row values, and the
/// gradients of the total with respect to the query and index rows.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub per_example: Vec<f64>,
    pub grad_q: Vec<Vec<f64>>,
    pub grad_ind: Vec<Vec<f64>>,
}

/// Frozen augmented embeddings aligned with a live batch: for each of the
/// N entropy models, one M x d matrix per side. Constants only — the loss
/// never produces gradients for them.
#[derive(Debug, Clone, Default)]
pub struct RegulatorSet {
    aug_q: Vec<Vec<Vec<f64>>>,
    aug_ind: Vec<Vec<Vec<f64>>>,
}

impl RegulatorSet {
    pub fn empty() -> Self {
        RegulatorSet::default()
    }

    pub fn new(aug_q: Vec<Vec<Vec<f64>>>, aug_ind: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if aug_q.len() != aug_ind.len() {
            return Err(Error::shape(
                "RegulatorSet",
                format!("{} query-side matrices", aug_q.len()),
                format!("{} index-side matrices", aug_ind.len()),
            ));
        }
        let set = RegulatorSet { aug_q, aug_ind };
        if let Some(m) = set.aug_q.first().map(Vec::len) {
            for (n, (a, b)) in set.aug_q.iter().zip(&set.aug_ind).enumerate() {
                if a.len() != m || b.len() != m {
                    return Err(Error::shape(
                        "RegulatorSet",
                        format!("{m} rows in every matrix"),
                        format!("model {n} has {} / {}", a.len(), b.len()),
                    ));
                }
            }
        }
        Ok(set)
    }

    /// Number of entropy models N.
    pub fn model_count(&self) -> usize {
        self.aug_q.len()
    }

    /// Number of regulator sums in the objective: two per model.
    pub fn regulator_terms(&self) -> usize {
        2 * self.model_count()
    }

    fn check_against(&self, m: usize, d: usize) -> Result<()> {
        for (n, (a, b)) in self.aug_q.iter().zip(&self.aug_ind).enumerate() {
            for (side, mat) in [("query", a), ("index", b)] {
                if mat.len() != m {
                    return Err(Error::shape(
                        "rcl_loss regulators",
                        format!("{m} rows"),
                        format!("model {n} {side} side has {}", mat.len()),
                    ));
                }
                if let Some(row) = mat.iter().find(|r| r.len() != d) {
                    return Err(Error::shape(
                        "rcl_loss regulators",
                        format!("dim {d}"),
                        format!("model {n} {side} side has dim {}", row.len()),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::config(format!(
            "temperature must be finite and > 0, got {temperature}"
        )));
    }
    Ok(())
}

fn check_batch_pair(q: &EmbeddingBatch, ind: &EmbeddingBatch) -> Result<()> {
    if q.len() != ind.len() {
        return Err(Error::shape(
            "loss batches",
            format!("{} query rows", q.len()),
            format!("{} index rows", ind.len()),
        ));
    }
    if q.dim() != ind.dim() {
        return Err(Error::shape(
            "loss batches",
            format!("dim {}", q.dim()),
            format!("dim {}", ind.dim()),
        ));
    }
    Ok(())
}

/// Row-stochastic matrix of exponentiated cosine scores: entry (i, j) is
/// `exp(cos(q_i, ind_j)/t)` normalized over j.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(q: &EmbeddingBatch, ind: &EmbeddingBatch, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        check_batch_pair(q, ind)?;
        if q.is_empty() {
            return Err(Error::config("ScoreMatrix needs at least one row"));
        }
        let qn = Normed::new(&q.rows, "query batch")?;
        let indn = Normed::new(&ind.rows, "index batch")?;
        let m = qn.len();
        let values = backend::map_indexed(m, |i| {
            let logits: Vec<f64> = (0..m).map(|j| qn.cos(i, &indn, j) / temperature).collect();
            softmax(&logits)
        });
        Ok(ScoreMatrix { values })
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over rows of the Shannon entropy -sum_j s_ij ln s_ij.
    pub fn mean_row_entropy(&self) -> f64 {
        let per_row: Vec<f64> = self
            .values
            .iter()
            .map(|row| -row.iter().map(|&s| s * s.ln()).sum::<f64>())
            .collect();
        per_row.iter().sum::<f64>() / per_row.len() as f64
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// log(sum_j exp(logits_j)) with max-subtraction.
fn logsumexp(logits: &[f64]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// Per-query output of the first (query-side) loss pass.
struct RowTerms {
    loss: f64,
    grad_q: Vec<f64>,
    /// Coefficient on d cos(q_i, ind_j) for every j, combining the
    /// cross-entropy softmax and (if active) the entropy term; consumed by
    /// the index-side pass.
    ind_coeff: Vec<f64>,
}

fn loss_impl(
    q: &EmbeddingBatch,
    ind: &EmbeddingBatch,
    hard_neg: Option<&EmbeddingBatch>,
    phi: f64,
    regs: &RegulatorSet,
    temperature: f64,
) -> Result<LossValue> {
    check_temperature(temperature)?;
    check_batch_pair(q, ind)?;
    let m = q.len();
    if m == 0 {
        return Err(Error::config("loss requires at least one tuple (M >= 1)"));
    }
    let d = q.dim();
    if let Some(h) = hard_neg {
        if h.len() != m || h.dim() != d {
            return Err(Error::shape(
                "hard negatives",
                format!("{m} rows of dim {d}"),
                format!("{} rows of dim {}", h.len(), h.dim()),
            ));
        }
    }
    regs.check_against(m, d)?;
    if !phi.is_finite() {
        return Err(Error::config(format!("phi must be finite, got {phi}")));
    }

    let qn = Normed::new(&q.rows, "query batch")?;
    let indn = Normed::new(&ind.rows, "index batch")?;
    let hnn = match hard_neg {
        Some(h) => Some(Normed::new(&h.rows, "hard-negative batch")?),
        None => None,
    };
    let aug_qn: Vec<Normed> = regs
        .aug_q
        .iter()
        .map(|mat| Normed::new(mat, "augmented query embeddings"))
        .collect::<Result<_>>()?;
    let aug_indn: Vec<Normed> = regs
        .aug_ind
        .iter()
        .map(|mat| Normed::new(mat, "augmented index embeddings"))
        .collect::<Result<_>>()?;
    let inv_t = 1.0 / temperature;

    // Query-side pass: cross-entropy, entropy term, and query-side
    // regulators are all functions of row i alone (given the constants).
    let row_terms: Vec<RowTerms> = backend::map_indexed(m, |i| {
        let cos_row: Vec<f64> = (0..m).map(|j| qn.cos(i, &indn, j)).collect();
        let mut logits: Vec<f64> = cos_row.iter().map(|c| c * inv_t).collect();
        let hn_cos = hnn.as_ref().map(|h| qn.cos(i, h, i));
        if let Some(c) = hn_cos {
            logits.push(c * inv_t);
        }
        let probs = softmax(&logits);
        let mut loss = -logits[i] + logsumexp(&logits);

        let mut grad_q = vec![0.0; d];
        let mut ind_coeff = vec![0.0; m];
        for j in 0..m {
            let mut coeff = probs[j];
            if j == i {
                coeff -= 1.0;
            }
            ind_coeff[j] = coeff;
            let w = coeff * inv_t;
            if w != 0.0 {
                accumulate_dcos(&qn, i, &indn, j, cos_row[j], w, &mut grad_q);
            }
        }
        if let Some(hn) = hnn.as_ref() {
            // The hard negative widens the denominator and pushes q_i away,
            // but is itself a frozen input: no gradient is reported for it.
            let w = probs[m] * inv_t;
            accumulate_dcos(&qn, i, hn, i, hn_cos.unwrap(), w, &mut grad_q);
        }

        if phi != 0.0 {
            // Entropy of the off-diagonal score distribution; scores use
            // the full M-way denominator without the hard negative.
            let score_logits: Vec<f64> = cos_row.iter().map(|c| c * inv_t).collect();
            let s = softmax(&score_logits);
            let mut neg_entropy = 0.0;
            let mut a = 0.0;
            for (j, &sj) in s.iter().enumerate() {
                if j != i {
                    let ln_s = sj.ln();
                    neg_entropy += sj * ln_s;
                    a += sj * (ln_s + 1.0);
                }
            }
            loss += -phi * neg_entropy;
            for (k, &sk) in s.iter().enumerate() {
                let indicator = if k != i { sk.ln() + 1.0 } else { 0.0 };
                let dl = phi * sk * (a - indicator);
                ind_coeff[k] += dl;
                let w = dl * inv_t;
                if w != 0.0 {
                    accumulate_dcos(&qn, i, &indn, k, cos_row[k], w, &mut grad_q);
                }
            }
        }

        for aug in &aug_qn {
            let cos_aug: Vec<f64> = (0..m).map(|k| qn.cos(i, aug, k)).collect();
            let logits: Vec<f64> = cos_aug.iter().map(|c| c * inv_t).collect();
            let probs = softmax(&logits);
            loss += -logits[i] + logsumexp(&logits);
            for k in 0..m {
                let mut coeff = probs[k];
                if k == i {
                    coeff -= 1.0;
                }
                let w = coeff * inv_t;
                if w != 0.0 {
                    accumulate_dcos(&qn, i, aug, k, cos_aug[k], w, &mut grad_q);
                }
            }
        }

        RowTerms {
            loss,
            grad_q,
            ind_coeff,
        }
    });

    // Index-side pass: index-side regulators plus the cross-entropy /
    // entropy contributions flowing into each index row, reduced over i in
    // ascending order.
    let ind_terms: Vec<(f64, Vec<f64>)> = backend::map_indexed(m, |j| {
        let mut grad = vec![0.0; d];
        for (i, row) in row_terms.iter().enumerate() {
            let w = row.ind_coeff[j] * inv_t;
            if w != 0.0 {
                let c = indn.cos(j, &qn, i);
                accumulate_dcos(&indn, j, &qn, i, c, w, &mut grad);
            }
        }
        let mut loss = 0.0;
        for aug in &aug_indn {
            let cos_aug: Vec<f64> = (0..m).map(|k| indn.cos(j, aug, k)).collect();
            let logits: Vec<f64> = cos_aug.iter().map(|c| c * inv_t).collect();
            let probs = softmax(&logits);
            loss += -logits[j] + logsumexp(&logits);
            for k in 0..m {
                let mut coeff = probs[k];
                if k == j {
                    coeff -= 1.0;
                }
                let w = coeff * inv_t;
                if w != 0.0 {
                    accumulate_dcos(&indn, j, aug, k, cos_aug[k], w, &mut grad);
                }
            }
        }
        (loss, grad)
    });

    let inv_m = 1.0 / m as f64;
    let per_example: Vec<f64> = row_terms
        .iter()
        .zip(&ind_terms)
        .map(|(r, (l, _))| r.loss + l)
        .collect();
    let total = per_example.iter().sum::<f64>() * inv_m;
    let grad_q: Vec<Vec<f64>> = row_terms
        .iter()
        .map(|r| r.grad_q.iter().map(|g| g * inv_m).collect())
        .collect();
    let grad_ind: Vec<Vec<f64>> = ind_terms
        .iter()
        .map(|(_, g)| g.iter().map(|x| x * inv_m).collect())
        .collect();

    if !total.is_finite()
        || grad_q.iter().flatten().any(|g| !g.is_finite())
        || grad_ind.iter().flatten().any(|g| !g.is_finite())
    {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok(LossValue {
        total,
        per_example,
        grad_q,
        grad_ind,
    })
}

fn accumulate_dcos(
    a: &Normed,
    i: usize,
    b: &Normed,
    j: usize,
    cos: f64,
    weight: f64,
    out: &mut [f64],
) {
    let inv = weight / a.norm[i];
    for ((o, &bv), &av) in out.iter_mut().zip(&b.unit[j]).zip(&a.unit[i]) {
        *o += (bv - cos * av) * inv;
    }
}

/// Softmax cross-entropy of each query against the batch's indices (plus
/// an optional hard negative per row in the denominator).
pub fn contrastive_loss(
    q: &EmbeddingBatch,
    ind: &EmbeddingBatch,
    hard_neg: Option<&EmbeddingBatch>,
    temperature: f64,
) -> Result<LossValue> {
    loss_impl(q, ind, hard_neg, 0.0, &RegulatorSet::empty(), temperature)
}

/// Contrastive term plus `phi` times the off-diagonal score entropy.
/// Requires M >= 2 (the entropy term is over j != i).
pub fn entropy_loss(
    q: &EmbeddingBatch,
    ind: &EmbeddingBatch,
    hard_neg: Option<&EmbeddingBatch>,
    phi: f64,
    temperature: f64,
) -> Result<LossValue> {
    if q.len() < 2 {
        return Err(Error::config(
            "entropy_loss requires at least 2 tuples (M >= 2)",
        ));
    }
    loss_impl(q, ind, hard_neg, phi, &RegulatorSet::empty(), temperature)
}

/// Contrastive term plus 2N regulator terms built from the set's frozen
/// augmented embeddings. With an empty set this is exactly
/// `contrastive_loss`.
pub fn rcl_loss(
    q: &EmbeddingBatch,
    ind: &EmbeddingBatch,
    regs: &RegulatorSet,
    hard_neg: Option<&EmbeddingBatch>,
    temperature: f64,
) -> Result<LossValue> {
    loss_impl(q, ind, hard_neg, 0.0, regs, temperature)
}

/// Both sides of the log-mean-exp lower bound over the batch's normalized
/// dot-product matrices: `lhs` is the sum of log-mean-exp terms (one for
/// the query/index matrix plus one per regulator matrix on each side),
/// `rhs` the corresponding plain means. `lhs >= rhs` by Jensen's
/// inequality, with equality when each matrix is constant or m = 1.
pub fn jensen_bound_check(
    q: &EmbeddingBatch,
    ind: &EmbeddingBatch,
    regs: &RegulatorSet,
) -> Result<(f64, f64)> {
    check_batch_pair(q, ind)?;
    let m = q.len();
    if m == 0 {
        return Err(Error::config("jensen_bound_check requires m >= 1"));
    }
    regs.check_against(m, q.dim())?;
    let qn = Normed::new(&q.rows, "query batch")?;
    let indn = Normed::new(&ind.rows, "index batch")?;
    let aug_qn: Vec<Normed> = regs
        .aug_q
        .iter()
        .map(|mat| Normed::new(mat, "augmented query embeddings"))
        .collect::<Result<_>>()?;
    let aug_indn: Vec<Normed> = regs
        .aug_ind
        .iter()
        .map(|mat| Normed::new(mat, "augmented index embeddings"))
        .collect::<Result<_>>()?;

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut add_matrix = |left: &Normed, right: &Normed| {
        let ln_m = (m as f64).ln();
        let mut lme = 0.0;
        let mut mean = 0.0;
        for i in 0..m {
            let row: Vec<f64> = (0..m)
                .map(|j| {
                    left.unit[i]
                        .iter()
                        .zip(&right.unit[j])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            lme += logsumexp(&row) - ln_m;
            mean += row.iter().sum::<f64>();
        }
        lhs += lme / m as f64;
        rhs += mean / (m * m) as f64;
    };
    add_matrix(&qn, &indn);
    for aug in &aug_qn {
        add_matrix(&qn, aug);
    }
    for aug in &aug_indn {
        add_matrix(&indn, aug);
    }
    Ok((lhs, rhs))
}
