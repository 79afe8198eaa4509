//! Loss functions and the training loop.
//!
//! The list-wise contrastive loss packs every clicked candidate against all
//! non-clicked candidates of the same impression and sums the negative
//! log-likelihood of the clicked item in each (1+Q)-way softmax, so an
//! impression with more clicks contributes proportionally more loss. The
//! diversity term is the full double sum over score products weighted by
//! semantic similarity; its coefficient trades accuracy for intra-list
//! diversity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::model::{Model, PermutationPlan};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{Real, Tensor};
use crate::text::SimilarityMatrix;

/// One logged ranking event, fully resolved to token ids: the user's
/// clicked-news history, the candidate titles, their click labels and the
/// precomputed similarity matrix of the candidate list.
#[derive(Debug, Clone)]
pub struct ImpressionSample {
    pub id: String,
    pub history: Vec<Vec<u32>>,
    pub candidates: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    pub similarity: SimilarityMatrix,
}

impl ImpressionSample {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn positives(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.candidates.len() {
            return Err(Error::invalid(format!(
                "impression {}: {} labels for {} candidates",
                self.id,
                self.labels.len(),
                self.candidates.len()
            )));
        }
        if self.similarity.size != self.candidates.len() {
            return Err(Error::invalid(format!(
                "impression {}: similarity matrix of size {} for {} candidates",
                self.id,
                self.similarity.size,
                self.candidates.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Listwise,
    Pointwise,
    Pairwise,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "listwise" => Ok(Objective::Listwise),
            "pointwise" => Ok(Objective::Pointwise),
            "pairwise" => Ok(Objective::Pairwise),
            other => Err(Error::invalid(format!(
                "unknown objective `{other}` (expected listwise, pointwise or pairwise)"
            ))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Listwise => "listwise",
            Objective::Pointwise => "pointwise",
            Objective::Pairwise => "pairwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Diversity coefficient; 0 disables the regularizer.
    pub lambda: Real,
    pub objective: Objective,
    pub epochs: usize,
    /// Impressions per optimizer step (gradient accumulation window).
    pub batch_size: usize,
    pub seed: u64,
    pub lr: Real,
    /// Squash scores with a sigmoid inside the diversity term only; an
    /// escape hatch for unstable runs, off by default.
    pub div_sigmoid: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 20.0,
            objective: Objective::Listwise,
            epochs: 3,
            batch_size: 1,
            seed: 0,
            lr: 1e-4,
            div_sigmoid: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config {
                field: "lambda".into(),
                msg: "must be >= 0".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config {
                field: "batch_size".into(),
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }
}

// ── Loss functions ──────────────────────────────────────────────────

/// For each clicked candidate, the negative log-likelihood of its (1+Q)-way
/// softmax against all non-clicked candidates, summed over clicks.
/// Stabilized by max-subtraction. No positives is an error (such samples
/// are filtered upstream); no negatives contributes zero by convention.
pub fn listwise_contrastive_loss(
    g: &mut Graph,
    scores: TensorId,
    labels: &[u8],
) -> Result<TensorId> {
    let pos: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l != 0).map(|(i, _)| i).collect();
    let neg: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == 0).map(|(i, _)| i).collect();
    if pos.is_empty() {
        return Err(Error::Empty("positive set of a training impression".into()));
    }
    if neg.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut total: Option<TensorId> = None;
    for &p in &pos {
        let mut idx = Vec::with_capacity(1 + neg.len());
        idx.push(p);
        idx.extend_from_slice(&neg);
        let group = g.gather_rows(scores, &idx)?;
        let shift = g.value(group).data().iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let shifted = g.add_scalar(group, -shift);
        let exps = g.exp(shifted);
        let denom = g.sum(exps);
        let lse_rel = g.log(denom);
        let lse = g.add_scalar(lse_rel, shift);
        let own = g.gather_rows(scores, &[p])?;
        let term = g.sub(lse, own)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap())
}

/// Full double sum over candidate pairs (diagonal included) of
/// `y_i * y_j * s_ij`. With `squash`, a sigmoid is applied to the scores
/// inside this loss only.
pub fn diversity_regularization_loss(
    g: &mut Graph,
    scores: TensorId,
    similarity: &SimilarityMatrix,
    squash: bool,
) -> Result<TensorId> {
    let m = g.value(scores).numel();
    if similarity.size != m {
        return Err(Error::ShapeMismatch {
            op: "diversity_regularization_loss",
            lhs: vec![m],
            rhs: vec![similarity.size, similarity.size],
        });
    }
    let y = if squash {
        // sigmoid(x) = 0.5 * tanh(x/2) + 0.5
        let half = g.scale(scores, 0.5);
        let t = g.tanh(half);
        let t = g.scale(t, 0.5);
        g.add_scalar(t, 0.5)
    } else {
        scores
    };
    let s = g.constant(Tensor::new(
        vec![similarity.size, similarity.size],
        similarity.data().to_vec(),
    )?);
    let sy = g.matmul(s, y)?;
    let prod = g.mul(y, sy)?;
    Ok(g.sum(prod))
}

/// The three loss components of one impression.
pub struct LossParts {
    pub total: TensorId,
    pub rec: TensorId,
    pub div: TensorId,
}

/// `L = L_base + lambda * L_div` where the base term is picked by the
/// objective (list-wise by default).
pub fn combined_loss(
    g: &mut Graph,
    scores: TensorId,
    sample: &ImpressionSample,
    objective: Objective,
    lambda: Real,
    div_sigmoid: bool,
) -> Result<LossParts> {
    let rec = match objective {
        Objective::Listwise => listwise_contrastive_loss(g, scores, &sample.labels)?,
        Objective::Pointwise => pointwise_loss(g, scores, &sample.labels)?,
        Objective::Pairwise => pairwise_bpr_loss(g, scores, &sample.labels)?,
    };
    let div = diversity_regularization_loss(g, scores, &sample.similarity, div_sigmoid)?;
    let weighted = g.scale(div, lambda);
    let total = g.add(rec, weighted)?;
    Ok(LossParts { total, rec, div })
}

/// Mean binary cross-entropy of sigmoid(score) against the click labels,
/// via the stable identity `BCE = softplus(y_hat) - y * y_hat`.
pub fn pointwise_loss(g: &mut Graph, scores: TensorId, labels: &[u8]) -> Result<TensorId> {
    let m = g.value(scores).numel();
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            op: "pointwise_loss",
            lhs: vec![m],
            rhs: vec![labels.len()],
        });
    }
    let y = g.constant(Tensor::from_vec(labels.iter().map(|&l| l as Real).collect()));
    let sp = g.softplus(scores)?;
    let yy = g.mul(y, scores)?;
    let diff = g.sub(sp, yy)?;
    Ok(g.mean(diff))
}

/// Mean over all (clicked, non-clicked) pairs of `-ln sigmoid(pos - neg)`,
/// i.e. `softplus(neg - pos)`.
pub fn pairwise_bpr_loss(g: &mut Graph, scores: TensorId, labels: &[u8]) -> Result<TensorId> {
    let pos: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l != 0).map(|(i, _)| i).collect();
    let neg: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == 0).map(|(i, _)| i).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("positive-negative pair set".into()));
    }
    let negs = g.gather_rows(scores, &neg)?;
    let mut total: Option<TensorId> = None;
    for &p in &pos {
        let rep = g.gather_rows(scores, &vec![p; neg.len()])?;
        let diff = g.sub(negs, rep)?;
        let sp = g.softplus(diff)?;
        let s = g.sum(sp);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / (pos.len() * neg.len()) as Real))
}

// ── Training loop ───────────────────────────────────────────────────

/// One line of the loss trace, emitted per optimization step.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: u64,
    pub l_rec: Real,
    pub l_div: Real,
    pub l_total: Real,
}

impl TraceRow {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.step, self.l_rec, self.l_div, self.l_total
        )
    }
}

#[derive(Debug, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Impressions dropped because they had no positives (or, for the
    /// pair-wise objective, no valid pair).
    pub skipped: usize,
}

impl TrainReport {
    pub fn epoch_mean_total(&self, epoch: usize) -> Option<Real> {
        let rows: Vec<&TraceRow> = self.trace.iter().filter(|r| r.epoch == epoch).collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.l_total).sum::<Real>() / rows.len() as Real)
    }
}

/// Seeded-shuffle epoch loop: one forward/backward per impression, Adam
/// step every `batch_size` impressions. Deterministic given the seed.
pub fn train(
    model: &mut Model,
    samples: &[ImpressionSample],
    cfg: &TrainingConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    for s in samples {
        s.validate()?;
    }
    let usable: Vec<&ImpressionSample> = samples
        .iter()
        .filter(|s| {
            let p = s.labels.iter().filter(|&&l| l != 0).count();
            match cfg.objective {
                Objective::Pairwise => p >= 1 && p < s.labels.len(),
                _ => p >= 1,
            }
        })
        .collect();
    let skipped = samples.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Empty("training dataset (no impression has a click)".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut report = TrainReport {
        trace: Vec::new(),
        skipped,
    };
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut pending = 0usize;
        for &si in &order {
            let sample = usable[si];
            let plan = PermutationPlan::sample(model.config.heads, sample.len(), rng.random());
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let scores = model.forward(&mut g, &bound, &sample.history, &sample.candidates, &plan)?;
            let parts = combined_loss(
                &mut g,
                scores,
                sample,
                cfg.objective,
                cfg.lambda,
                cfg.div_sigmoid,
            )?;
            let total = g.value(parts.total).item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at impression {}",
                    sample.id
                )));
            }
            g.backward(parts.total)?;
            model.accumulate_grads(&g, &bound);
            step += 1;
            report.trace.push(TraceRow {
                epoch,
                step,
                l_rec: g.value(parts.rec).item(),
                l_div: g.value(parts.div).item(),
                l_total: total,
            });
            pending += 1;
            if pending == cfg.batch_size {
                apply_step(model, &mut adam, pending)?;
                pending = 0;
            }
        }
        if pending > 0 {
            apply_step(model, &mut adam, pending)?;
        }
    }
    Ok(report)
}

fn apply_step(model: &mut Model, adam: &mut AdamState, window: usize) -> Result<()> {
    model.params.freeze_pad_row();
    adam_step(
        &mut model.params.flat_mut(),
        adam,
        1.0 / window as Real,
    )?;
    model.params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::model::{ListEncoderMode, ModelConfig};
    use crate::text::{EmbeddingTable, Vocab, PAD};
    use std::collections::HashMap;

    fn scores_graph(values: &[Real]) -> (Graph, TensorId) {
        let mut g = Graph::new();
        let s = g.constant(Tensor::from_vec(values.to_vec()));
        (g, s)
    }

    fn unit_similarity(m: usize) -> SimilarityMatrix {
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            data[i * m + i] = 1.0;
        }
        SimilarityMatrix::from_raw(m, data).unwrap()
    }

    // Independent oracle: for each positive, build the (1+Q)-way softmax
    // explicitly and accumulate -ln p.
    fn listwise_oracle(scores: &[Real], labels: &[u8]) -> Real {
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li == 0 {
                continue;
            }
            let mut denom = (scores[i] as f64).exp();
            for (j, &lj) in labels.iter().enumerate() {
                if lj == 0 {
                    denom += (scores[j] as f64).exp();
                }
            }
            total += -((scores[i] as f64).exp() / denom).ln();
        }
        total as Real
    }

    fn diversity_oracle(scores: &[Real], s: &SimilarityMatrix) -> Real {
        let m = scores.len();
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                total += scores[i] * scores[j] * s.get(i, j);
            }
        }
        total
    }

    #[test]
    fn listwise_symmetric_pair_is_ln2() {
        let (mut g, s) = scores_graph(&[0.4, 0.4]);
        let l = listwise_contrastive_loss(&mut g, s, &[1, 0]).unwrap();
        assert!((g.value(l).item() - (2.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn listwise_matches_direct_evaluation() {
        let (mut g, s) = scores_graph(&[1.0, 0.0, 0.0]);
        let l = listwise_contrastive_loss(&mut g, s, &[1, 0, 0]).unwrap();
        let e = (1.0 as Real).exp();
        let expected = -(e / (e + 2.0)).ln();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
        assert!((g.value(l).item() - 0.551445).abs() < 1e-6);
    }

    #[test]
    fn listwise_two_positives_sum_of_singles() {
        let scores = [0.3, -0.2, 0.9, 0.1, -0.7];
        let labels = [1, 0, 1, 0, 0];
        let (mut g, s) = scores_graph(&scores);
        let l = listwise_contrastive_loss(&mut g, s, &labels).unwrap();
        // per-positive single losses against the impression's negatives only
        let (mut g1, s1) = scores_graph(&[scores[0], scores[1], scores[3], scores[4]]);
        let l1 = listwise_contrastive_loss(&mut g1, s1, &[1, 0, 0, 0]).unwrap();
        let (mut g2, s2) = scores_graph(&[scores[2], scores[1], scores[3], scores[4]]);
        let l2 = listwise_contrastive_loss(&mut g2, s2, &[1, 0, 0, 0]).unwrap();
        let sum = g1.value(l1).item() + g2.value(l2).item();
        assert!((g.value(l).item() - sum).abs() < 1e-12);
        assert!((g.value(l).item() - listwise_oracle(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn listwise_no_positive_is_error_no_negative_is_zero() {
        let (mut g, s) = scores_graph(&[0.1, 0.2]);
        assert!(listwise_contrastive_loss(&mut g, s, &[0, 0]).is_err());
        let l = listwise_contrastive_loss(&mut g, s, &[1, 1]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn listwise_is_shift_invariant_diversity_is_not() {
        let scores = [0.5, -1.0, 0.3, 2.0];
        let labels = [0, 1, 0, 1];
        let shifted: Vec<Real> = scores.iter().map(|&v| v + 3.7).collect();
        let (mut g1, s1) = scores_graph(&scores);
        let l1 = listwise_contrastive_loss(&mut g1, s1, &labels).unwrap();
        let (mut g2, s2) = scores_graph(&shifted);
        let l2 = listwise_contrastive_loss(&mut g2, s2, &labels).unwrap();
        assert!((g1.value(l1).item() - g2.value(l2).item()).abs() < 1e-12);

        let sim = unit_similarity(4);
        let (mut g3, s3) = scores_graph(&scores);
        let d1 = diversity_regularization_loss(&mut g3, s3, &sim, false).unwrap();
        let (mut g4, s4) = scores_graph(&shifted);
        let d2 = diversity_regularization_loss(&mut g4, s4, &sim, false).unwrap();
        assert!((g3.value(d1).item() - g4.value(d2).item()).abs() > 1.0);
    }

    #[test]
    fn diversity_loss_cases() {
        // zero scores
        let (mut g, s) = scores_graph(&[0.0, 0.0]);
        let d = diversity_regularization_loss(&mut g, s, &unit_similarity(2), false).unwrap();
        assert_eq!(g.value(d).item(), 0.0);
        // identity similarity: sum of squares
        let (mut g, s) = scores_graph(&[1.0, 2.0]);
        let d = diversity_regularization_loss(&mut g, s, &unit_similarity(2), false).unwrap();
        assert!((g.value(d).item() - 5.0).abs() < 1e-12);
        // off-diagonal 0.5: 1 + 4 + 2 * (1*2*0.5) = 7
        let sim = SimilarityMatrix::from_raw(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let (mut g, s) = scores_graph(&[1.0, 2.0]);
        let d = diversity_regularization_loss(&mut g, s, &sim, false).unwrap();
        assert!((g.value(d).item() - 7.0).abs() < 1e-12);
        assert!((g.value(d).item() - diversity_oracle(&[1.0, 2.0], &sim)).abs() < 1e-12);
    }

    #[test]
    fn diversity_gradient_is_two_s_y() {
        let scores = [0.7, -0.4, 1.2];
        let sim = SimilarityMatrix::from_raw(
            3,
            vec![1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0],
        )
        .unwrap();
        let mut g = Graph::new();
        let s = g.leaf(Tensor::from_vec(scores.to_vec()));
        let d = diversity_regularization_loss(&mut g, s, &sim, false).unwrap();
        g.backward(d).unwrap();
        let grad = g.grad(s).unwrap();
        for i in 0..3 {
            let expected: Real = 2.0 * (0..3).map(|j| sim.get(i, j) * scores[j]).sum::<Real>();
            assert!((grad[i] - expected).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn combined_loss_composition() {
        let scores = [0.2, -0.5, 0.8];
        let labels = vec![1u8, 0, 0];
        let sim = SimilarityMatrix::from_raw(
            3,
            vec![1.0, 0.4, 0.1, 0.4, 1.0, -0.3, 0.1, -0.3, 1.0],
        )
        .unwrap();
        let sample = ImpressionSample {
            id: "t".into(),
            history: vec![],
            candidates: vec![vec![PAD]; 3],
            labels,
            similarity: sim.clone(),
        };
        let rec_oracle = listwise_oracle(&scores, &sample.labels);
        let div_oracle = diversity_oracle(&scores, &sim);
        for lambda in [0.0, 1.0, 20.0] {
            let (mut g, s) = scores_graph(&scores);
            let parts =
                combined_loss(&mut g, s, &sample, Objective::Listwise, lambda, false).unwrap();
            let expected = rec_oracle + lambda * div_oracle;
            assert!(
                (g.value(parts.total).item() - expected).abs() < 1e-12,
                "lambda {lambda}"
            );
            if lambda == 0.0 {
                assert_eq!(g.value(parts.total).item(), g.value(parts.rec).item());
            }
        }
    }

    #[test]
    fn pointwise_cases() {
        // sigma(0) = 0.5 against label 1: ln 2 per item
        let (mut g, s) = scores_graph(&[0.0, 0.0]);
        let l = pointwise_loss(&mut g, s, &[1, 1]).unwrap();
        assert!((g.value(l).item() - (2.0 as Real).ln()).abs() < 1e-12);
        // perfect large-margin scores: loss tends to zero
        let (mut g, s) = scores_graph(&[30.0, -30.0]);
        let l = pointwise_loss(&mut g, s, &[1, 0]).unwrap();
        assert!(g.value(l).item() < 1e-12);
        // random case matches a naive per-item loop
        let scores = [0.3, -1.2, 2.4, 0.0];
        let labels = [0u8, 1, 1, 0];
        let (mut g, s) = scores_graph(&scores);
        let l = pointwise_loss(&mut g, s, &labels).unwrap();
        let naive: Real = scores
            .iter()
            .zip(&labels)
            .map(|(&y, &t)| {
                let p = 1.0 / (1.0 + (-y as f64).exp());
                -(if t == 1 { p.ln() } else { (1.0 - p).ln() }) as Real
            })
            .sum::<Real>()
            / 4.0;
        assert!((g.value(l).item() - naive).abs() < 1e-12);
    }

    #[test]
    fn pairwise_cases() {
        // equal scores: ln 2
        let (mut g, s) = scores_graph(&[1.0, 1.0]);
        let l = pairwise_bpr_loss(&mut g, s, &[1, 0]).unwrap();
        assert!((g.value(l).item() - (2.0 as Real).ln()).abs() < 1e-12);
        // margin 2: -ln sigma(2)
        let (mut g, s) = scores_graph(&[2.0, 0.0]);
        let l = pairwise_bpr_loss(&mut g, s, &[1, 0]).unwrap();
        let expected = (1.0 + (-2.0 as f64).exp()).ln() as Real;
        assert!((g.value(l).item() - expected).abs() < 1e-12);
        assert!((g.value(l).item() - 0.126928).abs() < 1e-6);
        // P=2, Q=3: matches the 6-pair naive loop
        let scores = [0.4, -0.3, 1.1, 0.0, -2.0];
        let labels = [1u8, 0, 1, 0, 0];
        let (mut g, s) = scores_graph(&scores);
        let l = pairwise_bpr_loss(&mut g, s, &labels).unwrap();
        let mut naive = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li == 0 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                naive += ((scores[j] - scores[i]) as f64).exp().ln_1p() as Real;
            }
        }
        naive /= 6.0;
        assert!((g.value(l).item() - naive).abs() < 1e-12);
        // no valid pair
        let (mut g, s) = scores_graph(&[1.0]);
        assert!(pairwise_bpr_loss(&mut g, s, &[1]).is_err());
    }

    // ── training-loop machinery ─────────────────────────────────────

    fn tiny_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            embed_dim: 5,
            model_dim: 8,
            heads: 2,
            max_title_len: 3,
            max_history_len: 3,
            max_list_len: 8,
            list_encoder_mode: ListEncoderMode::Permutation,
            permutation_samples_at_inference: 1,
        };
        let mut vocab = Vocab::new();
        for i in 0..8 {
            vocab.add_text(&format!("w{i}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loaded: HashMap<u32, Vec<Real>> = (1..vocab.len() as u32)
            .map(|id| (id, (0..5).map(|_| rng.random_range(-0.5..0.5)).collect()))
            .collect();
        let table = EmbeddingTable::from_loaded(5, &vocab, loaded, seed);
        Model::init(cfg, &table, seed).unwrap()
    }

    fn tiny_samples(table_seed: u64) -> Vec<ImpressionSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
        (0..4)
            .map(|i| {
                let m = 3 + (i % 2);
                let candidates: Vec<Vec<u32>> = (0..m)
                    .map(|_| {
                        vec![
                            rng.random_range(2..9) as u32,
                            rng.random_range(2..9) as u32,
                            PAD,
                        ]
                    })
                    .collect();
                let mut labels = vec![0u8; m];
                labels[i % m] = 1;
                let emb: Vec<Vec<Real>> = (0..m)
                    .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                ImpressionSample {
                    id: format!("imp{i}"),
                    history: vec![vec![2, 3, PAD], vec![4, PAD, PAD]],
                    candidates,
                    labels,
                    similarity: SimilarityMatrix::from_embeddings(&emb),
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_params_at_init() {
        let mut model = tiny_model(3);
        let before: Vec<Tensor> = model.params.flat().iter().map(|p| p.value.clone()).collect();
        let cfg = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        train(&mut model, &tiny_samples(1), &cfg).unwrap();
        let after: Vec<Tensor> = model.params.flat().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let cfg = TrainingConfig {
            epochs: 2,
            lambda: 5.0,
            lr: 1e-3,
            seed: 9,
            ..Default::default()
        };
        let samples = tiny_samples(1);
        let mut m1 = tiny_model(3);
        train(&mut m1, &samples, &cfg).unwrap();
        let mut m2 = tiny_model(3);
        train(&mut m2, &samples, &cfg).unwrap();
        for (a, b) in m1.params.flat().iter().zip(m2.params.flat().iter()) {
            assert_eq!(a.value, b.value, "{} diverged", a.name);
        }
    }

    #[test]
    fn impressions_without_positives_are_skipped() {
        let mut samples = tiny_samples(1);
        samples[0].labels.iter_mut().for_each(|l| *l = 0);
        let mut model = tiny_model(3);
        let cfg = TrainingConfig {
            epochs: 1,
            ..Default::default()
        };
        let report = train(&mut model, &samples, &cfg).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.trace.len(), samples.len() - 1);
    }

    #[test]
    fn trace_steps_are_monotone() {
        let mut model = tiny_model(4);
        let cfg = TrainingConfig {
            epochs: 2,
            ..Default::default()
        };
        let report = train(&mut model, &tiny_samples(2), &cfg).unwrap();
        for w in report.trace.windows(2) {
            assert_eq!(w[1].step, w[0].step + 1);
        }
    }

    #[test]
    fn full_model_combined_loss_passes_gradient_check() {
        let model = tiny_model(5);
        let sample = &tiny_samples(6)[0];
        let plan = PermutationPlan::sample(model.config.heads, sample.len(), 1234);
        let mut tensors: Vec<Tensor> =
            model.params.flat().iter().map(|p| p.value.clone()).collect();
        let err = finite_difference_check(&mut tensors, 1e-5, |g, ids| {
            let bound = model.bind_from(ids);
            let scores = model.forward(g, &bound, &sample.history, &sample.candidates, &plan)?;
            let parts = combined_loss(g, scores, sample, Objective::Listwise, 20.0, false)?;
            Ok(parts.total)
        })
        .unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn loss_gradients_pass_gradient_check() {
        let labels = [1u8, 0, 1, 0, 0];
        let sim = {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let emb: Vec<Vec<Real>> = (0..5)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            SimilarityMatrix::from_embeddings(&emb)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![Tensor::from_vec(
            (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )];
        // list-wise contrastive
        let err = finite_difference_check(&mut params, 1e-5, |g, ids| {
            listwise_contrastive_loss(g, ids[0], &labels)
        })
        .unwrap();
        assert!(err < 1e-5, "listwise: {err}");
        // diversity regularization
        let err = finite_difference_check(&mut params, 1e-5, |g, ids| {
            diversity_regularization_loss(g, ids[0], &sim, false)
        })
        .unwrap();
        assert!(err < 1e-5, "diversity: {err}");
        // point-wise and pair-wise variants
        let err = finite_difference_check(&mut params, 1e-5, |g, ids| {
            pointwise_loss(g, ids[0], &labels)
        })
        .unwrap();
        assert!(err < 1e-5, "pointwise: {err}");
        let err = finite_difference_check(&mut params, 1e-5, |g, ids| {
            pairwise_bpr_loss(g, ids[0], &labels)
        })
        .unwrap();
        assert!(err < 1e-5, "pairwise: {err}");
    }
}
