//! Accuracy and diversity metrics, report aggregation, and the
//! accuracy-diversity tradeoff sweep.
//!
//! Accuracy metrics (AUC, MRR, nDCG@k) need both a click and a non-click in
//! the impression; impressions failing that are excluded from accuracy but
//! still count toward diversity. Diversity metrics (ILAD@k, ILMD@k) are the
//! mean and minimum pairwise cosine distance (1 - similarity) of the top-k
//! ranked items, skipping impressions with fewer than two items and
//! clamping k to the list length.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rerank::{rank_descending, rerank_pipeline, RerankMethod};
use crate::tensor::Real;
use crate::text::{EmbeddingTable, SimilarityMatrix};
use crate::training::{train, ImpressionSample, TrainingConfig};

/// Metric means over a dataset split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub auc: Real,
    pub mrr: Real,
    pub ndcg5: Real,
    pub ndcg10: Real,
    pub ilad5: Real,
    pub ilad10: Real,
    pub ilmd5: Real,
    pub ilmd10: Real,
    pub n_impressions: usize,
    /// Impressions that contributed to the accuracy means.
    pub n_accuracy: usize,
    /// Impressions that contributed to the diversity means at each k.
    pub n_diversity5: usize,
    pub n_diversity10: usize,
}

pub const REPORT_HEADER: &str = "auc\tmrr\tndcg5\tndcg10\tilad5\tilad10\tilmd5\tilmd10\tn_impressions";

impl EvalReport {
    pub fn metrics(&self) -> [Real; 8] {
        [
            self.auc, self.mrr, self.ndcg5, self.ndcg10, self.ilad5, self.ilad10, self.ilmd5,
            self.ilmd10,
        ]
    }

    pub fn tsv_row(&self) -> String {
        let m = self.metrics();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], self.n_impressions
        )
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let names = [
            "auc", "mrr", "ndcg5", "ndcg10", "ilad5", "ilad10", "ilmd5", "ilmd10",
        ];
        let mut out = String::new();
        for (name, value) in names.iter().zip(self.metrics()) {
            out.push_str(&format!("{name:<8} {value:.6}\n"));
        }
        out.push_str(&format!(
            "impressions {} (accuracy {}, diversity@5 {}, diversity@10 {})\n",
            self.n_impressions, self.n_accuracy, self.n_diversity5, self.n_diversity10
        ));
        out
    }
}

/// Fraction of (clicked, non-clicked) pairs ranked correctly, ties worth
/// half. `None` when the impression has no such pair.
pub fn auc(scores: &[Real], labels: &[u8]) -> Option<Real> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li == 0 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        return None;
    }
    Some(wins / pairs)
}

/// MRR averaged over all clicked items, and nDCG@k with unit gains.
/// Ranking is by descending score with ties broken by the original index.
/// `None` when the impression has no clicked item.
pub fn mrr_and_ndcg(scores: &[Real], labels: &[u8], k: usize) -> Option<(Real, Real)> {
    let positives = labels.iter().filter(|&&l| l != 0).count();
    if positives == 0 {
        return None;
    }
    let order = rank_descending(scores);
    let mut mrr = 0.0;
    let mut dcg = 0.0;
    for (pos, &item) in order.iter().enumerate() {
        if labels[item] == 0 {
            continue;
        }
        let rank = pos + 1;
        mrr += 1.0 / rank as Real;
        if rank <= k {
            dcg += 1.0 / ((rank + 1) as Real).log2();
        }
    }
    mrr /= positives as Real;
    let mut idcg = 0.0;
    for rank in 1..=positives.min(k) {
        idcg += 1.0 / ((rank + 1) as Real).log2();
    }
    Some((mrr, dcg / idcg))
}

/// Mean and minimum pairwise distance (1 - similarity) over the unordered
/// pairs of the given top-k items. `None` for fewer than two items.
pub fn intra_list_metrics(top_k: &[usize], similarity: &SimilarityMatrix) -> Option<(Real, Real)> {
    if top_k.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut min = Real::INFINITY;
    let mut pairs = 0.0;
    for (a, &i) in top_k.iter().enumerate() {
        for &j in &top_k[a + 1..] {
            let d = 1.0 - similarity.get(i, j);
            sum += d;
            min = min.min(d);
            pairs += 1.0;
        }
    }
    Some((sum / pairs, min))
}

/// Evaluates a scoring function over every impression and averages the
/// per-impression metrics (unweighted).
pub fn evaluate<F>(samples: &[ImpressionSample], mut score_fn: F) -> Result<EvalReport>
where
    F: FnMut(usize, &ImpressionSample) -> Result<Vec<Real>>,
{
    if samples.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let mut report = EvalReport {
        n_impressions: samples.len(),
        ..Default::default()
    };
    let mut acc = [0.0 as Real; 4];
    let mut div = [0.0 as Real; 4];
    for (idx, sample) in samples.iter().enumerate() {
        sample.validate()?;
        let scores = score_fn(idx, sample)?;
        if scores.len() != sample.len() {
            return Err(Error::invalid(format!(
                "impression {}: {} scores for {} candidates",
                sample.id,
                scores.len(),
                sample.len()
            )));
        }
        if let Some(a) = auc(&scores, &sample.labels) {
            // the same impressions that have an AUC pair have P >= 1
            let (mrr, ndcg5) = mrr_and_ndcg(&scores, &sample.labels, 5).unwrap();
            let (_, ndcg10) = mrr_and_ndcg(&scores, &sample.labels, 10).unwrap();
            acc[0] += a;
            acc[1] += mrr;
            acc[2] += ndcg5;
            acc[3] += ndcg10;
            report.n_accuracy += 1;
        }
        let order = rank_descending(&scores);
        for (slot, k) in [(0, 5usize), (1, 10usize)] {
            let top: &[usize] = &order[..k.min(order.len())];
            if let Some((ilad, ilmd)) = intra_list_metrics(top, &sample.similarity) {
                div[slot * 2] += ilad;
                div[slot * 2 + 1] += ilmd;
                if slot == 0 {
                    report.n_diversity5 += 1;
                } else {
                    report.n_diversity10 += 1;
                }
            }
        }
    }
    if report.n_accuracy > 0 {
        let n = report.n_accuracy as Real;
        report.auc = acc[0] / n;
        report.mrr = acc[1] / n;
        report.ndcg5 = acc[2] / n;
        report.ndcg10 = acc[3] / n;
    }
    if report.n_diversity5 > 0 {
        report.ilad5 = div[0] / report.n_diversity5 as Real;
        report.ilmd5 = div[1] / report.n_diversity5 as Real;
    }
    if report.n_diversity10 > 0 {
        report.ilad10 = div[2] / report.n_diversity10 as Real;
        report.ilmd10 = div[3] / report.n_diversity10 as Real;
    }
    Ok(report)
}

/// Stable per-impression seed so evaluation order cannot leak into results.
pub fn impression_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Scores every impression with the model (averaging permutation plans per
/// the model config) and evaluates.
pub fn evaluate_model(
    model: &Model,
    samples: &[ImpressionSample],
    eval_seed: u64,
) -> Result<EvalReport> {
    evaluate(samples, |idx, sample| {
        model.score(
            &sample.history,
            &sample.candidates,
            impression_seed(eval_seed, idx),
        )
    })
}

/// Model scores post-processed by a reranker; the reranked order is turned
/// back into descending pseudo-scores for the accuracy metrics.
pub fn evaluate_reranked(
    model: &Model,
    samples: &[ImpressionSample],
    method: RerankMethod,
    tradeoff: Real,
    eval_seed: u64,
) -> Result<EvalReport> {
    evaluate(samples, |idx, sample| {
        let scores = model.score(
            &sample.history,
            &sample.candidates,
            impression_seed(eval_seed, idx),
        )?;
        let order = rerank_pipeline(&scores, &sample.similarity, method, tradeoff, None)?;
        Ok(order_to_scores(&order))
    })
}

/// Positional pseudo-scores: item at rank r gets M - r, so
/// `rank_descending` reproduces the order exactly.
pub fn order_to_scores(order: &[usize]) -> Vec<Real> {
    let mut scores = vec![0.0; order.len()];
    for (pos, &item) in order.iter().enumerate() {
        scores[item] = (order.len() - pos) as Real;
    }
    scores
}

/// Elementwise mean and sample standard deviation over repeated reports.
pub fn aggregate_reports(reports: &[EvalReport]) -> (EvalReport, EvalReport) {
    let n = reports.len().max(1) as Real;
    let mut mean = EvalReport {
        n_impressions: reports.first().map_or(0, |r| r.n_impressions),
        n_accuracy: reports.first().map_or(0, |r| r.n_accuracy),
        n_diversity5: reports.first().map_or(0, |r| r.n_diversity5),
        n_diversity10: reports.first().map_or(0, |r| r.n_diversity10),
        ..Default::default()
    };
    let mut sums = [0.0 as Real; 8];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.metrics()) {
            *s += v;
        }
    }
    sums.iter_mut().for_each(|s| *s /= n);
    [
        &mut mean.auc,
        &mut mean.mrr,
        &mut mean.ndcg5,
        &mut mean.ndcg10,
        &mut mean.ilad5,
        &mut mean.ilad10,
        &mut mean.ilmd5,
        &mut mean.ilmd10,
    ]
    .into_iter()
    .zip(sums)
    .for_each(|(slot, v)| *slot = v);

    let mut std = EvalReport::default();
    if reports.len() > 1 {
        let mut vars = [0.0 as Real; 8];
        for r in reports {
            for ((v, m), slot) in r.metrics().iter().zip(sums).zip(vars.iter_mut()) {
                *slot += (v - m) * (v - m);
            }
        }
        vars.iter_mut().for_each(|v| *v = (*v / (n - 1.0)).sqrt());
        [
            &mut std.auc,
            &mut std.mrr,
            &mut std.ndcg5,
            &mut std.ndcg10,
            &mut std.ilad5,
            &mut std.ilad10,
            &mut std.ilmd5,
            &mut std.ilmd10,
        ]
        .into_iter()
        .zip(vars)
        .for_each(|(slot, v)| *slot = v);
    }
    (mean, std)
}

// ── Tradeoff sweep ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKnob {
    /// Retrain per grid value with that diversity coefficient.
    Lambda,
    /// Train once with lambda = 0, rerank per grid value with DPP.
    Theta,
}

impl std::str::FromStr for SweepKnob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepKnob::Lambda),
            "theta" => Ok(SweepKnob::Theta),
            other => Err(Error::invalid(format!(
                "unknown sweep knob `{other}` (expected lambda or theta)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub knob: Real,
    pub report: EvalReport,
}

pub fn sweep_table(knob: SweepKnob, rows: &[SweepRow]) -> String {
    let name = match knob {
        SweepKnob::Lambda => "lambda",
        SweepKnob::Theta => "theta",
    };
    let mut out = format!("{name}\t{REPORT_HEADER}\n");
    for row in rows {
        out.push_str(&format!("{}\t{}\n", row.knob, row.report.tsv_row()));
    }
    out
}

/// Accuracy/diversity frontier over a lambda or theta grid. Every lambda
/// run shares the same parameter init and data order (same seeds); theta
/// rows share one base model trained with lambda = 0.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_sweep(
    model_config: &crate::model::ModelConfig,
    table: &EmbeddingTable,
    train_samples: &[ImpressionSample],
    test_samples: &[ImpressionSample],
    train_config: &TrainingConfig,
    knob: SweepKnob,
    grid: &[Real],
    eval_seed: u64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    match knob {
        SweepKnob::Lambda => {
            for &lambda in grid {
                let mut model = Model::init(model_config.clone(), table, train_config.seed)?;
                let cfg = TrainingConfig {
                    lambda,
                    ..train_config.clone()
                };
                train(&mut model, train_samples, &cfg)?;
                let report = evaluate_model(&model, test_samples, eval_seed)?;
                rows.push(SweepRow {
                    knob: lambda,
                    report,
                });
            }
        }
        SweepKnob::Theta => {
            let mut model = Model::init(model_config.clone(), table, train_config.seed)?;
            let cfg = TrainingConfig {
                lambda: 0.0,
                ..train_config.clone()
            };
            train(&mut model, train_samples, &cfg)?;
            for &theta in grid {
                let report =
                    evaluate_reranked(&model, test_samples, RerankMethod::Dpp, theta, eval_seed)?;
                rows.push(SweepRow {
                    knob: theta,
                    report,
                });
            }
        }
    }
    Ok(rows)
}
