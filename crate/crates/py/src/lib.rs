//! Python bindings: rerankers, metrics, losses, the synthetic data
//! generator, and end-to-end train/evaluate/score entry points.
//!
//! Build with `cargo build --release -p listrec-python`, then import the
//! produced cdylib as `listrec` (see python/smoke_test.py).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use listrec_core::config::RunConfig;
use listrec_core::data::SyntheticSpec;
use listrec_core::eval;
use listrec_core::graph::Graph;
use listrec_core::model::Model as CoreModel;
use listrec_core::pipeline;
use listrec_core::rerank;
use listrec_core::tensor::Tensor;
use listrec_core::text::{tokenize, SimilarityMatrix, Vocab};
use listrec_core::training;

fn err(e: listrec_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_from_flat(m: usize, flat: Vec<f64>) -> PyResult<SimilarityMatrix> {
    SimilarityMatrix::from_raw(m, flat).map_err(err)
}

/// Greedy MMR selection over relevance scores and a row-major similarity
/// matrix; returns 0-based indices.
#[pyfunction]
#[pyo3(signature = (relevance, similarity, k, beta=0.5))]
fn mmr(relevance: Vec<f64>, similarity: Vec<f64>, k: usize, beta: f64) -> PyResult<Vec<usize>> {
    let sim = sim_from_flat(relevance.len(), similarity)?;
    let req = rerank::RerankRequest {
        relevance: &relevance,
        similarity: &sim,
        k,
        tradeoff: beta,
    };
    rerank::mmr_rerank(&req).map_err(err)
}

/// Fast greedy DPP MAP selection with the theta tradeoff kernel.
#[pyfunction]
#[pyo3(signature = (relevance, similarity, k, theta=0.9))]
fn dpp(relevance: Vec<f64>, similarity: Vec<f64>, k: usize, theta: f64) -> PyResult<Vec<usize>> {
    let sim = sim_from_flat(relevance.len(), similarity)?;
    let kernel = rerank::build_dpp_kernel(&relevance, &sim, theta).map_err(err)?;
    if k > relevance.len() {
        return Err(PyValueError::new_err(format!(
            "k = {k} exceeds {} items",
            relevance.len()
        )));
    }
    rerank::dpp_fast_greedy(&kernel, k).map_err(err)
}

/// Full reranking pipeline: min-max normalize, apply `none`/`mmr`/`dpp`,
/// return a complete ordering of all candidates.
#[pyfunction]
#[pyo3(signature = (scores, similarity, method="none", tradeoff=0.9, k=None))]
fn rerank_scores(
    scores: Vec<f64>,
    similarity: Vec<f64>,
    method: &str,
    tradeoff: f64,
    k: Option<usize>,
) -> PyResult<Vec<usize>> {
    let sim = sim_from_flat(scores.len(), similarity)?;
    let method: rerank::RerankMethod = method.parse().map_err(err)?;
    rerank::rerank_pipeline(&scores, &sim, method, tradeoff, k).map_err(err)
}

/// Pairwise click AUC with half credit for ties; None without a valid pair.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    eval::auc(&scores, &labels)
}

/// (MRR, nDCG@k); None when the impression has no click.
#[pyfunction]
#[pyo3(signature = (scores, labels, k=10))]
fn mrr_ndcg(scores: Vec<f64>, labels: Vec<u8>, k: usize) -> Option<(f64, f64)> {
    eval::mrr_and_ndcg(&scores, &labels, k)
}

/// (ILAD, ILMD) over the top-k of a ranking; None for fewer than 2 items.
#[pyfunction]
#[pyo3(signature = (order, similarity, k=10))]
fn intra_list(order: Vec<usize>, similarity: Vec<f64>, k: usize) -> PyResult<Option<(f64, f64)>> {
    let m = order.len();
    let sim = sim_from_flat(m, similarity)?;
    Ok(eval::intra_list_metrics(&order[..k.min(m)], &sim))
}

/// Cosine similarity matrix of embedding vectors, row-major.
#[pyfunction]
fn similarity_matrix(embeddings: Vec<Vec<f64>>) -> Vec<f64> {
    SimilarityMatrix::from_embeddings(&embeddings).data().to_vec()
}

/// List-wise contrastive loss of one impression.
#[pyfunction]
fn listwise_loss(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::from_vec(scores));
    let l = training::listwise_contrastive_loss(&mut g, s, &labels).map_err(err)?;
    Ok(g.value(l).item())
}

/// Diversity regularization (full double sum) of one impression.
#[pyfunction]
fn diversity_loss(scores: Vec<f64>, similarity: Vec<f64>) -> PyResult<f64> {
    let sim = sim_from_flat(scores.len(), similarity)?;
    let mut g = Graph::new();
    let s = g.constant(Tensor::from_vec(scores));
    let l = training::diversity_regularization_loss(&mut g, s, &sim, false).map_err(err)?;
    Ok(g.value(l).item())
}

/// `listwise + lambda * diversity` for one impression.
#[pyfunction]
#[pyo3(signature = (scores, labels, similarity, lam=20.0))]
fn combined_loss(
    scores: Vec<f64>,
    labels: Vec<u8>,
    similarity: Vec<f64>,
    lam: f64,
) -> PyResult<f64> {
    Ok(listwise_loss(scores.clone(), labels)? + lam * diversity_loss(scores, similarity)?)
}

/// Materializes a synthetic dataset directory (news.tsv, behaviors splits,
/// embeddings.txt, topics.tsv).
#[pyfunction]
#[pyo3(signature = (out_dir, seed=7, users=500, news=2000, topics=5, candidates=12))]
fn gen_data(
    out_dir: PathBuf,
    seed: u64,
    users: usize,
    news: usize,
    topics: usize,
    candidates: usize,
) -> PyResult<()> {
    let spec = SyntheticSpec {
        seed,
        n_users: users,
        n_news: news,
        n_topics: topics,
        candidates_per_impression: candidates,
        ..Default::default()
    };
    pipeline::gen_data(&spec, &out_dir).map_err(err)
}

fn config_from_overrides(overrides: Option<HashMap<String, String>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(overrides) = overrides {
        let mut pairs: Vec<_> = overrides.into_iter().collect();
        pairs.sort(); // deterministic application order
        for (k, v) in pairs {
            cfg.apply(&k, &v).map_err(err)?;
        }
    }
    Ok(cfg)
}

/// Trains a model from a dataset directory into a model directory.
/// `overrides` maps config keys (model_dim, heads, lambda, epochs, lr,
/// seed, ...) to values. Returns (steps, skipped, final_total_loss).
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, overrides=None))]
fn train(
    data_dir: PathBuf,
    out_dir: PathBuf,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<(usize, usize, f64)> {
    let cfg = config_from_overrides(overrides)?;
    let paths = pipeline::DataPaths::from_dir(&data_dir);
    let outcome = pipeline::train_to_dir(cfg, &paths, &out_dir).map_err(err)?;
    let last = outcome.report.trace.last().map_or(f64::NAN, |r| r.l_total);
    Ok((outcome.report.trace.len(), outcome.report.skipped, last))
}

/// Evaluates a model directory on the test split; returns a metric dict.
#[pyfunction]
#[pyo3(signature = (model_dir, data_dir, method="none", tradeoff=0.9, seed=2024))]
fn evaluate(
    py: Python<'_>,
    model_dir: PathBuf,
    data_dir: PathBuf,
    method: &str,
    tradeoff: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let method: rerank::RerankMethod = method.parse().map_err(err)?;
    let paths = pipeline::DataPaths::from_dir(&data_dir);
    let outcome =
        pipeline::evaluate_dir(&model_dir, &paths, None, 1, method, tradeoff, seed).map_err(err)?;
    let r = &outcome.mean;
    let dict = pyo3::types::PyDict::new(py);
    for (name, value) in [
        ("auc", r.auc),
        ("mrr", r.mrr),
        ("ndcg5", r.ndcg5),
        ("ndcg10", r.ndcg10),
        ("ilad5", r.ilad5),
        ("ilad10", r.ilad10),
        ("ilmd5", r.ilmd5),
        ("ilmd10", r.ilmd10),
    ] {
        dict.set_item(name, value)?;
    }
    dict.set_item("n_impressions", r.n_impressions)?;
    Ok(dict.into())
}

/// A trained model restored from a model directory; scores raw titles.
#[pyclass]
struct Model {
    model: CoreModel,
    vocab: Vocab,
    max_title_len: usize,
}

#[pymethods]
impl Model {
    /// Loads config.txt + vocab.txt + checkpoint.txt from `model_dir`.
    #[staticmethod]
    fn load(model_dir: PathBuf) -> PyResult<Self> {
        let (model, config, vocab) = pipeline::load_model_dir(Path::new(&model_dir)).map_err(err)?;
        Ok(Model {
            model,
            vocab,
            max_title_len: config.model.max_title_len,
        })
    }

    /// Click scores for candidate titles given the user's clicked titles.
    #[pyo3(signature = (history, candidates, seed=0))]
    fn score(&self, history: Vec<String>, candidates: Vec<String>, seed: u64) -> PyResult<Vec<f64>> {
        let tokenize_all = |titles: &[String]| -> Vec<Vec<u32>> {
            titles
                .iter()
                .map(|t| tokenize(&self.vocab, t, self.max_title_len))
                .collect()
        };
        self.model
            .score(&tokenize_all(&history), &tokenize_all(&candidates), seed)
            .map_err(err)
    }

    /// Candidate indices in ranked order (descending score, ties by index).
    #[pyo3(signature = (history, candidates, seed=0))]
    fn rank(&self, history: Vec<String>, candidates: Vec<String>, seed: u64) -> PyResult<Vec<usize>> {
        Ok(rerank::rank_descending(&self.score(history, candidates, seed)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dim={}, heads={}, mode={})",
            self.model.config.model_dim, self.model.config.heads, self.model.config.list_encoder_mode
        )
    }
}

#[pymodule]
fn listrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mmr, m)?)?;
    m.add_function(wrap_pyfunction!(dpp, m)?)?;
    m.add_function(wrap_pyfunction!(rerank_scores, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(intra_list, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(listwise_loss, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
