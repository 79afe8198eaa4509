//! News encoder, user encoder, candidate-list encoder and click predictor.
//!
//! The news and user encoders follow the multi-head self-attention +
//! attention-pooling recipe, deliberately without layer normalization and
//! without position-wise feed-forward sublayers. The candidate-list encoder
//! is the interesting part: in `Permutation` mode each attention head
//! shuffles the candidate rows by its own random permutation, runs *causal*
//! self-attention over the shuffled sequence, and unshuffles the result, so
//! even identical candidates can come out with different representations
//! while the ensemble stays order-agnostic in expectation.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::optim::Parameter;
use crate::tensor::{Real, Tensor};
use crate::text::{EmbeddingTable, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListEncoderMode {
    /// Candidates are scored independently: the list encoder is the identity.
    None,
    /// Bidirectional self-attention without position embeddings.
    TransformerNoPos,
    /// Bidirectional self-attention with learned position embeddings.
    TransformerPos,
    /// Per-head random shuffle + causal self-attention + unshuffle.
    Permutation,
}

impl FromStr for ListEncoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ListEncoderMode::None),
            "transformer_no_pos" => Ok(ListEncoderMode::TransformerNoPos),
            "transformer_pos" => Ok(ListEncoderMode::TransformerPos),
            "permutation" => Ok(ListEncoderMode::Permutation),
            other => Err(Error::invalid(format!(
                "unknown list_encoder_mode `{other}` (expected none, transformer_no_pos, transformer_pos or permutation)"
            ))),
        }
    }
}

impl std::fmt::Display for ListEncoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ListEncoderMode::None => "none",
            ListEncoderMode::TransformerNoPos => "transformer_no_pos",
            ListEncoderMode::TransformerPos => "transformer_pos",
            ListEncoderMode::Permutation => "permutation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Word-vector width; fixed by the loaded embedding table.
    pub embed_dim: usize,
    /// Hidden width d of news/user/candidate representations.
    pub model_dim: usize,
    /// Attention heads H; every attention block uses the same head count.
    pub heads: usize,
    pub max_title_len: usize,
    pub max_history_len: usize,
    /// Longest candidate list supported by learned position embeddings.
    pub max_list_len: usize,
    pub list_encoder_mode: ListEncoderMode,
    /// Plans averaged per impression when scoring in `Permutation` mode.
    pub permutation_samples_at_inference: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults; small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 300,
            model_dim: 32,
            heads: 4,
            max_title_len: 30,
            max_history_len: 20,
            max_list_len: 100,
            list_encoder_mode: ListEncoderMode::Permutation,
            permutation_samples_at_inference: 1,
        }
    }

    /// Full-scale defaults: 300-d words, 20 heads of 20 dims each.
    pub fn paper_scale() -> Self {
        ModelConfig {
            embed_dim: 300,
            model_dim: 400,
            heads: 20,
            ..Self::desk()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("max_title_len", self.max_title_len),
            ("max_history_len", self.max_history_len),
            ("max_list_len", self.max_list_len),
            ("permutation_samples_at_inference", self.permutation_samples_at_inference),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field: name.into(),
                    msg: "must be positive".into(),
                });
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config {
                field: "heads".into(),
                msg: format!(
                    "model_dim {} must be divisible by heads {} (per-head outputs concatenate back to model_dim)",
                    self.model_dim, self.heads
                ),
            });
        }
        Ok(())
    }
}

// ── Parameters ──────────────────────────────────────────────────────

/// Q/K/V projections of one attention head.
#[derive(Debug, Clone)]
pub struct HeadParams<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
}

/// Additive attention pooling: softmax_i(q . tanh(W x_i + b)), then a
/// weighted sum of the inputs.
#[derive(Debug, Clone)]
pub struct PoolParams<T> {
    pub w: T,
    pub b: T,
    pub q: T,
}

/// Every learnable tensor of the model, generic over storage so the same
/// layout serves persistent parameters (`Parameter`) and per-graph bindings
/// (`TensorId`).
#[derive(Debug, Clone)]
pub struct ModelParamsG<T> {
    pub word_emb: T,
    pub news_heads: Vec<HeadParams<T>>,
    pub news_pool: PoolParams<T>,
    pub news_dense_w: T,
    pub news_dense_b: T,
    pub user_heads: Vec<HeadParams<T>>,
    pub user_pool: PoolParams<T>,
    pub list_heads: Vec<HeadParams<T>>,
    pub pos_emb: T,
}

pub type ModelParams = ModelParamsG<Parameter>;
pub type BoundParams = ModelParamsG<TensorId>;

impl<T> ModelParamsG<T> {
    /// Structure-preserving map. Field order matches `flat`/`flat_mut`.
    pub fn map_with<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParamsG<U> {
        let map_heads = |heads: &[HeadParams<T>], f: &mut dyn FnMut(&T) -> U| {
            heads
                .iter()
                .map(|h| HeadParams {
                    wq: f(&h.wq),
                    wk: f(&h.wk),
                    wv: f(&h.wv),
                })
                .collect::<Vec<_>>()
        };
        let map_pool = |p: &PoolParams<T>, f: &mut dyn FnMut(&T) -> U| PoolParams {
            w: f(&p.w),
            b: f(&p.b),
            q: f(&p.q),
        };
        ModelParamsG {
            word_emb: f(&self.word_emb),
            news_heads: map_heads(&self.news_heads, f),
            news_pool: map_pool(&self.news_pool, f),
            news_dense_w: f(&self.news_dense_w),
            news_dense_b: f(&self.news_dense_b),
            user_heads: map_heads(&self.user_heads, f),
            user_pool: map_pool(&self.user_pool, f),
            list_heads: map_heads(&self.list_heads, f),
            pos_emb: f(&self.pos_emb),
        }
    }

    pub fn flat(&self) -> Vec<&T> {
        let mut out = Vec::new();
        out.push(&self.word_emb);
        for h in &self.news_heads {
            out.extend([&h.wq, &h.wk, &h.wv]);
        }
        out.extend([&self.news_pool.w, &self.news_pool.b, &self.news_pool.q]);
        out.extend([&self.news_dense_w, &self.news_dense_b]);
        for h in &self.user_heads {
            out.extend([&h.wq, &h.wk, &h.wv]);
        }
        out.extend([&self.user_pool.w, &self.user_pool.b, &self.user_pool.q]);
        for h in &self.list_heads {
            out.extend([&h.wq, &h.wk, &h.wv]);
        }
        out.push(&self.pos_emb);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        out.push(&mut self.word_emb);
        for h in &mut self.news_heads {
            out.push(&mut h.wq);
            out.push(&mut h.wk);
            out.push(&mut h.wv);
        }
        out.push(&mut self.news_pool.w);
        out.push(&mut self.news_pool.b);
        out.push(&mut self.news_pool.q);
        out.push(&mut self.news_dense_w);
        out.push(&mut self.news_dense_b);
        for h in &mut self.user_heads {
            out.push(&mut h.wq);
            out.push(&mut h.wk);
            out.push(&mut h.wv);
        }
        out.push(&mut self.user_pool.w);
        out.push(&mut self.user_pool.b);
        out.push(&mut self.user_pool.q);
        for h in &mut self.list_heads {
            out.push(&mut h.wq);
            out.push(&mut h.wk);
            out.push(&mut h.wv);
        }
        out.push(&mut self.pos_emb);
        out
    }
}

fn head_names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).flat_map(move |i| {
        ["wq", "wk", "wv"]
            .into_iter()
            .map(move |w| format!("{prefix}.h{i}.{w}"))
    })
}

/// Parameter names in `flat()` order.
pub fn param_names(heads: usize) -> Vec<String> {
    let mut names = vec!["word_emb".to_string()];
    names.extend(head_names("news", heads));
    names.extend(["news.pool.w", "news.pool.b", "news.pool.q"].map(String::from));
    names.extend(["news.dense.w", "news.dense.b"].map(String::from));
    names.extend(head_names("user", heads));
    names.extend(["user.pool.w", "user.pool.b", "user.pool.q"].map(String::from));
    names.extend(head_names("list", heads));
    names.push("pos_emb".to_string());
    names
}

fn init_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as Real).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

impl ModelParams {
    /// Fresh parameters: word embeddings copied from the loaded table,
    /// everything else uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(config: &ModelConfig, table: &EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        if table.dim != config.embed_dim {
            return Err(Error::Config {
                field: "embed_dim".into(),
                msg: format!(
                    "config says {} but the embedding table is {}-dimensional",
                    config.embed_dim, table.dim
                ),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let dk = config.head_dim();
        let de = config.embed_dim;
        let vocab = table.vocab_size();

        let word_data: Vec<Real> = table.rows().iter().flatten().copied().collect();
        let word_emb = Tensor::new(vec![vocab, de], word_data)?;

        let heads = |rng: &mut ChaCha8Rng, din: usize| -> Vec<HeadParams<Tensor>> {
            (0..config.heads)
                .map(|_| HeadParams {
                    wq: init_uniform(rng, vec![din, dk], din),
                    wk: init_uniform(rng, vec![din, dk], din),
                    wv: init_uniform(rng, vec![din, dk], din),
                })
                .collect()
        };
        let news_heads = heads(&mut rng, de);
        let user_heads = heads(&mut rng, d);
        let list_heads = heads(&mut rng, d);
        let pool = |rng: &mut ChaCha8Rng| PoolParams {
            w: init_uniform(rng, vec![d, d], d),
            b: init_uniform(rng, vec![d], d),
            q: init_uniform(rng, vec![d], d),
        };
        let news_pool = pool(&mut rng);
        let user_pool = pool(&mut rng);
        let news_dense_w = init_uniform(&mut rng, vec![d, d], d);
        let news_dense_b = init_uniform(&mut rng, vec![d], d);
        let pos_emb = init_uniform(&mut rng, vec![config.max_list_len, d], d);

        let tensors = ModelParamsG {
            word_emb,
            news_heads,
            news_pool,
            news_dense_w,
            news_dense_b,
            user_heads,
            user_pool,
            list_heads,
            pos_emb,
        };
        let names = param_names(config.heads);
        let mut i = 0;
        let params = tensors.map_with(&mut |t: &Tensor| {
            let p = Parameter::new(names[i].clone(), t.clone());
            i += 1;
            p
        });
        Ok(params)
    }

    pub fn zero_grads(&mut self) {
        for p in self.flat_mut() {
            p.zero_grad();
        }
    }

    /// Clears the gradient of the PAD embedding row so it is never updated.
    pub fn freeze_pad_row(&mut self) {
        let cols = self.word_emb.value.shape()[1];
        for g in &mut self.word_emb.grad[PAD as usize * cols..(PAD as usize + 1) * cols] {
            *g = 0.0;
        }
    }
}

// ── Permutation plans ───────────────────────────────────────────────

/// One random permutation of the candidate list per attention head, plus
/// its inverse. `inverse[perm[i]] == i`, which is exactly the testable
/// content of "the inverse permutation matrix undoes the shuffle".
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPlan {
    pub seed: u64,
    perms: Vec<Vec<usize>>,
    inverses: Vec<Vec<usize>>,
}

impl PermutationPlan {
    pub fn sample(heads: usize, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perms = Vec::with_capacity(heads);
        for _ in 0..heads {
            let mut p: Vec<usize> = (0..len).collect();
            // Fisher-Yates
            for i in (1..len).rev() {
                let j = rng.random_range(0..=i);
                p.swap(i, j);
            }
            perms.push(p);
        }
        Self::from_perms(perms, seed)
    }

    pub fn identity(heads: usize, len: usize) -> Self {
        Self::from_perms(vec![(0..len).collect(); heads], 0)
    }

    pub fn from_perms(perms: Vec<Vec<usize>>, seed: u64) -> Self {
        let inverses = perms
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (i, &pi) in p.iter().enumerate() {
                    inv[pi] = i;
                }
                inv
            })
            .collect();
        PermutationPlan {
            seed,
            perms,
            inverses,
        }
    }

    pub fn heads(&self) -> usize {
        self.perms.len()
    }

    pub fn list_len(&self) -> usize {
        self.perms.first().map_or(0, |p| p.len())
    }

    pub fn perm(&self, head: usize) -> &[usize] {
        &self.perms[head]
    }

    pub fn inverse(&self, head: usize) -> &[usize] {
        &self.inverses[head]
    }
}

// ── Forward passes ──────────────────────────────────────────────────

/// Additive attention pooling over the rows of `seq`, restricted to
/// positions where `keep` is true.
pub fn attention_pool(
    g: &mut Graph,
    pool: &PoolParams<TensorId>,
    seq: TensorId,
    keep: &[bool],
) -> Result<TensorId> {
    if keep.iter().all(|&k| !k) {
        return Err(Error::Empty("attention_pool input (all positions masked)".into()));
    }
    let hidden = g.matmul(seq, pool.w)?;
    let hidden = g.add(hidden, pool.b)?;
    let scores_in = g.tanh(hidden);
    let scores = g.matmul(scores_in, pool.q)?;
    let mask: Vec<Real> = keep
        .iter()
        .map(|&k| if k { 0.0 } else { Real::NEG_INFINITY })
        .collect();
    let mask = g.constant(Tensor::from_vec(mask));
    let alpha = g.masked_softmax(scores, mask)?;
    g.matmul(alpha, seq)
}

/// Builds the additive attention mask: -inf where the key position is
/// dropped or (when `causal`) lies in the future of the query position.
fn attention_mask(len: usize, keep: Option<&[bool]>, causal: bool) -> Option<Tensor> {
    if keep.is_none() && !causal {
        return None;
    }
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in 0..len {
            let masked = keep.map_or(false, |k| !k[j]) || (causal && j > i);
            if masked {
                data[i * len + j] = Real::NEG_INFINITY;
            }
        }
    }
    Some(Tensor::new(vec![len, len], data).unwrap())
}

/// Scaled dot-product attention for one head: project, score, mask,
/// normalize, mix.
fn head_attention(
    g: &mut Graph,
    head: &HeadParams<TensorId>,
    x: TensorId,
    mask: Option<&Tensor>,
) -> Result<TensorId> {
    let q = g.matmul(x, head.wq)?;
    let k = g.matmul(x, head.wk)?;
    let v = g.matmul(x, head.wv)?;
    let dk = g.value(q).shape()[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as Real).sqrt());
    let alpha = match mask {
        Some(m) => {
            let mid = g.constant(m.clone());
            g.masked_softmax(scores, mid)?
        }
        None => g.softmax(scores)?,
    };
    g.matmul(alpha, v)
}

/// Causal self-attention for a single head: position i attends to
/// positions 1..=i (itself included).
pub fn causal_self_attention(
    g: &mut Graph,
    head: &HeadParams<TensorId>,
    x: TensorId,
) -> Result<TensorId> {
    let len = g.value(x).shape()[0];
    let mask = attention_mask(len, None, true);
    head_attention(g, head, x, mask.as_ref())
}

/// Multi-head self-attention: per-head scaled dot-product attention with
/// outputs concatenated back to `heads * head_dim` columns.
fn multi_head_attention(
    g: &mut Graph,
    heads: &[HeadParams<TensorId>],
    x: TensorId,
    keep: Option<&[bool]>,
) -> Result<TensorId> {
    let len = g.value(x).shape()[0];
    let mask = attention_mask(len, keep, false);
    let outs: Vec<TensorId> = heads
        .iter()
        .map(|h| head_attention(g, h, x, mask.as_ref()))
        .collect::<Result<_>>()?;
    g.concat_cols(&outs)
}

/// Title tokens -> d-dimensional news vector: word embeddings, PAD-masked
/// multi-head self-attention, attention pooling, then dense + ReLU. An
/// all-PAD title encodes to the zero vector (cold item, not an error).
pub fn encode_news(
    g: &mut Graph,
    cfg: &ModelConfig,
    bound: &BoundParams,
    title: &[u32],
) -> Result<TensorId> {
    let keep: Vec<bool> = title.iter().map(|&t| t != PAD).collect();
    if keep.iter().all(|&k| !k) {
        return Ok(g.constant(Tensor::zeros(vec![cfg.model_dim])));
    }
    let idx: Vec<usize> = title.iter().map(|&t| t as usize).collect();
    let emb = g.gather_rows(bound.word_emb, &idx)?;
    let ctx = multi_head_attention(g, &bound.news_heads, emb, Some(&keep))?;
    let pooled = attention_pool(g, &bound.news_pool, ctx, &keep)?;
    let hidden = g.matmul(pooled, bound.news_dense_w)?;
    let hidden = g.add(hidden, bound.news_dense_b)?;
    Ok(g.relu(hidden))
}

/// Clicked-news vectors -> user interest vector. An empty history encodes
/// to the zero vector.
pub fn encode_user(
    g: &mut Graph,
    cfg: &ModelConfig,
    bound: &BoundParams,
    history: &[TensorId],
) -> Result<TensorId> {
    if history.is_empty() {
        return Ok(g.constant(Tensor::zeros(vec![cfg.model_dim])));
    }
    let seq = g.concat_rows(history)?;
    let ctx = multi_head_attention(g, &bound.user_heads, seq, None)?;
    let keep = vec![true; history.len()];
    attention_pool(g, &bound.user_pool, ctx, &keep)
}

/// Candidate news vectors [M x d] -> list-aware representations [M x d].
pub fn encode_candidate_list(
    g: &mut Graph,
    cfg: &ModelConfig,
    bound: &BoundParams,
    r_c: TensorId,
    plan: &PermutationPlan,
) -> Result<TensorId> {
    let m = g.value(r_c).shape()[0];
    if m == 0 {
        return Err(Error::Empty("candidate list".into()));
    }
    match cfg.list_encoder_mode {
        ListEncoderMode::None => Ok(r_c),
        ListEncoderMode::TransformerNoPos => {
            let ctx = multi_head_attention(g, &bound.list_heads, r_c, None)?;
            g.add(ctx, r_c)
        }
        ListEncoderMode::TransformerPos => {
            if m > cfg.max_list_len {
                return Err(Error::invalid(format!(
                    "candidate list of length {m} exceeds max_list_len {}",
                    cfg.max_list_len
                )));
            }
            let pos = g.gather_rows(bound.pos_emb, &(0..m).collect::<Vec<_>>())?;
            let x = g.add(r_c, pos)?;
            let ctx = multi_head_attention(g, &bound.list_heads, x, None)?;
            g.add(ctx, r_c)
        }
        ListEncoderMode::Permutation => {
            if plan.heads() != cfg.heads || plan.list_len() != m {
                return Err(Error::invalid(format!(
                    "permutation plan for {} heads x {} items does not fit {} heads x {} items",
                    plan.heads(),
                    plan.list_len(),
                    cfg.heads,
                    m
                )));
            }
            let mut outs = Vec::with_capacity(cfg.heads);
            for (h, head) in bound.list_heads.iter().enumerate() {
                let shuffled = g.gather_rows(r_c, plan.perm(h))?;
                let attended = causal_self_attention(g, head, shuffled)?;
                let unshuffled = g.gather_rows(attended, plan.inverse(h))?;
                outs.push(unshuffled);
            }
            let ctx = g.concat_cols(&outs)?;
            g.add(ctx, r_c)
        }
    }
}

/// Inner-product click scores for every candidate.
pub fn predict_clicks(g: &mut Graph, user: TensorId, candidates: TensorId) -> Result<TensorId> {
    g.matmul(candidates, user)
}

// ── Model ───────────────────────────────────────────────────────────

pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig, table: &EmbeddingTable, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, table, seed)?;
        Ok(Model { config, params })
    }

    /// Registers every parameter on the graph, as differentiable leaves for
    /// training or as constants for inference.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        self.params.map_with(&mut |p: &Parameter| {
            if trainable {
                g.leaf(p.value.clone())
            } else {
                g.constant(p.value.clone())
            }
        })
    }

    /// Rebuilds a binding from leaves created elsewhere (gradient checks).
    pub fn bind_from(&self, ids: &[TensorId]) -> BoundParams {
        let mut it = ids.iter().copied();
        self.params.map_with(&mut |_| it.next().expect("one id per parameter"))
    }

    /// Copies gradients off the graph into the persistent parameter
    /// accumulators after a backward pass.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundParams) {
        let ids: Vec<TensorId> = bound.flat().into_iter().copied().collect();
        for (p, id) in self.params.flat_mut().into_iter().zip(ids) {
            if let Some(grad) = g.grad(id) {
                p.accumulate(grad);
            }
        }
    }

    /// Full forward pass for one impression: returns the score vector [M].
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        history: &[Vec<u32>],
        candidates: &[Vec<u32>],
        plan: &PermutationPlan,
    ) -> Result<TensorId> {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate list".into()));
        }
        let hist_vecs: Vec<TensorId> = history
            .iter()
            .map(|title| encode_news(g, &self.config, bound, title))
            .collect::<Result<_>>()?;
        let user = encode_user(g, &self.config, bound, &hist_vecs)?;
        let cand_vecs: Vec<TensorId> = candidates
            .iter()
            .map(|title| encode_news(g, &self.config, bound, title))
            .collect::<Result<_>>()?;
        let r_c = g.concat_rows(&cand_vecs)?;
        let h_c = encode_candidate_list(g, &self.config, bound, r_c, plan)?;
        predict_clicks(g, user, h_c)
    }

    /// Inference scores with a specific plan.
    pub fn score_with_plan(
        &self,
        history: &[Vec<u32>],
        candidates: &[Vec<u32>],
        plan: &PermutationPlan,
    ) -> Result<Vec<Real>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let scores = self.forward(&mut g, &bound, history, candidates, plan)?;
        Ok(g.value(scores).data().to_vec())
    }

    /// Inference scores, averaging over `permutation_samples_at_inference`
    /// plans drawn from `seed`. Modes without permutations ignore the seed.
    pub fn score(
        &self,
        history: &[Vec<u32>],
        candidates: &[Vec<u32>],
        seed: u64,
    ) -> Result<Vec<Real>> {
        let m = candidates.len();
        if self.config.list_encoder_mode != ListEncoderMode::Permutation {
            let plan = PermutationPlan::identity(self.config.heads, m);
            return self.score_with_plan(history, candidates, &plan);
        }
        let samples = self.config.permutation_samples_at_inference.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![0.0; m];
        for _ in 0..samples {
            let plan = PermutationPlan::sample(self.config.heads, m, rng.random());
            let scores = self.score_with_plan(history, candidates, &plan)?;
            for (a, s) in acc.iter_mut().zip(scores) {
                *a += s;
            }
        }
        acc.iter_mut().for_each(|a| *a /= samples as Real);
        Ok(acc)
    }
}
