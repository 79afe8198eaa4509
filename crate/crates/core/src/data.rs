//! Dataset ingestion (MIND tab-separated format), serialization, and the
//! synthetic impression-log generator used for desk-scale experiments.
//!
//! News file columns: id, category, subcategory, title, then optional
//! abstract/url/entity columns which are carried past but ignored (titles
//! are the only modeled content). Behaviors file columns: impression id,
//! user id, time, space-separated history ids, space-separated
//! "newsid-label" candidates.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::text::{semantic_embedding, tokenize, EmbeddingTable, SimilarityMatrix, Vocab};
use crate::training::ImpressionSample;

#[derive(Debug, Clone, PartialEq)]
pub struct NewsRecord {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    pub title_tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionRecord {
    pub impression_id: String,
    pub user_id: String,
    /// Indices into `Dataset::news`, most recent last, truncated upstream.
    pub history: Vec<usize>,
    pub candidates: Vec<(usize, u8)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseWarnings {
    /// Lines skipped because they did not match the format.
    pub malformed: usize,
    /// Impressions dropped because they referenced an unknown news id.
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub news: Vec<NewsRecord>,
    pub news_index: HashMap<String, usize>,
    pub impressions: Vec<ImpressionRecord>,
    pub vocab: Vocab,
    pub warnings: ParseWarnings,
}

#[derive(Debug, Clone)]
pub enum VocabPolicy {
    /// Build the vocabulary from the news titles, in file order.
    BuildFromTitles,
    /// Use a previously saved vocabulary (evaluation must tokenize with the
    /// vocabulary the checkpoint was trained with).
    Fixed(Vocab),
}

impl Dataset {
    /// Precomputed fixed semantic embedding for every news title.
    pub fn semantic_embeddings(&self, table: &EmbeddingTable) -> Vec<Vec<Real>> {
        self.news
            .iter()
            .map(|n| semantic_embedding(&n.title_tokens, table))
            .collect()
    }

    /// Resolves impressions into self-contained training/eval samples with
    /// per-impression similarity matrices from the fixed word vectors.
    pub fn to_samples(&self, table: &EmbeddingTable, max_history_len: usize) -> Vec<ImpressionSample> {
        let embeddings = self.semantic_embeddings(table);
        self.impressions
            .iter()
            .map(|imp| {
                let start = imp.history.len().saturating_sub(max_history_len);
                let history: Vec<Vec<u32>> = imp.history[start..]
                    .iter()
                    .map(|&n| self.news[n].title_tokens.clone())
                    .collect();
                let candidates: Vec<Vec<u32>> = imp
                    .candidates
                    .iter()
                    .map(|&(n, _)| self.news[n].title_tokens.clone())
                    .collect();
                let labels: Vec<u8> = imp.candidates.iter().map(|&(_, l)| l).collect();
                let cand_emb: Vec<Vec<Real>> = imp
                    .candidates
                    .iter()
                    .map(|&(n, _)| embeddings[n].clone())
                    .collect();
                ImpressionSample {
                    id: imp.impression_id.clone(),
                    history,
                    candidates,
                    labels,
                    similarity: SimilarityMatrix::from_embeddings(&cand_emb),
                }
            })
            .collect()
    }

    /// MIND-format news lines (empty abstract/url/entity columns).
    pub fn news_tsv(&self) -> String {
        let mut out = String::new();
        for n in &self.news {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t\t\t[]\t[]\n",
                n.news_id, n.category, n.subcategory, n.title
            ));
        }
        out
    }

    /// MIND-format behaviors lines.
    pub fn behaviors_tsv(&self) -> String {
        let mut out = String::new();
        for imp in &self.impressions {
            let history = imp
                .history
                .iter()
                .map(|&n| self.news[n].news_id.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let cands = imp
                .candidates
                .iter()
                .map(|&(n, l)| format!("{}-{}", self.news[n].news_id, l))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!(
                "{}\t{}\t0\t{}\t{}\n",
                imp.impression_id, imp.user_id, history, cands
            ));
        }
        out
    }
}

/// Parses a MIND news + behaviors file pair. Malformed lines are skipped
/// and counted; more than 1% malformed is an error carrying sample lines.
pub fn parse_mind(
    news_path: &Path,
    behaviors_path: &Path,
    policy: VocabPolicy,
    max_title_len: usize,
) -> Result<Dataset> {
    let mut warnings = ParseWarnings::default();
    let mut bad_samples: Vec<String> = Vec::new();
    let mut total_lines = 0usize;

    // news pass: collect raw records first so the vocabulary is built in
    // file order before tokenization
    let mut raw_news: Vec<(String, String, String, String)> = Vec::new();
    let f = std::fs::File::open(news_path)?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols[0].is_empty() {
            warnings.malformed += 1;
            if bad_samples.len() < 5 {
                bad_samples.push(line.clone());
            }
            continue;
        }
        raw_news.push((
            cols[0].to_string(),
            cols[1].to_string(),
            cols[2].to_string(),
            cols[3].to_string(),
        ));
    }

    let vocab = match policy {
        VocabPolicy::Fixed(v) => v,
        VocabPolicy::BuildFromTitles => {
            let mut v = Vocab::new();
            for (_, _, _, title) in &raw_news {
                v.add_text(title);
            }
            v
        }
    };

    let mut news = Vec::with_capacity(raw_news.len());
    let mut news_index = HashMap::new();
    for (news_id, category, subcategory, title) in raw_news {
        if news_index.contains_key(&news_id) {
            warnings.malformed += 1;
            continue; // duplicate id: keep the first
        }
        let title_tokens = tokenize(&vocab, &title, max_title_len);
        news_index.insert(news_id.clone(), news.len());
        news.push(NewsRecord {
            news_id,
            category,
            subcategory,
            title,
            title_tokens,
        });
    }

    // behaviors pass
    let mut impressions = Vec::new();
    let f = std::fs::File::open(behaviors_path)?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            warnings.malformed += 1;
            if bad_samples.len() < 5 {
                bad_samples.push(line.clone());
            }
            continue;
        }
        let mut unresolved = false;
        let mut well_formed = true;
        let mut history = Vec::new();
        for id in cols[3].split_whitespace() {
            match news_index.get(id) {
                Some(&n) => history.push(n),
                None => unresolved = true,
            }
        }
        let mut candidates = Vec::new();
        for pair in cols[4].split_whitespace() {
            let label = match pair.rsplit_once('-') {
                Some((_, "0")) => 0u8,
                Some((_, "1")) => 1u8,
                _ => {
                    well_formed = false;
                    break;
                }
            };
            let id = pair.rsplit_once('-').unwrap().0;
            match news_index.get(id) {
                Some(&n) => candidates.push((n, label)),
                None => unresolved = true,
            }
        }
        if !well_formed || (candidates.is_empty() && !unresolved) {
            warnings.malformed += 1;
            if bad_samples.len() < 5 {
                bad_samples.push(line.clone());
            }
            continue;
        }
        if unresolved {
            warnings.unresolved += 1;
            continue;
        }
        impressions.push(ImpressionRecord {
            impression_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            history,
            candidates,
        });
    }

    if total_lines > 0 && warnings.malformed * 100 > total_lines {
        return Err(Error::invalid(format!(
            "{} of {} lines malformed (>1%), e.g.:\n{}",
            warnings.malformed,
            total_lines,
            bad_samples.join("\n")
        )));
    }
    Ok(Dataset {
        news,
        news_index,
        impressions,
        vocab,
        warnings,
    })
}

// ── Synthetic data ──────────────────────────────────────────────────

/// Planted-topic world: each topic owns a word pool whose vectors cluster
/// around an orthonormal topic direction, users prefer one or two topics,
/// and clicks follow `sigma(gain * <user, news> + bias)` on the fixed mean
/// word vectors. Same-topic news therefore have strictly higher expected
/// pairwise similarity than cross-topic news, and a relevance-only model
/// has real signal to learn.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_topics: usize,
    pub topic_dim: usize,
    pub n_users: usize,
    pub n_news: usize,
    pub words_per_topic: usize,
    pub title_len: usize,
    pub history_len: usize,
    pub candidates_per_impression: usize,
    pub train_impressions_per_user: usize,
    pub test_impressions_per_user: usize,
    /// Probability that a candidate slot is drawn from the user's preferred
    /// topics instead of uniformly; mimics an upstream retrieval stage and
    /// gives a relevance-only ranker redundant top lists to diversify.
    pub preferred_candidate_frac: Real,
    /// Leading words of each topic pool are "hot": they raise the click
    /// probability without changing the topic embedding cluster, so clicks
    /// stay separable inside a topic while the semantic similarity between
    /// hot and cold same-topic news stays high.
    pub hot_words_per_topic: usize,
    pub click_gain: Real,
    pub hot_gain: Real,
    pub click_bias: Real,
    /// Fraction of news that get a twin: a second news id carrying the
    /// exact same title. Order-insensitive list encoders are forced to give
    /// twins identical scores, so twins in one candidate list are where
    /// list-aware diversification becomes visible.
    pub twin_frac: Real,
    /// Probability that an impression swaps one candidate for the twin of
    /// its hottest preferred candidate.
    pub twin_inject_prob: Real,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_topics: 5,
            topic_dim: 24,
            n_users: 500,
            n_news: 2000,
            words_per_topic: 50,
            title_len: 6,
            history_len: 8,
            candidates_per_impression: 12,
            train_impressions_per_user: 4,
            test_impressions_per_user: 1,
            preferred_candidate_frac: 0.6,
            hot_words_per_topic: 10,
            click_gain: 8.0,
            hot_gain: 14.0,
            click_bias: -11.3,
            twin_frac: 0.25,
            twin_inject_prob: 0.65,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_topics", self.n_topics),
            ("topic_dim", self.topic_dim),
            ("n_users", self.n_users),
            ("n_news", self.n_news),
            ("words_per_topic", self.words_per_topic),
            ("title_len", self.title_len),
            ("candidates_per_impression", self.candidates_per_impression),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field: name.into(),
                    msg: "must be positive".into(),
                });
            }
        }
        if self.topic_dim < self.n_topics {
            return Err(Error::Config {
                field: "topic_dim".into(),
                msg: format!(
                    "must be >= n_topics {} to fit orthogonal topic directions",
                    self.n_topics
                ),
            });
        }
        if self.candidates_per_impression > self.n_news {
            return Err(Error::Config {
                field: "candidates_per_impression".into(),
                msg: "cannot exceed n_news".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.preferred_candidate_frac) {
            return Err(Error::Config {
                field: "preferred_candidate_frac".into(),
                msg: "must lie in [0, 1]".into(),
            });
        }
        if self.preferred_candidate_frac > 0.0
            && self.n_news / self.n_topics < self.candidates_per_impression
        {
            return Err(Error::Config {
                field: "n_news".into(),
                msg: format!(
                    "each topic needs at least candidates_per_impression ({}) news for preferred sampling",
                    self.candidates_per_impression
                ),
            });
        }
        Ok(())
    }
}

pub struct Synthetic {
    pub train: Dataset,
    pub test: Dataset,
    /// Ground-truth topic id per news, aligned with `train.news`.
    pub topics: Vec<usize>,
    /// "word v1 ... vD" lines for the embeddings file.
    pub embedding_lines: Vec<String>,
    /// In-memory embedding table matching those lines.
    pub table: EmbeddingTable,
}

fn gaussian(rng: &mut ChaCha8Rng) -> Real {
    let u1: Real = rng.random_range(Real::MIN_POSITIVE..1.0);
    let u2: Real = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI as Real * u2).cos()
}

fn normalize(v: &mut [Real]) {
    let n = v.iter().map(|x| x * x).sum::<Real>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    let mut picked = HashSet::new();
    let mut out = Vec::with_capacity(k);
    let k = k.min(pool.len());
    while out.len() < k {
        let i = pool[rng.random_range(0..pool.len())];
        if picked.insert(i) {
            out.push(i);
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // orthonormal topic directions by Gram-Schmidt on gaussian draws
    let mut dirs: Vec<Vec<Real>> = Vec::with_capacity(spec.n_topics);
    while dirs.len() < spec.n_topics {
        let mut v: Vec<Real> = (0..spec.topic_dim).map(|_| gaussian(&mut rng)).collect();
        for d in &dirs {
            let dot: Real = v.iter().zip(d).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(d) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
        if norm < 1e-6 {
            continue; // degenerate draw, resample
        }
        v.iter_mut().for_each(|x| *x /= norm);
        dirs.push(v);
    }

    // per-topic word pools
    let mut word_vectors: HashMap<String, Vec<Real>> = HashMap::new();
    let mut embedding_lines = Vec::new();
    let mut topic_words: Vec<Vec<String>> = Vec::with_capacity(spec.n_topics);
    for (t, dir) in dirs.iter().enumerate() {
        let mut pool = Vec::with_capacity(spec.words_per_topic);
        for w in 0..spec.words_per_topic {
            let word = format!("t{t}w{w}");
            let mut vec: Vec<Real> = dir
                .iter()
                .map(|&d| d + 0.25 * gaussian(&mut rng))
                .collect();
            normalize(&mut vec);
            embedding_lines.push(format!(
                "{word} {}",
                vec.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
            ));
            word_vectors.insert(word.clone(), vec);
            pool.push(word);
        }
        topic_words.push(pool);
    }

    // titles first, so the vocabulary can be built in news order exactly
    // like parse_mind does (serialize -> parse must round-trip)
    let mut titles = Vec::with_capacity(spec.n_news);
    let mut topics = Vec::with_capacity(spec.n_news);
    let mut hotness = Vec::with_capacity(spec.n_news);
    let hot_cut = spec.hot_words_per_topic.min(spec.words_per_topic);
    for n in 0..spec.n_news {
        let topic = n % spec.n_topics;
        let mut hot = 0usize;
        let words: Vec<&str> = (0..spec.title_len)
            .map(|_| {
                let w = rng.random_range(0..spec.words_per_topic);
                if w < hot_cut {
                    hot += 1;
                }
                topic_words[topic][w].as_str()
            })
            .collect();
        titles.push(words.join(" "));
        topics.push(topic);
        hotness.push(hot as Real / spec.title_len as Real);
    }
    // twins: duplicate titles under fresh ids, appended after the base news
    let n_base = titles.len();
    let mut twin_of: Vec<Option<usize>> = vec![None; n_base];
    let twin_count = ((spec.n_news as Real) * spec.twin_frac) as usize;
    for b in 0..twin_count.min(n_base) {
        let idx = titles.len();
        titles.push(titles[b].clone());
        topics.push(topics[b]);
        hotness.push(hotness[b]);
        twin_of.push(Some(b));
        twin_of[b] = Some(idx);
    }
    let mut vocab = Vocab::new();
    for title in &titles {
        vocab.add_text(title);
    }
    let resolved: HashMap<u32, Vec<Real>> = word_vectors
        .iter()
        .filter_map(|(word, vec)| vocab.id(word).map(|id| (id, vec.clone())))
        .collect();
    let table = EmbeddingTable::from_loaded(spec.topic_dim, &vocab, resolved, spec.seed);

    let mut news = Vec::with_capacity(titles.len());
    let mut news_index = HashMap::new();
    for (n, title) in titles.into_iter().enumerate() {
        let news_id = format!("N{n:05}");
        let title_tokens = tokenize(&vocab, &title, spec.title_len);
        news_index.insert(news_id.clone(), n);
        news.push(NewsRecord {
            news_id,
            category: format!("topic{}", topics[n]),
            subcategory: "synthetic".into(),
            title,
            title_tokens,
        });
    }
    let news_emb: Vec<Vec<Real>> = news
        .iter()
        .map(|n| semantic_embedding(&n.title_tokens, &table))
        .collect();

    let n_total = news.len();
    // users: 1-2 preferred topics, unit interest vector
    let news_by_topic: Vec<Vec<usize>> = (0..spec.n_topics)
        .map(|t| (0..n_total).filter(|&n| topics[n] == t).collect())
        .collect();
    let all_news: Vec<usize> = (0..n_total).collect();
    let make_impressions = |rng: &mut ChaCha8Rng,
                                split: &str,
                                per_user: usize,
                                user_vecs: &[(Vec<Real>, Vec<usize>, Vec<usize>)]|
     -> Vec<ImpressionRecord> {
        let mut impressions = Vec::new();
        for (u, (uvec, history, preferred)) in user_vecs.iter().enumerate() {
            for i in 0..per_user {
                #[allow(unused_mut)]
                let mut cands: Vec<usize> = Vec::with_capacity(spec.candidates_per_impression);
                let mut seen = HashSet::new();
                while cands.len() < spec.candidates_per_impression {
                    let pool = if rng.random_bool(spec.preferred_candidate_frac as f64) {
                        preferred
                    } else {
                        &all_news
                    };
                    let n = pool[rng.random_range(0..pool.len())];
                    if seen.insert(n) {
                        cands.push(n);
                    }
                }
                // one candidate may be swapped for the twin of the
                // hottest preferred candidate, planting an exact duplicate
                if rng.random_bool(spec.twin_inject_prob as f64) {
                    let hottest = cands
                        .iter()
                        .enumerate()
                        .filter(|(_, &n)| {
                            preferred.contains(&n)
                                && twin_of[n].map_or(false, |t| !cands.contains(&t))
                        })
                        .max_by(|a, b| {
                            hotness[*a.1].partial_cmp(&hotness[*b.1]).unwrap()
                        })
                        .map(|(slot, &n)| (slot, n));
                    if let Some((slot, n)) = hottest {
                        let twin = twin_of[n].unwrap();
                        let victim = (slot + 1) % cands.len();
                        cands[victim] = twin;
                    }
                }
                let mut clicked_titles: HashSet<usize> = HashSet::new();
                let candidates: Vec<(usize, u8)> = cands
                    .into_iter()
                    .map(|n| {
                        let affinity = crate::text::cosine(uvec, &news_emb[n]);
                        let logit = spec.click_gain * affinity
                            + spec.hot_gain * hotness[n]
                            + spec.click_bias;
                        let p = 1.0 / (1.0 + (-logit as f64).exp());
                        let mut clicked = rng.random_bool(p.clamp(1e-9, 1.0 - 1e-9)) as u8;
                        // a user reads a story once: twins collapse to one click
                        let family = twin_of[n].map_or(n, |t| n.min(t));
                        if clicked == 1 && !clicked_titles.insert(family) {
                            clicked = 0;
                        }
                        (n, clicked)
                    })
                    .collect();
                impressions.push(ImpressionRecord {
                    impression_id: format!("{split}_u{u:04}_{i}"),
                    user_id: format!("U{u:04}"),
                    history: history.clone(),
                    candidates,
                });
            }
        }
        impressions
    };

    let mut user_vecs: Vec<(Vec<Real>, Vec<usize>, Vec<usize>)> = Vec::with_capacity(spec.n_users);
    for _ in 0..spec.n_users {
        let two_topics = !rng.random_bool(0.5) && spec.n_topics > 1;
        let n_pref = if two_topics { 2 } else { 1 };
        let mut prefs = Vec::new();
        while prefs.len() < n_pref {
            let t = rng.random_range(0..spec.n_topics);
            if !prefs.contains(&t) {
                prefs.push(t);
            }
        }
        let mut uvec = vec![0.0; spec.topic_dim];
        for &t in &prefs {
            for (x, y) in uvec.iter_mut().zip(&dirs[t]) {
                *x += y;
            }
        }
        normalize(&mut uvec);
        let pool: Vec<usize> = prefs
            .iter()
            .flat_map(|&t| news_by_topic[t].iter().copied())
            .collect();
        let history = sample_distinct(&mut rng, &pool, spec.history_len);
        user_vecs.push((uvec, history, pool));
    }

    let train_impressions = make_impressions(
        &mut rng,
        "train",
        spec.train_impressions_per_user,
        &user_vecs,
    );
    let test_impressions = make_impressions(
        &mut rng,
        "test",
        spec.test_impressions_per_user,
        &user_vecs,
    );

    let train = Dataset {
        news: news.clone(),
        news_index: news_index.clone(),
        impressions: train_impressions,
        vocab: vocab.clone(),
        warnings: ParseWarnings::default(),
    };
    let test = Dataset {
        news,
        news_index,
        impressions: test_impressions,
        vocab,
        warnings: ParseWarnings::default(),
    };
    Ok(Synthetic {
        train,
        test,
        topics,
        embedding_lines,
        table,
    })
}
