//! End-to-end entry points shared by the CLI and the Python bindings:
//! synthetic data materialization, training runs, evaluation runs, file
//! reranking and tradeoff sweeps. Every run is reproducible from its
//! config and seed alone.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{generate_synthetic, parse_mind, Dataset, SyntheticSpec, VocabPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_reports, evaluate_model, evaluate_reranked, sweep_table, tradeoff_sweep, EvalReport,
    SweepKnob, SweepRow, REPORT_HEADER,
};
use crate::model::Model;
use crate::rerank::{rerank_pipeline, RerankMethod};
use crate::tensor::Real;
use crate::text::{EmbeddingTable, SimilarityMatrix, Vocab};
use crate::training::{train, ImpressionSample, TrainReport};

/// Conventional file layout of a dataset directory.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub news: PathBuf,
    pub train_behaviors: PathBuf,
    pub test_behaviors: PathBuf,
    pub embeddings: PathBuf,
}

impl DataPaths {
    pub fn from_dir(dir: &Path) -> Self {
        DataPaths {
            news: dir.join("news.tsv"),
            train_behaviors: dir.join("train_behaviors.tsv"),
            test_behaviors: dir.join("test_behaviors.tsv"),
            embeddings: dir.join("embeddings.txt"),
        }
    }
}

/// Materializes a synthetic dataset: news.tsv, train/test behaviors,
/// embeddings.txt and the ground-truth topics.tsv.
pub fn gen_data(spec: &SyntheticSpec, out_dir: &Path) -> Result<()> {
    let synthetic = generate_synthetic(spec)?;
    std::fs::create_dir_all(out_dir)?;
    let paths = DataPaths::from_dir(out_dir);
    std::fs::write(&paths.news, synthetic.train.news_tsv())?;
    std::fs::write(&paths.train_behaviors, synthetic.train.behaviors_tsv())?;
    std::fs::write(&paths.test_behaviors, synthetic.test.behaviors_tsv())?;
    std::fs::write(&paths.embeddings, synthetic.embedding_lines.join("\n") + "\n")?;
    let mut topics = String::new();
    for (n, t) in synthetic.train.news.iter().zip(&synthetic.topics) {
        topics.push_str(&format!("{}\t{}\n", n.news_id, t));
    }
    std::fs::write(out_dir.join("topics.tsv"), topics)?;
    Ok(())
}

/// Loads one split plus the embedding table; embed_dim in the config is
/// overridden by the table width (echoed in the resolved config).
pub struct LoadedSplit {
    pub dataset: Dataset,
    pub table: EmbeddingTable,
    pub samples: Vec<ImpressionSample>,
}

pub fn load_split(
    config: &mut RunConfig,
    news: &Path,
    behaviors: &Path,
    embeddings: &Path,
    policy: VocabPolicy,
) -> Result<LoadedSplit> {
    let dataset = parse_mind(news, behaviors, policy, config.model.max_title_len)?;
    let table = EmbeddingTable::load(embeddings, &dataset.vocab, config.training.seed)?;
    config.model.embed_dim = table.dim;
    let samples = dataset.to_samples(&table, config.model.max_history_len);
    Ok(LoadedSplit {
        dataset,
        table,
        samples,
    })
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub resolved: RunConfig,
}

/// Full training run: parse, build vocab, train, and write checkpoint.txt,
/// vocab.txt, config.txt and trace.tsv into the model directory.
pub fn train_to_dir(mut config: RunConfig, data: &DataPaths, out_dir: &Path) -> Result<TrainOutcome> {
    let split = load_split(
        &mut config,
        &data.news,
        &data.train_behaviors,
        &data.embeddings,
        VocabPolicy::BuildFromTitles,
    )?;
    config.validate()?;
    let mut model = Model::init(config.model.clone(), &split.table, config.training.seed)?;
    let report = train(&mut model, &split.samples, &config.training)?;

    std::fs::create_dir_all(out_dir)?;
    checkpoint::save(&out_dir.join("checkpoint.txt"), &model.params)?;
    split.dataset.vocab.save(&out_dir.join("vocab.txt"))?;
    std::fs::write(out_dir.join("config.txt"), config.to_key_values())?;
    let mut trace = std::io::BufWriter::new(std::fs::File::create(out_dir.join("trace.tsv"))?);
    writeln!(trace, "epoch\tstep\tl_rec\tl_div\tl_total")?;
    for row in &report.trace {
        writeln!(trace, "{}", row.tsv())?;
    }
    Ok(TrainOutcome {
        model,
        report,
        resolved: config,
    })
}

/// Restores a trained model (config + vocab + checkpoint) from a model
/// directory.
pub fn load_model_dir(model_dir: &Path) -> Result<(Model, RunConfig, Vocab)> {
    let config = RunConfig::from_file(&model_dir.join("config.txt"))?;
    let vocab = Vocab::load(&model_dir.join("vocab.txt"))?;
    let table = EmbeddingTable::from_loaded(
        config.model.embed_dim,
        &vocab,
        Default::default(),
        config.training.seed,
    );
    let mut model = Model::init(config.model.clone(), &table, config.training.seed)?;
    checkpoint::load_into(&model_dir.join("checkpoint.txt"), &mut model.params)?;
    Ok((model, config, vocab))
}

pub struct EvalOutcome {
    pub runs: Vec<EvalReport>,
    pub mean: EvalReport,
    pub std: EvalReport,
}

/// Evaluates a model directory on the test split, optionally repeating
/// with different inference seeds and/or post-processing with a reranker.
/// Writes report.tsv (one row per run plus mean and std) and report.txt.
pub fn evaluate_dir(
    model_dir: &Path,
    data: &DataPaths,
    out_dir: Option<&Path>,
    repeats: usize,
    method: RerankMethod,
    tradeoff: Real,
    eval_seed: u64,
) -> Result<EvalOutcome> {
    let (model, mut config, vocab) = load_model_dir(model_dir)?;
    let split = load_split(
        &mut config,
        &data.news,
        &data.test_behaviors,
        &data.embeddings,
        VocabPolicy::Fixed(vocab),
    )?;
    let repeats = repeats.max(1);
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = eval_seed.wrapping_add(r as u64);
        let report = match method {
            RerankMethod::None => evaluate_model(&model, &split.samples, seed)?,
            m => evaluate_reranked(&model, &split.samples, m, tradeoff, seed)?,
        };
        runs.push(report);
    }
    let (mean, std) = aggregate_reports(&runs);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut tsv = format!("run\t{REPORT_HEADER}\n");
        for (r, report) in runs.iter().enumerate() {
            tsv.push_str(&format!("{r}\t{}\n", report.tsv_row()));
        }
        tsv.push_str(&format!("mean\t{}\n", mean.tsv_row()));
        tsv.push_str(&format!("std\t{}\n", std.tsv_row()));
        std::fs::write(dir.join("report.tsv"), tsv)?;
        let mut human = mean.table();
        if repeats > 1 {
            human.push_str(&format!("({repeats} runs; std in report.tsv)\n"));
        }
        std::fs::write(dir.join("report.txt"), human)?;
    }
    Ok(EvalOutcome { runs, mean, std })
}

/// Reranks a scores file: each line is
/// `impression_id<TAB>scores(csv)<TAB>similarity(csv, row-major)`, and the
/// output is `impression_id<TAB>order(csv)` with 0-based candidate indices.
pub fn rerank_file(
    input: &Path,
    output: &Path,
    method: RerankMethod,
    tradeoff: Real,
    k: Option<usize>,
) -> Result<usize> {
    let f = std::fs::File::open(input)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(output)?);
    let mut count = 0usize;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: input.display().to_string(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let scores: Vec<Real> = cols[1]
            .split(',')
            .map(|v| v.trim().parse::<Real>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("bad score: {e}")))?;
        let sim_values: Vec<Real> = cols[2]
            .split(',')
            .map(|v| v.trim().parse::<Real>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("bad similarity: {e}")))?;
        let m = scores.len();
        let similarity = SimilarityMatrix::from_raw(m, sim_values)
            .map_err(|e| parse_err(e.to_string()))?;
        let order = rerank_pipeline(&scores, &similarity, method, tradeoff, k)?;
        let order_csv: Vec<String> = order.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}\t{}", cols[0], order_csv.join(","))?;
        count += 1;
    }
    Ok(count)
}

/// Trains/evaluates across a lambda or theta grid and writes sweep.tsv.
pub fn sweep_to_dir(
    mut config: RunConfig,
    data: &DataPaths,
    knob: SweepKnob,
    grid: &[Real],
    out_dir: &Path,
    eval_seed: u64,
) -> Result<Vec<SweepRow>> {
    let train_split = load_split(
        &mut config,
        &data.news,
        &data.train_behaviors,
        &data.embeddings,
        VocabPolicy::BuildFromTitles,
    )?;
    config.validate()?;
    let test_dataset = parse_mind(
        &data.news,
        &data.test_behaviors,
        VocabPolicy::Fixed(train_split.dataset.vocab.clone()),
        config.model.max_title_len,
    )?;
    let test_samples = test_dataset.to_samples(&train_split.table, config.model.max_history_len);
    let rows = tradeoff_sweep(
        &config.model,
        &train_split.table,
        &train_split.samples,
        &test_samples,
        &config.training,
        knob,
        grid,
        eval_seed,
    )?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("sweep.tsv"), sweep_table(knob, &rows))?;
    Ok(rows)
}
