use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unifilter::classifier::{checkpoint_precision, fit, record_texts, Classifier, ModelConfig, TrainConfig};
use unifilter::cluster::{kmeans, record_embedding, sample_per_cluster, summarize, ClusterConfig, EmbeddingMatrix};
use unifilter::encoder::{EncoderConfig, FrozenEncoder};
use unifilter::eval::evaluate;
use unifilter::filter::{
    corpus_stats, dfn_filter_corpus, hashed_text_embedding, score_corpus, select_top_fraction, throughput_bench,
    FilterConfig,
};
use unifilter::io::{read_all, write_records, CaptionSample, Modality, ReadMode, Record, ScoredRecord};
use unifilter::packing::{flatten_record, pack as pack_streams, FlattenOptions, Vocab};
use unifilter::synthgen::{
    always_pass, build_dataset, DatasetConfig, Generator, LevelCounts, MockGenerator, MockImageSource,
    RemoteGenerator, RemoteGeneratorConfig,
};
use unifilter::{Error, Precision, Result, Scalar};

use crate::corpus::{read_corpus, read_labeled, read_lines, CorpusLine};
use crate::manifest::{ensure_parent, read_json, sibling, write_json, RunManifest};
use crate::{BenchArgs, ClusterArgs, DfnArgs, EvalArgs, FilterArgs, GenArgs, PackArgs, ScoreArgs, StatsArgs, TrainArgs};

pub type Outcome = Result<(PathBuf, RunManifest)>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<usize> {
    ensure_parent(path)?;
    write_records(path, rows)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub dataset: DatasetConfig,
    pub images: MockImageSource,
    pub mock: MockGenerator,
}

pub fn gen(a: &GenArgs, mode: ReadMode) -> Outcome {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(n) = a.levels_count {
        cfg.dataset.per_level = LevelCounts {
            caption: n,
            interleaved: n,
        };
    }
    if let Some(s) = a.seed {
        cfg.dataset.seed = s;
    }
    if let Some(f) = a.val_fraction {
        cfg.dataset.val_fraction = f;
    }
    if let Some(side) = a.image_side {
        cfg.images.side = side;
    }
    if cfg.images.side == 0 || cfg.images.side % unifilter::synthgen::K != 0 {
        return Err(Error::Config(format!(
            "image side {} must be a positive multiple of {}",
            cfg.images.side,
            unifilter::synthgen::K
        )));
    }

    let mut m = RunManifest::new("gen");
    let remote: Option<RemoteGeneratorConfig> = a.generator_config.as_deref().map(read_json).transpose()?;
    let generator: Box<dyn Generator> = match &remote {
        Some(rc) => {
            m.input("generator_config", a.generator_config.as_deref().expect("set"));
            Box::new(RemoteGenerator { config: rc.clone() })
        }
        None => Box::new(cfg.mock.clone()),
    };
    let nonsyn: Vec<CaptionSample> = match &a.nonsyn_positives {
        Some(p) => {
            m.input("nonsyn_positives", p);
            read_all(p, mode)?
        }
        None => Vec::new(),
    };
    let seed = cfg.dataset.seed;
    let caps = cfg.images.caption_images(4 * cfg.dataset.per_level.caption, seed);
    let docs = cfg.images.document_images(4 * cfg.dataset.per_level.interleaved, seed);
    let ds = build_dataset(generator.as_ref(), &caps, &docs, &nonsyn, &cfg.dataset, &always_pass)?;

    create_dir(&a.out)?;
    let outputs = [
        ("train", a.out.join("train.jsonl")),
        ("val", a.out.join("val.jsonl")),
        ("labeled", a.out.join("labeled.jsonl")),
        ("report", a.out.join("report.json")),
    ];
    write_jsonl(&outputs[0].1, &ds.train)?;
    write_jsonl(&outputs[1].1, &ds.val)?;
    write_records(&outputs[2].1, ds.all())?;
    write_json(&outputs[3].1, &ds.report)?;
    for (name, p) in &outputs {
        m.output(name, p);
    }
    m.seed = Some(seed);
    m.config(&serde_json::json!({
        "gen": cfg,
        "generator": match &remote {
            Some(rc) => serde_json::to_value(rc)?,
            None => serde_json::Value::String("mock".into()),
        },
    }))?;
    m.summary(&ds.report)?;
    log::info!("generated {} train / {} val samples", ds.report.train, ds.report.val);
    Ok((a.out.join("manifest.json"), m))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterFileConfig {
    pub cluster: ClusterConfig,
    pub encoder: EncoderConfig,
}

pub fn cluster(a: &ClusterArgs, mode: ReadMode) -> Outcome {
    let mut cfg: ClusterFileConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ClusterFileConfig::default(),
    };
    if let Some(k) = a.k {
        cfg.cluster.k = k;
    }
    if let Some(k) = a.per_cluster {
        cfg.cluster.k_per = k;
    }
    if let Some(n) = a.max_iters {
        cfg.cluster.max_iters = n;
    }
    if let Some(s) = a.seed {
        cfg.cluster.seed = s;
    }

    let lines = read_lines(&a.embeddings_from, mode)?;
    let n_rows = lines.iter().filter(|l| matches!(l, CorpusLine::Embedding(_))).count();
    let mut skipped = 0usize;
    let (ids, vecs): (Vec<String>, Vec<Vec<f64>>) = if n_rows == lines.len() {
        lines
            .into_iter()
            .map(|l| match l {
                CorpusLine::Embedding(e) => (e.id, e.embedding),
                _ => unreachable!("all lines are embedding rows"),
            })
            .unzip()
    } else if n_rows > 0 {
        return Err(Error::Schema(format!(
            "{} mixes embedding rows and records",
            a.embeddings_from.display()
        )));
    } else {
        let encoder = FrozenEncoder::<f64>::new(&cfg.encoder)?;
        let records: Vec<Record> = read_corpus(&a.embeddings_from, mode)?;
        let embedded: Vec<(String, Result<Vec<f64>>)> = records
            .par_iter()
            .map(|r| (r.id().to_string(), record_embedding(r, &encoder)))
            .collect();
        let mut ids = Vec::with_capacity(embedded.len());
        let mut vecs = Vec::with_capacity(embedded.len());
        for (id, e) in embedded {
            match e {
                Ok(v) => {
                    ids.push(id);
                    vecs.push(v);
                }
                Err(Error::InvalidInput(msg)) => {
                    log::warn!("{id}: not clustered: {msg}");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        (ids, vecs)
    };
    let matrix = EmbeddingMatrix::new(ids.clone(), vecs)?;
    let result = kmeans(&matrix, &cfg.cluster)?;
    let selection = sample_per_cluster(&ids, &result.assignments, &cfg.cluster);
    let summary = summarize(&result, &cfg.cluster, selection.len());

    create_dir(&a.out)?;
    let mut m = RunManifest::new("cluster");
    m.input("embeddings_from", &a.embeddings_from);
    let clusters: BTreeMap<&str, usize> = ids.iter().map(String::as_str).zip(result.assignments.iter().copied()).collect();
    let clusters_path = a.out.join("clusters.json");
    write_json(&clusters_path, &clusters)?;
    m.output("clusters", &clusters_path);
    let sel_path = a.out.join("selection.txt");
    let mut text = selection.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&sel_path, text).map_err(|e| Error::io(&sel_path, e))?;
    m.output("selection", &sel_path);
    let summary_path = a.out.join("summary.json");
    write_json(&summary_path, &summary)?;
    m.output("summary", &summary_path);
    if a.emit_centroids {
        let p = a.out.join("centroids.json");
        write_json(&p, &result.centroids)?;
        m.output("centroids", &p);
    }
    m.seed = Some(cfg.cluster.seed);
    m.config(&cfg)?;
    m.summary(&serde_json::json!({ "clustering": summary, "skipped_without_images": skipped }))?;
    Ok((a.out.join("manifest.json"), m))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub precision: Option<Precision>,
    pub seed: u64,
}

pub fn train(a: &TrainArgs, mode: ReadMode) -> Outcome {
    let mut cfg: TrainFileConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFileConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.optimizer.peak_lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let precision = a.precision.or(cfg.precision).unwrap_or(Precision::F32);
    cfg.precision = Some(precision);

    let train_set = read_labeled(&a.train, mode)?;
    let val_set = read_labeled(&a.val, mode)?;
    let (json, vocab, history) = match precision {
        Precision::F32 => fit_to_json::<f32>(&cfg, &train_set, &val_set)?,
        Precision::F64 => fit_to_json::<f64>(&cfg, &train_set, &val_set)?,
    };
    let ckpt = &a.out_checkpoint;
    ensure_parent(ckpt)?;
    std::fs::write(ckpt, json).map_err(|e| Error::io(ckpt, e))?;
    let vocab_path = sibling(ckpt, "vocab.json");
    vocab.save(&vocab_path)?;
    let history_path = sibling(ckpt, "history.json");
    write_json(&history_path, &history)?;

    let mut m = RunManifest::new("train");
    m.input("train", &a.train);
    m.input("val", &a.val);
    m.output("checkpoint", ckpt);
    m.output("vocab", &vocab_path);
    m.output("history", &history_path);
    m.seed = Some(cfg.seed);
    m.config(&cfg)?;
    m.summary(&history)?;
    log::info!(
        "best epoch {}: val accuracy {:.4}, macro-F1 {:.4}",
        history.best_epoch,
        history.best_val_accuracy,
        history.best_val_macro_f1
    );
    Ok((sibling(ckpt, "manifest.json"), m))
}

fn fit_to_json<S: Scalar>(
    cfg: &TrainFileConfig,
    train_set: &[unifilter::io::LabeledSample],
    val_set: &[unifilter::io::LabeledSample],
) -> Result<(String, Vocab, unifilter::classifier::TrainHistory)> {
    let (model, history) = fit::<S>(cfg.model.clone(), train_set, val_set, &cfg.train, cfg.seed)?;
    Ok((model.to_json()?, model.vocab.clone(), history))
}

/// Runs `$body` with `$model` bound to the checkpoint at its stored precision.
macro_rules! with_checkpoint {
    ($path:expr, |$model:ident| $body:expr) => {
        match checkpoint_precision($path)? {
            Precision::F32 => {
                let $model = Classifier::<f32>::load($path)?;
                $body
            }
            Precision::F64 => {
                let $model = Classifier::<f64>::load($path)?;
                $body
            }
        }
    };
}

pub fn eval(a: &EvalArgs, mode: ReadMode) -> Outcome {
    let samples = read_labeled(&a.val, mode)?;
    let records: Vec<Record> = samples.iter().map(|s| s.record.clone()).collect();
    let out = with_checkpoint!(&a.checkpoint, |model| score_corpus(&records, &model, a.batch_size)?);
    if let Some(r) = out.rejects.first() {
        return Err(Error::invalid(format!(
            "{} of {} samples could not be scored; first: {}: {}",
            out.rejects.len(),
            records.len(),
            r.id,
            r.reason
        )));
    }
    let preds: Vec<f64> = out.scores.iter().map(|s| s.score).collect();
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let report = evaluate(&preds, &labels)?;
    write_json(&a.out, &report)?;
    print!("{}", report.table());

    let mut m = RunManifest::new("eval");
    m.input("checkpoint", &a.checkpoint);
    m.input("val", &a.val);
    m.output("report", &a.out);
    m.config(&serde_json::json!({ "batch_size": a.batch_size }))?;
    m.summary(&serde_json::json!({
        "n": report.n,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
    }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn score(a: &ScoreArgs, mode: ReadMode) -> Outcome {
    let records = read_corpus(&a.input, mode)?;
    let out = with_checkpoint!(&a.checkpoint, |model| score_corpus(&records, &model, a.batch_size)?);
    write_jsonl(&a.out, &out.scores)?;
    let rejects_path = sibling(&a.out, "rejects.jsonl");
    write_jsonl(&rejects_path, &out.rejects)?;

    let mut m = RunManifest::new("score");
    m.input("checkpoint", &a.checkpoint);
    m.input("in", &a.input);
    m.output("scores", &a.out);
    m.output("rejects", &rejects_path);
    m.config(&serde_json::json!({ "batch_size": a.batch_size }))?;
    m.summary(&serde_json::json!({
        "records": records.len(),
        "scored": out.scores.len(),
        "rejected": out.rejects.len(),
    }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn filter(a: &FilterArgs, mode: ReadMode) -> Outcome {
    let caption_f = a.fraction.unwrap_or(a.caption_fraction);
    let doc_f = a.fraction.unwrap_or(a.interleaved_fraction);
    for f in [caption_f, doc_f] {
        FilterConfig {
            fraction: f,
            ..FilterConfig::default()
        }
        .validate()?;
    }
    let scores: Vec<ScoredRecord> = read_all(&a.scores, mode)?;
    let records = read_corpus(&a.input, mode)?;
    let known: HashSet<&str> = records.iter().map(Record::id).collect();
    if let Some(s) = scores.iter().find(|s| !known.contains(s.id.as_str())) {
        return Err(Error::invalid(format!(
            "score/record id mismatch: score for unknown id {:?}",
            s.id
        )));
    }
    let scored: HashMap<&str, &ScoredRecord> = scores.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut keep: HashSet<String> = HashSet::new();
    let mut per_modality = BTreeMap::new();
    let mut unscored = 0usize;
    for (modality, name, f) in [
        (Modality::Caption, "caption", caption_f),
        (Modality::Interleaved, "interleaved", doc_f),
    ] {
        let mut pool: Vec<Record> = Vec::new();
        let mut pool_scores: Vec<ScoredRecord> = Vec::new();
        for r in records.iter().filter(|r| r.modality() == modality) {
            match scored.get(r.id()) {
                Some(s) => {
                    pool.push(r.clone());
                    pool_scores.push((*s).clone());
                }
                None => unscored += 1,
            }
        }
        if pool.is_empty() {
            continue;
        }
        let kept = select_top_fraction(&pool_scores, &pool, f)?;
        per_modality.insert(
            name,
            serde_json::json!({ "fraction": f, "scored": pool.len(), "kept": kept.len() }),
        );
        keep.extend(kept.into_iter().map(|r| r.id().to_string()));
    }
    if unscored > 0 {
        log::warn!("{unscored} records have no score and were dropped");
    }
    let out: Vec<&Record> = records.iter().filter(|r| keep.contains(r.id())).collect();
    ensure_parent(&a.out)?;
    write_records(&a.out, out.iter().copied())?;

    let mut m = RunManifest::new("filter");
    m.input("scores", &a.scores);
    m.input("in", &a.input);
    m.output("filtered", &a.out);
    m.config(&serde_json::json!({ "caption_fraction": caption_f, "interleaved_fraction": doc_f }))?;
    m.summary(&serde_json::json!({
        "records": records.len(),
        "kept": out.len(),
        "unscored": unscored,
        "per_modality": per_modality,
    }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn dfn_filter(a: &DfnArgs, mode: ReadMode) -> Outcome {
    let enc_cfg: EncoderConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => EncoderConfig::default(),
    };
    if !a.threshold.is_finite() {
        return Err(Error::Config("threshold must be finite".into()));
    }
    let encoder = FrozenEncoder::<f64>::new(&enc_cfg)?;
    let records = read_corpus(&a.input, mode)?;
    let docs: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            Record::Interleaved(d) => Some(d.clone()),
            Record::Caption(_) => None,
        })
        .collect();
    let dim = enc_cfg.d_v;
    let (kept, rejects, summary) = dfn_filter_corpus(
        &docs,
        &|t| hashed_text_embedding(t, dim),
        &|img| unifilter::cluster::image_embedding(img, &encoder),
        a.threshold,
    )?;
    let mut kept: HashMap<String, _> = kept.into_iter().map(|d| (d.id.clone(), d)).collect();
    let mut captions = 0usize;
    let out: Vec<Record> = records
        .into_iter()
        .filter_map(|r| match r {
            Record::Caption(c) => {
                captions += 1;
                Some(Record::Caption(c))
            }
            Record::Interleaved(d) => kept.remove(&d.id).map(Record::Interleaved),
        })
        .collect();
    write_jsonl(&a.out, &out)?;
    let rejects_path = sibling(&a.out, "rejects.jsonl");
    write_jsonl(&rejects_path, &rejects)?;

    let mut m = RunManifest::new("dfn-filter");
    m.input("in", &a.input);
    m.output("filtered", &a.out);
    m.output("rejects", &rejects_path);
    m.config(&serde_json::json!({ "threshold": a.threshold, "encoder": enc_cfg }))?;
    m.summary(&serde_json::json!({ "documents": summary, "captions_passed_through": captions }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn pack(a: &PackArgs, mode: ReadMode) -> Outcome {
    let records = read_corpus(&a.input, mode)?;
    let mut m = RunManifest::new("pack");
    m.input("in", &a.input);
    let vocab = if a.build_vocab {
        let v = Vocab::build(records.iter().flat_map(record_texts), 1);
        ensure_parent(&a.vocab)?;
        v.save(&a.vocab)?;
        m.output("vocab", &a.vocab);
        v
    } else {
        m.input("vocab", &a.vocab);
        Vocab::load(&a.vocab)?
    };
    let opts = FlattenOptions {
        tokens_per_image: a.tokens_per_image,
        caption_end_of_chunk: a.caption_end_of_chunk,
    };
    if opts.tokens_per_image == 0 {
        return Err(Error::Config("tokens per image must be positive".into()));
    }
    let streams: Vec<_> = records.iter().map(|r| flatten_record(r, &vocab, opts)).collect();
    let packed = pack_streams(&streams, a.context_len, a.tokens_per_image)?;
    write_jsonl(&a.out, &packed)?;

    m.output("packed", &a.out);
    m.config(&serde_json::json!({
        "context_len": a.context_len,
        "tokens_per_image": a.tokens_per_image,
        "caption_end_of_chunk": a.caption_end_of_chunk,
    }))?;
    m.summary(&serde_json::json!({
        "records": records.len(),
        "sequences": packed.len(),
        "stream_tokens": streams.iter().map(|s| s.ids.len()).sum::<usize>(),
        "vocab_size": vocab.len(),
    }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn stats(a: &StatsArgs, mode: ReadMode) -> Outcome {
    let records = read_corpus(&a.input, mode)?;
    let mut m = RunManifest::new("stats");
    m.input("in", &a.input);
    let retained = match (&a.original, a.retained_fraction) {
        (Some(p), _) => {
            m.input("original", p);
            let n = read_corpus(p, mode)?.len();
            if n == 0 {
                return Err(Error::invalid("original corpus is empty"));
            }
            records.len() as f64 / n as f64
        }
        (None, Some(f)) => f,
        (None, None) => 1.0,
    };
    let stats = corpus_stats(&records, a.image_token_equiv, retained)?;
    write_json(&a.out, &stats)?;
    print!("{}", stats.table());
    m.output("stats", &a.out);
    m.config(&serde_json::json!({ "image_token_equiv": a.image_token_equiv, "retained_fraction": retained }))?;
    m.summary(&stats)?;
    Ok((sibling(&a.out, "manifest.json"), m))
}

pub fn bench(a: &BenchArgs) -> Outcome {
    if a.sizes.is_empty() || a.batches.is_empty() || a.sizes.contains(&0) || a.batches.contains(&0) {
        return Err(Error::Config("--sizes and --batches need positive values".into()));
    }
    let report = with_checkpoint!(&a.checkpoint, |model| throughput_bench(
        &model, &a.sizes, &a.batches, a.repeats
    )?);
    write_json(&a.out, &report)?;
    for r in &report.rows {
        println!(
            "n={} batch={} {:.4}s {:.1} samples/s",
            r.corpus_size, r.batch_size, r.seconds, r.samples_per_sec
        );
    }
    let mut m = RunManifest::new("bench");
    m.input("checkpoint", &a.checkpoint);
    m.output("report", &a.out);
    m.config(&serde_json::json!({ "sizes": a.sizes, "batches": a.batches, "repeats": a.repeats }))?;
    m.summary(&serde_json::json!({ "rows": report.rows.len(), "threads": report.threads }))?;
    Ok((sibling(&a.out, "manifest.json"), m))
}
