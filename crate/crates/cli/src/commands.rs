use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use attnrank::data_io::{
    generate_synthetic, load_dataset, token_corpus, write_records, Candidate, DatasetFormat, QuestionGroup,
    SyntheticSpec,
};
use attnrank::evaluation::{
    format_report, length_bucket_report, overlap_baseline_run, rank_answers, score_run, write_metrics_csv,
    write_run, EvalOptions,
};
use attnrank::explain::{intensities, render_ansi, render_html};
use attnrank::model::{read_checkpoint, write_checkpoint, Model, ModelConfig};
use attnrank::profile::Profile;
use attnrank::text::{build_vocab, read_embeddings, train_word2vec, write_embeddings, write_vocab, Embeddings};
use attnrank::training::{train_with_callback, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::manifest::{write_atomic, ManifestBuilder};
use crate::{CliError, CliResult, EvalArgs, ExplainArgs, SynthArgs, SynthKind, TrainArgs, TrainEmbeddingsArgs};

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist or is not a file", path.display())))
    }
}

/// Refuses outputs that would overwrite an input.
fn guard_outputs(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    for out in outputs {
        let out_abs = fs::canonicalize(out).ok();
        for input in inputs {
            let same = out == input || (out_abs.is_some() && out_abs == fs::canonicalize(input).ok());
            if same {
                return Err(CliError::Usage(format!(
                    "output {} would overwrite input {}",
                    out.display(),
                    input.display()
                )));
            }
        }
    }
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> attnrank::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load_groups(path: &Path, format: DatasetFormat) -> anyhow::Result<Vec<QuestionGroup>> {
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

fn load_embeddings(path: &Path) -> anyhow::Result<Embeddings> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_embeddings(BufReader::new(f)).with_context(|| format!("reading embeddings {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(BufReader::new(f)).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn vocab_path(embeddings: &Path) -> PathBuf {
    embeddings.with_extension("vocab.txt")
}

pub fn synth(out_dir: &Path, a: SynthArgs, argv: &[String]) -> CliResult<()> {
    let mut spec = match a.kind {
        SynthKind::Toy => SyntheticSpec::toy(a.train, a.candidates, a.seed),
        SynthKind::LongNoise => SyntheticSpec::long_noise(a.train, a.test, a.candidates, a.seed),
    };
    spec.n_dev = a.dev;
    spec.n_test = a.test;
    spec.graded = a.graded;
    let split = generate_synthetic(&spec)?;
    let dir = a.dir.unwrap_or_else(|| out_dir.to_path_buf());
    let mut m = ManifestBuilder::new("synth", argv);
    m.seed(a.seed).config(&spec)?;
    for (name, groups) in [("train.tsv", &split.train), ("dev.tsv", &split.dev), ("test.tsv", &split.test)] {
        if groups.is_empty() {
            continue;
        }
        let path = dir.join(name);
        write_atomic(&path, &to_bytes(|b| write_records(b, groups))?)?;
        println!("{}: {} questions", path.display(), groups.len());
        m.output(&path);
    }
    m.finish(&dir.join("synth.manifest.json"))?;
    Ok(())
}

pub fn train_embeddings(out_dir: &Path, a: TrainEmbeddingsArgs, argv: &[String]) -> CliResult<()> {
    require_file(&a.corpus, "corpus")?;
    let profile = Profile::from(a.profile);
    let dim = a.dim.unwrap_or(profile.emb_dim());
    let mut cfg = profile.skip_gram();
    if let Some(v) = a.min_count {
        cfg.min_count = v;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.negatives {
        cfg.negatives = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    let out = a.out.unwrap_or_else(|| out_dir.join("embeddings.bin"));
    let vocab_out = vocab_path(&out);
    guard_outputs(&[&a.corpus], &[&out, &vocab_out])?;

    let groups = load_groups(&a.corpus, a.format.into())?;
    let corpus = token_corpus(&groups);
    let vocab = build_vocab(&corpus, cfg.min_count)?;
    let table = train_word2vec(&corpus, &vocab, dim, &cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let embeddings = Embeddings::new(vocab, table)?;

    write_atomic(&out, &to_bytes(|b| write_embeddings(b, &embeddings))?)?;
    write_atomic(&vocab_out, &to_bytes(|b| write_vocab(b, &embeddings.vocab))?)?;
    println!(
        "{}: {} tokens x {} dims from {} sentences",
        out.display(),
        embeddings.vocab.len(),
        dim,
        corpus.len()
    );

    #[derive(Serialize)]
    struct Snapshot<'a> {
        profile: &'a str,
        dim: usize,
        skip_gram: &'a attnrank::text::SkipGramConfig,
    }
    let mut m = ManifestBuilder::new("train-embeddings", argv);
    m.seed(a.seed)
        .config(&Snapshot { profile: profile.name(), dim, skip_gram: &cfg })?
        .input(&a.corpus)
        .output(&out)
        .output(&vocab_out);
    m.finish(&out.with_extension("manifest.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    profile: &'a str,
    train_data: String,
    dev_data: Option<String>,
    embeddings: String,
    model: &'a ModelConfig,
    training: &'a TrainConfig,
}

pub fn train(out_dir: &Path, a: TrainArgs, argv: &[String]) -> CliResult<()> {
    require_file(&a.train, "training data")?;
    require_file(&a.embeddings, "embeddings")?;
    if let Some(dev) = &a.dev {
        require_file(dev, "dev data")?;
    }
    let profile = Profile::from(a.profile);
    let run_dir = a.run_dir.clone().unwrap_or_else(|| out_dir.join("run"));
    let best_path = run_dir.join("checkpoint_best.bin");
    let last_path = run_dir.join("checkpoint_last.bin");
    let history_path = run_dir.join("history.csv");
    let config_path = run_dir.join("config.txt");
    let tuned_path = run_dir.join("embeddings_tuned.bin");
    let mut inputs: Vec<&Path> = vec![&a.train, &a.embeddings];
    if let Some(dev) = &a.dev {
        inputs.push(dev);
    }
    guard_outputs(&inputs, &[&best_path, &last_path, &history_path, &config_path, &tuned_path])?;

    let format = DatasetFormat::from(a.format);
    let train_groups = load_groups(&a.train, format)?;
    let dev_groups = a.dev.as_deref().map(|p| load_groups(p, format)).transpose()?;
    let embeddings = load_embeddings(&a.embeddings)?;

    let base = ModelConfig::with_emb_dim(embeddings.dim());
    let model_cfg = ModelConfig {
        att_dim: a.att_dim.unwrap_or(base.att_dim),
        hidden1_dim: a.hidden1_dim.unwrap_or(base.hidden1_dim),
        hidden2_dim: a.hidden2_dim.unwrap_or(base.hidden2_dim),
        head_hidden_dim: a.head_dim.unwrap_or(base.head_hidden_dim),
        lrelu_slope: a.lrelu,
        attention_mode: a.attention.into(),
        pooling_mode: a.pooling.into(),
        max_q_len: a.max_q_len,
        max_a_len: a.max_a_len,
        question_overlap: a.question_overlap,
        ..base
    };
    let train_cfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs.unwrap_or(profile.epochs()),
        seed: a.seed,
        shuffle: !a.no_shuffle,
        a_max_len_observed: a.a_max,
        patience: (!a.no_early_stop).then_some(a.patience),
        positive_weight: a.positive_weight,
        fine_tune_embeddings: a.fine_tune,
        grade_threshold: a.grade_threshold.unwrap_or(profile.grade_threshold()),
    };
    let snapshot = TrainSnapshot {
        profile: profile.name(),
        train_data: a.train.display().to_string(),
        dev_data: a.dev.as_ref().map(|p| p.display().to_string()),
        embeddings: a.embeddings.display().to_string(),
        model: &model_cfg,
        training: &train_cfg,
    };
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write_atomic(&config_path, toml::to_string(&snapshot)?.as_bytes())?;

    let outcome = train_with_callback(
        &train_groups,
        dev_groups.as_deref(),
        &train_cfg,
        &model_cfg,
        &embeddings,
        |r| match r.dev_mrr {
            Some(m) => eprintln!("epoch {:>4}  loss {:.6}  dev MRR {:.4}  {:.2}s", r.epoch, r.loss, m, r.seconds),
            None => eprintln!("epoch {:>4}  loss {:.6}  {:.2}s", r.epoch, r.loss, r.seconds),
        },
    )?;

    write_atomic(&best_path, &to_bytes(|b| write_checkpoint(b, &outcome.best))?)?;
    write_atomic(&last_path, &to_bytes(|b| write_checkpoint(b, &outcome.last))?)?;
    write_atomic(&history_path, outcome.history.to_csv().as_bytes())?;
    let mut m = ManifestBuilder::new("train", argv);
    m.seed(a.seed).config(&snapshot)?;
    for p in &inputs {
        m.input(p);
    }
    m.output(&config_path).output(&best_path).output(&last_path).output(&history_path);
    if let Some(tuned) = &outcome.embeddings {
        write_atomic(&tuned_path, &to_bytes(|b| write_embeddings(b, tuned))?)?;
        m.output(&tuned_path);
    }
    m.finish(&run_dir.join("manifest.json"))?;
    println!(
        "trained {} epochs; best epoch {}; checkpoints in {}",
        outcome.history.epochs.len(),
        outcome.best_epoch,
        run_dir.display()
    );
    Ok(())
}

pub fn eval(out_dir: &Path, a: EvalArgs, argv: &[String]) -> CliResult<()> {
    require_file(&a.data, "data")?;
    if !a.baseline {
        require_file(&a.checkpoint, "checkpoint")?;
        require_file(&a.embeddings, "embeddings")?;
    }
    let profile = Profile::from(a.profile);
    let edges = a.buckets.clone().unwrap_or_else(|| profile.bucket_edges());
    let opts = EvalOptions {
        grade_threshold: a.grade_threshold.unwrap_or(profile.grade_threshold()),
        drop_unanswerable: a.drop_unanswerable,
    };
    let report_dir = a.report_dir.clone().unwrap_or_else(|| out_dir.join("eval"));
    let run_path = report_dir.join("run.tsv");
    let report_path = report_dir.join("report.txt");
    let metrics_path = report_dir.join("metrics.csv");
    let inputs: Vec<&Path> = vec![&a.checkpoint, &a.embeddings, &a.data];
    guard_outputs(&inputs, &[&run_path, &report_path, &metrics_path])?;

    let groups = load_groups(&a.data, a.format.into())?;
    let run = if a.baseline {
        overlap_baseline_run(&groups)
    } else {
        let model = load_model(&a.checkpoint)?;
        let embeddings = load_embeddings(&a.embeddings)?;
        model.check_compatible(&embeddings)?;
        score_run(&model, &embeddings, &groups)?
    };
    let report = length_bucket_report(&run, &edges, a.length_key.into(), &opts)?;

    write_atomic(&run_path, &to_bytes(|b| write_run(b, &run))?)?;
    write_atomic(&metrics_path, &to_bytes(|b| write_metrics_csv(b, &report))?)?;
    let table = format_report(&report);
    write_atomic(&report_path, table.as_bytes())?;
    print!("{table}");

    #[derive(Serialize)]
    struct Snapshot<'a> {
        profile: &'a str,
        bucket_edges: &'a [usize],
        length_key: String,
        options: &'a EvalOptions,
        baseline: bool,
    }
    let mut m = ManifestBuilder::new("eval", argv);
    m.config(&Snapshot {
        profile: profile.name(),
        bucket_edges: &edges,
        length_key: format!("{:?}", a.length_key).to_lowercase(),
        options: &opts,
        baseline: a.baseline,
    })?;
    m.input(&a.data);
    if !a.baseline {
        m.input(&a.checkpoint).input(&a.embeddings);
    }
    m.output(&run_path).output(&report_path).output(&metrics_path);
    m.finish(&report_dir.join("manifest.json"))?;
    Ok(())
}

pub fn explain(out_dir: &Path, a: ExplainArgs, argv: &[String]) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.embeddings, "embeddings")?;
    let mut texts = a.answers.clone();
    if let Some(file) = &a.answers_file {
        require_file(file, "answers file")?;
        let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
        for line in BufReader::new(f).lines() {
            texts.push(line?);
        }
    }
    if texts.is_empty() {
        return Err(CliError::Usage("give at least one --answer or an --answers-file".into()));
    }
    let html_path = a.html.clone().unwrap_or_else(|| out_dir.join("explain.html"));
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.embeddings];
    if let Some(f) = &a.answers_file {
        inputs.push(f);
    }
    guard_outputs(&inputs, &[&html_path])?;

    let model = load_model(&a.checkpoint)?;
    let embeddings = load_embeddings(&a.embeddings)?;
    let candidates: Vec<Candidate> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Candidate {
            answer_id: format!("answer{}", i + 1),
            text: t.clone(),
            grade: 0,
        })
        .collect();
    let ranked = rank_answers(&model, &embeddings, &a.question, &candidates)?;

    write_atomic(&html_path, render_html(&a.question, &ranked).as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    if a.plain {
        for r in &ranked {
            let t = &r.prediction.answer_trace;
            writeln!(stdout, "{} score {:.6}", r.entry.answer_id, r.entry.score)?;
            let toks: Vec<String> = intensities(t).iter().map(|(tok, w, _)| format!("{tok}:{w:.4}")).collect();
            writeln!(stdout, "  {}", toks.join(" "))?;
            writeln!(stdout, "  sum of weights {:.6}", t.total())?;
        }
    } else {
        write!(stdout, "{}", render_ansi(&a.question, &ranked))?;
    }
    writeln!(stdout, "heatmap written to {}", html_path.display())?;

    #[derive(Serialize)]
    struct Snapshot<'a> {
        question: &'a str,
        answers: &'a [String],
    }
    let mut m = ManifestBuilder::new("explain", argv);
    m.config(&Snapshot { question: &a.question, answers: &texts })?;
    for p in &inputs {
        m.input(p);
    }
    m.output(&html_path);
    m.finish(&html_path.with_extension("manifest.json"))?;
    Ok(())
}
