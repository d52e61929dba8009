//! Corpus loading, synthetic corpora and question-level splitting.
//!
//! The record format is tab-separated UTF-8 with a one-line header:
//!
//! ```text
//! question_id<TAB>question<TAB>answer_id<TAB>answer<TAB>grade
//! ```
//!
//! Backslash, tab, carriage return and newline inside text fields are written
//! as `\\`, `\t`, `\r` and `\n`. Records sharing a `question_id` are grouped
//! regardless of where they appear in the file.
//!
//! The TREC-QA adapter reads the flat answer-sentence-selection variant: one
//! `question<TAB>sentence<TAB>label` line per pair with binary labels, as
//! distributed in the cleaned community releases. An optional header line
//! whose label column is not numeric is skipped. Questions get ids `q1, q2, ...`
//! in order of first appearance and answers `q1-a0, q1-a1, ...`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const RECORD_HEADER: &str = "question_id\tquestion\tanswer_id\tanswer\tgrade";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub answer_id: String,
    pub text: String,
    pub grade: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub question_id: String,
    pub question: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<QuestionGroup>,
    pub dev: Vec<QuestionGroup>,
    pub test: Vec<QuestionGroup>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Records,
    TrecQa,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    /// 1-based line number in the source.
    pub line: usize,
    pub reason: String,
}

/// Everything a loader saw: parsed groups plus every rejected line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub groups: Vec<QuestionGroup>,
    pub accepted: usize,
    pub rejected: Vec<Rejected>,
}

impl LoadReport {
    pub fn total_records(&self) -> usize {
        self.accepted + self.rejected.len()
    }

    /// The groups, or an error naming the first rejected line.
    pub fn into_strict(self) -> Result<Vec<QuestionGroup>> {
        match self.rejected.first() {
            Some(r) => Err(Error::Data(format!(
                "line {}: {} ({} of {} records rejected)",
                r.line,
                r.reason,
                self.rejected.len(),
                self.total_records()
            ))),
            None => Ok(self.groups),
        }
    }
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Collects records into groups keyed by question id, preserving first-seen order.
#[derive(Default)]
struct Grouper {
    groups: Vec<QuestionGroup>,
    by_id: HashMap<String, usize>,
    answer_ids: Vec<HashSet<String>>,
}

impl Grouper {
    fn push(&mut self, question_id: String, question: String, cand: Candidate) -> std::result::Result<(), String> {
        let idx = match self.by_id.get(&question_id) {
            Some(&i) => {
                if self.groups[i].question != question {
                    return Err(format!("question text differs from earlier records of {question_id}"));
                }
                i
            }
            None => {
                self.by_id.insert(question_id.clone(), self.groups.len());
                self.groups.push(QuestionGroup {
                    question_id,
                    question,
                    candidates: Vec::new(),
                });
                self.answer_ids.push(HashSet::new());
                self.groups.len() - 1
            }
        };
        if !self.answer_ids[idx].insert(cand.answer_id.clone()) {
            return Err(format!(
                "duplicate answer_id {} for question {}",
                cand.answer_id, self.groups[idx].question_id
            ));
        }
        self.groups[idx].candidates.push(cand);
        Ok(())
    }

    fn finish(self) -> Vec<QuestionGroup> {
        self.groups.into_iter().filter(|g| !g.candidates.is_empty()).collect()
    }
}

fn parse_record(line: &str) -> std::result::Result<(String, String, Candidate), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let names = ["question_id", "question", "answer_id", "answer"];
    for (name, f) in names.iter().zip(&fields) {
        if f.is_empty() {
            return Err(format!("missing {name} field"));
        }
    }
    let grade: u32 = fields[4]
        .trim()
        .parse()
        .map_err(|_| format!("grade {:?} is not a non-negative integer", fields[4]))?;
    Ok((
        unescape_field(fields[0])?,
        unescape_field(fields[1])?,
        Candidate {
            answer_id: unescape_field(fields[2])?,
            text: unescape_field(fields[3])?,
            grade,
        },
    ))
}

/// Reads the record format, keeping every rejection with its line number.
pub fn read_records<R: BufRead>(reader: R) -> Result<LoadReport> {
    let mut grouper = Grouper::default();
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim_end_matches('\r') != RECORD_HEADER {
                return Err(Error::Data(format!(
                    "line 1: expected header {RECORD_HEADER:?}"
                )));
            }
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        match parse_record(line).and_then(|(qid, q, c)| grouper.push(qid, q, c)) {
            Ok(()) => report.accepted += 1,
            Err(reason) => report.rejected.push(Rejected { line: lineno, reason }),
        }
    }
    report.groups = grouper.finish();
    Ok(report)
}

/// Reads the flat TREC-QA `question, sentence, label` layout.
pub fn read_trec_qa<R: BufRead>(reader: R) -> Result<LoadReport> {
    let mut grouper = Grouper::default();
    let mut report = LoadReport::default();
    let mut qids: HashMap<String, String> = HashMap::new();
    let mut next_answer: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if i == 0 && fields.len() == 3 && fields[2].trim().parse::<u32>().is_err() {
            continue;
        }
        let parsed = (|| {
            if fields.len() != 3 {
                return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
            }
            let (question, answer) = (fields[0].trim(), fields[1].trim());
            if question.is_empty() {
                return Err("missing question field".into());
            }
            if answer.is_empty() {
                return Err("missing answer field".into());
            }
            let grade = match fields[2].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("TREC-QA label must be 0 or 1, found {other:?}")),
            };
            let next_q = qids.len() + 1;
            let qid = qids
                .entry(question.to_string())
                .or_insert_with(|| format!("q{next_q}"))
                .clone();
            let k = next_answer.entry(qid.clone()).or_default();
            let answer_id = format!("{qid}-a{k}");
            *k += 1;
            grouper.push(
                qid,
                question.to_string(),
                Candidate {
                    answer_id,
                    text: answer.to_string(),
                    grade,
                },
            )
        })();
        match parsed {
            Ok(()) => report.accepted += 1,
            Err(reason) => report.rejected.push(Rejected { line: lineno, reason }),
        }
    }
    report.groups = grouper.finish();
    Ok(report)
}

pub fn load_dataset_report(path: &Path, format: DatasetFormat) -> Result<LoadReport> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        DatasetFormat::Records => read_records(reader),
        DatasetFormat::TrecQa => read_trec_qa(reader),
    }
}

/// Loads a dataset, failing on the first malformed record.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<QuestionGroup>> {
    load_dataset_report(path, format)?.into_strict()
}

/// Tokenized sentences for embedding training: each question once, then its candidates.
pub fn token_corpus(groups: &[QuestionGroup]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for g in groups {
        out.push(tokenize(&g.question));
        out.extend(g.candidates.iter().map(|c| tokenize(&c.text)));
    }
    out.retain(|s| !s.is_empty());
    out
}

pub fn write_records<W: Write>(mut w: W, groups: &[QuestionGroup]) -> Result<()> {
    writeln!(w, "{RECORD_HEADER}")?;
    for g in groups {
        for c in &g.candidates {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                escape_field(&g.question_id),
                escape_field(&g.question),
                escape_field(&c.answer_id),
                escape_field(&c.text),
                c.grade
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Short answers: keyword or distractor inside a few filler tokens.
    Short,
    /// Long answers padded with at least 100 irrelevant filler tokens.
    LongNoise,
}

/// Parameters of a planted-keyword corpus.
///
/// Every question contains a unique keyword. Its relevant answers contain the
/// keyword among filler; irrelevant answers contain another question's
/// keyword instead, so only the question/answer overlap separates them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub candidates: usize,
    pub relevant: usize,
    /// Distinct filler tokens available to answers.
    pub filler_vocab: usize,
    /// Inclusive range of filler tokens per answer.
    pub filler_len: (usize, usize),
    pub noise: NoiseMode,
    /// Emit grades on a 1-4 scale (relevant 3-4, irrelevant 1-2) instead of 0/1.
    pub graded: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The separable toy corpus: short answers, binary grades, training split only.
    pub fn toy(n_questions: usize, candidates: usize, seed: u64) -> Self {
        Self {
            n_train: n_questions,
            n_dev: 0,
            n_test: 0,
            candidates,
            relevant: 1,
            filler_vocab: 60,
            filler_len: (4, 10),
            noise: NoiseMode::Short,
            graded: false,
            seed,
        }
    }

    /// Long relevant and irrelevant answers (100-140 filler tokens each).
    pub fn long_noise(n_train: usize, n_test: usize, candidates: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_dev: 0,
            n_test,
            candidates,
            relevant: 1,
            filler_vocab: 200,
            filler_len: (100, 140),
            noise: NoiseMode::LongNoise,
            graded: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let total = self.n_train + self.n_dev + self.n_test;
        let fail = |m: String| Err(Error::Config(m));
        if total < 1 || self.candidates < 1 {
            return fail("synthetic corpus needs at least one question and one candidate".into());
        }
        if self.relevant < 1 || self.relevant > self.candidates {
            return fail(format!(
                "relevant answers per question must lie in 1..={}, got {}",
                self.candidates, self.relevant
            ));
        }
        if self.relevant < self.candidates && total < 2 {
            return fail("irrelevant answers borrow another question's keyword; need two questions".into());
        }
        let (lo, hi) = self.filler_len;
        if lo > hi {
            return fail(format!("filler length range {lo}..={hi} is empty"));
        }
        if self.noise == NoiseMode::LongNoise && lo < 100 {
            return fail(format!("long-noise answers need at least 100 filler tokens, got {lo}"));
        }
        // Filler is drawn without replacement within an answer.
        if self.filler_vocab < hi.max(2) {
            return fail(format!(
                "filler vocabulary of {} cannot supply {hi} distinct tokens per answer",
                self.filler_vocab
            ));
        }
        Ok(())
    }
}

const QUESTION_WORDS: [&str; 8] = ["what", "which", "who", "about", "tell", "me", "is", "the"];

/// Generates a planted-keyword corpus, deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.n_train + spec.n_dev + spec.n_test;
    let keywords: Vec<String> = (0..total).map(|i| format!("kw{i}")).collect();
    let filler: Vec<String> = (0..spec.filler_vocab).map(|i| format!("w{i}")).collect();

    let mut groups = Vec::with_capacity(total);
    for (qi, keyword) in keywords.iter().enumerate() {
        let mut qwords: Vec<String> = QUESTION_WORDS
            .choose_multiple(&mut rng, 3)
            .map(|s| s.to_string())
            .collect();
        let at = rng.gen_range(0..=qwords.len());
        qwords.insert(at, keyword.clone());
        let question = format!("{}?", qwords.join(" "));

        let mut relevant_slots: Vec<usize> = (0..spec.candidates).collect();
        relevant_slots.shuffle(&mut rng);
        relevant_slots.truncate(spec.relevant);

        let candidates = (0..spec.candidates)
            .map(|ci| {
                let is_relevant = relevant_slots.contains(&ci);
                let len = rng.gen_range(spec.filler_len.0..=spec.filler_len.1);
                let mut words: Vec<String> = filler.choose_multiple(&mut rng, len).cloned().collect();
                let planted = if is_relevant {
                    keyword.clone()
                } else {
                    let mut other = rng.gen_range(0..total - 1);
                    if other >= qi {
                        other += 1;
                    }
                    keywords[other].clone()
                };
                let at = rng.gen_range(0..=words.len());
                words.insert(at, planted);
                let grade = match (spec.graded, is_relevant) {
                    (false, r) => u32::from(r),
                    (true, true) => rng.gen_range(3..=4),
                    (true, false) => rng.gen_range(1..=2),
                };
                Candidate {
                    answer_id: format!("s{qi}-a{ci}"),
                    text: format!("{} .", words.join(" ")),
                    grade,
                }
            })
            .collect();
        groups.push(QuestionGroup {
            question_id: format!("s{qi}"),
            question,
            candidates,
        });
    }
    let test = groups.split_off(spec.n_train + spec.n_dev);
    let dev = groups.split_off(spec.n_train);
    Ok(DatasetSplit { train: groups, dev, test })
}

/// Shuffles questions with `seed` and partitions them by `ratios` (train, dev, test).
pub fn split_dataset(groups: &[QuestionGroup], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let n = groups.len();
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_dev = (n as f64 * ratios[1]).round() as usize;
    if n_train == 0 || n_dev == 0 || n_train + n_dev >= n {
        return Err(Error::Data(format!(
            "{n} questions are too few for three non-empty splits with ratios {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| groups[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        dev: pick(&order[n_train..n_train + n_dev]),
        test: pick(&order[n_train + n_dev..]),
    })
}
