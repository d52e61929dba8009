//! Ranking, MRR/NDCG and answer-length bucket analysis.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{Candidate, QuestionGroup};
use crate::error::{Error, Result};
use crate::model::{encode_pair, Model, Prediction};
use crate::text::{tokenize, Embeddings};

/// Default cutoff for graded (1-4) data: grade 3 and above is relevant.
pub const DEFAULT_GRADE_THRESHOLD: u32 = 3;

/// The grade at or above which a candidate counts as relevant.
///
/// Binary data (no grade above 1) uses 1 regardless of `threshold`.
pub fn relevance_cutoff(max_grade: u32, threshold: u32) -> u32 {
    if max_grade <= 1 {
        1
    } else {
        threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub answer_id: String,
    pub score: f64,
    pub grade: u32,
    pub answer_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedQuestion {
    pub question_id: String,
    /// Best first.
    pub entries: Vec<RankedEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    pub questions: Vec<RankedQuestion>,
}

impl RankedRun {
    pub fn max_grade(&self) -> u32 {
        self.questions
            .iter()
            .flat_map(|q| &q.entries)
            .map(|e| e.grade)
            .max()
            .unwrap_or(0)
    }

    pub fn num_entries(&self) -> usize {
        self.questions.iter().map(|q| q.entries.len()).sum()
    }
}

/// Sorts by descending score; equal scores keep their input order.
pub fn rank_entries(mut entries: Vec<RankedEntry>) -> Vec<RankedEntry> {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    entries
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub grade_threshold: u32,
    /// Leave questions without any relevant candidate out of MRR instead of scoring them 0.
    pub drop_unanswerable: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grade_threshold: DEFAULT_GRADE_THRESHOLD,
            drop_unanswerable: false,
        }
    }
}

fn check_run(run: &RankedRun) -> Result<()> {
    if run.questions.is_empty() {
        return Err(Error::Data("run contains no questions".into()));
    }
    if let Some(q) = run.questions.iter().find(|q| q.entries.is_empty()) {
        return Err(Error::Data(format!("question {} has no candidates", q.question_id)));
    }
    Ok(())
}

fn reciprocal_rank(q: &RankedQuestion, cutoff: u32) -> Option<f64> {
    q.entries
        .iter()
        .position(|e| e.grade >= cutoff)
        .map(|i| 1.0 / (i + 1) as f64)
}

fn mrr_of<'a>(questions: impl Iterator<Item = &'a RankedQuestion>, cutoff: u32, drop: bool) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for q in questions {
        match reciprocal_rank(q, cutoff) {
            Some(rr) => {
                total += rr;
                n += 1;
            }
            None if !drop => n += 1,
            None => {}
        }
    }
    (if n == 0 { 0.0 } else { total / n as f64 }, n)
}

/// Mean reciprocal rank of the first relevant candidate.
pub fn mrr(run: &RankedRun, opts: &EvalOptions) -> Result<f64> {
    check_run(run)?;
    let cutoff = relevance_cutoff(run.max_grade(), opts.grade_threshold);
    Ok(mrr_of(run.questions.iter(), cutoff, opts.drop_unanswerable).0)
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| ((1u64 << g.min(62)) - 1) as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG of one ranked list over its full length; 0 when every grade is 0.
pub fn ndcg_question(q: &RankedQuestion) -> f64 {
    let actual = dcg(q.entries.iter().map(|e| e.grade));
    let mut ideal: Vec<u32> = q.entries.iter().map(|e| e.grade).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter());
    if best == 0.0 {
        0.0
    } else {
        actual / best
    }
}

/// Mean NDCG with exponential gain `2^grade - 1` and `log2(rank + 1)` discount.
pub fn ndcg(run: &RankedRun) -> Result<f64> {
    check_run(run)?;
    Ok(run.questions.iter().map(ndcg_question).sum::<f64>() / run.questions.len() as f64)
}

/// Which answer length represents a question when bucketing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthKey {
    MaxCandidate,
    MeanCandidate,
    TopRanked,
}

impl LengthKey {
    fn length(self, q: &RankedQuestion) -> usize {
        let lens = q.entries.iter().map(|e| e.answer_len);
        match self {
            LengthKey::MaxCandidate => lens.max().unwrap_or(0),
            LengthKey::MeanCandidate => {
                let n = q.entries.len().max(1);
                (lens.sum::<usize>() as f64 / n as f64).round() as usize
            }
            LengthKey::TopRanked => q.entries.first().map_or(0, |e| e.answer_len),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    /// Inclusive lower length bound.
    pub lo: usize,
    /// Exclusive upper bound; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub n: usize,
    pub mrr: f64,
    pub ndcg: f64,
}

impl BucketMetrics {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{}, {})", self.lo, hi),
            None => format!("[{}, inf)", self.lo),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_questions: usize,
    pub mrr: f64,
    pub ndcg: f64,
    pub buckets: Vec<BucketMetrics>,
}

/// Global metrics plus per-bucket metrics, with buckets `[0, e0), [e0, e1), ..., [e_last, inf)`.
pub fn length_bucket_report(run: &RankedRun, edges: &[usize], key: LengthKey, opts: &EvalOptions) -> Result<EvalReport> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("bucket edges must be strictly increasing, got {edges:?}")));
    }
    check_run(run)?;
    let cutoff = relevance_cutoff(run.max_grade(), opts.grade_threshold);
    let mut bounds: Vec<(usize, Option<usize>)> = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0;
    for &e in edges {
        bounds.push((lo, Some(e)));
        lo = e;
    }
    bounds.push((lo, None));

    let keyed: Vec<(usize, &RankedQuestion)> = run.questions.iter().map(|q| (key.length(q), q)).collect();
    let buckets = bounds
        .into_iter()
        .map(|(lo, hi)| {
            let members: Vec<&RankedQuestion> = keyed
                .iter()
                .filter(|(len, _)| *len >= lo && hi.map_or(true, |h| *len < h))
                .map(|(_, q)| *q)
                .collect();
            let n = members.len();
            let (bucket_mrr, _) = mrr_of(members.iter().copied(), cutoff, opts.drop_unanswerable);
            let bucket_ndcg = if n == 0 {
                0.0
            } else {
                members.iter().map(|q| ndcg_question(q)).sum::<f64>() / n as f64
            };
            BucketMetrics {
                lo,
                hi,
                n,
                mrr: bucket_mrr,
                ndcg: bucket_ndcg,
            }
        })
        .collect();
    Ok(EvalReport {
        n_questions: run.questions.len(),
        mrr: mrr(run, opts)?,
        ndcg: ndcg(run)?,
        buckets,
    })
}

/// A scored candidate with the attention traces behind its score.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedAnswer {
    pub entry: RankedEntry,
    pub prediction: Prediction,
}

/// Scores every candidate for `question` and returns them best first.
pub fn rank_answers(model: &Model, embeddings: &Embeddings, question: &str, candidates: &[Candidate]) -> Result<Vec<RankedAnswer>> {
    if candidates.is_empty() {
        return Err(Error::Data("no candidate answers to rank".into()));
    }
    model.check_compatible(embeddings)?;
    let q_tokens = tokenize(question);
    let mut scored: Vec<RankedAnswer> = candidates
        .iter()
        .map(|c| {
            let a_tokens = tokenize(&c.text);
            let pair = encode_pair(&q_tokens, &a_tokens, 0, &model.config, embeddings)?;
            let prediction = model.predict_encoded(&pair)?;
            Ok(RankedAnswer {
                entry: RankedEntry {
                    answer_id: c.answer_id.clone(),
                    score: prediction.relevance,
                    grade: c.grade,
                    answer_len: a_tokens.len(),
                },
                prediction,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.entry.score.total_cmp(&a.entry.score));
    Ok(scored)
}

/// Scores and ranks every question of `groups`, in parallel over questions.
pub fn score_run(model: &Model, embeddings: &Embeddings, groups: &[QuestionGroup]) -> Result<RankedRun> {
    model.check_compatible(embeddings)?;
    let questions = groups
        .par_iter()
        .map(|g| {
            let ranked = rank_answers(model, embeddings, &g.question, &g.candidates)
                .map_err(|e| Error::Data(format!("question {}: {e}", g.question_id)))?;
            Ok(RankedQuestion {
                question_id: g.question_id.clone(),
                entries: ranked.into_iter().map(|r| r.entry).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedRun { questions })
}

/// Bag-of-words baseline: score = fraction of answer tokens that also occur in the question.
pub fn overlap_baseline_run(groups: &[QuestionGroup]) -> RankedRun {
    let questions = groups
        .iter()
        .map(|g| {
            let q: HashSet<String> = tokenize(&g.question).into_iter().filter(|t| t.chars().any(char::is_alphanumeric)).collect();
            let entries = g
                .candidates
                .iter()
                .map(|c| {
                    let a = tokenize(&c.text);
                    let hits = a.iter().filter(|t| q.contains(*t)).count();
                    RankedEntry {
                        answer_id: c.answer_id.clone(),
                        score: hits as f64 / a.len().max(1) as f64,
                        grade: c.grade,
                        answer_len: a.len(),
                    }
                })
                .collect();
            RankedQuestion {
                question_id: g.question_id.clone(),
                entries: rank_entries(entries),
            }
        })
        .collect();
    RankedRun { questions }
}

/// Tab-separated run file: `question_id answer_id rank score grade answer_len`, no header.
pub fn write_run<W: Write>(mut w: W, run: &RankedRun) -> Result<()> {
    for q in &run.questions {
        for (i, e) in q.entries.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                q.question_id,
                e.answer_id,
                i + 1,
                e.score,
                e.grade,
                e.answer_len
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_CSV_HEADER: &str = "scope,lo,hi,n,mrr,ndcg";

/// Machine-readable metrics: one `global` row, then one row per bucket.
pub fn write_metrics_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    writeln!(w, "global,,,{},{},{}", report.n_questions, report.mrr, report.ndcg)?;
    for b in &report.buckets {
        let hi = b.hi.map(|h| h.to_string()).unwrap_or_default();
        writeln!(w, "bucket,{},{},{},{},{}", b.lo, hi, b.n, b.mrr, b.ndcg)?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "questions  {}", report.n_questions);
    let _ = writeln!(s, "MRR        {:.4}", report.mrr);
    let _ = writeln!(s, "NDCG       {:.4}", report.ndcg);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14} {:>6} {:>8} {:>8}", "answer length", "n", "MRR", "NDCG");
    for b in &report.buckets {
        let _ = writeln!(s, "{:<14} {:>6} {:>8.4} {:>8.4}", b.label(), b.n, b.mrr, b.ndcg);
    }
    s
}
