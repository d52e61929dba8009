//! Attention heatmaps: a standalone HTML page and 24-bit ANSI terminal output.
//!
//! Token intensity is the token's weight divided by the largest weight in the
//! same answer, so the most attended token is always drawn at full strength.

use std::fmt::Write as _;

use crate::evaluation::RankedAnswer;
use crate::model::AttentionTrace;

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// `(token, weight, intensity in [0,1])` for the real tokens of a trace.
pub fn intensities(trace: &AttentionTrace) -> Vec<(&str, f64, f64)> {
    let max = trace.weights.iter().copied().fold(0.0, f64::max);
    trace
        .tokens
        .iter()
        .zip(&trace.weights)
        .filter(|(t, _)| t.as_str() != crate::text::PAD_TOKEN)
        .map(|(t, &w)| (t.as_str(), w, if max > 0.0 { w / max } else { 0.0 }))
        .collect()
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.9}\
.answer{border-top:1px solid #ccc;padding:.6em 0}\
.tok{padding:.1em .2em;margin:0 .05em;border-radius:.2em}\
.meta{color:#555;font-size:.9em}";

/// A self-contained page: inline styles only, no scripts, no external references.
pub fn render_html(question: &str, answers: &[RankedAnswer]) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Attention weights</title>\n<style>{STYLE}</style>\n</head>\n<body>\n"
    );
    let _ = writeln!(s, "<h1>Attention weights</h1>");
    let _ = writeln!(s, "<p class=\"question\"><strong>Question:</strong> {}</p>", escape_html(question));
    for (rank, a) in answers.iter().enumerate() {
        let trace = &a.prediction.answer_trace;
        let _ = writeln!(
            s,
            "<div class=\"answer\" data-answer-id=\"{}\">\n<p class=\"meta\">rank {} &middot; {} &middot; score {:.6}</p>\n<p>",
            escape_html(&a.entry.answer_id),
            rank + 1,
            escape_html(&a.entry.answer_id),
            a.entry.score
        );
        for (tok, w, alpha) in intensities(trace) {
            let _ = writeln!(
                s,
                "<span class=\"tok\" data-weight=\"{w}\" title=\"{w:.6}\" style=\"background-color:rgba(0,160,0,{alpha:.4})\">{}</span>",
                escape_html(tok)
            );
        }
        let _ = writeln!(s, "</p>\n<p class=\"meta\">sum of weights {:.6}</p>\n</div>", trace.total());
    }
    s.push_str("</body>\n</html>\n");
    s
}

/// Each answer on one line with green background intensity, then a weight-sum footer.
pub fn render_ansi(question: &str, answers: &[RankedAnswer]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "question: {question}");
    for (rank, a) in answers.iter().enumerate() {
        let trace = &a.prediction.answer_trace;
        let _ = writeln!(s, "\n#{} {} score {:.6}", rank + 1, a.entry.answer_id, a.entry.score);
        for (tok, _, alpha) in intensities(trace) {
            let g = (255.0 - alpha * 95.0).round() as u8;
            let rb = (255.0 * (1.0 - alpha)).round() as u8;
            let _ = write!(s, "\x1b[48;2;{rb};{g};{rb}m\x1b[38;2;0;0;0m{tok}\x1b[0m ");
        }
        let _ = writeln!(s, "\n   sum of weights {:.6}", trace.total());
    }
    s
}
