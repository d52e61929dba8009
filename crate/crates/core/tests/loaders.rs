use std::path::PathBuf;

use attnrank::data_io::{load_dataset, load_dataset_report, read_trec_qa, token_corpus, DatasetFormat};
use attnrank::evaluation::{mrr, overlap_baseline_run, relevance_cutoff, EvalOptions};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn trec_qa_fixture_loads_five_questions() {
    let groups = load_dataset(&fixture("trecqa_sample.tsv"), DatasetFormat::TrecQa).unwrap();
    assert_eq!(groups.len(), 5);
    let counts: Vec<usize> = groups.iter().map(|g| g.candidates.len()).collect();
    assert_eq!(counts, [3, 4, 2, 4, 2]);
    assert_eq!(groups[0].question_id, "q1");
    assert_eq!(groups[1].candidates[3].answer_id, "q2-a3");
    assert!(groups.iter().flat_map(|g| &g.candidates).all(|c| c.grade <= 1));
    assert_eq!(groups.iter().flat_map(|g| &g.candidates).filter(|c| c.grade == 1).count(), 6);
}

#[test]
fn records_fixture_keeps_graded_labels() {
    let groups = load_dataset(&fixture("records_sample.tsv"), DatasetFormat::Records).unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0].candidates.len(), 3);
    assert_eq!(groups[1].candidates.len(), 2);
    let grades: Vec<u32> = groups[0].candidates.iter().map(|c| c.grade).collect();
    assert_eq!(grades, [4, 2, 3]);
    assert_eq!(relevance_cutoff(4, 3), 3);
}

#[test]
fn fixtures_run_through_the_baseline_evaluation() {
    for (name, format) in [("trecqa_sample.tsv", DatasetFormat::TrecQa), ("records_sample.tsv", DatasetFormat::Records)] {
        let groups = load_dataset(&fixture(name), format).unwrap();
        assert!(!token_corpus(&groups).is_empty());
        let run = overlap_baseline_run(&groups);
        let m = mrr(&run, &EvalOptions::default()).unwrap();
        assert!((0.0..=1.0).contains(&m), "{name}: {m}");
    }
}

#[test]
fn malformed_trec_lines_are_reported_by_number() {
    let text = "who?\tsomeone\t1\nwho?\tmissing label\nwho?\tnobody\t2\n";
    let report = read_trec_qa(text.as_bytes()).unwrap();
    assert_eq!(report.accepted, 1);
    let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
    assert_eq!(lines, [2, 3]);
    assert!(report.into_strict().is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_dataset_report(&fixture("absent.tsv"), DatasetFormat::Records).unwrap_err();
    assert!(matches!(err, attnrank::Error::Io(_)), "{err:?}");
}
