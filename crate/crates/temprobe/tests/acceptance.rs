//! End-to-end checks that gate a release. Each test prints one PASS line so
//! `cargo test --test acceptance -- --nocapture` reads as a checklist.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use temprobe::corpus::{self, LoadOptions, Manifest, Meta, QaItem, Source};
use temprobe::gateway::mock::{self, AnswerKey, MockOracle, MockPolicy};
use temprobe::gateway::{EndpointConfig, Gateway, SystemStyle};
use temprobe::metrics::dates::{parse_date, FormatHint, Granularity};
use temprobe::metrics::relative_diff;
use temprobe::reformulate::{average_stage_gains, gains_from_scores, run_pipeline, PipelineReport, StageScore};
use temprobe::report::write_report_json;
use temprobe::suite::{run_suite, SuiteOptions, TestReport};
use temprobe::transform::{self, RelationRegistry};
use temprobe::trust::{fit_trust_model, reversal_probe, ConsistencyVector, LabeledVector};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn item(question: &str) -> QaItem {
    QaItem {
        id: format!("q-{}", question.len()),
        question: question.to_owned(),
        gold_answers: vec!["unused".to_owned()],
        source: Source::Synthetic,
        meta: Meta::new(),
        year_ref: None,
    }
    .redetect()
}

#[test]
fn transformation_goldens() {
    let started = Instant::now();
    let base = item("Bernardo Corradi played for which team in 2006?");

    assert_eq!(
        transform::relativize(&base, 2023).unwrap().question,
        "Bernardo Corradi played for which team 17 years ago?"
    );
    assert_eq!(
        transform::remove_time(&base).unwrap().question,
        "Bernardo Corradi played for which team?"
    );
    assert_eq!(
        transform::move_time_to_front(&base).unwrap().question,
        "In 2006, Bernardo Corradi played for which team?"
    );
    assert_eq!(
        reversal_probe(&base.question, "Fiorentina").unwrap(),
        "When did Bernardo Corradi play for Fiorentina?"
    );

    assert!(started.elapsed().as_secs() < 1);
    println!("PASS: four transformation goldens reproduce byte-exactly");
}

// Every date answer shape the parser must handle, with the expected
// (year, month, day, day-completed) under a day-first hint at day granularity.
const DATE_SHAPES: &[(&str, (i32, Option<u32>, Option<u32>, bool))] = &[
    ("this is a full sentence July 18, 1956.", (1956, Some(7), Some(18), false)),
    ("October 19, 1763.", (1763, Some(10), Some(19), false)),
    ("March 24, 1935", (1935, Some(3), Some(24), false)),
    ("December 2019", (2019, Some(12), Some(1), true)),
    ("2019", (2019, None, None, false)),
    ("Dec, 2019", (2019, Some(12), Some(1), true)),
    ("September 27, 1941", (1941, Some(9), Some(27), false)),
    ("October 17, 1961 (10-10-1961)", (1961, Some(10), Some(17), false)),
    ("27 February 1977", (1977, Some(2), Some(27), false)),
    ("24 May 1899.", (1899, Some(5), Some(24), false)),
    ("2nd December 1959.", (1959, Some(12), Some(2), false)),
    ("10th of July, 1806.", (1806, Some(7), Some(10), false)),
    ("16th of October, 1756", (1756, Some(10), Some(16), false)),
    ("12-December-1957.", (1957, Some(12), Some(12), false)),
    ("01-01-1930.", (1930, Some(1), Some(1), false)),
    ("01-09-1950.", (1950, Some(9), Some(1), false)),
    ("14-11-1972.", (1972, Some(11), Some(14), false)),
    ("100712", (2012, Some(7), Some(10), false)),
    ("01012022", (2022, Some(1), Some(1), false)),
    ("28/3/1941", (1941, Some(3), Some(28), false)),
    ("04 03 1809", (1809, Some(3), Some(4), false)),
    ("20111104", (2011, Some(11), Some(4), false)),
    ("2011-11-04", (2011, Some(11), Some(4), false)),
    ("1502-02-11", (1502, Some(2), Some(11), false)),
    ("Jan 9, 2021", (2021, Some(1), Some(9), false)),
    ("Jun 11, 2023", (2023, Some(6), Some(11), false)),
    ("9 Jan 2021", (2021, Some(1), Some(9), false)),
    ("21 NOV 1859", (1859, Some(11), Some(21), false)),
    ("9-Jan-2021", (2021, Some(1), Some(9), false)),
    ("11-Jun-2023", (2023, Some(6), Some(11), false)),
    ("The event occurred on 23-25-2020 (DD-MM-YYYY).", (2020, None, None, false)),
    (
        "The Peking Opera was born on 1759-01-01, which is January 1, 1759",
        (1759, Some(1), Some(1), false),
    ),
    (
        "The Bhadla Solar Park was commissioned on March 25, 2012. Therefore, the event happened on 25",
        (2012, Some(3), Some(25), false),
    ),
];

#[test]
fn date_format_coverage() {
    let started = Instant::now();
    assert_eq!(DATE_SHAPES.len(), 33);
    for (text, (y, m, d, completed)) in DATE_SHAPES {
        let got = parse_date(text, FormatHint::DayFirst, Granularity::Day)
            .unwrap_or_else(|| panic!("no date found in {text:?}"));
        assert_eq!(
            (got.year, got.month, got.day, got.completion_applied),
            (*y, *m, *d, *completed),
            "wrong parse for {text:?}"
        );
    }

    // Month-only answers complete to the 1st when a day is required.
    let p = parse_date("April 2020", FormatHint::DayFirst, Granularity::Day).unwrap();
    assert_eq!((p.year, p.month, p.day), (2020, Some(4), Some(1)));
    assert!(p.completion_applied);

    // Ambiguous numeric dates follow the declared field order.
    let p = parse_date("11-10-2020", FormatHint::DayFirst, Granularity::Day).unwrap();
    assert_eq!((p.day, p.month), (Some(11), Some(10)));
    let p = parse_date("11-10-2020", FormatHint::MonthFirst, Granularity::Day).unwrap();
    assert_eq!((p.day, p.month), (Some(10), Some(11)));

    assert!(started.elapsed().as_secs() < 1);
    println!("PASS: all 33 date answer shapes parse to their intended dates");
}

#[test]
fn relative_diff_examples() {
    let drop = relative_diff(35.2, 25.4).unwrap();
    assert!((drop - -27.9).abs() <= 0.1, "got {drop}");

    let drop = relative_diff(52.8, 13.0).unwrap();
    assert!((drop - -75.4).abs() <= 0.1, "got {drop}");

    println!("PASS: relative drop arithmetic matches the reference examples");
}

async fn live_mock_gateway(policy: &str, cache_dir: Option<PathBuf>) -> Gateway {
    let key = AnswerKey::from_path(&fixture("answer_key.jsonl")).unwrap();
    let oracle = MockOracle::new(policy.parse::<MockPolicy>().unwrap(), key);
    let (addr, _handle) = mock::spawn(oracle).await.unwrap();
    let mut config = EndpointConfig::new(format!("http://{addr}/v1"), "fixture-model");
    config.cache_dir = cache_dir;
    Gateway::new(config).unwrap()
}

fn fixture_corpora() -> (corpus::Corpora, RelationRegistry) {
    let path = fixture("manifest.toml");
    let manifest = Manifest::load(&path).unwrap();
    let registry = RelationRegistry::builtin();
    let (corpora, _stats) =
        corpus::ingest(&path, &manifest, &registry, &LoadOptions::default(), 7).unwrap();
    (corpora, registry)
}

#[tokio::test]
async fn mock_suite_end_to_end() {
    let started = Instant::now();
    let gateway = live_mock_gateway("year-sensitive", None).await;
    let (corpora, registry) = fixture_corpora();
    let opts = SuiteOptions::new(2023, 7);
    let outcome = run_suite(&gateway, &corpora, &registry, &opts).await.unwrap();
    let tests = &outcome.report.tests;

    // A year-gated model loses everything once the year leaves the question.
    match &tests["removal"] {
        TestReport::Paraphrase(s) => assert_eq!(s.diff_pct, Some(-100.0)),
        other => panic!("unexpected removal report {other:?}"),
    }
    match &tests["year_shift"] {
        TestReport::Shift(s) => {
            for point in &s.scores {
                let expected = if point.k == 0 { 100.0 } else { 0.0 };
                assert_eq!(point.score_pct, expected, "k={}", point.k);
            }
            assert_eq!(s.diff_pct, Some(-100.0));
        }
        other => panic!("unexpected year_shift report {other:?}"),
    }
    // Moving the year to the front keeps it visible, so nothing is lost.
    match &tests["positioning"] {
        TestReport::Positioning(s) => assert_eq!(s.diff_pct, Some(0.0)),
        other => panic!("unexpected positioning report {other:?}"),
    }

    assert!(started.elapsed().as_secs() < 60);
    println!("PASS: year-sensitive mock suite reproduces the expected drops");
}

fn generated_question(rng: &mut ChaCha8Rng) -> QaItem {
    const OPENERS: &[&str] = &[
        "Who was the mayor of Arlenbrook",
        "Which club did Dario Fennick play for",
        "What award did Lena Ostrow receive",
        "Who chaired the harbor commission",
        "Which studio employed Sana Idris",
        "Who won the regional chess open",
        "What company ran the night ferry",
        "Who was the governor of Caldera Province",
    ];
    const TAILS: &[&str] = &["?", " ?"];
    let opener = OPENERS[rng.gen_range(0..OPENERS.len())];
    let year = rng.gen_range(1000..=2020);
    let tail = TAILS[rng.gen_range(0..TAILS.len())];
    item(&format!("{opener} in {year}{tail}"))
}

#[test]
fn transformation_properties_hold_in_bulk() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let now_year = 2023;
    for n in 0..1000 {
        let q = generated_question(&mut rng);

        let same = transform::shift_year(&q, 0, n).unwrap();
        assert_eq!(same.question, q.question, "shift k=0 must be an identity");

        let removed = transform::remove_time(&q).unwrap();
        assert!(
            transform::year_tokens(&removed.question).is_empty(),
            "removal left a year in {:?}",
            removed.question
        );

        let relative = transform::relativize(&q, now_year).unwrap();
        let back = transform::absolutize(&relative, now_year).unwrap();
        assert_eq!(back.question, q.question, "relativize then absolutize must restore");

        let fronted = transform::move_time_to_front(&q).unwrap();
        let mut before: Vec<String> = q
            .question
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        let mut after: Vec<String> = fronted
            .question
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        before.sort();
        after.sort();
        assert_eq!(before, after, "fronting changed the token multiset");
    }
    println!("PASS: transformation invariants hold on 1000 generated questions");
}

fn binary_vector(rng: &mut ChaCha8Rng) -> ([f64; 4], f64) {
    let c: [f64; 4] = std::array::from_fn(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    let mean = c.iter().sum::<f64>() / 4.0;
    (c, mean)
}

fn labeled(c: [f64; 4], correct: bool) -> LabeledVector {
    LabeledVector {
        vector: ConsistencyVector {
            relativized: Some(c[0]),
            removed: Some(c[1]),
            fronted: Some(c[2]),
            reversal: Some(c[3]),
        },
        correct,
    }
}

#[test]
fn trust_model_recovers_separable_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let examples: Vec<LabeledVector> = (0..1200)
        .map(|_| {
            let (c, mean) = binary_vector(&mut rng);
            labeled(c, mean >= 0.75)
        })
        .collect();

    let model = fit_trust_model(&examples, 17).unwrap();
    assert!(
        model.training.holdout_balanced_accuracy >= 0.95,
        "holdout balanced accuracy {}",
        model.training.holdout_balanced_accuracy
    );

    // Destroying the signal must send accuracy back to chance.
    let mut labels: Vec<bool> = examples.iter().map(|e| e.correct).collect();
    labels.shuffle(&mut rng);
    let permuted: Vec<LabeledVector> = examples
        .iter()
        .zip(labels)
        .map(|(e, correct)| LabeledVector { vector: e.vector, correct })
        .collect();
    let chance = fit_trust_model(&permuted, 17).unwrap();
    let ba = chance.training.holdout_balanced_accuracy;
    assert!((ba - 0.5).abs() <= 0.05, "permuted-label holdout accuracy {ba}");

    println!("PASS: trust model separates the labeled set and collapses on noise");
}

fn pipeline_fixture() -> (AnswerKey, Vec<QaItem>) {
    let questions: &[(&str, &str, i32)] = &[
        ("Who was the mayor of Arlenbrook in 1994?", "Tomas Keel", 1994),
        ("Which club did Dario Fennick play for in 1998?", "Calder United", 1998),
        ("What award did Lena Ostrow receive in 2011?", "the Silver Quill Award", 2011),
        ("Who was the governor of Caldera Province in 2002?", "Mira Voss", 2002),
        ("Which studio employed Sana Idris in 2014?", "Foxglove Studios", 2014),
    ];
    let mut key = AnswerKey::empty();
    let mut items = Vec::new();
    for (i, (q, a, y)) in questions.iter().enumerate() {
        key.add_qa(q, a, Some(*y));
        items.push(QaItem {
            id: format!("pipe-{i}"),
            question: (*q).to_owned(),
            gold_answers: vec![(*a).to_owned()],
            source: Source::Synthetic,
            meta: Meta::new(),
            year_ref: None,
        }.redetect());
    }
    (key, items)
}

fn stage_report(model: &str, scores: [f64; 4]) -> PipelineReport {
    let names = ["no_time", "plus_relative", "plus_absolute", "time_front"];
    let stages: Vec<StageScore> = names
        .iter()
        .zip(scores)
        .map(|(stage, score_pct)| StageScore { stage: (*stage).to_owned(), score_pct })
        .collect();
    let (gains, cumulative_gain_pct) = gains_from_scores(&stages);
    PipelineReport {
        model_name: model.to_owned(),
        now_year: 2023,
        items: 100,
        skipped: 0,
        stages,
        gains,
        cumulative_gain_pct,
    }
}

#[tokio::test]
async fn reformulation_gains() {
    // A phrasing-blind oracle gains nothing from any reformulation.
    let (key, items) = pipeline_fixture();
    let oracle = MockOracle::new(MockPolicy::AnswerKey, key.clone());
    let gateway = Gateway::with_oracle(EndpointConfig::new("mock://local", "mock"), oracle);
    let outcome = run_pipeline(&gateway, &items, 2023, SystemStyle::Default).await.unwrap();
    for gain in &outcome.report.gains {
        assert_eq!(gain.gain_pct, Some(0.0), "{} to {}", gain.from, gain.to);
    }

    // A year-gated oracle only answers once the year is spelled out, and the
    // gain over a zero base stays undefined rather than exploding.
    let oracle = MockOracle::new(MockPolicy::YearSensitive, key);
    let gateway = Gateway::with_oracle(EndpointConfig::new("mock://local", "mock"), oracle);
    let outcome = run_pipeline(&gateway, &items, 2023, SystemStyle::Default).await.unwrap();
    let stages = &outcome.report.stages;
    assert_eq!(stages[0].stage, "no_time");
    assert_eq!(stages[2].stage, "plus_absolute");
    assert!(stages[2].score_pct > stages[0].score_pct);
    for gain in &outcome.report.gains {
        match gain.gain_pct {
            None => {}
            Some(g) => assert!(g.is_finite(), "{} to {} gained {g}", gain.from, gain.to),
        }
    }
    assert_eq!(outcome.report.gains[0].gain_pct, None, "gain over a zero base");

    // The reference three-model staircase, averaged transition by transition.
    let reports = [
        stage_report("m1", [30.0, 31.9, 39.2, 40.9]),
        stage_report("m2", [20.6, 27.4, 35.7, 35.5]),
        stage_report("m3", [27.8, 32.3, 42.2, 43.5]),
    ];
    let averaged = average_stage_gains(&reports).unwrap();
    let expected = [18.5, 28.0, 2.3];
    for (gain, want) in averaged.per_transition.iter().zip(expected) {
        let got = gain.gain_pct.unwrap();
        assert!((got - want).abs() <= 0.5, "{} to {}: {got} vs {want}", gain.from, gain.to);
    }
    let cumulative = averaged.cumulative_gain_pct.unwrap();
    assert!((cumulative - 55.0).abs() <= 0.5, "cumulative {cumulative}");

    println!("PASS: reformulation gains behave and the reference staircase reproduces");
}

#[tokio::test]
async fn runs_are_deterministic() {
    let cache = tempdir().unwrap();
    let out = tempdir().unwrap();
    let (corpora, registry) = fixture_corpora();
    let opts = SuiteOptions::new(2023, 7);

    let mut reports = Vec::new();
    for run in 0..2 {
        let gateway =
            live_mock_gateway("year-sensitive", Some(cache.path().to_path_buf())).await;
        let outcome = run_suite(&gateway, &corpora, &registry, &opts).await.unwrap();
        let path = out.path().join(format!("report-{run}.json"));
        write_report_json(&path, &outcome.report).unwrap();
        reports.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(reports[0], reports[1], "reports differ between identical runs");

    println!("PASS: identical seed and warm cache give byte-identical reports");
}
