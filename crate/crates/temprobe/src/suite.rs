//! The robustness test suite.
//!
//! Eight tests probe how a model's temporal knowledge degrades when the same
//! facts are asked differently. Four rephrase year-ending questions
//! (relativization, removal, positioning, year shift), one inverts fact
//! direction (reversal), and three exercise adjacent skills on claims and
//! events (fact checking, event dating, event ordering).
//!
//! Scoring convention: the headline figure of a rephrasing test is the
//! relative change, in percent, from the score on original questions to the
//! score on questions both phrasings got right (the intersection). A model
//! that merely knows each fact under one exact wording scores high on
//! originals and near zero on intersections, which is exactly the fragility
//! the suite exists to expose. Per-item results are kept as rows so every
//! summary number can be recomputed offline.
//!
//! Determinism: for a fixed corpus, seed and endpoint behavior, the runner
//! issues the same requests in the same order and produces identical
//! summaries and rows. Batches preserve request order regardless of how
//! responses interleave on the wire.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRecord, Corpora, EventRecord, QaItem, TemporalQuadruple};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, Message, SystemStyle, TaskPrompt};
use crate::metrics::{contains, date_match, interval_match, relative_diff, Granularity, LabelSet};
use crate::mix_seed;
use crate::transform::{self, RelationRegistry};

// ---------------------------------------------------------------------------
// Test selection
// ---------------------------------------------------------------------------

/// The eight tests, in canonical reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Relativization,
    Removal,
    Positioning,
    YearShift,
    Reversal,
    FactChecking,
    EventDating,
    EventOrdering,
}

impl TestKind {
    pub const ALL: [TestKind; 8] = [
        TestKind::Relativization,
        TestKind::Removal,
        TestKind::Positioning,
        TestKind::YearShift,
        TestKind::Reversal,
        TestKind::FactChecking,
        TestKind::EventDating,
        TestKind::EventOrdering,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Relativization => "relativization",
            TestKind::Removal => "removal",
            TestKind::Positioning => "positioning",
            TestKind::YearShift => "year_shift",
            TestKind::Reversal => "reversal",
            TestKind::FactChecking => "fact_checking",
            TestKind::EventDating => "event_dating",
            TestKind::EventOrdering => "event_ordering",
        }
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown test {s:?}; expected one of: {}",
                    TestKind::ALL.map(|k| k.as_str()).join(", ")
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// Options and outputs
// ---------------------------------------------------------------------------

/// Runner knobs. Defaults match the headline experiment setup.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub tests: Vec<TestKind>,
    /// The year "now" means, for relative phrasings.
    pub now_year: i32,
    pub seed: u64,
    pub system_style: SystemStyle,
    /// Year offsets for the shift test; scores are reported per offset.
    pub shift_ks: Vec<u32>,
    /// Year gaps for the ordering test.
    pub ordering_distances: Vec<u32>,
    /// Pair budget per ordering distance.
    pub pairs_per_distance: usize,
}

impl SuiteOptions {
    pub fn new(now_year: i32, seed: u64) -> Self {
        SuiteOptions {
            tests: TestKind::ALL.to_vec(),
            now_year,
            seed,
            system_style: SystemStyle::Default,
            shift_ks: vec![0, 1, 5, 10],
            ordering_distances: vec![0, 1, 5, 10, 30, 100],
            pairs_per_distance: 50,
        }
    }
}

/// One scored request, the atom every summary is computed from.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub item_id: String,
    pub condition: String,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    pub score: f64,
    pub year_delta: Option<i64>,
}

/// (gold year, predicted minus gold) for one parsed dating answer.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct YearDelta {
    pub granularity: &'static str,
    pub gold_year: i32,
    pub year_delta: i64,
}

/// Summary of a rephrase-and-intersect test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParaphraseSummary {
    pub items: usize,
    /// Items the transformation did not apply to.
    pub skipped: usize,
    pub base_pct: f64,
    pub transformed_pct: f64,
    /// Score counting only items correct under both phrasings.
    pub intersection_pct: f64,
    /// Relative change from base to intersection; None when base is zero.
    pub diff_pct: Option<f64>,
}

/// Summary of the time-to-front test, which compares scores directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositioningSummary {
    pub items: usize,
    pub skipped: usize,
    pub base_pct: f64,
    pub fronted_pct: f64,
    /// Relative change from base to fronted score.
    pub diff_pct: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub k: u32,
    pub score_pct: f64,
}

/// Summary of the year shift test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub items: usize,
    pub skipped: usize,
    pub scores: Vec<ShiftPoint>,
    /// Relative change from the smallest to the largest requested offset.
    pub diff_pct: Option<f64>,
}

/// Summary of the fact reversal test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReversalSummary {
    pub items: usize,
    pub skipped: usize,
    pub forward_pct: f64,
    pub inverse_pct: f64,
    /// Facts answered correctly in both directions.
    pub both_pct: f64,
    /// Relative change from forward to both.
    pub diff_pct: Option<f64>,
}

/// Summary of claim verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactSummary {
    pub items: usize,
    pub accuracy_pct: f64,
    pub abstain_pct: f64,
    /// confusion[gold][predicted or "abstain"] = count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Summary of event dating across granularities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatingSummary {
    /// Eligible items per granularity (gold must carry the needed parts).
    pub items: BTreeMap<String, usize>,
    pub scores_pct: BTreeMap<String, f64>,
    /// Relative change from year-level to day-level score.
    pub diff_pct_year_to_day: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistancePoint {
    pub distance: u32,
    /// Pairs actually built; the corpus may not support the full budget.
    pub pairs: usize,
    pub score_pct: Option<f64>,
}

/// Summary of event ordering by year gap.
///
/// The headline diff is reported under both directions because either
/// convention appears in the wild: `near_to_far` treats the smallest gap as
/// the base, `far_to_near` the largest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub per_distance: Vec<DistancePoint>,
    pub diff_pct_near_to_far: Option<f64>,
    pub diff_pct_far_to_near: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestReport {
    Paraphrase(ParaphraseSummary),
    Positioning(PositioningSummary),
    Shift(ShiftSummary),
    Reversal(ReversalSummary),
    Fact(FactSummary),
    Dating(DatingSummary),
    Ordering(OrderingSummary),
}

/// Corpus sizes, echoed so a report is interpretable on its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub qa: usize,
    pub quads: usize,
    pub events: usize,
    pub claims: usize,
}

/// Everything that goes into report.json. Contains no wall-clock data, so
/// reruns from a warm cache serialize byte-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub model_name: String,
    pub now_year: i32,
    pub seed: u64,
    pub corpus: CorpusCounts,
    pub tests: BTreeMap<String, TestReport>,
}

/// A full run: the report plus per-item rows and dating deltas for export.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub report: SuiteReport,
    /// Rows per test, in issue order.
    pub rows: BTreeMap<String, Vec<Row>>,
    pub year_deltas: Vec<YearDelta>,
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn pct(xs: &[f64]) -> f64 {
    mean(xs) * 100.0
}

/// Fails the run on the first endpoint error; the gateway has already
/// retried whatever was transient.
fn collect_ok(results: Vec<Result<crate::gateway::Prediction>>) -> Result<Vec<String>> {
    results.into_iter().map(|r| r.map(|p| p.raw_text)).collect()
}

fn qa_messages(item: &QaItem, style: SystemStyle) -> Vec<Message> {
    TaskPrompt::Qa { question: &item.question }.messages(style)
}

fn no_data(kind: TestKind, what: &str) -> Error {
    Error::Config(format!("test {kind} has no eligible {what}"))
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Runs the requested tests and assembles the report.
///
/// Tests always execute in canonical order, whatever order they were
/// requested in, so request logs and caches line up between runs.
pub async fn run_suite(
    gateway: &Gateway,
    corpora: &Corpora,
    registry: &RelationRegistry,
    opts: &SuiteOptions,
) -> Result<SuiteOutcome> {
    if opts.tests.is_empty() {
        return Err(Error::EmptySuite);
    }
    let mut tests = BTreeMap::new();
    let mut rows = BTreeMap::new();
    let mut year_deltas = Vec::new();
    for kind in TestKind::ALL {
        if !opts.tests.contains(&kind) {
            continue;
        }
        let mut test_rows = Vec::new();
        let report = match kind {
            TestKind::Relativization => {
                let now = opts.now_year;
                paraphrase_test(gateway, corpora, opts, kind, "relativized", &mut test_rows, |i| {
                    transform::relativize(i, now)
                })
                .await?
            }
            TestKind::Removal => {
                paraphrase_test(gateway, corpora, opts, kind, "removed", &mut test_rows, |i| {
                    transform::remove_time(i)
                })
                .await?
            }
            TestKind::Positioning => positioning_test(gateway, corpora, opts, &mut test_rows).await?,
            TestKind::YearShift => shift_test(gateway, corpora, opts, &mut test_rows).await?,
            TestKind::Reversal => reversal_test(gateway, corpora, registry, opts, &mut test_rows).await?,
            TestKind::FactChecking => fact_test(gateway, &corpora.claims, opts, &mut test_rows).await?,
            TestKind::EventDating => {
                dating_test(gateway, &corpora.events, opts, &mut test_rows, &mut year_deltas).await?
            }
            TestKind::EventOrdering => ordering_test(gateway, &corpora.events, opts, &mut test_rows).await?,
        };
        tests.insert(kind.as_str().to_owned(), report);
        rows.insert(kind.as_str().to_owned(), test_rows);
    }
    Ok(SuiteOutcome {
        report: SuiteReport {
            model_name: gateway.model_name().to_owned(),
            now_year: opts.now_year,
            seed: opts.seed,
            corpus: CorpusCounts {
                qa: corpora.qa.len(),
                quads: corpora.quads.len(),
                events: corpora.events.len(),
                claims: corpora.claims.len(),
            },
            tests,
        },
        rows,
        year_deltas,
    })
}

/// Scores original items and one transformed phrasing, pairwise.
async fn score_pairs(
    gateway: &Gateway,
    kind: TestKind,
    condition: &str,
    pairs: &[(QaItem, QaItem)],
    style: SystemStyle,
    rows: &mut Vec<Row>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut requests = Vec::with_capacity(pairs.len() * 2);
    for (orig, _) in pairs {
        requests.push((format!("{kind}/original/{}", orig.id), qa_messages(orig, style)));
    }
    for (_, trans) in pairs {
        requests.push((format!("{kind}/{condition}/{}", trans.id), qa_messages(trans, style)));
    }
    let answers = collect_ok(gateway.batch_complete(&requests).await)?;
    let (orig_answers, trans_answers) = answers.split_at(pairs.len());
    let mut base = Vec::with_capacity(pairs.len());
    let mut transformed = Vec::with_capacity(pairs.len());
    for ((orig, trans), (oa, ta)) in pairs.iter().zip(orig_answers.iter().zip(trans_answers)) {
        let o = contains(oa, &orig.gold_answers).value;
        let t = contains(ta, &trans.gold_answers).value;
        base.push(o);
        transformed.push(t);
        rows.push(Row {
            item_id: orig.id.clone(),
            condition: "original".to_owned(),
            question: orig.question.clone(),
            gold: orig.gold_answers.join("; "),
            prediction: oa.clone(),
            score: o,
            year_delta: None,
        });
        rows.push(Row {
            item_id: trans.id.clone(),
            condition: condition.to_owned(),
            question: trans.question.clone(),
            gold: trans.gold_answers.join("; "),
            prediction: ta.clone(),
            score: t,
            year_delta: None,
        });
    }
    Ok((base, transformed))
}

async fn paraphrase_test(
    gateway: &Gateway,
    corpora: &Corpora,
    opts: &SuiteOptions,
    kind: TestKind,
    condition: &str,
    rows: &mut Vec<Row>,
    op: impl Fn(&QaItem) -> Result<QaItem>,
) -> Result<TestReport> {
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for item in &corpora.qa {
        match op(item) {
            Ok(t) => pairs.push((item.clone(), t)),
            Err(_) => skipped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(no_data(kind, "questions"));
    }
    let (base, transformed) =
        score_pairs(gateway, kind, condition, &pairs, opts.system_style, rows).await?;
    let both: Vec<f64> = base.iter().zip(&transformed).map(|(a, b)| a.min(*b)).collect();
    let base_pct = pct(&base);
    Ok(TestReport::Paraphrase(ParaphraseSummary {
        items: pairs.len(),
        skipped,
        base_pct,
        transformed_pct: pct(&transformed),
        intersection_pct: pct(&both),
        diff_pct: relative_diff(base_pct, pct(&both)),
    }))
}

async fn positioning_test(
    gateway: &Gateway,
    corpora: &Corpora,
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
) -> Result<TestReport> {
    let kind = TestKind::Positioning;
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for item in &corpora.qa {
        match transform::move_time_to_front(item) {
            Ok(t) => pairs.push((item.clone(), t)),
            Err(_) => skipped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(no_data(kind, "questions"));
    }
    let (base, fronted) =
        score_pairs(gateway, kind, "fronted", &pairs, opts.system_style, rows).await?;
    let base_pct = pct(&base);
    let fronted_pct = pct(&fronted);
    Ok(TestReport::Positioning(PositioningSummary {
        items: pairs.len(),
        skipped,
        base_pct,
        fronted_pct,
        diff_pct: relative_diff(base_pct, fronted_pct),
    }))
}

async fn shift_test(
    gateway: &Gateway,
    corpora: &Corpora,
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
) -> Result<TestReport> {
    let kind = TestKind::YearShift;
    let mut ks = opts.shift_ks.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Config("year_shift requested with no offsets".to_owned()));
    }
    // An item participates only if every offset applies, so scores at
    // different offsets describe the same population.
    let mut eligible: Vec<(QaItem, Vec<QaItem>)> = Vec::new();
    let mut skipped = 0usize;
    'outer: for item in &corpora.qa {
        let mut shifted = Vec::with_capacity(ks.len());
        for &k in &ks {
            match transform::shift_year(item, k, opts.seed) {
                Ok(t) => shifted.push(t),
                Err(_) => {
                    skipped += 1;
                    continue 'outer;
                }
            }
        }
        eligible.push((item.clone(), shifted));
    }
    if eligible.is_empty() {
        return Err(no_data(kind, "questions"));
    }
    let mut requests = Vec::with_capacity(eligible.len() * ks.len());
    for (pos, &k) in ks.iter().enumerate() {
        for (orig, shifted) in &eligible {
            let item = &shifted[pos];
            requests.push((format!("{kind}/shift_{k}/{}", orig.id), qa_messages(item, opts.system_style)));
        }
    }
    let answers = collect_ok(gateway.batch_complete(&requests).await)?;
    let mut scores = Vec::with_capacity(ks.len());
    for (pos, &k) in ks.iter().enumerate() {
        let block = &answers[pos * eligible.len()..(pos + 1) * eligible.len()];
        let mut vals = Vec::with_capacity(eligible.len());
        for ((orig, shifted), ans) in eligible.iter().zip(block) {
            let item = &shifted[pos];
            let s = contains(ans, &orig.gold_answers).value;
            vals.push(s);
            rows.push(Row {
                item_id: orig.id.clone(),
                condition: format!("shift_{k}"),
                question: item.question.clone(),
                gold: orig.gold_answers.join("; "),
                prediction: ans.clone(),
                score: s,
                year_delta: None,
            });
        }
        scores.push(ShiftPoint { k, score_pct: pct(&vals) });
    }
    let diff_pct = relative_diff(scores[0].score_pct, scores[scores.len() - 1].score_pct);
    Ok(TestReport::Shift(ShiftSummary { items: eligible.len(), skipped, scores, diff_pct }))
}

async fn reversal_test(
    gateway: &Gateway,
    corpora: &Corpora,
    registry: &RelationRegistry,
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
) -> Result<TestReport> {
    let kind = TestKind::Reversal;
    let mut built: Vec<(TemporalQuadruple, QaItem, QaItem)> = Vec::new();
    let mut skipped = 0usize;
    for quad in &corpora.quads {
        let year = pick_year(quad, opts.seed);
        match (registry.make_forward_question(quad, year), registry.make_inverse_question(quad)) {
            (Ok(f), Ok(i)) => built.push((quad.clone(), f, i)),
            _ => skipped += 1,
        }
    }
    if built.is_empty() {
        return Err(no_data(kind, "facts"));
    }
    let mut requests = Vec::with_capacity(built.len() * 2);
    for (_, fwd, _) in &built {
        requests.push((format!("{kind}/forward/{}", fwd.id), qa_messages(fwd, opts.system_style)));
    }
    for (_, _, inv) in &built {
        requests.push((format!("{kind}/inverse/{}", inv.id), qa_messages(inv, opts.system_style)));
    }
    let answers = collect_ok(gateway.batch_complete(&requests).await)?;
    let (fwd_answers, inv_answers) = answers.split_at(built.len());
    let mut forward = Vec::with_capacity(built.len());
    let mut inverse = Vec::with_capacity(built.len());
    for ((quad, fwd, inv), (fa, ia)) in built.iter().zip(fwd_answers.iter().zip(inv_answers)) {
        let f = contains(fa, &fwd.gold_answers).value;
        let i = interval_match(ia, &quad.span).value;
        forward.push(f);
        inverse.push(i);
        rows.push(Row {
            item_id: fwd.id.clone(),
            condition: "forward".to_owned(),
            question: fwd.question.clone(),
            gold: fwd.gold_answers.join("; "),
            prediction: fa.clone(),
            score: f,
            year_delta: None,
        });
        rows.push(Row {
            item_id: inv.id.clone(),
            condition: "inverse".to_owned(),
            question: inv.question.clone(),
            gold: inv.gold_answers.join("; "),
            prediction: ia.clone(),
            score: i,
            year_delta: None,
        });
    }
    let both: Vec<f64> = forward.iter().zip(&inverse).map(|(a, b)| a.min(*b)).collect();
    let forward_pct = pct(&forward);
    let both_pct = pct(&both);
    Ok(TestReport::Reversal(ReversalSummary {
        items: built.len(),
        skipped,
        forward_pct,
        inverse_pct: pct(&inverse),
        both_pct,
        diff_pct: relative_diff(forward_pct, both_pct),
    }))
}

/// Year asked about in the forward direction: the span start for point
/// facts, otherwise a seeded draw inside the span.
fn pick_year(quad: &TemporalQuadruple, seed: u64) -> i32 {
    if quad.span.start_year == quad.span.end_year {
        quad.span.start_year
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &format!("reversal:{}", quad.id)));
        rng.gen_range(quad.span.start_year..=quad.span.end_year)
    }
}

async fn fact_test(
    gateway: &Gateway,
    claims: &[ClaimRecord],
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
) -> Result<TestReport> {
    let kind = TestKind::FactChecking;
    if claims.is_empty() {
        return Err(no_data(kind, "claims"));
    }
    let labels = LabelSet::new(&["True", "False", "Conflicting"])?;
    let requests: Vec<(String, Vec<Message>)> = claims
        .iter()
        .map(|c| {
            let msgs = TaskPrompt::FactChecking { claim: &c.claim }.messages(opts.system_style);
            (format!("{kind}/claim/{}", c.id), msgs)
        })
        .collect();
    let answers = collect_ok(gateway.batch_complete(&requests).await)?;
    let mut correct = Vec::with_capacity(claims.len());
    let mut abstained = 0usize;
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (claim, ans) in claims.iter().zip(&answers) {
        let parsed = labels.parse(ans);
        let s = labels.score(ans, claim.gold_label.as_str()).value;
        if parsed.is_none() {
            abstained += 1;
        }
        *confusion
            .entry(claim.gold_label.as_str().to_owned())
            .or_default()
            .entry(parsed.unwrap_or("abstain").to_owned())
            .or_default() += 1;
        correct.push(s);
        rows.push(Row {
            item_id: claim.id.clone(),
            condition: "claim".to_owned(),
            question: claim.claim.clone(),
            gold: claim.gold_label.as_str().to_owned(),
            prediction: ans.clone(),
            score: s,
            year_delta: None,
        });
    }
    Ok(TestReport::Fact(FactSummary {
        items: claims.len(),
        accuracy_pct: pct(&correct),
        abstain_pct: abstained as f64 / claims.len() as f64 * 100.0,
        confusion,
    }))
}

async fn dating_test(
    gateway: &Gateway,
    events: &[EventRecord],
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
    year_deltas: &mut Vec<YearDelta>,
) -> Result<TestReport> {
    let kind = TestKind::EventDating;
    if events.is_empty() {
        return Err(no_data(kind, "events"));
    }
    let mut items = BTreeMap::new();
    let mut scores_pct = BTreeMap::new();
    for granularity in [Granularity::Year, Granularity::Month, Granularity::Day] {
        let eligible: Vec<&EventRecord> = events
            .iter()
            .filter(|e| match granularity {
                Granularity::Year => true,
                Granularity::Month => e.date.month.is_some(),
                Granularity::Day => e.date.month.is_some() && e.date.day.is_some(),
            })
            .collect();
        items.insert(granularity.as_str().to_owned(), eligible.len());
        if eligible.is_empty() {
            continue;
        }
        let requests: Vec<(String, Vec<Message>)> = eligible
            .iter()
            .map(|e| {
                let msgs = TaskPrompt::EventDating { event: &e.description, granularity }
                    .messages(opts.system_style);
                (format!("{kind}/{granularity}/{}", e.id), msgs)
            })
            .collect();
        let answers = collect_ok(gateway.batch_complete(&requests).await)?;
        let mut vals = Vec::with_capacity(eligible.len());
        for (event, ans) in eligible.iter().zip(&answers) {
            let scored = date_match(ans, &event.date, granularity)?;
            let delta = scored.detail.as_ref().map(|d| d.year_delta);
            if let Some(d) = delta {
                year_deltas.push(YearDelta {
                    granularity: granularity.as_str(),
                    gold_year: event.date.year,
                    year_delta: d,
                });
            }
            vals.push(scored.value);
            rows.push(Row {
                item_id: event.id.clone(),
                condition: granularity.as_str().to_owned(),
                question: event.description.clone(),
                gold: render_gold_date(event),
                prediction: ans.clone(),
                score: scored.value,
                year_delta: delta,
            });
        }
        scores_pct.insert(granularity.as_str().to_owned(), pct(&vals));
    }
    let diff = match (scores_pct.get("year"), scores_pct.get("day")) {
        (Some(&y), Some(&d)) => relative_diff(y, d),
        _ => None,
    };
    Ok(TestReport::Dating(DatingSummary { items, scores_pct, diff_pct_year_to_day: diff }))
}

fn render_gold_date(event: &EventRecord) -> String {
    match (event.date.day, event.date.month) {
        (Some(d), Some(m)) => format!("{d:02}-{m:02}-{}", event.date.year),
        (None, Some(m)) => format!("{m:02}-{}", event.date.year),
        _ => event.date.year.to_string(),
    }
}

/// Date key for ordering comparisons; missing parts sort first.
fn date_key(e: &EventRecord) -> (i32, u32, u32) {
    (e.date.year, e.date.month.unwrap_or(0), e.date.day.unwrap_or(0))
}

/// Builds up to `budget` ordered event pairs at one year gap.
///
/// Pairs are sampled from candidates deterministically, then half are
/// flipped so gold labels stay balanced within one pair. Same-year pairs
/// need full dates on both sides to have a defined order.
fn ordering_pairs(
    events: &[EventRecord],
    distance: u32,
    budget: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, bool)>> {
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for i in 0..events.len() {
        for j in (i + 1)..events.len() {
            let (a, b) = (&events[i], &events[j]);
            let gap = (a.date.year - b.date.year).unsigned_abs();
            if gap != distance {
                continue;
            }
            if distance == 0 {
                let full = |e: &EventRecord| e.date.month.is_some() && e.date.day.is_some();
                if !full(a) || !full(b) || date_key(a) == date_key(b) {
                    continue;
                }
            }
            // Store earlier event first.
            if date_key(a) <= date_key(b) {
                candidates.push((i, j));
            } else {
                candidates.push((j, i));
            }
        }
    }
    let n = budget.min(candidates.len());
    let mut sampled =
        crate::corpus::sample(&candidates, n, mix_seed(seed, &format!("ordering:{distance}")))?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(seed, &format!("ordering_flip:{distance}")));
    for i in (1..sampled.len()).rev() {
        sampled.swap(i, rng.gen_range(0..=i));
    }
    Ok(sampled
        .into_iter()
        .enumerate()
        .map(|(pos, (earlier, later))| {
            if pos % 2 == 0 {
                (earlier, later, true)
            } else {
                (later, earlier, false)
            }
        })
        .collect())
}

async fn ordering_test(
    gateway: &Gateway,
    events: &[EventRecord],
    opts: &SuiteOptions,
    rows: &mut Vec<Row>,
) -> Result<TestReport> {
    let kind = TestKind::EventOrdering;
    if events.is_empty() {
        return Err(no_data(kind, "events"));
    }
    let labels = LabelSet::new(&["True", "False"])?;
    let mut per_distance = Vec::with_capacity(opts.ordering_distances.len());
    for &distance in &opts.ordering_distances {
        let pairs = ordering_pairs(events, distance, opts.pairs_per_distance, opts.seed)?;
        if pairs.is_empty() {
            per_distance.push(DistancePoint { distance, pairs: 0, score_pct: None });
            continue;
        }
        let requests: Vec<(String, Vec<Message>)> = pairs
            .iter()
            .map(|&(a, b, _)| {
                let msgs = TaskPrompt::EventOrdering {
                    event1: &events[a].description,
                    event2: &events[b].description,
                }
                .messages(opts.system_style);
                (format!("{kind}/distance_{distance}/{}|{}", events[a].id, events[b].id), msgs)
            })
            .collect();
        let answers = collect_ok(gateway.batch_complete(&requests).await)?;
        let mut vals = Vec::with_capacity(pairs.len());
        for (&(a, b, gold), ans) in pairs.iter().zip(&answers) {
            let gold_str = if gold { "True" } else { "False" };
            let s = labels.score(ans, gold_str).value;
            vals.push(s);
            rows.push(Row {
                item_id: format!("{}|{}", events[a].id, events[b].id),
                condition: format!("distance_{distance}"),
                question: format!("{} || {}", events[a].description, events[b].description),
                gold: gold_str.to_owned(),
                prediction: ans.clone(),
                score: s,
                year_delta: None,
            });
        }
        per_distance.push(DistancePoint {
            distance,
            pairs: pairs.len(),
            score_pct: Some(pct(&vals)),
        });
    }
    let scored: Vec<(u32, f64)> = per_distance
        .iter()
        .filter_map(|p| p.score_pct.map(|s| (p.distance, s)))
        .collect();
    let (near, far) = match (scored.first(), scored.last()) {
        (Some(&(dn, sn)), Some(&(df, sf))) if dn != df => (Some(sn), Some(sf)),
        _ => (None, None),
    };
    let diff_near = near.and_then(|n| far.and_then(|f| relative_diff(n, f)));
    let diff_far = near.and_then(|n| far.and_then(|f| relative_diff(f, n)));
    Ok(TestReport::Ordering(OrderingSummary {
        per_distance,
        diff_pct_near_to_far: diff_near,
        diff_pct_far_to_near: diff_far,
    }))
}
