//! Model-agnostic answer metrics.
//!
//! All metrics score raw prediction text against gold data and return a
//! [`MetricScore`] in [0, 1]. Two are binary lexical checks (containment,
//! label match), two handle temporal answers (date match, year interval), one
//! is graded (token recall), and one delegates the judgment to a grader
//! endpoint. Date parsing lives in [`dates`].

pub mod dates;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{EventDate, YearSpan};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, Message, Role};
use crate::transform::year_tokens;

pub use dates::{days_in_month, parse_date, FormatHint, Granularity, ParsedDate};

/// Which metric produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Contains,
    TokenRecall,
    DateMatch,
    IntervalMatch,
    Label,
    Judge,
}

/// Extra per-score payload; today just the signed year error of a date match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreDetail {
    pub year_delta: i64,
}

/// One scored prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: MetricKind,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<ScoreDetail>,
}

impl MetricScore {
    fn plain(metric: MetricKind, value: f64) -> Self {
        MetricScore { metric, value, detail: None }
    }
}

fn fold(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Binary containment: 1 when any gold answer appears as a substring of the
/// prediction after case folding and whitespace normalization.
pub fn contains(prediction: &str, golds: &[String]) -> MetricScore {
    let pred = fold(prediction);
    let hit = golds.iter().any(|g| {
        let g = fold(g);
        !g.is_empty() && pred.contains(&g)
    });
    MetricScore::plain(MetricKind::Contains, if hit { 1.0 } else { 0.0 })
}

fn tokens(text: &str) -> std::collections::BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Fraction of gold tokens present in the prediction, maximized over golds.
///
/// Tokens are case-folded alphanumeric runs, compared as sets.
pub fn token_recall(prediction: &str, golds: &[String]) -> MetricScore {
    let pred = tokens(prediction);
    let best = golds
        .iter()
        .map(|g| {
            let gold = tokens(g);
            if gold.is_empty() {
                return 0.0;
            }
            let hit = gold.intersection(&pred).count();
            hit as f64 / gold.len() as f64
        })
        .fold(0.0, f64::max);
    MetricScore::plain(MetricKind::TokenRecall, best)
}

/// Scores a "when did ...?" answer against the gold year span: 1 when the
/// prediction mentions at least one year and every mentioned year falls
/// inside the span.
pub fn interval_match(prediction: &str, span: &YearSpan) -> MetricScore {
    let years = year_tokens(prediction);
    let hit = !years.is_empty() && years.iter().all(|t| span.contains(t.year));
    MetricScore::plain(MetricKind::IntervalMatch, if hit { 1.0 } else { 0.0 })
}

/// Granularity-aware comparison of a date answer against the gold date.
///
/// The prediction is parsed day-first, matching the "DD-MM-YYYY" instruction
/// models answer under. Value is 1 iff the parsed date agrees with gold on
/// every part the granularity cares about; whenever parsing succeeds the
/// score carries `year_delta = parsed year - gold year`, mismatch or not.
/// Fails when the gold date itself lacks the required parts.
pub fn date_match(
    prediction: &str,
    gold: &EventDate,
    granularity: Granularity,
) -> Result<MetricScore> {
    if granularity >= Granularity::Month && gold.month.is_none()
        || granularity >= Granularity::Day && gold.day.is_none()
    {
        return Err(Error::GoldMissingParts(granularity.as_str()));
    }
    let parsed = parse_date(prediction, FormatHint::DayFirst, granularity);
    Ok(match parsed {
        None => MetricScore::plain(MetricKind::DateMatch, 0.0),
        Some(p) => {
            let ok = p.year == gold.year
                && (granularity < Granularity::Month || p.month == gold.month)
                && (granularity < Granularity::Day || p.day == gold.day);
            MetricScore {
                metric: MetricKind::DateMatch,
                value: if ok { 1.0 } else { 0.0 },
                detail: Some(ScoreDetail { year_delta: i64::from(p.year) - i64::from(gold.year) }),
            }
        }
    })
}

/// Relative change from `base` to `comparison`, in percent.
///
/// `None` when `base` is zero: a change from nothing has no meaningful
/// relative size, and reports show it as n/a rather than an infinity.
pub fn relative_diff(base: f64, comparison: f64) -> Option<f64> {
    (base != 0.0).then(|| (comparison - base) / base * 100.0)
}

// ---------------------------------------------------------------------------
// Label parsing
// ---------------------------------------------------------------------------

/// A closed label vocabulary for classification-style tasks.
///
/// Parsing finds the earliest word-boundary occurrence of any label in the
/// prediction, so "False. The clash happened in 1283." reads as False and
/// "construed" does not read as True. "Contradicting" is accepted as an alias
/// wherever "Conflicting" is a label.
#[derive(Debug, Clone)]
pub struct LabelSet {
    labels: Vec<String>,
    matcher: Regex,
    /// Surface form (folded) to index into `labels`.
    forms: Vec<(String, usize)>,
}

static CONFLICTING_ALIAS: &str = "contradicting";

impl LabelSet {
    /// Builds a label set. Labels must not be case-insensitive prefixes of
    /// one another, otherwise the earliest-occurrence rule would be ambiguous.
    pub fn new(labels: &[&str]) -> Result<Self> {
        let folded: Vec<String> = labels.iter().map(|l| l.to_lowercase()).collect();
        for (i, a) in folded.iter().enumerate() {
            for (j, b) in folded.iter().enumerate() {
                if i != j && b.starts_with(a.as_str()) {
                    return Err(Error::AmbiguousLabels(labels[i].to_owned(), labels[j].to_owned()));
                }
            }
        }
        let mut forms: Vec<(String, usize)> = folded.iter().cloned().zip(0..).collect();
        if let Some(idx) = folded.iter().position(|l| l == "conflicting") {
            forms.push((CONFLICTING_ALIAS.to_owned(), idx));
        }
        let alternation =
            forms.iter().map(|(f, _)| regex::escape(f)).collect::<Vec<_>>().join("|");
        let matcher = Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).expect("valid label regex");
        Ok(LabelSet { labels: labels.iter().map(|&l| l.to_owned()).collect(), matcher, forms })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// The label mentioned earliest in the prediction, or `None` when the
    /// prediction commits to no label at all.
    pub fn parse(&self, prediction: &str) -> Option<&str> {
        let m = self.matcher.find(prediction)?;
        let found = m.as_str().to_lowercase();
        let idx = self.forms.iter().find(|(f, _)| *f == found)?.1;
        Some(&self.labels[idx])
    }

    /// Scores a prediction against the gold label; abstentions score 0.
    pub fn score(&self, prediction: &str, gold: &str) -> MetricScore {
        let hit = self.parse(prediction).is_some_and(|l| l.eq_ignore_ascii_case(gold));
        MetricScore::plain(MetricKind::Label, if hit { 1.0 } else { 0.0 })
    }
}

// ---------------------------------------------------------------------------
// Judged equivalence
// ---------------------------------------------------------------------------

pub const JUDGE_SYSTEM_PROMPT: &str = "You are a strict grader. Answer only 'Yes' or 'No'.";
pub const JUDGE_USER_TEMPLATE: &str = "Question: {question}\nReference answer: {reference}\n\
Candidate answer: {candidate}\nIs the candidate a correct answer to the question given the \
reference? Answer 'Yes' or 'No'.\nAnswer:";

/// Builds the grading conversation for one (question, reference, candidate).
pub fn judge_messages(question: &str, golds: &[String], prediction: &str) -> Vec<Message> {
    let user = JUDGE_USER_TEMPLATE
        .replace("{question}", question)
        .replace("{reference}", &golds.join("; "))
        .replace("{candidate}", prediction);
    vec![
        Message { role: Role::System, content: JUDGE_SYSTEM_PROMPT.to_owned() },
        Message { role: Role::User, content: user },
    ]
}

static VERDICT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z0-9]+").unwrap());

/// Reads a grader's verdict from its leading token.
pub fn parse_verdict(text: &str) -> Result<bool> {
    let first = VERDICT_RE.find(text).map(|m| m.as_str().to_lowercase());
    match first.as_deref() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(Error::UnparseableVerdict(text.to_owned())),
    }
}

/// Asks the grader endpoint whether the prediction answers the question as
/// well as the reference does. Errors when the endpoint fails or its verdict
/// is not a leading yes/no.
pub async fn judge_equivalence(
    question: &str,
    golds: &[String],
    prediction: &str,
    grader: &Gateway,
) -> Result<MetricScore> {
    let messages = judge_messages(question, golds, prediction);
    let item_id = format!("judge:{:016x}", crate::stable_hash(&format!("{question}\x1f{prediction}")));
    let reply = grader.complete(&item_id, &messages).await?;
    let yes = parse_verdict(&reply.raw_text)?;
    Ok(MetricScore::plain(MetricKind::Judge, if yes { 1.0 } else { 0.0 }))
}
