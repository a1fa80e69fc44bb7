//! Deterministic mock endpoint.
//!
//! The oracle answers from the incoming prompt text alone, so the whole
//! suite can run hermetically and repeatably. It recognizes the frozen task
//! templates, recovers the question/claim/event payload, and answers
//! according to its policy:
//!
//! * `answer_key`: answers QA from a key, ignoring how the question phrases
//!   its time reference; perfect date lookups for dating and ordering.
//! * `year_sensitive`: like `answer_key`, but a QA answer is only produced
//!   when the question literally mentions the fact's absolute year. This is
//!   the "model" that knows facts only under their original year, the worst
//!   case every robustness test is designed to expose.
//! * `fixed_label`: answers every prompt with one constant string.
//! * `judge`: grades candidate-vs-reference prompts by normalized equality.
//!
//! Unknown items get the literal string "No answer", which no metric scores
//! as correct.
//!
//! QA lookups go through a phrasing-invariant "core": lowercase, whitespace
//! collapsed, trailing/leading year phrases and relative phrases stripped.
//! All four phrasings of the same fact share one core, while a shifted year
//! still changes what [`year_sensitive`] sees in the question text.

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, LazyLock};

use axum::extract::{Json, State};
use axum::routing::post;
use axum::Router;
use regex::Regex;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Message, Role};
use crate::transform::year_tokens;

pub const NO_ANSWER: &str = "No answer";

/// How the oracle decides what to answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockPolicy {
    AnswerKey,
    YearSensitive,
    FixedLabel(String),
    Judge,
}

impl FromStr for MockPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "answer-key" | "answer_key" => Ok(MockPolicy::AnswerKey),
            "year-sensitive" | "year_sensitive" => Ok(MockPolicy::YearSensitive),
            "judge" => Ok(MockPolicy::Judge),
            other => match other.strip_prefix("fixed:") {
                Some(label) if !label.is_empty() => Ok(MockPolicy::FixedLabel(label.to_owned())),
                _ => Err(Error::Config(format!(
                    "unknown mock policy {other:?}; expected answer-key, year-sensitive, \
                     fixed:<label> or judge"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KeyEntry {
    Qa {
        question: String,
        answer: String,
        #[serde(default)]
        year: Option<i32>,
    },
    Event {
        event: String,
        /// Gold date as DD-MM-YYYY.
        date: String,
    },
    Claim {
        claim: String,
        label: String,
    },
}

/// Ground truth the oracle answers from.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey {
    qa: HashMap<String, (String, Option<i32>)>,
    events: HashMap<String, String>,
    claims: HashMap<String, String>,
}

impl AnswerKey {
    pub fn empty() -> Self {
        AnswerKey::default()
    }

    /// Loads a JSONL key; every line is one qa/event/claim entry.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut key = AnswerKey::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: KeyEntry = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{} line {}: {e}", path.display(), idx + 1))
            })?;
            key.insert(entry);
        }
        Ok(key)
    }

    fn insert(&mut self, entry: KeyEntry) {
        match entry {
            KeyEntry::Qa { question, answer, year } => {
                self.qa.insert(question_core(&question), (answer, year));
            }
            KeyEntry::Event { event, date } => {
                self.events.insert(event.trim().to_owned(), date);
            }
            KeyEntry::Claim { claim, label } => {
                self.claims.insert(fold(&claim), label);
            }
        }
    }

    pub fn add_qa(&mut self, question: &str, answer: &str, year: Option<i32>) {
        self.insert(KeyEntry::Qa {
            question: question.to_owned(),
            answer: answer.to_owned(),
            year,
        });
    }

    pub fn add_event(&mut self, event: &str, date: &str) {
        self.insert(KeyEntry::Event { event: event.to_owned(), date: date.to_owned() });
    }

    pub fn add_claim(&mut self, claim: &str, label: &str) {
        self.insert(KeyEntry::Claim { claim: claim.to_owned(), label: label.to_owned() });
    }
}

fn fold(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

static CORE_TRAILING_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r" in (the year )?[0-9]{4}$").unwrap());
static CORE_TRAILING_AGO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r" [0-9]+ years? ago$").unwrap());
static CORE_LEADING_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^["']?in (the year )?[0-9]{4}, "#).unwrap());

/// Phrasing-invariant lookup key for a QA question.
pub fn question_core(question: &str) -> String {
    let mut s = fold(question);
    s.truncate(s.trim_end_matches(['?', '"', '\'', ' ', '.']).len());
    if let Some(m) = CORE_TRAILING_YEAR.find(&s) {
        s.truncate(m.start());
    } else if let Some(m) = CORE_TRAILING_AGO.find(&s) {
        s.truncate(m.start());
    }
    if let Some(m) = CORE_LEADING_YEAR.find(&s) {
        s = s[m.end()..].to_owned();
    }
    s.trim().to_owned()
}

/// What task a prompt came from, with its recovered payload.
#[derive(Debug, Clone, PartialEq, Eq)]
enum ParsedPrompt {
    Qa { question: String },
    Ordering { event1: String, event2: String },
    Fact { claim: String },
    Dating { event: String },
    Judge { reference: String, candidate: String },
    Unknown,
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

fn parse_prompt(content: &str) -> ParsedPrompt {
    if let Some(q) = content
        .strip_prefix("Please answer the question:\n")
        .and_then(|rest| rest.strip_suffix("\nAnswer:"))
    {
        return ParsedPrompt::Qa { question: q.to_owned() };
    }
    if content.starts_with("Please answer the question with 'True' or 'False'.") {
        if let (Some(a), Some(b)) = (
            between(content, "\nA: ", "\nB: "),
            between(content, "\nB: ", "\n\nAnswer:"),
        ) {
            return ParsedPrompt::Ordering { event1: a.to_owned(), event2: b.to_owned() };
        }
    }
    if let Some(c) = between(content, "\nClaim: ", "\nAnswer:") {
        if content.starts_with("Please answer the claim") {
            return ParsedPrompt::Fact { claim: c.to_owned() };
        }
    }
    if let Some(e) = between(content, "Here is an event:\n", "\nPlease answer with the date") {
        return ParsedPrompt::Dating { event: e.to_owned() };
    }
    if content.starts_with("Question: ") {
        if let (Some(r), Some(c)) = (
            between(content, "\nReference answer: ", "\nCandidate answer: "),
            between(content, "\nCandidate answer: ", "\nIs the candidate"),
        ) {
            return ParsedPrompt::Judge { reference: r.to_owned(), candidate: c.to_owned() };
        }
    }
    if let Some(q) = content.strip_prefix("Please complete the following sentence:\n") {
        return ParsedPrompt::Qa { question: q.to_owned() };
    }
    ParsedPrompt::Unknown
}

/// Parses a key date "DD-MM-YYYY" into a sortable (y, m, d).
fn key_date(date: &str) -> Option<(i32, u32, u32)> {
    let mut parts = date.split('-');
    let d: u32 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let y: i32 = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((y, m, d))
}

/// The deterministic endpoint brain: same messages in, same text out.
#[derive(Debug, Clone)]
pub struct MockOracle {
    policy: MockPolicy,
    key: AnswerKey,
}

impl MockOracle {
    pub fn new(policy: MockPolicy, key: AnswerKey) -> Self {
        MockOracle { policy, key }
    }

    pub fn respond(&self, messages: &[Message]) -> String {
        if let MockPolicy::FixedLabel(label) = &self.policy {
            return label.clone();
        }
        let content = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        match parse_prompt(content) {
            ParsedPrompt::Qa { question } => self.answer_qa(&question),
            ParsedPrompt::Ordering { event1, event2 } => self.answer_ordering(&event1, &event2),
            ParsedPrompt::Fact { claim } => self.answer_claim(&claim),
            ParsedPrompt::Dating { event } => self.answer_dating(&event),
            ParsedPrompt::Judge { reference, candidate } => judge_verdict(&reference, &candidate),
            ParsedPrompt::Unknown => NO_ANSWER.to_owned(),
        }
    }

    fn answer_qa(&self, question: &str) -> String {
        let Some((answer, key_year)) = self.key.qa.get(&question_core(question)) else {
            return NO_ANSWER.to_owned();
        };
        if self.policy == MockPolicy::YearSensitive {
            let mentioned = match key_year {
                Some(y) => year_tokens(question).iter().any(|t| t.year == *y),
                None => false,
            };
            if !mentioned {
                return NO_ANSWER.to_owned();
            }
        }
        answer.clone()
    }

    fn answer_ordering(&self, event1: &str, event2: &str) -> String {
        let a = self.key.events.get(event1.trim()).and_then(|d| key_date(d));
        let b = self.key.events.get(event2.trim()).and_then(|d| key_date(d));
        match (a, b) {
            (Some(a), Some(b)) => if a < b { "True" } else { "False" }.to_owned(),
            _ => NO_ANSWER.to_owned(),
        }
    }

    fn answer_claim(&self, claim: &str) -> String {
        self.key.claims.get(&fold(claim)).cloned().unwrap_or_else(|| NO_ANSWER.to_owned())
    }

    fn answer_dating(&self, event: &str) -> String {
        // Always the full DD-MM-YYYY; coarser granularities parse it fine.
        self.key.events.get(event.trim()).cloned().unwrap_or_else(|| NO_ANSWER.to_owned())
    }
}

fn judge_verdict(reference: &str, candidate: &str) -> String {
    let norm = |s: &str| fold(s.trim().trim_end_matches('.'));
    let cand = norm(candidate);
    let hit = reference.split("; ").any(|r| norm(r) == cand);
    if hit { "Yes" } else { "No" }.to_owned()
}

// ---------------------------------------------------------------------------
// HTTP server
// ---------------------------------------------------------------------------

async fn handle(
    State(oracle): State<Arc<MockOracle>>,
    Json(req): Json<ChatRequest>,
) -> Json<serde_json::Value> {
    let content = oracle.respond(&req.messages);
    Json(json!({
        "id": "mock",
        "object": "chat.completion",
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": content },
            "finish_reason": "stop"
        }]
    }))
}

fn router(oracle: MockOracle) -> Router {
    let shared = Arc::new(oracle);
    Router::new()
        .route("/v1/chat/completions", post(handle))
        .route("/chat/completions", post(handle))
        .with_state(shared)
}

/// Serves the oracle on an already-bound listener until the task is dropped.
pub async fn serve(oracle: MockOracle, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(oracle)).await
}

/// Binds an ephemeral local port and serves the oracle in a background task.
pub async fn spawn(oracle: MockOracle) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = serve(oracle, listener).await;
    });
    Ok((addr, handle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{SystemStyle, TaskPrompt};
    use crate::metrics::Granularity;

    fn corradi_key() -> AnswerKey {
        let mut key = AnswerKey::empty();
        key.add_qa(
            "Bernardo Corradi played for which team in 2006?",
            "Fiorentina",
            Some(2006),
        );
        key
    }

    fn ask(oracle: &MockOracle, question: &str) -> String {
        let msgs = TaskPrompt::Qa { question }.messages(SystemStyle::Default);
        oracle.respond(&msgs)
    }

    #[test]
    fn core_is_invariant_across_phrasings() {
        let base = question_core("Bernardo Corradi played for which team in 2006?");
        for q in [
            "Bernardo Corradi played for which team 17 years ago?",
            "Bernardo Corradi played for which team?",
            "In 2006, Bernardo Corradi played for which team?",
            "bernardo  corradi played for which team in the year 2006 ?",
            "Bernardo Corradi played for which team in 2011?",
        ] {
            assert_eq!(question_core(q), base, "core mismatch for {q:?}");
        }
        assert_ne!(question_core("Someone else played for which team in 2006?"), base);
    }

    #[test]
    fn answer_key_ignores_phrasing() {
        let oracle = MockOracle::new(MockPolicy::AnswerKey, corradi_key());
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team in 2006?"), "Fiorentina");
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team 17 years ago?"), "Fiorentina");
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team?"), "Fiorentina");
        assert_eq!(ask(&oracle, "In 2006, Bernardo Corradi played for which team?"), "Fiorentina");
        assert_eq!(ask(&oracle, "Who was the king of France in 1640?"), NO_ANSWER);
    }

    #[test]
    fn year_sensitive_needs_the_true_year_in_text() {
        let oracle = MockOracle::new(MockPolicy::YearSensitive, corradi_key());
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team in 2006?"), "Fiorentina");
        assert_eq!(ask(&oracle, "In 2006, Bernardo Corradi played for which team?"), "Fiorentina");
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team?"), NO_ANSWER);
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team 17 years ago?"), NO_ANSWER);
        assert_eq!(ask(&oracle, "Bernardo Corradi played for which team in 2011?"), NO_ANSWER);
    }

    #[test]
    fn ordering_compares_key_dates() {
        let mut key = AnswerKey::empty();
        key.add_event("The old bridge opened.", "02-03-1870");
        key.add_event("The new bridge opened.", "01-01-1930");
        let oracle = MockOracle::new(MockPolicy::AnswerKey, key);
        let before = TaskPrompt::EventOrdering {
            event1: "The old bridge opened.",
            event2: "The new bridge opened.",
        };
        assert_eq!(oracle.respond(&before.messages(SystemStyle::Default)), "True");
        let after = TaskPrompt::EventOrdering {
            event1: "The new bridge opened.",
            event2: "The old bridge opened.",
        };
        assert_eq!(oracle.respond(&after.messages(SystemStyle::Default)), "False");
        let unknown = TaskPrompt::EventOrdering {
            event1: "The old bridge opened.",
            event2: "Atlantis fell.",
        };
        assert_eq!(oracle.respond(&unknown.messages(SystemStyle::Default)), NO_ANSWER);
    }

    #[test]
    fn dating_echoes_full_date_for_any_granularity() {
        let mut key = AnswerKey::empty();
        key.add_event("Reykjavík was established.", "18-08-1786");
        let oracle = MockOracle::new(MockPolicy::AnswerKey, key);
        for g in [Granularity::Day, Granularity::Month, Granularity::Year] {
            let p = TaskPrompt::EventDating { event: "Reykjavík was established.", granularity: g };
            assert_eq!(oracle.respond(&p.messages(SystemStyle::Default)), "18-08-1786");
        }
    }

    #[test]
    fn claims_answer_from_key() {
        let mut key = AnswerKey::empty();
        key.add_claim("The treaty was signed in 1794.", "True");
        let oracle = MockOracle::new(MockPolicy::AnswerKey, key);
        let p = TaskPrompt::FactChecking { claim: "The treaty was signed in 1794." };
        assert_eq!(oracle.respond(&p.messages(SystemStyle::Default)), "True");
        let q = TaskPrompt::FactChecking { claim: "The moon is cheese." };
        assert_eq!(oracle.respond(&q.messages(SystemStyle::Default)), NO_ANSWER);
    }

    #[test]
    fn fixed_label_answers_everything_identically() {
        let oracle = MockOracle::new(MockPolicy::FixedLabel("True".to_owned()), AnswerKey::empty());
        assert_eq!(ask(&oracle, "Anything at all?"), "True");
        let p = TaskPrompt::FactChecking { claim: "Whatever." };
        assert_eq!(oracle.respond(&p.messages(SystemStyle::Default)), "True");
    }

    #[test]
    fn judge_compares_normalized_strings() {
        let oracle = MockOracle::new(MockPolicy::Judge, AnswerKey::empty());
        let msgs = crate::metrics::judge_messages(
            "Who won?",
            &["France".to_owned()],
            "france.",
        );
        assert_eq!(oracle.respond(&msgs), "Yes");
        let msgs = crate::metrics::judge_messages("Who won?", &["France".to_owned()], "Berlin");
        assert_eq!(oracle.respond(&msgs), "No");
        let msgs = crate::metrics::judge_messages(
            "Who won?",
            &["France".to_owned(), "Les Bleus".to_owned()],
            "les bleus",
        );
        assert_eq!(oracle.respond(&msgs), "Yes");
    }

    #[test]
    fn policies_parse_from_strings() {
        assert_eq!(MockPolicy::from_str("answer-key").unwrap(), MockPolicy::AnswerKey);
        assert_eq!(MockPolicy::from_str("year_sensitive").unwrap(), MockPolicy::YearSensitive);
        assert_eq!(
            MockPolicy::from_str("fixed:Conflicting").unwrap(),
            MockPolicy::FixedLabel("Conflicting".to_owned())
        );
        assert_eq!(MockPolicy::from_str("judge").unwrap(), MockPolicy::Judge);
        assert!(MockPolicy::from_str("coin-flip").is_err());
    }

    #[test]
    fn unknown_prompt_shape_gets_no_answer() {
        let oracle = MockOracle::new(MockPolicy::AnswerKey, AnswerKey::empty());
        let msgs = vec![Message { role: Role::User, content: "hello there".to_owned() }];
        assert_eq!(oracle.respond(&msgs), NO_ANSWER);
    }
}
