//! On-the-fly correctness estimation by consistency probing.
//!
//! Without gold answers, a deployed system can still estimate whether a
//! model's answer to a year-ending question is trustworthy: ask the same
//! question three more ways (relative year, no year, year up front), ask one
//! reversal question built from the model's own answer, and check that the
//! answers hang together. A model that actually knows the fact answers all
//! phrasings alike and can re-derive the year; a model that memorized one
//! wording falls apart.
//!
//! The four agreement signals form a [`ConsistencyVector`]. A small
//! [`TrustModel`], a weighted vote with a threshold fitted on labeled
//! examples by grid search, turns the vector into a correct/incorrect call.

use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QaItem;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, SystemStyle, TaskPrompt};
use crate::metrics::relative_diff;
use crate::mix_seed;
use crate::transform::{self, year_tokens};

// ---------------------------------------------------------------------------
// Answer agreement
// ---------------------------------------------------------------------------

fn normalize(text: &str) -> String {
    let mut out = Vec::new();
    for raw in text.to_lowercase().split_whitespace() {
        let token = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if token.is_empty() || matches!(token, "a" | "an" | "the") {
            continue;
        }
        out.push(token.to_owned());
    }
    out.join(" ")
}

/// 1 when two answers agree, 0 otherwise.
///
/// Agreement means one normalized answer contains the other, or their token
/// sets overlap with an F1 of at least 0.6. Articles and punctuation are
/// ignored. Symmetric by construction.
pub fn consistency(a: &str, b: &str) -> f64 {
    let na = normalize(a);
    let nb = normalize(b);
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    if na.contains(&nb) || nb.contains(&na) {
        return 1.0;
    }
    let ta: std::collections::BTreeSet<&str> = na.split(' ').collect();
    let tb: std::collections::BTreeSet<&str> = nb.split(' ').collect();
    let overlap = ta.intersection(&tb).count();
    let f1 = 2.0 * overlap as f64 / (ta.len() + tb.len()) as f64;
    if f1 >= 0.6 {
        1.0
    } else {
        0.0
    }
}

/// 1 when a dating answer brackets the expected year.
///
/// All four-digit years in the answer are read; agreement means the expected
/// year lies between the smallest and largest, so "between 2005 and 2007"
/// agrees with 2006. No years in the answer means no agreement.
pub fn year_agreement(answer: &str, year: i32) -> f64 {
    let years: Vec<i32> = year_tokens(answer).iter().map(|t| t.year).collect();
    match (years.iter().min(), years.iter().max()) {
        (Some(&lo), Some(&hi)) if lo <= year && year <= hi => 1.0,
        _ => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Building the reversal question from an answer
// ---------------------------------------------------------------------------

static IRREGULAR_PAST: LazyLock<std::collections::BTreeMap<&'static str, &'static str>> =
    LazyLock::new(|| {
        [
            ("beat", "beat"), ("became", "become"), ("began", "begin"), ("bought", "buy"),
            ("brought", "bring"), ("built", "build"), ("came", "come"), ("caught", "catch"),
            ("chose", "choose"), ("did", "do"), ("drew", "draw"), ("drove", "drive"),
            ("fell", "fall"), ("felt", "feel"), ("flew", "fly"), ("fought", "fight"),
            ("found", "find"), ("gave", "give"), ("got", "get"), ("grew", "grow"),
            ("had", "have"), ("heard", "hear"), ("held", "hold"), ("kept", "keep"),
            ("knew", "know"), ("led", "lead"), ("left", "leave"), ("lost", "lose"),
            ("made", "make"), ("met", "meet"), ("paid", "pay"), ("ran", "run"),
            ("rode", "ride"), ("rose", "rise"), ("said", "say"), ("sang", "sing"),
            ("sat", "sit"), ("saw", "see"), ("sent", "send"), ("sold", "sell"),
            ("sought", "seek"), ("spent", "spend"), ("spoke", "speak"), ("stood", "stand"),
            ("struck", "strike"), ("swam", "swim"), ("taught", "teach"), ("threw", "throw"),
            ("thought", "think"), ("told", "tell"), ("took", "take"),
            ("understood", "understand"), ("went", "go"), ("wore", "wear"), ("won", "win"),
            ("wrote", "write"),
        ]
        .into_iter()
        .collect()
    });

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Past tense to infinitive, by table and spelling heuristics.
///
/// The heuristics cover the regular -ed patterns (marry/married, plan/
/// planned, move/moved, settle/settled, acquire/acquired) and deliberately
/// stay simple: a probe question with a slightly odd verb form still reads
/// fine and still elicits a date.
pub fn infinitive(past: &str) -> String {
    if let Some(inf) = IRREGULAR_PAST.get(past) {
        return (*inf).to_owned();
    }
    let Some(stem) = past.strip_suffix("ed") else {
        return past.to_owned();
    };
    if past.len() < 4 {
        return past.to_owned();
    }
    if let Some(y_stem) = stem.strip_suffix('i') {
        if !y_stem.is_empty() {
            return format!("{y_stem}y");
        }
    }
    let b = stem.as_bytes();
    let n = b.len();
    // A 'u' right after 'q' is part of the consonant cluster, not a vowel.
    let vowel_at = |i: usize| is_vowel(b[i]) && !(b[i] == b'u' && i > 0 && b[i - 1] == b'q');
    // Doubled final consonant from CVC stems: planned, stopped. Legitimate
    // double endings (call, pass, stuff, buzz) keep both letters.
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'f' | b'z')
    {
        return stem[..n - 1].to_owned();
    }
    let restore_e = match b[n - 1] {
        b'v' | b'u' | b'c' => true,
        b'l' => n >= 2 && !is_vowel(b[n - 2]) && b[n - 2] != b'l',
        b's' | b'z' => n >= 2 && is_vowel(b[n - 2]),
        // hire, secure, acquire; but chair, tour keep their bare stem.
        b'r' => n >= 3 && matches!(b[n - 2], b'i' | b'u') && !vowel_at(n - 3),
        b'g' => n >= 2 && matches!(b[n - 2], b'd' | b'r' | b'a'),
        _ => false,
    };
    if restore_e {
        format!("{stem}e")
    } else {
        stem.to_owned()
    }
}

fn looks_past(token: &str) -> bool {
    if token.chars().any(|c| c.is_uppercase()) {
        return false;
    }
    token == "was"
        || token == "were"
        || IRREGULAR_PAST.contains_key(token)
        || (token.len() >= 4 && token.ends_with("ed"))
}

fn trim_answer(answer: &str) -> &str {
    answer.trim().trim_end_matches(['.', '!', '?']).trim_end()
}

fn cannot_invert(question: &str) -> Error {
    Error::Config(format!("cannot build a reversal question from {question:?}"))
}

/// Builds the "when" question that checks an answer's year.
///
/// "Bernardo Corradi played for which team in 2006?" answered with
/// "Fiorentina" becomes "When did Bernardo Corradi play for Fiorentina?".
/// Works for subject-first questions with an embedded or leading wh-phrase
/// and for "Who ..." questions; anything else is an error.
pub fn reversal_probe(question: &str, answer: &str) -> Result<String> {
    let answer = trim_answer(answer);
    if answer.is_empty() {
        return Err(cannot_invert(question));
    }
    let head = match transform::detect_year_reference(question) {
        Some(r) if r.position == transform::YearPosition::Trailing => {
            // Everything before " in YYYY".
            let cut = question[..r.span.0].rfind(" in ").ok_or_else(|| cannot_invert(question))?;
            &question[..cut]
        }
        _ => question.trim_end().trim_end_matches(['?', '"', '\'']).trim_end(),
    };
    let tokens: Vec<&str> = head.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(cannot_invert(question));
    }

    // "Who was the mayor ..." asks for a subject; the answer becomes it.
    if tokens[0] == "Who" || tokens[0] == "Whom" {
        let rest = tokens[2..].join(" ");
        return match tokens[1] {
            "was" | "were" | "is" | "are" => Ok(format!("When was {answer} {rest}?")),
            verb if looks_past(verb) => {
                Ok(format!("When did {answer} {} {rest}?", infinitive(verb)))
            }
            _ => Err(cannot_invert(question)),
        };
    }

    // Leading "Which firm acquired ..." or "What company bought ...".
    let mut tokens: Vec<String> = tokens.into_iter().map(str::to_owned).collect();
    if matches!(tokens[0].as_str(), "Which" | "What") && tokens.len() >= 3 {
        tokens.splice(0..2, [answer.to_owned()]);
        return finish_subject_first(&tokens, question, 1);
    }

    // Embedded wh-phrase: "... played for which team".
    let wh = tokens
        .iter()
        .position(|t| matches!(t.as_str(), "which" | "what" | "who" | "whom"));
    let Some(p) = wh else {
        return Err(cannot_invert(question));
    };
    let span_end = if matches!(tokens[p].as_str(), "which" | "what") && p + 1 < tokens.len() {
        p + 2
    } else {
        p + 1
    };
    tokens.splice(p..span_end, [answer.to_owned()]);
    finish_subject_first(&tokens, question, 1)
}

/// Turns "<subject> <past-verb> <rest>" into a "when" question.
fn finish_subject_first(tokens: &[String], question: &str, verb_from: usize) -> Result<String> {
    let verb_at = tokens[verb_from..]
        .iter()
        .position(|t| looks_past(t))
        .map(|i| i + verb_from)
        .ok_or_else(|| cannot_invert(question))?;
    let subject = tokens[..verb_at].join(" ");
    let rest = tokens[verb_at + 1..].join(" ");
    let verb = tokens[verb_at].as_str();
    if verb == "was" || verb == "were" {
        if rest.is_empty() {
            return Err(cannot_invert(question));
        }
        return Ok(format!("When {verb} {subject} {rest}?"));
    }
    if subject.is_empty() {
        return Err(cannot_invert(question));
    }
    let tail = if rest.is_empty() { String::new() } else { format!(" {rest}") };
    Ok(format!("When did {subject} {}{tail}?", infinitive(verb)))
}

// ---------------------------------------------------------------------------
// Probing
// ---------------------------------------------------------------------------

pub const COMPONENT_NAMES: [&str; 4] = ["relativized", "removed", "fronted", "reversal"];

/// Agreement signals for one probed item. A missing component means that
/// probe could not be asked or answered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVector {
    pub relativized: Option<f64>,
    pub removed: Option<f64>,
    pub fronted: Option<f64>,
    pub reversal: Option<f64>,
}

impl ConsistencyVector {
    pub fn components(&self) -> [Option<f64>; 4] {
        [self.relativized, self.removed, self.fronted, self.reversal]
    }

    fn complete(&self) -> Result<[f64; 4]> {
        let c = self.components();
        for (i, v) in c.iter().enumerate() {
            if v.is_none() {
                return Err(Error::MissingComponent(COMPONENT_NAMES[i]));
            }
        }
        Ok(c.map(|v| v.unwrap()))
    }
}

/// Raw answers behind a vector, kept for audit logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeAnswers {
    pub original: String,
    pub relativized: Option<String>,
    pub removed: Option<String>,
    pub fronted: Option<String>,
    pub reversal: Option<String>,
}

/// The probe questions actually asked. Unset when a rewrite did not apply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeQuestions {
    pub relativized: Option<String>,
    pub removed: Option<String>,
    pub fronted: Option<String>,
    pub reversal: Option<String>,
}

/// One item's probe: the questions asked, the answers, the signals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyProbe {
    pub item_id: String,
    pub question: String,
    pub probes: ProbeQuestions,
    pub answers: ProbeAnswers,
    pub vector: ConsistencyVector,
}

/// Probes one year-ending question.
///
/// The original question is answered first; the reversal probe is built
/// from that answer, not from any gold data, so probing works in deployment
/// where no labels exist. Endpoint failures on individual probes leave that
/// component unset rather than failing the item.
pub async fn probe_item(
    gateway: &Gateway,
    item: &QaItem,
    now_year: i32,
    style: SystemStyle,
) -> Result<ConsistencyProbe> {
    probe_with_answer(gateway, item, None, now_year, style).await
}

/// Like [`probe_item`], but a caller-supplied answer can stand in for the
/// model's own first answer. Useful to vet an answer already in hand.
pub async fn probe_with_answer(
    gateway: &Gateway,
    item: &QaItem,
    answer: Option<&str>,
    now_year: i32,
    style: SystemStyle,
) -> Result<ConsistencyProbe> {
    let year = item
        .year_ref
        .as_ref()
        .filter(|r| r.position == transform::YearPosition::Trailing)
        .map(|r| r.year)
        .ok_or_else(|| Error::MissingYearRef(item.question.clone()))?;
    let original = match answer {
        Some(a) => a.to_owned(),
        None => {
            gateway
                .complete(
                    &format!("probe/original/{}", item.id),
                    &TaskPrompt::Qa { question: &item.question }.messages(style),
                )
                .await?
                .raw_text
        }
    };

    let mut questions: [Option<String>; 4] = [None, None, None, None];
    questions[0] = transform::relativize(item, now_year).ok().map(|i| i.question);
    questions[1] = transform::remove_time(item).ok().map(|i| i.question);
    questions[2] = transform::move_time_to_front(item).ok().map(|i| i.question);
    questions[3] = reversal_probe(&item.question, &original).ok();

    let requests: Vec<(String, Vec<crate::gateway::Message>)> = questions
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            q.as_ref().map(|q| {
                let id = format!("probe/{}/{}", COMPONENT_NAMES[i], item.id);
                (id, TaskPrompt::Qa { question: q }.messages(style))
            })
        })
        .collect();
    let mut results = gateway.batch_complete(&requests).await.into_iter();
    let mut answers: [Option<String>; 4] = [None, None, None, None];
    for (i, q) in questions.iter().enumerate() {
        if q.is_some() {
            answers[i] = results.next().expect("one result per request").ok().map(|p| p.raw_text);
        }
    }

    let vector = ConsistencyVector {
        relativized: answers[0].as_deref().map(|a| consistency(&original, a)),
        removed: answers[1].as_deref().map(|a| consistency(&original, a)),
        fronted: answers[2].as_deref().map(|a| consistency(&original, a)),
        reversal: answers[3].as_deref().map(|a| year_agreement(a, year)),
    };
    let [q_relativized, q_removed, q_fronted, q_reversal] = questions;
    let [relativized, removed, fronted, reversal] = answers;
    Ok(ConsistencyProbe {
        item_id: item.id.clone(),
        question: item.question.clone(),
        probes: ProbeQuestions {
            relativized: q_relativized,
            removed: q_removed,
            fronted: q_fronted,
            reversal: q_reversal,
        },
        answers: ProbeAnswers { original, relativized, removed, fronted, reversal },
        vector,
    })
}

/// Probes many items, bounded by the gateway's concurrency limit.
pub async fn probe_many(
    gateway: &Gateway,
    items: &[QaItem],
    now_year: i32,
    style: SystemStyle,
) -> Vec<Result<ConsistencyProbe>> {
    use futures::StreamExt;
    futures::stream::iter(items.iter().map(|item| probe_item(gateway, item, now_year, style)))
        .buffered(gateway.config().max_concurrency.max(1))
        .collect()
        .await
}

// ---------------------------------------------------------------------------
// Trust model
// ---------------------------------------------------------------------------

/// A probed vector with its observed correctness, used for fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledVector {
    pub vector: ConsistencyVector,
    pub correct: bool,
}

/// How the fitted model performed, kept alongside the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub train_size: usize,
    pub holdout_size: usize,
    pub train_balanced_accuracy: f64,
    pub holdout_balanced_accuracy: f64,
    pub grid_points: usize,
}

/// Weighted vote over the four consistency signals.
///
/// An answer is trusted when the weighted sum reaches the threshold.
/// Weights live on the 0.1-step simplex and thresholds on a 0.05 grid, the
/// resolution the fitting search uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustModel {
    pub weights: [f64; 4],
    pub threshold: f64,
    pub training: TrainingMeta,
}

const EPS: f64 = 1e-9;

impl TrustModel {
    pub fn score(&self, vector: &ConsistencyVector) -> Result<f64> {
        let c = vector.complete()?;
        Ok(self.weights.iter().zip(c).map(|(w, v)| w * v).sum())
    }

    pub fn predict_correct(&self, vector: &ConsistencyVector) -> Result<bool> {
        Ok(self.score(vector)? >= self.threshold - EPS)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("trust model: {e}")))
    }
}

fn balanced_accuracy(
    examples: &[([f64; 4], bool)],
    weights: [f64; 4],
    threshold: f64,
) -> f64 {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (c, correct) in examples {
        let score: f64 = weights.iter().zip(c).map(|(w, v)| w * v).sum();
        let predicted = score >= threshold - EPS;
        let class = usize::from(*correct);
        totals[class] += 1;
        if predicted == *correct {
            hits[class] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for k in 0..2 {
        if totals[k] > 0 {
            sum += hits[k] as f64 / totals[k] as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

/// Fits weights and threshold by exhaustive grid search.
///
/// The labeled set is split 80/20 per class with a seeded shuffle. Every
/// weight combination on the 0.1-step simplex is tried against every
/// threshold on the 0.05 grid; the pair with the best balanced accuracy on
/// the training portion wins, earliest grid point on ties. The held-out
/// portion is scored once, after selection, and recorded.
pub fn fit_trust_model(examples: &[LabeledVector], seed: u64) -> Result<TrustModel> {
    let mut by_class: [Vec<[f64; 4]>; 2] = [Vec::new(), Vec::new()];
    for ex in examples {
        by_class[usize::from(ex.correct)].push(ex.vector.complete()?);
    }
    if by_class[0].is_empty() || by_class[1].is_empty() {
        return Err(Error::SingleClassInput);
    }
    if by_class[0].len() < 2 || by_class[1].len() < 2 {
        return Err(Error::Config(
            "fitting needs at least 2 examples of each class".to_owned(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "trust_split"));
    let mut train: Vec<([f64; 4], bool)> = Vec::new();
    let mut holdout: Vec<([f64; 4], bool)> = Vec::new();
    for (class, vectors) in by_class.iter().enumerate() {
        let mut idx: Vec<usize> = (0..vectors.len()).collect();
        idx.shuffle(&mut rng);
        let cut = (vectors.len() * 4 / 5).clamp(1, vectors.len() - 1);
        for (pos, &i) in idx.iter().enumerate() {
            let row = (vectors[i], class == 1);
            if pos < cut {
                train.push(row);
            } else {
                holdout.push(row);
            }
        }
    }

    let mut best: Option<(f64, [f64; 4], f64)> = None;
    let mut grid_points = 0usize;
    for a in 0..=10u32 {
        for b in 0..=(10 - a) {
            for c in 0..=(10 - a - b) {
                let d = 10 - a - b - c;
                let weights = [a, b, c, d].map(|x| f64::from(x) / 10.0);
                for t in 0..=20u32 {
                    let threshold = f64::from(t) / 20.0;
                    grid_points += 1;
                    let ba = balanced_accuracy(&train, weights, threshold);
                    if best.as_ref().is_none_or(|(b, _, _)| ba > *b) {
                        best = Some((ba, weights, threshold));
                    }
                }
            }
        }
    }
    let (train_ba, weights, threshold) = best.expect("grid is never empty");
    Ok(TrustModel {
        weights,
        threshold,
        training: TrainingMeta {
            train_size: train.len(),
            holdout_size: holdout.len(),
            train_balanced_accuracy: train_ba,
            holdout_balanced_accuracy: balanced_accuracy(&holdout, weights, threshold),
            grid_points,
        },
    })
}

/// Convenience for reporting: relative drop of holdout accuracy from train,
/// a quick overfitting indicator.
pub fn generalization_drop(model: &TrustModel) -> Option<f64> {
    relative_diff(
        model.training.train_balanced_accuracy,
        model.training.holdout_balanced_accuracy,
    )
}
