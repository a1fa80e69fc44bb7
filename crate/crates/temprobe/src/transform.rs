//! Question transformations over a trailing-year grammar.
//!
//! The grammar recognizes questions that end in an absolute year phrase
//! ("... in 2006?", "... in the year 2006?") or start with one ("In 2006, ...")
//! and treats the 4-digit token as the year reference. Everything here is
//! plain string surgery: transformations replace, remove, or move that phrase
//! and record what they did in the item's meta map. Questions with several
//! year tokens only ever have the trailing one touched.
//!
//! Four-digit tokens count as years when they fall in
//! [`YEAR_MIN`]..=[`YEAR_MAX`]; "in 0042?" and "in 9999?" are not year
//! references.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Meta, QaItem, Source, TemporalQuadruple};
use crate::error::{Error, Result};
use crate::{mix_seed, YEAR_MAX, YEAR_MIN};

// Meta keys written by the operations in this module.
pub const META_TRANSFORM: &str = "transform";
pub const META_DERIVED_FROM: &str = "derived_from";
pub const META_ORIG_YEAR: &str = "orig_year";
pub const META_YEARS_AGO: &str = "years_ago";
pub const META_SHIFT_K: &str = "shift_k";
pub const META_MULTI_YEAR: &str = "multi_year";
pub const META_NORMALIZED: &str = "normalized_year_phrase";
pub const META_RELATION: &str = "relation";
pub const META_SPAN_START: &str = "span_start";
pub const META_SPAN_END: &str = "span_end";

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

/// Where the year phrase sits in the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearPosition {
    Trailing,
    Leading,
}

/// A recognized year reference.
///
/// `span` is the byte range of the 4 digits only, not the surrounding phrase,
/// so `question[span.0..span.1]` always parses back to `year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearReference {
    pub span: (usize, usize),
    pub year: i32,
    pub position: YearPosition,
}

static TRAILING_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#" in (the year )?([0-9]{4})( ?\?["']?)$"#).unwrap()
});
static LEADING_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^["']?In (the year )?([0-9]{4}), "#).unwrap()
});
static RELATIVE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#" ([0-9]+) years? ago( ?\?["']?)$"#).unwrap()
});
static YEAR_TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b[0-9]{4}\b").unwrap()
});
static TAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"( ?\?["']?)$"#).unwrap()
});

/// A 4-digit year token with its byte span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearToken {
    pub span: (usize, usize),
    pub year: i32,
}

/// All in-range 4-digit year tokens in the text, left to right.
pub fn year_tokens(text: &str) -> Vec<YearToken> {
    YEAR_TOKEN_RE
        .find_iter(text)
        .filter_map(|m| {
            let year: i32 = m.as_str().parse().ok()?;
            (YEAR_MIN..=YEAR_MAX)
                .contains(&year)
                .then_some(YearToken { span: (m.start(), m.end()), year })
        })
        .collect()
}

/// Trailing-year match broken into the pieces the operations splice.
struct Trailing<'a> {
    /// Text before the " in YYYY" phrase (no trailing space).
    head: &'a str,
    year: i32,
    /// Byte span of the 4 digits.
    digits: (usize, usize),
    /// Whether the phrase used the "in the year YYYY" variant.
    the_year: bool,
    /// Question mark tail, e.g. "?" or " ?" or "?\"".
    tail: &'a str,
}

fn split_trailing(question: &str) -> Option<Trailing<'_>> {
    let caps = TRAILING_RE.captures(question)?;
    let digits = caps.get(2).unwrap();
    let year: i32 = digits.as_str().parse().ok()?;
    if !(YEAR_MIN..=YEAR_MAX).contains(&year) {
        return None;
    }
    let whole = caps.get(0).unwrap();
    let tail = caps.get(3).unwrap();
    Some(Trailing {
        head: &question[..whole.start()],
        year,
        digits: (digits.start(), digits.end()),
        the_year: caps.get(1).is_some(),
        tail: tail.as_str(),
    })
}

fn leading_reference(question: &str) -> Option<YearReference> {
    let caps = LEADING_RE.captures(question)?;
    let digits = caps.get(2).unwrap();
    let year: i32 = digits.as_str().parse().ok()?;
    (YEAR_MIN..=YEAR_MAX).contains(&year).then_some(YearReference {
        span: (digits.start(), digits.end()),
        year,
        position: YearPosition::Leading,
    })
}

/// Finds the question's year reference. A trailing phrase wins over a
/// leading one when both are present.
pub fn detect_year_reference(question: &str) -> Option<YearReference> {
    if let Some(t) = split_trailing(question) {
        return Some(YearReference {
            span: t.digits,
            year: t.year,
            position: YearPosition::Trailing,
        });
    }
    leading_reference(question)
}

/// Admits a question into the trailing-year corpus.
///
/// Returns `None` when the question has no trailing year phrase. Otherwise
/// rewrites "in the year YYYY" to "in YYYY" (noted under
/// `normalized_year_phrase`), populates `year_ref`, and flags questions that
/// carry additional year tokens as `multi_year`.
pub fn normalize_trailing_year(mut item: QaItem) -> Option<QaItem> {
    let t = split_trailing(&item.question)?;
    if t.the_year {
        item.question = splice(t.head, &format!(" in {}", t.year), t.tail);
        item.meta.insert(META_NORMALIZED.to_owned(), "true".to_owned());
    }
    if year_tokens(&item.question).len() > 1 {
        item.meta.insert(META_MULTI_YEAR.to_owned(), "true".to_owned());
    }
    Some(item.redetect())
}

// Phrase rewrites all have the shape head + middle + tail.
fn splice(head: &str, middle: &str, tail: &str) -> String {
    let mut out = String::with_capacity(head.len() + middle.len() + tail.len());
    out.push_str(head);
    out.push_str(middle);
    out.push_str(tail);
    out
}

fn with_meta(mut item: QaItem, question: String, transform: &str) -> QaItem {
    item.meta.insert(META_TRANSFORM.to_owned(), transform.to_owned());
    item.meta.entry(META_DERIVED_FROM.to_owned()).or_insert_with(|| item.id.clone());
    item.question = question;
    item.redetect()
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// "... in 2006?" becomes "... 17 years ago?" (with `now_year` 2023).
///
/// Fails when the question has no trailing year or the year is not strictly
/// in the past.
pub fn relativize(item: &QaItem, now_year: i32) -> Result<QaItem> {
    let t = split_trailing(&item.question)
        .ok_or_else(|| Error::MissingYearRef(item.question.clone()))?;
    if t.year >= now_year {
        return Err(Error::YearNotPast { year: t.year, now_year });
    }
    let k = now_year - t.year;
    let phrase = if k == 1 { " 1 year ago".to_owned() } else { format!(" {k} years ago") };
    let question = splice(t.head, &phrase, t.tail);
    let year = t.year;
    let mut out = with_meta(item.clone(), question, "relativize");
    out.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    out.meta.insert(META_YEARS_AGO.to_owned(), k.to_string());
    Ok(out)
}

/// Inverse of [`relativize`]: "... 17 years ago?" becomes "... in 2006?".
pub fn absolutize(item: &QaItem, now_year: i32) -> Result<QaItem> {
    let caps = RELATIVE_RE
        .captures(&item.question)
        .ok_or_else(|| Error::MissingRelativeRef(item.question.clone()))?;
    let k: i64 = caps[1].parse().map_err(|_| Error::MissingRelativeRef(item.question.clone()))?;
    let year = i64::from(now_year) - k;
    if !(i64::from(YEAR_MIN)..=i64::from(YEAR_MAX)).contains(&year) {
        return Err(Error::RelativeOutOfRange { k, now_year });
    }
    let whole = caps.get(0).unwrap();
    let head = &item.question[..whole.start()];
    let tail = caps.get(2).unwrap().as_str();
    let question = splice(head, &format!(" in {year}"), tail);
    let mut out = with_meta(item.clone(), question, "absolutize");
    out.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    Ok(out)
}

/// Deletes the trailing year phrase: "... in 2006?" becomes "...?".
pub fn remove_time(item: &QaItem) -> Result<QaItem> {
    let t = split_trailing(&item.question)
        .ok_or_else(|| Error::MissingYearRef(item.question.clone()))?;
    let question = splice(t.head, "", t.tail);
    let year = t.year;
    let mut out = with_meta(item.clone(), question, "remove_time");
    out.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    if !year_tokens(&out.question).is_empty() {
        out.meta.insert(META_MULTI_YEAR.to_owned(), "true".to_owned());
    }
    Ok(out)
}

/// Replaces the referenced year with one `k` years away.
///
/// The direction is a coin flip drawn from a stream keyed on `(seed, item
/// id)`, so a rerun with the same seed shifts every item the same way. If the
/// drawn direction leaves [`YEAR_MIN`]..=[`YEAR_MAX`] the other direction is
/// used; if both do, this errors. `k = 0` returns the question unchanged.
pub fn shift_year(item: &QaItem, k: u32, seed: u64) -> Result<QaItem> {
    let year_ref = detect_year_reference(&item.question)
        .ok_or_else(|| Error::MissingYearRef(item.question.clone()))?;
    let year = year_ref.year;
    let shifted = if k == 0 {
        year
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &item.id));
        let up = year + k as i32;
        let down = year - k as i32;
        let preferred = if rng.gen_bool(0.5) { up } else { down };
        let fallback = if preferred == up { down } else { up };
        if (YEAR_MIN..=YEAR_MAX).contains(&preferred) {
            preferred
        } else if (YEAR_MIN..=YEAR_MAX).contains(&fallback) {
            fallback
        } else {
            return Err(Error::ShiftOutOfRange { year, k });
        }
    };
    let mut question = item.question.clone();
    question.replace_range(year_ref.span.0..year_ref.span.1, &shifted.to_string());
    let mut out = with_meta(item.clone(), question, "year_shift");
    out.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    out.meta.insert(META_SHIFT_K.to_owned(), k.to_string());
    Ok(out)
}

/// Moves the trailing year phrase to the front:
/// "Bernardo Corradi played for which team in 2006?" becomes
/// "In 2006, Bernardo Corradi played for which team?".
///
/// The first character of the remainder keeps its original case.
pub fn move_time_to_front(item: &QaItem) -> Result<QaItem> {
    let t = split_trailing(&item.question)
        .ok_or_else(|| Error::MissingYearRef(item.question.clone()))?;
    let question = format!("In {}, {}{}", t.year, t.head, t.tail);
    let year = t.year;
    let mut out = with_meta(item.clone(), question, "move_time_to_front");
    out.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reformulation stages
// ---------------------------------------------------------------------------

/// The four phrasings of the guided reformulation ladder, weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReformulationStage {
    NoTime,
    PlusRelative,
    PlusAbsolute,
    TimeFront,
}

impl ReformulationStage {
    pub const ALL: [ReformulationStage; 4] = [
        ReformulationStage::NoTime,
        ReformulationStage::PlusRelative,
        ReformulationStage::PlusAbsolute,
        ReformulationStage::TimeFront,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReformulationStage::NoTime => "no_time",
            ReformulationStage::PlusRelative => "plus_relative",
            ReformulationStage::PlusAbsolute => "plus_absolute",
            ReformulationStage::TimeFront => "time_front",
        }
    }
}

impl fmt::Display for ReformulationStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Renders the item at one reformulation stage.
///
/// The item's original year must be recoverable: from `orig_year` meta, or
/// from a year reference in the question itself. The absolute phrasing is
/// reconstructed first (reinserting " in YYYY" if the item currently has no
/// time reference), then the stage transformation is applied to it.
pub fn apply_reformulation_stage(
    item: &QaItem,
    stage: ReformulationStage,
    now_year: i32,
) -> Result<QaItem> {
    let year = stored_year(item)
        .ok_or_else(|| Error::MissingStoredYear { item: item.id.clone() })?;
    let mut absolute = to_absolute(item, year)?;
    absolute.meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
    let mut out = match stage {
        ReformulationStage::NoTime => remove_time(&absolute)?,
        ReformulationStage::PlusRelative => relativize(&absolute, now_year)?,
        ReformulationStage::PlusAbsolute => absolute,
        ReformulationStage::TimeFront => move_time_to_front(&absolute)?,
    };
    out.meta.insert(META_TRANSFORM.to_owned(), stage.as_str().to_owned());
    out.meta.entry(META_DERIVED_FROM.to_owned()).or_insert_with(|| item.id.clone());
    Ok(out)
}

fn stored_year(item: &QaItem) -> Option<i32> {
    if let Some(y) = item.meta.get(META_ORIG_YEAR).and_then(|v| v.parse().ok()) {
        return Some(y);
    }
    detect_year_reference(&item.question).map(|r| r.year)
}

/// Rebuilds the trailing-absolute phrasing of a question whose original year
/// is `year`, whatever phrasing it currently uses.
fn to_absolute(item: &QaItem, year: i32) -> Result<QaItem> {
    if let Some(t) = split_trailing(&item.question) {
        if t.year == year && !t.the_year {
            return Ok(item.clone());
        }
        let question = splice(t.head, &format!(" in {year}"), t.tail);
        let mut out = item.clone();
        out.question = question;
        return Ok(out.redetect());
    }
    if RELATIVE_RE.is_match(&item.question) {
        let caps = RELATIVE_RE.captures(&item.question).unwrap();
        let whole = caps.get(0).unwrap();
        let head = &item.question[..whole.start()];
        let tail = caps.get(2).unwrap().as_str();
        let mut out = item.clone();
        out.question = splice(head, &format!(" in {year}"), tail);
        return Ok(out.redetect());
    }
    if let Some(r) = leading_reference(&item.question) {
        // "In YYYY, rest?" back to "rest in YYYY?".
        let after = item.question[r.span.1..].strip_prefix(", ").unwrap_or("");
        let tail_start = TAIL_RE.find(after).map_or(after.len(), |m| m.start());
        let (body, tail) = after.split_at(tail_start);
        let mut out = item.clone();
        out.question = format!("{body} in {year}{tail}");
        return Ok(out.redetect());
    }
    // No time reference at all: insert before the question-mark tail.
    let q = &item.question;
    let tail_start = TAIL_RE.find(q).map_or(q.len(), |m| m.start());
    let (body, tail) = q.split_at(tail_start);
    let mut out = item.clone();
    out.question = format!("{body} in {year}{tail}");
    Ok(out.redetect())
}

// ---------------------------------------------------------------------------
// Relation registry
// ---------------------------------------------------------------------------

/// Which slot of the quadruple the forward question asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardAsks {
    Subject,
    Object,
}

/// Question templates for one relation.
///
/// The forward template poses the fact as a year-anchored question; the
/// inverse template asks for the years given both entities. Slots are
/// `{subject}`, `{object}` and `{year}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTemplate {
    pub relation: String,
    pub forward_template: String,
    pub inverse_template: String,
    pub forward_asks: ForwardAsks,
}

static SLOT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

impl RelationTemplate {
    fn validate(&self) -> Result<()> {
        let err = |reason: &str| {
            Err(Error::InvalidTemplate { relation: self.relation.clone(), reason: reason.to_owned() })
        };
        for caps in SLOT_RE.captures_iter(&self.forward_template) {
            if !matches!(&caps[1], "subject" | "object" | "year") {
                return err(&format!("unknown slot {{{}}}", &caps[1]));
            }
        }
        for caps in SLOT_RE.captures_iter(&self.inverse_template) {
            if !matches!(&caps[1], "subject" | "object") {
                return err(&format!("inverse slot {{{}}} not allowed", &caps[1]));
            }
        }
        if !self.forward_template.contains("{year}") {
            return err("forward template lacks {year}");
        }
        if !self.forward_template.contains("{subject}") && !self.forward_template.contains("{object}")
        {
            return err("forward template lacks an entity slot");
        }
        if !self.inverse_template.contains("{subject}") || !self.inverse_template.contains("{object}")
        {
            return err("inverse template needs both {subject} and {object}");
        }
        let asked = match self.forward_asks {
            ForwardAsks::Subject => "{subject}",
            ForwardAsks::Object => "{object}",
        };
        if self.forward_template.contains(asked) {
            return err("forward template mentions the slot it asks for");
        }
        Ok(())
    }
}

/// The set of relations questions can be generated for.
#[derive(Debug, Clone)]
pub struct RelationRegistry {
    templates: BTreeMap<String, RelationTemplate>,
    version: u32,
}

impl RelationRegistry {
    /// The six built-in relations.
    pub fn builtin() -> Self {
        let t = |relation: &str, forward: &str, inverse: &str, asks: ForwardAsks| RelationTemplate {
            relation: relation.to_owned(),
            forward_template: forward.to_owned(),
            inverse_template: inverse.to_owned(),
            forward_asks: asks,
        };
        let templates = [
            t(
                "member_of_sports_team",
                "{subject} played for which team in {year}?",
                "When did {subject} play for {object}?",
                ForwardAsks::Object,
            ),
            t(
                "position_held",
                "Who was the {object} in {year}?",
                "When was {subject} the {object}?",
                ForwardAsks::Subject,
            ),
            t(
                "award_received",
                "{subject} received which award in {year}?",
                "When did {subject} receive the {object}?",
                ForwardAsks::Object,
            ),
            t(
                "spouse",
                "Who was the spouse of {subject} in {year}?",
                "When were {subject} and {object} married?",
                ForwardAsks::Object,
            ),
            t(
                "employer",
                "{subject} worked for which employer in {year}?",
                "When did {subject} work for {object}?",
                ForwardAsks::Object,
            ),
            t(
                "head_of_government",
                "Who was the head of government of {object} in {year}?",
                "When was {subject} the head of government of {object}?",
                ForwardAsks::Subject,
            ),
        ];
        let mut map = BTreeMap::new();
        for tpl in templates {
            tpl.validate().expect("built-in template is valid");
            map.insert(tpl.relation.clone(), tpl);
        }
        RelationRegistry { templates: map, version: 1 }
    }

    /// Adds or replaces templates from a JSONL file, bumping the version.
    pub fn extend_from_file(&mut self, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut added = 0;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let tpl: RelationTemplate = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{} line {}: {e}", path.display(), idx + 1))
            })?;
            tpl.validate()?;
            self.templates.insert(tpl.relation.clone(), tpl);
            added += 1;
        }
        self.version += 1;
        Ok(added)
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.templates.contains_key(relation)
    }

    pub fn get(&self, relation: &str) -> Option<&RelationTemplate> {
        self.templates.get(relation)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Registry revision, cited in reports.
    pub fn version(&self) -> u32 {
        self.version
    }

    /// Renders the forward question for a fact at a year inside its span.
    ///
    /// Gold is the slot named by `forward_asks`. The question inherits a
    /// trailing year reference.
    pub fn make_forward_question(&self, quad: &TemporalQuadruple, year: i32) -> Result<QaItem> {
        let tpl = self
            .get(&quad.relation)
            .ok_or_else(|| Error::UnknownRelation(quad.relation.clone()))?;
        if !quad.span.contains(year) {
            return Err(Error::YearOutsideSpan {
                year,
                start: quad.span.start_year,
                end: quad.span.end_year,
            });
        }
        let question = render_slots(&tpl.forward_template, quad, Some(year));
        let gold = match tpl.forward_asks {
            ForwardAsks::Subject => quad.subject.clone(),
            ForwardAsks::Object => quad.object.clone(),
        };
        let mut meta = Meta::new();
        meta.insert(META_RELATION.to_owned(), quad.relation.clone());
        meta.insert(META_DERIVED_FROM.to_owned(), quad.id.clone());
        meta.insert(META_ORIG_YEAR.to_owned(), year.to_string());
        Ok(QaItem {
            id: format!("{}#fwd", quad.id),
            question,
            gold_answers: vec![gold],
            source: Source::Synthetic,
            meta,
            year_ref: None,
        }
        .redetect())
    }

    /// Renders the inverse question asking when the fact held.
    ///
    /// Gold is the span rendering; the span itself travels in meta so
    /// interval scoring survives a round trip through JSONL.
    pub fn make_inverse_question(&self, quad: &TemporalQuadruple) -> Result<QaItem> {
        let tpl = self
            .get(&quad.relation)
            .ok_or_else(|| Error::UnknownRelation(quad.relation.clone()))?;
        let question = render_slots(&tpl.inverse_template, quad, None);
        let mut meta = Meta::new();
        meta.insert(META_RELATION.to_owned(), quad.relation.clone());
        meta.insert(META_DERIVED_FROM.to_owned(), quad.id.clone());
        meta.insert(META_SPAN_START.to_owned(), quad.span.start_year.to_string());
        meta.insert(META_SPAN_END.to_owned(), quad.span.end_year.to_string());
        Ok(QaItem {
            id: format!("{}#inv", quad.id),
            question,
            gold_answers: vec![quad.span.render()],
            source: Source::Synthetic,
            meta,
            year_ref: None,
        }
        .redetect())
    }
}

fn render_slots(template: &str, quad: &TemporalQuadruple, year: Option<i32>) -> String {
    let mut out = template.replace("{subject}", &quad.subject).replace("{object}", &quad.object);
    if let Some(y) = year {
        out = out.replace("{year}", &y.to_string());
    }
    out
}

// ---------------------------------------------------------------------------
