//! Record types and corpus handling.
//!
//! Four record kinds flow through the suite: plain QA items, temporal fact
//! quadruples, dated events, and labeled claims. All four are stored as JSONL,
//! one record per line. Loading never aborts on a bad line: malformed or
//! invalid lines are quarantined with their line number and reason so a run
//! can report exactly what it skipped, and only an entirely unusable file is
//! an error.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{self, RelationRegistry, YearReference};
use crate::{YEAR_MAX, YEAR_MIN};

// ---------------------------------------------------------------------------
// Record types
// ---------------------------------------------------------------------------

/// Provenance of a QA item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ArchivalQa,
    Wikidata,
    TemporalQuestions,
    Synthetic,
}

/// Free-form string metadata attached to a QA item.
///
/// Transformations record their tracks here (`transform`, `derived_from`,
/// `orig_year`, ...). Values are strings even for numbers, which keeps the
/// wire format uniform.
pub type Meta = std::collections::BTreeMap<String, String>;

/// A question with its accepted gold answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Meta::is_empty")]
    pub meta: Meta,
    /// Detected year reference, if any. Derived from the question text at
    /// load time, never serialized.
    #[serde(skip)]
    pub year_ref: Option<YearReference>,
}

impl QaItem {
    /// Re-runs year detection on the current question text.
    pub fn redetect(mut self) -> Self {
        self.year_ref = transform::detect_year_reference(&self.question);
        self
    }
}

/// Inclusive year span during which a fact held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearSpan {
    pub start_year: i32,
    pub end_year: i32,
}

impl YearSpan {
    pub fn contains(&self, year: i32) -> bool {
        self.start_year <= year && year <= self.end_year
    }

    /// Gold-answer rendering: "1999" for a point fact, "1999-2003" otherwise.
    pub fn render(&self) -> String {
        if self.start_year == self.end_year {
            self.start_year.to_string()
        } else {
            format!("{}-{}", self.start_year, self.end_year)
        }
    }
}

/// A (subject, relation, object) fact with the years it held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalQuadruple {
    pub id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(flatten)]
    pub span: YearSpan,
}

/// Calendar date of an event; month and day may be unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDate {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u32>,
}

/// A dated event description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub description: String,
    #[serde(flatten)]
    pub date: EventDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_year_page: Option<i32>,
}

impl EventRecord {
    /// Year page the event was collected from; defaults to the event year.
    pub fn source_page(&self) -> i32 {
        self.source_year_page.unwrap_or(self.date.year)
    }
}

/// Gold label of a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClaimLabel {
    True,
    False,
    Conflicting,
}

impl ClaimLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClaimLabel::True => "True",
            ClaimLabel::False => "False",
            ClaimLabel::Conflicting => "Conflicting",
        }
    }
}

impl fmt::Display for ClaimLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A claim to be verified against world knowledge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub claim: String,
    pub gold_label: ClaimLabel,
}

/// The four dataset kinds a manifest can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Qa,
    Quad,
    Event,
    Claim,
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// A line that failed to load, with enough context to audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

/// Knobs for record validation at load time.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Events dated outside this inclusive range are rejected.
    pub event_year_range: (i32, i32),
}

impl Default for LoadOptions {
    fn default() -> Self {
        // Wikipedia year pages get sparse before 1750; the upper bound keeps
        // events answerable from a 2023-era training cut.
        LoadOptions { event_year_range: (1750, 2023) }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Loads and validates one JSONL dataset, quarantining bad lines.
///
/// `f` parses and validates a single line; `seen` enforces unique ids.
fn load_filtered<T>(
    path: &Path,
    mut f: impl FnMut(&str) -> std::result::Result<(String, T), String>,
) -> Result<(Vec<T>, Vec<RejectedLine>)> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match f(line) {
            Ok((id, rec)) => {
                if seen.insert(id.clone()) {
                    records.push(rec);
                } else {
                    rejects.push(RejectedLine {
                        line: idx + 1,
                        reason: format!("duplicate id {id:?}"),
                        raw: line.clone(),
                    });
                }
            }
            Err(reason) => {
                rejects.push(RejectedLine { line: idx + 1, reason, raw: line.clone() })
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset { path: path.to_owned() });
    }
    Ok((records, rejects))
}

fn require(cond: bool, msg: &str) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_owned())
    }
}

pub fn load_qa(path: &Path) -> Result<(Vec<QaItem>, Vec<RejectedLine>)> {
    load_filtered(path, |line| {
        let item: QaItem = serde_json::from_str(line).map_err(|e| e.to_string())?;
        require(!item.id.trim().is_empty(), "empty id")?;
        require(!item.question.trim().is_empty(), "empty question")?;
        require(!item.gold_answers.is_empty(), "no gold answers")?;
        require(
            item.gold_answers.iter().all(|a| !a.trim().is_empty()),
            "blank gold answer",
        )?;
        Ok((item.id.clone(), item.redetect()))
    })
}

pub fn load_quads(
    path: &Path,
    registry: &RelationRegistry,
) -> Result<(Vec<TemporalQuadruple>, Vec<RejectedLine>)> {
    load_filtered(path, |line| {
        let q: TemporalQuadruple = serde_json::from_str(line).map_err(|e| e.to_string())?;
        require(!q.id.trim().is_empty(), "empty id")?;
        require(!q.subject.trim().is_empty(), "empty subject")?;
        require(!q.object.trim().is_empty(), "empty object")?;
        require(
            q.span.start_year <= q.span.end_year,
            &format!("start_year {} after end_year {}", q.span.start_year, q.span.end_year),
        )?;
        require(
            q.span.start_year >= YEAR_MIN && q.span.end_year <= YEAR_MAX,
            &format!("span outside supported years [{YEAR_MIN}, {YEAR_MAX}]"),
        )?;
        if !registry.contains(&q.relation) {
            return Err(format!("unknown relation {:?}", q.relation));
        }
        Ok((q.id.clone(), q))
    })
}

pub fn load_events(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(Vec<EventRecord>, Vec<RejectedLine>)> {
    let (lo, hi) = opts.event_year_range;
    load_filtered(path, |line| {
        let e: EventRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        require(!e.id.trim().is_empty(), "empty id")?;
        require(!e.description.trim().is_empty(), "empty description")?;
        require(
            e.date.year >= lo && e.date.year <= hi,
            &format!("year {} outside [{lo}, {hi}]", e.date.year),
        )?;
        if e.date.day.is_some() && e.date.month.is_none() {
            return Err("day given without month".to_owned());
        }
        if let Some(m) = e.date.month {
            require((1..=12).contains(&m), &format!("month {m} out of range"))?;
            if let Some(d) = e.date.day {
                require(
                    d >= 1 && d <= crate::metrics::days_in_month(e.date.year, m),
                    &format!("day {d} invalid for {}-{m:02}", e.date.year),
                )?;
            }
        }
        // A year inside the description would let a model date the event by
        // quoting it back, so such events measure nothing.
        if let Some(tok) = transform::year_tokens(&e.description).first() {
            return Err(format!("description leaks year token {}", tok.year));
        }
        Ok((e.id.clone(), e))
    })
}

pub fn load_claims(path: &Path) -> Result<(Vec<ClaimRecord>, Vec<RejectedLine>)> {
    load_filtered(path, |line| {
        let c: ClaimRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        require(!c.id.trim().is_empty(), "empty id")?;
        require(!c.claim.trim().is_empty(), "empty claim")?;
        Ok((c.id.clone(), c))
    })
}

// ---------------------------------------------------------------------------
// Filtering and sampling
// ---------------------------------------------------------------------------

/// Result of [`filter_year_ending`].
#[derive(Debug, Clone)]
pub struct YearEndingFilter {
    pub kept: Vec<QaItem>,
    pub dropped: usize,
}

/// Keeps only questions that end with a year reference, normalizing
/// "in the year YYYY?" to "in YYYY?".
///
/// Kept items get `year_ref` populated. Normalization is recorded under the
/// `normalized_year_phrase` meta key, and questions that still contain other
/// year tokens are flagged `multi_year` so diff statistics can exclude them.
pub fn filter_year_ending(items: impl IntoIterator<Item = QaItem>) -> YearEndingFilter {
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for item in items {
        match transform::normalize_trailing_year(item) {
            Some(item) => kept.push(item),
            None => dropped += 1,
        }
    }
    YearEndingFilter { kept, dropped }
}

/// Draws `n` records without replacement, deterministically for a fixed seed.
///
/// The output preserves the input's relative order, so sampling is stable
/// under re-serialization.
pub fn sample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::SampleTooLarge { requested: n, population: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec).expect("record serializes");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_qa(path: &Path, items: &[QaItem]) -> Result<()> {
    write_jsonl(path, items)
}

pub fn write_quads(path: &Path, quads: &[TemporalQuadruple]) -> Result<()> {
    write_jsonl(path, quads)
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    write_jsonl(path, events)
}

pub fn write_claims(path: &Path, claims: &[ClaimRecord]) -> Result<()> {
    write_jsonl(path, claims)
}

/// Writes the quarantine sidecar next to a processed dataset.
pub fn write_rejects(path: &Path, rejects: &[RejectedLine]) -> Result<()> {
    write_jsonl(path, rejects)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// One dataset reference inside a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: DatasetKind,
    pub path: PathBuf,
    /// Apply [`filter_year_ending`] after loading (QA only).
    #[serde(default)]
    pub year_ending_filter: bool,
    /// Downsample to this many records after filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
}

/// Declares which files make up a run's corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: Vec<ManifestEntry>,
}

impl Manifest {
    /// Reads a manifest from TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        if manifest.dataset.is_empty() {
            return Err(Error::Config(format!("{}: manifest lists no datasets", path.display())));
        }
        Ok(manifest)
    }
}

/// Everything a suite run consumes, grouped by record kind.
#[derive(Debug, Clone, Default)]
pub struct Corpora {
    pub qa: Vec<QaItem>,
    pub quads: Vec<TemporalQuadruple>,
    pub events: Vec<EventRecord>,
    pub claims: Vec<ClaimRecord>,
}

/// Per-file outcome of an ingest, for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct IngestStats {
    pub path: PathBuf,
    pub kind: DatasetKind,
    pub loaded: usize,
    pub rejected: usize,
    pub filtered_out: usize,
    pub sampled_to: Option<usize>,
}

/// Loads every dataset in a manifest, applying its filter and sample settings.
///
/// Paths are resolved relative to the manifest file. Rejected lines are
/// written to a `<name>.rejects.jsonl` sidecar next to each input.
pub fn ingest(
    manifest_path: &Path,
    manifest: &Manifest,
    registry: &RelationRegistry,
    opts: &LoadOptions,
    seed: u64,
) -> Result<(Corpora, Vec<IngestStats>)> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut corpora = Corpora::default();
    let mut stats = Vec::new();
    for entry in &manifest.dataset {
        let path = base.join(&entry.path);
        let mut stat = IngestStats {
            path: path.clone(),
            kind: entry.kind,
            loaded: 0,
            rejected: 0,
            filtered_out: 0,
            sampled_to: entry.sample,
        };
        let rejects = match entry.kind {
            DatasetKind::Qa => {
                let (items, rejects) = load_qa(&path)?;
                stat.loaded = items.len();
                let items = if entry.year_ending_filter {
                    let filtered = filter_year_ending(items);
                    stat.filtered_out = filtered.dropped;
                    filtered.kept
                } else {
                    items
                };
                corpora.qa = match entry.sample {
                    Some(n) => sample(&items, n, seed)?,
                    None => items,
                };
                rejects
            }
            DatasetKind::Quad => {
                let (quads, rejects) = load_quads(&path, registry)?;
                stat.loaded = quads.len();
                corpora.quads = match entry.sample {
                    Some(n) => sample(&quads, n, seed)?,
                    None => quads,
                };
                rejects
            }
            DatasetKind::Event => {
                let (events, rejects) = load_events(&path, opts)?;
                stat.loaded = events.len();
                corpora.events = match entry.sample {
                    Some(n) => sample(&events, n, seed)?,
                    None => events,
                };
                rejects
            }
            DatasetKind::Claim => {
                let (claims, rejects) = load_claims(&path)?;
                stat.loaded = claims.len();
                corpora.claims = match entry.sample {
                    Some(n) => sample(&claims, n, seed)?,
                    None => claims,
                };
                rejects
            }
        };
        stat.rejected = rejects.len();
        if !rejects.is_empty() {
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".rejects.jsonl");
            write_rejects(Path::new(&sidecar), &rejects)?;
        }
        stats.push(stat);
    }
    Ok((corpora, stats))
}

/// Appends JSONL lines to a writer, used by audit logs.
pub fn append_jsonl<T: Serialize, W: Write>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}
