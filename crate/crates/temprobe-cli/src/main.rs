//! Command line front end for the temprobe library.
//!
//! One binary, seven subcommands: `ingest` validates datasets, `transform`
//! rewrites a single question, `run` executes the robustness suite against
//! an endpoint, `probe` estimates trust in one answer, `reformulate`
//! rewrites questions into their strongest temporal form (or measures the
//! staged pipeline over a corpus), `mock-serve` hosts the deterministic
//! oracle, and `report` re-renders a summary from a saved report.json.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 endpoint.

use std::env;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use temprobe::corpus::{self, LoadOptions, Manifest, QaItem, Source};
use temprobe::gateway::mock::{self, AnswerKey, MockOracle, MockPolicy};
use temprobe::gateway::{ApiKey, EndpointConfig, Gateway, SystemStyle};
use temprobe::reformulate;
use temprobe::report;
use temprobe::suite::{self, SuiteOptions, SuiteReport, TestKind, TestReport};
use temprobe::transform::{self, RelationRegistry};
use temprobe::trust::{self, TrustModel};
use temprobe::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "temprobe", version, about = "Temporal robustness testing for QA models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, validate and sample the datasets in a manifest
    Ingest(IngestArgs),
    /// Apply one question transformation and print the result
    Transform(TransformArgs),
    /// Run the robustness suite and write a report directory
    Run(RunArgs),
    /// Probe one question for answer consistency and score its trust
    Probe(ProbeArgs),
    /// Rewrite a question into its strongest temporal form
    Reformulate(ReformulateArgs),
    /// Serve the deterministic mock endpoint over HTTP
    MockServe(MockServeArgs),
    /// Re-render the Markdown summary from a saved report.json
    Report(ReportArgs),
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Transform(args) => cmd_transform(args),
        Command::Run(args) => cmd_run(args).await,
        Command::Probe(args) => cmd_probe(args).await,
        Command::Reformulate(args) => cmd_reformulate(args).await,
        Command::MockServe(args) => cmd_mock_serve(args).await,
        Command::Report(args) => cmd_report(args),
    }
}

// ---------------------------------------------------------------------------
// Endpoint settings, shared by run / probe / reformulate
// ---------------------------------------------------------------------------

/// Endpoint half of a run configuration. The API key is never part of this;
/// it comes from TEMPROBE_API_KEY only, so config echoes stay shareable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointSettings {
    /// Base URL up to but excluding /chat/completions.
    #[serde(default)]
    base_url: String,
    #[serde(default)]
    model_name: String,
    #[serde(default = "default_concurrency")]
    max_concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    timeout_secs: u64,
    #[serde(default)]
    temperature: f64,
    #[serde(default = "default_retries")]
    max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    retry_backoff_ms: u64,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    /// Answer with a built-in mock policy instead of HTTP.
    #[serde(default)]
    mock_policy: Option<String>,
    /// Answer key JSONL for mock policies that need one.
    #[serde(default)]
    answer_key: Option<PathBuf>,
}

fn default_concurrency() -> usize {
    8
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    200
}

impl Default for EndpointSettings {
    fn default() -> Self {
        EndpointSettings {
            base_url: String::new(),
            model_name: String::new(),
            max_concurrency: default_concurrency(),
            timeout_secs: default_timeout_secs(),
            temperature: 0.0,
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff_ms(),
            cache_dir: None,
            mock_policy: None,
            answer_key: None,
        }
    }
}

/// Endpoint flags. On `run` they override the config file; elsewhere they
/// are the whole endpoint description.
#[derive(Args, Debug, Clone)]
struct EndpointArgs {
    /// Chat-completions base URL; TEMPROBE_BASE_URL is the fallback
    #[arg(long)]
    base_url: Option<String>,
    /// Model name sent with each request
    #[arg(long)]
    model: Option<String>,
    /// Built-in mock policy instead of HTTP:
    /// answer-key, year-sensitive, fixed:<label> or judge
    #[arg(long)]
    mock: Option<String>,
    /// Answer key JSONL for the mock policies that need one
    #[arg(long)]
    answer_key: Option<PathBuf>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    retry_backoff_ms: Option<u64>,
    /// Cache responses under this directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl EndpointArgs {
    fn merge_into(&self, s: &mut EndpointSettings) {
        if let Some(v) = &self.base_url {
            s.base_url = v.clone();
        } else if s.base_url.is_empty() {
            if let Ok(v) = env::var("TEMPROBE_BASE_URL") {
                s.base_url = v;
            }
        }
        if let Some(v) = &self.model {
            s.model_name = v.clone();
        }
        if let Some(v) = &self.mock {
            s.mock_policy = Some(v.clone());
        }
        if let Some(v) = &self.answer_key {
            s.answer_key = Some(v.clone());
        }
        if let Some(v) = self.max_concurrency {
            s.max_concurrency = v;
        }
        if let Some(v) = self.timeout_secs {
            s.timeout_secs = v;
        }
        if let Some(v) = self.temperature {
            s.temperature = v;
        }
        if let Some(v) = self.max_retries {
            s.max_retries = v;
        }
        if let Some(v) = self.retry_backoff_ms {
            s.retry_backoff_ms = v;
        }
        if let Some(v) = &self.cache_dir {
            s.cache_dir = Some(v.clone());
        }
    }

    fn standalone(&self) -> Result<EndpointSettings> {
        let mut s = EndpointSettings::default();
        self.merge_into(&mut s);
        finalize_endpoint(&mut s)?;
        Ok(s)
    }
}

/// Fills derived fields and rejects unusable endpoint settings.
fn finalize_endpoint(s: &mut EndpointSettings) -> Result<()> {
    if s.mock_policy.is_some() {
        if s.base_url.is_empty() {
            s.base_url = "mock://local".to_owned();
        }
        if s.model_name.is_empty() {
            s.model_name = "mock".to_owned();
        }
        return Ok(());
    }
    if s.base_url.is_empty() {
        return Err(Error::Config(
            "no endpoint: set endpoint.base_url, pass --base-url or TEMPROBE_BASE_URL, \
             or pick a mock policy with --mock"
                .to_owned(),
        ));
    }
    if s.model_name.is_empty() {
        return Err(Error::Config("no model name: set endpoint.model_name or pass --model".to_owned()));
    }
    Ok(())
}

fn oracle_for(policy: MockPolicy, key_path: Option<&Path>) -> Result<MockOracle> {
    let key = match key_path {
        Some(p) => AnswerKey::from_path(p)?,
        None if matches!(policy, MockPolicy::FixedLabel(_)) => AnswerKey::empty(),
        None => {
            return Err(Error::Config(format!(
                "mock policy {policy:?} needs --answer-key (only fixed:<label> runs without one)"
            )))
        }
    };
    Ok(MockOracle::new(policy, key))
}

fn build_gateway(s: &EndpointSettings) -> Result<Gateway> {
    let mut config = EndpointConfig::new(s.base_url.clone(), s.model_name.clone());
    config.max_concurrency = s.max_concurrency;
    config.timeout = Duration::from_secs(s.timeout_secs);
    config.temperature = s.temperature;
    config.max_retries = s.max_retries;
    config.retry_backoff = Duration::from_millis(s.retry_backoff_ms);
    config.cache_dir = s.cache_dir.clone();
    if let Ok(key) = env::var("TEMPROBE_API_KEY") {
        if !key.is_empty() {
            config.api_key = Some(ApiKey::new(key));
        }
    }
    match &s.mock_policy {
        Some(name) => {
            let policy: MockPolicy = name.parse()?;
            let oracle = oracle_for(policy, s.answer_key.as_deref())?;
            Ok(Gateway::with_oracle(config, oracle))
        }
        None => Gateway::new(config),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn parse_style(s: &str) -> Result<SystemStyle> {
    match s {
        "default" => Ok(SystemStyle::Default),
        "historian" => Ok(SystemStyle::Historian),
        "cot" => Ok(SystemStyle::Cot),
        other => Err(Error::Config(format!(
            "unknown system style {other:?}; expected default, historian or cot"
        ))),
    }
}

/// Takes the question from the argument or, when absent, standard input.
fn read_question(arg: Option<String>) -> Result<String> {
    let text = match arg {
        Some(q) => q,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Error::Io { path: PathBuf::from("<stdin>"), source: e })?;
            buf
        }
    };
    let text = text.trim().to_owned();
    if text.is_empty() {
        return Err(Error::Config("no question given (argument or standard input)".to_owned()));
    }
    Ok(text)
}

fn adhoc_item(question: &str) -> QaItem {
    QaItem {
        id: "adhoc".to_owned(),
        question: question.to_owned(),
        gold_answers: Vec::new(),
        source: Source::Synthetic,
        meta: Default::default(),
        year_ref: None,
    }
    .redetect()
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:+.1}%"),
        None => "n/a".to_owned(),
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct IngestArgs {
    /// Manifest (TOML or JSON) listing the datasets
    #[arg(long)]
    manifest: PathBuf,
    /// Seed for downsampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reject events dated before this year
    #[arg(long)]
    event_year_min: Option<i32>,
    /// Reject events dated after this year
    #[arg(long)]
    event_year_max: Option<i32>,
    /// Print the per-file stats as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let registry = RelationRegistry::builtin();
    let mut opts = LoadOptions::default();
    if let Some(y) = args.event_year_min {
        opts.event_year_range.0 = y;
    }
    if let Some(y) = args.event_year_max {
        opts.event_year_range.1 = y;
    }
    let (corpora, stats) = corpus::ingest(&args.manifest, &manifest, &registry, &opts, args.seed)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
        return Ok(());
    }
    for s in &stats {
        let mut line = format!(
            "{}: {:?} loaded {}, rejected {}",
            s.path.display(),
            s.kind,
            s.loaded,
            s.rejected
        );
        if s.filtered_out > 0 {
            line.push_str(&format!(", filtered out {}", s.filtered_out));
        }
        if let Some(n) = s.sampled_to {
            line.push_str(&format!(", sampled to {n}"));
        }
        println!("{line}");
    }
    println!(
        "usable records: {} qa, {} quads, {} events, {} claims",
        corpora.qa.len(),
        corpora.quads.len(),
        corpora.events.len(),
        corpora.claims.len()
    );
    let rejected: usize = stats.iter().map(|s| s.rejected).sum();
    if rejected > 0 {
        eprintln!("warning: {rejected} lines quarantined; see the .rejects.jsonl sidecars");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransformOp {
    /// "... in 2006?" -> "... 17 years ago?" (needs --now-year)
    Relativize,
    /// "... 17 years ago?" -> "... in 2006?" (needs --now-year)
    Absolutize,
    /// "... in 2006?" -> "...?"
    Remove,
    /// "... in 2006?" -> "In 2006, ...?"
    Front,
    /// Replace the year with one k years away (needs --k)
    Shift,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long, value_enum)]
    op: TransformOp,
    /// Question to transform; read from standard input when omitted
    question: Option<String>,
    /// The year "now" refers to
    #[arg(long)]
    now_year: Option<i32>,
    /// Year offset for --op shift
    #[arg(long)]
    k: Option<u32>,
    /// Seed deciding the shift direction
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the full transformed record as JSON
    #[arg(long)]
    json: bool,
}

fn cmd_transform(args: TransformArgs) -> Result<()> {
    let question = read_question(args.question)?;
    let item = adhoc_item(&question);
    let need_year = |op: &str| {
        args.now_year.ok_or_else(|| Error::Config(format!("--op {op} needs --now-year")))
    };
    let out = match args.op {
        TransformOp::Relativize => transform::relativize(&item, need_year("relativize")?)?,
        TransformOp::Absolutize => transform::absolutize(&item, need_year("absolutize")?)?,
        TransformOp::Remove => transform::remove_time(&item)?,
        TransformOp::Front => transform::move_time_to_front(&item)?,
        TransformOp::Shift => {
            let k = args.k.ok_or_else(|| Error::Config("--op shift needs --k".to_owned()))?;
            transform::shift_year(&item, k, args.seed)?
        }
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&out).expect("item serializes"));
    } else {
        println!("{}", out.question);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// A full run configuration. Loadable from one TOML file; every field can
/// be overridden by a flag; the resolved form is echoed into the run
/// directory as run_config.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    endpoint: EndpointSettings,
    manifest: PathBuf,
    /// Subset of tests to run; empty means all eight.
    #[serde(default)]
    tests: Vec<String>,
    now_year: i32,
    #[serde(default)]
    seed: u64,
    out_dir: PathBuf,
    #[serde(default = "default_style")]
    system_style: String,
    #[serde(default = "default_shift_ks")]
    shift_ks: Vec<u32>,
    #[serde(default = "default_ordering_distances")]
    ordering_distances: Vec<u32>,
    #[serde(default = "default_pairs_per_distance")]
    pairs_per_distance: usize,
}

fn default_style() -> String {
    "default".to_owned()
}
fn default_shift_ks() -> Vec<u32> {
    vec![0, 1, 5, 10]
}
fn default_ordering_distances() -> Vec<u32> {
    vec![0, 1, 5, 10, 30, 100]
}
fn default_pairs_per_distance() -> usize {
    50
}

impl RunConfig {
    fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn suite_options(&self) -> Result<SuiteOptions> {
        let mut opts = SuiteOptions::new(self.now_year, self.seed);
        if !self.tests.is_empty() {
            opts.tests = self.tests.iter().map(|t| t.parse()).collect::<Result<Vec<TestKind>>>()?;
        }
        opts.system_style = parse_style(&self.system_style)?;
        opts.shift_ks = self.shift_ks.clone();
        opts.ordering_distances = self.ordering_distances.clone();
        opts.pairs_per_distance = self.pairs_per_distance;
        Ok(opts)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (TOML); flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Dataset manifest
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated subset of tests, e.g. removal,positioning
    #[arg(long = "test", value_delimiter = ',')]
    tests: Vec<String>,
    /// The year "now" refers to
    #[arg(long)]
    now_year: Option<i32>,
    /// Top-level seed; all randomness flows from it
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for reports and logs
    #[arg(long)]
    out: Option<PathBuf>,
    /// System prompt persona: default, historian or cot
    #[arg(long)]
    style: Option<String>,
    /// Comma-separated year offsets for the shift test
    #[arg(long, value_delimiter = ',')]
    shift_ks: Vec<u32>,
    /// Comma-separated year gaps for the ordering test
    #[arg(long, value_delimiter = ',')]
    ordering_distances: Vec<u32>,
    /// Pair budget per ordering distance
    #[arg(long)]
    pairs_per_distance: Option<usize>,
}

fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            endpoint: EndpointSettings::default(),
            manifest: PathBuf::new(),
            tests: Vec::new(),
            now_year: 0,
            seed: 0,
            out_dir: PathBuf::new(),
            system_style: default_style(),
            shift_ks: default_shift_ks(),
            ordering_distances: default_ordering_distances(),
            pairs_per_distance: default_pairs_per_distance(),
        },
    };
    args.endpoint.merge_into(&mut config.endpoint);
    if let Some(v) = &args.manifest {
        config.manifest = v.clone();
    }
    if !args.tests.is_empty() {
        config.tests = args.tests.clone();
    }
    if let Some(v) = args.now_year {
        config.now_year = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.out {
        config.out_dir = v.clone();
    }
    if let Some(v) = &args.style {
        config.system_style = v.clone();
    }
    if !args.shift_ks.is_empty() {
        config.shift_ks = args.shift_ks.clone();
    }
    if !args.ordering_distances.is_empty() {
        config.ordering_distances = args.ordering_distances.clone();
    }
    if let Some(v) = args.pairs_per_distance {
        config.pairs_per_distance = v;
    }

    finalize_endpoint(&mut config.endpoint)?;
    if config.manifest.as_os_str().is_empty() {
        return Err(Error::Config("no dataset manifest: set manifest or pass --manifest".to_owned()));
    }
    if config.out_dir.as_os_str().is_empty() {
        return Err(Error::Config("no run directory: set out_dir or pass --out".to_owned()));
    }
    if !(temprobe::YEAR_MIN..=temprobe::YEAR_MAX).contains(&config.now_year) {
        return Err(Error::Config(format!(
            "now_year {} outside {}..={} (set now_year or pass --now-year)",
            config.now_year,
            temprobe::YEAR_MIN,
            temprobe::YEAR_MAX
        )));
    }
    Ok(config)
}

fn headline(name: &str, tr: &TestReport) -> String {
    match tr {
        TestReport::Paraphrase(s) => format!(
            "{name}: base {:.1}%, transformed {:.1}%, intersection {:.1}%, diff {} ({} items, {} skipped)",
            s.base_pct,
            s.transformed_pct,
            s.intersection_pct,
            fmt_opt_pct(s.diff_pct),
            s.items,
            s.skipped
        ),
        TestReport::Positioning(s) => format!(
            "{name}: base {:.1}%, fronted {:.1}%, diff {} ({} items, {} skipped)",
            s.base_pct,
            s.fronted_pct,
            fmt_opt_pct(s.diff_pct),
            s.items,
            s.skipped
        ),
        TestReport::Shift(s) => {
            let points: Vec<String> =
                s.scores.iter().map(|p| format!("k={} {:.1}%", p.k, p.score_pct)).collect();
            format!(
                "{name}: {}, diff {} ({} items, {} skipped)",
                points.join(", "),
                fmt_opt_pct(s.diff_pct),
                s.items,
                s.skipped
            )
        }
        TestReport::Reversal(s) => format!(
            "{name}: forward {:.1}%, inverse {:.1}%, both {:.1}%, diff {} ({} items, {} skipped)",
            s.forward_pct,
            s.inverse_pct,
            s.both_pct,
            fmt_opt_pct(s.diff_pct),
            s.items,
            s.skipped
        ),
        TestReport::Fact(s) => format!(
            "{name}: accuracy {:.1}%, abstain {:.1}% ({} items)",
            s.accuracy_pct, s.abstain_pct, s.items
        ),
        TestReport::Dating(s) => {
            let points: Vec<String> =
                s.scores_pct.iter().map(|(g, v)| format!("{g} {v:.1}%")).collect();
            format!(
                "{name}: {}, year-to-day diff {}",
                points.join(", "),
                fmt_opt_pct(s.diff_pct_year_to_day)
            )
        }
        TestReport::Ordering(s) => {
            let points: Vec<String> = s
                .per_distance
                .iter()
                .map(|p| match p.score_pct {
                    Some(v) => format!("d={} {v:.1}%", p.distance),
                    None => format!("d={} n/a", p.distance),
                })
                .collect();
            format!(
                "{name}: {}, near-to-far diff {}",
                points.join(", "),
                fmt_opt_pct(s.diff_pct_near_to_far)
            )
        }
    }
}

async fn cmd_run(args: RunArgs) -> Result<()> {
    let config = resolve_run_config(&args)?;
    let opts = config.suite_options()?;

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::Io { path: config.out_dir.clone(), source: e })?;
    write_json_file(&config.out_dir.join("run_config.json"), &config)?;

    let manifest = Manifest::load(&config.manifest)?;
    let registry = RelationRegistry::builtin();
    let (corpora, stats) =
        corpus::ingest(&config.manifest, &manifest, &registry, &LoadOptions::default(), config.seed)?;
    for s in &stats {
        println!(
            "loaded {}: {} records ({} rejected)",
            s.path.display(),
            s.loaded - s.rejected.min(s.loaded),
            s.rejected
        );
    }

    let gateway = build_gateway(&config.endpoint)?;
    gateway.log_requests_to(&config.out_dir.join("requests.jsonl"))?;
    println!("running against {} ...", gateway.model_name());

    let outcome = suite::run_suite(&gateway, &corpora, &registry, &opts).await?;
    let written = report::write_run_artifacts(&config.out_dir, &outcome)?;

    println!();
    for (name, tr) in &outcome.report.tests {
        println!("{}", headline(name, tr));
    }
    println!();
    for path in &written {
        println!("wrote {}", path.display());
    }
    let rejected: usize = stats.iter().map(|s| s.rejected).sum();
    if rejected > 0 {
        eprintln!("warning: {rejected} input lines quarantined; see the .rejects.jsonl sidecars");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct ProbeArgs {
    /// Question to probe; must end with a year reference
    question: Option<String>,
    /// Candidate answer to vet; when omitted the model's own answer is probed
    #[arg(long)]
    answer: Option<String>,
    /// Trained trust model JSON (from fit_trust_model)
    #[arg(long, conflicts_with = "untrained")]
    trust_model: Option<PathBuf>,
    /// Print the raw consistency vector without scoring it
    #[arg(long)]
    untrained: bool,
    #[arg(long)]
    now_year: i32,
    /// System prompt persona: default, historian or cot
    #[arg(long, default_value = "default")]
    style: String,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Print the full probe as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct ProbeOutput<'a> {
    #[serde(flatten)]
    probe: &'a trust::ConsistencyProbe,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trusted: Option<bool>,
}

async fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let model = match (&args.trust_model, args.untrained) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io { path: path.clone(), source: e })?;
            Some(TrustModel::from_json(&text)?)
        }
        (None, true) => None,
        (None, false) => {
            return Err(Error::Config(
                "pass --trust-model <file> to score the probe, or --untrained for the raw vector"
                    .to_owned(),
            ))
        }
    };
    let question = read_question(args.question)?;
    let style = parse_style(&args.style)?;
    let item = adhoc_item(&question);
    let gateway = build_gateway(&args.endpoint.standalone()?)?;
    let probe =
        trust::probe_with_answer(&gateway, &item, args.answer.as_deref(), args.now_year, style)
            .await?;

    let (score, trusted) = match &model {
        Some(m) => (Some(m.score(&probe.vector)?), Some(m.predict_correct(&probe.vector)?)),
        None => (None, None),
    };
    if args.json {
        let out = ProbeOutput { probe: &probe, score, trusted };
        println!("{}", serde_json::to_string_pretty(&out).expect("probe serializes"));
        return Ok(());
    }

    println!("question:    {}", probe.question);
    println!("answer:      {}", probe.answers.original);
    println!();
    let none = "(not asked)".to_owned();
    let probes = [
        ("relativized", &probe.probes.relativized, &probe.answers.relativized, probe.vector.relativized),
        ("removed", &probe.probes.removed, &probe.answers.removed, probe.vector.removed),
        ("fronted", &probe.probes.fronted, &probe.answers.fronted, probe.vector.fronted),
        ("reversal", &probe.probes.reversal, &probe.answers.reversal, probe.vector.reversal),
    ];
    for (name, q, a, c) in probes {
        println!("{name:>12}: {}", q.as_ref().unwrap_or(&none));
        println!("{:>12}  -> {}", "", a.as_deref().unwrap_or("(no answer)"));
        match c {
            Some(c) => println!("{:>12}  agreement {c:.0}", ""),
            None => println!("{:>12}  agreement unknown", ""),
        }
    }
    println!();
    let vec_str: Vec<String> = probe
        .vector
        .components()
        .iter()
        .map(|c| match c {
            Some(v) => format!("{v:.0}"),
            None => "-".to_owned(),
        })
        .collect();
    println!("consistency vector: [{}]", vec_str.join(", "));
    match (score, trusted) {
        (Some(score), Some(trusted)) => {
            println!("trust score: {score:.3}");
            println!("verdict: {}", if trusted { "high trust" } else { "low trust" });
        }
        _ => println!("verdict: untrained (raw vector only)"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reformulate
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct ReformulateArgs {
    /// Question to rewrite; read from standard input when omitted
    question: Option<String>,
    #[arg(long)]
    now_year: i32,
    /// Measure the staged pipeline over the configured corpus instead
    #[arg(long, requires = "config")]
    pipeline: bool,
    /// Run configuration (TOML) for --pipeline
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Print results as JSON
    #[arg(long)]
    json: bool,
}

async fn cmd_reformulate(args: ReformulateArgs) -> Result<()> {
    if args.pipeline {
        return cmd_reformulate_pipeline(args).await;
    }
    let question = read_question(args.question)?;
    let rec = reformulate::recommend(&question, args.now_year)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rec).expect("recommendation serializes"));
        return Ok(());
    }
    println!("{}", rec.question);
    for edit in &rec.edits {
        eprintln!("edit: {edit}");
    }
    if let Some(advisory) = &rec.advisory {
        eprintln!("advisory: {advisory}");
    }
    Ok(())
}

fn pipeline_summary_md(report: &reformulate::PipelineReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Reformulation pipeline: {}\n\n", report.model_name));
    out.push_str(&format!("{} questions ({} skipped), now_year {}.\n\n", report.items, report.skipped, report.now_year));
    out.push_str("| Stage | Score % | Gain % |\n|---|---|---|\n");
    for (i, stage) in report.stages.iter().enumerate() {
        let gain = if i == 0 {
            String::new()
        } else {
            fmt_opt_pct(report.gains[i - 1].gain_pct)
        };
        out.push_str(&format!("| {} | {:.1} | {} |\n", stage.stage, stage.score_pct, gain));
    }
    out.push_str(&format!(
        "\nCumulative gain, first stage to last: {}.\n",
        fmt_opt_pct(report.cumulative_gain_pct)
    ));
    out
}

async fn cmd_reformulate_pipeline(args: ReformulateArgs) -> Result<()> {
    let run_args = RunArgs {
        config: args.config.clone(),
        endpoint: args.endpoint.clone(),
        manifest: None,
        tests: Vec::new(),
        now_year: Some(args.now_year),
        seed: None,
        out: None,
        style: None,
        shift_ks: Vec::new(),
        ordering_distances: Vec::new(),
        pairs_per_distance: None,
    };
    let config = resolve_run_config(&run_args)?;
    let style = parse_style(&config.system_style)?;

    let manifest = Manifest::load(&config.manifest)?;
    let registry = RelationRegistry::builtin();
    let (corpora, _) =
        corpus::ingest(&config.manifest, &manifest, &registry, &LoadOptions::default(), config.seed)?;

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::Io { path: config.out_dir.clone(), source: e })?;
    let gateway = build_gateway(&config.endpoint)?;
    gateway.log_requests_to(&config.out_dir.join("requests.jsonl"))?;

    let outcome = reformulate::run_pipeline(&gateway, &corpora.qa, config.now_year, style).await?;
    write_json_file(&config.out_dir.join("pipeline_report.json"), &outcome.report)?;
    let summary = pipeline_summary_md(&outcome.report);
    let summary_path = config.out_dir.join("pipeline_summary.md");
    fs::write(&summary_path, &summary)
        .map_err(|e| Error::Io { path: summary_path.clone(), source: e })?;
    let rows = std::collections::BTreeMap::from([("reformulation".to_owned(), outcome.rows)]);
    report::write_rows_csv(&config.out_dir.join("rows"), &rows)?;

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&outcome.report).expect("pipeline report serializes")
        );
    } else {
        print!("{summary}");
        println!("\nwrote {}", config.out_dir.join("pipeline_report.json").display());
        println!("wrote {}", summary_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mock-serve
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct MockServeArgs {
    /// answer-key, year-sensitive, fixed:<label> or judge
    #[arg(long)]
    policy: String,
    /// Answer key JSONL (required for every policy except fixed:<label>)
    #[arg(long)]
    answer_key: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to listen on; 0 picks a free one
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

async fn cmd_mock_serve(args: MockServeArgs) -> Result<()> {
    let policy: MockPolicy = args.policy.parse()?;
    let oracle = oracle_for(policy, args.answer_key.as_deref())?;
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {}:{}: {e}", args.host, args.port)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Config(format!("cannot resolve listener address: {e}")))?;
    println!("mock endpoint at http://{addr}/v1 (policy {})", args.policy);
    mock::serve(oracle, listener)
        .await
        .map_err(|e| Error::Transport(format!("mock server stopped: {e}")))
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json file or a run directory containing one
    #[arg(long)]
    from: PathBuf,
    /// Write the Markdown here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let path = if args.from.is_dir() { args.from.join("report.json") } else { args.from.clone() };
    let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let report: SuiteReport = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: not a suite report: {e}", path.display())))?;
    let md = report::render_summary_md(&report);
    match &args.out {
        Some(out) => fs::write(out, md).map_err(|e| Error::Io { path: out.clone(), source: e }),
        None => {
            print!("{md}");
            Ok(())
        }
    }
}
