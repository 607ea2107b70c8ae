//! Evaluation orchestration: image acquisition from a provider, batch
//! scoring against a manifest, per-variation aggregates, repeated-sample
//! statistics, reports and the diagnostic probe families.
//!
//! Images are fetched and scored inside one bounded worker pool, so only
//! the per-sample reports are kept in memory. Results are merged in
//! `(sample id, repeat)` order, which makes every aggregate independent of
//! scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use image::imageops::FilterType;
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::color::{parse_hex, Rgb8};
use crate::dataset::{ColorSpace, Language, SampleManifestEntry};
use crate::palette::ColorLevel;
use crate::precision::{
    normalize_and_aggregate, representative_color, MetricError, NormalizationConstants, PrecisionReport,
    PrecisionValues,
};
use crate::purity::PurityValues;
use crate::region::{
    evaluate_sample, measure_split_ratio, Axis, ColorTarget, EvalConfig, HSide, Rect, RegionGeometry, RegionSpec,
    SampleReport, SplitMeasurement,
};

/// Column names of the aggregate tables, in order.
pub const REPORT_COLUMNS: [&str; 11] = [
    "rgb-ed", "rgb-rm", "lab-00", "lab-hue", "lab-hyab", "lab-ch", "pre-mean", "sd", "ced", "hf", "pur-mean",
];

pub const DEFAULT_TOKEN_ENV: &str = "VIOLIN_PROVIDER_TOKEN";

// ---------------------------------------------------------------------------
// Providers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Filesystem,
    Http,
}

/// Where images come from and how hard to try.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Directory holding `{id}.png` (or `{id}__{k}.png` with repeats).
    pub root: Option<PathBuf>,
    /// Endpoint receiving one POST per image.
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    /// Bound on in-flight fetches and evaluations.
    pub parallelism: usize,
    /// Total attempts per http request.
    pub attempts: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
    /// Environment variable holding a bearer token, if any.
    pub token_env: String,
    /// Images per prompt.
    pub repeats: u32,
    /// Downscale images whose size differs from the manifest resolution
    /// instead of rejecting them. Resized samples are flagged.
    pub resize: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Filesystem,
            root: None,
            endpoint: None,
            timeout_secs: 60.0,
            parallelism: 4,
            attempts: 3,
            backoff_ms: 250,
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            repeats: 1,
            resize: false,
        }
    }
}

impl ProviderConfig {
    pub fn filesystem(root: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Filesystem,
            root: Some(root.into()),
            ..ProviderConfig::default()
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            ..ProviderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        match (self.kind, &self.root, &self.endpoint) {
            (ProviderKind::Filesystem, Some(_), None) | (ProviderKind::Http, None, Some(_)) => {}
            (ProviderKind::Filesystem, _, _) => return bad("filesystem provider needs `root` and no `endpoint`"),
            (ProviderKind::Http, _, _) => return bad("http provider needs `endpoint` and no `root`"),
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1");
        }
        if self.attempts < 1 {
            return bad("attempts must be at least 1");
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        Ok(())
    }

    /// Builds the image source this config describes.
    pub fn build(&self) -> Result<Box<dyn ImageSource>, HarnessError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Filesystem => {
                let root = self.root.clone().expect("validated");
                if !root.is_dir() {
                    return Err(HarnessError::Config(format!(
                        "image root {} is not a directory",
                        root.display()
                    )));
                }
                Ok(Box::new(FilesystemSource {
                    root,
                    repeats: self.repeats,
                }))
            }
            ProviderKind::Http => Ok(Box::new(HttpSource::new(self)?)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    MissingFile,
    Timeout,
    DecodeFailure,
    WrongDimensions,
    RetryExhausted,
    RequestFailed,
    EvaluationFailed,
}

/// A per-sample problem. Recorded in the run, never fatal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub repeat: u32,
    pub kind: FailureKind,
    pub detail: String,
}

/// Produces the model's image for one manifest entry and repeat index.
pub trait ImageSource: Sync {
    fn fetch(&self, entry: &SampleManifestEntry, repeat: u32) -> Result<RgbImage, (FailureKind, String)>;
}

/// Any `Fn(entry, repeat)` is a source; handy for oracles and tests.
impl<F> ImageSource for F
where
    F: Fn(&SampleManifestEntry, u32) -> Result<RgbImage, (FailureKind, String)> + Sync,
{
    fn fetch(&self, entry: &SampleManifestEntry, repeat: u32) -> Result<RgbImage, (FailureKind, String)> {
        self(entry, repeat)
    }
}

pub struct FilesystemSource {
    pub root: PathBuf,
    pub repeats: u32,
}

impl FilesystemSource {
    pub fn path_for(&self, id: &str, repeat: u32) -> PathBuf {
        if self.repeats > 1 {
            self.root.join(format!("{id}__{repeat}.png"))
        } else {
            self.root.join(format!("{id}.png"))
        }
    }
}

impl ImageSource for FilesystemSource {
    fn fetch(&self, entry: &SampleManifestEntry, repeat: u32) -> Result<RgbImage, (FailureKind, String)> {
        let path = self.path_for(&entry.id, repeat);
        let bytes = fs::read(&path).map_err(|e| {
            let kind = if e.kind() == std::io::ErrorKind::NotFound {
                FailureKind::MissingFile
            } else {
                FailureKind::RequestFailed
            };
            (kind, format!("{}: {e}", path.display()))
        })?;
        decode(&bytes)
    }
}

fn decode(bytes: &[u8]) -> Result<RgbImage, (FailureKind, String)> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| (FailureKind::DecodeFailure, e.to_string()))
}

/// Request body of the http provider.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub id: String,
    pub prompt: String,
    pub width: u32,
    pub height: u32,
}

/// POSTs [`GenerationRequest`] JSON and expects encoded image bytes back.
/// Server errors, 429 and transport failures are retried with exponential
/// backoff until the attempt budget runs out.
pub struct HttpSource {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    attempts: u32,
    backoff: Duration,
}

impl HttpSource {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, HarnessError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| HarnessError::Config(format!("http client: {e}")))?;
        Ok(HttpSource {
            client,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            token: std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty()),
            attempts: cfg.attempts.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }
}

impl ImageSource for HttpSource {
    fn fetch(&self, entry: &SampleManifestEntry, _repeat: u32) -> Result<RgbImage, (FailureKind, String)> {
        let body = serde_json::to_vec(&GenerationRequest {
            id: entry.id.clone(),
            prompt: entry.prompt.clone(),
            width: entry.resolution,
            height: entry.resolution,
        })
        .expect("request serializes");
        let mut last = (FailureKind::RetryExhausted, String::new());
        for attempt in 0..self.attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let mut req = self
                .client
                .post(&self.endpoint)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let bytes = resp.bytes().map_err(|e| (FailureKind::RequestFailed, e.to_string()))?;
                        return decode(&bytes);
                    }
                    if status.is_server_error() || status.as_u16() == 429 {
                        last = (FailureKind::RetryExhausted, format!("status {status}"));
                        continue;
                    }
                    return Err((FailureKind::RequestFailed, format!("status {status}")));
                }
                Err(e) if e.is_timeout() => last = (FailureKind::Timeout, e.to_string()),
                Err(e) => last = (FailureKind::RetryExhausted, e.to_string()),
            }
        }
        let (kind, detail) = last;
        Err((kind, format!("{} attempts: {detail}", self.attempts)))
    }
}

/// Checks (and optionally fixes) the size of a fetched image.
fn conform(image: RgbImage, resolution: u32, resize: bool) -> Result<(RgbImage, bool), (FailureKind, String)> {
    if image.width() == resolution && image.height() == resolution {
        return Ok((image, false));
    }
    if resize {
        let out = image::imageops::resize(&image, resolution, resolution, FilterType::Triangle);
        return Ok((out, true));
    }
    Err((
        FailureKind::WrongDimensions,
        format!(
            "image is {}x{}, expected {resolution}x{resolution}",
            image.width(),
            image.height()
        ),
    ))
}

/// A fetched image that passed the dimension check.
#[derive(Clone, Debug)]
pub struct AcquiredImage {
    pub sample_id: String,
    pub repeat: u32,
    pub image: RgbImage,
    pub resized: bool,
}

#[derive(Clone, Debug, Default)]
pub struct AcquisitionSet {
    pub images: Vec<AcquiredImage>,
    pub failures: Vec<SampleFailure>,
}

/// Fetches every `(entry, repeat)` image into memory. For large runs use
/// [`run_eval`], which scores images as they arrive.
pub fn acquire_images(
    manifest: &[SampleManifestEntry],
    source: &dyn ImageSource,
    provider: &ProviderConfig,
) -> Result<AcquisitionSet, HarnessError> {
    let results = in_pool(provider.parallelism, || {
        jobs(manifest, provider.repeats)
            .par_iter()
            .map(|&(entry, repeat)| {
                source
                    .fetch(entry, repeat)
                    .and_then(|img| conform(img, entry.resolution, provider.resize))
                    .map(|(image, resized)| AcquiredImage {
                        sample_id: entry.id.clone(),
                        repeat,
                        image,
                        resized,
                    })
                    .map_err(|(kind, detail)| SampleFailure {
                        sample_id: entry.id.clone(),
                        repeat,
                        kind,
                        detail,
                    })
            })
            .collect::<Vec<_>>()
    })?;
    let mut set = AcquisitionSet::default();
    for r in results {
        match r {
            Ok(img) => set.images.push(img),
            Err(f) => set.failures.push(f),
        }
    }
    if set.images.is_empty() && !manifest.is_empty() {
        return Err(HarnessError::NothingAcquired(set.failures.len()));
    }
    Ok(set)
}

fn jobs(manifest: &[SampleManifestEntry], repeats: u32) -> Vec<(&SampleManifestEntry, u32)> {
    manifest
        .iter()
        .flat_map(|e| (0..repeats).map(move |k| (e, k)))
        .collect()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no image could be acquired ({0} failures)")]
    NothingAcquired(usize),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Evaluation of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub variation: u8,
    pub repeat: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub resized: bool,
    pub report: SampleReport,
}

impl SampleRecord {
    /// Region means of the raw purity values.
    pub fn raw_purity(&self) -> PurityValues {
        let n = self.report.regions.len() as f64;
        let mut acc = PurityValues::default();
        for r in &self.report.regions {
            acc.sd += r.purity.raw.sd / n;
            acc.ced += r.purity.raw.ced / n;
            acc.hf += r.purity.raw.hf / n;
        }
        acc
    }

    /// The eleven report columns for this sample (normalized metrics).
    pub fn columns(&self) -> [f64; 11] {
        let p = self.report.normalized_precision().to_array();
        let q = self.report.normalized_purity();
        [
            p[0],
            p[1],
            p[2],
            p[3],
            p[4],
            p[5],
            self.report.pre_mean,
            q[0],
            q[1],
            q[2],
            self.report.pur_mean,
        ]
    }
}

/// Means over the evaluated samples of one variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationAggregate {
    pub variation: u8,
    pub n: usize,
    /// Normalized metric means followed by pre-mean and pur-mean, in
    /// [`REPORT_COLUMNS`] order.
    pub columns: [f64; 11],
    pub raw_precision: PrecisionValues,
    pub raw_purity: PurityValues,
}

impl VariationAggregate {
    pub fn pre_mean(&self) -> f64 {
        self.columns[6]
    }

    pub fn pur_mean(&self) -> f64 {
        self.columns[10]
    }
}

/// Repeated-sample statistics of one prompt (only when repeats > 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub sample_id: String,
    pub n: usize,
    pub mean: [f64; 11],
    /// Unbiased sample variance per column.
    pub variance: [f64; 11],
}

/// Per-variation means over `samples`, summed in the order given.
pub fn aggregate(samples: &[SampleRecord]) -> Vec<VariationAggregate> {
    let mut groups: BTreeMap<u8, Vec<&SampleRecord>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.variation).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(variation, rs)| {
            let n = rs.len() as f64;
            let mut columns = [0.0; 11];
            let mut raw_p = [0.0; 6];
            let mut raw_q = [0.0; 3];
            for r in &rs {
                for (a, v) in columns.iter_mut().zip(r.columns()) {
                    *a += v;
                }
                for (a, v) in raw_p.iter_mut().zip(r.report.raw_precision().to_array()) {
                    *a += v;
                }
                let q = r.raw_purity();
                for (a, v) in raw_q.iter_mut().zip([q.sd, q.ced, q.hf]) {
                    *a += v;
                }
            }
            VariationAggregate {
                variation,
                n: rs.len(),
                columns: columns.map(|a| a / n),
                raw_precision: PrecisionValues::from_array(raw_p.map(|a| a / n)),
                raw_purity: PurityValues {
                    sd: raw_q[0] / n,
                    ced: raw_q[1] / n,
                    hf: raw_q[2] / n,
                },
            }
        })
        .collect()
}

/// Mean and variance per prompt for prompts with more than one image.
pub fn prompt_statistics(samples: &[SampleRecord]) -> Vec<PromptStats> {
    let mut groups: BTreeMap<&str, Vec<[f64; 11]>> = BTreeMap::new();
    for s in samples {
        groups.entry(&s.sample_id).or_default().push(s.columns());
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(id, rows)| {
            let n = rows.len() as f64;
            let mut mean = [0.0; 11];
            for row in &rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / n;
                }
            }
            let mut variance = [0.0; 11];
            for row in &rows {
                for i in 0..11 {
                    variance[i] += (row[i] - mean[i]).powi(2) / (n - 1.0);
                }
            }
            PromptStats {
                sample_id: id.to_string(),
                n: rows.len(),
                mean,
                variance,
            }
        })
        .collect()
}

/// Settings that, together with the manifest and images, determine a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub provider: ProviderConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub model_tag: String,
    pub manifest: String,
    pub created_unix: u64,
    pub config: ConfigSnapshot,
    /// Evaluated images over expected images.
    pub coverage: f64,
    pub aggregates: Vec<VariationAggregate>,
    pub prompt_stats: Vec<PromptStats>,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<SampleFailure>,
}

/// Labels a run for reports.
#[derive(Clone, Debug, Default)]
pub struct RunLabel {
    pub model_tag: String,
    pub manifest: String,
}

fn run_id(label: &RunLabel, config: &ConfigSnapshot, created: u64) -> String {
    let mut h = Sha256::new();
    h.update(label.model_tag.as_bytes());
    h.update([0]);
    h.update(label.manifest.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(created.to_le_bytes());
    h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fetches and scores every `(entry, repeat)` image in a pool of
/// `provider.parallelism` workers. Per-sample failures are recorded and
/// skipped.
pub fn run_eval(
    manifest: &[SampleManifestEntry],
    source: &dyn ImageSource,
    provider: &ProviderConfig,
    eval: &EvalConfig,
    label: &RunLabel,
) -> Result<EvalRun, HarnessError> {
    eval.validate()?;
    let outcomes = in_pool(provider.parallelism, || {
        jobs(manifest, provider.repeats)
            .par_iter()
            .map(|&(entry, repeat)| score_one(entry, repeat, source, provider.resize, eval))
            .collect::<Vec<_>>()
    })?;
    let expected = outcomes.len();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => samples.push(s),
            Err(f) => failures.push(f),
        }
    }
    if samples.is_empty() && expected > 0 {
        return Err(HarnessError::NothingAcquired(failures.len()));
    }
    samples.sort_by(|a, b| (&a.sample_id, a.repeat).cmp(&(&b.sample_id, b.repeat)));
    failures.sort_by(|a, b| (&a.sample_id, a.repeat).cmp(&(&b.sample_id, b.repeat)));
    let config = ConfigSnapshot {
        provider: provider.clone(),
        eval: *eval,
    };
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(EvalRun {
        run_id: run_id(label, &config, created_unix),
        model_tag: label.model_tag.clone(),
        manifest: label.manifest.clone(),
        created_unix,
        config,
        coverage: if expected == 0 {
            0.0
        } else {
            samples.len() as f64 / expected as f64
        },
        aggregates: aggregate(&samples),
        prompt_stats: prompt_statistics(&samples),
        samples,
        failures,
    })
}

fn score_one(
    entry: &SampleManifestEntry,
    repeat: u32,
    source: &dyn ImageSource,
    resize: bool,
    eval: &EvalConfig,
) -> Result<SampleRecord, SampleFailure> {
    let fail = |(kind, detail): (FailureKind, String)| SampleFailure {
        sample_id: entry.id.clone(),
        repeat,
        kind,
        detail,
    };
    let (image, resized) = source
        .fetch(entry, repeat)
        .and_then(|img| conform(img, entry.resolution, resize))
        .map_err(fail)?;
    let report = evaluate_sample(&image, &entry.regions, eval)
        .map_err(|e| fail((FailureKind::EvaluationFailed, e.to_string())))?;
    Ok(SampleRecord {
        sample_id: entry.id.clone(),
        variation: entry.variation,
        repeat,
        resized,
        report,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Jsonl,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Jsonl];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
            ReportFormat::Jsonl => "report.jsonl",
        }
    }
}

/// One aggregate row: a model tag and variation with the eleven columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model_tag: String,
    pub variation: u8,
    pub n: usize,
    pub columns: [f64; 11],
}

pub fn report_rows(run: &EvalRun) -> Vec<ReportRow> {
    run.aggregates
        .iter()
        .map(|a| ReportRow {
            model_tag: run.model_tag.clone(),
            variation: a.variation,
            n: a.n,
            columns: a.columns,
        })
        .collect()
}

fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["model", "variation", "n"];
    h.extend(REPORT_COLUMNS);
    h
}

/// Aggregates as CSV. Floats use the shortest exact representation.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header()).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.model_tag.clone(), r.variation.to_string(), r.n.to_string()];
        rec.extend(r.columns.iter().map(f64::to_string));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Inverse of [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| HarnessError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(csv_header()) {
        return Err(HarnessError::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let err = |message: String| HarnessError::Parse { line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let mut columns = [0.0; 11];
        for (k, slot) in columns.iter_mut().enumerate() {
            let text = field(3 + k);
            *slot = text.parse().map_err(|e| err(format!("{text:?}: {e}")))?;
        }
        rows.push(ReportRow {
            model_tag: field(0).to_string(),
            variation: field(1).parse().map_err(|e| err(format!("variation: {e}")))?,
            n: field(2).parse().map_err(|e| err(format!("n: {e}")))?,
            columns,
        });
    }
    Ok(rows)
}

/// Aggregates as a Markdown table grouped by variation, three decimals.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from("| Var | Model |");
    for c in REPORT_COLUMNS {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(REPORT_COLUMNS.len()));
    out.push('\n');
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.variation);
    let mut last = None;
    for r in sorted {
        let var = if last == Some(r.variation) {
            String::new()
        } else {
            format!("Var-{}", r.variation)
        };
        last = Some(r.variation);
        let _ = write!(out, "| {var} | {} |", r.model_tag.replace('|', "\\|"));
        for v in r.columns {
            let _ = write!(out, " {v:.3} |");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum JsonlLine<'a> {
    Run {
        run_id: &'a str,
        model_tag: &'a str,
        manifest: &'a str,
        created_unix: u64,
        config: &'a ConfigSnapshot,
        coverage: f64,
        aggregates: &'a [VariationAggregate],
        prompt_stats: &'a [PromptStats],
    },
    Sample(&'a SampleRecord),
    Failure(&'a SampleFailure),
}

/// Full run detail: a header line, then one line per sample and failure.
pub fn render_jsonl(run: &EvalRun) -> String {
    let mut lines = vec![JsonlLine::Run {
        run_id: &run.run_id,
        model_tag: &run.model_tag,
        manifest: &run.manifest,
        created_unix: run.created_unix,
        config: &run.config,
        coverage: run.coverage,
        aggregates: &run.aggregates,
        prompt_stats: &run.prompt_stats,
    }];
    lines.extend(run.samples.iter().map(JsonlLine::Sample));
    lines.extend(run.failures.iter().map(JsonlLine::Failure));
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(&l).expect("report serializes"));
        out.push('\n');
    }
    out
}

/// Writes the report in `format` under `dir` and returns its path.
pub fn emit_report(run: &EvalRun, format: ReportFormat, dir: &Path) -> Result<PathBuf, HarnessError> {
    let io = |path: &Path, e: std::io::Error| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let text = match format {
        ReportFormat::Csv => render_csv(&report_rows(run)),
        ReportFormat::Markdown => render_markdown(&report_rows(run)),
        ReportFormat::Jsonl => render_jsonl(run),
    };
    let path = dir.join(format.file_name());
    fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Probes

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFamily {
    Negation,
    SemanticGravity,
    Spatial,
}

impl ProbeFamily {
    pub const ALL: [ProbeFamily; 3] = [
        ProbeFamily::Negation,
        ProbeFamily::SemanticGravity,
        ProbeFamily::Spatial,
    ];
}

impl std::str::FromStr for ProbeFamily {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "negation" => Ok(ProbeFamily::Negation),
            "semantic_gravity" | "semantic-gravity" => Ok(ProbeFamily::SemanticGravity),
            "spatial" => Ok(ProbeFamily::Spatial),
            other => Err(HarnessError::Config(format!("unknown probe family {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeTarget {
    Solid {
        color: Rgb8,
    },
    Split {
        left_fraction: f64,
        left: Rgb8,
        right: Rgb8,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePrompt {
    pub key: String,
    pub prompt: String,
    pub target: ProbeTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub family: ProbeFamily,
    pub prompts: Vec<ProbePrompt>,
}

const PROBE_COLOR: &str = "#9966CC";
const SPLIT_LEFT: &str = "#AB1213";
const SPLIT_RIGHT: &str = "#000000";

/// The fixed prompts of a probe family. Variants that extend the base
/// prompt append their clause after a comma.
pub fn probe_spec(family: ProbeFamily) -> ProbeSpec {
    let hex = |s| parse_hex(s).expect("probe colors are valid");
    let base = format!("Generating a uniform pure color image with hex color code: {PROBE_COLOR}");
    let solid = |key: &str, prompt: String| ProbePrompt {
        key: key.to_string(),
        prompt,
        target: ProbeTarget::Solid {
            color: hex(PROBE_COLOR),
        },
    };
    let prompts = match family {
        ProbeFamily::Negation => vec![
            solid("p1_base", format!("{base}.")),
            solid(
                "p1_neg",
                format!("{base}, strictly no shadows, no gradients, and no metallic textures."),
            ),
            solid(
                "p1_ent",
                format!("{base}, strictly no cloud patterns or water ripples."),
            ),
        ],
        ProbeFamily::SemanticGravity => vec![
            solid("p2_base", format!("{base}.")),
            solid(
                "p2_cons",
                format!("{base}, which is the typical color of a rusted iron plate"),
            ),
            solid("p2_conf", format!("{base}, representing the color of a fresh potato")),
            solid(
                "p2_neu",
                format!("{base}, a randomly generated color with no specific meaning or real-world counterpart"),
            ),
        ],
        ProbeFamily::Spatial => {
            let split = |key: &str, lead: &str, left: &str, right: &str, fraction: f64| {
                ProbePrompt {
                key: key.to_string(),
                prompt: format!(
                    "{lead} with two solid color blocks: the left {left}% is a pure solid color with hex code {SPLIT_LEFT}, the right {right}% is a pure solid color with hex code {SPLIT_RIGHT}"
                ),
                target: ProbeTarget::Split {
                    left_fraction: fraction,
                    left: hex(SPLIT_LEFT),
                    right: hex(SPLIT_RIGHT),
                },
            }
            };
            vec![
                split("p3_sym", "A split image", "50", "50", 0.5),
                split("p3_asym", "A split image", "31.5", "68.5", 0.315),
                split("p3_third", "A common photographic composition", "33.3", "66.7", 0.333),
            ]
        }
    };
    ProbeSpec { family, prompts }
}

impl ProbePrompt {
    /// The probe as a manifest entry, so any [`ImageSource`] can serve it.
    pub fn to_entry(&self, resolution: u32) -> SampleManifestEntry {
        let regions = match self.target {
            ProbeTarget::Solid { color } => vec![RegionSpec::full(color)],
            ProbeTarget::Split {
                left_fraction,
                left,
                right,
            } => {
                let g = |side| RegionGeometry::HorizontalSplit { left_fraction, side };
                vec![
                    RegionSpec {
                        geometry: g(HSide::Left),
                        target: ColorTarget::Exact { color: left },
                    },
                    RegionSpec {
                        geometry: g(HSide::Right),
                        target: ColorTarget::Exact { color: right },
                    },
                ]
            }
        };
        let variation = if regions.len() == 1 { 1 } else { 2 };
        SampleManifestEntry {
            id: format!("probe-{}", self.key),
            variation,
            level: ColorLevel::L3,
            language: Language::En,
            color_space: ColorSpace::Hex,
            template_id: self.key.clone(),
            prompt: self.prompt.clone(),
            resolution,
            regions,
            gt_path: String::new(),
            gt_is_midpoint: false,
            split: None,
            generalization: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

/// Spatial probe outcome: where the boundary landed and how the two sides
/// compare with the requested colors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitProbeResult {
    pub requested: f64,
    pub measured: SplitMeasurement,
    pub deviation: f64,
    /// Deviation exceeds one pixel column.
    pub flagged: bool,
    pub left: PrecisionReport,
    pub right: PrecisionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub key: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solid: Option<SampleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitProbeResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<SampleFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub family: ProbeFamily,
    pub results: Vec<ProbeResult>,
}

/// Measures a spatial probe image against its requested split.
pub fn analyze_split(
    image: &RgbImage,
    requested: f64,
    left: Rgb8,
    right: Rgb8,
    k: &NormalizationConstants,
) -> Result<SplitProbeResult, HarnessError> {
    let measured = measure_split_ratio(image, Axis::Horizontal);
    let (w, h) = image.dimensions();
    let b = measured.boundary.clamp(1, w - 1);
    let side = |rect: Rect, target: Rgb8| -> Result<PrecisionReport, HarnessError> {
        let rep = representative_color(image, rect)?;
        let raw = PrecisionValues::between(rep, target.into(), Default::default());
        Ok(normalize_and_aggregate(raw, k)?)
    };
    let deviation = (measured.fraction - requested).abs();
    Ok(SplitProbeResult {
        requested,
        measured,
        deviation,
        flagged: deviation > 1.0 / f64::from(w),
        left: side(Rect::new(0, 0, b, h), left)?,
        right: side(Rect::new(b, 0, w, h), right)?,
    })
}

/// Runs every prompt of `family` through `source` and analyzes the images.
pub fn probe_suite(
    family: ProbeFamily,
    source: &dyn ImageSource,
    resolution: u32,
    eval: &EvalConfig,
) -> Result<ProbeReport, HarnessError> {
    eval.validate()?;
    let spec = probe_spec(family);
    let mut results = Vec::new();
    for p in &spec.prompts {
        let entry = p.to_entry(resolution);
        let mut result = ProbeResult {
            key: p.key.clone(),
            prompt: p.prompt.clone(),
            solid: None,
            split: None,
            failure: None,
        };
        let fetched = source.fetch(&entry, 0).and_then(|img| conform(img, resolution, false));
        let fail = |(kind, detail): (FailureKind, String)| SampleFailure {
            sample_id: entry.id.clone(),
            repeat: 0,
            kind,
            detail,
        };
        match (fetched, p.target) {
            (Err(e), _) => result.failure = Some(fail(e)),
            (Ok((img, _)), ProbeTarget::Solid { .. }) => match evaluate_sample(&img, &entry.regions, eval) {
                Ok(r) => result.solid = Some(r),
                Err(e) => result.failure = Some(fail((FailureKind::EvaluationFailed, e.to_string()))),
            },
            (
                Ok((img, _)),
                ProbeTarget::Split {
                    left_fraction,
                    left,
                    right,
                },
            ) => result.split = Some(analyze_split(&img, left_fraction, left, right, &eval.normalization)?),
        }
        results.push(result);
    }
    if results.iter().all(|r| r.failure.is_some()) {
        return Err(HarnessError::NothingAcquired(results.len()));
    }
    Ok(ProbeReport { family, results })
}

/// A perfect render of a probe prompt.
pub fn probe_oracle(entry: &SampleManifestEntry, _repeat: u32) -> Result<RgbImage, (FailureKind, String)> {
    crate::dataset::render_ground_truth(&entry.regions, entry.resolution)
        .map_err(|e| (FailureKind::RequestFailed, e.to_string()))
}

// ---------------------------------------------------------------------------
// Run config

/// Everything an `eval` or `probe` invocation reads from its config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_tag: String,
    pub seed: u64,
    pub provider: ProviderConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_tag: "model".into(),
            seed: 7,
            provider: ProviderConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    model_tag: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    provider: ProviderConfig,
    #[serde(default)]
    eval: EvalFile,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    normalization: Option<NormalizationConstants>,
    hyab_form: Option<crate::precision::HyabForm>,
    purity: Option<crate::purity::PurityConfig>,
    erosion: Option<u32>,
}

impl RunConfig {
    /// Parses TOML. Unset normalization constants follow the HyAB form.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let f: RunConfigFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let d = RunConfig::default();
        let hyab_form = f.eval.hyab_form.unwrap_or(d.eval.hyab_form);
        let eval = EvalConfig {
            normalization: f
                .eval
                .normalization
                .unwrap_or_else(|| NormalizationConstants::for_form(hyab_form)),
            hyab_form,
            purity: f.eval.purity.unwrap_or(d.eval.purity),
            erosion: f.eval.erosion.unwrap_or(d.eval.erosion),
        };
        eval.validate()?;
        Ok(RunConfig {
            model_tag: f.model_tag.unwrap_or(d.model_tag),
            seed: f.seed.unwrap_or(d.seed),
            provider: f.provider,
            eval,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
