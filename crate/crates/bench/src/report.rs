//! Report rows and their JSON and CSV encodings.

use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

/// Simulated frame shift used to turn frame counts into audio seconds.
pub const FRAME_SHIFT_SECONDS: f64 = 0.010;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    Scalar,
    Vectorized,
    ScalarMultiworker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equivalence {
    Pass,
    Skipped,
}

/// One measured configuration. Field order is the CSV column order.
///
/// Timing fields are medians over the measured passes. Phase columns are
/// filled for the vectorized engine only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub engine: EngineKind,
    pub batch: usize,
    pub beam: usize,
    pub workers: usize,
    pub vocab_size: usize,
    pub ctc_weight: f64,
    pub lm_weight: f64,
    pub num_utts: usize,
    pub audio_seconds: f64,
    pub total_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub per_utt_mean_ms: f64,
    pub per_utt_median_ms: f64,
    pub rtf: f64,
    /// Scalar baseline duration over this row's duration; empty without a
    /// baseline row.
    pub speedup: Option<f64>,
    pub equivalence: Equivalence,
    pub encode_seconds: Option<f64>,
    pub attention_seconds: Option<f64>,
    pub lm_seconds: Option<f64>,
    pub ctc_seconds: Option<f64>,
    pub prune_seconds: Option<f64>,
    pub bookkeeping_seconds: Option<f64>,
}

pub const CSV_HEADER: [&str; 23] = [
    "engine",
    "batch",
    "beam",
    "workers",
    "vocab_size",
    "ctc_weight",
    "lm_weight",
    "num_utts",
    "audio_seconds",
    "total_seconds",
    "min_seconds",
    "max_seconds",
    "per_utt_mean_ms",
    "per_utt_median_ms",
    "rtf",
    "speedup",
    "equivalence",
    "encode_seconds",
    "attention_seconds",
    "lm_seconds",
    "ctc_seconds",
    "prune_seconds",
    "bookkeeping_seconds",
];

impl BenchRow {
    /// Phase that took the largest share of search time (encoding excluded).
    pub fn dominant_phase(&self) -> Option<&'static str> {
        let phases = [
            ("attention", self.attention_seconds?),
            ("lm", self.lm_seconds?),
            ("ctc", self.ctc_seconds?),
            ("prune", self.prune_seconds?),
            ("bookkeeping", self.bookkeeping_seconds?),
        ];
        phases
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(name, _)| name)
    }

    /// Share of search time spent in `seconds`.
    pub fn search_share(&self, seconds: Option<f64>) -> Option<f64> {
        let search = self.attention_seconds?
            + self.lm_seconds?
            + self.ctc_seconds?
            + self.prune_seconds?
            + self.bookkeeping_seconds?;
        Some(seconds? / search)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn new(rows: Vec<BenchRow>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            rows,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn rtf(decode_seconds: f64, audio_seconds: f64) -> f64 {
    decode_seconds / audio_seconds
}

pub fn audio_seconds(frames: usize) -> f64 {
    frames as f64 * FRAME_SHIFT_SECONDS
}

pub fn emit_report(report: &BenchReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => {
            // The header is written by hand so that an empty report still
            // gets one.
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for row in &report.rows {
                w.serialize(row).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

pub fn parse_json_report(bytes: &[u8]) -> Result<BenchReport, BenchError> {
    let report: BenchReport =
        serde_json::from_slice(bytes).map_err(|e| BenchError::Report(e.to_string()))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(BenchError::Report(format!(
            "schema version {} is not {SCHEMA_VERSION}",
            report.schema_version
        )));
    }
    Ok(report)
}

pub fn parse_csv_rows(bytes: &[u8]) -> Result<Vec<BenchRow>, BenchError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| BenchError::Report(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::Report(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| BenchError::Report(e.to_string()))
}
