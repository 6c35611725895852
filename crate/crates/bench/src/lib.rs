//! Benchmark harness for the vecbeam engines.
//!
//! Generates or loads a synthetic model and utterance set, optionally checks
//! the engines against each other, then times each configuration: one warmup
//! pass and the median of the measured passes. Timing covers encoding, search
//! and finalization, never data generation or model loading.

pub mod report;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use thiserror::Error;
use vecbeam::beam::{
    decode_batch_vectorized_profiled, decode_scalar_reference, BeamConfig, DecodeResult,
    PhaseTimings,
};
use vecbeam::scorers::FusionWeights;
use vecbeam::synth::{
    generate_model, generate_utterances, SyntheticModel, SyntheticModelSpec, UtteranceSet,
    UtteranceSetSpec,
};
use vecbeam::tensor_ops::FeatureMatrix;

pub use report::{
    emit_report, BenchReport, BenchRow, EngineKind, Equivalence, ReportFormat, SCHEMA_VERSION,
};

/// Score tolerance between the scalar engine and vectorized S=1.
pub const SINGLE_TOLERANCE: f64 = 1e-9;
/// Score tolerance once utterances share a batch.
pub const BATCH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("bad report: {0}")]
    Report(String),
    #[error(transparent)]
    Engine(#[from] vecbeam::Error),
}

impl BenchError {
    /// 1 usage, 2 verification failure, 3 I/O, format or engine error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) | BenchError::Engine(vecbeam::Error::Parameter(_)) => 1,
            BenchError::Verification(_) => 2,
            BenchError::Report(_) | BenchError::Engine(_) => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRange {
    pub min: usize,
    pub max: usize,
}

impl std::str::FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or("expected MIN:MAX")?;
        let min: usize = lo.trim().parse().map_err(|e| format!("bad MIN: {e}"))?;
        let max: usize = hi.trim().parse().map_err(|e| format!("bad MAX: {e}"))?;
        if min == 0 || min > max {
            return Err(format!("need 1 <= MIN <= MAX, got {min}:{max}"));
        }
        Ok(Self { min, max })
    }
}

#[derive(Clone, Debug, Parser)]
#[command(
    name = "vecbeam-bench",
    version,
    about = "Time the scalar and vectorized beam search engines",
    args_override_self = true
)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "vectorized")]
    pub engine: EngineKind,
    /// Worker counts for scalar-multiworker, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    /// Batch sizes S for the vectorized engine, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub batch: Option<Vec<usize>>,
    #[arg(long, default_value_t = 20)]
    pub beam: usize,
    #[arg(long, default_value_t = 0.3)]
    pub ctc_weight: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lm_weight: f64,
    /// Model seed; the utterances use seed + 1.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 100)]
    pub num_utts: usize,
    #[arg(long, default_value = "100:500")]
    pub frames: FrameRange,
    /// Model file (.vbm). Written with --gen, read otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Utterance file (.vbu). Written with --gen, read otherwise.
    #[arg(long)]
    pub utts: Option<PathBuf>,
    /// Generate the desk model and utterances instead of loading them.
    #[arg(long)]
    pub gen: bool,
    /// Check every configuration against the scalar engine before timing.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    #[arg(long, default_value_t = 1.0)]
    pub max_len_ratio: f64,
    #[arg(long, value_enum, default_value = "json")]
    pub report: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 3)]
    pub passes: usize,
    /// Skip the scalar baseline row; speedups are then left empty.
    #[arg(long)]
    pub no_baseline: bool,
}

impl BenchArgs {
    pub fn beam_config(&self) -> Result<BeamConfig, BenchError> {
        let cfg = BeamConfig {
            beam_size: self.beam,
            max_len_ratio: self.max_len_ratio,
            fusion: FusionWeights::new(self.ctc_weight, self.lm_weight)
                .map_err(|e| BenchError::Usage(e.to_string()))?,
            nbest: self.nbest,
            ..BeamConfig::default()
        };
        cfg.validate().map_err(|e| BenchError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// The configurations to time, in report order, baseline first.
    pub fn plan(&self) -> Result<Vec<RunPlan>, BenchError> {
        let batches = self.batch.clone().unwrap_or_else(|| vec![1]);
        let workers = self.workers.clone().unwrap_or_else(|| vec![1]);
        if batches.contains(&0) || workers.contains(&0) {
            return Err(BenchError::Usage("--batch and --workers take values >= 1".into()));
        }
        if self.engine != EngineKind::Vectorized && self.batch.is_some() {
            return Err(BenchError::Usage("--batch applies to --engine vectorized only".into()));
        }
        if self.engine != EngineKind::ScalarMultiworker && self.workers.is_some() {
            return Err(BenchError::Usage(
                "--workers applies to --engine scalar-multiworker only".into(),
            ));
        }
        if self.passes == 0 {
            return Err(BenchError::Usage("--passes must be at least 1".into()));
        }
        if self.num_utts == 0 && self.gen {
            return Err(BenchError::Usage("--num-utts must be at least 1".into()));
        }
        let baseline = RunPlan {
            engine: EngineKind::Scalar,
            batch: 1,
            workers: 1,
        };
        let mut plans = Vec::new();
        if self.engine == EngineKind::Scalar || !self.no_baseline {
            plans.push(baseline);
        }
        match self.engine {
            EngineKind::Scalar => {}
            EngineKind::Vectorized => plans.extend(batches.iter().map(|&batch| RunPlan {
                engine: EngineKind::Vectorized,
                batch,
                workers: 1,
            })),
            EngineKind::ScalarMultiworker => plans.extend(workers.iter().map(|&workers| RunPlan {
                engine: EngineKind::ScalarMultiworker,
                batch: 1,
                workers,
            })),
        }
        Ok(plans)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunPlan {
    pub engine: EngineKind,
    pub batch: usize,
    pub workers: usize,
}

/// Loads or generates the model and utterances. With --gen, any given paths
/// receive the generated artifacts.
pub fn prepare_data(args: &BenchArgs) -> Result<(SyntheticModel, UtteranceSet), BenchError> {
    if args.gen {
        let model = generate_model(&SyntheticModelSpec::desk(args.seed, args.vocab_size))
            .map_err(usage_on_param)?;
        let utts = generate_utterances(&UtteranceSetSpec {
            seed: args.seed.wrapping_add(1),
            count: args.num_utts,
            min_frames: args.frames.min,
            max_frames: args.frames.max,
            d_feat: model.spec.d_feat,
        })
        .map_err(usage_on_param)?;
        if let Some(p) = &args.model {
            model.save(p)?;
        }
        if let Some(p) = &args.utts {
            utts.save(p)?;
        }
        return Ok((model, utts));
    }
    let (Some(mp), Some(up)) = (&args.model, &args.utts) else {
        return Err(BenchError::Usage("give --gen or both --model and --utts".into()));
    };
    let model = SyntheticModel::load(mp)?;
    let utts = UtteranceSet::load(up)?;
    if utts.spec.d_feat != model.spec.d_feat {
        return Err(BenchError::Usage(format!(
            "utterances have {} features, model expects {}",
            utts.spec.d_feat, model.spec.d_feat
        )));
    }
    if utts.utterances.is_empty() {
        return Err(BenchError::Usage("utterance file is empty".into()));
    }
    Ok((model, utts))
}

fn usage_on_param(e: vecbeam::Error) -> BenchError {
    match e {
        vecbeam::Error::Parameter(m) => BenchError::Usage(m),
        other => BenchError::Engine(other),
    }
}

/// One timed pass over all utterances.
struct Pass {
    results: Vec<DecodeResult>,
    /// Time attributed to each utterance: its own decode, or its share of a
    /// batch.
    per_utt: Vec<Duration>,
    wall: Duration,
    phases: Option<PhaseTimings>,
}

pub fn decode_all(
    model: &SyntheticModel,
    utts: &[FeatureMatrix],
    cfg: &BeamConfig,
    plan: RunPlan,
) -> Result<Vec<DecodeResult>, BenchError> {
    Ok(run_pass(model, utts, cfg, plan)?.results)
}

fn run_pass(
    model: &SyntheticModel,
    utts: &[FeatureMatrix],
    cfg: &BeamConfig,
    plan: RunPlan,
) -> Result<Pass, BenchError> {
    let start = Instant::now();
    let mut phases = None;
    let (results, per_utt) = match plan.engine {
        EngineKind::Scalar => {
            let results = utts
                .iter()
                .map(|u| decode_scalar_reference(model, u, cfg))
                .collect::<vecbeam::Result<Vec<_>>>()?;
            let per_utt = results.iter().map(|r| r.duration).collect();
            (results, per_utt)
        }
        EngineKind::Vectorized => {
            let mut total = PhaseTimings::default();
            let mut results = Vec::with_capacity(utts.len());
            let mut per_utt = Vec::with_capacity(utts.len());
            for chunk in utts.chunks(plan.batch) {
                let (rs, p) = decode_batch_vectorized_profiled(model, chunk, cfg)?;
                total.accumulate(&p);
                per_utt.extend(rs.iter().map(|r| r.duration / chunk.len() as u32));
                results.extend(rs);
            }
            phases = Some(total);
            (results, per_utt)
        }
        EngineKind::ScalarMultiworker => {
            let results = decode_sharded(model, utts, cfg, plan.workers)?;
            let per_utt = results.iter().map(|r| r.duration).collect();
            (results, per_utt)
        }
    };
    Ok(Pass {
        results,
        per_utt,
        wall: start.elapsed(),
        phases,
    })
}

/// Round-robin shards over `workers` threads, each running the scalar engine
/// with its own state. Results come back in input order.
fn decode_sharded(
    model: &SyntheticModel,
    utts: &[FeatureMatrix],
    cfg: &BeamConfig,
    workers: usize,
) -> Result<Vec<DecodeResult>, BenchError> {
    let shards: Vec<vecbeam::Result<Vec<(usize, DecodeResult)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..utts.len())
                        .step_by(workers)
                        .map(|i| decode_scalar_reference(model, &utts[i], cfg).map(|r| (i, r)))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut slots: Vec<Option<DecodeResult>> = vec![None; utts.len()];
    for shard in shards {
        for (i, r) in shard? {
            slots[i] = Some(r);
        }
    }
    Ok(slots
        .into_iter()
        .map(|r| r.expect("every utterance assigned to a worker"))
        .collect())
}

/// First disagreement between two n-best lists, if any: label sequences and
/// truncation flags must match exactly, scores within `tol`.
pub fn compare_results(a: &DecodeResult, b: &DecodeResult, tol: f64) -> Option<String> {
    if a.nbest.len() != b.nbest.len() {
        return Some(format!("n-best sizes {} vs {}", a.nbest.len(), b.nbest.len()));
    }
    for (rank, (x, y)) in a.nbest.iter().zip(&b.nbest).enumerate() {
        if x.labels != y.labels || x.truncated != y.truncated {
            return Some(format!("rank {rank}: {:?} vs {:?}", x.labels, y.labels));
        }
        let diff = (x.final_score - y.final_score).abs();
        if diff.is_nan() || diff > tol {
            return Some(format!(
                "rank {rank}: scores {} vs {} differ by {diff:e} > {tol:e}",
                x.final_score, y.final_score
            ));
        }
    }
    None
}

/// Checks every non-scalar plan against the scalar engine.
pub fn verify(
    model: &SyntheticModel,
    utts: &[FeatureMatrix],
    cfg: &BeamConfig,
    plans: &[RunPlan],
) -> Result<(), BenchError> {
    let checked = BeamConfig {
        check_pruning: true,
        ..*cfg
    };
    let reference = decode_all(model, utts, cfg, RunPlan {
        engine: EngineKind::Scalar,
        batch: 1,
        workers: 1,
    })?;
    for &plan in plans.iter().filter(|p| p.engine != EngineKind::Scalar) {
        let tol = if plan.batch == 1 { SINGLE_TOLERANCE } else { BATCH_TOLERANCE };
        let got = decode_all(model, utts, &checked, plan).map_err(|e| match e {
            BenchError::Engine(vecbeam::Error::Internal(m)) => BenchError::Verification(m),
            other => other,
        })?;
        for (i, (r, g)) in reference.iter().zip(&got).enumerate() {
            if let Some(why) = compare_results(r, g, tol) {
                return Err(BenchError::Verification(format!(
                    "{:?} S={} W={} utterance {i}: {why}",
                    plan.engine, plan.batch, plan.workers
                )));
            }
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Times one plan: `warmup` discarded passes, then `passes` measured ones.
/// Per-utterance and phase figures come from the median pass.
pub fn time_plan(
    model: &SyntheticModel,
    utts: &[FeatureMatrix],
    cfg: &BeamConfig,
    plan: RunPlan,
    warmup: usize,
    passes: usize,
) -> Result<BenchRow, BenchError> {
    for _ in 0..warmup {
        run_pass(model, utts, cfg, plan)?;
    }
    let mut runs = (0..passes.max(1))
        .map(|_| run_pass(model, utts, cfg, plan))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|p| p.wall);
    let walls: Vec<f64> = runs.iter().map(|p| p.wall.as_secs_f64()).collect();
    let total = median(walls.clone());
    let mid = &runs[runs.len() / 2];
    let frames: usize = utts.iter().map(|u| u.rows()).sum();
    let audio = report::audio_seconds(frames);
    let ms = |d: &Duration| d.as_secs_f64() * 1e3;
    let secs = |f: fn(&PhaseTimings) -> Duration| mid.phases.as_ref().map(|p| f(p).as_secs_f64());
    Ok(BenchRow {
        engine: plan.engine,
        batch: plan.batch,
        beam: cfg.beam_size,
        workers: plan.workers,
        vocab_size: model.spec.vocab_size,
        ctc_weight: cfg.fusion.lambda,
        lm_weight: cfg.fusion.kappa,
        num_utts: utts.len(),
        audio_seconds: audio,
        total_seconds: total,
        min_seconds: walls[0],
        max_seconds: walls[walls.len() - 1],
        per_utt_mean_ms: total * 1e3 / utts.len() as f64,
        per_utt_median_ms: median(mid.per_utt.iter().map(ms).collect()),
        rtf: report::rtf(total, audio),
        speedup: None,
        equivalence: Equivalence::Skipped,
        encode_seconds: secs(|p| p.encode),
        attention_seconds: secs(|p| p.attention),
        lm_seconds: secs(|p| p.lm),
        ctc_seconds: secs(|p| p.ctc),
        prune_seconds: secs(|p| p.prune),
        bookkeeping_seconds: secs(|p| p.bookkeeping),
    })
}

/// Runs the whole benchmark described by `args`. Verification, when asked
/// for, happens before any timing and aborts on the first mismatch.
pub fn run_bench(args: &BenchArgs) -> Result<BenchReport, BenchError> {
    let cfg = args.beam_config()?;
    let plans = args.plan()?;
    let (model, set) = prepare_data(args)?;
    let utts = &set.utterances;
    if args.verify {
        verify(&model, utts, &cfg, &plans)?;
    }
    let mut rows = Vec::with_capacity(plans.len());
    for &plan in &plans {
        let mut row = time_plan(&model, utts, &cfg, plan, args.warmup, args.passes)?;
        if args.verify {
            row.equivalence = Equivalence::Pass;
        }
        rows.push(row);
    }
    if let Some(base) = rows
        .iter()
        .find(|r| r.engine == EngineKind::Scalar)
        .map(|r| r.total_seconds)
    {
        for r in &mut rows {
            r.speedup = Some(base / r.total_seconds);
        }
    }
    Ok(BenchReport::new(rows))
}
