//! Beam search over fused attention, CTC prefix and LM scores.
//!
//! Both engines run the same search:
//!
//! 1. every live hypothesis proposes its `k = min(B, |L|)` best next labels
//!    by attention score (local pruning);
//! 2. each proposal is scored with the fused delta
//!    `(1 - lambda) * att + lambda * ctc + kappa * lm`;
//! 3. the `B` best totals `alpha + delta` per utterance survive (global
//!    pruning), ties going to the earlier hypothesis and then the better
//!    local rank;
//! 4. survivors that emitted eos are finished and free their slot for good.
//!
//! At the first step only the root hypothesis exists. An utterance ends once
//! no hypothesis is live, once none of its proposals has a finite score (the
//! live hypotheses are then returned as truncated), or after
//! `ceil(max_len_ratio * T)` steps.

mod scalar;
mod vectorized;

use std::cmp::Ordering;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::scorers::{EncoderOutput, FusionWeights, LabelId};

pub use scalar::{decode_scalar_reference, search_scalar};
pub use vectorized::{
    decode_batch_vectorized, decode_batch_vectorized_profiled, search_vectorized, step_vectorized,
    BeamState,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len_ratio: f64,
    pub fusion: FusionWeights,
    pub nbest: usize,
    /// Added to the final score once per label, eos included.
    pub length_penalty: f64,
    /// Re-check every global pruning against a full sort (vectorized engine).
    pub check_pruning: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 20,
            max_len_ratio: 1.0,
            fusion: FusionWeights::default(),
            nbest: 1,
            length_penalty: 0.0,
            check_pruning: false,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return param_err("beam size must be at least 1");
        }
        if !(self.max_len_ratio > 0.0 && self.max_len_ratio.is_finite()) {
            return param_err(format!("max_len_ratio {} must be finite and > 0", self.max_len_ratio));
        }
        if self.nbest == 0 || self.nbest > self.beam_size {
            return param_err(format!("nbest {} outside 1..={}", self.nbest, self.beam_size));
        }
        if !self.length_penalty.is_finite() {
            return param_err("length penalty must be finite");
        }
        self.fusion.validate()
    }

    /// Step budget for an utterance of `frames` encoder frames.
    pub fn max_steps(&self, frames: usize) -> usize {
        (self.max_len_ratio * frames as f64).ceil() as usize
    }

    /// Candidate labels proposed per hypothesis.
    pub(crate) fn local_width(&self, vocab_size: usize) -> usize {
        self.beam_size.min(vocab_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted labels without the start symbol; ends with eos unless
    /// `truncated`.
    pub labels: Vec<LabelId>,
    /// Accumulated fused log score.
    pub score: f64,
    /// `score + length_penalty * labels.len()`, the ranking key.
    pub final_score: f64,
    /// Unweighted sums of the per-step component log scores. Components
    /// switched off by a zero weight stay 0.
    pub att_score: f64,
    pub ctc_score: f64,
    pub lm_score: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Best first.
    pub nbest: Vec<Hypothesis>,
    /// Search steps in which the utterance had a live hypothesis.
    pub steps: usize,
    /// Wall-clock time of the decode call that produced this result. In a
    /// batch every utterance reports the whole batch's time.
    pub duration: Duration,
}

/// Wall-clock time per phase of a vectorized decode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub encode: Duration,
    pub attention: Duration,
    pub lm: Duration,
    pub ctc: Duration,
    /// Local and global top-k.
    pub prune: Duration,
    /// Fusion, index tracking, label histories and finalization.
    pub bookkeeping: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.encode + self.attention + self.lm + self.ctc + self.prune + self.bookkeeping
    }

    /// Everything but encoding.
    pub fn search(&self) -> Duration {
        self.total() - self.encode
    }

    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.encode += other.encode;
        self.attention += other.attention;
        self.lm += other.lm;
        self.ctc += other.ctc;
        self.prune += other.prune;
        self.bookkeeping += other.bookkeeping;
    }
}

/// Running per-hypothesis totals shared by both engines.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Totals {
    pub alpha: f64,
    pub att: f64,
    pub ctc: f64,
    pub lm: f64,
}

impl Totals {
    pub fn extend(&self, total: f64, att: f64, ctc: f64, lm: f64) -> Self {
        Self {
            alpha: total,
            att: self.att + att,
            ctc: self.ctc + ctc,
            lm: self.lm + lm,
        }
    }

    pub fn hypothesis(&self, labels: Vec<LabelId>, truncated: bool) -> Hypothesis {
        Hypothesis {
            labels,
            score: self.alpha,
            final_score: self.alpha,
            att_score: self.att,
            ctc_score: self.ctc,
            lm_score: self.lm,
            truncated,
        }
    }
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then(a.labels.len().cmp(&b.labels.len()))
        .then_with(|| a.labels.cmp(&b.labels))
}

/// Applies the length penalty, ranks by final score (shorter, then
/// lexicographically smaller label sequences first on ties) and keeps
/// `nbest`. Truncated hypotheses only fill places finished ones cannot.
pub fn finalize(
    mut finished: Vec<Hypothesis>,
    mut truncated: Vec<Hypothesis>,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    if finished.is_empty() && truncated.is_empty() {
        return Err(Error::Internal("search ended without any hypothesis".into()));
    }
    for (h, flag) in finished
        .iter_mut()
        .map(|h| (h, false))
        .chain(truncated.iter_mut().map(|h| (h, true)))
    {
        h.truncated = flag;
        h.final_score = h.score + cfg.length_penalty * h.labels.len() as f64;
    }
    finished.sort_by(rank);
    finished.truncate(cfg.nbest);
    if finished.len() < cfg.nbest {
        truncated.sort_by(rank);
        truncated.truncate(cfg.nbest - finished.len());
        finished.extend(truncated);
    }
    Ok(finished)
}

/// Encoder output for scorers that ignore the audio, such as score tables:
/// `frames` frames of uniform CTC posteriors over `vocab_size` labels and the
/// blank.
pub fn placeholder_encoder_output(frames: usize, vocab_size: usize) -> Result<EncoderOutput> {
    use crate::tensor_ops::ScoreMatrix;
    let p = -((vocab_size + 1) as f64).ln();
    EncoderOutput::from_parts(
        ScoreMatrix::zeros(frames, 1),
        ScoreMatrix::filled(frames, vocab_size + 1, p),
    )
}
