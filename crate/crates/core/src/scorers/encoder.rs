//! Encoder stub: per-frame affine map + tanh, plus an affine + log-softmax
//! CTC head over the labels and the blank.

use crate::error::{param_err, Result};
use crate::tensor_ops::{
    log_softmax_in_place, logsumexp_nonempty, matmul_rows, matvec_into, FeatureMatrix,
    ScoreMatrix,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    /// `[d_enc, d_feat]`
    pub(crate) w: ScoreMatrix,
    pub(crate) b: Vec<f64>,
    /// `[|L| + 1, d_enc]`, blank last.
    pub(crate) ctc_w: ScoreMatrix,
    pub(crate) ctc_b: Vec<f64>,
}

/// Encoder output for one utterance. Holds exactly `frames` rows; padding to
/// a batch maximum is done by [`EncoderBatch`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub frames: usize,
    /// `[frames, d_enc]`
    pub hidden: ScoreMatrix,
    /// `[frames, |L| + 1]`, each row log-normalized.
    pub ctc_logprobs: ScoreMatrix,
}

impl EncoderOutput {
    /// Wraps externally produced encoder states, checking that every CTC row
    /// is a log-distribution.
    pub fn from_parts(hidden: ScoreMatrix, ctc_logprobs: ScoreMatrix) -> Result<Self> {
        if hidden.rows() != ctc_logprobs.rows() {
            return param_err(format!(
                "hidden has {} frames but CTC posteriors have {}",
                hidden.rows(),
                ctc_logprobs.rows()
            ));
        }
        if hidden.rows() == 0 {
            return param_err("encoder output needs at least one frame");
        }
        for (t, row) in ctc_logprobs.iter_rows().enumerate() {
            let norm = logsumexp_nonempty(row);
            if norm.abs() > 1e-9 {
                return param_err(format!("CTC row {t} is not log-normalized (lse={norm})"));
            }
        }
        Ok(Self {
            frames: hidden.rows(),
            hidden,
            ctc_logprobs,
        })
    }
}

impl Encoder {
    pub fn new(w: ScoreMatrix, b: Vec<f64>, ctc_w: ScoreMatrix, ctc_b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() || ctc_w.cols() != w.rows() || ctc_b.len() != ctc_w.rows() {
            return param_err("encoder weight shapes are inconsistent");
        }
        Ok(Self { w, b, ctc_w, ctc_b })
    }

    pub fn d_feat(&self) -> usize {
        self.w.cols()
    }

    pub fn d_enc(&self) -> usize {
        self.w.rows()
    }

    fn check_input(&self, feats: &FeatureMatrix) -> Result<()> {
        if feats.rows() == 0 {
            return param_err("utterance with zero frames");
        }
        if feats.cols() != self.d_feat() {
            return param_err(format!(
                "feature width {} does not match encoder input {}",
                feats.cols(),
                self.d_feat()
            ));
        }
        Ok(())
    }

    /// Frame-by-frame encoding of a single utterance.
    pub fn encode(&self, feats: &FeatureMatrix) -> Result<EncoderOutput> {
        self.check_input(feats)?;
        let t = feats.rows();
        let mut hidden = ScoreMatrix::zeros(t, self.d_enc());
        let mut ctc = ScoreMatrix::zeros(t, self.ctc_w.rows());
        for f in 0..t {
            let h = hidden.row_mut(f);
            matvec_into(&self.w, feats.row(f), Some(&self.b), h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            let out = ctc.row_mut(f);
            matvec_into(&self.ctc_w, hidden.row(f), Some(&self.ctc_b), out);
            log_softmax_in_place(out);
        }
        Ok(EncoderOutput {
            frames: t,
            hidden,
            ctc_logprobs: ctc,
        })
    }

    /// Encodes S utterances with one batched product over all their frames.
    pub fn encode_batch(&self, utterances: &[FeatureMatrix]) -> Result<Vec<EncoderOutput>> {
        if utterances.is_empty() {
            return param_err("empty utterance batch");
        }
        for u in utterances {
            self.check_input(u)?;
        }
        let total: usize = utterances.iter().map(|u| u.rows()).sum();
        let mut stacked = Vec::with_capacity(total * self.d_feat());
        for u in utterances {
            stacked.extend_from_slice(u.values());
        }
        let stacked = ScoreMatrix::new(total, self.d_feat(), stacked)?;
        let hidden = matmul_rows(&self.w, &stacked, Some(&self.b)).into_values();
        let hidden = ScoreMatrix::new(total, self.d_enc(), hidden.into_iter().map(f64::tanh).collect())?;
        let mut ctc = matmul_rows(&self.ctc_w, &hidden, Some(&self.ctc_b));
        for r in 0..total {
            log_softmax_in_place(ctc.row_mut(r));
        }

        let mut outputs = Vec::with_capacity(utterances.len());
        let mut start = 0;
        for u in utterances {
            let t = u.rows();
            let h = hidden.values()[start * self.d_enc()..(start + t) * self.d_enc()].to_vec();
            let c = ctc.values()[start * ctc.cols()..(start + t) * ctc.cols()].to_vec();
            outputs.push(EncoderOutput {
                frames: t,
                hidden: ScoreMatrix::new(t, self.d_enc(), h)?,
                ctc_logprobs: ScoreMatrix::new(t, ctc.cols(), c)?,
            });
            start += t;
        }
        Ok(outputs)
    }
}

/// Encoder outputs of S utterances laid out for S×B hypothesis slots.
///
/// Slot `s * beam + b` reads utterance `s`. Outputs are shared by every slot
/// of an utterance rather than copied. The transposed hidden matrices are a
/// layout for batched attention energies.
#[derive(Clone, Debug)]
pub struct EncoderBatch {
    outputs: Vec<EncoderOutput>,
    hidden_t: Vec<ScoreMatrix>,
    beam: usize,
    max_frames: usize,
}

impl EncoderBatch {
    pub fn new(outputs: Vec<EncoderOutput>, beam: usize) -> Result<Self> {
        if outputs.is_empty() {
            return param_err("empty encoder batch");
        }
        if beam == 0 {
            return param_err("beam size must be at least 1");
        }
        let hidden_t = outputs.iter().map(|o| o.hidden.transpose()).collect();
        let max_frames = outputs.iter().map(|o| o.frames).max().unwrap_or(0);
        Ok(Self {
            outputs,
            hidden_t,
            beam,
            max_frames,
        })
    }

    pub fn num_utterances(&self) -> usize {
        self.outputs.len()
    }

    pub fn beam(&self) -> usize {
        self.beam
    }

    pub fn num_slots(&self) -> usize {
        self.outputs.len() * self.beam
    }

    pub fn max_frames(&self) -> usize {
        self.max_frames
    }

    #[inline]
    pub fn slot_utterance(&self, slot: usize) -> usize {
        slot / self.beam
    }

    #[inline]
    pub fn slot_output(&self, slot: usize) -> &EncoderOutput {
        &self.outputs[slot / self.beam]
    }

    pub fn output(&self, utt: usize) -> &EncoderOutput {
        &self.outputs[utt]
    }

    /// `[d_enc, frames]` view of utterance `utt`'s hidden states.
    pub(crate) fn hidden_t(&self, utt: usize) -> &ScoreMatrix {
        &self.hidden_t[utt]
    }

    pub fn outputs(&self) -> &[EncoderOutput] {
        &self.outputs
    }
}
