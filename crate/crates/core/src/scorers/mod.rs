//! Per-label scorers for S×B hypothesis slots and their shallow fusion.
//!
//! Two kinds of scorer feed the search:
//!
//! * full-vocabulary scorers ([`LabelScorer`]): the attention decoder and the
//!   recurrent LM, which emit a log-distribution over every label for each
//!   slot;
//! * the CTC prefix scorer ([`ctc::CtcPrefixScorer`]), which only scores the
//!   candidate labels that survive local pruning.
//!
//! Every `LabelScorer` has a single-slot entry point used by the scalar
//! reference engine and a batched one used by the vectorized engine. The two
//! must agree bit for bit.

pub mod attention;
pub mod ctc;
pub mod encoder;
pub mod lm;
pub mod table;

use std::fmt::Debug;

use crate::error::{param_err, Result};
use crate::tensor_ops::ScoreMatrix;

pub use attention::{AttBatch, AttDecoderState, AttentionDecoder};
pub use ctc::{CtcCandidates, CtcPrefixScorer, CtcPrefixState};
pub use encoder::{Encoder, EncoderBatch, EncoderOutput};
pub use lm::{LmBatch, LmState, RecurrentLm};
pub use table::TableScorer;

pub type LabelId = usize;

/// Output label inventory. The CTC blank lives just past the last label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    size: usize,
    sos_id: LabelId,
    eos_id: LabelId,
}

impl Vocabulary {
    pub fn new(size: usize, sos_id: LabelId, eos_id: LabelId) -> Result<Self> {
        if sos_id == eos_id {
            return param_err("sos and eos must be distinct labels");
        }
        if sos_id >= size || eos_id >= size {
            return param_err(format!(
                "sos={sos_id} / eos={eos_id} outside a vocabulary of {size} labels"
            ));
        }
        Ok(Self {
            size,
            sos_id,
            eos_id,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sos_id(&self) -> LabelId {
        self.sos_id
    }

    pub fn eos_id(&self) -> LabelId {
        self.eos_id
    }

    pub fn blank_id(&self) -> LabelId {
        self.size
    }
}

/// Shallow-fusion weights: `lambda` on CTC, `1 - lambda` on attention,
/// `kappa` on the LM.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FusionWeights {
    pub lambda: f64,
    pub kappa: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            kappa: 0.3,
        }
    }
}

impl FusionWeights {
    pub fn new(lambda: f64, kappa: f64) -> Result<Self> {
        let w = Self { lambda, kappa };
        w.validate()?;
        Ok(w)
    }

    pub fn attention_only() -> Self {
        Self {
            lambda: 0.0,
            kappa: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return param_err(format!("CTC weight {} outside [0, 1]", self.lambda));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return param_err(format!("LM weight {} must be finite and >= 0", self.kappa));
        }
        Ok(())
    }

    pub fn uses_ctc(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn uses_lm(&self) -> bool {
        self.kappa > 0.0
    }
}

// A zero weight drops the term entirely so that a -inf score under it cannot
// turn into NaN.
#[inline]
fn weighted(w: f64, x: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * x
    }
}

/// `lambda * ctc + (1 - lambda) * att + kappa * lm` for one entry.
#[inline]
pub fn fuse(att: f64, ctc: f64, lm: f64, w: FusionWeights) -> f64 {
    weighted(w.lambda, ctc) + weighted(1.0 - w.lambda, att) + weighted(w.kappa, lm)
}

/// Elementwise [`fuse`] over equally shaped matrices.
pub fn fuse_scores(
    att: &ScoreMatrix,
    ctc: &ScoreMatrix,
    lm: &ScoreMatrix,
    w: FusionWeights,
) -> Result<ScoreMatrix> {
    let shape = (att.rows(), att.cols());
    if (ctc.rows(), ctc.cols()) != shape || (lm.rows(), lm.cols()) != shape {
        return param_err(format!(
            "fusion shapes differ: att {:?}, ctc {:?}, lm {:?}",
            shape,
            (ctc.rows(), ctc.cols()),
            (lm.rows(), lm.cols())
        ));
    }
    let values = att
        .values()
        .iter()
        .zip(ctc.values())
        .zip(lm.values())
        .map(|((&a, &c), &l)| fuse(a, c, l, w))
        .collect();
    ScoreMatrix::new(shape.0, shape.1, values)
}

/// A scorer producing a log-distribution over the full label set for each
/// hypothesis, given the hypothesis' recurrent state and its last label.
///
/// `score` consumes the previous label: it first folds `last` into the state
/// and then predicts the next label, returning the advanced state.
pub trait LabelScorer: Sync {
    /// Per-hypothesis state, as stored in the scalar engine's queue records.
    type State: Clone + Debug + PartialEq + Send;
    /// Stacked state for every slot of a batch.
    type Batch: Clone + Send;

    fn vocab_size(&self) -> usize;

    fn initial_state(&self, enc: &EncoderOutput) -> Self::State;

    /// Single-hypothesis scoring: a log-normalized row over the vocabulary.
    fn score(
        &self,
        enc: &EncoderOutput,
        state: &Self::State,
        last: LabelId,
    ) -> Result<(Vec<f64>, Self::State)>;

    /// Stacks one state per slot (`encs.num_slots()` of them).
    fn stack(&self, encs: &EncoderBatch, states: &[Self::State]) -> Result<Self::Batch>;

    /// Extracts one slot of a stacked batch.
    fn unstack(&self, encs: &EncoderBatch, batch: &Self::Batch, slot: usize) -> Self::State;

    /// Batched scoring over every slot. Rows of inactive slots are `-inf`
    /// and their state is carried over unchanged.
    fn score_batch(
        &self,
        encs: &EncoderBatch,
        batch: &Self::Batch,
        last: &[LabelId],
        active: &[bool],
    ) -> Result<(ScoreMatrix, Self::Batch)>;

    /// Row gather: slot `j` of the result is slot `idx[j]` of `batch`.
    fn select(&self, batch: &Self::Batch, idx: &[usize]) -> Result<Self::Batch>;
}

/// The attention decoder, the LM and the CTC prefix scorer of one model.
#[derive(Clone, Debug)]
pub struct ScorerBundle<A, M> {
    pub vocab: Vocabulary,
    pub att: A,
    pub lm: M,
    pub ctc: CtcPrefixScorer,
}

impl<A: LabelScorer, M: LabelScorer> ScorerBundle<A, M> {
    pub fn new(vocab: Vocabulary, att: A, lm: M) -> Result<Self> {
        if att.vocab_size() != vocab.size() || lm.vocab_size() != vocab.size() {
            return param_err(format!(
                "scorer vocabularies ({}, {}) differ from {}",
                att.vocab_size(),
                lm.vocab_size(),
                vocab.size()
            ));
        }
        Ok(Self {
            vocab,
            att,
            lm,
            ctc: CtcPrefixScorer::new(vocab),
        })
    }
}

/// Stacked scorer state for all S·B slots. Scorers switched off by a zero
/// fusion weight carry no state.
pub struct ScorerStates<A: LabelScorer, M: LabelScorer> {
    pub att: A::Batch,
    pub lm: Option<M::Batch>,
    pub ctc: Option<Vec<CtcPrefixState>>,
    /// Accumulated scores, all zero at t = 0.
    pub scores: Vec<f64>,
}

impl<A: LabelScorer, M: LabelScorer> Clone for ScorerStates<A, M> {
    fn clone(&self) -> Self {
        Self {
            att: self.att.clone(),
            lm: self.lm.clone(),
            ctc: self.ctc.clone(),
            scores: self.scores.clone(),
        }
    }
}

/// Initial states for every slot: each utterance's B slots start from the
/// same state, and the encoder output is shared by reference through `encs`.
pub fn init_states<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    encs: &EncoderBatch,
    fusion: FusionWeights,
) -> Result<ScorerStates<A, M>> {
    let n = encs.num_slots();
    let mut att = Vec::with_capacity(n);
    let mut lm = Vec::with_capacity(n);
    let mut ctc = Vec::with_capacity(n);
    for slot in 0..n {
        let enc = encs.slot_output(slot);
        att.push(bundle.att.initial_state(enc));
        if fusion.uses_lm() {
            lm.push(bundle.lm.initial_state(enc));
        }
        if fusion.uses_ctc() {
            ctc.push(bundle.ctc.initial_state(&enc.ctc_logprobs));
        }
    }
    Ok(ScorerStates {
        att: bundle.att.stack(encs, &att)?,
        lm: if fusion.uses_lm() {
            Some(bundle.lm.stack(encs, &lm)?)
        } else {
            None
        },
        ctc: fusion.uses_ctc().then_some(ctc),
        scores: vec![0.0; n],
    })
}

/// A survivor of global pruning: source slot and local candidate rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Survivor {
    pub slot: usize,
    pub rank: usize,
}

/// Index tracking: every slot takes the state of its survivor's source slot.
/// CTC states come from the surviving candidate in `ctc_candidates` when
/// given, otherwise from the source slot itself.
pub fn select_states<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    states: &ScorerStates<A, M>,
    ctc_candidates: Option<&CtcCandidates>,
    survivors: &[Survivor],
) -> Result<ScorerStates<A, M>> {
    let n = states.scores.len();
    if survivors.len() != n {
        return param_err(format!("{} survivors for {n} slots", survivors.len()));
    }
    if let Some(bad) = survivors.iter().find(|s| s.slot >= n) {
        return param_err(format!("survivor slot {} out of range for {n} slots", bad.slot));
    }
    let idx: Vec<usize> = survivors.iter().map(|s| s.slot).collect();
    let att = bundle.att.select(&states.att, &idx)?;
    let lm = match &states.lm {
        Some(b) => Some(bundle.lm.select(b, &idx)?),
        None => None,
    };
    let ctc = match (&states.ctc, ctc_candidates) {
        (None, _) => None,
        (Some(_), Some(cands)) => Some(
            survivors
                .iter()
                .map(|s| cands.get(s.slot, s.rank).cloned())
                .collect::<Result<Vec<_>>>()?,
        ),
        (Some(cur), None) => Some(idx.iter().map(|&i| cur[i].clone()).collect()),
    };
    let scores = idx.iter().map(|&i| states.scores[i]).collect();
    Ok(ScorerStates {
        att,
        lm,
        ctc,
        scores,
    })
}
