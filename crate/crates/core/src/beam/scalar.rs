//! Reference engine: one queue record per hypothesis, expanded one at a time.

use std::collections::VecDeque;
use std::time::Instant;

use super::{finalize, BeamConfig, DecodeResult, Hypothesis, Totals};
use crate::error::Result;
use crate::scorers::{
    fuse, CtcPrefixState, EncoderOutput, LabelId, LabelScorer, ScorerBundle,
};
use crate::synth::SyntheticModel;
use crate::tensor_ops::{topk_indices, FeatureMatrix};

/// Everything a hypothesis carries between steps.
struct Record<A: LabelScorer, M: LabelScorer> {
    labels: Vec<LabelId>,
    last: LabelId,
    totals: Totals,
    att: A::State,
    lm: Option<M::State>,
    ctc: Option<CtcPrefixState>,
}

/// A record after scoring, with the advanced recurrent states its
/// candidates share.
struct Expanded<A: LabelScorer, M: LabelScorer> {
    record: Record<A, M>,
    att: A::State,
    lm: Option<M::State>,
}

struct Candidate {
    parent: usize,
    label: LabelId,
    total: f64,
    att: f64,
    ctc: f64,
    lm: f64,
    ctc_state: Option<CtcPrefixState>,
}

/// Decodes one utterance with the queue-based reference search.
pub fn search_scalar<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    enc: &EncoderOutput,
    cfg: &BeamConfig,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let start = Instant::now();
    let w = cfg.fusion;
    let vocab = bundle.vocab;
    let k = cfg.local_width(vocab.size());
    let max_steps = cfg.max_steps(enc.frames);

    let mut queue: VecDeque<Record<A, M>> = VecDeque::new();
    queue.push_back(Record {
        labels: Vec::new(),
        last: vocab.sos_id(),
        totals: Totals::default(),
        att: bundle.att.initial_state(enc),
        lm: w.uses_lm().then(|| bundle.lm.initial_state(enc)),
        ctc: w.uses_ctc().then(|| bundle.ctc.initial_state(&enc.ctc_logprobs)),
    });
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut truncated: Vec<Hypothesis> = Vec::new();
    let mut steps = 0;
    let mut top = Vec::with_capacity(k + 1);

    while !queue.is_empty() && steps < max_steps {
        steps += 1;
        let mut parents: Vec<Expanded<A, M>> = Vec::with_capacity(queue.len());
        let mut candidates: Vec<Candidate> = Vec::with_capacity(queue.len() * k);
        while let Some(record) = queue.pop_front() {
            let (att_row, att) = bundle.att.score(enc, &record.att, record.last)?;
            topk_indices(&att_row, k, &mut top);
            let (lm_row, lm) = match &record.lm {
                Some(s) => {
                    let (row, next) = bundle.lm.score(enc, s, record.last)?;
                    (Some(row), Some(next))
                }
                None => (None, None),
            };
            for &c in &top {
                let (ctc, ctc_state) = match &record.ctc {
                    Some(g) => {
                        let (d, h) = bundle.ctc.extend(&enc.ctc_logprobs, g, c)?;
                        (d, Some(h))
                    }
                    None => (0.0, None),
                };
                let lm_d = lm_row.as_ref().map_or(0.0, |r| r[c]);
                let fused = fuse(att_row[c], ctc, lm_d, w);
                candidates.push(Candidate {
                    parent: parents.len(),
                    label: c,
                    total: record.totals.alpha + fused,
                    att: att_row[c],
                    ctc,
                    lm: lm_d,
                    ctc_state,
                });
            }
            parents.push(Expanded { record, att, lm });
        }

        let totals: Vec<f64> = candidates.iter().map(|c| c.total).collect();
        topk_indices(&totals, cfg.beam_size.min(totals.len()), &mut top);
        if top.iter().all(|&i| totals[i] == f64::NEG_INFINITY) {
            truncated.extend(
                parents
                    .into_iter()
                    .map(|p| p.record.totals.hypothesis(p.record.labels, true)),
            );
            break;
        }
        for &i in &top {
            let cand = &mut candidates[i];
            if cand.total == f64::NEG_INFINITY {
                continue;
            }
            let parent = &parents[cand.parent];
            let mut labels = parent.record.labels.clone();
            labels.push(cand.label);
            let totals = parent
                .record
                .totals
                .extend(cand.total, cand.att, cand.ctc, cand.lm);
            if cand.label == vocab.eos_id() {
                finished.push(totals.hypothesis(labels, false));
                continue;
            }
            queue.push_back(Record {
                labels,
                last: cand.label,
                totals,
                att: parent.att.clone(),
                lm: parent.lm.clone(),
                ctc: cand.ctc_state.take(),
            });
        }
    }
    truncated.extend(queue.into_iter().map(|r| r.totals.hypothesis(r.labels, true)));

    let nbest = finalize(finished, truncated, cfg)?;
    Ok(DecodeResult {
        nbest,
        steps,
        duration: start.elapsed(),
    })
}

/// Encodes `utterance` frame by frame and runs [`search_scalar`].
pub fn decode_scalar_reference(
    model: &SyntheticModel,
    utterance: &FeatureMatrix,
    cfg: &BeamConfig,
) -> Result<DecodeResult> {
    let start = Instant::now();
    let enc = model.encoder.encode(utterance)?;
    let mut result = search_scalar(&model.scorers, &enc, cfg)?;
    result.duration = start.elapsed();
    Ok(result)
}
