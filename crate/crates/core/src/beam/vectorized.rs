//! Batched engine: all `S x B` hypotheses of a batch advance together.
//!
//! Slot `b` of utterance `s` lives at flat index `s * B + b`. Candidate `j`
//! of slot `b` sits at column `b * k + j` of the utterance's row in the
//! `[S, B * k]` candidate matrix, so a global survivor at column `x` comes
//! from slot `x / k` with local rank `x % k`.

use std::time::Instant;

use super::{finalize, BeamConfig, DecodeResult, Hypothesis, PhaseTimings, Totals};
use crate::error::{param_err, Error, Result};
use crate::scorers::{
    fuse, init_states, select_states, EncoderBatch, LabelId, LabelScorer, ScorerBundle,
    ScorerStates, Survivor,
};
use crate::synth::SyntheticModel;
use crate::tensor_ops::{reshape, topk_rows, FeatureMatrix, IndexMatrix, ScoreMatrix};

/// Search state of one batch.
pub struct BeamState<A: LabelScorer, M: LabelScorer> {
    encs: EncoderBatch,
    /// Scorer states; `scores` holds every slot's accumulated score, `-inf`
    /// on inactive slots.
    states: ScorerStates<A, M>,
    labels: Vec<Vec<LabelId>>,
    last: Vec<LabelId>,
    active: Vec<bool>,
    /// Per-slot sums of attention, CTC and LM log scores.
    parts: Vec<[f64; 3]>,
    steps: Vec<usize>,
    max_steps: Vec<usize>,
    done: Vec<bool>,
    finished: Vec<Vec<Hypothesis>>,
    truncated: Vec<Vec<Hypothesis>>,
}

impl<A: LabelScorer, M: LabelScorer> BeamState<A, M> {
    /// Root state: only slot 0 of each utterance is live.
    pub fn new(bundle: &ScorerBundle<A, M>, encs: EncoderBatch, cfg: &BeamConfig) -> Result<Self> {
        cfg.validate()?;
        if encs.beam() != cfg.beam_size {
            return param_err(format!(
                "encoder batch laid out for beam {}, config has {}",
                encs.beam(),
                cfg.beam_size
            ));
        }
        let n = encs.num_slots();
        let beam = cfg.beam_size;
        let mut states = init_states(bundle, &encs, cfg.fusion)?;
        let active: Vec<bool> = (0..n).map(|i| i % beam == 0).collect();
        for (score, _) in states.scores.iter_mut().zip(&active).filter(|(_, &a)| !a) {
            *score = f64::NEG_INFINITY;
        }
        let utts = encs.num_utterances();
        let max_steps = encs.outputs().iter().map(|o| cfg.max_steps(o.frames)).collect();
        Ok(Self {
            states,
            labels: vec![Vec::new(); n],
            last: vec![bundle.vocab.sos_id(); n],
            active,
            parts: vec![[0.0; 3]; n],
            steps: vec![0; utts],
            max_steps,
            done: vec![false; utts],
            finished: vec![Vec::new(); utts],
            truncated: vec![Vec::new(); utts],
            encs,
        })
    }

    pub fn encoder_batch(&self) -> &EncoderBatch {
        &self.encs
    }

    pub fn scores(&self) -> &[f64] {
        &self.states.scores
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn labels(&self, slot: usize) -> &[LabelId] {
        &self.labels[slot]
    }

    pub fn finished(&self, utt: usize) -> &[Hypothesis] {
        &self.finished[utt]
    }

    pub fn is_done(&self) -> bool {
        self.done.iter().all(|&d| d)
    }

    fn totals(&self, slot: usize) -> Totals {
        let [att, ctc, lm] = self.parts[slot];
        Totals {
            alpha: self.states.scores[slot],
            att,
            ctc,
            lm,
        }
    }

    /// Moves the live hypotheses of `utt` to its truncated pool and ends it.
    fn harvest(&mut self, utt: usize) {
        let beam = self.encs.beam();
        for slot in utt * beam..(utt + 1) * beam {
            if self.active[slot] {
                let h = self.totals(slot).hypothesis(self.labels[slot].clone(), true);
                self.truncated[utt].push(h);
                self.active[slot] = false;
                self.states.scores[slot] = f64::NEG_INFINITY;
            }
        }
        self.done[utt] = true;
    }

    /// Finalizes every utterance. The state must be done.
    pub fn into_results(self, cfg: &BeamConfig) -> Result<Vec<Vec<Hypothesis>>> {
        if !self.is_done() {
            return param_err("search still has live hypotheses");
        }
        self.finished
            .into_iter()
            .zip(self.truncated)
            .map(|(f, t)| finalize(f, t, cfg))
            .collect()
    }
}

fn timed<T>(slot: &mut std::time::Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Checks a global pruning against a stable sort of each row.
fn check_global_prune(cands: &ScoreMatrix, values: &ScoreMatrix, idx: &IndexMatrix) -> Result<()> {
    let mut order: Vec<usize> = Vec::new();
    for r in 0..cands.rows() {
        let row = cands.row(r);
        order.clear();
        order.extend(0..row.len());
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for (j, (&want, &got)) in order.iter().zip(idx.row(r)).enumerate() {
            if want != got || row[want].to_bits() != values.get(r, j).to_bits() {
                return Err(Error::Internal(format!(
                    "global pruning of utterance {r} disagrees with sort at rank {j}: {got} vs {want}"
                )));
            }
        }
    }
    Ok(())
}

/// One search step over every live slot. Utterances without live slots are
/// left untouched.
pub fn step_vectorized<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    state: &mut BeamState<A, M>,
    cfg: &BeamConfig,
    timings: &mut PhaseTimings,
) -> Result<()> {
    let beam = cfg.beam_size;
    if state.encs.beam() != beam {
        return param_err("config beam differs from the state's layout");
    }
    if !state.active.contains(&true) {
        return Ok(());
    }
    let n = state.encs.num_slots();
    let utts = state.encs.num_utterances();
    let k = cfg.local_width(bundle.vocab.size());
    let w = cfg.fusion;
    let eos = bundle.vocab.eos_id();
    let act = state.active.clone();
    let live: Vec<bool> = (0..utts)
        .map(|u| act[u * beam..(u + 1) * beam].contains(&true))
        .collect();

    let (att_rows, att_next) = timed(&mut timings.attention, || {
        bundle
            .att
            .score_batch(&state.encs, &state.states.att, &state.last, &act)
    })?;
    let (local, cand_labels) = timed(&mut timings.prune, || topk_rows(&att_rows, k))?;
    let lm = match &state.states.lm {
        Some(b) => Some(timed(&mut timings.lm, || {
            bundle.lm.score_batch(&state.encs, b, &state.last, &act)
        })?),
        None => None,
    };
    let ctc = match &state.states.ctc {
        Some(s) => Some(timed(&mut timings.ctc, || {
            bundle.ctc.score_batch(&state.encs, s, &cand_labels, &act)
        })?),
        None => None,
    };

    // Fused candidate totals, [S * B, k].
    let bk_start = Instant::now();
    let mut parts = vec![[0.0; 3]; n * k];
    let mut totals = ScoreMatrix::filled(n, k, f64::NEG_INFINITY);
    for i in (0..n).filter(|&i| act[i]) {
        let alpha = state.states.scores[i];
        for j in 0..k {
            let att = local.get(i, j);
            let ctc_d = ctc.as_ref().map_or(0.0, |(d, _)| d.get(i, j));
            let lm_d = lm
                .as_ref()
                .map_or(0.0, |(rows, _)| rows.get(i, cand_labels.get(i, j)));
            totals.set(i, j, alpha + fuse(att, ctc_d, lm_d, w));
            parts[i * k + j] = [att, ctc_d, lm_d];
        }
    }
    timings.bookkeeping += bk_start.elapsed();

    let per_utt = timed(&mut timings.prune, || reshape(totals, utts, beam * k))?;
    let (best, best_idx) = timed(&mut timings.prune, || topk_rows(&per_utt, beam))?;
    if cfg.check_pruning {
        check_global_prune(&per_utt, &best, &best_idx)?;
    }

    let bk_start = Instant::now();
    // Utterances in which nothing can be extended end here.
    for u in 0..utts {
        if live[u] {
            state.steps[u] += 1;
            if best.row(u).iter().all(|&v| v == f64::NEG_INFINITY) {
                state.harvest(u);
            }
        }
    }
    let mut survivors: Vec<Survivor> = (0..n).map(|slot| Survivor { slot, rank: 0 }).collect();
    for u in (0..utts).filter(|&u| live[u] && !state.done[u]) {
        for r in 0..beam {
            let x = best_idx.get(u, r);
            let src = u * beam + x / k;
            if best.get(u, r) > f64::NEG_INFINITY && !act[src] {
                return Err(Error::Internal(format!("survivor from inactive slot {src}")));
            }
            survivors[u * beam + r] = Survivor { slot: src, rank: x % k };
        }
    }
    let advanced = ScorerStates::<A, M> {
        att: att_next,
        lm: lm.map(|(_, b)| b),
        ctc: state.states.ctc.take(),
        scores: std::mem::take(&mut state.states.scores),
    };
    let mut next = select_states(bundle, &advanced, ctc.as_ref().map(|(_, c)| c), &survivors)?;

    let mut labels = Vec::with_capacity(n);
    let mut new_parts = vec![[0.0; 3]; n];
    for u in 0..utts {
        for r in 0..beam {
            let slot = u * beam + r;
            if !live[u] || state.done[u] {
                // Untouched: keep histories and scores.
                labels.push(std::mem::take(&mut state.labels[slot]));
                new_parts[slot] = state.parts[slot];
                next.scores[slot] = advanced.scores[slot];
                continue;
            }
            let Survivor { slot: src, rank } = survivors[slot];
            let value = best.get(u, r);
            if value == f64::NEG_INFINITY {
                labels.push(Vec::new());
                state.active[slot] = false;
                next.scores[slot] = f64::NEG_INFINITY;
                continue;
            }
            let label = cand_labels.get(src, rank);
            let mut hist = state.labels[src].clone();
            hist.push(label);
            let [a, c, l] = parts[src * k + rank];
            let [pa, pc, pl] = state.parts[src];
            new_parts[slot] = [pa + a, pc + c, pl + l];
            if label == eos {
                let t = Totals {
                    alpha: value,
                    att: pa + a,
                    ctc: pc + c,
                    lm: pl + l,
                };
                state.finished[u].push(t.hypothesis(hist, false));
                labels.push(Vec::new());
                state.active[slot] = false;
                next.scores[slot] = f64::NEG_INFINITY;
            } else {
                labels.push(hist);
                state.active[slot] = true;
                state.last[slot] = label;
                next.scores[slot] = value;
            }
        }
    }
    state.labels = labels;
    state.parts = new_parts;
    state.states = next;

    for u in 0..utts {
        if !live[u] || state.done[u] {
            continue;
        }
        let any = state.active[u * beam..(u + 1) * beam].contains(&true);
        if !any {
            state.done[u] = true;
        } else if state.steps[u] >= state.max_steps[u] {
            state.harvest(u);
        }
    }
    timings.bookkeeping += bk_start.elapsed();
    Ok(())
}

/// Runs [`step_vectorized`] until every utterance of `encs` has ended.
pub fn search_vectorized<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    encs: EncoderBatch,
    cfg: &BeamConfig,
    timings: &mut PhaseTimings,
) -> Result<Vec<DecodeResult>> {
    let start = Instant::now();
    let mut state = BeamState::new(bundle, encs, cfg)?;
    while !state.is_done() {
        step_vectorized(bundle, &mut state, cfg, timings)?;
    }
    let steps = state.steps.clone();
    let fin_start = Instant::now();
    let lists = state.into_results(cfg)?;
    timings.bookkeeping += fin_start.elapsed();
    let duration = start.elapsed();
    Ok(lists
        .into_iter()
        .zip(steps)
        .map(|(nbest, steps)| DecodeResult {
            nbest,
            steps,
            duration,
        })
        .collect())
}

/// [`decode_batch_vectorized`] that also reports per-phase timings.
pub fn decode_batch_vectorized_profiled(
    model: &SyntheticModel,
    utterances: &[FeatureMatrix],
    cfg: &BeamConfig,
) -> Result<(Vec<DecodeResult>, PhaseTimings)> {
    if utterances.is_empty() {
        return param_err("empty utterance batch");
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let outputs = timed(&mut timings.encode, || model.encoder.encode_batch(utterances))?;
    let encs = timed(&mut timings.encode, || EncoderBatch::new(outputs, cfg.beam_size))?;
    let mut results = search_vectorized(&model.scorers, encs, cfg, &mut timings)?;
    let duration = start.elapsed();
    for r in &mut results {
        r.duration = duration;
    }
    Ok((results, timings))
}

/// Encodes the batch in one pass and decodes all utterances together.
pub fn decode_batch_vectorized(
    model: &SyntheticModel,
    utterances: &[FeatureMatrix],
    cfg: &BeamConfig,
) -> Result<Vec<DecodeResult>> {
    decode_batch_vectorized_profiled(model, utterances, cfg).map(|(r, _)| r)
}
