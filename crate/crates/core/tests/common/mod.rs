//! Oracles shared by the integration tests. They rescore label sequences
//! with the single-hypothesis scorer entry points only.

#![allow(dead_code)]

use vecbeam::beam::{finalize, BeamConfig, Hypothesis};
use vecbeam::scorers::{
    fuse, EncoderOutput, LabelId, LabelScorer, ScorerBundle, TableScorer, Vocabulary,
};
use vecbeam::synth::{
    generate_model, generate_utterances, SyntheticModel, SyntheticModelSpec, UtteranceSetSpec,
};
use vecbeam::tensor_ops::FeatureMatrix;

/// Per-step `(fused, att, ctc, lm)` deltas of `labels` fed after sos.
pub fn rescore<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    enc: &EncoderOutput,
    labels: &[LabelId],
    cfg: &BeamConfig,
) -> Vec<(f64, f64, f64, f64)> {
    let w = cfg.fusion;
    let mut att = bundle.att.initial_state(enc);
    let mut lm = bundle.lm.initial_state(enc);
    let mut ctc = bundle.ctc.initial_state(&enc.ctc_logprobs);
    let mut last = bundle.vocab.sos_id();
    let mut out = Vec::new();
    for &c in labels {
        let (a_row, a_next) = bundle.att.score(enc, &att, last).unwrap();
        let l = if w.uses_lm() {
            let (row, next) = bundle.lm.score(enc, &lm, last).unwrap();
            lm = next;
            row[c]
        } else {
            0.0
        };
        let x = if w.uses_ctc() {
            let (d, next) = bundle.ctc.extend(&enc.ctc_logprobs, &ctc, c).unwrap();
            ctc = next;
            d
        } else {
            0.0
        };
        out.push((fuse(a_row[c], x, l, w), a_row[c], x, l));
        att = a_next;
        last = c;
    }
    out
}

/// Full enumeration of the search space explored in `depth` steps when
/// nothing is pruned: every eos-terminated sequence of at most `depth` labels
/// plus every eos-free sequence of exactly `depth` labels (truncated).
pub fn exhaustive_nbest<A: LabelScorer, M: LabelScorer>(
    bundle: &ScorerBundle<A, M>,
    enc: &EncoderOutput,
    depth: usize,
    cfg: &BeamConfig,
) -> Vec<Hypothesis> {
    let eos = bundle.vocab.eos_id();
    let size = bundle.vocab.size();
    let mut finished = Vec::new();
    let mut truncated = Vec::new();
    let mut frontier: Vec<Vec<LabelId>> = vec![Vec::new()];
    for step in 1..=depth {
        let mut next = Vec::new();
        for prefix in &frontier {
            for c in 0..size {
                let mut seq = prefix.clone();
                seq.push(c);
                if c == eos {
                    finished.push(seq);
                } else if step == depth {
                    truncated.push(seq);
                } else {
                    next.push(seq);
                }
            }
        }
        frontier = next;
    }
    let to_hyp = |labels: Vec<LabelId>| {
        let deltas = rescore(bundle, enc, &labels, cfg);
        let sum = |f: fn(&(f64, f64, f64, f64)) -> f64| deltas.iter().map(f).sum::<f64>();
        Hypothesis {
            score: sum(|d| d.0),
            final_score: 0.0,
            att_score: sum(|d| d.1),
            ctc_score: sum(|d| d.2),
            lm_score: sum(|d| d.3),
            labels,
            truncated: false,
        }
    };
    // Sequences CTC rules out (too few frames) cannot be reached.
    let reachable = |h: &Hypothesis| h.score > f64::NEG_INFINITY;
    finalize(
        finished.into_iter().map(to_hyp).filter(reachable).collect(),
        truncated.into_iter().map(to_hyp).filter(reachable).collect(),
        cfg,
    )
    .unwrap()
}

pub fn table_bundle(
    vocab: Vocabulary,
    depth: usize,
    seed: u64,
) -> ScorerBundle<TableScorer, TableScorer> {
    let att = TableScorer::random(vocab.size(), depth, vocab.eos_id(), seed);
    let lm = TableScorer::random(vocab.size(), depth, vocab.eos_id(), seed ^ 0x5555);
    ScorerBundle::new(vocab, att, lm).unwrap()
}

pub fn small_model(seed: u64, vocab_size: usize) -> SyntheticModel {
    generate_model(&SyntheticModelSpec {
        seed,
        d_feat: 7,
        d_enc: 12,
        d_dec: 10,
        d_lm: 8,
        vocab_size,
    })
    .unwrap()
}

pub fn utterances(seed: u64, count: usize, frames: (usize, usize), d_feat: usize) -> Vec<FeatureMatrix> {
    generate_utterances(&UtteranceSetSpec {
        seed,
        count,
        min_frames: frames.0,
        max_frames: frames.1,
        d_feat,
    })
    .unwrap()
    .utterances
}

pub fn assert_same_nbest(a: &[Hypothesis], b: &[Hypothesis], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: list lengths");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.labels, y.labels, "{what}: labels at rank {i}");
        assert_eq!(x.truncated, y.truncated, "{what}: truncation flag at rank {i}");
        for (u, v, name) in [
            (x.score, y.score, "score"),
            (x.final_score, y.final_score, "final score"),
            (x.att_score, y.att_score, "att"),
            (x.ctc_score, y.ctc_score, "ctc"),
            (x.lm_score, y.lm_score, "lm"),
        ] {
            assert!((u - v).abs() <= tol, "{what}: {name} at rank {i}: {u} vs {v}");
        }
    }
}
