//! CTC prefix scoring in the log domain.
//!
//! For a prefix `g`, `gamma_n[t]` / `gamma_b[t]` hold the log probability of
//! all frame alignments of `0..=t` that collapse to `g` and end in a
//! non-blank / blank symbol. Extending `g` by label `c` gives `h = g·c`:
//!
//! ```text
//! phi[t]     = gamma_b(g)[t-1] + [c != last(g)] * gamma_n(g)[t-1]
//! gamma_n(h)[t] = p(c|t)     * (gamma_n(h)[t-1] + phi[t])
//! gamma_b(h)[t] = p(blank|t) * (gamma_b(h)[t-1] + gamma_n(h)[t-1])
//! psi(h)     = sum_t p(c|t) * phi[t]
//! ```
//!
//! (written in the probability domain; all arithmetic below is log-sum-exp).
//! `psi(h)` is the probability that the collapsed output starts with `h`. The
//! end-of-sentence extension scores `gamma_n(g)[T-1] + gamma_b(g)[T-1]`, the
//! probability that the output is exactly `g`.
//!
//! A prefix of length `n` needs at least `n` frames, so the recursion for an
//! extension of `g` starts at frame `|g|`; earlier entries are exactly `-inf`.

use super::{EncoderBatch, LabelId, Vocabulary};
use crate::error::{param_err, Result};
use crate::tensor_ops::{logaddexp, logsumexp_nonempty, IndexMatrix, ScoreMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct CtcPrefixState {
    pub gamma_n: Vec<f64>,
    pub gamma_b: Vec<f64>,
    pub last_label: Option<LabelId>,
    /// Number of labels in the prefix.
    pub len: usize,
    /// `log psi` of this prefix; zero for the empty prefix.
    pub log_psi: f64,
}

impl CtcPrefixState {
    /// Stand-in for slots that are not being expanded.
    fn inert() -> Self {
        Self {
            gamma_n: Vec::new(),
            gamma_b: Vec::new(),
            last_label: None,
            len: 0,
            log_psi: f64::NEG_INFINITY,
        }
    }
}

/// Extended states for the `k` candidates of every slot, row-major.
#[derive(Clone, Debug)]
pub struct CtcCandidates {
    k: usize,
    states: Vec<CtcPrefixState>,
}

impl CtcCandidates {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, slot: usize, rank: usize) -> Result<&CtcPrefixState> {
        if rank >= self.k {
            return param_err(format!("candidate rank {rank} >= {}", self.k));
        }
        self.states
            .get(slot * self.k + rank)
            .map_or_else(|| param_err(format!("no CTC candidates for slot {slot}")), Ok)
    }
}

#[derive(Clone, Debug)]
pub struct CtcPrefixScorer {
    vocab: Vocabulary,
}

impl CtcPrefixScorer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// State of the empty prefix: no non-blank mass, blank mass is the running
    /// product of blank posteriors.
    pub fn initial_state(&self, logp: &ScoreMatrix) -> CtcPrefixState {
        let blank = self.vocab.blank_id();
        let frames = logp.rows();
        let mut gamma_b = Vec::with_capacity(frames);
        let mut acc = 0.0;
        for t in 0..frames {
            acc += logp.get(t, blank);
            gamma_b.push(acc);
        }
        CtcPrefixState {
            gamma_n: vec![f64::NEG_INFINITY; frames],
            gamma_b,
            last_label: None,
            len: 0,
            log_psi: 0.0,
        }
    }

    fn check(&self, logp: &ScoreMatrix, g: &CtcPrefixState, c: LabelId) -> Result<()> {
        if c >= self.vocab.size() {
            return param_err(format!("CTC candidate {c} is not an output label"));
        }
        if logp.cols() != self.vocab.size() + 1 {
            return param_err(format!(
                "CTC posteriors have {} columns, expected {}",
                logp.cols(),
                self.vocab.size() + 1
            ));
        }
        if g.gamma_n.len() != logp.rows() || g.gamma_b.len() != logp.rows() {
            return param_err("CTC prefix state length does not match the utterance");
        }
        Ok(())
    }

    /// Log of the prefix probability ratio `psi(g·c) / psi(g)` and the state
    /// of `g·c`. For `c == eos` the ratio uses the exact-match probability of
    /// `g` and the returned state is `g`'s.
    pub fn extend(
        &self,
        logp: &ScoreMatrix,
        g: &CtcPrefixState,
        c: LabelId,
    ) -> Result<(f64, CtcPrefixState)> {
        self.check(logp, g, c)?;
        if c == self.vocab.eos_id() {
            return Ok((delta(end_log_prob(g), g.log_psi), g.clone()));
        }
        let mut phi = vec![0.0; logp.rows()];
        fill_phi(g, g.last_label == Some(c), &mut phi);
        let h = extend_with_phi(logp, self.vocab.blank_id(), &phi, g, c);
        Ok((delta(h.log_psi, g.log_psi), h))
    }

    /// Scores the `candidates[i]` labels of every active slot `i`. Rows of
    /// inactive slots are `-inf`.
    pub fn score_batch(
        &self,
        encs: &EncoderBatch,
        states: &[CtcPrefixState],
        candidates: &IndexMatrix,
        active: &[bool],
    ) -> Result<(ScoreMatrix, CtcCandidates)> {
        let n = states.len();
        if candidates.rows() != n || active.len() != n || n != encs.num_slots() {
            return param_err(format!(
                "{n} CTC states with {} candidate rows, {} flags, {} slots",
                candidates.rows(),
                active.len(),
                encs.num_slots()
            ));
        }
        let k = candidates.cols();
        let mut deltas = ScoreMatrix::filled(n, k, f64::NEG_INFINITY);
        let mut out = Vec::with_capacity(n * k);
        let mut phi_all = vec![0.0; encs.max_frames()];
        let mut phi_excl = vec![0.0; encs.max_frames()];
        for (i, g) in states.iter().enumerate() {
            if !active[i] {
                out.extend(std::iter::repeat_with(CtcPrefixState::inert).take(k));
                continue;
            }
            let logp = &encs.slot_output(i).ctc_logprobs;
            let frames = logp.rows();
            let row = candidates.row(i);
            for &c in row {
                self.check(logp, g, c)?;
            }
            // Shared across the slot's candidates; the exclusive variant only
            // matters for a repeat of the last label.
            fill_phi(g, false, &mut phi_all[..frames]);
            if let Some(last) = g.last_label.filter(|l| row.contains(l)) {
                debug_assert!(last != self.vocab.eos_id());
                fill_phi(g, true, &mut phi_excl[..frames]);
            }
            for (j, &c) in row.iter().enumerate() {
                if c == self.vocab.eos_id() {
                    deltas.set(i, j, delta(end_log_prob(g), g.log_psi));
                    out.push(g.clone());
                    continue;
                }
                let phi = if g.last_label == Some(c) {
                    &phi_excl[..frames]
                } else {
                    &phi_all[..frames]
                };
                let h = extend_with_phi(logp, self.vocab.blank_id(), phi, g, c);
                deltas.set(i, j, delta(h.log_psi, g.log_psi));
                out.push(h);
            }
        }
        Ok((deltas, CtcCandidates { k, states: out }))
    }
}

#[inline]
fn delta(new: f64, old: f64) -> f64 {
    if old == f64::NEG_INFINITY || new == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        new - old
    }
}

/// `log` probability that the collapsed output is exactly the prefix.
fn end_log_prob(g: &CtcPrefixState) -> f64 {
    match (g.gamma_n.last(), g.gamma_b.last()) {
        (Some(&n), Some(&b)) => logaddexp(n, b),
        _ => f64::NEG_INFINITY,
    }
}

fn fill_phi(g: &CtcPrefixState, repeat: bool, phi: &mut [f64]) {
    let start = g.len.min(phi.len());
    phi[..start].fill(f64::NEG_INFINITY);
    for t in start..phi.len() {
        phi[t] = if t == 0 {
            // Only reachable for the empty prefix: probability one before
            // the first frame.
            0.0
        } else if repeat {
            g.gamma_b[t - 1]
        } else {
            logaddexp(g.gamma_b[t - 1], g.gamma_n[t - 1])
        };
    }
}

fn extend_with_phi(
    logp: &ScoreMatrix,
    blank: usize,
    phi: &[f64],
    g: &CtcPrefixState,
    c: LabelId,
) -> CtcPrefixState {
    let frames = logp.rows();
    let start = g.len.min(frames);
    let mut gamma_n = vec![f64::NEG_INFINITY; frames];
    let mut gamma_b = vec![f64::NEG_INFINITY; frames];
    let mut terms = Vec::with_capacity(frames - start);
    let (mut prev_n, mut prev_b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in start..frames {
        let row = logp.row(t);
        let (pc, pb) = (row[c], row[blank]);
        let n = pc + logaddexp(prev_n, phi[t]);
        let b = pb + logaddexp(prev_b, prev_n);
        terms.push(pc + phi[t]);
        gamma_n[t] = n;
        gamma_b[t] = b;
        prev_n = n;
        prev_b = b;
    }
    let log_psi = if terms.is_empty() {
        f64::NEG_INFINITY
    } else {
        logsumexp_nonempty(&terms)
    };
    CtcPrefixState {
        gamma_n,
        gamma_b,
        last_label: Some(c),
        len: g.len + 1,
        log_psi,
    }
}
