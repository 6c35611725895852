//! Fixed score tables keyed by label prefix, for small exhaustively checkable
//! search problems.

use std::collections::HashMap;

use super::{EncoderBatch, EncoderOutput, LabelId, LabelScorer};
use crate::error::{param_err, Result};
use crate::synth::SplitMix64;
use crate::tensor_ops::{log_softmax_in_place, ScoreMatrix};

/// Returns a fixed log-distribution for every emitted prefix. Prefixes absent
/// from the table get the uniform distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TableScorer {
    vocab_size: usize,
    rows: HashMap<Vec<LabelId>, Vec<f64>>,
}

impl TableScorer {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            rows: HashMap::new(),
        }
    }

    /// Sets the (log-normalized) row used after `prefix` has been emitted.
    pub fn insert(&mut self, prefix: Vec<LabelId>, logits: &[f64]) -> Result<()> {
        if logits.len() != self.vocab_size {
            return param_err(format!("row of {} for vocabulary {}", logits.len(), self.vocab_size));
        }
        let mut row = logits.to_vec();
        log_softmax_in_place(&mut row);
        self.rows.insert(prefix, row);
        Ok(())
    }

    /// Random table over every prefix of up to `depth` labels not containing
    /// `eos`.
    pub fn random(vocab_size: usize, depth: usize, eos: LabelId, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut table = Self::new(vocab_size);
        let mut frontier = vec![Vec::new()];
        for level in 0..=depth {
            let mut next = Vec::new();
            for prefix in frontier {
                let logits: Vec<f64> = (0..vocab_size).map(|_| 3.0 * rng.next_feature()).collect();
                table
                    .insert(prefix.clone(), &logits)
                    .expect("row width matches vocabulary");
                if level < depth {
                    for l in (0..vocab_size).filter(|&l| l != eos) {
                        let mut p = prefix.clone();
                        p.push(l);
                        next.push(p);
                    }
                }
            }
            frontier = next;
        }
        table
    }

    /// Log-probabilities after `prefix`.
    pub fn row(&self, prefix: &[LabelId]) -> Vec<f64> {
        self.rows
            .get(prefix)
            .cloned()
            .unwrap_or_else(|| vec![-(self.vocab_size as f64).ln(); self.vocab_size])
    }
}

/// Every label fed so far, starting with the start-of-sequence label.
pub type TableState = Vec<LabelId>;

impl LabelScorer for TableScorer {
    type State = TableState;
    type Batch = Vec<TableState>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn initial_state(&self, _enc: &EncoderOutput) -> TableState {
        Vec::new()
    }

    fn score(&self, _enc: &EncoderOutput, state: &TableState, last: LabelId) -> Result<(Vec<f64>, TableState)> {
        if last >= self.vocab_size {
            return param_err(format!("label {last} outside vocabulary of {}", self.vocab_size));
        }
        let mut next = state.clone();
        next.push(last);
        Ok((self.row(&next[1..]), next))
    }

    fn stack(&self, encs: &EncoderBatch, states: &[TableState]) -> Result<Vec<TableState>> {
        if states.len() != encs.num_slots() {
            return param_err("state count does not match slot count");
        }
        Ok(states.to_vec())
    }

    fn unstack(&self, _encs: &EncoderBatch, batch: &Vec<TableState>, slot: usize) -> TableState {
        batch[slot].clone()
    }

    fn score_batch(
        &self,
        encs: &EncoderBatch,
        batch: &Vec<TableState>,
        last: &[LabelId],
        active: &[bool],
    ) -> Result<(ScoreMatrix, Vec<TableState>)> {
        let n = batch.len();
        if last.len() != n || active.len() != n {
            return param_err("label/flag count does not match batch");
        }
        let mut out = ScoreMatrix::filled(n, self.vocab_size, f64::NEG_INFINITY);
        let mut next = batch.clone();
        for i in (0..n).filter(|&i| active[i]) {
            let (row, s) = self.score(encs.slot_output(i), &batch[i], last[i])?;
            out.row_mut(i).copy_from_slice(&row);
            next[i] = s;
        }
        Ok((out, next))
    }

    fn select(&self, batch: &Vec<TableState>, idx: &[usize]) -> Result<Vec<TableState>> {
        idx.iter()
            .map(|&i| {
                batch
                    .get(i)
                    .cloned()
                    .map_or_else(|| param_err(format!("slot {i} out of range")), Ok)
            })
            .collect()
    }
}
