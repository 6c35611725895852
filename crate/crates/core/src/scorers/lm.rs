//! Recurrent LM stub: `h' = tanh(W_rec h + b_rec + E[l])`, then log-softmax
//! of an affine output layer.

use super::{EncoderBatch, EncoderOutput, LabelId, LabelScorer};
use crate::error::{param_err, Result};
use crate::tensor_ops::{gather_rows, log_softmax_in_place, matmul_rows, matvec_into, ScoreMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentLm {
    /// `[|L|, d_lm]`
    pub(crate) embed: ScoreMatrix,
    /// `[d_lm, d_lm]`
    pub(crate) w_rec: ScoreMatrix,
    pub(crate) b_rec: Vec<f64>,
    /// `[|L|, d_lm]`
    pub(crate) w_out: ScoreMatrix,
    pub(crate) b_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmBatch {
    pub h: ScoreMatrix,
}

impl RecurrentLm {
    pub fn new(
        embed: ScoreMatrix,
        w_rec: ScoreMatrix,
        b_rec: Vec<f64>,
        w_out: ScoreMatrix,
        b_out: Vec<f64>,
    ) -> Result<Self> {
        let d = w_rec.rows();
        let ok = d > 0
            && w_rec.cols() == d
            && embed.cols() == d
            && b_rec.len() == d
            && w_out.cols() == d
            && w_out.rows() == embed.rows()
            && b_out.len() == w_out.rows();
        if !ok {
            return param_err("LM weight shapes are inconsistent");
        }
        Ok(Self {
            embed,
            w_rec,
            b_rec,
            w_out,
            b_out,
        })
    }

    pub fn d_lm(&self) -> usize {
        self.w_rec.rows()
    }

    fn check_label(&self, l: LabelId) -> Result<()> {
        if l >= self.embed.rows() {
            return param_err(format!("label {l} outside vocabulary of {}", self.embed.rows()));
        }
        Ok(())
    }
}

impl LabelScorer for RecurrentLm {
    type State = LmState;
    type Batch = LmBatch;

    fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    fn initial_state(&self, _enc: &EncoderOutput) -> LmState {
        LmState {
            h: vec![0.0; self.d_lm()],
        }
    }

    fn score(&self, _enc: &EncoderOutput, state: &LmState, last: LabelId) -> Result<(Vec<f64>, LmState)> {
        self.check_label(last)?;
        let mut h = vec![0.0; self.d_lm()];
        matvec_into(&self.w_rec, &state.h, Some(&self.b_rec), &mut h);
        for (v, &e) in h.iter_mut().zip(self.embed.row(last)) {
            *v = (*v + e).tanh();
        }
        let mut logits = vec![0.0; self.vocab_size()];
        matvec_into(&self.w_out, &h, Some(&self.b_out), &mut logits);
        log_softmax_in_place(&mut logits);
        Ok((logits, LmState { h }))
    }

    fn stack(&self, encs: &EncoderBatch, states: &[LmState]) -> Result<LmBatch> {
        if states.len() != encs.num_slots() {
            return param_err(format!("{} LM states for {} slots", states.len(), encs.num_slots()));
        }
        let rows: Vec<&[f64]> = states.iter().map(|s| s.h.as_slice()).collect();
        let h = ScoreMatrix::from_rows(&rows)?;
        if h.cols() != self.d_lm() {
            return param_err("LM state width mismatch");
        }
        Ok(LmBatch { h })
    }

    fn unstack(&self, _encs: &EncoderBatch, batch: &LmBatch, slot: usize) -> LmState {
        LmState {
            h: batch.h.row(slot).to_vec(),
        }
    }

    fn score_batch(
        &self,
        encs: &EncoderBatch,
        batch: &LmBatch,
        last: &[LabelId],
        active: &[bool],
    ) -> Result<(ScoreMatrix, LmBatch)> {
        let n = batch.h.rows();
        if last.len() != n || active.len() != n || n != encs.num_slots() {
            return param_err(format!(
                "batch of {n} LM states with {} labels and {} flags",
                last.len(),
                active.len()
            ));
        }
        for &l in last {
            self.check_label(l)?;
        }
        let act: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        let mut next = batch.clone();
        let mut out = ScoreMatrix::filled(n, self.vocab_size(), f64::NEG_INFINITY);
        if act.is_empty() {
            return Ok((out, next));
        }
        let x = gather_rows(&batch.h, &act)?;
        let mut h = matmul_rows(&self.w_rec, &x, Some(&self.b_rec));
        for (j, &i) in act.iter().enumerate() {
            for (v, &e) in h.row_mut(j).iter_mut().zip(self.embed.row(last[i])) {
                *v = (*v + e).tanh();
            }
        }
        let mut logits = matmul_rows(&self.w_out, &h, Some(&self.b_out));
        for (j, &i) in act.iter().enumerate() {
            let row = logits.row_mut(j);
            log_softmax_in_place(row);
            out.row_mut(i).copy_from_slice(row);
            next.h.row_mut(i).copy_from_slice(h.row(j));
        }
        Ok((out, next))
    }

    fn select(&self, batch: &LmBatch, idx: &[usize]) -> Result<LmBatch> {
        Ok(LmBatch {
            h: gather_rows(&batch.h, idx)?,
        })
    }
}
