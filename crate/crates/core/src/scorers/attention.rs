//! Synthetic attention decoder.
//!
//! One tanh recurrent cell of width `d_dec`, dot-product attention between a
//! linear projection of the recurrent state and the encoder frames, and an
//! affine output layer over `[r; c]` followed by log-softmax.
//!
//! A call with previous label `l` performs
//!
//! ```text
//! r' = tanh(W_rec [r; c] + b_rec + E[l])      (Recurrency)
//! a  = softmax_t(<W_q r', h_t> / sqrt(d_enc))
//! c' = sum_t a_t h_t
//! y  = log_softmax(W_out [r'; c'] + b_out)    (Generate)
//! ```
//!
//! and returns `y` with the state `(r', c', a)`.

use super::{EncoderBatch, EncoderOutput, LabelId, LabelScorer};
use crate::error::{param_err, Result};
use crate::tensor_ops::{
    dot, gather_rows, gemm_into, log_softmax_in_place, matmul_rows, matvec_into, softmax_in_place,
    ScoreMatrix,
};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDecoder {
    /// `[|L|, d_dec]`
    pub(crate) embed: ScoreMatrix,
    /// `[d_dec, d_dec + d_enc]`
    pub(crate) w_rec: ScoreMatrix,
    pub(crate) b_rec: Vec<f64>,
    /// `[d_enc, d_dec]`
    pub(crate) w_query: ScoreMatrix,
    /// `[|L|, d_dec + d_enc]`
    pub(crate) w_out: ScoreMatrix,
    pub(crate) b_out: Vec<f64>,
    d_enc: usize,
    scale: f64,
}

/// Recurrent state, context vector and the attention weights that produced
/// it. Weights cover the utterance's valid frames only.
#[derive(Clone, Debug, PartialEq)]
pub struct AttDecoderState {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub attn: Vec<f64>,
}

/// Stacked [`AttDecoderState`] for S·B slots. Attention rows are padded to the
/// batch's longest utterance with exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct AttBatch {
    pub r: ScoreMatrix,
    pub c: ScoreMatrix,
    pub attn: ScoreMatrix,
}

impl AttentionDecoder {
    pub fn new(
        embed: ScoreMatrix,
        w_rec: ScoreMatrix,
        b_rec: Vec<f64>,
        w_query: ScoreMatrix,
        w_out: ScoreMatrix,
        b_out: Vec<f64>,
    ) -> Result<Self> {
        let d_dec = w_rec.rows();
        let d_enc = w_query.rows();
        let ok = embed.cols() == d_dec
            && w_rec.cols() == d_dec + d_enc
            && b_rec.len() == d_dec
            && w_query.cols() == d_dec
            && w_out.rows() == embed.rows()
            && w_out.cols() == d_dec + d_enc
            && b_out.len() == w_out.rows();
        if !ok || d_enc == 0 || d_dec == 0 {
            return param_err("attention decoder weight shapes are inconsistent");
        }
        Ok(Self {
            embed,
            w_rec,
            b_rec,
            w_query,
            w_out,
            b_out,
            d_enc,
            scale: 1.0 / (d_enc as f64).sqrt(),
        })
    }

    pub fn d_dec(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn d_enc(&self) -> usize {
        self.d_enc
    }

    fn check_label(&self, l: LabelId) -> Result<()> {
        if l >= self.embed.rows() {
            return param_err(format!("label {l} outside vocabulary of {}", self.embed.rows()));
        }
        Ok(())
    }

    fn check_encoder(&self, enc: &EncoderOutput) -> Result<()> {
        if enc.hidden.cols() != self.d_enc {
            return param_err(format!(
                "encoder width {} does not match decoder attention width {}",
                enc.hidden.cols(),
                self.d_enc
            ));
        }
        Ok(())
    }
}

impl LabelScorer for AttentionDecoder {
    type State = AttDecoderState;
    type Batch = AttBatch;

    fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    fn initial_state(&self, enc: &EncoderOutput) -> AttDecoderState {
        AttDecoderState {
            r: vec![0.0; self.d_dec()],
            c: vec![0.0; self.d_enc],
            attn: vec![1.0 / enc.frames as f64; enc.frames],
        }
    }

    fn score(
        &self,
        enc: &EncoderOutput,
        state: &AttDecoderState,
        last: LabelId,
    ) -> Result<(Vec<f64>, AttDecoderState)> {
        self.check_label(last)?;
        self.check_encoder(enc)?;
        let d_dec = self.d_dec();

        let mut x = Vec::with_capacity(d_dec + self.d_enc);
        x.extend_from_slice(&state.r);
        x.extend_from_slice(&state.c);
        let mut r = vec![0.0; d_dec];
        matvec_into(&self.w_rec, &x, Some(&self.b_rec), &mut r);
        for (v, &e) in r.iter_mut().zip(self.embed.row(last)) {
            *v = (*v + e).tanh();
        }

        let mut q = vec![0.0; self.d_enc];
        matvec_into(&self.w_query, &r, None, &mut q);
        let mut attn: Vec<f64> = enc
            .hidden
            .iter_rows()
            .map(|h| dot(&q, h) * self.scale)
            .collect();
        softmax_in_place(&mut attn);

        let mut c = vec![0.0; self.d_enc];
        for (&a, h) in attn.iter().zip(enc.hidden.iter_rows()) {
            for (ck, &hk) in c.iter_mut().zip(h) {
                *ck += a * hk;
            }
        }

        x.clear();
        x.extend_from_slice(&r);
        x.extend_from_slice(&c);
        let mut logits = vec![0.0; self.vocab_size()];
        matvec_into(&self.w_out, &x, Some(&self.b_out), &mut logits);
        log_softmax_in_place(&mut logits);
        Ok((logits, AttDecoderState { r, c, attn }))
    }

    fn stack(&self, encs: &EncoderBatch, states: &[AttDecoderState]) -> Result<AttBatch> {
        if states.len() != encs.num_slots() {
            return param_err(format!(
                "{} decoder states for {} slots",
                states.len(),
                encs.num_slots()
            ));
        }
        let n = states.len();
        let t_max = encs.max_frames();
        let mut r = Vec::with_capacity(n * self.d_dec());
        let mut c = Vec::with_capacity(n * self.d_enc);
        let mut attn = vec![0.0; n * t_max];
        for (slot, s) in states.iter().enumerate() {
            if s.r.len() != self.d_dec() || s.c.len() != self.d_enc {
                return param_err(format!("decoder state {slot} has wrong widths"));
            }
            if s.attn.len() != encs.slot_output(slot).frames {
                return param_err(format!("decoder state {slot} has wrong attention length"));
            }
            r.extend_from_slice(&s.r);
            c.extend_from_slice(&s.c);
            attn[slot * t_max..slot * t_max + s.attn.len()].copy_from_slice(&s.attn);
        }
        Ok(AttBatch {
            r: ScoreMatrix::new(n, self.d_dec(), r)?,
            c: ScoreMatrix::new(n, self.d_enc, c)?,
            attn: ScoreMatrix::new(n, t_max, attn)?,
        })
    }

    fn unstack(&self, encs: &EncoderBatch, batch: &AttBatch, slot: usize) -> AttDecoderState {
        let frames = encs.slot_output(slot).frames;
        AttDecoderState {
            r: batch.r.row(slot).to_vec(),
            c: batch.c.row(slot).to_vec(),
            attn: batch.attn.row(slot)[..frames].to_vec(),
        }
    }

    fn score_batch(
        &self,
        encs: &EncoderBatch,
        batch: &AttBatch,
        last: &[LabelId],
        active: &[bool],
    ) -> Result<(ScoreMatrix, AttBatch)> {
        let n = batch.r.rows();
        if last.len() != n || active.len() != n || n != encs.num_slots() {
            return param_err(format!(
                "batch of {n} states with {} labels, {} flags, {} slots",
                last.len(),
                active.len(),
                encs.num_slots()
            ));
        }
        for &l in last {
            self.check_label(l)?;
        }
        for o in encs.outputs() {
            self.check_encoder(o)?;
        }
        let d_dec = self.d_dec();
        let d_enc = self.d_enc;
        let t_max = encs.max_frames();
        let vocab = self.vocab_size();
        let act: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        let na = act.len();

        let mut next = batch.clone();
        let mut gamma = ScoreMatrix::filled(n, vocab, f64::NEG_INFINITY);
        if na == 0 {
            return Ok((gamma, next));
        }

        // Recurrency over all active slots at once.
        let mut x = Vec::with_capacity(na * (d_dec + d_enc));
        for &i in &act {
            x.extend_from_slice(batch.r.row(i));
            x.extend_from_slice(batch.c.row(i));
        }
        let x = ScoreMatrix::new(na, d_dec + d_enc, x)?;
        let mut r = matmul_rows(&self.w_rec, &x, Some(&self.b_rec));
        for (j, &i) in act.iter().enumerate() {
            for (v, &e) in r.row_mut(j).iter_mut().zip(self.embed.row(last[i])) {
                *v = (*v + e).tanh();
            }
        }

        let q = matmul_rows(&self.w_query, &r, None);

        // Attention per utterance over all of its active slots. Energies
        // accumulate over the feature axis and contexts over frames, both
        // ascending, as in the single-slot path.
        let mut ctx = ScoreMatrix::zeros(na, d_enc);
        let mut energies = vec![0.0; na * t_max];
        let mut weights = vec![0.0; na * t_max];
        let mut lo = 0;
        while lo < na {
            let utt = encs.slot_utterance(act[lo]);
            let hi = lo + act[lo..].partition_point(|&i| encs.slot_utterance(i) == utt);
            let enc = encs.output(utt);
            let frames = enc.frames;
            let rows = hi - lo;
            let e = &mut energies[..rows * frames];
            gemm_into(
                &q.values()[lo * d_enc..hi * d_enc],
                encs.hidden_t(utt).values(),
                rows,
                d_enc,
                frames,
                e,
            );
            let wts = &mut weights[..rows * frames];
            for (j, (ej, wj)) in (lo..hi).zip(e.chunks(frames).zip(wts.chunks_mut(frames))) {
                let row = next.attn.row_mut(act[j]);
                for (a, &ev) in row.iter_mut().zip(ej) {
                    *a = ev * self.scale;
                }
                // Padding frames are masked out of the softmax.
                row[frames..].fill(f64::NEG_INFINITY);
                softmax_in_place(row);
                wj.copy_from_slice(&row[..frames]);
            }
            gemm_into(
                wts,
                enc.hidden.values(),
                rows,
                frames,
                d_enc,
                &mut ctx.values_mut()[lo * d_enc..hi * d_enc],
            );
            lo = hi;
        }

        let mut y = Vec::with_capacity(na * (d_dec + d_enc));
        for j in 0..na {
            y.extend_from_slice(r.row(j));
            y.extend_from_slice(ctx.row(j));
        }
        let y = ScoreMatrix::new(na, d_dec + d_enc, y)?;
        let mut logits = matmul_rows(&self.w_out, &y, Some(&self.b_out));
        for (j, &i) in act.iter().enumerate() {
            let row = logits.row_mut(j);
            log_softmax_in_place(row);
            gamma.row_mut(i).copy_from_slice(row);
            next.r.row_mut(i).copy_from_slice(r.row(j));
            next.c.row_mut(i).copy_from_slice(ctx.row(j));
        }
        Ok((gamma, next))
    }

    fn select(&self, batch: &AttBatch, idx: &[usize]) -> Result<AttBatch> {
        Ok(AttBatch {
            r: gather_rows(&batch.r, idx)?,
            c: gather_rows(&batch.c, idx)?,
            attn: gather_rows(&batch.attn, idx)?,
        })
    }
}
