//! Seed-driven synthetic models and utterance sets.
//!
//! Everything is drawn from a [`SplitMix64`] stream in a fixed order, so a
//! spec maps to the same weights (and the same file bytes) on every platform.
//!
//! Model weights are drawn in this order, each matrix row-major and each
//! followed by its bias where it has one:
//!
//! 1. encoder `W [d_enc, d_feat]`, `b [d_enc]`
//! 2. CTC head `W [|L|+1, d_enc]`, `b [|L|+1]`
//! 3. decoder embedding `[|L|, d_dec]`, recurrent `W [d_dec, d_dec+d_enc]`, `b [d_dec]`
//! 4. attention projection `W [d_enc, d_dec]`
//! 5. output layer `W [|L|, d_dec+d_enc]`, `b [|L|]`
//! 6. LM embedding `[|L|, d_lm]`, recurrent `W [d_lm, d_lm]`, `b [d_lm]`,
//!    output `W [|L|, d_lm]`, `b [|L|]`

mod format;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::scorers::{AttentionDecoder, Encoder, RecurrentLm, ScorerBundle, Vocabulary};
use crate::tensor_ops::{FeatureMatrix, ScoreMatrix};

pub use format::{read_container, write_container, ArrayEntry, Container, MAGIC};

/// SplitMix64 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let (value, state) = prng_next(self.state);
        self.state = state;
        value
    }

    /// Uniform in `[0, 1)`: the top 53 bits of the output, i.e. `value / 2^64`
    /// truncated to double precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform weight in `[-0.1, 0.1)`.
    pub fn next_weight(&mut self) -> f64 {
        -0.1 + 0.2 * self.next_unit()
    }

    /// Uniform feature in `[-1, 1)`.
    pub fn next_feature(&mut self) -> f64 {
        -1.0 + 2.0 * self.next_unit()
    }
}

/// One SplitMix64 step: returns the output and the advanced state.
pub fn prng_next(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub seed: u64,
    pub d_feat: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub d_lm: usize,
    pub vocab_size: usize,
}

impl SyntheticModelSpec {
    /// Desk-scale model: 83-dim input features, 128-wide encoder, decoder and
    /// LM.
    pub fn desk(seed: u64, vocab_size: usize) -> Self {
        Self {
            seed,
            d_feat: 83,
            d_enc: 128,
            d_dec: 128,
            d_lm: 128,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_feat, self.d_enc, self.d_dec, self.d_lm].contains(&0) {
            return param_err("model widths must be at least 1");
        }
        if self.vocab_size < 3 {
            return param_err("vocabulary needs sos, eos and at least one regular label");
        }
        Ok(())
    }

    /// Label 0 is the start symbol, label 1 the end symbol.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size, 0, 1)
    }

    /// `(name, rows, cols)` of every array, in generation order.
    pub fn array_layout(&self) -> Vec<(&'static str, usize, usize)> {
        let Self {
            d_feat,
            d_enc,
            d_dec,
            d_lm,
            vocab_size: l,
            ..
        } = *self;
        vec![
            ("encoder.w", d_enc, d_feat),
            ("encoder.b", 1, d_enc),
            ("ctc.w", l + 1, d_enc),
            ("ctc.b", 1, l + 1),
            ("decoder.embed", l, d_dec),
            ("decoder.w_rec", d_dec, d_dec + d_enc),
            ("decoder.b_rec", 1, d_dec),
            ("attention.w_query", d_enc, d_dec),
            ("output.w", l, d_dec + d_enc),
            ("output.b", 1, l),
            ("lm.embed", l, d_lm),
            ("lm.w_rec", d_lm, d_lm),
            ("lm.b_rec", 1, d_lm),
            ("lm.w_out", l, d_lm),
            ("lm.b_out", 1, l),
        ]
    }
}

/// Randomly initialised stand-in for a trained encoder/decoder/LM stack.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    pub spec: SyntheticModelSpec,
    pub encoder: Encoder,
    pub scorers: ScorerBundle<AttentionDecoder, RecurrentLm>,
}

impl PartialEq for SyntheticModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.encoder == other.encoder
            && self.scorers.att == other.scorers.att
            && self.scorers.lm == other.scorers.lm
    }
}

impl SyntheticModel {
    /// Builds the model from arrays given in [`SyntheticModelSpec::array_layout`]
    /// order and shapes.
    pub fn from_arrays(spec: SyntheticModelSpec, arrays: Vec<ScoreMatrix>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.array_layout();
        if arrays.len() != layout.len() {
            return param_err(format!("expected {} arrays, got {}", layout.len(), arrays.len()));
        }
        for ((name, rows, cols), a) in layout.iter().zip(&arrays) {
            if (a.rows(), a.cols()) != (*rows, *cols) {
                return param_err(format!(
                    "array {name} is {}x{}, expected {rows}x{cols}",
                    a.rows(),
                    a.cols()
                ));
            }
        }
        let mut it = arrays.into_iter();
        let mut m = || it.next().expect("array count checked above");
        let encoder = Encoder::new(m(), m().into_values(), m(), m().into_values())?;
        let att = AttentionDecoder::new(m(), m(), m().into_values(), m(), m(), m().into_values())?;
        let lm = RecurrentLm::new(m(), m(), m().into_values(), m(), m().into_values())?;
        let scorers = ScorerBundle::new(spec.vocabulary()?, att, lm)?;
        Ok(Self {
            spec,
            encoder,
            scorers,
        })
    }

    /// Arrays in layout order, borrowed from the model.
    pub fn arrays(&self) -> Vec<(&'static str, std::borrow::Cow<'_, ScoreMatrix>)> {
        use std::borrow::Cow;
        let row = |v: &[f64]| Cow::Owned(ScoreMatrix::new(1, v.len(), v.to_vec()).expect("row"));
        let e = &self.encoder;
        let a = &self.scorers.att;
        let l = &self.scorers.lm;
        let mats: Vec<Cow<'_, ScoreMatrix>> = vec![
            Cow::Borrowed(&e.w),
            row(&e.b),
            Cow::Borrowed(&e.ctc_w),
            row(&e.ctc_b),
            Cow::Borrowed(&a.embed),
            Cow::Borrowed(&a.w_rec),
            row(&a.b_rec),
            Cow::Borrowed(&a.w_query),
            Cow::Borrowed(&a.w_out),
            row(&a.b_out),
            Cow::Borrowed(&l.embed),
            Cow::Borrowed(&l.w_rec),
            row(&l.b_rec),
            Cow::Borrowed(&l.w_out),
            row(&l.b_out),
        ];
        self.spec
            .array_layout()
            .into_iter()
            .map(|(name, _, _)| name)
            .zip(mats)
            .collect()
    }

    pub fn vocab(&self) -> Vocabulary {
        self.scorers.vocab
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arrays = self.arrays();
        let refs: Vec<(&str, &ScoreMatrix)> = arrays.iter().map(|(n, m)| (*n, m.as_ref())).collect();
        write_container("model", serde_json::to_value(self.spec).expect("spec serializes"), &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = read_container(bytes)?;
        c.expect_kind("model")?;
        let spec: SyntheticModelSpec = c.spec()?;
        let layout = spec.array_layout();
        c.expect_layout(layout.iter().map(|&(n, r, cl)| (n.to_string(), r, cl)))?;
        spec.validate().map_err(|e| c.header_error(e.to_string()))?;
        Self::from_arrays(spec, c.into_arrays())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Fills every model array from the spec's PRNG stream.
pub fn generate_model(spec: &SyntheticModelSpec) -> Result<SyntheticModel> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let arrays = spec
        .array_layout()
        .into_iter()
        .map(|(_, rows, cols)| {
            let values = (0..rows * cols).map(|_| rng.next_weight()).collect();
            ScoreMatrix::new(rows, cols, values)
        })
        .collect::<Result<Vec<_>>>()?;
    SyntheticModel::from_arrays(*spec, arrays)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceSetSpec {
    pub seed: u64,
    pub count: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub d_feat: usize,
}

impl UtteranceSetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return param_err(format!(
                "frame range {}:{} must satisfy 1 <= min <= max",
                self.min_frames, self.max_frames
            ));
        }
        if self.d_feat == 0 {
            return param_err("feature width must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSet {
    pub spec: UtteranceSetSpec,
    pub utterances: Vec<FeatureMatrix>,
}

/// For each utterance: one draw for the frame count (uniform over the range by
/// modulo), then `frames * d_feat` feature draws, row-major.
pub fn generate_utterances(spec: &UtteranceSetSpec) -> Result<UtteranceSet> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let span = (spec.max_frames - spec.min_frames + 1) as u64;
    let mut utterances = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let frames = spec.min_frames + (rng.next_u64() % span) as usize;
        let values = (0..frames * spec.d_feat).map(|_| rng.next_feature()).collect();
        utterances.push(ScoreMatrix::new(frames, spec.d_feat, values)?);
    }
    Ok(UtteranceSet {
        spec: *spec,
        utterances,
    })
}

impl UtteranceSet {
    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.rows()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let names: Vec<String> = (0..self.utterances.len()).map(|i| format!("utt{i:05}")).collect();
        let refs: Vec<(&str, &ScoreMatrix)> = names
            .iter()
            .map(String::as_str)
            .zip(self.utterances.iter())
            .collect();
        write_container(
            "utterances",
            serde_json::to_value(self.spec).expect("spec serializes"),
            &refs,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = read_container(bytes)?;
        c.expect_kind("utterances")?;
        let spec: UtteranceSetSpec = c.spec()?;
        if c.entries().len() != spec.count {
            return Err(c.header_error(format!(
                "header lists {} arrays for {} utterances",
                c.entries().len(),
                spec.count
            )));
        }
        for e in c.entries() {
            if e.cols != spec.d_feat || e.rows < spec.min_frames || e.rows > spec.max_frames {
                return Err(c.array_error(
                    e,
                    format!("utterance {} is {}x{}, outside the spec", e.name, e.rows, e.cols),
                ));
            }
        }
        Ok(Self {
            spec,
            utterances: c.into_arrays(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
