//! Sequence-to-sequence architectures: an LSTM encoder-decoder with
//! additive attention and a Transformer encoder-decoder, each usable with
//! all four token schemes. Subtree schemes concatenate the three token
//! embeddings of a triple on the way in and emit three softmax
//! distributions per step on the way out.

mod attention;
mod decode;
mod lstm;
mod transformer;

pub use attention::{attention, multi_head, MultiHeadWeights};
pub use decode::{beam_decode, greedy_decode, DecodeFailure};
pub use lstm::{LstmConfig, LstmModel};
pub use transformer::{TransformerConfig, TransformerModel};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, AutodiffError, Tape, TensorId};
use crate::notation::{DataScheme, DecodeError, Format, TokenSeq, Vocab, EOS_ID, SOS_ID};

/// Which architecture a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Lstm,
    Transformer,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Lstm => "lstm",
            ModelFamily::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Option<ModelFamily> {
        match s {
            "lstm" => Some(ModelFamily::Lstm),
            "transformer" => Some(ModelFamily::Transformer),
            _ => None,
        }
    }
}

/// Row-stochastic attention weights with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Array,
    pub source: MapSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    /// The single decoder-over-encoder map of the LSTM model.
    LstmDecoder,
    EncoderSelf { layer: usize, head: usize },
    DecoderSelf { layer: usize, head: usize },
    Cross { layer: usize, head: usize },
}

impl AttentionMap {
    /// Every row sums to 1 within 1e-9 and no entry is negative.
    pub fn is_row_stochastic(&self) -> bool {
        for i in 0..self.weights.rows {
            let row = self.weights.row(i);
            if row.iter().any(|&w| w < 0.0) {
                return false;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return false;
            }
        }
        true
    }
}

/// Named parameter arrays in a stable insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> &Array {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn entries(&self) -> &[(String, Array)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Register every parameter on a tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let mut ids = BTreeMap::new();
        for (name, value) in &self.entries {
            let id = if trainable { tape.param(value.clone()) } else { tape.constant(value.clone()) };
            ids.insert(name.clone(), id);
        }
        BoundParams { ids }
    }
}

/// Tape handles for a bound [`ParamSet`].
pub struct BoundParams {
    ids: BTreeMap<String, TensorId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> TensorId {
        self.ids[name]
    }

    pub fn ordered<'a>(&'a self, params: &'a ParamSet) -> impl Iterator<Item = (&'a str, TensorId)> {
        params.entries.iter().map(move |(n, _)| (n.as_str(), self.ids[n]))
    }
}

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub(crate) fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array {
    let a = 1.0 / (fan_in as f64).sqrt();
    let mut arr = Array::zeros(rows, cols);
    for v in arr.data.iter_mut() {
        *v = rng.random_range(-a..a);
    }
    arr
}

/// Tokens-per-step for a scheme: 3 for subtree triples, 1 for strings.
pub fn slots_of(scheme: DataScheme) -> usize {
    match scheme.format {
        Format::Subtree => 3,
        Format::String => 1,
    }
}

/// Teacher-forcing id streams: the shifted decoder input and the per-step
/// prediction targets.
///
/// String targets append a terminating EOS; subtree targets are exactly the
/// triple stream (the tree closes itself), and the decoder input starts
/// with an SOS triple.
pub fn teacher_pairs(
    scheme: DataScheme,
    target: &TokenSeq,
    vocab: &Vocab,
) -> Result<(Vec<u32>, Vec<u32>), DecodeError> {
    let ids = crate::notation::ids_of(target, vocab)?;
    let slots = slots_of(scheme);
    if slots == 1 {
        let mut input = vec![SOS_ID];
        input.extend(&ids);
        let mut targets = ids;
        targets.push(EOS_ID);
        Ok((input, targets))
    } else {
        assert_eq!(ids.len() % 3, 0, "subtree stream length must be a multiple of 3");
        let mut input = vec![SOS_ID; 3];
        input.extend(&ids[..ids.len().saturating_sub(3)]);
        Ok((input, ids))
    }
}

/// Per-step logits on a live tape plus attention-map snapshots.
pub struct ForwardOutput {
    /// One (1, slots*vocab) logits row per output step.
    pub step_logits: Vec<TensorId>,
    pub maps: Vec<AttentionMap>,
}

/// Detached inference output.
pub struct InferOutput {
    /// One row of slots*vocab logits per output step.
    pub logits: Vec<Vec<f64>>,
    pub maps: Vec<AttentionMap>,
}

/// A trained or initialized model of either family.
pub enum AnyModel {
    Lstm(LstmModel),
    Transformer(TransformerModel),
}

impl AnyModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            AnyModel::Lstm(_) => ModelFamily::Lstm,
            AnyModel::Transformer(_) => ModelFamily::Transformer,
        }
    }

    pub fn scheme(&self) -> DataScheme {
        match self {
            AnyModel::Lstm(m) => m.scheme,
            AnyModel::Transformer(m) => m.scheme,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::Lstm(m) => &m.vocab,
            AnyModel::Transformer(m) => &m.vocab,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            AnyModel::Lstm(m) => &m.params,
            AnyModel::Transformer(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            AnyModel::Lstm(m) => &mut m.params,
            AnyModel::Transformer(m) => &mut m.params,
        }
    }

    /// The variant name used in registries and reports,
    /// e.g. `lstm-string-polish`.
    pub fn variant_name(&self) -> String {
        format!("{}-{}", self.family().name(), self.scheme().name())
    }

    /// Key/value lines describing the architecture, echoed in checkpoints.
    pub fn config_echo(&self) -> Vec<(String, String)> {
        match self {
            AnyModel::Lstm(m) => m.config_echo(),
            AnyModel::Transformer(m) => m.config_echo(),
        }
    }

    pub fn max_output_len(&self) -> usize {
        match self {
            AnyModel::Lstm(m) => m.cfg.max_output_len,
            AnyModel::Transformer(m) => m.cfg.max_len,
        }
    }

    /// Teacher-forced forward pass on the caller's tape.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        src_ids: &[u32],
        tgt_in_ids: &[u32],
        train: bool,
        dropout_seed: u64,
        dropout_step: u64,
    ) -> Result<ForwardOutput, AutodiffError> {
        match self {
            AnyModel::Lstm(m) => {
                m.forward_on_tape(tape, bound, src_ids, tgt_in_ids, train, dropout_seed, dropout_step)
            }
            AnyModel::Transformer(m) => {
                m.forward_on_tape(tape, bound, src_ids, tgt_in_ids, train, dropout_seed, dropout_step)
            }
        }
    }

    /// Frozen-parameter inference; deterministic and identical across calls.
    pub fn infer(&self, src_ids: &[u32], tgt_in_ids: &[u32]) -> Result<InferOutput, AutodiffError> {
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &bound, src_ids, tgt_in_ids, false, 0, 0)?;
        let logits = out
            .step_logits
            .iter()
            .map(|id| tape.value(*id).data.clone())
            .collect();
        Ok(InferOutput { logits, maps: out.maps })
    }
}

/// Deterministic builder used everywhere a fresh model is needed.
pub fn build_model(
    family: ModelFamily,
    scheme: DataScheme,
    vocab: &Vocab,
    lstm_cfg: &LstmConfig,
    transformer_cfg: &TransformerConfig,
    seed: u64,
) -> AnyModel {
    match family {
        ModelFamily::Lstm => AnyModel::Lstm(LstmModel::new(lstm_cfg.clone(), scheme, vocab.clone(), seed)),
        ModelFamily::Transformer => AnyModel::Transformer(TransformerModel::new(
            transformer_cfg.clone(),
            scheme,
            vocab.clone(),
            seed,
        )),
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
