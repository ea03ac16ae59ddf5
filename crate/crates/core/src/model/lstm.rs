//! LSTM encoder-decoder with additive attention over the encoder states.
//!
//! The decoder attends once per output step with a single context vector;
//! the per-step attention rows are stacked into one map per sequence. With
//! a subtree scheme the three embeddings of a triple are concatenated as
//! the recurrent input and the output layer emits three logit blocks.

use crate::autodiff::{Array, AutodiffError, Axis, Tape, TensorId};
use crate::notation::{DataScheme, Vocab};

use super::{
    init_uniform, seeded_rng, slots_of, AttentionMap, BoundParams, ForwardOutput, MapSource,
    ParamSet,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_output_len: usize,
}

impl LstmConfig {
    /// Reduced configuration sized for laptop-CPU runs.
    pub fn desk() -> LstmConfig {
        LstmConfig { layers: 2, hidden_dim: 64, dropout: 0.0, max_output_len: 96 }
    }

    /// Tuned full-scale hyperparameters per scheme.
    pub fn paper(scheme: DataScheme) -> LstmConfig {
        use crate::notation::{Format, OrderScheme};
        let (layers, hidden_dim, dropout) = match (scheme.format, scheme.order) {
            (Format::String, OrderScheme::Polish) => (3, 929, 0.1396),
            (Format::Subtree, OrderScheme::Polish) => (4, 384, 0.17721),
            (Format::String, OrderScheme::Irpp) => (5, 813, 0.0404),
            (Format::Subtree, OrderScheme::Irpp) => (3, 1022, 0.1974),
        };
        LstmConfig { layers, hidden_dim, dropout, max_output_len: 256 }
    }

    pub fn validate(&self) {
        assert!(self.layers > 0 && self.hidden_dim > 0);
        assert!((0.0..1.0).contains(&self.dropout));
    }
}

pub struct LstmModel {
    pub cfg: LstmConfig,
    pub scheme: DataScheme,
    pub vocab: Vocab,
    pub params: ParamSet,
}

impl LstmModel {
    pub fn new(cfg: LstmConfig, scheme: DataScheme, vocab: Vocab, seed: u64) -> LstmModel {
        cfg.validate();
        let mut rng = seeded_rng(seed);
        let v = vocab.len();
        let d = cfg.hidden_dim;
        let slots = slots_of(scheme);
        let mut params = ParamSet::new();
        params.insert("embed", init_uniform(&mut rng, v, d, d));
        for side in ["enc", "dec"] {
            for l in 0..cfg.layers {
                let input = if l == 0 { d * slots } else { d };
                params.insert(&format!("{side}{l}.w_ih"), init_uniform(&mut rng, input, 4 * d, input));
                params.insert(&format!("{side}{l}.w_hh"), init_uniform(&mut rng, d, 4 * d, d));
                let mut b = Array::zeros(1, 4 * d);
                // Forget-gate bias starts positive.
                for j in d..2 * d {
                    b.data[j] = 1.0;
                }
                params.insert(&format!("{side}{l}.b"), b);
            }
        }
        params.insert("attn.w", init_uniform(&mut rng, d, d, d));
        params.insert("attn.u", init_uniform(&mut rng, d, d, d));
        params.insert("attn.v", init_uniform(&mut rng, d, 1, d));
        params.insert("out.w", init_uniform(&mut rng, 2 * d, slots * v, 2 * d));
        params.insert("out.b", Array::zeros(1, slots * v));
        LstmModel { cfg, scheme, vocab, params }
    }

    pub fn config_echo(&self) -> Vec<(String, String)> {
        vec![
            ("family".into(), "lstm".into()),
            ("scheme".into(), self.scheme.name().into()),
            ("layers".into(), self.cfg.layers.to_string()),
            ("hidden_dim".into(), self.cfg.hidden_dim.to_string()),
            ("dropout".into(), format!("{}", self.cfg.dropout)),
            ("max_output_len".into(), self.cfg.max_output_len.to_string()),
        ]
    }

    /// Embed a raw id stream as one (steps, d*slots) matrix.
    fn embed_steps(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        ids: &[u32],
    ) -> Result<TensorId, AutodiffError> {
        let slots = slots_of(self.scheme);
        let table = bound.get("embed");
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let flat = tape.embedding_lookup(table, &idx)?;
        if slots == 1 {
            return Ok(flat);
        }
        // (3*steps, d) row-major is bit-identical to (steps, 3d): the three
        // consecutive embedding rows of a triple become one concatenated row.
        let d = self.cfg.hidden_dim;
        let steps = ids.len() / 3;
        debug_assert_eq!(ids.len() % 3, 0);
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let row = tape.slice(flat, 3 * t, 0, 3, d)?;
            let wide = tape.concat(
                Axis::Cols,
                &[
                    tape.slice(row, 0, 0, 1, d)?,
                    tape.slice(row, 1, 0, 1, d)?,
                    tape.slice(row, 2, 0, 1, d)?,
                ],
            )?;
            rows.push(wide);
        }
        tape.concat(Axis::Rows, &rows)
    }

    /// Run one LSTM stack over the step rows of `inputs`, returning the
    /// top-layer hidden state per step.
    #[allow(clippy::too_many_arguments)]
    fn run_stack(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        side: &str,
        inputs: TensorId,
        train: bool,
        dropout_seed: u64,
        dropout_step: u64,
    ) -> Result<Vec<TensorId>, AutodiffError> {
        let d = self.cfg.hidden_dim;
        let (steps, _) = tape.value(inputs).shape();
        let mut layer_inputs: Vec<TensorId> = (0..steps)
            .map(|t| tape.slice(inputs, t, 0, 1, tape.value(inputs).cols))
            .collect::<Result<_, _>>()?;
        let mut top: Vec<TensorId> = Vec::new();
        for l in 0..self.cfg.layers {
            let w_ih = bound.get(&format!("{side}{l}.w_ih"));
            let w_hh = bound.get(&format!("{side}{l}.w_hh"));
            let b = bound.get(&format!("{side}{l}.b"));
            let mut h = tape.constant(Array::zeros(1, d));
            let mut c = tape.constant(Array::zeros(1, d));
            let mut outputs = Vec::with_capacity(steps);
            for &x in &layer_inputs {
                let (nh, nc) = lstm_cell(tape, x, h, c, w_ih, w_hh, b, d)?;
                h = nh;
                c = nc;
                outputs.push(h);
            }
            if l + 1 < self.cfg.layers {
                layer_inputs = outputs
                    .iter()
                    .map(|&o| tape.dropout(o, self.cfg.dropout, train, dropout_seed, dropout_step))
                    .collect();
            } else {
                top = outputs;
            }
        }
        Ok(top)
    }

    #[allow(clippy::too_many_arguments)]
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
        let src = self.embed_steps(tape, bound, src_ids)?;
        let enc_steps = self.run_stack(tape, bound, "enc", src, train, dropout_seed, dropout_step)?;
        let enc_mat = tape.concat(Axis::Rows, &enc_steps)?;
        let u_enc = tape.matmul(enc_mat, bound.get("attn.u"))?;

        let tgt = self.embed_steps(tape, bound, tgt_in_ids)?;
        let dec_steps = self.run_stack(tape, bound, "dec", tgt, train, dropout_seed, dropout_step)?;

        let mut att_rows: Vec<Array> = Vec::with_capacity(dec_steps.len());
        let mut step_logits = Vec::with_capacity(dec_steps.len());
        for &s in &dec_steps {
            let q = tape.matmul(s, bound.get("attn.w"))?;
            let pre = tape.broadcast_add_row(u_enc, q)?;
            let act = tape.tanh(pre);
            let scores = tape.matmul(act, bound.get("attn.v"))?;
            let scores_row = tape.transpose(scores);
            let att = tape.softmax(scores_row, Axis::Cols);
            att_rows.push(tape.value(att).clone());
            let ctx = tape.matmul(att, enc_mat)?;
            let cat = tape.concat(Axis::Cols, &[s, ctx])?;
            let logits = tape.matmul(cat, bound.get("out.w"))?;
            let logits = tape.broadcast_add_row(logits, bound.get("out.b"))?;
            step_logits.push(logits);
        }

        let cols = enc_steps.len();
        let mut weights = Array::zeros(att_rows.len(), cols);
        for (i, row) in att_rows.iter().enumerate() {
            weights.data[i * cols..(i + 1) * cols].copy_from_slice(&row.data);
        }
        let maps = vec![AttentionMap { weights, source: MapSource::LstmDecoder }];
        Ok(ForwardOutput { step_logits, maps })
    }
}

/// One LSTM cell step: gate order [input, forget, cell, output].
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell(
    tape: &mut Tape,
    x: TensorId,
    h: TensorId,
    c: TensorId,
    w_ih: TensorId,
    w_hh: TensorId,
    b: TensorId,
    hidden: usize,
) -> Result<(TensorId, TensorId), AutodiffError> {
    let xi = tape.matmul(x, w_ih)?;
    let hh = tape.matmul(h, w_hh)?;
    let sum = tape.add(xi, hh)?;
    let gates = tape.broadcast_add_row(sum, b)?;
    let parts = tape.split(Axis::Cols, gates, &[hidden; 4])?;
    let i = tape.sigmoid(parts[0]);
    let f = tape.sigmoid(parts[1]);
    let g = tape.tanh(parts[2]);
    let o = tape.sigmoid(parts[3]);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let nc = tape.add(fc, ig)?;
    let tc = tape.tanh(nc);
    let nh = tape.mul(o, tc)?;
    Ok((nh, nc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::notation::{Token, Vocab};

    fn tiny_vocab() -> Vocab {
        Vocab::from_tokens([Token::Int(2), Token::Int(3)].iter())
    }

    fn tiny_model(scheme_name: &str) -> LstmModel {
        let scheme = DataScheme::parse(scheme_name).unwrap();
        let cfg = LstmConfig { layers: 2, hidden_dim: 8, dropout: 0.0, max_output_len: 32 };
        LstmModel::new(cfg, scheme, tiny_vocab(), 42)
    }

    #[test]
    fn string_step_distributions_sum_to_one() {
        let m = tiny_model("string-polish");
        let v = m.vocab.len();
        let out = {
            let mut tape = Tape::new();
            let bound = m.params.bind(&mut tape, false);
            let fo = m
                .forward_on_tape(&mut tape, &bound, &[3, 4, 5], &[2, 6, 7], false, 0, 0)
                .unwrap();
            assert_eq!(fo.step_logits.len(), 3);
            let logits = tape.value(fo.step_logits[0]).clone();
            assert_eq!(logits.shape(), (1, v));
            let sm = {
                let mut t2 = Tape::new();
                let l = t2.constant(logits);
                let s = t2.softmax(l, Axis::Cols);
                t2.value(s).data.iter().sum::<f64>()
            };
            (sm, fo.maps)
        };
        assert!((out.0 - 1.0).abs() < 1e-12);
        assert!(out.1[0].is_row_stochastic());
        assert_eq!(out.1[0].weights.shape(), (3, 3));
    }

    #[test]
    fn subtree_step_logits_split_into_three_blocks() {
        let m = tiny_model("subtree-polish");
        let v = m.vocab.len();
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape, false);
        let fo = m
            .forward_on_tape(&mut tape, &bound, &[3, 0, 0, 4, 0, 0], &[2, 2, 2], false, 0, 0)
            .unwrap();
        assert_eq!(fo.step_logits.len(), 1);
        assert_eq!(tape.value(fo.step_logits[0]).shape(), (1, 3 * v));
    }

    #[test]
    fn inference_is_deterministic() {
        let m = tiny_model("string-irpp");
        let model = super::super::AnyModel::Lstm(m);
        let a = model.infer(&[3, 4], &[2, 5]).unwrap();
        let b = model.infer(&[3, 4], &[2, 5]).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn single_cell_gradients_match_finite_differences() {
        let h = 4;
        let mk = |seed: u64, rows: usize, cols: usize| {
            let mut rng = seeded_rng(seed);
            init_uniform(&mut rng, rows, cols, cols.max(1))
        };
        let params = vec![
            ("x".to_string(), mk(1, 1, 3)),
            ("h".to_string(), mk(2, 1, h)),
            ("c".to_string(), mk(3, 1, h)),
            ("w_ih".to_string(), mk(4, 3, 4 * h)),
            ("w_hh".to_string(), mk(5, h, 4 * h)),
            ("b".to_string(), mk(6, 1, 4 * h)),
        ];
        let report = grad_check(
            move |tape, ids| {
                let (nh, nc) =
                    lstm_cell(tape, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], h).unwrap();
                let cat = tape.concat(Axis::Cols, &[nh, nc]).unwrap();
                let sq = tape.mul(cat, cat).unwrap();
                tape.sum_all(sq)
            },
            &params,
            1e-6,
            1e-4,
            24,
        );
        assert!(report.passed(), "max rel err {}", report.max_error());
    }
}
