//! Scaled dot-product attention and its multi-head composition.

use crate::autodiff::{Array, AutodiffError, Axis, Tape, TensorId};

/// softmax(Q K^T / sqrt(d_k)) V.
///
/// Returns the context rows and a value snapshot of the row-stochastic
/// weight matrix (query positions x key positions). `mask` entries that are
/// nonzero are excluded from attention (weight exactly zero).
pub fn attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    d_k: usize,
    mask: Option<&Array>,
) -> Result<(TensorId, Array), AutodiffError> {
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.mul_scalar(scores, 1.0 / (d_k as f64).sqrt());
    let masked = match mask {
        Some(m) => tape.masked_fill(scaled, m, f64::NEG_INFINITY)?,
        None => scaled,
    };
    let weights = tape.softmax(masked, Axis::Cols);
    let context = tape.matmul(weights, v)?;
    Ok((context, tape.value(weights).clone()))
}

/// Per-layer multi-head projection weights, fused across heads:
/// `wq`/`wk` are (model_dim, heads*d_k), `wv` is (model_dim, heads*d_v),
/// and `wo` is (heads*d_v, model_dim).
pub struct MultiHeadWeights {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
}

/// concat(head_1..head_h) W_O with each head's weight matrix exposed.
pub fn multi_head(
    tape: &mut Tape,
    q_in: TensorId,
    k_in: TensorId,
    v_in: TensorId,
    w: &MultiHeadWeights,
    mask: Option<&Array>,
) -> Result<(TensorId, Vec<Array>), AutodiffError> {
    let q_all = tape.matmul(q_in, w.wq)?;
    let k_all = tape.matmul(k_in, w.wk)?;
    let v_all = tape.matmul(v_in, w.wv)?;
    let q_heads = tape.split(Axis::Cols, q_all, &vec![w.d_k; w.heads])?;
    let k_heads = tape.split(Axis::Cols, k_all, &vec![w.d_k; w.heads])?;
    let v_heads = tape.split(Axis::Cols, v_all, &vec![w.d_v; w.heads])?;
    let mut contexts = Vec::with_capacity(w.heads);
    let mut maps = Vec::with_capacity(w.heads);
    for i in 0..w.heads {
        let (ctx, weights) = attention(tape, q_heads[i], k_heads[i], v_heads[i], w.d_k, mask)?;
        contexts.push(ctx);
        maps.push(weights);
    }
    let concat = tape.concat(Axis::Cols, &contexts)?;
    let out = tape.matmul(concat, w.wo)?;
    Ok((out, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn filled(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> Array {
        let mut a = Array::zeros(rows, cols);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = f(i);
        }
        a
    }

    #[test]
    fn single_key_gets_full_weight() {
        let mut tape = Tape::new();
        let q = tape.constant(filled(3, 4, |i| i as f64 * 0.1));
        let k = tape.constant(filled(1, 4, |i| 0.3 - i as f64 * 0.05));
        let v = tape.constant(filled(1, 6, |i| i as f64));
        let (ctx, map) = attention(&mut tape, q, k, v, 4, None).unwrap();
        for i in 0..3 {
            assert_eq!(map.get(i, 0), 1.0);
            assert_eq!(tape.value(ctx).row(i), tape.value(v).row(0));
        }
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let mut tape = Tape::new();
        let q = tape.constant(Array::zeros(2, 4));
        let k = tape.constant(filled(5, 4, |i| (i as f64).sin()));
        let v = tape.constant(filled(5, 3, |i| i as f64));
        let (ctx, map) = attention(&mut tape, q, k, v, 4, None).unwrap();
        for i in 0..2 {
            for j in 0..5 {
                assert!((map.get(i, j) - 0.2).abs() < 1e-12);
            }
        }
        // Context is the mean of the value rows.
        for j in 0..3 {
            let mean: f64 = (0..5).map(|r| tape.value(v).get(r, j)).sum::<f64>() / 5.0;
            assert!((tape.value(ctx).get(0, j) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_matches_hand_rolled_oracle() {
        let q = Array::from_vec(2, 2, vec![1.0, 0.0, 0.5, -0.5]);
        let k = Array::from_vec(2, 2, vec![0.2, 0.4, -0.3, 0.1]);
        let v = Array::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mut tape = Tape::new();
        let qi = tape.constant(q.clone());
        let ki = tape.constant(k.clone());
        let vi = tape.constant(v.clone());
        let (ctx, map) = attention(&mut tape, qi, ki, vi, 2, None).unwrap();
        let scale = 1.0 / 2f64.sqrt();
        for i in 0..2 {
            let s0 = (q.get(i, 0) * k.get(0, 0) + q.get(i, 1) * k.get(0, 1)) * scale;
            let s1 = (q.get(i, 0) * k.get(1, 0) + q.get(i, 1) * k.get(1, 1)) * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            let z = e0 + e1;
            let (w0, w1) = (e0 / z, e1 / z);
            assert!((map.get(i, 0) - w0).abs() < 1e-12);
            assert!((map.get(i, 1) - w1).abs() < 1e-12);
            for j in 0..2 {
                let want = w0 * v.get(0, j) + w1 * v.get(1, j);
                assert!((tape.value(ctx).get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_head_reduces_to_plain_attention_with_output_projection() {
        let mut tape = Tape::new();
        let x = tape.constant(filled(3, 4, |i| (i as f64 * 0.7).cos()));
        let wq = tape.constant(filled(4, 4, |i| (i as f64 * 0.3).sin() * 0.5));
        let wk = tape.constant(filled(4, 4, |i| (i as f64 * 0.11).cos() * 0.5));
        let wv = tape.constant(filled(4, 4, |i| (i as f64 * 0.23).sin() * 0.5));
        let wo = tape.constant(filled(4, 4, |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
        let w = MultiHeadWeights { wq, wk, wv, wo, heads: 1, d_k: 4, d_v: 4 };
        let (out, maps) = multi_head(&mut tape, x, x, x, &w, None).unwrap();
        assert_eq!(maps.len(), 1);
        // With W_O = identity the output equals single-head attention.
        let q = tape.matmul(x, wq).unwrap();
        let k = tape.matmul(x, wk).unwrap();
        let v = tape.matmul(x, wv).unwrap();
        let (plain, _) = attention(&mut tape, q, k, v, 4, None).unwrap();
        let a = tape.value(out).clone();
        let b = tape.value(plain).clone();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shape_is_query_rows_by_model_dim() {
        for heads in [1usize, 2, 4] {
            let mut tape = Tape::new();
            let d_model = 8;
            let d_k = d_model / heads;
            let x = tape.constant(filled(5, d_model, |i| (i as f64).sin()));
            let wq = tape.constant(filled(d_model, heads * d_k, |i| (i as f64 * 0.1).sin()));
            let wk = tape.constant(filled(d_model, heads * d_k, |i| (i as f64 * 0.2).sin()));
            let wv = tape.constant(filled(d_model, heads * d_k, |i| (i as f64 * 0.3).sin()));
            let wo = tape.constant(filled(heads * d_k, d_model, |i| (i as f64 * 0.4).sin()));
            let w = MultiHeadWeights { wq, wk, wv, wo, heads, d_k, d_v: d_k };
            let (out, maps) = multi_head(&mut tape, x, x, x, &w, None).unwrap();
            assert_eq!(tape.value(out).shape(), (5, d_model));
            assert_eq!(maps.len(), heads);
        }
    }

    #[test]
    fn two_head_block_gradients_match_finite_differences() {
        let params = vec![
            ("x".to_string(), filled(3, 4, |i| (i as f64 * 0.37).sin())),
            ("wq".to_string(), filled(4, 4, |i| (i as f64 * 0.13).cos() * 0.6)),
            ("wk".to_string(), filled(4, 4, |i| (i as f64 * 0.29).sin() * 0.6)),
            ("wv".to_string(), filled(4, 4, |i| (i as f64 * 0.41).cos() * 0.6)),
            ("wo".to_string(), filled(4, 4, |i| (i as f64 * 0.53).sin() * 0.6)),
        ];
        let report = grad_check(
            |tape, ids| {
                let w = MultiHeadWeights {
                    wq: ids[1],
                    wk: ids[2],
                    wv: ids[3],
                    wo: ids[4],
                    heads: 2,
                    d_k: 2,
                    d_v: 2,
                };
                let (out, _) = multi_head(tape, ids[0], ids[0], ids[0], &w, None).unwrap();
                let sq = tape.mul(out, out).unwrap();
                let s = tape.sum_all(sq);
                tape.mul_scalar(s, 0.5)
            },
            &params,
            1e-6,
            1e-4,
            16,
        );
        assert!(report.passed(), "max rel err {}", report.max_error());
    }
}
