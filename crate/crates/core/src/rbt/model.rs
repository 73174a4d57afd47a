use crate::envlab::SeededRng;
use crate::numcore::{Mask, Tape, Tensor, Var};

use super::{HeadIndex, RbtError, RbtParams};

const LN_EPS: f64 = 1e-5;

/// Outputs of one forward pass over `M` steps.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Action-aligned trunk outputs `[M, E]`.
    pub x: Var,
    /// Redistributed rewards `[M]`.
    pub rewards: Var,
    /// Next-state predictions `[M, state_dim]`.
    pub next_state: Var,
}

/// Parameters bound to a tape.
pub struct RbtModel<'p> {
    pub params: &'p RbtParams,
    vars: Vec<Var>,
}

impl<'p> RbtModel<'p> {
    /// Registers every parameter as a differentiable leaf.
    pub fn bind(tape: &mut Tape, params: &'p RbtParams) -> Self {
        let vars = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
        Self { params, vars }
    }

    /// Registers parameters as constants (inference only).
    pub fn bind_frozen(tape: &mut Tape, params: &'p RbtParams) -> Self {
        let vars = params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        Self { params, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }

    /// Interleaved `s_0, a_0, s_1, a_1, ...` tokens `[2M, E]`. Both tokens of
    /// step `t` carry positional row `offset + t`.
    pub fn embed_sequence(&self, tape: &mut Tape, states: Var, actions: Var, offset: usize) -> Result<Var, RbtError> {
        let m = tape.value(states).rows();
        if tape.value(actions).rows() != m {
            return Err(RbtError::LengthMismatch { states: m, actions: tape.value(actions).rows() });
        }
        let p = &self.params;
        if tape.value(states).cols() != p.state_dim || tape.value(actions).cols() != p.action_dim {
            return Err(RbtError::FeatureDim {
                expected: (p.state_dim, p.action_dim),
                got: (tape.value(states).cols(), tape.value(actions).cols()),
            });
        }
        let cap = p.config.max_positions();
        if m == 0 || offset + m > cap {
            return Err(RbtError::SequenceLength { len: offset + m, max: cap });
        }
        let ix = &p.index;
        let s = tape.matmul(states, self.v(ix.state_w))?;
        let s = tape.add_row(s, self.v(ix.state_b))?;
        let a = tape.matmul(actions, self.v(ix.action_w))?;
        let a = tape.add_row(a, self.v(ix.action_b))?;
        let rows: Vec<usize> = (offset..offset + m).collect();
        let pos = tape.gather_rows(self.v(ix.pos), &rows)?;
        let s = tape.add(s, pos)?;
        let a = tape.add(a, pos)?;
        Ok(tape.interleave_rows(s, a)?)
    }

    fn affine_norm(&self, tape: &mut Tape, h: Var, g: usize, b: usize) -> Result<Var, RbtError> {
        let n = tape.layer_norm(h, LN_EPS)?;
        let n = tape.mul_row(n, self.v(g))?;
        Ok(tape.add_row(n, self.v(b))?)
    }

    /// Pre-norm causal transformer over `tokens`; returns the outputs at the
    /// action-token positions `[M, E]`.
    pub fn causal_forward(&self, tape: &mut Tape, tokens: Var, mut dropout: Option<&mut SeededRng>) -> Result<Var, RbtError> {
        let n_tok = tape.value(tokens).rows();
        if n_tok % 2 != 0 {
            return Err(RbtError::OddTokenCount(n_tok));
        }
        let c = &self.params.config;
        let rate = if dropout.is_some() { c.dropout } else { 0.0 };
        let dh = c.head_dim();
        let mut h = tokens;
        for blk in &self.params.index.blocks {
            let a = self.affine_norm(tape, h, blk.ln1_g, blk.ln1_b)?;
            let q = tape.matmul(a, self.v(blk.wq))?;
            let k = tape.matmul(a, self.v(blk.wk))?;
            let v = tape.matmul(a, self.v(blk.wv))?;
            let mut heads = Vec::with_capacity(c.n_heads);
            for i in 0..c.n_heads {
                let (lo, hi) = (i * dh, (i + 1) * dh);
                let (qh, kh, vh) = if c.n_heads == 1 {
                    (q, k, v)
                } else {
                    (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
                };
                let scores = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
                let w = tape.softmax_rows(scores, Mask::Causal)?;
                let w = match dropout.as_deref_mut() {
                    Some(rng) => tape.dropout(w, rate, rng)?,
                    None => w,
                };
                heads.push(tape.matmul(w, vh)?);
            }
            let att = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            let att = tape.matmul(att, self.v(blk.wo))?;
            let att = tape.add_row(att, self.v(blk.bo))?;
            h = tape.add(h, att)?;

            let f = self.affine_norm(tape, h, blk.ln2_g, blk.ln2_b)?;
            let f = tape.matmul(f, self.v(blk.w1))?;
            let f = tape.add_row(f, self.v(blk.b1))?;
            let f = tape.gelu(f)?;
            let f = match dropout.as_deref_mut() {
                Some(rng) => tape.dropout(f, rate, rng)?,
                None => f,
            };
            let f = tape.matmul(f, self.v(blk.w2))?;
            let f = tape.add_row(f, self.v(blk.b2))?;
            h = tape.add(h, f)?;
        }
        let ix = &self.params.index;
        let h = self.affine_norm(tape, h, ix.lnf_g, ix.lnf_b)?;
        let actions: Vec<usize> = (0..n_tok / 2).map(|t| 2 * t + 1).collect();
        Ok(tape.gather_rows(h, &actions)?)
    }

    /// Per-step rewards `[M]` from action-aligned embeddings `x: [M, E]`.
    pub fn redistribute(&self, tape: &mut Tape, x: Var, dropout: Option<&mut SeededRng>) -> Result<Var, RbtError> {
        let m = tape.value(x).rows();
        match self.params.index.head {
            HeadIndex::Bidirectional { wq, wk, wv, bv } => {
                let q = tape.matmul(x, self.v(wq))?;
                let k = tape.matmul(x, self.v(wk))?;
                let v = tape.matmul(x, self.v(wv))?;
                let v = tape.add_row(v, self.v(bv))?;
                let rate = if dropout.is_some() { self.params.config.dropout } else { 0.0 };
                bidirectional_attention(tape, q, k, v, rate, dropout)
            }
            HeadIndex::Linear { w, b } => {
                let r = tape.matmul(x, self.v(w))?;
                let r = tape.add_row(r, self.v(b))?;
                Ok(tape.reshape(r, &[m])?)
            }
        }
    }

    /// Linear next-state decoder `[M, state_dim]`.
    pub fn predict_next_state(&self, tape: &mut Tape, x: Var) -> Result<Var, RbtError> {
        let ix = &self.params.index;
        let s = tape.matmul(x, self.v(ix.dec_w))?;
        Ok(tape.add_row(s, self.v(ix.dec_b))?)
    }

    /// Embedding, trunk, reward head and decoder in one go. `dropout` carries
    /// the mask RNG in training mode; `None` disables dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        states: &Tensor,
        actions: &Tensor,
        offset: usize,
        mut dropout: Option<&mut SeededRng>,
    ) -> Result<Forward, RbtError> {
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        let tokens = self.embed_sequence(tape, s, a, offset)?;
        let x = self.causal_forward(tape, tokens, dropout.as_deref_mut())?;
        let rewards = self.redistribute(tape, x, dropout)?;
        let next_state = self.predict_next_state(tape, x)?;
        Ok(Forward { x, rewards, next_state })
    }
}

/// Single-head unmasked attention with scalar values:
/// `r_t = sum_l softmax_l(<q_t, k_l> / sqrt(d)) v_l`, for `q, k: [M, d]`, `v: [M, 1]`.
pub fn bidirectional_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    dropout_rate: f64,
    dropout: Option<&mut SeededRng>,
) -> Result<Var, RbtError> {
    let m = tape.value(q).rows();
    let d = tape.value(q).cols();
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let w = tape.softmax_rows(scores, Mask::None)?;
    let w = match dropout {
        Some(rng) => tape.dropout(w, dropout_rate, rng)?,
        None => w,
    };
    let r = tape.matmul(w, v)?;
    Ok(tape.reshape(r, &[m])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbt::RbtConfig;
    use rand::SeedableRng;

    fn toy(bidir: bool) -> RbtParams {
        let c = RbtConfig {
            embed_dim: 8,
            n_heads: 2,
            n_causal_layers: 1,
            seq_len: 12,
            relabel_len: 12,
            bidirectional_head: bidir,
            ..RbtConfig::default()
        };
        RbtParams::new(&c, 3, 2, &mut SeededRng::seed_from_u64(5)).unwrap()
    }

    fn inputs(m: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = SeededRng::seed_from_u64(seed);
        (Tensor::uniform(&[m, 3], -1.0, 1.0, &mut rng), Tensor::uniform(&[m, 2], -1.0, 1.0, &mut rng))
    }

    #[test]
    fn one_step_gives_two_tokens() {
        let p = toy(true);
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, &p);
        let (s, a) = inputs(1, 0);
        let (s, a) = (tape.constant(s), tape.constant(a));
        let tok = model.embed_sequence(&mut tape, s, a, 0).unwrap();
        assert_eq!(tape.value(tok).shape(), &[2, 8]);
    }

    #[test]
    fn offsets_differ_only_by_positional_rows() {
        let p = toy(true);
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, &p);
        let (s, a) = inputs(1, 1);
        let (s, a) = (tape.constant(s), tape.constant(a));
        let t0 = model.embed_sequence(&mut tape, s, a, 0).unwrap();
        let t5 = model.embed_sequence(&mut tape, s, a, 5).unwrap();
        let pos = &p.tensors()[p.index.pos];
        for tok in 0..2 {
            for j in 0..8 {
                let diff = tape.value(t5).get(tok, j) - tape.value(t0).get(tok, j);
                assert!((diff - (pos.get(5, j) - pos.get(0, j))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn halves_embed_with_shifted_offsets() {
        let p = toy(true);
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, &p);
        let (s, a) = inputs(6, 2);
        let whole = {
            let (s, a) = (tape.constant(s.clone()), tape.constant(a.clone()));
            model.embed_sequence(&mut tape, s, a, 2).unwrap()
        };
        let split = |tape: &mut Tape, rows: std::ops::Range<usize>, off| {
            let s = Tensor::from_rows(&rows.clone().map(|r| s.row(r).to_vec()).collect::<Vec<_>>()).unwrap();
            let a = Tensor::from_rows(&rows.map(|r| a.row(r).to_vec()).collect::<Vec<_>>()).unwrap();
            let (s, a) = (tape.constant(s), tape.constant(a));
            model.embed_sequence(tape, s, a, off).unwrap()
        };
        let first = split(&mut tape, 0..3, 2);
        let second = split(&mut tape, 3..6, 5);
        let mut joined = tape.value(first).data().to_vec();
        joined.extend_from_slice(tape.value(second).data());
        assert_eq!(tape.value(whole).data(), &joined[..]);
    }

    #[test]
    fn rejects_mismatched_lengths_and_overflow() {
        let p = toy(true);
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, &p);
        let (s, _) = inputs(3, 3);
        let (_, a) = inputs(2, 3);
        assert!(model.forward(&mut tape, &s, &a, 0, None).is_err());
        let (s, a) = inputs(5, 3);
        assert!(model.forward(&mut tape, &s, &a, 8, None).is_err());
    }

    #[test]
    fn future_tokens_do_not_change_past_outputs() {
        let p = toy(true);
        let (s, a) = inputs(6, 4);
        let run = |s: &Tensor, a: &Tensor| {
            let mut tape = Tape::new();
            let model = RbtModel::bind_frozen(&mut tape, &p);
            let out = model.forward(&mut tape, s, a, 0, None).unwrap();
            tape.value(out.x).clone()
        };
        let base = run(&s, &a);
        // perturb the action token of step 3 (token position 7)
        let mut a2 = a.clone();
        a2.data_mut()[3 * 2] += 0.5;
        let moved = run(&s, &a2);
        for t in 0..3 {
            assert_eq!(base.row(t), moved.row(t));
        }
        assert_ne!(base.row(3), moved.row(3));
    }

    #[test]
    fn single_step_depends_only_on_its_tokens() {
        let p = toy(true);
        let (s, a) = inputs(1, 6);
        let mut tape = Tape::new();
        let model = RbtModel::bind_frozen(&mut tape, &p);
        let out = model.forward(&mut tape, &s, &a, 0, None).unwrap();
        assert_eq!(tape.value(out.x).shape(), &[1, 8]);
        assert_eq!(tape.value(out.rewards).shape(), &[1]);
    }

    #[test]
    fn causal_weights_rows_sum_to_one_over_allowed_region() {
        let mut tape = Tape::new();
        let mut rng = SeededRng::seed_from_u64(7);
        let s = tape.leaf(Tensor::uniform(&[5, 5], -2.0, 2.0, &mut rng));
        let w = tape.softmax_rows(s, Mask::Causal).unwrap();
        let w = tape.value(w);
        for i in 0..5 {
            let allowed: f64 = w.row(i)[..=i].iter().sum();
            assert!((allowed - 1.0).abs() < 1e-12);
            assert!(w.row(i)[i + 1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn head_singleton_and_uniform_keys() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::from_rows(&[vec![0.3, -1.0]]).unwrap());
        let k = tape.leaf(Tensor::from_rows(&[vec![2.0, 0.5]]).unwrap());
        let v = tape.leaf(Tensor::from_rows(&[vec![1.7]]).unwrap());
        let r = bidirectional_attention(&mut tape, q, k, v, 0.0, None).unwrap();
        assert_eq!(tape.value(r).data(), &[1.7]);

        let mut rng = SeededRng::seed_from_u64(8);
        let q = tape.leaf(Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng));
        let k = tape.leaf(Tensor::filled(&[4, 3], 0.4));
        let vals = Tensor::uniform(&[4, 1], -1.0, 1.0, &mut rng);
        let mean = vals.sum() / 4.0;
        let v = tape.leaf(vals);
        let r = bidirectional_attention(&mut tape, q, k, v, 0.0, None).unwrap();
        assert!(tape.value(r).data().iter().all(|x| (x - mean).abs() < 1e-14));
    }

    fn scalar_formula(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
        let (m, d) = (q.rows(), q.cols());
        (0..m)
            .map(|t| {
                let logits: Vec<f64> = (0..m)
                    .map(|l| (0..d).map(|j| q.get(t, j) * k.get(l, j)).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|x| (x - top).exp()).sum();
                (0..m).map(|l| (logits[l] - top).exp() / z * v.get(l, 0)).sum()
            })
            .collect()
    }

    #[test]
    fn head_matches_scalar_formula() {
        let mut rng = SeededRng::seed_from_u64(13);
        for m in 1..=16 {
            for d in 1..=8 {
                let q = Tensor::uniform(&[m, d], -2.0, 2.0, &mut rng);
                let k = Tensor::uniform(&[m, d], -2.0, 2.0, &mut rng);
                let v = Tensor::uniform(&[m, 1], -2.0, 2.0, &mut rng);
                let expect = scalar_formula(&q, &k, &v);
                let mut tape = Tape::new();
                let (qv, kv, vv) = (tape.leaf(q), tape.leaf(k), tape.leaf(v));
                let r = bidirectional_attention(&mut tape, qv, kv, vv, 0.0, None).unwrap();
                for (a, b) in tape.value(r).data().iter().zip(&expect) {
                    assert!((a - b).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn head_sees_future_steps() {
        let p = toy(true);
        let (s, a) = inputs(5, 9);
        let mut tape = Tape::new();
        let model = RbtModel::bind_frozen(&mut tape, &p);
        let s = tape.constant(s);
        let a = tape.constant(a);
        let tok = model.embed_sequence(&mut tape, s, a, 0).unwrap();
        let x0 = model.causal_forward(&mut tape, tok, None).unwrap();
        let x = tape.leaf(tape.value(x0).clone());
        let r = model.redistribute(&mut tape, x, None).unwrap();
        let r = tape.reshape(r, &[1, 5]).unwrap();
        let r0 = tape.slice_cols(r, 0, 1).unwrap();
        let loss = tape.sum_all(r0).unwrap();
        let g = tape.backward(loss).unwrap();
        let gx = g.get(x).unwrap();
        let future: f64 = (1..5).map(|t| gx.row(t).iter().map(|v| v.abs()).sum::<f64>()).sum();
        assert!(future > 0.0);
    }

    #[test]
    fn zero_model_gives_constant_rewards_and_zero_states() {
        let c = toy(true).config;
        let p = RbtParams::zeroed(&c, 3, 2).unwrap();
        let (s, a) = inputs(7, 10);
        let mut tape = Tape::new();
        let model = RbtModel::bind_frozen(&mut tape, &p);
        let out = model.forward(&mut tape, &s, &a, 0, None).unwrap();
        let r = tape.value(out.rewards).data();
        assert!(r.iter().all(|&v| v == r[0]));
        assert!(tape.value(out.next_state).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_head_variant_runs() {
        let p = toy(false);
        let (s, a) = inputs(4, 11);
        let mut tape = Tape::new();
        let model = RbtModel::bind(&mut tape, &p);
        let out = model.forward(&mut tape, &s, &a, 0, None).unwrap();
        assert_eq!(tape.value(out.rewards).shape(), &[4]);
    }

    #[test]
    fn dropout_off_is_bit_identical() {
        let p = toy(true);
        let (s, a) = inputs(6, 12);
        let run = || {
            let mut tape = Tape::new();
            let model = RbtModel::bind(&mut tape, &p);
            let out = model.forward(&mut tape, &s, &a, 0, None).unwrap();
            tape.value(out.rewards).clone()
        };
        assert_eq!(run(), run());
    }
}
