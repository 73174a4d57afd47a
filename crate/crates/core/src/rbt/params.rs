use crate::envlab::SeededRng;
use crate::numcore::Tensor;

use super::{RbtConfig, RbtError};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Positions of one causal block's tensors in the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockIndex {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadIndex {
    /// `W_q, W_k: [E, E]`, `W_v: [E, 1]` plus a scalar value bias.
    Bidirectional { wq: usize, wk: usize, wv: usize, bv: usize },
    /// Per-step linear reward `x_t w + b`.
    Linear { w: usize, b: usize },
}

/// Positions of every tensor in the flat parameter list, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIndex {
    pub state_w: usize,
    pub state_b: usize,
    pub action_w: usize,
    pub action_b: usize,
    pub pos: usize,
    pub blocks: Vec<BlockIndex>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head: HeadIndex,
    pub dec_w: usize,
    pub dec_b: usize,
}

struct Layout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Layout {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.inits.push(init);
        self.names.len() - 1
    }
}

fn layout(config: &RbtConfig, state_dim: usize, action_dim: usize) -> (ParamIndex, Layout) {
    let e = config.embed_dim;
    let mut l = Layout { names: vec![], shapes: vec![], inits: vec![] };
    let state_w = l.add("state_w".into(), &[state_dim, e], Init::Normal);
    let state_b = l.add("state_b".into(), &[e], Init::Zeros);
    let action_w = l.add("action_w".into(), &[action_dim, e], Init::Normal);
    let action_b = l.add("action_b".into(), &[e], Init::Zeros);
    let pos = l.add("pos".into(), &[config.max_positions(), e], Init::Normal);
    let blocks = (0..config.n_causal_layers)
        .map(|i| BlockIndex {
            ln1_g: l.add(format!("block{i}.ln1_g"), &[e], Init::Ones),
            ln1_b: l.add(format!("block{i}.ln1_b"), &[e], Init::Zeros),
            wq: l.add(format!("block{i}.wq"), &[e, e], Init::Normal),
            wk: l.add(format!("block{i}.wk"), &[e, e], Init::Normal),
            wv: l.add(format!("block{i}.wv"), &[e, e], Init::Normal),
            wo: l.add(format!("block{i}.wo"), &[e, e], Init::Normal),
            bo: l.add(format!("block{i}.bo"), &[e], Init::Zeros),
            ln2_g: l.add(format!("block{i}.ln2_g"), &[e], Init::Ones),
            ln2_b: l.add(format!("block{i}.ln2_b"), &[e], Init::Zeros),
            w1: l.add(format!("block{i}.w1"), &[e, 4 * e], Init::Normal),
            b1: l.add(format!("block{i}.b1"), &[4 * e], Init::Zeros),
            w2: l.add(format!("block{i}.w2"), &[4 * e, e], Init::Normal),
            b2: l.add(format!("block{i}.b2"), &[e], Init::Zeros),
        })
        .collect();
    let lnf_g = l.add("lnf_g".into(), &[e], Init::Ones);
    let lnf_b = l.add("lnf_b".into(), &[e], Init::Zeros);
    let head = if config.bidirectional_head {
        HeadIndex::Bidirectional {
            wq: l.add("head.wq".into(), &[e, e], Init::Normal),
            wk: l.add("head.wk".into(), &[e, e], Init::Normal),
            wv: l.add("head.wv".into(), &[e, 1], Init::Normal),
            bv: l.add("head.bv".into(), &[1], Init::Zeros),
        }
    } else {
        HeadIndex::Linear {
            w: l.add("head.w".into(), &[e, 1], Init::Normal),
            b: l.add("head.b".into(), &[1], Init::Zeros),
        }
    };
    let dec_w = l.add("dec_w".into(), &[e, state_dim], Init::Normal);
    let dec_b = l.add("dec_b".into(), &[state_dim], Init::Zeros);
    let index = ParamIndex { state_w, state_b, action_w, action_b, pos, blocks, lnf_g, lnf_b, head, dec_w, dec_b };
    (index, l)
}

/// All learnable tensors of the reward model, stored flat in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct RbtParams {
    pub config: RbtConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub index: ParamIndex,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl RbtParams {
    /// Gaussian `N(0, 0.02^2)` weights, zero biases, unit layer-norm gains.
    pub fn new(config: &RbtConfig, state_dim: usize, action_dim: usize, rng: &mut SeededRng) -> Result<Self, RbtError> {
        Self::build(config, state_dim, action_dim, |shape, init| match init {
            Init::Normal => Tensor::randn(shape, INIT_STD, rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
        })
    }

    /// Every entry zero, layer-norm gains included.
    pub fn zeroed(config: &RbtConfig, state_dim: usize, action_dim: usize) -> Result<Self, RbtError> {
        Self::build(config, state_dim, action_dim, |shape, _| Tensor::zeros(shape))
    }

    fn build(
        config: &RbtConfig,
        state_dim: usize,
        action_dim: usize,
        mut make: impl FnMut(&[usize], Init) -> Tensor,
    ) -> Result<Self, RbtError> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(RbtError::Config("state and action dimensions must be positive".into()));
        }
        let (index, l) = layout(config, state_dim, action_dim);
        let tensors = l.shapes.iter().zip(&l.inits).map(|(s, &i)| make(s, i)).collect();
        Ok(Self { config: config.clone(), state_dim, action_dim, index, names: l.names, tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), RbtError> {
        if values.len() != self.n_scalars() {
            return Err(RbtError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.n_scalars(),
                values.len()
            )));
        }
        let mut rest = values;
        for t in &mut self.tensors {
            let (head, tail) = rest.split_at(t.len());
            t.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
