//! Shared neural-network plumbing: named parameter storage, deterministic
//! initialization, and the multi-head attention building block used by the
//! encoder and decoder.

use crate::autodiff::{Matrix, Tape, Var};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Named parameter tensors. Iteration order is the sorted name order, which
/// fixes the reduction order everywhere (optimizer, clipping, checkpoints).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
}

/// How a tensor is filled at init time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// normal(0, scale): projection weights
    Normal { scale: f64 },
    Zeros,
    Ones,
}

/// FNV-1a, used to derive a per-tensor RNG stream from (seed, name) so that
/// initialization does not depend on registration order.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: (usize, usize), init: Init, seed: u64) {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter {name}"
        );
        let value = match init {
            Init::Zeros => Matrix::zeros(shape),
            Init::Ones => Matrix::ones(shape),
            Init::Normal { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
                Matrix::from_shape_fn(shape, |_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                })
            }
        };
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Matrix {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn insert_raw(&mut self, name: String, value: Matrix) {
        self.params.insert(name, value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_elements(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }
}

/// Binds parameters to leaves of one tape, on first use. After the backward
/// pass, [`TapedParams::bound`] maps each touched name to its leaf for
/// gradient readout.
pub struct TapedParams<'a> {
    tape: &'a Tape,
    store: &'a ParamStore,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> TapedParams<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        TapedParams {
            tape,
            store,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// Leaf var for a named parameter; one leaf per name per tape.
    pub fn var(&self, name: &str) -> Var {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let v = self.tape.leaf(self.store.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn bound(&self) -> BTreeMap<String, Var> {
        self.bound.borrow().clone()
    }
}

/// `x @ W + b` where `W = {prefix}.w`, `b = {prefix}.b`.
pub fn affine(tape: &Tape, tp: &TapedParams, x: Var, prefix: &str) -> Var {
    let w = tp.var(&format!("{prefix}.w"));
    let b = tp.var(&format!("{prefix}.b"));
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

const MASK_NEG: f64 = -1e30;

/// Multi-head scaled dot-product attention.
///
/// `queries` is `Lq x d`, `keys_values` is `Lk x d`. `key_mask[j] == false`
/// hides key `j` from every query; `causal` hides keys `j > i` from query `i`
/// (valid only when queries and keys are the same sequence).
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &Tape,
    tp: &TapedParams,
    prefix: &str,
    n_heads: usize,
    queries: Var,
    keys_values: Var,
    key_mask: Option<&[bool]>,
    causal: bool,
) -> Var {
    let (lq, d) = tape.dim(queries);
    let (lk, dk) = tape.dim(keys_values);
    assert_eq!(d, dk, "query/key width mismatch");
    assert_eq!(d % n_heads, 0, "d_model must divide n_heads");
    let dh = d / n_heads;

    let q = affine(tape, tp, queries, &format!("{prefix}.q"));
    let k = affine(tape, tp, keys_values, &format!("{prefix}.k"));
    let v = affine(tape, tp, keys_values, &format!("{prefix}.v"));

    let mut mask = Matrix::zeros((lq, lk));
    if let Some(km) = key_mask {
        assert_eq!(km.len(), lk);
        for (j, &valid) in km.iter().enumerate() {
            if !valid {
                for i in 0..lq {
                    mask[[i, j]] = MASK_NEG;
                }
            }
        }
    }
    if causal {
        assert_eq!(lq, lk, "causal mask needs square attention");
        for i in 0..lq {
            for j in (i + 1)..lk {
                mask[[i, j]] = MASK_NEG;
            }
        }
    }

    let mut heads = Vec::with_capacity(n_heads);
    for hidx in 0..n_heads {
        let from = hidx * dh;
        let to = from + dh;
        let qh = tape.slice_cols(q, from, to);
        let kh = tape.slice_cols(k, from, to);
        let vh = tape.slice_cols(v, from, to);
        let scores = tape.matmul(qh, tape.transpose(kh));
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = tape.add_mask(scaled, &mask);
        let weights = tape.softmax_rows(masked);
        heads.push(tape.matmul(weights, vh));
    }
    let concat = tape.concat_cols(&heads);
    affine(tape, tp, concat, &format!("{prefix}.o"))
}

/// Registers the eight tensors of one attention block.
pub fn register_attention(store: &mut ParamStore, prefix: &str, d: usize, seed: u64) {
    for part in ["q", "k", "v", "o"] {
        store.register(
            &format!("{prefix}.{part}.w"),
            (d, d),
            Init::Normal { scale: 0.02 },
            seed,
        );
        store.register(&format!("{prefix}.{part}.b"), (1, d), Init::Zeros, seed);
    }
}

/// Registers a layer-norm gain/bias pair.
pub fn register_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.register(&format!("{prefix}.gain"), (1, d), Init::Ones, 0);
    store.register(&format!("{prefix}.bias"), (1, d), Init::Zeros, 0);
}

pub fn layer_norm(tape: &Tape, tp: &TapedParams, x: Var, prefix: &str) -> Var {
    let gain = tp.var(&format!("{prefix}.gain"));
    let bias = tp.var(&format!("{prefix}.bias"));
    tape.layer_norm(x, gain, bias, 1e-5)
}
