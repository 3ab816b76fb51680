//! Autoregressive token policy.
//!
//! State features (bag-of-token counts plus the remaining-budget fraction)
//! go through `tanh(W_in x + b_in)`, then `W_hidden · h + b_hidden`. The
//! mean embedding of the already emitted action prefix is added before the
//! second `tanh`, and `W_out` maps the result to vocabulary logits.

use std::io::{Read, Write};
use std::ops::{Deref, Range};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::env::Vocab;
use crate::error::{Error, Result};
use crate::trajectory::{Action, StateKey, Token};

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub hidden: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 64,
            init_scale: 0.08,
        }
    }
}

/// Bag-of-token counts over `vocab` followed by `budget_remaining`.
pub fn featurize(state: &StateKey, vocab: &Vocab, budget_remaining: f64) -> Vec<f64> {
    let mut f = vec![0.0; vocab.len() + 1];
    for t in vocab.tokenize(state.as_str()) {
        f[t.index()] += 1.0;
    }
    f[vocab.len()] = budget_remaining;
    f
}

/// Features for the step taken after `steps_taken` interactions.
pub fn step_features(vocab: &Vocab, state: &StateKey, steps_taken: usize, budget: usize) -> Vec<f64> {
    let remaining = budget.saturating_sub(steps_taken) as f64 / budget as f64;
    featurize(state, vocab, remaining)
}

pub const PARAM_NAMES: [&str; 7] = [
    "embed", "w_in", "b_in", "w_hidden", "b_hidden", "w_out", "b_out",
];

const EMBED: usize = 0;
const W_IN: usize = 1;
const B_IN: usize = 2;
const W_HIDDEN: usize = 3;
const B_HIDDEN: usize = 4;
const W_OUT: usize = 5;
const B_OUT: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    feature_dim: usize,
    hidden: usize,
    tensors: Vec<Tensor>,
}

/// Graph handles for one binding of [`PolicyParams`].
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    vars: [Var; 7],
}

impl PolicyVars {
    pub fn all(&self) -> &[Var; 7] {
        &self.vars
    }
}

/// A batch of (state features, action) pairs flattened to token rows.
#[derive(Clone, Debug, Default)]
pub struct ActionBatch {
    feature_dim: usize,
    features: Vec<f64>,
    token_state: Vec<usize>,
    prefixes: Vec<Vec<usize>>,
    targets: Vec<usize>,
    spans: Vec<Range<usize>>,
}

impl ActionBatch {
    pub fn new(feature_dim: usize) -> Self {
        ActionBatch {
            feature_dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, features: &[f64], action: &Action) {
        assert_eq!(features.len(), self.feature_dim, "feature width");
        let step = self.spans.len();
        self.features.extend_from_slice(features);
        let start = self.targets.len();
        let ids: Vec<usize> = action.tokens().iter().map(|t| t.index()).collect();
        for k in 0..ids.len() {
            self.token_state.push(step);
            self.prefixes.push(ids[..k].to_vec());
            self.targets.push(ids[k]);
        }
        self.spans.push(start..self.targets.len());
    }

    pub fn num_actions(&self) -> usize {
        self.spans.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.targets.len()
    }

    /// Token rows belonging to each action.
    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }
}

impl PolicyParams {
    pub fn new<R: Rng>(vocab_size: usize, feature_dim: usize, config: &PolicyConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let shapes = Self::shapes(vocab_size, feature_dim, h);
        let s = config.init_scale;
        let tensors = shapes
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
                    .collect();
                Tensor::new(shape, data).expect("shape matches data")
            })
            .collect();
        PolicyParams {
            vocab_size,
            feature_dim,
            hidden: h,
            tensors,
        }
    }

    fn shapes(v: usize, f: usize, h: usize) -> [Vec<usize>; 7] {
        [
            vec![v, h],
            vec![h, f],
            vec![h],
            vec![h, h],
            vec![h],
            vec![v, h],
            vec![v],
        ]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Mutable access to a parameter by name, e.g. `"b_out"`.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = PARAM_NAMES.iter().position(|n| *n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot(Arc::new(self.clone()))
    }

    /// Registers the parameters in `g`, trainable or constant.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> PolicyVars {
        let vars = std::array::from_fn(|i| {
            if trainable {
                g.param(&self.tensors[i])
            } else {
                g.constant_ref(&self.tensors[i])
            }
        });
        PolicyVars { vars }
    }

    /// Log-softmax rows `[R, V]` for token rows given by (state row, prefix).
    fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        vars: &PolicyVars,
        features: Var,
        token_state: Vec<usize>,
        prefixes: Vec<Vec<usize>>,
    ) -> Var {
        let v = &vars.vars;
        let h1 = g.matmul_nt(features, v[W_IN]);
        let h1 = g.add_row_bias(h1, v[B_IN]);
        let h1 = g.tanh(h1);
        let z = g.matmul_nt(h1, v[W_HIDDEN]);
        let z = g.add_row_bias(z, v[B_HIDDEN]);
        let z = g.gather_rows(z, token_state);
        let e = g.mean_pool_rows(v[EMBED], prefixes);
        let h2 = g.add(z, e);
        let h2 = g.tanh(h2);
        let logits = g.matmul_nt(h2, v[W_OUT]);
        let logits = g.add_row_bias(logits, v[B_OUT]);
        g.log_softmax(logits)
    }

    fn check_finite(g: &Graph<'_>, lsm: Var) -> Result<()> {
        if g.value(lsm).data().iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("policy logits"))
        }
    }

    /// Differentiable per-token log-probabilities `[num_tokens]` of `batch`.
    pub fn token_logprobs_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        vars: &PolicyVars,
        batch: &ActionBatch,
    ) -> Result<Var> {
        let n = batch.num_actions();
        let feats = g.constant(Tensor::matrix(n, batch.feature_dim, batch.features.clone())?);
        let lsm = self.forward(
            g,
            vars,
            feats,
            batch.token_state.clone(),
            batch.prefixes.clone(),
        );
        Self::check_finite(g, lsm)?;
        Ok(g.pick(lsm, batch.targets.clone()))
    }

    /// Per-token log-probabilities of every action in `batch`, flattened.
    pub fn batch_logprobs(&self, batch: &ActionBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let lp = self.token_logprobs_graph(&mut g, &vars, batch)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Log-probability of each token of `action` given the state features
    /// and the preceding tokens.
    pub fn action_token_logprobs(&self, features: &[f64], action: &Action) -> Result<Vec<f64>> {
        let mut batch = ActionBatch::new(self.feature_dim);
        batch.push(features, action);
        self.batch_logprobs(&batch)
    }

    /// Full next-token log-distributions for rows of (features, prefix).
    pub fn next_token_logprobs(&self, rows: &[(&[f64], &[Token])]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let mut flat = Vec::with_capacity(rows.len() * self.feature_dim);
        for (f, _) in rows {
            assert_eq!(f.len(), self.feature_dim, "feature width");
            flat.extend_from_slice(f);
        }
        let feats = g.constant(Tensor::matrix(rows.len(), self.feature_dim, flat)?);
        let prefixes = rows
            .iter()
            .map(|(_, p)| p.iter().map(|t| t.index()).collect())
            .collect();
        let lsm = self.forward(&mut g, &vars, feats, (0..rows.len()).collect(), prefixes);
        Self::check_finite(&g, lsm)?;
        let out = g.value(lsm);
        Ok((0..rows.len()).map(|r| out.row(r).to_vec()).collect())
    }

    /// Samples one action per feature row, token by token, stopping at
    /// `eoa` or after `max_len` tokens. Returns the recorded log-probs.
    pub fn sample_actions<R: Rng>(
        &self,
        features: &[Vec<f64>],
        max_len: usize,
        eoa: Token,
        rng: &mut R,
    ) -> Result<Vec<(Action, Vec<f64>)>> {
        self.decode(features, max_len, eoa, |_, dist| sample_index(dist, rng))
    }

    /// Like [`Self::sample_actions`], but row `i` draws from `rngs[owner[i]]`.
    /// The draw order within each generator depends only on its own rows.
    pub fn sample_actions_with<R: Rng>(
        &self,
        features: &[Vec<f64>],
        max_len: usize,
        eoa: Token,
        rngs: &mut [R],
        owner: &[usize],
    ) -> Result<Vec<(Action, Vec<f64>)>> {
        assert_eq!(owner.len(), features.len(), "one owner per row");
        self.decode(features, max_len, eoa, |row, dist| sample_index(dist, &mut rngs[owner[row]]))
    }

    pub fn sample_action<R: Rng>(
        &self,
        features: &[f64],
        max_len: usize,
        eoa: Token,
        rng: &mut R,
    ) -> Result<(Action, Vec<f64>)> {
        let mut out = self.sample_actions(&[features.to_vec()], max_len, eoa, rng)?;
        Ok(out.pop().expect("one row"))
    }

    /// Greedy decoding: the highest-probability token at every position
    /// (lowest index on ties).
    pub fn greedy_actions(
        &self,
        features: &[Vec<f64>],
        max_len: usize,
        eoa: Token,
    ) -> Result<Vec<(Action, Vec<f64>)>> {
        self.decode(features, max_len, eoa, |_, dist| {
            let mut best = 0;
            for (i, lp) in dist.iter().enumerate() {
                if *lp > dist[best] {
                    best = i;
                }
            }
            best
        })
    }

    fn decode(
        &self,
        features: &[Vec<f64>],
        max_len: usize,
        eoa: Token,
        mut choose: impl FnMut(usize, &[f64]) -> usize,
    ) -> Result<Vec<(Action, Vec<f64>)>> {
        if max_len == 0 {
            return Err(Error::Invalid("max action length must be >= 1".into()));
        }
        let mut tokens: Vec<Vec<Token>> = vec![Vec::new(); features.len()];
        let mut logprobs: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
        let mut open: Vec<usize> = (0..features.len()).collect();
        while !open.is_empty() {
            let rows: Vec<(&[f64], &[Token])> = open
                .iter()
                .map(|&i| (features[i].as_slice(), tokens[i].as_slice()))
                .collect();
            let dists = self.next_token_logprobs(&rows)?;
            for (&i, dist) in open.iter().zip(&dists) {
                let t = choose(i, dist);
                tokens[i].push(Token(t as u32));
                logprobs[i].push(dist[t]);
            }
            open.retain(|&i| tokens[i].len() < max_len && *tokens[i].last().unwrap() != eoa);
        }
        Ok(tokens
            .into_iter()
            .zip(logprobs)
            .map(|(t, lp)| (Action::new(t, max_len).expect("1..=max_len tokens"), lp))
            .collect())
    }

    /// Shannon entropy of the first-token distribution for each state row.
    pub fn first_token_entropy(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        let rows: Vec<(&[f64], &[Token])> =
            features.iter().map(|f| (f.as_slice(), &[][..])).collect();
        Ok(self
            .next_token_logprobs(&rows)?
            .iter()
            .map(|d| entropy_of(d))
            .collect())
    }

    pub fn entropy(&self, features: &[f64]) -> Result<f64> {
        Ok(self.first_token_entropy(&[features.to_vec()])?[0])
    }

    /// Binary checkpoint. Layout, all integers little-endian:
    ///
    /// ```text
    /// magic      8 bytes  "GAGPOCK1"
    /// version    u32      1
    /// vocab      u32
    /// features   u32
    /// hidden     u32
    /// count      u32      number of tensors
    /// per tensor:
    ///   name_len u32, name (UTF-8), ndim u32, dims (u64 each)
    /// data       f64 LE, every tensor in header order, row-major
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for x in [
            CHECKPOINT_VERSION,
            self.vocab_size as u32,
            self.feature_dim as u32,
            self.hidden as u32,
            self.tensors.len() as u32,
        ] {
            out.write_all(&x.to_le_bytes())?;
        }
        for (name, t) in PARAM_NAMES.iter().zip(&self.tensors) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for d in t.shape() {
                out.write_all(&(*d as u64).to_le_bytes())?;
            }
        }
        for t in &self.tensors {
            for x in t.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let bad = |d: &str| Error::format("checkpoint", d);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 5];
        for x in &mut u32s {
            *x = read_u32(&mut input)?;
        }
        let [version, vocab_size, feature_dim, hidden, count] = u32s;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if count as usize != PARAM_NAMES.len() {
            return Err(bad(&format!("expected 7 tensors, found {count}")));
        }
        let (v, f, h) = (vocab_size as usize, feature_dim as usize, hidden as usize);
        let expected = Self::shapes(v, f, h);
        let mut shapes = Vec::with_capacity(7);
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let len = read_u32(&mut input)? as usize;
            if len > 64 {
                return Err(bad("tensor name too long"));
            }
            let mut buf = vec![0u8; len];
            input.read_exact(&mut buf)?;
            if buf != name.as_bytes() {
                return Err(bad(&format!("expected tensor {name}")));
            }
            let ndim = read_u32(&mut input)? as usize;
            if ndim > 2 {
                return Err(bad("tensor rank > 2"));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != expected[i] {
                return Err(bad(&format!("tensor {name} has shape {shape:?}")));
            }
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(7);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                input.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(PolicyParams {
            vocab_size: v,
            feature_dim: f,
            hidden: h,
            tensors,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GAGPOCK1";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let w = WeightedIndex::new(dist.iter().map(|lp| lp.exp())).expect("valid softmax");
    w.sample(rng)
}

/// `-Σ p log p` for a log-probability vector.
pub fn entropy_of(logprobs: &[f64]) -> f64 {
    let mut h = 0.0;
    for lp in logprobs {
        let p = lp.exp();
        if p > 0.0 {
            h -= p * lp;
        }
    }
    h.max(0.0)
}

/// Frozen policy parameters (the sampling policy or the KL reference).
#[derive(Clone, Debug)]
pub struct PolicySnapshot(Arc<PolicyParams>);

impl Deref for PolicySnapshot {
    type Target = PolicyParams;

    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

impl From<PolicyParams> for PolicySnapshot {
    fn from(p: PolicyParams) -> Self {
        PolicySnapshot(Arc::new(p))
    }
}
