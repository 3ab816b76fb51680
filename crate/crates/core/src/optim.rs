//! Clipped surrogate with a low-variance KL penalty, and an Adam update.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::{ActionBatch, PolicyParams};
use crate::trajectory::Action;

/// Learning rate used for billion-parameter backbones. Far too small for the
/// desk-scale policy, kept for reference.
pub const LARGE_MODEL_LEARNING_RATE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// One length-normalized ratio per action.
    Sequence,
    /// One ratio per token, each clipped on its own.
    Token,
}

impl RatioMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RatioMode::Sequence => "sequence",
            RatioMode::Token => "token",
        }
    }
}

impl fmt::Display for RatioMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RatioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(RatioMode::Sequence),
            "token" => Ok(RatioMode::Token),
            other => Err(Error::Config(format!("unknown ratio mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub ratio_mode: RatioMode,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: LARGE_MODEL_LEARNING_RATE * 1e4,
            adam_betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            ratio_mode: RatioMode::Sequence,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return bad("optim.clip_epsilon must be > 0");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("optim.kl_beta must be >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("optim.learning_rate must be > 0");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("optim.adam_beta1 and optim.adam_beta2 must lie in [0,1)");
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return bad("optim.adam_epsilon must be > 0");
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `exp(mean_k(new_k - old_k))`.
pub fn sequence_ratio(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<f64> {
    check_lengths(new_logprobs, old_logprobs)?;
    if new_logprobs.is_empty() {
        return Err(Error::Invalid("sequence ratio of an empty action".into()));
    }
    let mut sum = 0.0;
    for (n, o) in new_logprobs.iter().zip(old_logprobs) {
        sum += n - o;
    }
    Ok((sum / new_logprobs.len() as f64).exp())
}

pub fn token_ratios(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<Vec<f64>> {
    check_lengths(new_logprobs, old_logprobs)?;
    Ok(new_logprobs
        .iter()
        .zip(old_logprobs)
        .map(|(n, o)| (n - o).exp())
        .collect())
}

/// Objective of a single unit, `min(s·A, clip(s, 1-ε, 1+ε)·A)`.
pub fn unit_objective(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// The clipped branch is active when it is strictly smaller.
fn unit_is_clipped(ratio: f64, advantage: f64, clip_epsilon: f64) -> bool {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    clipped * advantage < ratio * advantage
}

/// Loss and clipped fraction over units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClippedLoss {
    pub loss: f64,
    pub clipped_fraction: f64,
}

pub fn clipped_objective(ratios: &[f64], advantages: &[f64], clip_epsilon: f64) -> Result<ClippedLoss> {
    check_lengths(ratios, advantages)?;
    if ratios.is_empty() {
        return Err(Error::Invalid("clipped objective over zero units".into()));
    }
    if ratios.iter().chain(advantages).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("clipped objective input"));
    }
    let mut sum = 0.0;
    let mut clipped = 0usize;
    for (s, a) in ratios.iter().zip(advantages) {
        sum += unit_objective(*s, *a, clip_epsilon);
        clipped += usize::from(unit_is_clipped(*s, *a, clip_epsilon));
    }
    let n = ratios.len() as f64;
    Ok(ClippedLoss {
        loss: -sum / n,
        clipped_fraction: clipped as f64 / n,
    })
}

/// Mean over tokens of `exp(ref - new) - (ref - new) - 1`.
pub fn kl_penalty(new_logprobs: &[f64], ref_logprobs: &[f64]) -> Result<f64> {
    check_lengths(new_logprobs, ref_logprobs)?;
    if new_logprobs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (n, r) in new_logprobs.iter().zip(ref_logprobs) {
        let d = r - n;
        sum += d.exp() - d - 1.0;
    }
    Ok(sum / new_logprobs.len() as f64)
}

/// Everything one policy update consumes: actions with their sampling-time
/// and reference log-probabilities, and one advantage per action.
#[derive(Clone, Debug)]
pub struct UpdateBatch {
    actions: ActionBatch,
    old_logprobs: Vec<f64>,
    ref_logprobs: Vec<f64>,
    advantages: Vec<f64>,
}

impl UpdateBatch {
    pub fn new(feature_dim: usize) -> Self {
        UpdateBatch {
            actions: ActionBatch::new(feature_dim),
            old_logprobs: Vec::new(),
            ref_logprobs: Vec::new(),
            advantages: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f64], action: &Action, old_logprobs: &[f64], advantage: f64) -> Result<()> {
        if old_logprobs.len() != action.len() {
            return Err(Error::LengthMismatch {
                left: action.len(),
                right: old_logprobs.len(),
            });
        }
        self.actions.push(features, action);
        self.old_logprobs.extend_from_slice(old_logprobs);
        self.advantages.push(advantage);
        Ok(())
    }

    /// Fills reference log-probabilities by scoring every action under
    /// `reference`.
    pub fn score_reference(&mut self, reference: &PolicyParams) -> Result<()> {
        self.ref_logprobs = reference.batch_logprobs(&self.actions)?;
        Ok(())
    }

    pub fn set_reference_logprobs(&mut self, logprobs: Vec<f64>) -> Result<()> {
        check_lengths(&logprobs, &self.old_logprobs)?;
        self.ref_logprobs = logprobs;
        Ok(())
    }

    pub fn actions(&self) -> &ActionBatch {
        &self.actions
    }

    pub fn old_logprobs(&self) -> &[f64] {
        &self.old_logprobs
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn num_actions(&self) -> usize {
        self.advantages.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    /// `policy_loss + β·kl_loss`.
    pub loss: f64,
    pub policy_loss: f64,
    /// KL estimate before the β weight.
    pub kl_loss: f64,
    pub gradient_norm: f64,
    pub clipped_fraction: f64,
}

struct LossGraph {
    total: Var,
    policy: Var,
    kl: Var,
    /// Ratio per unit and the advantage of that unit.
    ratios: Var,
    unit_advantages: Vec<f64>,
}

fn build_loss<'a>(
    g: &mut Graph<'a>,
    params: &'a PolicyParams,
    batch: &UpdateBatch,
    config: &OptimConfig,
    trainable: bool,
) -> Result<(LossGraph, crate::policy::PolicyVars)> {
    if batch.num_actions() == 0 {
        return Err(Error::Invalid("empty update batch".into()));
    }
    if batch.ref_logprobs.len() != batch.old_logprobs.len() {
        return Err(Error::Invalid("reference log-probabilities missing".into()));
    }
    if batch.advantages.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("advantage"));
    }
    let vars = params.bind(g, trainable);
    let new = params.token_logprobs_graph(g, &vars, &batch.actions)?;
    let spans: Vec<Range<usize>> = batch.actions.spans().to_vec();
    let old = g.constant(Tensor::vector(batch.old_logprobs.clone()));
    let log_ratio = g.sub(new, old);
    let eps = config.clip_epsilon;

    let (ratios, unit_advantages) = match config.ratio_mode {
        RatioMode::Sequence => {
            let mean = g.segment_mean(log_ratio, spans);
            (g.exp(mean), batch.advantages.clone())
        }
        RatioMode::Token => {
            let mut adv = Vec::with_capacity(batch.old_logprobs.len());
            for (span, a) in spans.iter().zip(&batch.advantages) {
                adv.extend(std::iter::repeat(*a).take(span.len()));
            }
            (g.exp(log_ratio), adv)
        }
    };
    let a = g.constant(Tensor::vector(unit_advantages.clone()));
    let unclipped = g.mul(ratios, a);
    let clamped = g.clamp(ratios, 1.0 - eps, 1.0 + eps);
    let clipped = g.mul(clamped, a);
    let unit = g.minimum(unclipped, clipped);
    let objective = g.mean(unit);
    let policy = g.scale(objective, -1.0);

    let reference = g.constant(Tensor::vector(batch.ref_logprobs.clone()));
    let d = g.sub(reference, new);
    let e = g.exp(d);
    let k = g.sub(e, d);
    let k = g.add_scalar(k, -1.0);
    let kl = g.mean(k);
    let weighted = g.scale(kl, config.kl_beta);
    let total = g.add(policy, weighted);
    Ok((
        LossGraph {
            total,
            policy,
            kl,
            ratios,
            unit_advantages,
        },
        vars,
    ))
}

fn report_of(g: &Graph<'_>, lg: &LossGraph, eps: f64) -> UpdateReport {
    let ratios = g.value(lg.ratios).data();
    let clipped = ratios
        .iter()
        .zip(&lg.unit_advantages)
        .filter(|(s, a)| unit_is_clipped(**s, **a, eps))
        .count();
    UpdateReport {
        loss: g.value(lg.total).item(),
        policy_loss: g.value(lg.policy).item(),
        kl_loss: g.value(lg.kl).item(),
        gradient_norm: 0.0,
        clipped_fraction: clipped as f64 / ratios.len() as f64,
    }
}

/// Total loss `policy + β·KL` without gradients.
pub fn loss_value(params: &PolicyParams, batch: &UpdateBatch, config: &OptimConfig) -> Result<UpdateReport> {
    let mut g = Graph::new();
    let (lg, _) = build_loss(&mut g, params, batch, config, false)?;
    Ok(report_of(&g, &lg, config.clip_epsilon))
}

/// Loss report and one gradient tensor per parameter tensor.
pub fn loss_and_gradients(
    params: &PolicyParams,
    batch: &UpdateBatch,
    config: &OptimConfig,
) -> Result<(UpdateReport, Vec<Tensor>)> {
    let mut g = Graph::new();
    let (lg, vars) = build_loss(&mut g, params, batch, config, true)?;
    let mut report = report_of(&g, &lg, config.clip_epsilon);
    if !report.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut grads = g.backward(lg.total)?;
    let out: Vec<Tensor> = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    report.gradient_norm = global_norm(&out);
    Ok((report, out))
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    let mut ss = 0.0;
    for t in grads {
        for x in t.data() {
            ss += x * x;
        }
    }
    ss.sqrt()
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Bias-corrected Adam step in place; returns the pre-update global norm.
pub fn apply_update(
    params: &mut PolicyParams,
    gradients: &[Tensor],
    config: &OptimConfig,
    state: &mut AdamState,
) -> Result<f64> {
    let tensors = params.tensors_mut();
    if gradients.len() != tensors.len() {
        return Err(Error::LengthMismatch {
            left: tensors.len(),
            right: gradients.len(),
        });
    }
    for (p, g) in tensors.iter().zip(gradients) {
        if p.shape() != g.shape() {
            return Err(Error::Invalid(format!(
                "gradient shape {:?} for parameter of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if gradients.iter().any(|g| g.data().iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("gradient"));
    }
    let norm = global_norm(gradients);
    if state.m.is_empty() {
        state.m = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        state.v = state.m.clone();
    }
    state.t += 1;
    let (b1, b2) = config.adam_betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in tensors
        .iter_mut()
        .zip(gradients)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::trajectory::Token;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_examples() {
        assert_eq!(sequence_ratio(&[-0.3, -1.2], &[-0.3, -1.2]).unwrap(), 1.0);
        let two = 2f64.ln();
        let r = sequence_ratio(&[two - 1.0, -two - 1.0], &[-1.0, -1.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = sequence_ratio(&[3f64.ln() - 2.0], &[-2.0]).unwrap();
        assert!((r - 3.0).abs() < 1e-14);
        assert!(matches!(sequence_ratio(&[0.0], &[0.0, 0.0]), Err(Error::LengthMismatch { .. })));
        assert!(token_ratios(&[0.0], &[]).is_err());
        let t = token_ratios(&[two - 1.0, -0.5], &[-1.0, -0.5]).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-15);
        assert_eq!(t[1], 1.0);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(unit_objective(1.5, 1.0, 0.2), 1.2);
        assert_eq!(unit_objective(1.0, -0.7, 0.2), -0.7);
        assert_eq!(unit_objective(0.5, -1.0, 0.2), -0.8);
        let c = clipped_objective(&[1.5, 1.0], &[1.0, 3.0], 0.2).unwrap();
        assert_eq!(c.loss, -(1.2 + 3.0) / 2.0);
        assert_eq!(c.clipped_fraction, 0.5);
        assert!(clipped_objective(&[f64::NAN], &[1.0], 0.2).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_penalty(&[-0.1, -2.0], &[-0.1, -2.0]).unwrap(), 0.0);
        let two = 2f64.ln();
        let k = kl_penalty(&[-1.0 - two], &[-1.0]).unwrap();
        assert!((k - (1.0 - two)).abs() < 1e-15);
        assert!((k - 0.30685).abs() < 1e-5);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::new(3, 2, &PolicyConfig { hidden: 2, init_scale: 0.1 }, &mut rng);
        let before = p.clone();
        let cfg = OptimConfig::default();
        let zeros: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let mut st = AdamState::new();
        assert_eq!(apply_update(&mut p, &zeros, &cfg, &mut st).unwrap(), 0.0);
        assert_eq!(p, before);

        let mut ones = zeros.clone();
        ones[0].data_mut()[0] = 1.0;
        let mut st = AdamState::new();
        let norm = apply_update(&mut p, &ones, &cfg, &mut st).unwrap();
        assert_eq!(norm, 1.0);
        let delta = p.tensors()[0].data()[0] - before.tensors()[0].data()[0];
        assert!((delta + cfg.learning_rate).abs() < 1e-10);

        let mut bad = zeros;
        bad[1].data_mut()[0] = f64::INFINITY;
        assert!(apply_update(&mut p, &bad, &cfg, &mut AdamState::new()).is_err());
    }

    #[test]
    fn identity_update_has_unit_ratios_and_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::new(6, 7, &PolicyConfig::default(), &mut rng);
        let mut batch = UpdateBatch::new(7);
        for (i, toks) in [vec![2u32, 3], vec![4], vec![5, 1]].into_iter().enumerate() {
            let feats: Vec<f64> = (0..7).map(|j| ((i + j) % 3) as f64).collect();
            let a = Action::new(toks.into_iter().map(Token).collect(), 2).unwrap();
            let lp = p.action_token_logprobs(&feats, &a).unwrap();
            batch.push(&feats, &a, &lp, [1.0, -0.5, 0.25][i]).unwrap();
        }
        batch.score_reference(&p).unwrap();
        let r = loss_value(&p, &batch, &OptimConfig::default()).unwrap();
        assert_eq!(r.kl_loss, 0.0);
        assert_eq!(r.clipped_fraction, 0.0);
        assert!((r.policy_loss + (1.0 - 0.5 + 0.25) / 3.0).abs() < 1e-12);
    }
}
