//! Flat `key = value` configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! env.name = keydoor
//! credit.lambda = 0.8
//! ```
//!
//! Resolution order is built-in defaults, then the file, then overrides.
//! Unknown keys are rejected. Choosing `env.name` resets the environment
//! defaults (budget included) before any other `env.*` key is applied.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::env::{EnvConfig, EnvName};
use crate::error::{Error, Result};
use crate::harness::TrainConfig;

pub const KEYS: [&str; 29] = [
    "env.name",
    "env.budget",
    "env.invalid_penalty",
    "env.grid_size",
    "env.chain_length",
    "env.items_per_type",
    "credit.gamma",
    "credit.lambda",
    "credit.norm_mode",
    "credit.norm_epsilon",
    "credit.estimator",
    "credit.broadcast_weight",
    "optim.clip_epsilon",
    "optim.kl_beta",
    "optim.learning_rate",
    "optim.adam_beta1",
    "optim.adam_beta2",
    "optim.adam_epsilon",
    "optim.ratio_mode",
    "policy.hidden",
    "policy.init_scale",
    "train.group_size",
    "train.tasks_per_batch",
    "train.total_steps",
    "train.eval_every",
    "train.eval_episodes",
    "train.seed",
    "train.dump_every",
    "train.plot",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

/// Splits config text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", n + 1)));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

/// Parses one `KEY=VALUE` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

/// Applies one setting. `env.name` is handled by [`resolve`].
pub fn apply_setting(c: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "env.name" => {
            let name: EnvName = value.parse()?;
            if name != c.env.name {
                c.env = EnvConfig::new(name);
            }
        }
        "env.budget" => c.env.interaction_budget = parse(key, value)?,
        "env.invalid_penalty" => c.env.invalid_action_penalty = parse(key, value)?,
        "env.grid_size" => c.env.grid_size = parse(key, value)?,
        "env.chain_length" => c.env.chain_length = parse(key, value)?,
        "env.items_per_type" => c.env.items_per_type = parse(key, value)?,
        "credit.gamma" => c.credit.gamma = parse(key, value)?,
        "credit.lambda" => c.credit.lambda = parse(key, value)?,
        "credit.norm_mode" => c.credit.norm_mode = value.parse()?,
        "credit.norm_epsilon" => c.credit.norm_epsilon = parse(key, value)?,
        "credit.estimator" => c.credit.estimator = value.parse()?,
        "credit.broadcast_weight" => c.credit.broadcast_weight = parse(key, value)?,
        "optim.clip_epsilon" => c.optim.clip_epsilon = parse(key, value)?,
        "optim.kl_beta" => c.optim.kl_beta = parse(key, value)?,
        "optim.learning_rate" => c.optim.learning_rate = parse(key, value)?,
        "optim.adam_beta1" => c.optim.adam_betas.0 = parse(key, value)?,
        "optim.adam_beta2" => c.optim.adam_betas.1 = parse(key, value)?,
        "optim.adam_epsilon" => c.optim.adam_epsilon = parse(key, value)?,
        "optim.ratio_mode" => c.optim.ratio_mode = value.parse()?,
        "policy.hidden" => c.policy.hidden = parse(key, value)?,
        "policy.init_scale" => c.policy.init_scale = parse(key, value)?,
        "train.group_size" => c.group_size = parse(key, value)?,
        "train.tasks_per_batch" => c.tasks_per_batch = parse(key, value)?,
        "train.total_steps" => c.total_steps = parse(key, value)?,
        "train.eval_every" => c.eval_every = parse(key, value)?,
        "train.eval_episodes" => c.eval_episodes = parse(key, value)?,
        "train.seed" => c.seed = parse(key, value)?,
        "train.dump_every" => c.dump_every = parse(key, value)?,
        "train.plot" => c.plot = parse(key, value)?,
        other => return Err(Error::Config(format!("unknown key `{other}`"))),
    }
    Ok(())
}

/// Defaults ← `pairs` in order, then validation.
pub fn resolve(pairs: &[(String, String)]) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some((k, v)) = pairs.iter().rev().find(|(k, _)| k == "env.name") {
        apply_setting(&mut c, k, v)?;
    }
    for (k, v) in pairs.iter().filter(|(k, _)| k != "env.name") {
        apply_setting(&mut c, k, v)?;
    }
    c.validate()?;
    Ok(c)
}

/// Reads `path` (if any) and layers `overrides` (`KEY=VALUE`) on top.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut pairs = match path {
        Some(p) => parse_pairs(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => Vec::new(),
    };
    for o in overrides {
        pairs.push(parse_override(o)?);
    }
    resolve(&pairs)
}

/// Every key with its resolved value, in [`KEYS`] order. Parsing the output
/// gives back the same configuration.
pub fn render_config(c: &TrainConfig) -> String {
    let values: [String; 29] = [
        c.env.name.to_string(),
        c.env.interaction_budget.to_string(),
        c.env.invalid_action_penalty.to_string(),
        c.env.grid_size.to_string(),
        c.env.chain_length.to_string(),
        c.env.items_per_type.to_string(),
        c.credit.gamma.to_string(),
        c.credit.lambda.to_string(),
        c.credit.norm_mode.to_string(),
        c.credit.norm_epsilon.to_string(),
        c.credit.estimator.to_string(),
        c.credit.broadcast_weight.to_string(),
        c.optim.clip_epsilon.to_string(),
        c.optim.kl_beta.to_string(),
        c.optim.learning_rate.to_string(),
        c.optim.adam_betas.0.to_string(),
        c.optim.adam_betas.1.to_string(),
        c.optim.adam_epsilon.to_string(),
        c.optim.ratio_mode.to_string(),
        c.policy.hidden.to_string(),
        c.policy.init_scale.to_string(),
        c.group_size.to_string(),
        c.tasks_per_batch.to_string(),
        c.total_steps.to_string(),
        c.eval_every.to_string(),
        c.eval_episodes.to_string(),
        c.seed.to_string(),
        c.dump_every.to_string(),
        c.plot.to_string(),
    ];
    KEYS.iter()
        .zip(values)
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
