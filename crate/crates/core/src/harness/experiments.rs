//! Multi-run experiments: the (γ, λ) grid and the ablation matrix. Every
//! cell or row runs the same seeds, so comparisons are paired.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_run, EvalResult, TrainConfig};
use crate::credit::{Estimator, NormMode};
use crate::error::{Error, Result};
use crate::optim::RatioMode;

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn run_seeds(
    base: &TrainConfig,
    seeds: &[u64],
    out: Option<&Path>,
    label: &str,
    edit: impl Fn(&mut TrainConfig),
) -> Result<Vec<EvalResult>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = base.clone();
            edit(&mut c);
            c.seed = seed;
            let dir = out.map(|o| o.join(format!("{label}_seed{seed}")));
            Ok(train_run(&c, dir.as_deref())?.final_eval)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    /// Final greedy evaluation of each seed's run.
    pub finals: Vec<EvalResult>,
}

impl SweepCell {
    pub fn success(&self) -> (f64, f64) {
        mean_std(&self.finals.iter().map(|e| e.success_rate).collect::<Vec<_>>())
    }

    pub fn score(&self) -> (f64, f64) {
        mean_std(&self.finals.iter().map(|e| e.mean_score).collect::<Vec<_>>())
    }
}

/// One independent run per (γ, λ, seed), γ-major.
pub fn sweep(
    base: &TrainConfig,
    gammas: &[f64],
    lambdas: &[f64],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SweepCell>> {
    if gammas.is_empty() || lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs non-empty γ, λ and seed lists".into()));
    }
    let mut cells = Vec::new();
    for &gamma in gammas {
        for &lambda in lambdas {
            let label = format!("gamma{gamma}_lambda{lambda}");
            let finals = run_seeds(base, seeds, out, &label, |c| {
                c.credit.gamma = gamma;
                c.credit.lambda = lambda;
            })?;
            cells.push(SweepCell {
                gamma,
                lambda,
                seeds: seeds.to_vec(),
                finals,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(mut out: W, cells: &[SweepCell]) -> Result<()> {
    writeln!(out, "gamma,lambda,success_mean,success_std,score_mean,score_std,seeds")?;
    for c in cells {
        let (sm, ss) = c.success();
        let (cm, cs) = c.score();
        writeln!(out, "{},{},{sm},{ss},{cm},{cs},{}", c.gamma, c.lambda, c.seeds.len())?;
    }
    Ok(())
}

/// The full method and six single-knob ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    TdOnly,
    McStep,
    TokenRatio,
    TrajBroadcast,
    BatchNorm,
    NoNorm,
}

pub fn ablation_variants() -> [AblationVariant; 7] {
    use AblationVariant::*;
    [Full, TdOnly, McStep, TokenRatio, TrajBroadcast, BatchNorm, NoNorm]
}

impl AblationVariant {
    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "gagpo",
            AblationVariant::TdOnly => "td_only",
            AblationVariant::McStep => "mc_step",
            AblationVariant::TokenRatio => "token_ratio",
            AblationVariant::TrajBroadcast => "traj_broadcast",
            AblationVariant::BatchNorm => "batch_norm",
            AblationVariant::NoNorm => "no_norm",
        }
    }

    /// Changes exactly one knob of `c`.
    pub fn apply(self, c: &mut TrainConfig) {
        match self {
            AblationVariant::Full => {}
            AblationVariant::TdOnly => c.credit.estimator = Estimator::TdOnly,
            AblationVariant::McStep => c.credit.estimator = Estimator::McStep,
            AblationVariant::TokenRatio => c.optim.ratio_mode = RatioMode::Token,
            AblationVariant::TrajBroadcast => c.credit.estimator = Estimator::TrajBroadcast,
            AblationVariant::BatchNorm => c.credit.norm_mode = NormMode::Batch,
            AblationVariant::NoNorm => c.credit.norm_mode = NormMode::None,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seeds: Vec<u64>,
    pub finals: Vec<EvalResult>,
}

impl AblationRow {
    pub fn success(&self) -> (f64, f64) {
        mean_std(&self.finals.iter().map(|e| e.success_rate).collect::<Vec<_>>())
    }

    pub fn score(&self) -> (f64, f64) {
        mean_std(&self.finals.iter().map(|e| e.mean_score).collect::<Vec<_>>())
    }
}

/// Runs `variants` (the full matrix when `None`) on identical seeds.
pub fn ablation_matrix(
    base: &TrainConfig,
    variants: Option<&[AblationVariant]>,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let all = ablation_variants();
    variants
        .unwrap_or(&all)
        .iter()
        .map(|&v| {
            let finals = run_seeds(base, seeds, out, v.name(), |c| v.apply(c))?;
            Ok(AblationRow {
                variant: v,
                seeds: seeds.to_vec(),
                finals,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(out, "variant,success_mean,success_std,score_mean,score_std,seeds")?;
    for r in rows {
        let (sm, ss) = r.success();
        let (cm, cs) = r.score();
        writeln!(out, "{},{sm},{ss},{cm},{cs},{}", r.variant, r.seeds.len())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn variants_change_one_knob() {
        let base = TrainConfig::default();
        assert_eq!(ablation_variants().len(), 7);
        for v in ablation_variants() {
            let mut c = base.clone();
            v.apply(&mut c);
            let changed = [
                c.credit.estimator != base.credit.estimator,
                c.credit.norm_mode != base.credit.norm_mode,
                c.optim.ratio_mode != base.optim.ratio_mode,
            ]
            .iter()
            .filter(|x| **x)
            .count();
            assert_eq!(changed, usize::from(v != AblationVariant::Full), "{v}");
            assert_eq!((c.credit.gamma, c.credit.lambda, c.seed), (base.credit.gamma, base.credit.lambda, base.seed));
        }
    }
}
