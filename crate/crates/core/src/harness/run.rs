//! A training run and its directory of artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_metrics_svg, EvalResult, StepMetrics, TrainConfig, Trainer};
use crate::config::{parse_pairs, render_config};
use crate::credit::write_advantage_dump;
use crate::error::{Error, Result};
use crate::trajectory::write_rollout_dump;

/// File layout of a run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
}

impl RunArtifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunArtifacts { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.cfg")
    }

    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn checkpoint_init(&self) -> PathBuf {
        self.dir.join("checkpoint_init.bin")
    }

    pub fn checkpoint_final(&self) -> PathBuf {
        self.dir.join("checkpoint_final.bin")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }

    pub fn plot(&self) -> PathBuf {
        self.dir.join("metrics.svg")
    }

    pub fn dumps(&self) -> PathBuf {
        self.dir.join("dumps")
    }

    pub fn advantage_dump(&self, step: u64) -> PathBuf {
        self.dumps().join(format!("advantages_step{step:04}.jsonl"))
    }

    pub fn rollout_dump(&self, step: u64) -> PathBuf {
        self.dumps().join(format!("rollouts_step{step:04}.jsonl"))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    created_unix: u64,
    config: BTreeMap<String, String>,
    artifacts: BTreeMap<&'static str, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Number of updates applied before the evaluation.
    pub step: u64,
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub steps: u64,
    pub evaluations: Vec<EvalPoint>,
    pub final_eval: EvalResult,
}

impl RunSummary {
    /// First evaluation whose success rate reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.evaluations
            .iter()
            .find(|p| p.result.success_rate >= threshold)
            .map(|p| p.step)
    }
}

/// Content hash of the resolved configuration.
pub fn run_id(config: &TrainConfig) -> String {
    let digest = Sha256::digest(render_config(config).as_bytes());
    hex::encode(&digest[..6])
}

fn write_manifest(art: &RunArtifacts, config: &TrainConfig, id: &str) -> Result<()> {
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let names = |p: PathBuf| {
        p.strip_prefix(&art.dir)
            .map(|r| r.display().to_string())
            .unwrap_or_default()
    };
    let mut artifacts = BTreeMap::new();
    artifacts.insert("config", names(art.config()));
    artifacts.insert("vocab", names(art.vocab()));
    artifacts.insert("metrics", names(art.metrics()));
    artifacts.insert("checkpoint_init", names(art.checkpoint_init()));
    artifacts.insert("checkpoint_final", names(art.checkpoint_final()));
    artifacts.insert("summary", names(art.summary()));
    if config.dump_every > 0 {
        artifacts.insert("dumps", names(art.dumps()));
    }
    if config.plot {
        artifacts.insert("plot", names(art.plot()));
    }
    let manifest = Manifest {
        run_id: id,
        created_unix,
        config: parse_pairs(&render_config(config))?.into_iter().collect(),
        artifacts,
    };
    let mut f = File::create(art.manifest())?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trainer.policy().write_checkpoint(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Trains for `config.total_steps` updates. With `out`, the directory gets
/// the manifest (written first), the resolved config, the vocabulary,
/// metrics, initial and final checkpoints, dumps, a summary and an optional
/// plot. Everything except the manifest's timestamp is a pure function of
/// the configuration.
pub fn train_run(config: &TrainConfig, out: Option<&Path>) -> Result<RunSummary> {
    let mut trainer = Trainer::new(config.clone())?;
    let id = run_id(config);
    let art = out.map(RunArtifacts::new);
    let mut metrics_out = None;
    if let Some(art) = &art {
        fs::create_dir_all(&art.dir)?;
        write_manifest(art, config, &id)?;
        fs::write(art.config(), render_config(config))?;
        trainer.env().vocab().write(File::create(art.vocab())?)?;
        write_checkpoint(&trainer, &art.checkpoint_init())?;
        if config.dump_every > 0 {
            fs::create_dir_all(art.dumps())?;
        }
        metrics_out = Some(BufWriter::new(File::create(art.metrics())?));
    }

    let mut evaluations = Vec::new();
    let mut history = Vec::new();
    for _ in 0..config.total_steps {
        let out = trainer.train_step()?;
        let m = &out.metrics;
        if let Some(e) = m.eval {
            evaluations.push(EvalPoint { step: m.step, result: e });
        }
        if let Some(w) = metrics_out.as_mut() {
            serde_json::to_writer(&mut *w, m)?;
            w.write_all(b"\n")?;
        }
        if let Some(art) = &art {
            if config.dump_every > 0 && m.step % config.dump_every == 0 {
                let mut a = BufWriter::new(File::create(art.advantage_dump(m.step))?);
                write_advantage_dump(&mut a, m.step, &out.groups, &out.tables)?;
                a.flush()?;
                let mut r = BufWriter::new(File::create(art.rollout_dump(m.step))?);
                write_rollout_dump(&mut r, &out.groups)?;
                r.flush()?;
            }
        }
        if config.plot {
            history.push(out.metrics);
        }
    }
    let final_eval = trainer.evaluate()?;
    evaluations.push(EvalPoint {
        step: trainer.step(),
        result: final_eval,
    });
    let summary = RunSummary {
        run_id: id,
        steps: trainer.step(),
        evaluations,
        final_eval,
    };
    if let Some(art) = &art {
        if let Some(mut w) = metrics_out {
            w.flush()?;
        }
        write_checkpoint(&trainer, &art.checkpoint_final())?;
        let mut f = File::create(art.summary())?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        f.write_all(b"\n")?;
        if config.plot {
            let mut w = BufWriter::new(File::create(art.plot())?);
            write_metrics_svg(&mut w, &history, &summary.evaluations)?;
            w.flush()?;
        }
    }
    Ok(summary)
}

/// Reads a metrics file, one record per line.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("metrics", format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
