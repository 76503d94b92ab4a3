//! Model training and the head-to-head trial runner.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::corpus::Corpus;
use super::io::{derive_seed, header, read_versioned, write_file, write_versioned, BenchError};
use crate::context::ContextSituationModel;
use crate::engine::{run_trial, EngineConfig};
use crate::geometry::Scene;
use crate::signal::{
    bbr_train, estimate_noise_variance, train_offset_predictor, BbrModel, OffsetPredictor, SignalOracle,
};

pub const MODELS_FORMAT: &str = "gpcl-models v1";
pub const RESULTS_FORMAT: &str = "gpcl-results v1";
pub const RESULTS_COLUMNS: [&str; 8] = [
    "trial_id",
    "method",
    "seed",
    "initial_iou",
    "final_iou",
    "oracle_calls",
    "wall_ms",
    "status",
];

const STREAM_OFFSET: u64 = 0x6f66_6673;
const STREAM_BBR: u64 = 0x0062_6272;
const STREAM_NOISE: u64 = 0x6e6f_6973;
const STREAM_TRIAL: u64 = 0x7472_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub context: ContextSituationModel,
    pub offset: OffsetPredictor,
    pub bbr: Vec<BbrModel>,
    /// Response noise variance used as the GP's `σ_ε²`.
    pub noise_variance: f64,
}

impl TrainedModels {
    pub fn oracle(&self, cfg: &ExperimentConfig) -> SignalOracle {
        SignalOracle {
            predictor: self.offset.clone(),
            features: cfg.features,
        }
    }

    pub fn bbr(&self, threshold: f64) -> Option<&BbrModel> {
        self.bbr.iter().find(|m| m.threshold == threshold)
    }

    /// Engine settings with the estimated noise variance filled in.
    pub fn engine_config(&self, cfg: &ExperimentConfig) -> EngineConfig {
        let mut e = cfg.engine.clone();
        e.hyperparams.noise_variance = self.noise_variance;
        e
    }
}

pub fn train_models(cfg: &ExperimentConfig, train: &[Scene]) -> Result<TrainedModels, BenchError> {
    cfg.validate()?;
    let err = |what: &str, e: &dyn std::fmt::Display| BenchError::Training(format!("{what}: {e}"));
    let context = ContextSituationModel::fit(train).map_err(|e| err("context model", &e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_OFFSET));
    let offset = train_offset_predictor(
        train,
        &cfg.offset_training,
        &cfg.crops,
        &cfg.features,
        cfg.engine.hyperparams.length_scale,
        &mut rng,
    )
    .map_err(|e| err("offset predictor", &e))?;

    let bbr = cfg
        .bbr_thresholds()
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_BBR ^ t.to_bits()));
            bbr_train(train, &cfg.bbr_training, t, &cfg.crops, &cfg.features, &mut rng)
                .map_err(|e| err(&format!("BB-R({t})"), &e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let noise_variance = match cfg.noise.fixed {
        Some(v) => v,
        None => {
            let oracle = SignalOracle {
                predictor: offset.clone(),
                features: cfg.features,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_NOISE));
            estimate_noise_variance(&oracle, train, &cfg.crops, cfg.noise.proposals, cfg.noise.repeats, &mut rng)
                .max(cfg.noise.floor)
        }
    };

    Ok(TrainedModels {
        context,
        offset,
        bbr,
        noise_variance,
    })
}

#[derive(Serialize)]
struct ModelsMeta<'a> {
    config: &'a ExperimentConfig,
}

pub fn write_models(path: &Path, cfg: &ExperimentConfig, models: &TrainedModels) -> Result<(), BenchError> {
    write_versioned(path, MODELS_FORMAT, &ModelsMeta { config: cfg }, &[serde_json::to_string(models)?])
}

pub fn read_models(path: &Path) -> Result<TrainedModels, BenchError> {
    let (_, lines) = read_versioned(path, MODELS_FORMAT)?;
    let body = lines
        .first()
        .ok_or_else(|| BenchError::Parse(format!("{}: empty model file", path.display())))?;
    Ok(serde_json::from_str(body)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial_id: usize,
    pub method: Method,
    pub seed: u64,
    /// NaN on failed rows.
    pub initial_iou: f64,
    pub final_iou: f64,
    pub oracle_calls: usize,
    pub wall_ms: u64,
    pub status: RowStatus,
}

impl TrialRow {
    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, STREAM_TRIAL + trial as u64)
}

/// Test scene used by a trial: scenes are visited round-robin.
pub fn trial_scene(trial: usize, test_scenes: usize) -> usize {
    trial % test_scenes
}

fn run_one(
    cfg: &ExperimentConfig,
    engine: &EngineConfig,
    models: &TrainedModels,
    oracle: &SignalOracle,
    scene: &Scene,
    trial_id: usize,
    method: Method,
) -> TrialRow {
    let seed = derive_seed(trial_seed(cfg.seed, trial_id), method.stream());
    let start = Instant::now();
    let outcome: Result<(f64, f64, usize), String> = match method {
        Method::Gpcl => run_trial(scene, &models.context, oracle, engine, seed)
            .map(|r| (r.initial_iou_median, r.final_iou, r.oracle_calls))
            .map_err(|e| e.to_string()),
        Method::Bbr(t) => match models.bbr(t) {
            None => Err(format!("no BB-R model trained at threshold {t}")),
            Some(model) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match cfg.crops.crop_in_iou_range(scene, cfg.bbr_initial_iou, &mut rng) {
                    None => Err("no initial crop in the requested IOU range".into()),
                    Some(crop) => {
                        let refined = model.refine(scene, &crop, &cfg.features, &mut rng);
                        Ok((scene.iou_with_target(&crop), scene.iou_with_target(&refined), 1))
                    }
                }
            }
        },
    };
    let wall_ms = if cfg.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    match outcome {
        Ok((initial_iou, final_iou, oracle_calls)) => TrialRow {
            trial_id,
            method,
            seed,
            initial_iou,
            final_iou,
            oracle_calls,
            wall_ms,
            status: RowStatus::Ok,
        },
        Err(msg) => TrialRow {
            trial_id,
            method,
            seed,
            initial_iou: f64::NAN,
            final_iou: f64::NAN,
            oracle_calls: 0,
            wall_ms,
            status: RowStatus::Failed(msg),
        },
    }
}

/// Runs every (trial, method) pair; rows come back in that order whatever
/// the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, corpus: &Corpus, models: &TrainedModels) -> Result<Vec<TrialRow>, BenchError> {
    cfg.validate()?;
    if corpus.test.is_empty() {
        return Err(BenchError::Config("corpus has no test scenes".into()));
    }
    let engine = models.engine_config(cfg);
    let oracle = models.oracle(cfg);
    let jobs: Vec<(usize, Method)> = (0..cfg.trials)
        .flat_map(|t| cfg.methods.iter().map(move |m| (t, *m)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(t, m)| {
            let scene = &corpus.test[trial_scene(t, corpus.test.len())];
            run_one(cfg, &engine, models, &oracle, scene, t, m)
        })
        .collect())
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

#[derive(Serialize)]
struct ResultsMeta<'a> {
    config: &'a ExperimentConfig,
    trial_seeds: Vec<u64>,
}

pub fn results_csv(cfg: &ExperimentConfig, rows: &[TrialRow]) -> Result<String, BenchError> {
    let meta = ResultsMeta {
        config: cfg,
        trial_seeds: (0..cfg.trials).map(|t| trial_seed(cfg.seed, t)).collect(),
    };
    let mut out = header(RESULTS_FORMAT, &meta)?.into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| BenchError::Parse(e.to_string());
        w.write_record(RESULTS_COLUMNS).map_err(csv_err)?;
        for r in rows {
            let status = match &r.status {
                RowStatus::Ok => "ok".to_string(),
                RowStatus::Failed(m) => format!("failed: {m}"),
            };
            w.write_record([
                r.trial_id.to_string(),
                r.method.to_string(),
                r.seed.to_string(),
                fmt_f64(r.initial_iou),
                fmt_f64(r.final_iou),
                r.oracle_calls.to_string(),
                r.wall_ms.to_string(),
                status,
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| BenchError::Parse(e.to_string()))?;
    }
    Ok(String::from_utf8(out).expect("CSV output is UTF-8"))
}

pub fn write_results(path: &Path, cfg: &ExperimentConfig, rows: &[TrialRow]) -> Result<(), BenchError> {
    write_file(path, &results_csv(cfg, rows)?)
}

/// Parses a results file; also returns its `#config` value.
pub fn read_results(path: &Path) -> Result<(serde_json::Value, Vec<TrialRow>), BenchError> {
    let (meta, lines) = read_versioned(path, RESULTS_FORMAT)?;
    let body = lines.join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let perr = |what: String| BenchError::Parse(format!("{}: {what}", path.display()));
    let headers = rdr.headers().map_err(|e| perr(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_COLUMNS {
        return Err(perr(format!("unexpected columns {:?}", headers)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let f = |i: usize| -> Result<f64, BenchError> {
            match &rec[i] {
                "" => Ok(f64::NAN),
                s => s.parse().map_err(|_| perr(format!("bad number '{s}'"))),
            }
        };
        let int = |i: usize| -> Result<u64, BenchError> { rec[i].parse().map_err(|_| perr(format!("bad integer '{}'", &rec[i]))) };
        let status = match &rec[7] {
            "ok" => RowStatus::Ok,
            s => RowStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
        };
        rows.push(TrialRow {
            trial_id: int(0)? as usize,
            method: rec[1].parse().map_err(perr)?,
            seed: int(2)?,
            initial_iou: f(3)?,
            final_iou: f(4)?,
            oracle_calls: int(5)? as usize,
            wall_ms: int(6)?,
            status,
        });
    }
    Ok((meta, rows))
}
