//! Plot-ready CSV files: initial-versus-final IOU scatter per method and the
//! response-versus-offset calibration curve.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::experiment::{TrainedModels, TrialRow};
use super::io::{derive_seed, header, write_file, BenchError};
use crate::geometry::Scene;
use crate::signal::{calibration_curve, CalibrationBin};

pub const SCATTER_FORMAT: &str = "gpcl-scatter v1";
pub const CALIBRATION_FORMAT: &str = "gpcl-calibration v1";
const STREAM_CALIBRATION: u64 = 0x6361_6c69;

#[derive(Serialize)]
struct ScatterMeta<'a> {
    method: String,
    /// Points strictly above this line improved on their initial IOU.
    break_even: &'static str,
    source: &'a serde_json::Value,
}

/// `initial_iou,final_iou,above_break_even` for the successful rows of one method.
pub fn scatter_csv(method: Method, rows: &[TrialRow], source: &serde_json::Value) -> Result<String, BenchError> {
    let meta = ScatterMeta {
        method: method.to_string(),
        break_even: "final_iou = initial_iou",
        source,
    };
    let mut out = header(SCATTER_FORMAT, &meta)?;
    out.push_str("trial_id,initial_iou,final_iou,above_break_even\n");
    for r in rows.iter().filter(|r| r.method == method && r.is_ok()) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.trial_id,
            r.initial_iou,
            r.final_iou,
            u8::from(r.final_iou > r.initial_iou)
        ));
    }
    Ok(out)
}

/// Writes `scatter_<method>.csv` for every method in `rows`.
pub fn write_scatter(dir: &Path, rows: &[TrialRow], source: &serde_json::Value) -> Result<Vec<PathBuf>, BenchError> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let path = dir.join(format!("scatter_{m}.csv"));
            write_file(&path, &scatter_csv(m, rows, source)?)?;
            Ok(path)
        })
        .collect()
}

/// Calibration bins measured on `scenes` with the trained response signal.
pub fn calibration_bins(cfg: &ExperimentConfig, models: &TrainedModels, scenes: &[Scene]) -> Vec<CalibrationBin> {
    let oracle = models.oracle(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_CALIBRATION));
    let c = cfg.calibration;
    calibration_curve(&oracle, scenes, &cfg.crops, c.crops, c.bin_width, c.max_offset, &mut rng)
}

#[derive(Serialize)]
struct CalibrationMeta<'a> {
    config: &'a ExperimentConfig,
    scenes: usize,
}

pub fn calibration_csv(cfg: &ExperimentConfig, scenes: usize, bins: &[CalibrationBin]) -> Result<String, BenchError> {
    let mut out = header(CALIBRATION_FORMAT, &CalibrationMeta { config: cfg, scenes })?;
    out.push_str("offset_lo,offset_hi,count,mean_response,std_response\n");
    for b in bins {
        out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.mean, b.std));
    }
    Ok(out)
}
