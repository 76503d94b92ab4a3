use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::corpus::CorpusParams;
use super::io::BenchError;
use crate::engine::EngineConfig;
use crate::gp::GridSpec;
use crate::signal::{CropSampler, CropTraining, SyntheticFeatureConfig};

/// A localization method under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Gpcl,
    /// Bounding-box regression trained on crops with IOU at least the threshold.
    Bbr(f64),
}

impl Method {
    pub fn defaults() -> Vec<Method> {
        vec![Method::Gpcl, Method::Bbr(0.6), Method::Bbr(0.1)]
    }

    /// Stream id mixed into per-row seeds.
    pub(crate) fn stream(&self) -> u64 {
        match self {
            Method::Gpcl => 1,
            Method::Bbr(t) => 2 ^ t.to_bits(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Gpcl => write!(f, "gpcl"),
            Method::Bbr(t) => write!(f, "bbr-{t}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "gpcl" {
            return Ok(Method::Gpcl);
        }
        let t = s
            .strip_prefix("bbr-")
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|t| (0.0..1.0).contains(t))
            .ok_or_else(|| format!("unknown method '{s}' (expected gpcl or bbr-<threshold in [0,1)>)"))?;
        Ok(Method::Bbr(t))
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Parses a comma-separated method list; the empty string is the empty list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseEstimation {
    pub proposals: usize,
    pub repeats: usize,
    /// Lower bound on the estimated response noise variance.
    pub floor: f64,
    /// Skips estimation and uses this value.
    pub fixed: Option<f64>,
}

impl Default for NoiseEstimation {
    fn default() -> Self {
        Self {
            proposals: 200,
            repeats: 10,
            floor: 1e-4,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSweep {
    pub crops: usize,
    pub bin_width: f64,
    pub max_offset: f64,
}

impl Default for CalibrationSweep {
    fn default() -> Self {
        Self {
            crops: 20_000,
            bin_width: 0.025,
            max_offset: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusParams,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub engine: EngineConfig,
    pub features: SyntheticFeatureConfig,
    pub crops: CropSampler,
    pub offset_training: CropTraining,
    pub bbr_training: CropTraining,
    /// IOU range of the initial crop handed to BB-R.
    pub bbr_initial_iou: (f64, f64),
    pub noise: NoiseEstimation,
    pub calibration: CalibrationSweep,
    pub bootstrap_resamples: usize,
    /// Record per-row wall time. Off by default so reruns are byte-identical.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2017,
            corpus: CorpusParams::default(),
            trials: 440,
            methods: Method::defaults(),
            engine: EngineConfig::default(),
            features: SyntheticFeatureConfig::default(),
            crops: CropSampler::default(),
            offset_training: CropTraining {
                crop_count: 100_000,
                iou_range: (0.0, 0.7),
                lambda: 1.0,
            },
            bbr_training: CropTraining {
                crop_count: 100_000,
                iou_range: (0.0, 1.0),
                lambda: 1.0,
            },
            bbr_initial_iou: (0.0, 0.7),
            noise: NoiseEstimation::default(),
            calibration: CalibrationSweep::default(),
            bootstrap_resamples: 2000,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn with_grid(mut self, side: usize) -> Self {
        self.engine.grid = GridSpec::square(side);
        self
    }

    pub fn bbr_thresholds(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for m in &self.methods {
            if let Method::Bbr(t) = m {
                if !out.contains(t) {
                    out.push(*t);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.engine.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.features.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if self.corpus.train_scenes == 0 || self.corpus.test_scenes == 0 {
            return Err(BenchError::Config("both corpus splits need scenes".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::defaults() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!(Method::Bbr(0.6).to_string(), "bbr-0.6");
        assert!("bbr-1.5".parse::<Method>().is_err());
        assert_eq!(parse_methods("").unwrap(), vec![]);
        assert_eq!(parse_methods("gpcl, bbr-0.1").unwrap(), vec![Method::Gpcl, Method::Bbr(0.1)]);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml("trials = 12\nmethods = [\"gpcl\"]\n[engine]\niterations = 4\n").unwrap();
        assert_eq!(cfg.trials, 12);
        assert_eq!(cfg.methods, vec![Method::Gpcl]);
        assert_eq!(cfg.engine.iterations, 4);
        assert_eq!(cfg.engine.n0, 10);
        assert_eq!(cfg.corpus, CorpusParams::default());
        let back = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
