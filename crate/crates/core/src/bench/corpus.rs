//! Synthetic dog-walking scenes: a pedestrian target with a dog and a leash
//! as context, drawn from a joint whose structure the context model can
//! learn.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::{read_versioned, write_versioned, BenchError};
use crate::geometry::{BoundingBox, BoxSize, ContextObject, Scene, SceneDims};

pub const CORPUS_FORMAT: &str = "gpcl-corpus v1";

/// Parameters of the scene generator. Centers are in normalized image
/// coordinates, sizes are natural logs of area ratio and aspect ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub target_center_mean: [f64; 2],
    pub target_center_std: [f64; 2],
    pub target_log_area_mean: f64,
    pub target_log_area_std: f64,
    pub target_log_aspect_mean: f64,
    pub target_log_aspect_std: f64,
    /// Mean displacement of the dog center from the target center.
    pub dog_offset_mean: [f64; 2],
    pub dog_offset_std: f64,
    /// Dog log-area relative to the target's.
    pub dog_log_area_shift: f64,
    pub dog_log_area_std: f64,
    pub dog_log_aspect_mean: f64,
    pub dog_log_aspect_std: f64,
    /// The leash sits at the target-dog midpoint plus this jitter.
    pub leash_jitter_std: f64,
    /// Leash log-area relative to the target's.
    pub leash_log_area_shift: f64,
    pub leash_log_area_std: f64,
    pub leash_log_aspect_mean: f64,
    pub leash_log_aspect_std: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            train_scenes: 400,
            test_scenes: 60,
            image_width: 1000.0,
            image_height: 1000.0,
            target_center_mean: [0.5, 0.5],
            target_center_std: [0.12, 0.08],
            target_log_area_mean: 0.04f64.ln(),
            target_log_area_std: 0.3,
            target_log_aspect_mean: 0.4f64.ln(),
            target_log_aspect_std: 0.12,
            dog_offset_mean: [0.12, 0.1],
            dog_offset_std: 0.1,
            dog_log_area_shift: -0.9,
            dog_log_area_std: 0.25,
            dog_log_aspect_mean: 1.3f64.ln(),
            dog_log_aspect_std: 0.2,
            leash_jitter_std: 0.06,
            leash_log_area_shift: -1.6,
            leash_log_area_std: 0.3,
            leash_log_aspect_mean: 0.0,
            leash_log_aspect_std: 0.4,
        }
    }
}

pub const CONTEXT_LABELS: [&str; 2] = ["dog", "leash"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    mean + std * rng.sample::<f64, _>(StandardNormal)
}

fn sample_scene<R: Rng + ?Sized>(p: &CorpusParams, dims: SceneDims, rng: &mut R) -> Scene {
    let clamp = |v: f64| v.clamp(0.05, 0.95);
    let t = [
        clamp(normal(rng, p.target_center_mean[0], p.target_center_std[0])),
        clamp(normal(rng, p.target_center_mean[1], p.target_center_std[1])),
    ];
    let t_area = normal(rng, p.target_log_area_mean, p.target_log_area_std);
    let t_aspect = normal(rng, p.target_log_aspect_mean, p.target_log_aspect_std);
    let d = [
        clamp(t[0] + normal(rng, p.dog_offset_mean[0], p.dog_offset_std)),
        clamp(t[1] + normal(rng, p.dog_offset_mean[1], p.dog_offset_std)),
    ];
    let d_area = t_area + normal(rng, p.dog_log_area_shift, p.dog_log_area_std);
    let d_aspect = normal(rng, p.dog_log_aspect_mean, p.dog_log_aspect_std);
    let l = [
        clamp(0.5 * (t[0] + d[0]) + normal(rng, 0.0, p.leash_jitter_std)),
        clamp(0.5 * (t[1] + d[1]) + normal(rng, 0.0, p.leash_jitter_std)),
    ];
    let l_area = t_area + normal(rng, p.leash_log_area_shift, p.leash_log_area_std);
    let l_aspect = normal(rng, p.leash_log_aspect_mean, p.leash_log_aspect_std);

    let bbox = |c: [f64; 2], a: f64, r: f64| BoundingBox::new(c, BoxSize::new(a, r)).expect("finite sizes");
    Scene {
        dims,
        target: bbox(t, t_area, t_aspect),
        context: vec![
            ContextObject {
                label: CONTEXT_LABELS[0].into(),
                bbox: bbox(d, d_area, d_aspect),
            },
            ContextObject {
                label: CONTEXT_LABELS[1].into(),
                bbox: bbox(l, l_area, l_aspect),
            },
        ],
    }
}

/// Draws the train and test splits. Scenes are independent, so the splits
/// are disjoint draws from the same joint.
pub fn generate_corpus(params: &CorpusParams, seed: u64) -> Result<Corpus, BenchError> {
    let dims = SceneDims::new(params.image_width, params.image_height)
        .map_err(|e| BenchError::Config(format!("corpus image size: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..params.train_scenes).map(|_| sample_scene(params, dims, &mut rng)).collect();
    let test = (0..params.test_scenes).map(|_| sample_scene(params, dims, &mut rng)).collect();
    Ok(Corpus { train, test })
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    params: CorpusParams,
    seed: u64,
    split: String,
}

fn scene_lines(scenes: &[Scene]) -> Result<Vec<String>, BenchError> {
    scenes
        .iter()
        .map(|s| serde_json::to_string(s).map_err(BenchError::from))
        .collect()
}

/// Writes `train.scenes` and `test.scenes` under `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus, params: &CorpusParams, seed: u64) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    for (split, scenes) in [("train", &corpus.train), ("test", &corpus.test)] {
        let meta = CorpusMeta {
            params: params.clone(),
            seed,
            split: split.into(),
        };
        write_versioned(&dir.join(format!("{split}.scenes")), CORPUS_FORMAT, &meta, &scene_lines(scenes)?)?;
    }
    Ok(())
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>, BenchError> {
    let (_, lines) = read_versioned(path, CORPUS_FORMAT)?;
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BenchError::Parse(format!("{}:{}: {e}", path.display(), i + 3)))
        })
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, BenchError> {
    Ok(Corpus {
        train: read_scenes(&dir.join("train.scenes"))?,
        test: read_scenes(&dir.join("test.scenes"))?,
    })
}
