//! The GP-CL localization loop.
//!
//! A trial samples `n0` initial proposals from the context-conditioned prior,
//! then for `T` iterations fits a GP to the proposals in memory, realizes it
//! over the grid, picks the top-`n` cells by Confidence-EI, draws a size for
//! each from the size prior and scores them with the response oracle. Only
//! the last `gp_mem + 1` batches (the initial set counts as batch 0) are kept
//! for the next fit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{dynamic_xi, select_batch, AcquisitionConfig, AcquisitionError, IncumbentMode};
use crate::context::{ContextError, ContextSituationModel, PosteriorSampler, TargetPosterior};
use crate::geometry::{BoundingBox, BoxSize, Scene};
use crate::gp::{grid_search_length_scale, GpError, GpHyperparams, GpModel, GridRealization, GridSpec, Point};
use crate::signal::ResponseOracle;
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("GP fit failed at iteration {iteration}: {source}")]
    Gp { iteration: usize, source: GpError },
    #[error("acquisition failed at iteration {iteration}: {source}")]
    Acquisition { iteration: usize, source: AcquisitionError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Initial proposals drawn from the context prior.
    pub n0: usize,
    /// Proposals per batch.
    pub batch_size: usize,
    pub iterations: usize,
    /// Number of past batches kept besides the newest one.
    pub gp_mem: usize,
    pub grid: GridSpec,
    pub hyperparams: GpHyperparams,
    /// Length scales searched by marginal likelihood before every fit; empty
    /// keeps `hyperparams.length_scale` fixed.
    pub length_scale_candidates: Vec<f64>,
    pub acquisition: AcquisitionConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n0: 10,
            batch_size: 5,
            iterations: 10,
            gp_mem: 3,
            grid: GridSpec::square(500),
            // Responses live in [0, 1]. A prior std well below that range
            // keeps unexplored cells from outbidding the neighbourhood of
            // the peak once the incumbent is close to 1.
            hyperparams: GpHyperparams {
                length_scale: 0.3,
                signal_variance: 0.1,
                noise_variance: 1e-3,
            },
            length_scale_candidates: Vec::new(),
            acquisition: AcquisitionConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n0 == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(EngineError::InvalidConfig("n0, batch size and iterations must be positive".into()));
        }
        if self.batch_size > self.grid.len() {
            return Err(EngineError::InvalidConfig(format!(
                "batch size {} exceeds the {} grid cells",
                self.batch_size,
                self.grid.len()
            )));
        }
        self.hyperparams
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        if self.length_scale_candidates.iter().any(|l| !(*l > 0.0)) {
            return Err(EngineError::InvalidConfig("length-scale candidates must be positive".into()));
        }
        self.acquisition
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))
    }

    /// Oracle calls per trial: `n0 + T·n`.
    pub fn oracle_calls(&self) -> usize {
        self.n0 + self.iterations * self.batch_size
    }

    /// Proposals generated by the search itself: `T·n`.
    pub fn batch_proposals(&self) -> usize {
        self.iterations * self.batch_size
    }

    /// Size of the proposal set after iteration `t` (0 is the initial set).
    pub fn proposal_set_size(&self, t: usize) -> usize {
        let first = t.saturating_sub(self.gp_mem);
        (first..=t)
            .map(|j| if j == 0 { self.n0 } else { self.batch_size })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub location: Point,
    pub size: BoxSize,
    pub response: f64,
    /// 0 for the initial set.
    pub batch_index: usize,
}

impl ProposalRecord {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.location, self.size).expect("records hold valid boxes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub final_box: BoundingBox,
    pub final_iou: f64,
    /// IOU of the current localization estimate after each iteration.
    pub iou_history: Vec<f64>,
    /// Best IOU among all proposals evaluated up to each iteration.
    pub best_proposal_iou_history: Vec<f64>,
    /// Median IOU of the initial proposal set.
    pub initial_iou_median: f64,
    pub oracle_calls: usize,
    pub batch_proposals: usize,
    /// Out-of-image initial proposals that were replaced.
    pub fallback_count: usize,
    /// `|D_proposal^(t)|` for `t = 0..=T`.
    pub proposal_set_sizes: Vec<usize>,
    /// Observations used by the GP fit of each iteration.
    pub fit_sizes: Vec<usize>,
    /// Length scale used at each iteration.
    pub length_scales: Vec<f64>,
    pub records: Vec<ProposalRecord>,
    /// Surrogate of the last iteration and its row-major argmax cell.
    pub final_surrogate: GpModel,
    pub final_argmax_cell: usize,
}

fn evaluate(
    scene: &Scene,
    oracle: &(impl ResponseOracle + ?Sized),
    bbox: BoundingBox,
    batch_index: usize,
    rng: &mut dyn RngCore,
) -> ProposalRecord {
    let response = oracle.respond(scene, &bbox, rng);
    ProposalRecord {
        location: bbox.center(),
        size: bbox.size(),
        response,
        batch_index,
    }
}

fn best_response(records: &[ProposalRecord]) -> &ProposalRecord {
    let mut best = &records[0];
    for r in records {
        if r.response > best.response {
            best = r;
        }
    }
    best
}

/// Runs one GP-CL trial, conditioning the context model on the scene's context.
pub fn run_trial<O: ResponseOracle + ?Sized>(
    scene: &Scene,
    model: &ContextSituationModel,
    oracle: &O,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<TrialResult, EngineError> {
    let posterior = model.condition(&scene.context)?;
    run_trial_with_posterior(scene, &posterior, oracle, cfg, seed)
}

/// Runs one GP-CL trial from an already conditioned target posterior.
pub fn run_trial_with_posterior<O: ResponseOracle + ?Sized>(
    scene: &Scene,
    posterior: &TargetPosterior,
    oracle: &O,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<TrialResult, EngineError> {
    cfg.validate()?;
    let sampler: PosteriorSampler = posterior.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut fallback_count = 0;
    let initial: Vec<BoundingBox> = sampler
        .sample_proposals(cfg.n0, &mut rng)
        .into_iter()
        .map(|p| {
            if p.center_in_image() {
                p
            } else {
                fallback_count += 1;
                sampler.fallback_proposal(&mut rng)
            }
        })
        .collect();
    let initial_ious: Vec<f64> = initial.iter().map(|p| scene.iou_with_target(p)).collect();
    let initial_iou_median = median(&initial_ious).expect("n0 is positive");

    let mut batches: Vec<Vec<ProposalRecord>> = vec![initial
        .into_iter()
        .map(|p| evaluate(scene, oracle, p, 0, &mut rng))
        .collect()];
    let mut best_iou = initial_ious.iter().copied().fold(0.0, f64::max);

    let mut iou_history = Vec::with_capacity(cfg.iterations);
    let mut best_proposal_iou_history = Vec::with_capacity(cfg.iterations);
    let mut proposal_set_sizes = vec![batches[0].len()];
    let mut fit_sizes = Vec::with_capacity(cfg.iterations);
    let mut length_scales = Vec::with_capacity(cfg.iterations);
    let mut last: Option<(GpModel, GridRealization)> = None;
    let mut estimate = scene.target;

    for t in 1..=cfg.iterations {
        let window = &batches[(t - 1).saturating_sub(cfg.gp_mem)..t];
        let (xs, ys): (Vec<Point>, Vec<f64>) = window.iter().flatten().map(|r| (r.location, r.response)).unzip();
        fit_sizes.push(xs.len());

        let gp_err = |source| EngineError::Gp { iteration: t, source };
        let hp = if cfg.length_scale_candidates.is_empty() {
            cfg.hyperparams
        } else {
            grid_search_length_scale(&xs, &ys, cfg.hyperparams, &cfg.length_scale_candidates).map_err(gp_err)?
        };
        length_scales.push(hp.length_scale);
        let gp = GpModel::fit(&xs, &ys, hp).map_err(gp_err)?;
        let realization = gp.realize_grid(cfg.grid);

        let incumbent = match cfg.acquisition.incumbent {
            IncumbentMode::ObservedMax => ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            IncumbentMode::SurrogateMeanMax => xs
                .iter()
                .map(|x| gp.predict(x).mean)
                .fold(f64::NEG_INFINITY, f64::max),
        };
        let latest: Vec<f64> = batches[t - 1].iter().map(|r| r.response).collect();
        let acq_err = |source| EngineError::Acquisition { iteration: t, source };
        let xi = dynamic_xi(&latest, &cfg.acquisition).map_err(acq_err)?;
        let cells = select_batch(&realization, incumbent, xi, cfg.batch_size).map_err(acq_err)?;

        let batch: Vec<ProposalRecord> = cells
            .into_iter()
            .map(|cell| {
                let size = sampler.sample_size(&mut rng);
                let bbox = BoundingBox::new(cfg.grid.cell_center(cell), size).expect("valid sampled size");
                evaluate(scene, oracle, bbox, t, &mut rng)
            })
            .collect();
        for r in &batch {
            best_iou = best_iou.max(scene.iou_with_target(&r.bbox()));
        }
        batches.push(batch);
        proposal_set_sizes.push(batches[t.saturating_sub(cfg.gp_mem)..=t].iter().map(Vec::len).sum());

        let all: Vec<ProposalRecord> = batches.iter().flatten().copied().collect();
        let center = cfg.grid.cell_center(realization.argmax_mean());
        estimate = BoundingBox::new(center, best_response(&all).size).expect("valid record size");
        iou_history.push(scene.iou_with_target(&estimate));
        best_proposal_iou_history.push(best_iou);
        last = Some((gp, realization));
    }

    let (final_surrogate, realization) = last.expect("at least one iteration");
    let records: Vec<ProposalRecord> = batches.into_iter().flatten().collect();
    Ok(TrialResult {
        final_box: estimate,
        final_iou: scene.iou_with_target(&estimate),
        iou_history,
        best_proposal_iou_history,
        initial_iou_median,
        oracle_calls: records.len(),
        batch_proposals: records.iter().filter(|r| r.batch_index > 0).count(),
        fallback_count,
        proposal_set_sizes,
        fit_sizes,
        length_scales,
        records,
        final_argmax_cell: realization.argmax_mean(),
        final_surrogate,
    })
}
