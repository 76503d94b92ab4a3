//! Offset-prediction response signal and the bounding-box-regression
//! baseline, both trained on synthetic crop features.
//!
//! The feature generator stands in for CNN activations of a proposal crop.
//! Its informative coordinates are smooth functions of how the proposal
//! relates to the target: center offset, overlap, relative displacement and
//! relative size. Crops far from the target get noisier features.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, BoxSize, Scene};
use crate::linalg::{dot, Cholesky, LinalgError, Matrix};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("normal equations could not be solved: {0}")]
    Linalg(#[from] LinalgError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Parameters of the synthetic crop-feature generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFeatureConfig {
    pub feature_dim: usize,
    pub informative_dims: usize,
    pub noise_std: f64,
    /// Number of crop scales averaged by the response signal.
    pub scale_count: usize,
    /// Offset beyond which informative features lose signal-to-noise.
    pub far_offset: f64,
    /// Noise multiplier applied beyond `far_offset`.
    pub far_noise_factor: f64,
}

impl Default for SyntheticFeatureConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            informative_dims: 2 * ATOM_COUNT,
            noise_std: 0.1,
            scale_count: 5,
            far_offset: 0.35,
            far_noise_factor: 3.0,
        }
    }
}

impl SyntheticFeatureConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.informative_dims == 0 || self.informative_dims > self.feature_dim {
            return Err(SignalError::InvalidConfig(format!(
                "informative_dims = {} must be in 1..={}",
                self.informative_dims, self.feature_dim
            )));
        }
        if self.scale_count == 0 {
            return Err(SignalError::InvalidConfig("scale_count must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.far_noise_factor >= 0.0) {
            return Err(SignalError::InvalidConfig("noise parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Multiplicative area factors of the scale ensemble, evenly spaced on
    /// `[0.5, 1.5]` (a single scale uses the proposal as-is).
    pub fn scale_factors(&self) -> Vec<f64> {
        if self.scale_count == 1 {
            return vec![1.0];
        }
        let n = self.scale_count as f64 - 1.0;
        (0..self.scale_count).map(|k| 0.5 + k as f64 / n).collect()
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std = 0.0;
        self
    }
}

/// Number of distinct informative feature functions. Informative
/// coordinate `j` carries function `j mod ATOM_COUNT`.
pub const ATOM_COUNT: usize = 10;

/// Slope at zero of the saturating displacement and size features.
const DIRECTION_GAIN: f64 = 10.0;

/// Noise-free informative feature functions of a proposal against the target.
pub fn feature_atoms(scene: &Scene, proposal: &BoundingBox) -> [f64; ATOM_COUNT] {
    let off = scene.offset_to_target(proposal);
    let iou = scene.iou_with_target(proposal);
    let (pw, ph) = proposal.extent(scene.dims);
    let (gw, gh) = scene.target.extent(scene.dims);
    let p = proposal.center();
    let g = scene.target.center();
    let ux = (g[0] - p[0]) * scene.dims.width() / pw;
    let uy = (g[1] - p[1]) * scene.dims.height() / ph;
    let dlw = (gw / pw).ln();
    let dlh = (gh / ph).ln();
    let ds = proposal.size().log_area_ratio - scene.target.size().log_area_ratio;
    [
        off,
        (-off * off / (2.0 * 0.15 * 0.15)).exp(),
        iou,
        iou.sqrt(),
        (DIRECTION_GAIN * ux).tanh(),
        (DIRECTION_GAIN * uy).tanh(),
        (DIRECTION_GAIN * dlw).tanh(),
        (DIRECTION_GAIN * dlh).tanh(),
        2.0 * off * off,
        (DIRECTION_GAIN * ds).tanh(),
    ]
}

/// Feature vector of length `feature_dim` for one proposal crop.
pub fn synth_features<R: Rng + ?Sized>(
    scene: &Scene,
    proposal: &BoundingBox,
    cfg: &SyntheticFeatureConfig,
    rng: &mut R,
) -> Vec<f64> {
    let atoms = feature_atoms(scene, proposal);
    let far = scene.offset_to_target(proposal) > cfg.far_offset;
    let informative_noise = if far {
        cfg.noise_std * cfg.far_noise_factor
    } else {
        cfg.noise_std
    };
    let mut out = Vec::with_capacity(cfg.feature_dim);
    for j in 0..cfg.feature_dim {
        let (base, sd) = if j < cfg.informative_dims {
            (atoms[j % ATOM_COUNT], informative_noise)
        } else {
            (0.0, cfg.noise_std)
        };
        let noise = if sd > 0.0 {
            sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        out.push(base + noise);
    }
    out
}

/// Accumulates `XᵀX` and `XᵀY` for a design whose column 0 is the bias.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator {
    xtx: Matrix,
    xty: Matrix,
    rows: usize,
}

impl RidgeAccumulator {
    /// `features` excludes the bias column; `outputs` is the number of
    /// regression targets sharing the design.
    pub fn new(features: usize, outputs: usize) -> Self {
        Self {
            xtx: Matrix::zeros(features + 1, features + 1),
            xty: Matrix::zeros(features + 1, outputs),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Adds one row given without its bias entry.
    pub fn push(&mut self, features: &[f64], targets: &[f64]) -> Result<(), SignalError> {
        let d = self.xtx.rows();
        if features.len() + 1 != d || targets.len() != self.xty.cols() {
            return Err(SignalError::Dimension(format!(
                "row of {} features / {} targets for a {}-column design",
                features.len(),
                targets.len(),
                d
            )));
        }
        if !features.iter().chain(targets).all(|v| v.is_finite()) {
            return Err(SignalError::NonFinite("training row"));
        }
        let row = |i: usize| if i == 0 { 1.0 } else { features[i - 1] };
        for i in 0..d {
            let xi = row(i);
            for j in 0..=i {
                self.xtx[(i, j)] += xi * row(j);
            }
            for (k, t) in targets.iter().enumerate() {
                self.xty[(i, k)] += xi * t;
            }
        }
        self.rows += 1;
        Ok(())
    }

    /// Solves `(XᵀX + λP) w = Xᵀy` per target, with the bias unpenalized.
    /// With `standardize`, the penalty on column j is scaled by its variance,
    /// which equals ridge on standardized columns mapped back to raw units.
    pub fn solve(&self, lambda: f64, standardize: bool) -> Result<Vec<Vec<f64>>, SignalError> {
        if self.rows == 0 {
            return Err(SignalError::InsufficientData("no training rows".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SignalError::InvalidConfig(format!("ridge penalty {lambda}")));
        }
        let d = self.xtx.rows();
        let n = self.rows as f64;
        let mut a = Matrix::from_fn(d, d, |i, j| {
            if j <= i {
                self.xtx[(i, j)]
            } else {
                self.xtx[(j, i)]
            }
        });
        for j in 1..d {
            let scale = if standardize {
                let m = self.xtx[(j, 0)] / n;
                let var = self.xtx[(j, j)] / n - m * m;
                if var > 1e-24 {
                    var
                } else {
                    1.0
                }
            } else {
                1.0
            };
            a[(j, j)] += lambda * scale;
        }
        let chol = Cholesky::new(&a)?;
        let solutions = (0..self.xty.cols())
            .map(|k| {
                let rhs: Vec<f64> = (0..d).map(|i| self.xty[(i, k)]).collect();
                chol.solve(&rhs)
            })
            .collect::<Vec<_>>();
        if solutions.iter().flatten().any(|w| !w.is_finite()) {
            return Err(SignalError::NonFinite("ridge solution"));
        }
        Ok(solutions)
    }
}

/// Ridge regression on a design matrix whose column 0 is the (unpenalized)
/// bias column: `w = (XᵀX + λI′)⁻¹ Xᵀt`.
pub fn train_ridge(design: &Matrix, targets: &[f64], lambda: f64) -> Result<Vec<f64>, SignalError> {
    if design.rows() != targets.len() {
        return Err(SignalError::Dimension(format!(
            "{} design rows vs {} targets",
            design.rows(),
            targets.len()
        )));
    }
    if design.cols() == 0 {
        return Err(SignalError::Dimension("empty design".into()));
    }
    if !design.is_finite() || !targets.iter().all(|t| t.is_finite()) {
        return Err(SignalError::NonFinite("ridge inputs"));
    }
    let mut acc = RidgeAccumulator::new(design.cols() - 1, 1);
    for (i, t) in targets.iter().enumerate() {
        let row = design.row(i);
        if row[0] != 1.0 {
            return Err(SignalError::Dimension(format!("row {i} has bias entry {}", row[0])));
        }
        acc.push(&row[1..], std::slice::from_ref(t))?;
    }
    Ok(acc.solve(lambda, false)?.remove(0))
}

#[inline]
fn linear(weights: &[f64], features: &[f64]) -> f64 {
    weights[0] + dot(&weights[1..], features)
}

/// Ridge offset regressor followed by the scale and Gaussian transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetPredictor {
    /// Bias first, then one weight per feature.
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// Maps normalized offset to GP input units.
    pub scale_map: f64,
    /// Width of the Gaussian response transform, in GP input units.
    pub peak_width: f64,
}

impl OffsetPredictor {
    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 1
    }

    /// Predicted normalized offset for one crop, clamped at zero.
    pub fn predict_offset(&self, features: &[f64]) -> f64 {
        linear(&self.weights, features).max(0.0)
    }

    /// `exp(−(α d̂)² / 2w²)`.
    pub fn response_from_offset(&self, offset: f64) -> f64 {
        let z = self.scale_map * offset / self.peak_width;
        (-0.5 * z * z).exp()
    }

    /// Response signal from the per-scale feature vectors of one proposal.
    pub fn response_signal(&self, features_per_scale: &[Vec<f64>]) -> f64 {
        assert!(!features_per_scale.is_empty(), "at least one scale is required");
        let mean = features_per_scale
            .iter()
            .map(|f| self.predict_offset(f))
            .sum::<f64>()
            / features_per_scale.len() as f64;
        self.response_from_offset(mean)
    }

    /// Ensemble-averaged predicted offset of a proposal.
    pub fn ensemble_offset<R: Rng + ?Sized>(
        &self,
        scene: &Scene,
        proposal: &BoundingBox,
        cfg: &SyntheticFeatureConfig,
        rng: &mut R,
    ) -> f64 {
        let factors = cfg.scale_factors();
        factors
            .iter()
            .map(|f| {
                let crop = scaled(proposal, *f);
                self.predict_offset(&synth_features(scene, &crop, cfg, rng))
            })
            .sum::<f64>()
            / factors.len() as f64
    }

    /// Features for every ensemble scale followed by the response signal.
    pub fn respond<R: Rng + ?Sized>(
        &self,
        scene: &Scene,
        proposal: &BoundingBox,
        cfg: &SyntheticFeatureConfig,
        rng: &mut R,
    ) -> f64 {
        self.response_from_offset(self.ensemble_offset(scene, proposal, cfg, rng))
    }
}

fn scaled(b: &BoundingBox, area_factor: f64) -> BoundingBox {
    let s = b.size();
    b.with_size(BoxSize::new(s.log_area_ratio + area_factor.ln(), s.log_aspect_ratio))
        .expect("scaling by a positive factor keeps the box valid")
}

/// Anything that can score a proposal with a response signal.
pub trait ResponseOracle: Sync {
    fn respond(&self, scene: &Scene, proposal: &BoundingBox, rng: &mut dyn RngCore) -> f64;

    /// Largest value the oracle can return.
    fn peak_response(&self) -> f64 {
        1.0
    }
}

/// The trained predictor evaluated on freshly synthesized features.
#[derive(Debug, Clone)]
pub struct SignalOracle {
    pub predictor: OffsetPredictor,
    pub features: SyntheticFeatureConfig,
}

impl ResponseOracle for SignalOracle {
    fn respond(&self, scene: &Scene, proposal: &BoundingBox, rng: &mut dyn RngCore) -> f64 {
        self.predictor.respond(scene, proposal, &self.features, rng)
    }
}

/// Generates training and evaluation crops around the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropSampler {
    /// Largest center shift std, in target widths/heights.
    pub max_shift: f64,
    /// Largest log-area jitter std.
    pub max_log_scale: f64,
    /// Largest log-aspect jitter std.
    pub max_log_aspect: f64,
    /// Probability of a crop centered uniformly anywhere in the image.
    pub anywhere_prob: f64,
    /// IOU bin width used to spread crops evenly over an IOU range.
    pub iou_bin: f64,
}

impl Default for CropSampler {
    fn default() -> Self {
        Self {
            max_shift: 1.2,
            max_log_scale: 0.6,
            max_log_aspect: 0.3,
            anywhere_prob: 0.25,
            iou_bin: 0.1,
        }
    }
}

const MAX_CROP_ATTEMPTS: usize = 100_000;

impl CropSampler {
    /// One randomly offset and randomly scaled crop.
    pub fn raw_crop<R: Rng + ?Sized>(&self, scene: &Scene, rng: &mut R) -> BoundingBox {
        let t = scene.target;
        let (gw, gh) = t.extent(scene.dims);
        let k: f64 = rng.random();
        let n = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
        let s = t.size();
        let size = BoxSize::new(
            s.log_area_ratio + k * self.max_log_scale * n(rng),
            s.log_aspect_ratio + k * self.max_log_aspect * n(rng),
        );
        let center = if rng.random::<f64>() < self.anywhere_prob {
            [rng.random(), rng.random()]
        } else {
            let c = t.center();
            [
                c[0] + k * self.max_shift * n(rng) * gw / scene.dims.width(),
                c[1] + k * self.max_shift * n(rng) * gh / scene.dims.height(),
            ]
        };
        BoundingBox::new(center, size).expect("jittered target box stays valid")
    }

    /// Crop whose IOU with the target lies in `[lo, hi)`, spread evenly over
    /// IOU bins. Returns `None` if no crop is found after many attempts.
    pub fn crop_in_iou_range<R: Rng + ?Sized>(
        &self,
        scene: &Scene,
        range: (f64, f64),
        rng: &mut R,
    ) -> Option<BoundingBox> {
        let (lo, hi) = range;
        let bins = (((hi - lo) / self.iou_bin).round() as usize).max(1);
        let width = (hi - lo) / bins as f64;
        let b = rng.random_range(0..bins);
        let (blo, bhi) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
        for _ in 0..MAX_CROP_ATTEMPTS {
            let crop = self.raw_crop(scene, rng);
            let iou = scene.iou_with_target(&crop);
            if iou >= blo && iou < bhi {
                return Some(crop);
            }
        }
        None
    }

    /// Crop at a given normalized offset in a random direction, with the
    /// usual scale jitter.
    pub fn crop_at_offset<R: Rng + ?Sized>(&self, scene: &Scene, offset: f64, rng: &mut R) -> BoundingBox {
        let t = scene.target;
        let k: f64 = rng.random();
        let n = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
        let s = t.size();
        let size = BoxSize::new(
            s.log_area_ratio + k * self.max_log_scale * n(rng),
            s.log_aspect_ratio + k * self.max_log_aspect * n(rng),
        );
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let r = offset * scene.dims.area().sqrt();
        let c = t.center();
        let center = [
            c[0] + r * theta.cos() / scene.dims.width(),
            c[1] + r * theta.sin() / scene.dims.height(),
        ];
        BoundingBox::new(center, size).expect("jittered target box stays valid")
    }
}

/// Training options shared by the offset predictor and BB-R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTraining {
    pub crop_count: usize,
    pub iou_range: (f64, f64),
    pub lambda: f64,
}

/// Fits the offset regressor on random offset crops and ties the response
/// transform to the GP length scale.
pub fn train_offset_predictor<R: Rng + ?Sized>(
    scenes: &[Scene],
    training: &CropTraining,
    sampler: &CropSampler,
    cfg: &SyntheticFeatureConfig,
    gp_length_scale: f64,
    rng: &mut R,
) -> Result<OffsetPredictor, SignalError> {
    cfg.validate()?;
    if scenes.is_empty() || training.crop_count == 0 {
        return Err(SignalError::InsufficientData("no scenes or no crops".into()));
    }
    if !(gp_length_scale > 0.0) {
        return Err(SignalError::InvalidConfig(format!("length scale {gp_length_scale}")));
    }
    let mut acc = RidgeAccumulator::new(cfg.feature_dim, 1);
    for _ in 0..training.crop_count {
        let scene = &scenes[rng.random_range(0..scenes.len())];
        let Some(crop) = sampler.crop_in_iou_range(scene, training.iou_range, rng) else {
            continue;
        };
        let f = synth_features(scene, &crop, cfg, rng);
        acc.push(&f, &[scene.offset_to_target(&crop)])?;
    }
    let weights = acc.solve(training.lambda, true)?.remove(0);
    Ok(OffsetPredictor {
        weights,
        lambda: training.lambda,
        scale_map: 1.0,
        peak_width: gp_length_scale,
    })
}

/// Mean variance of repeated oracle calls at fixed crops.
pub fn estimate_noise_variance<O: ResponseOracle + ?Sized, R: Rng>(
    oracle: &O,
    scenes: &[Scene],
    sampler: &CropSampler,
    proposals: usize,
    repeats: usize,
    rng: &mut R,
) -> f64 {
    let mut variances = Vec::with_capacity(proposals);
    for i in 0..proposals {
        let scene = &scenes[i % scenes.len()];
        let crop = sampler
            .crop_in_iou_range(scene, (0.0, 0.7), rng)
            .unwrap_or(scene.target);
        let ys: Vec<f64> = (0..repeats).map(|_| oracle.respond(scene, &crop, rng)).collect();
        if let Some(v) = stats::sample_variance(&ys) {
            variances.push(v);
        }
    }
    stats::mean(&variances).unwrap_or(0.0)
}

/// Regression targets of the standard box-regression parameterization.
pub fn bbr_targets(scene: &Scene, proposal: &BoundingBox) -> [f64; 4] {
    let (pw, ph) = proposal.extent(scene.dims);
    let (gw, gh) = scene.target.extent(scene.dims);
    let p = proposal.center();
    let g = scene.target.center();
    [
        (g[0] - p[0]) * scene.dims.width() / pw,
        (g[1] - p[1]) * scene.dims.height() / ph,
        (gw / pw).ln(),
        (gh / ph).ln(),
    ]
}

/// Applies `(dx, dy, dlogw, dlogh)` corrections to a proposal.
pub fn apply_bbr_correction(scene: &Scene, proposal: &BoundingBox, t: [f64; 4]) -> BoundingBox {
    let (pw, ph) = proposal.extent(scene.dims);
    let c = proposal.center();
    let dw = t[2].clamp(-4.0, 4.0);
    let dh = t[3].clamp(-4.0, 4.0);
    let center = [
        c[0] + t[0] * pw / scene.dims.width(),
        c[1] + t[1] * ph / scene.dims.height(),
    ];
    let s = proposal.size();
    let size = BoxSize::new(s.log_area_ratio + dw + dh, s.log_aspect_ratio + dw - dh);
    BoundingBox::new(center, size).unwrap_or(*proposal)
}

/// Four independent ridge regressors predicting box corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbrModel {
    pub threshold: f64,
    pub lambda: f64,
    /// Weights for dx, dy, dlogw, dlogh; bias first.
    pub regressors: Vec<Vec<f64>>,
    pub training_crops: usize,
}

impl BbrModel {
    pub fn predict_correction(&self, features: &[f64]) -> [f64; 4] {
        let mut t = [0.0; 4];
        for (k, w) in self.regressors.iter().enumerate() {
            t[k] = linear(w, features);
        }
        t
    }

    /// Single-shot refinement of one proposal.
    pub fn refine<R: Rng + ?Sized>(
        &self,
        scene: &Scene,
        proposal: &BoundingBox,
        cfg: &SyntheticFeatureConfig,
        rng: &mut R,
    ) -> BoundingBox {
        let f = synth_features(scene, proposal, cfg, rng);
        apply_bbr_correction(scene, proposal, self.predict_correction(&f))
    }
}

/// Trains BB-R on crops whose IOU with the target is at least `threshold`.
pub fn bbr_train<R: Rng + ?Sized>(
    scenes: &[Scene],
    training: &CropTraining,
    threshold: f64,
    sampler: &CropSampler,
    cfg: &SyntheticFeatureConfig,
    rng: &mut R,
) -> Result<BbrModel, SignalError> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&threshold) {
        return Err(SignalError::InvalidConfig(format!("IOU threshold {threshold}")));
    }
    if scenes.is_empty() {
        return Err(SignalError::InsufficientData("no scenes".into()));
    }
    let mut acc = RidgeAccumulator::new(cfg.feature_dim, 4);
    for _ in 0..training.crop_count {
        let scene = &scenes[rng.random_range(0..scenes.len())];
        let Some(crop) = sampler.crop_in_iou_range(scene, training.iou_range, rng) else {
            continue;
        };
        if scene.iou_with_target(&crop) < threshold {
            continue;
        }
        let f = synth_features(scene, &crop, cfg, rng);
        acc.push(&f, &bbr_targets(scene, &crop))?;
    }
    if acc.rows() == 0 {
        return Err(SignalError::InsufficientData(format!(
            "no training crops reach IOU {threshold}"
        )));
    }
    Ok(BbrModel {
        threshold,
        lambda: training.lambda,
        regressors: acc.solve(training.lambda, true)?,
        training_crops: acc.rows(),
    })
}

/// One bin of the response-versus-offset calibration curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl CalibrationBin {
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            self.std / (self.count as f64).sqrt()
        }
    }
}

/// Binned mean and standard deviation of the response signal over crops
/// with offsets uniform on `[0, max_offset)`.
pub fn calibration_curve<O: ResponseOracle + ?Sized, R: Rng>(
    oracle: &O,
    scenes: &[Scene],
    sampler: &CropSampler,
    crops: usize,
    bin_width: f64,
    max_offset: f64,
    rng: &mut R,
) -> Vec<CalibrationBin> {
    let bins = (max_offset / bin_width).round() as usize;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for i in 0..crops {
        let scene = &scenes[i % scenes.len()];
        let off = rng.random_range(0.0..max_offset);
        let crop = sampler.crop_at_offset(scene, off, rng);
        let true_off = scene.offset_to_target(&crop);
        let b = ((true_off / bin_width) as usize).min(bins - 1);
        buckets[b].push(oracle.respond(scene, &crop, rng));
    }
    buckets
        .iter()
        .enumerate()
        .map(|(b, ys)| CalibrationBin {
            lo: b as f64 * bin_width,
            hi: (b + 1) as f64 * bin_width,
            count: ys.len(),
            mean: stats::mean(ys).unwrap_or(f64::NAN),
            std: stats::std_dev(ys).unwrap_or(f64::NAN),
        })
        .collect()
}

/// Whether bin means rise to a single peak and then fall, allowing each
/// step to go the "wrong" way by at most `se_multiple` combined standard
/// errors. Returns the index of the peak.
pub fn unimodal_peak(bins: &[CalibrationBin], se_multiple: f64) -> Option<usize> {
    let peak = bins
        .iter()
        .enumerate()
        .filter(|(_, b)| b.count > 0)
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean).then(b.0.cmp(&a.0)))?
        .0;
    let tol = |a: &CalibrationBin, b: &CalibrationBin| {
        se_multiple * (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt()
    };
    // Walking away from the peak on either side, no bin may climb back above
    // the lowest bin seen so far by more than the tolerance.
    let mut lowest = &bins[peak];
    for b in bins[peak + 1..].iter().filter(|b| b.count > 0) {
        if b.mean > lowest.mean + tol(b, lowest) {
            return None;
        }
        if b.mean < lowest.mean {
            lowest = b;
        }
    }
    let mut lowest = &bins[peak];
    for b in bins[..peak].iter().rev().filter(|b| b.count > 0) {
        if b.mean > lowest.mean + tol(b, lowest) {
            return None;
        }
        if b.mean < lowest.mean {
            lowest = b;
        }
    }
    Some(peak)
}
