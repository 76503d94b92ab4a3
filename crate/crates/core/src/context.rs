//! Context-situation model: joint Gaussians over the target box and the
//! context boxes, fitted once from training scenes and conditioned on the
//! context observed in a test scene.
//!
//! Locations (normalized centers) are modeled as Gaussian in raw
//! coordinates; sizes `(log area-ratio, log aspect-ratio)` are Gaussian in
//! log space. The two are fitted and conditioned independently: location on
//! context locations only, size on context sizes only.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, BoxSize, ContextObject, Scene};
use crate::linalg::{Cholesky, LinalgError, Matrix};

/// Ridge added to fitted covariances so conditioning is always defined.
pub const COVARIANCE_REGULARIZER: f64 = 1e-6;

/// Sampled log sizes are clamped into this range so every draw reconstructs
/// to a finite box.
const LOG_AREA_RANGE: (f64, f64) = (-15.0, 3.0);
const LOG_ASPECT_RANGE: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("context schema mismatch: expected {expected:?}, found {found:?}")]
    Schema { expected: Vec<String>, found: Vec<String> },
    #[error("need at least {required} training scenes, got {got}")]
    InsufficientData { required: usize, got: usize },
    #[error("conditioning failed: {0}")]
    Conditioning(#[from] LinalgError),
    #[error("expected {expected} context boxes, got {got}")]
    ContextCount { expected: usize, got: usize },
}

/// Multivariate normal with dense covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Self {
        assert!(cov.is_square() && cov.rows() == mean.len(), "mean/covariance shape mismatch");
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased sample covariance of the rows.
    pub fn fit(samples: &[Vec<f64>]) -> Self {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = Matrix::zeros(d, d);
        if n > 1 {
            for s in samples {
                for i in 0..d {
                    let di = s[i] - mean[i];
                    for j in 0..=i {
                        cov[(i, j)] += di * (s[j] - mean[j]);
                    }
                }
            }
            for i in 0..d {
                for j in 0..=i {
                    let v = cov[(i, j)] / (n - 1) as f64;
                    cov[(i, j)] = v;
                    cov[(j, i)] = v;
                }
            }
        }
        Self { mean, cov }
    }

    pub fn marginal(&self, idx: &[usize]) -> Gaussian {
        Gaussian {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            cov: self.cov.select(idx, idx),
        }
    }

    /// Distribution of the `keep` block given the `given` block equals `values`.
    pub fn condition(&self, keep: &[usize], given: &[usize], values: &[f64]) -> Result<Gaussian, LinalgError> {
        if given.len() != values.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: given.len(),
                got: values.len(),
            });
        }
        if given.is_empty() {
            return Ok(self.marginal(keep));
        }
        let s_kk = self.cov.select(keep, keep);
        let s_kg = self.cov.select(keep, given);
        let s_gg = Cholesky::new(&self.cov.select(given, given))?;
        let innovation: Vec<f64> = given.iter().zip(values).map(|(&g, v)| v - self.mean[g]).collect();
        let w = s_gg.solve(&innovation);
        let shift = s_kg.matvec(&w);
        let mean = keep.iter().zip(&shift).map(|(&k, s)| self.mean[k] + s).collect();
        // Σ_kk − Σ_kg Σ_gg⁻¹ Σ_gk
        let gain = s_gg.solve_matrix(&s_kg.transpose());
        let reduction = s_kg.matmul(&gain);
        let mut cov = Matrix::from_fn(keep.len(), keep.len(), |i, j| s_kk[(i, j)] - reduction[(i, j)]);
        for i in 0..keep.len() {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn sampler(&self) -> Result<GaussianSampler, LinalgError> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            chol: Cholesky::new(&self.cov)?,
        })
    }
}

/// Draws from a Gaussian through its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    chol: Cholesky,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol
            .mul_lower(&z)
            .into_iter()
            .zip(&self.mean)
            .map(|(a, m)| a + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSituationModel {
    /// Context labels in the order they enter the joint vectors.
    pub schema: Vec<String>,
    /// Over `(target cx, cy, context₁ cx, cy, …)`.
    pub location: Gaussian,
    /// Over `(target log-area, log-aspect, context₁ log-area, log-aspect, …)`.
    pub size: Gaussian,
}

fn location_vector(target: &BoundingBox, context: &[BoundingBox]) -> Vec<f64> {
    std::iter::once(target)
        .chain(context)
        .flat_map(|b| b.center())
        .collect()
}

fn size_vector(target: &BoundingBox, context: &[BoundingBox]) -> Vec<f64> {
    std::iter::once(target)
        .chain(context)
        .flat_map(|b| b.size().as_array())
        .collect()
}

impl ContextSituationModel {
    pub fn context_count(&self) -> usize {
        self.schema.len()
    }

    /// Minimum number of training scenes for `c` context objects.
    pub fn required_scenes(c: usize) -> usize {
        2 * c + 3
    }

    pub fn fit(scenes: &[Scene]) -> Result<Self, ContextError> {
        let schema: Vec<String> = scenes
            .first()
            .map(|s| s.context_labels().into_iter().map(String::from).collect())
            .unwrap_or_default();
        let required = Self::required_scenes(schema.len());
        if scenes.len() < required {
            return Err(ContextError::InsufficientData {
                required,
                got: scenes.len(),
            });
        }
        let mut locs = Vec::with_capacity(scenes.len());
        let mut sizes = Vec::with_capacity(scenes.len());
        for s in scenes {
            let labels = s.context_labels();
            if labels != schema {
                return Err(ContextError::Schema {
                    expected: schema.clone(),
                    found: labels.into_iter().map(String::from).collect(),
                });
            }
            let ctx: Vec<BoundingBox> = s.context.iter().map(|c| c.bbox).collect();
            locs.push(location_vector(&s.target, &ctx));
            sizes.push(size_vector(&s.target, &ctx));
        }
        let mut location = Gaussian::fit(&locs);
        let mut size = Gaussian::fit(&sizes);
        location.cov.add_diagonal(COVARIANCE_REGULARIZER);
        size.cov.add_diagonal(COVARIANCE_REGULARIZER);
        Ok(Self { schema, location, size })
    }

    /// Unconditioned target size distribution.
    pub fn marginal_size(&self) -> Gaussian {
        self.size.marginal(&[0, 1])
    }

    pub fn marginal_location(&self) -> Gaussian {
        self.location.marginal(&[0, 1])
    }

    /// Target posteriors given labeled context; labels must follow the schema.
    pub fn condition(&self, context: &[ContextObject]) -> Result<TargetPosterior, ContextError> {
        let labels: Vec<&str> = context.iter().map(|c| c.label.as_str()).collect();
        if labels != self.schema {
            return Err(ContextError::Schema {
                expected: self.schema.clone(),
                found: labels.into_iter().map(String::from).collect(),
            });
        }
        let boxes: Vec<BoundingBox> = context.iter().map(|c| c.bbox).collect();
        self.condition_boxes(&boxes)
    }

    /// Target posteriors given context boxes in schema order.
    pub fn condition_boxes(&self, context: &[BoundingBox]) -> Result<TargetPosterior, ContextError> {
        let c = self.context_count();
        if context.len() != c {
            return Err(ContextError::ContextCount {
                expected: c,
                got: context.len(),
            });
        }
        let keep = [0, 1];
        let given: Vec<usize> = (2..2 + 2 * c).collect();
        let loc_obs: Vec<f64> = context.iter().flat_map(|b| b.center()).collect();
        let size_obs: Vec<f64> = context.iter().flat_map(|b| b.size().as_array()).collect();
        Ok(TargetPosterior {
            location: self.location.condition(&keep, &given, &loc_obs)?,
            size: self.size.condition(&keep, &given, &size_obs)?,
            marginal_size: self.marginal_size(),
        })
    }

    /// Target posterior that ignores the context entirely.
    pub fn unconditioned(&self) -> TargetPosterior {
        TargetPosterior {
            location: self.marginal_location(),
            size: self.marginal_size(),
            marginal_size: self.marginal_size(),
        }
    }
}

/// Conditioned target distributions for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPosterior {
    pub location: Gaussian,
    pub size: Gaussian,
    /// Unconditioned size model, used by the out-of-image fallback.
    pub marginal_size: Gaussian,
}

/// Samplers for a [`TargetPosterior`], built once per trial.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    location: GaussianSampler,
    size: GaussianSampler,
    marginal_size: GaussianSampler,
}

fn size_from(v: &[f64]) -> BoxSize {
    BoxSize::new(
        v[0].clamp(LOG_AREA_RANGE.0, LOG_AREA_RANGE.1),
        v[1].clamp(LOG_ASPECT_RANGE.0, LOG_ASPECT_RANGE.1),
    )
}

impl TargetPosterior {
    pub fn sampler(&self) -> Result<PosteriorSampler, ContextError> {
        Ok(PosteriorSampler {
            location: self.location.sampler()?,
            size: self.size.sampler()?,
            marginal_size: self.marginal_size.sampler()?,
        })
    }

    /// Box at the posterior means of location and log-size.
    pub fn mode_box(&self) -> BoundingBox {
        BoundingBox::new([self.location.mean[0], self.location.mean[1]], size_from(&self.size.mean))
            .expect("clamped sizes always reconstruct")
    }
}

impl PosteriorSampler {
    /// `n0` independent proposals; centers may fall outside the image.
    pub fn sample_proposals<R: Rng + ?Sized>(&self, n0: usize, rng: &mut R) -> Vec<BoundingBox> {
        (0..n0)
            .map(|_| {
                let loc = self.location.sample(rng);
                let size = self.sample_size(rng);
                BoundingBox::new([loc[0], loc[1]], size).expect("clamped sizes always reconstruct")
            })
            .collect()
    }

    /// One draw from the conditioned size posterior.
    pub fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> BoxSize {
        size_from(&self.size.sample(rng))
    }

    /// Replacement for a proposal centered outside the image: center uniform
    /// on `[0.1, 0.9]²`, size from the unconditioned size model.
    pub fn fallback_proposal<R: Rng + ?Sized>(&self, rng: &mut R) -> BoundingBox {
        let cx = rng.random_range(0.1..0.9);
        let cy = rng.random_range(0.1..0.9);
        let size = size_from(&self.marginal_size.sample(rng));
        BoundingBox::new([cx, cy], size).expect("clamped sizes always reconstruct")
    }
}
