//! Gaussian-process regression over 2-D image coordinates with a
//! squared-exponential kernel and a zero mean function.
//!
//! The posterior predictive is computed from one Cholesky factorization of
//! `K_σ = K + σ_ε² I` per fit; variances use triangular solves, never an
//! explicit inverse. Grid realizations evaluate every cell independently, so
//! the output does not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Cholesky, LinalgError, Matrix};

pub type Point = [f64; 2];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("got {inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("at least one observation is required")]
    NoObservations,
    #[error("kernel matrix factorization failed: {0}")]
    Factorization(#[from] LinalgError),
    #[error("no length-scale candidate produced a factorizable kernel matrix")]
    NoViableCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self, GpError> {
        let hp = Self {
            length_scale,
            signal_variance,
            noise_variance,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(GpError::InvalidHyperparams(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(GpError::InvalidHyperparams(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(GpError::InvalidHyperparams(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn with_length_scale(&self, length_scale: f64) -> Self {
        Self {
            length_scale,
            ..*self
        }
    }

    /// Noise-free part of the kernel, `σ_f² exp(−‖x−x'‖² / 2l²)`.
    #[inline]
    pub fn covariance(&self, a: &Point, b: &Point) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        self.signal_variance * (-(dx * dx + dy * dy) / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    /// Full kernel. The noise term applies only when both arguments are the
    /// same observation, not merely equal coordinates.
    #[inline]
    pub fn kernel(&self, a: &Point, b: &Point, same_observation: bool) -> f64 {
        let k = self.covariance(a, b);
        if same_observation {
            k + self.noise_variance
        } else {
            k
        }
    }

    /// `K_σ` over a set of observations.
    pub fn gram(&self, inputs: &[Point]) -> Matrix {
        let n = inputs.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel(&inputs[i], &inputs[j], i == j);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn stddev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted GP. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    hyperparams: GpHyperparams,
    inputs: Vec<Point>,
    targets: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl GpModel {
    pub fn fit(inputs: &[Point], targets: &[f64], hyperparams: GpHyperparams) -> Result<Self, GpError> {
        hyperparams.validate()?;
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(GpError::NoObservations);
        }
        let chol = Cholesky::new(&hyperparams.gram(inputs))?;
        let alpha = chol.solve(targets);
        Ok(Self {
            hyperparams,
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            chol,
            alpha,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn chol_factor(&self) -> &Matrix {
        self.chol.lower()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Posterior predictive of the latent function at `x`.
    pub fn predict(&self, x: &Point) -> Prediction {
        let mut v: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| self.hyperparams.covariance(x, xi))
            .collect();
        let mean = dot(&v, &self.alpha);
        self.chol.solve_lower_in_place(&mut v);
        let variance = self.hyperparams.signal_variance - dot(&v, &v);
        Prediction {
            mean,
            variance: variance.max(0.0),
        }
    }

    /// Posterior mean and standard deviation at every cell of the grid.
    pub fn realize_grid(&self, grid: GridSpec) -> GridRealization {
        let cols = grid.cols;
        let per_row: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.rows)
            .into_par_iter()
            .map(|r| {
                let mut means = Vec::with_capacity(cols);
                let mut sds = Vec::with_capacity(cols);
                for c in 0..cols {
                    let p = self.predict(&grid.cell_center_rc(r, c));
                    means.push(p.mean);
                    sds.push(p.stddev());
                }
                (means, sds)
            })
            .collect();
        let mut mean = Vec::with_capacity(grid.len());
        let mut stddev = Vec::with_capacity(grid.len());
        for (m, s) in per_row {
            mean.extend(m);
            stddev.extend(s);
        }
        GridRealization { grid, mean, stddev }
    }
}

/// `log p(y | X, θ) = −½ yᵀK_σ⁻¹y − ½ log|K_σ| − (T/2) log 2π`.
pub fn log_marginal_likelihood(inputs: &[Point], targets: &[f64], hp: GpHyperparams) -> Result<f64, GpError> {
    let model = GpModel::fit(inputs, targets, hp)?;
    Ok(model.log_marginal_likelihood())
}

impl GpModel {
    pub fn log_marginal_likelihood(&self) -> f64 {
        let t = self.targets.len() as f64;
        -0.5 * dot(&self.targets, &self.alpha) - 0.5 * self.chol.log_determinant() - 0.5 * t * LN_2PI
    }
}

/// Picks the length scale maximizing the log marginal likelihood. Ties go to
/// the smaller length scale; candidates whose kernel matrix cannot be
/// factorized are skipped.
pub fn grid_search_length_scale(
    inputs: &[Point],
    targets: &[f64],
    base: GpHyperparams,
    candidates: &[f64],
) -> Result<GpHyperparams, GpError> {
    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64)> = None;
    for &l in &sorted {
        let hp = base.with_length_scale(l);
        hp.validate()?;
        match log_marginal_likelihood(inputs, targets, hp) {
            Ok(lml) if lml.is_finite() => {
                let better = match best {
                    None => true,
                    Some((_, b)) => lml > b + 1e-12 * b.abs().max(1.0),
                };
                if better {
                    best = Some((l, lml));
                }
            }
            Ok(_) | Err(GpError::Factorization(_)) => {}
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((l, _)) => Ok(base.with_length_scale(l)),
        None => Err(GpError::NoViableCandidate),
    }
}

/// Regular `rows × cols` grid over the unit square; cell centers sit at
/// `((c + ½)/cols, (r + ½)/rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "grid must have at least one cell");
        Self { rows, cols }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell_center_rc(&self, r: usize, c: usize) -> Point {
        [(c as f64 + 0.5) / self.cols as f64, (r as f64 + 0.5) / self.rows as f64]
    }

    /// Center of the cell with row-major index `idx`.
    pub fn cell_center(&self, idx: usize) -> Point {
        self.cell_center_rc(idx / self.cols, idx % self.cols)
    }

    /// Row-major index of the cell containing `p` (clamped to the grid).
    pub fn cell_of(&self, p: &Point) -> usize {
        let c = ((p[0] * self.cols as f64).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((p[1] * self.rows as f64).floor().max(0.0) as usize).min(self.rows - 1);
        r * self.cols + c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRealization {
    pub grid: GridSpec,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl GridRealization {
    /// Cell with the largest posterior mean; the lowest index wins ties.
    pub fn argmax_mean(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mean.iter().enumerate() {
            if m > self.mean[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(l: f64, sf2: f64, se2: f64) -> GpHyperparams {
        GpHyperparams::new(l, sf2, se2).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h = hp(0.3, 1.0, 0.01);
        let x = [0.2, 0.4];
        assert!((h.kernel(&x, &x, true) - 1.01).abs() < 1e-15);
        assert_eq!(h.kernel(&x, &x, false), 1.0);
        let y = [0.2 + 0.3, 0.4];
        assert!((h.kernel(&x, &y, false) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(h.kernel(&x, &[1e3, 1e3], false), 0.0);
        assert_eq!(h.kernel(&x, &y, false), h.kernel(&y, &x, false));
    }

    #[test]
    fn single_observation_fit() {
        let m = GpModel::fit(&[[0.0, 0.0]], &[2.0], hp(0.1, 1.0, 0.0)).unwrap();
        assert_eq!(m.chol_factor()[(0, 0)], 1.0);
        assert_eq!(m.alpha(), &[2.0]);
    }

    #[test]
    fn constructed_two_by_two_gram() {
        // An SE Gram matrix has a constant diagonal, so build [[4,2],[2,4]]
        // from σ_f² = 3, σ_ε² = 1 and a spacing with 3 exp(−d²/2l²) = 2.
        let l = 0.5;
        let d = l * (2.0 * 1.5f64.ln()).sqrt();
        let m = GpModel::fit(&[[0.0, 0.0], [d, 0.0]], &[1.0, 0.0], hp(l, 3.0, 1.0)).unwrap();
        let f = m.chol_factor();
        assert!((f[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((f[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((f[(1, 1)] - 3f64.sqrt()).abs() < 1e-12);
        let back = f.matmul(&f.transpose());
        assert!(back.max_abs_diff(&Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0])) < 1e-12);
        // [[4,2],[2,3]] itself, through the shared factorization routine.
        let direct = Cholesky::new(&Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0])).unwrap();
        assert_eq!(direct.lower()[(0, 0)], 2.0);
        assert_eq!(direct.lower()[(1, 0)], 1.0);
        assert!((direct.lower()[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_points_without_noise_fail() {
        let err = GpModel::fit(&[[0.3, 0.3], [0.3, 0.3]], &[1.0, 1.0], hp(0.1, 1.0, 0.0)).unwrap_err();
        match err {
            GpError::Factorization(LinalgError::NotPositiveDefinite { order, .. }) => assert_eq!(order, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn predict_interpolates_and_recovers_prior() {
        let xs = [[0.2, 0.2], [0.7, 0.6]];
        let m = GpModel::fit(&xs, &[0.8, -0.3], hp(0.15, 1.0, 0.0)).unwrap();
        let p = m.predict(&xs[1]);
        assert!((p.mean + 0.3).abs() < 1e-10);
        assert!(p.variance < 1e-10);
        let far = m.predict(&[50.0, 50.0]);
        assert_eq!(far.mean, 0.0);
        assert!((far.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lml_single_point_closed_form() {
        let v = log_marginal_likelihood(&[[0.5, 0.5]], &[0.0], hp(0.1, 1.0, 0.0)).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-14);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_maximize_data_fit() {
        let xs = [[0.1, 0.2], [0.4, 0.3], [0.8, 0.9]];
        let h = hp(0.2, 1.0, 0.05);
        let zero = log_marginal_likelihood(&xs, &[0.0; 3], h).unwrap();
        let some = log_marginal_likelihood(&xs, &[0.3, -0.2, 0.5], h).unwrap();
        assert!(zero > some);
    }

    #[test]
    fn grid_search_singleton_and_ties() {
        let xs = [[0.1, 0.2], [0.4, 0.3]];
        let base = hp(1.0, 1.0, 0.1);
        let got = grid_search_length_scale(&xs, &[0.1, 0.2], base, &[0.37]).unwrap();
        assert_eq!(got.length_scale, 0.37);
        // Far-apart points: any small length scale gives a diagonal K_σ, so
        // the likelihood is identical and the smallest candidate wins.
        let far = [[0.0, 0.0], [1.0, 1.0]];
        let got = grid_search_length_scale(&far, &[0.1, 0.2], base, &[0.02, 0.01, 0.015]).unwrap();
        assert_eq!(got.length_scale, 0.01);
    }

    #[test]
    fn grid_search_fails_when_nothing_factorizes() {
        let xs = [[0.3, 0.3], [0.3, 0.3]];
        let err = grid_search_length_scale(&xs, &[1.0, 1.0], hp(1.0, 1.0, 0.0), &[0.1, 0.2]).unwrap_err();
        assert_eq!(err, GpError::NoViableCandidate);
    }

    #[test]
    fn grid_cells_match_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<Point> = (0..10).map(|_| [rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let m = GpModel::fit(&xs, &ys, hp(0.2, 1.0, 0.01)).unwrap();
        let grid = GridSpec::square(50);
        let real = m.realize_grid(grid);
        assert!(real.stddev.iter().all(|s| *s >= 0.0));
        for _ in 0..20 {
            let idx = rng.random_range(0..grid.len());
            let p = m.predict(&grid.cell_center(idx));
            assert!((real.mean[idx] - p.mean).abs() < 1e-10);
            assert!((real.stddev[idx] - p.stddev()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_observation_grid_peaks_at_its_cell() {
        let grid = GridSpec::square(3);
        let obs = grid.cell_center(4);
        let m = GpModel::fit(&[obs], &[0.9], hp(0.2, 1.0, 0.0)).unwrap();
        let real = m.realize_grid(grid);
        assert!((real.mean[4] - 0.9).abs() < 1e-12);
        assert_eq!(real.argmax_mean(), 4);
        assert_eq!(grid.cell_of(&obs), 4);
    }
}
