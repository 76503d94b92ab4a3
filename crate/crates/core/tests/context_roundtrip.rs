use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gpcl::context::{ContextSituationModel, Gaussian};
use gpcl::geometry::{BoundingBox, BoxSize, ContextObject, Scene, SceneDims};
use gpcl::linalg::Matrix;

const T_MEAN: [f64; 4] = [0.5, 0.45, -3.0, -0.9];
const T_STD: [f64; 4] = [0.1, 0.08, 0.3, 0.15];
const SHIFT: [f64; 4] = [0.1, 0.05, -1.0, 0.2];
const NOISE: [f64; 4] = [0.03, 0.04, 0.2, 0.1];

/// Target coordinate `k` and a context coordinate equal to it plus a shift
/// and independent noise, so every conditional is available in closed form.
fn scene(rng: &mut ChaCha8Rng) -> Scene {
    let mut t = [0.0; 4];
    let mut c = [0.0; 4];
    for k in 0..4 {
        t[k] = T_MEAN[k] + T_STD[k] * rng.sample::<f64, _>(StandardNormal);
        c[k] = t[k] + SHIFT[k] + NOISE[k] * rng.sample::<f64, _>(StandardNormal);
    }
    Scene {
        dims: SceneDims::new(800.0, 600.0).unwrap(),
        target: BoundingBox::new([t[0], t[1]], BoxSize::new(t[2], t[3])).unwrap(),
        context: vec![ContextObject {
            label: "dog".into(),
            bbox: BoundingBox::new([c[0], c[1]], BoxSize::new(c[2], c[3])).unwrap(),
        }],
    }
}

fn analytic(k: usize, observed: f64) -> (f64, f64) {
    let (s2, q2) = (T_STD[k].powi(2), NOISE[k].powi(2));
    let mean = T_MEAN[k] + s2 / (s2 + q2) * (observed - T_MEAN[k] - SHIFT[k]);
    (mean, s2 * q2 / (s2 + q2))
}

#[test]
fn fit_condition_sample_matches_analytic_conditional() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let train: Vec<Scene> = (0..50_000).map(|_| scene(&mut rng)).collect();
    let model = ContextSituationModel::fit(&train).unwrap();

    let observed = [0.62, 0.55, -3.7, -0.6];
    let ctx = BoundingBox::new([observed[0], observed[1]], BoxSize::new(observed[2], observed[3])).unwrap();
    let post = model.condition_boxes(&[ctx]).unwrap();
    let sampler = post.sampler().unwrap();

    let n = 4000;
    let draws = sampler.sample_proposals(n, &mut rng);
    let coords = |b: &BoundingBox| [b.center()[0], b.center()[1], b.size().log_area_ratio, b.size().log_aspect_ratio];
    for k in 0..4 {
        let (mean, var) = analytic(k, observed[k]);
        let empirical = draws.iter().map(|b| coords(b)[k]).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (empirical - mean).abs() <= 3.0 * se,
            "coordinate {k}: sample mean {empirical} vs analytic {mean} (se {se})"
        );
    }
}

#[test]
fn sample_covariance_recovers_known_joint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cov = Matrix::from_rows(&[vec![0.04, 0.01, 0.0], vec![0.01, 0.09, -0.02], vec![0.0, -0.02, 0.25]]);
    let truth = Gaussian::new(vec![0.2, -1.0, 3.0], cov.clone());
    let sampler = truth.sampler().unwrap();
    let samples: Vec<Vec<f64>> = (0..40_000).map(|_| sampler.sample(&mut rng)).collect();
    let fitted = Gaussian::fit(&samples);
    for i in 0..3 {
        assert!((fitted.mean[i] - truth.mean[i]).abs() < 0.01);
        for j in 0..3 {
            // Standard error of a covariance entry is about sqrt((σᵢᵢσⱼⱼ + σᵢⱼ²)/n).
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / 40_000.0).sqrt();
            assert!((fitted.cov[(i, j)] - cov[(i, j)]).abs() < 4.0 * se, "entry ({i},{j})");
        }
    }
}

fn pd_joint() -> impl Strategy<Value = (Gaussian, usize)> {
    (2usize..=10).prop_flat_map(|d| {
        (
            prop::collection::vec(-1.0..1.0f64, d * d),
            prop::collection::vec(-1.0..1.0f64, d),
            1..d,
        )
            .prop_map(move |(a, mean, g)| {
                let a = Matrix::from_row_slice(d, d, &a);
                let mut cov = a.matmul(&a.transpose());
                cov.add_diagonal(0.1);
                (Gaussian::new(mean, cov), g)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn conditioning_never_inflates_variance((joint, g) in pd_joint(), v in prop::collection::vec(-2.0..2.0f64, 10)) {
        let d = joint.dim();
        let given: Vec<usize> = (0..g).collect();
        let keep: Vec<usize> = (g..d).collect();
        let post = joint.condition(&keep, &given, &v[..g]).unwrap();
        for (i, &k) in keep.iter().enumerate() {
            prop_assert!(post.cov[(i, i)] <= joint.cov[(k, k)] + 1e-10);
        }
    }
}
