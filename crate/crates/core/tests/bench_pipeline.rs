use std::sync::OnceLock;

use gpcl::bench::experiment::{read_models, read_results, trial_seed, write_models, write_results};
use gpcl::bench::summary::{pct_localized, Bucket};
use gpcl::bench::{generate_corpus, run_experiment, summarize, train_models, Corpus, ExperimentConfig, Method, TrainedModels, TrialRow};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_grid(40);
    cfg.seed = 4;
    cfg.trials = 30;
    cfg.corpus.train_scenes = 80;
    cfg.corpus.test_scenes = 10;
    cfg.offset_training.crop_count = 8000;
    cfg.bbr_training.crop_count = 8000;
    cfg.bootstrap_resamples = 300;
    cfg
}

struct Fixture {
    cfg: ExperimentConfig,
    corpus: Corpus,
    models: TrainedModels,
    rows: Vec<TrialRow>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = small_config();
        let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
        let models = train_models(&cfg, &corpus.train).unwrap();
        let rows = run_experiment(&cfg, &corpus, &models).unwrap();
        Fixture {
            cfg,
            corpus,
            models,
            rows,
        }
    })
}

#[test]
fn rows_cover_every_trial_and_method_in_order() {
    let f = fixture();
    assert_eq!(f.rows.len(), f.cfg.trials * f.cfg.methods.len());
    for (i, r) in f.rows.iter().enumerate() {
        assert_eq!(r.trial_id, i / f.cfg.methods.len());
        assert_eq!(r.method, f.cfg.methods[i % f.cfg.methods.len()]);
        assert!(r.is_ok(), "{:?}", r.status);
        let expected_calls = if r.method == Method::Gpcl { 60 } else { 1 };
        assert_eq!(r.oracle_calls, expected_calls);
        assert_eq!(r.wall_ms, 0);
    }
}

#[test]
fn summary_from_file_equals_in_memory_summary() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_results(&path, &f.cfg, &f.rows).unwrap();
    let (meta, back) = read_results(&path).unwrap();
    // Empty buckets hold NaN statistics, so compare renderings rather than values.
    assert_eq!(
        format!("{:?}", summarize(&back, f.cfg.bootstrap_resamples, f.cfg.seed)),
        format!("{:?}", summarize(&f.rows, f.cfg.bootstrap_resamples, f.cfg.seed))
    );

    let embedded: ExperimentConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(embedded, f.cfg);
    let seeds: Vec<u64> = serde_json::from_value(meta["trial_seeds"].clone()).unwrap();
    assert_eq!(seeds, (0..f.cfg.trials).map(|t| trial_seed(f.cfg.seed, t)).collect::<Vec<_>>());
}

#[test]
fn models_round_trip_exactly() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("models.json");
    write_models(&path, &f.cfg, &f.models).unwrap();
    assert_eq!(read_models(&path).unwrap(), f.models);
    // Reading is not enough: the reloaded models must drive identical trials.
    let again = run_experiment(&f.cfg, &f.corpus, &read_models(&path).unwrap()).unwrap();
    assert_eq!(again, f.rows);
}

#[test]
fn localized_share_falls_as_threshold_rises() {
    let f = fixture();
    for m in &f.cfg.methods {
        let rows: Vec<&TrialRow> = f.rows.iter().filter(|r| r.method == *m).collect();
        assert!(pct_localized(&rows, 0.4) >= pct_localized(&rows, 0.5));
    }
    let s = summarize(&f.rows, 100, 1);
    for m in &s {
        let all = m.overall().trials;
        let parts = m.bucket(Bucket::InitialBelow(0.3)).unwrap().trials + m.bucket(Bucket::InitialAbove(0.4)).unwrap().trials;
        assert!(parts <= all);
    }
}

#[test]
fn rows_do_not_depend_on_thread_count() {
    let f = fixture();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let rows = pool.install(|| run_experiment(&f.cfg, &f.corpus, &f.models).unwrap());
        assert_eq!(rows, f.rows, "{threads} threads");
    }
}
