//! Benchmark harness: synthetic corpus, model training, GP-CL versus BB-R
//! trials, summary statistics and plot data.

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod io;
pub mod plot;
pub mod summary;

pub use config::{ExperimentConfig, Method};
pub use corpus::{generate_corpus, Corpus, CorpusParams};
pub use experiment::{run_experiment, train_models, TrainedModels, TrialRow};
pub use io::BenchError;
pub use summary::{summarize, MethodSummary};
