use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpcl::bench::config::parse_methods;
use gpcl::bench::corpus::{read_corpus, write_corpus};
use gpcl::bench::experiment::{read_models, read_results, write_models, write_results};
use gpcl::bench::io::{header, write_file};
use gpcl::bench::plot::{calibration_bins, calibration_csv, write_scatter};
use gpcl::bench::summary::render_table;
use gpcl::bench::{generate_corpus, run_experiment, summarize, train_models, BenchError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gpcl", version, about = "GP-CL active localization benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults are used for anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, BenchError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test scene corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the context model, offset predictor and BB-R models.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the seeded trials and write results.csv.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Trained models; trained on the fly when omitted.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated, e.g. `gpcl,bbr-0.6,bbr-0.1`.
        #[arg(long)]
        methods: Option<String>,
        /// Grid side length (the grid is square).
        #[arg(long)]
        grid: Option<usize>,
        /// Record per-row wall time (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Compute summary statistics from a results file.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit scatter and calibration-curve CSVs.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        /// With --corpus, also writes the calibration curve.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<(), BenchError> {
    if let Ok(v) = std::env::var("GPCL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| BenchError::Config(format!("GPCL_THREADS must be an integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(e.to_string()))?;
    }
    Ok(())
}

fn results_config(meta: &serde_json::Value, path: &Path) -> Result<ExperimentConfig, BenchError> {
    serde_json::from_value(meta["config"].clone())
        .map_err(|e| BenchError::Parse(format!("{}: embedded config: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), BenchError> {
    init_threads()?;
    match cli.command {
        Command::GenCorpus { common, out } => {
            let cfg = common.resolve()?;
            let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
            write_corpus(&out, &corpus, &cfg.corpus, cfg.seed)
        }
        Command::Train { common, corpus, out } => {
            let cfg = common.resolve()?;
            let corpus = read_corpus(&corpus)?;
            write_models(&out, &cfg, &train_models(&cfg, &corpus.train)?)
        }
        Command::Run {
            common,
            corpus,
            models,
            out,
            trials,
            methods,
            grid,
            timing,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(m) = methods {
                cfg.methods = parse_methods(&m).map_err(BenchError::Config)?;
            }
            if let Some(g) = grid {
                cfg = cfg.with_grid(g);
            }
            cfg.timing |= timing;
            let corpus = read_corpus(&corpus)?;
            let models = match models {
                Some(p) => read_models(&p)?,
                None => train_models(&cfg, &corpus.train)?,
            };
            let rows = run_experiment(&cfg, &corpus, &models)?;
            write_results(&out, &cfg, &rows)
        }
        Command::Summarize { results, out } => {
            let (meta, rows) = read_results(&results)?;
            let cfg = results_config(&meta, &results)?;
            let summaries = summarize(&rows, cfg.bootstrap_resamples, cfg.seed);
            let src = serde_json::json!({ "results": results.display().to_string(), "config": meta["config"] });
            let mut table = header("gpcl-summary v1", &src)?;
            table.push_str("# median diff standard error is a bootstrap estimate\n");
            table.push_str(&render_table(&summaries));
            write_file(&out.join("summary.txt"), &table)?;
            let json = serde_json::json!({ "source": src, "methods": summaries });
            write_file(&out.join("summary.json"), &(serde_json::to_string_pretty(&json)? + "\n"))?;
            print!("{}", render_table(&summaries));
            Ok(())
        }
        Command::PlotData {
            results,
            models,
            corpus,
            out,
        } => {
            let (meta, rows) = read_results(&results)?;
            write_scatter(&out, &rows, &meta)?;
            if let (Some(m), Some(c)) = (models, corpus) {
                let cfg = results_config(&meta, &results)?;
                let models = read_models(&m)?;
                let test = read_corpus(&c)?.test;
                let bins = calibration_bins(&cfg, &models, &test);
                write_file(&out.join("calibration.csv"), &calibration_csv(&cfg, test.len(), &bins)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("gpcl: error kind={} msg={msg:?}", e.kind());
            ExitCode::from(2)
        }
    }
}
