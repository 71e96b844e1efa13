use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use uncmap::io::LoadedManifest;
use uncmap::map_eval::{ApConfig, ChamferConfig, MatchingStrategy, DEFAULT_THRESHOLDS};
use uncmap::pipeline::{
    self, AnalyzeOptions, CalibrateOptions, CompareOptions, EvalPredOptions, Outputs,
};
use uncmap::pred_eval::{DEFAULT_MISS_THRESHOLD, DEFAULT_MODES};
use uncmap::synth::{DatasetConfig, PredictorConfig};
use uncmap::{calibration, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(
    name = "uncmap",
    version,
    about = "Probabilistic HD map evaluation toolkit"
)]
struct Cli {
    /// Worker threads for per-scene work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ManifestArgs {
    /// Run manifest written by `generate` or assembled by hand.
    #[arg(long)]
    manifest: PathBuf,
    /// Report directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a dataset and its manifest.
    Generate {
        /// TOML dataset config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's scene count.
        #[arg(long)]
        n_scenes: Option<usize>,
    },
    /// Chamfer-thresholded AP per class and mAP.
    EvalMap {
        #[command(flatten)]
        io: ManifestArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
        ap_thresholds: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Matching::Greedy)]
        matching: Matching,
        #[arg(long, default_value_t = ChamferConfig::default().resample_count)]
        resample: usize,
    },
    /// minADE, minFDE and MR of the trajectory files' modes.
    EvalPred {
        #[command(flatten)]
        io: ManifestArgs,
        #[arg(long, default_value_t = DEFAULT_MISS_THRESHOLD)]
        miss_threshold: f64,
    },
    /// Interval coverage of vertex scales and class reliability.
    Calibrate {
        #[command(flatten)]
        io: ManifestArgs,
        #[arg(long, value_delimiter = ',', default_values_t = calibration::DEFAULT_LEVELS.to_vec())]
        levels: Vec<f64>,
        #[arg(long, default_value_t = calibration::DEFAULT_RELIABILITY_BINS)]
        bins: usize,
        /// Chamfer distance under which a prediction is paired with ground truth.
        #[arg(long, default_value_t = calibration::DEFAULT_PAIR_THRESHOLD)]
        pair_threshold: f64,
    },
    /// Scale against distance from the ego, binned with 95% intervals.
    AnalyzeUncertainty {
        #[command(flatten)]
        io: ManifestArgs,
        #[arg(long, value_delimiter = ',', default_values_t = AnalyzeOptions::default().bin_edges)]
        bin_edges: Vec<f64>,
    },
    /// Blind and uncertainty-weighted baselines side by side.
    ComparePredictors {
        #[command(flatten)]
        io: ManifestArgs,
        #[arg(long, default_value_t = PredictorConfig::default().lambda)]
        lambda: f64,
        #[arg(long, default_value_t = PredictorConfig::default().b0)]
        b0: f64,
        #[arg(long, default_value_t = DEFAULT_MODES)]
        modes: usize,
        #[arg(long, default_value_t = DEFAULT_MISS_THRESHOLD)]
        miss_threshold: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Matching {
    Greedy,
    Hungarian,
}

fn write(out: &Outputs, dir: &Path) -> Result<(), Error> {
    out.write_all(dir)?;
    for (p, _) in &out.files {
        info!("wrote {}", dir.join(p).display());
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<DatasetConfig, Error> {
    match path {
        None => Ok(DatasetConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            pipeline::parse_dataset_config(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            n_scenes,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n_scenes {
                cfg.n_scenes = n;
            }
            let (report, files) = pipeline::generate(&cfg)?;
            write(&files, &out)?;
            println!(
                "generated {} scenes, {} agents, {} elements into {}",
                report.n_scenes,
                report.n_agents,
                report.n_elements,
                out.display()
            );
        }
        Command::EvalMap {
            io,
            ap_thresholds,
            matching,
            resample,
        } => {
            let cfg = ApConfig {
                thresholds: ap_thresholds,
                chamfer: ChamferConfig {
                    resample_count: resample,
                },
                matching: match matching {
                    Matching::Greedy => MatchingStrategy::Greedy,
                    Matching::Hungarian => MatchingStrategy::Hungarian,
                },
                ..ApConfig::default()
            };
            cfg.validate()?;
            let m = LoadedManifest::load(&io.manifest)?;
            let (doc, files) = pipeline::eval_map(&m, &cfg)?;
            write(&files, &io.out)?;
            for c in &doc.report.classes {
                let aps: Vec<String> = c.ap.iter().map(|a| fmt_opt(*a)).collect();
                println!("{:<16} AP {}", c.class.as_str(), aps.join(" "));
            }
            println!("mAP {}", fmt_opt(doc.report.map));
        }
        Command::EvalPred { io, miss_threshold } => {
            let opts = EvalPredOptions { miss_threshold };
            let m = LoadedManifest::load(&io.manifest)?;
            let (doc, files) = pipeline::eval_pred(&m, &opts)?;
            write(&files, &io.out)?;
            let r = doc.report;
            println!(
                "minADE {:.4}  minFDE {:.4}  MR {:.4}  ({} agents)",
                r.min_ade, r.min_fde, r.miss_rate, r.n_agents
            );
        }
        Command::Calibrate {
            io,
            levels,
            bins,
            pair_threshold,
        } => {
            let opts = CalibrateOptions {
                levels,
                bins,
                pair_threshold,
                ..CalibrateOptions::default()
            };
            let m = LoadedManifest::load(&io.manifest)?;
            let (doc, files) = pipeline::calibrate(&m, &opts)?;
            write(&files, &io.out)?;
            for (l, c) in doc
                .coverage
                .nominal_levels
                .iter()
                .zip(&doc.coverage.empirical_coverage)
            {
                println!("coverage @{l}: {c:.4}");
            }
            println!(
                "ECE {:.4} over {} vertices",
                doc.reliability.ece, doc.reliability.n
            );
        }
        Command::AnalyzeUncertainty { io, bin_edges } => {
            let opts = AnalyzeOptions { bin_edges };
            let m = LoadedManifest::load(&io.manifest)?;
            let (doc, files) = pipeline::analyze_uncertainty(&m, &opts)?;
            write(&files, &io.out)?;
            for g in doc.groups.iter().filter(|g| !g.group.contains(',')) {
                println!(
                    "{:<28} mean b {}  spearman {}  (n = {})",
                    g.group,
                    fmt_opt(g.mean_b),
                    fmt_opt(g.spearman),
                    g.n_vertices
                );
            }
        }
        Command::ComparePredictors {
            io,
            lambda,
            b0,
            modes,
            miss_threshold,
        } => {
            let opts = CompareOptions {
                predictor: PredictorConfig {
                    modes,
                    lambda,
                    b0,
                    ..PredictorConfig::default()
                },
                miss_threshold,
            };
            opts.predictor.validate()?;
            let m = LoadedManifest::load(&io.manifest)?;
            let (doc, files) = pipeline::compare_predictors(&m, &opts)?;
            write(&files, &io.out)?;
            println!("{:<8} {:>10} {:>18}", "metric", "blind", "weighted");
            for d in &doc.deltas {
                println!("{:<8} {:>10.4} {:>18}", d.metric, d.blind, d.formatted);
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_USAGE } else { EXIT_DATA })
        }
    }
}
