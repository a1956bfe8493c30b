use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use valve_fdd::calib::Method;
use valve_fdd::pipeline::{Pipeline, PipelineConfig, DATA_ROOT_ENV};
use valve_fdd::sim::Trajectory;
use valve_fdd::{Error, Result};

#[derive(Parser)]
#[command(name = "valve-fdd", version, about = "Fault detection and diagnosis pipeline for valve actuator telemetry")]
struct Cli {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Data root (also read from the environment).
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window step, shared by extraction and streaming.
    #[arg(long, global = true)]
    step: Option<usize>,
    #[arg(long, global = true)]
    prob_threshold: Option<f64>,
    #[arg(long, global = true)]
    trigger_threshold: Option<f64>,
    #[arg(long, global = true)]
    slack: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    max_flagged: Option<usize>,
    #[arg(long, global = true)]
    detector_calibration: Option<Method>,
    #[arg(long, global = true)]
    diagnoser_calibration: Option<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the development, final-validation and OOD corpora.
    Simulate,
    /// Split the development corpus and fit the scaler.
    Split,
    /// Train the autoencoder on nominal training windows.
    TrainTcae,
    /// Extract z, r and e for every window of every set.
    Extract,
    /// Fit the binary fault detector.
    TrainDetector,
    /// Fit the multiclass fault diagnoser.
    TrainDiagnoser,
    /// Fit the probability calibrators.
    Calibrate,
    /// Fit the conformal OOD threshold.
    CalibrateOod,
    /// Evaluate on the test sets and write the reports.
    Evaluate,
    /// Run every stage from `simulate` to `evaluate`.
    Run,
    /// Monitor a trajectory (CSV from a file or `-` for stdin, or a .vfdd
    /// file) and print one JSON event per line.
    Stream {
        #[arg(long, short, default_value = "-")]
        input: String,
        /// Stream id reported in events (CSV input only).
        #[arg(long, default_value_t = 0)]
        traj_id: u32,
    },
    /// Sweep autoencoder architectures.
    BenchArch,
    /// Compare class-imbalance remedies for the detector.
    BenchImbalance,
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let o = &cli.overrides;
    if let Some(v) = &o.data_root {
        cfg.data_root = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.step {
        cfg.window.step = v;
    }
    if let Some(v) = o.prob_threshold {
        cfg.cusum.prob_threshold = v;
    }
    if let Some(v) = o.trigger_threshold {
        cfg.cusum.trigger_threshold = v;
    }
    if let Some(v) = o.slack {
        cfg.cusum.slack = v;
    }
    if let Some(v) = o.alpha {
        cfg.ood.alpha = v;
    }
    if let Some(v) = o.max_flagged {
        cfg.ood.max_flagged = v;
    }
    if let Some(v) = o.detector_calibration {
        cfg.detector.calibration = v;
    }
    if let Some(v) = o.diagnoser_calibration {
        cfg.diagnoser.calibration = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let p = Pipeline::new(cfg)?;
    match cli.command {
        Command::Simulate => {
            let m = p.simulate()?;
            println!("simulated {} development, {} final-validation, {} OOD trajectories", m.dev.len(), m.test2.len(), m.ood.len());
        }
        Command::Split => {
            let s = p.split()?;
            println!("train {}  val {}  val2 {}  test {}", s.train.len(), s.val.len(), s.val2.len(), s.test.len());
        }
        Command::TrainTcae => {
            let m = p.train_tcae()?;
            let log = &m.training;
            println!(
                "trained autoencoder: {} parameters, {} epochs, best epoch {}, val loss {:.6}",
                m.n_params(),
                log.epochs,
                log.best_epoch,
                log.val_loss.get(log.best_epoch).copied().unwrap_or(f64::NAN)
            );
            println!("model hash {}", m.hash());
        }
        Command::Extract => {
            for (set, n) in p.extract()? {
                println!("{set:<6} {n} windows");
            }
        }
        Command::TrainDetector => {
            let m = p.train_detector()?;
            println!("detector: {} trees", m.trees.len());
        }
        Command::TrainDiagnoser => {
            let m = p.train_diagnoser()?;
            println!("diagnoser: {} trees, classes {:?}", m.trees.len(), m.classes);
        }
        Command::Calibrate => {
            let c = p.calibrate()?;
            println!("calibrated on {} windows", c.calibration_windows);
        }
        Command::CalibrateOod => {
            let t = p.calibrate_ood()?;
            println!("ood threshold {:.6} (rank {} of {}, alpha {})", t.threshold, t.rank, t.n, t.alpha);
        }
        Command::Evaluate => {
            let r = p.evaluate()?;
            print!("{}", r.to_text());
        }
        Command::Run => {
            let r = p.run_all()?;
            print!("{}", r.to_text());
        }
        Command::Stream { input, traj_id } => {
            let stdout = io::stdout();
            if input.ends_with(".vfdd") {
                let t = Trajectory::load(std::path::Path::new(&input))?;
                let mut csv = Vec::new();
                t.write_csv(&mut csv)?;
                p.stream(csv.as_slice(), stdout.lock(), t.id)?;
            } else {
                let reader: Box<dyn BufRead> = if input == "-" {
                    Box::new(io::stdin().lock())
                } else {
                    Box::new(BufReader::new(File::open(&input)?))
                };
                p.stream(reader, stdout.lock(), traj_id)?;
            }
        }
        Command::BenchArch => {
            let rows = p.bench_arch()?;
            let mut out = io::stdout().lock();
            valve_fdd::pipeline::bench::arch_csv(&mut out, &rows)?;
            out.flush()?;
        }
        Command::BenchImbalance => {
            let rows = p.bench_imbalance()?;
            let mut out = io::stdout().lock();
            valve_fdd::eval::imbalance_csv(&mut out, &rows)?;
            out.flush()?;
        }
        Command::Config => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
