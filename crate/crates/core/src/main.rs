use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capguard::config::RunConfig;
use capguard::fixture::{generate, FixtureSpec};
use capguard::gcapm::WeightMode;
use capguard::monitor::Statistic;
use capguard::workflow;

/// Exit code for a drift alarm; errors exit with 1.
const EXIT_ALARM: u8 = 2;

#[derive(Parser)]
#[command(name = "capguard", version, about = "Attention-coverage safety monitor for image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit calibration intervals and the selective gate on a labeled manifest.
    OfflineFit(Common),
    /// Release or hold back each prediction of a manifest.
    RuntimeGate(Common),
    /// Test a runtime window against the calibration reference (exit 2 on alarm).
    DriftCheck(Common),
    /// Write Gaussian-blurred copies of a dataset, one per level.
    Corrupt(Common),
    /// Render fused class maps as PNG files with legends.
    Render(Common),
    /// Generate a synthetic micro-net dataset.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    masks_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    gate: Option<PathBuf>,
    /// Micro-net directory (or its net.toml) used by `corrupt`.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    palette: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Blur level in percent; repeat for several.
    #[arg(long = "level")]
    levels: Vec<f64>,
    /// Bootstrap resamples.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    weights: Option<WeightMode>,
    #[arg(long)]
    mask_threshold: Option<u8>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    statistic: Option<Statistic>,
    /// Added to the gate margin; positive releases more predictions.
    #[arg(long, allow_hyphen_values = true)]
    bias_offset: Option<f64>,
}

impl Common {
    fn settings(self) -> capguard::Result<capguard::config::Settings> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            manifest: self.manifest,
            masks_dir: self.masks_dir,
            out: self.out,
            calibration: self.calibration,
            gate: self.gate,
            net: self.net,
            palette: self.palette,
            tau: self.tau,
            gamma: self.gamma,
            levels: (!self.levels.is_empty()).then_some(self.levels),
            bootstrap: self.bootstrap,
            seed: self.seed,
            weights: self.weights,
            mask_threshold: self.mask_threshold,
            alpha: self.alpha,
            lambda: self.lambda,
            epochs: self.epochs,
            statistic: self.statistic,
            bias_offset: self.bias_offset,
        };
        file.overlay(flags).resolve()
    }
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave true labels out of the manifest.
    #[arg(long)]
    no_labels: bool,
}

fn run(cli: Cli) -> capguard::Result<u8> {
    match cli.command {
        Command::OfflineFit(c) => {
            let s = workflow::offline_fit(&c.settings()?)?;
            println!(
                "fitted {} samples ({} correct); sensitivity CI [{}, {}], fpr CI [{}, {}]",
                s.samples,
                s.correct,
                s.calibration.att_sensitivity.lower,
                s.calibration.att_sensitivity.upper,
                s.calibration.att_fpr.lower,
                s.calibration.att_fpr.upper
            );
        }
        Command::RuntimeGate(c) => {
            let s = workflow::runtime_gate(&c.settings()?)?;
            println!("{} samples: {} released, {} for human review", s.samples, s.released, s.abstained);
        }
        Command::DriftCheck(c) => {
            let r = workflow::drift_check(&c.settings()?)?;
            for f in &r.features {
                println!(
                    "{:?}: {:?} = {:.4}, p = {:.4}",
                    f.feature,
                    r.statistic,
                    f.stats.get(r.statistic),
                    f.p_values.get(r.statistic)
                );
            }
            println!("alarm: {}", r.alarm);
            if r.alarm {
                return Ok(EXIT_ALARM);
            }
        }
        Command::Corrupt(c) => {
            for p in workflow::corrupt(&c.settings()?)? {
                println!("{}", p.display());
            }
        }
        Command::Render(c) => {
            let paths = workflow::render_maps(&c.settings()?)?;
            println!("rendered {} maps", paths.len());
        }
        Command::Fixture(f) => {
            let spec = FixtureSpec {
                samples: f.samples,
                seed: f.seed,
                labels: !f.no_labels,
            };
            let m = generate(&f.out, &spec)?;
            println!("{}: {} samples", f.out.join("manifest.toml").display(), m.samples.len());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPGUARD_LOG", "warn")).init();
    // clap exits with 2 on usage errors, which would read as a drift alarm
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
