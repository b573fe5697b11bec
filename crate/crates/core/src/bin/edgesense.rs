use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgesense::harness::{
    simulate, sweep, validate, write_csv, ExperimentConfig, HarnessError, NoiseModel, Policy, SweepParam,
};

#[derive(Parser)]
#[command(
    name = "edgesense",
    version,
    about = "Rate adaptation for multi-view edge sensing over short-packet links"
)]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the adaptive rate decision as JSON.
    Optimize(ModelArgs),
    /// Simulate one policy and print a JSON result row.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        policy: Option<Policy>,
    },
    /// Sweep one parameter over several policies and write CSV.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "adaptive,brute,urllc,bits:32,bits:16")]
        policies: Vec<Policy>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-check suite; exits nonzero if any check fails.
    Validate {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

/// Scenario flags. Each overrides the matching field of `--config`.
#[derive(Args)]
struct ModelArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    antennas: Option<u32>,
    #[arg(long)]
    blocklength: Option<u32>,
    #[arg(long)]
    max_blocklength: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    centroid_magnitude: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    observations: Option<u32>,
    /// JSON with mu1, mu2 and sigma ("identity", a diagonal, or a matrix).
    #[arg(long)]
    model_file: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    noise_model: Option<NoiseModel>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(
            snr_db,
            antennas,
            blocklength,
            dim,
            centroid_magnitude,
            clip,
            observations
        );
        if self.max_blocklength.is_some() {
            cfg.max_blocklength = self.max_blocklength;
        }
        if self.model_file.is_some() {
            cfg.model_file = self.model_file.clone();
        }
        Ok(cfg)
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.noise_model {
            cfg.noise_model = n;
        }
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Optimize(model) => {
            let cfg = model.resolve()?;
            let params = cfg.build_params()?;
            let decision = cfg.decide(Policy::Adaptive, &params)?;
            println!("{}", serde_json::to_string(&decision)?);
        }
        Command::Simulate { model, run, policy } => {
            let mut cfg = model.resolve()?;
            run.apply(&mut cfg);
            if let Some(p) = policy {
                cfg.policy = p;
            }
            println!("{}", serde_json::to_string(&simulate(&cfg, "none", None)?)?);
        }
        Command::Sweep {
            model,
            run,
            param,
            values,
            policies,
            out,
        } => {
            let mut cfg = model.resolve()?;
            run.apply(&mut cfg);
            let rows = sweep(&cfg, param, &values, &policies)?;
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| HarnessError::Io(path.clone(), e.to_string()))?;
                    write_csv(&rows, BufWriter::new(file))?;
                }
                None => write_csv(&rows, io::stdout().lock())?,
            }
        }
        Command::Validate { seed } => {
            let report = validate(seed)?;
            println!("{report}");
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
