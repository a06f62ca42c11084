use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fednoisy::commands::{self, Overrides};
use fednoisy::config::parse_config;
use fednoisy::server::Aggregator;

#[derive(Parser)]
#[command(name = "fednoisy", version, about = "Federated learning with noisy clients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Client-training worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run several aggregators on identical data and noise.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list, e.g. `fedavg,trimmed_mean:10,fedprox:0.01,fed_ncl`.
        #[arg(long, value_delimiter = ',', default_value = "fedavg,trimmed_mean,fedprox,fed_ncl")]
        aggregators: Vec<String>,
    },
    /// Sample client noise and report flip fractions without training.
    NoisePreview(Common),
    /// Layer-wise CKA from stored checkpoints.
    Cka {
        #[command(flatten)]
        common: Common,
        /// Only this checkpoint round (default: every stored round).
        #[arg(long)]
        round: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load(common: &Common) -> fednoisy::Result<fednoisy::config::ExperimentConfig> {
    let mut config = parse_config(&common.config)?;
    Overrides {
        out: common.out.clone(),
        seed: common.seed,
        workers: common.workers,
    }
    .apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> fednoisy::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let config = load(&common)?;
            let s = commands::cmd_run(&config)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::Compare { common, aggregators } => {
            let config = load(&common)?;
            let aggs = aggregators
                .iter()
                .map(|a| a.trim().parse::<Aggregator>())
                .collect::<fednoisy::Result<Vec<_>>>()?;
            let cmp = commands::cmd_compare(&config, &aggs)?;
            for s in &cmp.summaries {
                println!(
                    "{:<20} final {:.4}  last-10 mean {:.4}",
                    s.aggregator,
                    s.final_accuracy.unwrap_or(f64::NAN),
                    s.mean_last10_accuracy.unwrap_or(f64::NAN)
                );
            }
        }
        Command::NoisePreview(common) => {
            let config = load(&common)?;
            println!("client  n_samples  noise_rate  flip_fraction");
            for r in commands::cmd_noise_preview(&config)? {
                println!("{:>6}  {:>9}  {:>10.4}  {:>13.4}", r.client, r.n_samples, r.noise_rate, r.flip_fraction);
            }
        }
        Command::Cka { common, round } => {
            let config = load(&common)?;
            println!("round  layer  global_noisy  global_clean");
            for p in commands::cmd_cka(&config, round)? {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!("{:>5}  {:>5}  {:>12}  {:>12}", p.round, p.layer, f(p.global_noisy), f(p.global_clean));
            }
        }
    }
    Ok(())
}
