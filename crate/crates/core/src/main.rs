use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use adhoc_ddos::experiment::{run_experiment, sweep_attackers, write_sweep_csv};
use adhoc_ddos::{load_scenario, Scenario, Scheme};

#[derive(Parser)]
#[command(name = "adhoc-ddos", version, about = "Ad hoc network DDoS defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, short)]
    scenario: PathBuf,
    /// Seeds, e.g. `1,2,7` or `1-10`. Defaults to the scenario's seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Metrics bucket width in seconds.
    #[arg(long)]
    bucket: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme over a batch of seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the scenario's scheme (proposed, swan, none).
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Sweep the number of attacking flows across schemes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Attacker counts, e.g. `0-5`.
        #[arg(long, default_value = "1-5")]
        attackers: String,
        /// Comma-separated schemes.
        #[arg(long, default_value = "proposed,swan")]
        schemes: String,
    },
}

fn parse_list(text: &str) -> anyhow::Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty range `{part}`");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad number `{part}`"))?),
        }
    }
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

fn load(common: &Common) -> anyhow::Result<(Scenario, Vec<u64>)> {
    let mut scenario = load_scenario(&common.scenario)?;
    if let Some(b) = common.bucket {
        if !(b > 0.0) {
            bail!("--bucket must be positive");
        }
        scenario.bucket_width_s = b;
    }
    let seeds = match &common.seeds {
        Some(s) => parse_list(s).context("--seeds")?,
        None => vec![scenario.seed],
    };
    Ok((scenario, seeds))
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { common, scheme } => {
            let (mut scenario, seeds) = load(&common)?;
            if let Some(s) = scheme {
                scenario.scheme = s;
            }
            let files = run_experiment(&scenario, &seeds, &common.out)?;
            println!("wrote {} files to {}", files.len(), common.out.display());
            let summary = common.out.join(format!("{}_summary.txt", scenario.scheme));
            print!("{}", std::fs::read_to_string(&summary).unwrap_or_default());
        }
        Command::Sweep {
            common,
            attackers,
            schemes,
        } => {
            let (scenario, seeds) = load(&common)?;
            let counts: Vec<usize> = parse_list(&attackers)
                .context("--attackers")?
                .into_iter()
                .map(|c| c as usize)
                .collect();
            let schemes = schemes
                .split(',')
                .map(|s| s.parse::<Scheme>())
                .collect::<Result<Vec<_>, _>>()?;
            let rows = sweep_attackers(&scenario, &counts, &schemes, &seeds)?;
            let path = common.out.join("sweep.csv");
            write_sweep_csv(&path, &rows)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
