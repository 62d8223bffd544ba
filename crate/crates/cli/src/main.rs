//! `aiexposure`: annotate postings, compute exposure, build panels and run
//! the decompositions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use commands::{Classify, Failure, Variant};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "aiexposure",
    version,
    about = "Posting-level AI exposure and its decompositions"
)]
struct Cli {
    /// `key = value` run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling and synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Inputs and analysis options shared by the analysis verbs.
#[derive(clap::Args, Debug, Default)]
struct Analysis {
    /// Posting exposure CSV.
    #[arg(long)]
    exposure: Option<String>,
    /// Period kind: quarter, half or year.
    #[arg(long)]
    period: Option<String>,
    /// alpha, beta, gamma or custom:<e2 weight>.
    #[arg(long)]
    index: Option<String>,
    /// Baseline period such as 2021, or `none`.
    #[arg(long)]
    baseline: Option<String>,
    /// Sample postings at this rate before building cells.
    #[arg(long)]
    sample_rate: Option<String>,
    /// Drop sampling groups smaller than this.
    #[arg(long)]
    min_cell_size: Option<String>,
}

impl Analysis {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("exposure", &self.exposure),
            ("period", &self.period),
            ("index", &self.index),
            ("baseline", &self.baseline),
            ("sample_rate", &self.sample_rate),
            ("min_cell_size", &self.min_cell_size),
        ]
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the two-stage annotation over a postings file.
    Annotate {
        #[arg(long)]
        postings: Option<String>,
        /// Chat-completions endpoint; omit to use the offline mock backend.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        max_attempts: Option<String>,
        /// Only reattempt postings listed in the failure sidecar.
        #[arg(long)]
        retry_failed: bool,
    },
    /// Turn annotations into posting exposure records.
    Exposure {
        #[arg(long)]
        annotations: Option<String>,
        /// Postings file supplying dates, occupations and other metadata.
        #[arg(long)]
        postings: Option<String>,
    },
    /// Aggregate exposure records into a cell panel.
    Panel {
        #[command(flatten)]
        analysis: Analysis,
    },
    /// Decompose aggregate exposure change.
    Decompose {
        #[arg(value_enum)]
        variant: Variant,
        #[command(flatten)]
        analysis: Analysis,
        /// Read a panel CSV instead of building one from exposure records.
        #[arg(long)]
        panel: Option<String>,
        /// First period of the contribution summary.
        #[arg(long)]
        from: Option<String>,
        /// common or raw.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Weighted Oaxaca-Blinder decomposition around a cut date.
    Ob {
        #[command(flatten)]
        analysis: Analysis,
        /// First day of the post period, YYYY-MM-DD.
        #[arg(long)]
        cut: Option<String>,
    },
    /// Descriptive tables.
    Describe {
        #[command(flatten)]
        analysis: Analysis,
    },
    /// Generate a synthetic market with known dynamics.
    Synth {
        /// Scenario `key = value` file.
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).config()?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: &Option<String>| -> Result<(), Failure> {
        match v {
            Some(v) => cfg
                .set(k, v)
                .map_err(|e| anyhow!("--{}: {e}", k.replace('_', "-")))
                .config(),
            None => Ok(()),
        }
    };
    match &cli.command {
        Command::Annotate {
            postings,
            endpoint,
            model,
            max_attempts,
            ..
        } => {
            set("postings", postings)?;
            set("endpoint", endpoint)?;
            set("model", model)?;
            set("max_attempts", max_attempts)?;
        }
        Command::Exposure {
            annotations,
            postings,
        } => {
            set("annotations", annotations)?;
            set("postings", postings)?;
        }
        Command::Panel { analysis } | Command::Describe { analysis } => {
            for (k, v) in analysis.pairs() {
                set(k, v)?;
            }
        }
        Command::Decompose {
            analysis,
            panel,
            from,
            mode,
            ..
        } => {
            for (k, v) in analysis.pairs() {
                set(k, v)?;
            }
            set("panel", panel)?;
            set("from", from)?;
            set("mode", mode)?;
        }
        Command::Ob { analysis, cut } => {
            for (k, v) in analysis.pairs() {
                set(k, v)?;
            }
            set("cut", cut)?;
        }
        Command::Synth { scenario } => set("scenario", scenario)?,
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, Failure> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Annotate { retry_failed, .. } => commands::annotate(&cfg, *retry_failed),
        Command::Exposure { .. } => commands::exposure(&cfg),
        Command::Panel { .. } => commands::panel(&cfg),
        Command::Decompose { variant, .. } => commands::decompose(&cfg, *variant),
        Command::Ob { .. } => commands::ob(&cfg),
        Command::Describe { .. } => commands::describe(&cfg),
        Command::Synth { .. } => commands::synth(&cfg, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            let code = f.code();
            let (Failure::Config(e) | Failure::Compute(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
