use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use editbench::{cmd_eval, cmd_gen, cmd_plot, cmd_report, ExperimentConfig, RunResult, Split};
use editbench_core::metrics::render_table;
use editbench_core::EditMethod;

/// Knowledge-editing benchmark on a synthetic associative-memory model.
#[derive(Parser)]
#[command(name = "editbench", version)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Prints the default config with comments and exits.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the graph, train the model and write every dataset split.
    Gen,
    /// Score editors on dataset splits.
    Eval {
        /// Editor to run (repeatable); every configured method when omitted.
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<EditMethod>,
        /// Split to score (repeatable); all six when omitted.
        #[arg(long = "split", value_parser = parse_split)]
        splits: Vec<Split>,
    },
    /// Plot label distributions of one round-trip case.
    Plot {
        #[arg(long = "case")]
        case_id: String,
        /// Editor drawn against the original model.
        #[arg(long, value_parser = parse_method)]
        method: Option<EditMethod>,
        /// Second editor drawn alongside; `none` to omit.
        #[arg(long)]
        compare: Option<String>,
    },
    /// Collect evaluated results into one report.
    Report,
}

fn parse_method(s: &str) -> Result<EditMethod, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn run(cli: Cli) -> RunResult<()> {
    if cli.print_default_config {
        print!("{}", ExperimentConfig::documented_default());
        return Ok(());
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    let Some(command) = cli.command else {
        return Err(editbench::RunError::Config("no command given; see --help".into()));
    };
    match command {
        Command::Gen => {
            let s = cmd_gen(&config)?;
            println!("facts: {}", s.facts);
            println!("training: {} epochs, accuracy {:.4}", s.epochs, s.accuracy);
            for (split, n) in s.counts {
                println!("{split}: {n} cases");
            }
            println!("written to {}", config.output_dir.display());
        }
        Command::Eval { methods, splits } => {
            let methods = if methods.is_empty() { config.methods.clone() } else { methods };
            let splits = if splits.is_empty() { Split::ALL.to_vec() } else { splits };
            let reports = cmd_eval(&config, &methods, &splits)?;
            print!("{}", render_table(&reports));
        }
        Command::Plot { case_id, method, compare } => {
            if let Some(m) = method {
                config.plot.method = m;
            }
            match compare.as_deref() {
                None => {}
                Some("none") => config.plot.compare = None,
                Some(s) => config.plot.compare = Some(s.parse()?),
            }
            let plot = cmd_plot(&config, &case_id)?;
            println!("{} {} {}", plot.case_id, plot.subject, plot.relation);
            for series in &plot.series {
                let cells: Vec<String> = plot
                    .labels
                    .iter()
                    .zip(&series.values)
                    .map(|(l, v)| format!("{l}={v:.3}"))
                    .collect();
                println!("  {:<10} {}", series.name, cells.join(" "));
            }
        }
        Command::Report => print!("{}", cmd_report(&config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
