use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use limitop_cli::{exit, parse_config, run};

#[derive(Parser)]
#[command(name = "limitop", version, about = "Band-dominated operator analyses from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses listed in a config and write report.json plus CSV files.
    Analyze {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for randomized estimates (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Analyze {
        config,
        out,
        seed,
        threads,
    } = Cli::parse().command;

    if let Some(k) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot configure {k} threads: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    let base = config.parent().map(PathBuf::from).unwrap_or_default();
    let mut cfg = match parse_config(&text, &base) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("configuration errors in {}:", config.display());
            for e in &errors.0 {
                eprintln!("  {e}");
            }
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
        let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("limitop");
        base.join(format!("{stem}-out"))
    });

    let output = match std::panic::catch_unwind(|| run(&cfg)) {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
        Err(_) => {
            eprintln!("error: internal assertion failed");
            return ExitCode::from(exit::INVARIANT as u8);
        }
    };
    if let Err(e) = output.write(&dir) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(exit::CONFIG as u8);
    }
    println!("{}", dir.join("report.json").display());
    if output.violations.is_empty() {
        ExitCode::from(exit::OK as u8)
    } else {
        for v in &output.violations {
            eprintln!("invariant violation: {v}");
        }
        ExitCode::from(exit::INVARIANT as u8)
    }
}
