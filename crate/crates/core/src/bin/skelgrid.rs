//! `skelgrid`: runs one experiment and writes its summary, tables and plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use skelgrid::experiments::{run, Command};
use skelgrid::io::Format;

#[derive(Parser)]
#[command(name = "skelgrid", version, about = "Experiments on skeleton-valued maps, ball growth and lattice transport")]
struct Cli {
    /// JSON experiment config, e.g. {"command": "hopf", "n": 1}; replaces the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to out/<experiment>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Option<Command>,
}

fn load(cli: &Cli) -> Result<Command, String> {
    match (&cli.config, &cli.command) {
        (Some(_), Some(_)) => Err("give either --config or a subcommand, not both".into()),
        (None, None) => Err("missing subcommand (or --config FILE)".into()),
        (None, Some(c)) => Ok(c.clone()),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let output = match run(&cmd, cli.seed) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    if let Err(e) = output.write(&dir, cli.format) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    for (id, a) in output.summary.assertions.iter() {
        println!("{id} {}", if a.pass { "PASS" } else { "FAIL" });
    }
    for (name, a) in output.summary.checks.iter() {
        println!("check {name} {}", if a.pass { "ok" } else { "failed" });
    }
    println!("wrote {}", dir.display());
    if output.summary.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
