use std::process::ExitCode;

use clap::Parser;
use excusum_cli::{run, Cli, ConfigError, ErrorFormat};

/// Exit status when a verdict fails.
const EXIT_FAIL: u8 = 1;
/// Exit status for invalid input or runtime errors.
const EXIT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return report(cli.error_format, &anyhow::anyhow!("cannot start {threads} threads: {e}"));
        }
    }
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => report(cli.error_format, &e),
    }
}

fn report(format: ErrorFormat, error: &anyhow::Error) -> ExitCode {
    match format {
        ErrorFormat::Text => eprintln!("error: {error:#}"),
        ErrorFormat::Json => {
            let config = error.downcast_ref::<ConfigError>();
            let body = serde_json::json!({
                "error": {
                    "kind": if config.is_some() { "config" } else { "runtime" },
                    "path": config.map(|c| c.path.clone()),
                    "message": config.map_or_else(|| format!("{error:#}"), |c| c.message.clone()),
                }
            });
            eprintln!("{body}");
        }
    }
    ExitCode::from(EXIT_ERROR)
}
