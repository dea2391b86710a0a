use std::process::ExitCode;

use clap::Parser;

use phasecap::cli::{self, Cli, Command, RunConfig};

fn main() -> ExitCode {
    let Cli { command } = Cli::parse();
    match command {
        Command::Run(args) => {
            let config = RunConfig::from(args);
            match cli::run(&config) {
                Ok(summary) => {
                    print!("{}", cli::render_table(&summary.report));
                    println!("reports written to {}", config.out_dir.display());
                    for (_, msg) in &summary.problems {
                        eprintln!("error: {msg}");
                    }
                    ExitCode::from(summary.exit_category().code())
                }
                Err(e) => {
                    let code = e.category().code();
                    let err = anyhow::Error::new(e)
                        .context(format!("run on {} failed", config.case.display()));
                    eprintln!("error: {err:#}");
                    ExitCode::from(code)
                }
            }
        }
    }
}
