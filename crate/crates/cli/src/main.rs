use std::process::ExitCode;

use clap::Parser;

use matchinf_cli::{run, Cli, EXIT_OK, EXIT_USER};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USER) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = run(&cli);
    if outcome.code == EXIT_OK {
        println!("{}", outcome.summary);
        for path in &outcome.artifacts {
            println!("wrote {}", path.display());
        }
    } else {
        eprintln!("{}", outcome.summary);
    }
    ExitCode::from(outcome.code)
}
