use std::process::ExitCode;

use clap::Parser;

use ces_demand::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
            if report.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: at least one requested method failed or did not converge");
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
