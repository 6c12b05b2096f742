use std::process::ExitCode;

use caamargin_cli::CliError;

fn main() -> ExitCode {
    match caamargin_cli::run(std::env::args_os()) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            match outcome.error {
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(CliError::Usage(e)) => e.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
