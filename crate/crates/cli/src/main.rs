use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(macrogram_cli::run(std::env::args_os()))
}
