use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lumen_cli::execute(std::env::args_os()))
}
