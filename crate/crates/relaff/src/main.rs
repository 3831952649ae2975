use std::process::ExitCode;

fn main() -> ExitCode {
    relaff::cli::run()
}
