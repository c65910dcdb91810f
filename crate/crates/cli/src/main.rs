use std::process::ExitCode;

fn main() -> ExitCode {
    srus_cli::main_from(std::env::args_os())
}
