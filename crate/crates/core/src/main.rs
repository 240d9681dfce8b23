use std::process::ExitCode;

fn main() -> ExitCode {
    mimax::cli::main_with_args(std::env::args_os())
}
