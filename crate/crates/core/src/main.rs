use std::process::ExitCode;

fn main() -> ExitCode {
    effortnet::cli::main_with(std::env::args_os())
}
