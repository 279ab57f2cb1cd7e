use std::process::ExitCode;

fn main() -> ExitCode {
    modp_cli::main_with(std::env::args_os())
}
