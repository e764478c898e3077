//! Command-line entry point.

fn main() -> std::process::ExitCode {
    tfab_core::cli::run(std::env::args_os())
}
