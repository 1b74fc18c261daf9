use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(beamform_bench::cli::run_cli(std::env::args_os()))
}
