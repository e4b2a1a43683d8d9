use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = cpca_core::io::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(cpca_cli::run_cli(std::env::args_os()) as u8)
}
