use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(comvol::cli::run() as u8)
}
