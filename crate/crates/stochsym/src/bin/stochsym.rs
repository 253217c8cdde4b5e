use std::process::ExitCode;

fn main() -> ExitCode {
    let mut out = std::io::stdout().lock();
    let code = stochsym::cli::run(std::env::args_os(), &mut out);
    ExitCode::from(u8::try_from(code).unwrap_or(2))
}
