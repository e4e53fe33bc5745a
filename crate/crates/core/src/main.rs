use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let config = std::env::var_os(hdlkit::cli::CONFIG_ENV).map(PathBuf::from);
    let code = hdlkit::cli::run(
        std::env::args_os(),
        config.as_deref(),
        &mut io::stdout(),
        &mut io::stderr(),
    );
    ExitCode::from(code as u8)
}
