use std::process::ExitCode;

use clap::Parser;
use dispatch_cli::{run, Args, EXIT_INPUT, EXIT_OK};

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK } as u8);
        }
    };
    let default = if args.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DISPATCH_LOG", default))
        .format_timestamp(None)
        .init();
    let code = match run(&args) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
