//! Library side of the `sglgg` command-line tool.

pub mod commands;
pub mod config;

use config::{parse_config, Parsed, UsageError};

/// Runs the tool on `argv` and returns the process exit code: 0 on success,
/// 2 for usage errors, 1 for data and solver errors.
pub fn main_with(argv: &[String]) -> i32 {
    let cli = match parse_config(argv) {
        Ok(Parsed::Run(cli)) => cli,
        Ok(Parsed::Exit { text, code }) => {
            if code == 0 {
                print!("{text}");
            } else {
                eprint!("{text}");
            }
            return code;
        }
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let result = match cli.command.common().threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::run(&cli)),
            Err(e) => Err(e.into()),
        },
        None => commands::run(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
