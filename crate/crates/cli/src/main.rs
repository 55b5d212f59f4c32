use std::process::ExitCode;

use clap::Parser;
use flowkern_cli::{run, Cli, Format, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("FLOWKERN_THREADS") {
        let threads = match v.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: FLOWKERN_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(EXIT_USAGE as u8);
            }
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("global pool is configured once, before any parallel work");
    }

    let r = run(cli);
    let text = match r.format {
        Format::Json => r.report.to_json() + "\n",
        Format::Csv => r.report.to_csv(),
    };
    match &r.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: cannot write {path}: {e}");
                return ExitCode::from(EXIT_USAGE as u8);
            }
        }
        None => print!("{text}"),
    }
    if let Some(e) = &r.report.error {
        eprintln!("error: {e}");
    }
    ExitCode::from(r.exit_code as u8)
}
