use clap::Parser;

use graphsplat::cli::{run, Cli};

/// Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.
fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_validation() { 1 } else { 2 });
    }
}
