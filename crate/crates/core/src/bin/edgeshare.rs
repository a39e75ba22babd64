use clap::Parser;

use edgeshare::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("edgeshare: {e}");
        std::process::exit(e.exit_code());
    }
}
