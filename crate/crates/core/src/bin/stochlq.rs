use clap::Parser;

use stochlq::cli::{main_with, Cli};

fn main() {
    let code = main_with(Cli::parse());
    std::process::exit(code);
}
