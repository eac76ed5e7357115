use clap::Parser;
use hatchsens::app::{self, Cli};

fn main() {
    let code = app::run(Cli::parse());
    std::process::exit(code);
}
