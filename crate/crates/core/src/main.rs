use clap::Parser;

fn main() {
    std::process::exit(oqnet::cli::main_with(oqnet::cli::Cli::parse()));
}
