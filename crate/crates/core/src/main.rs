use clap::Parser;

fn main() -> anyhow::Result<()> {
    artilab::cli::run(artilab::cli::Cli::parse())
}
