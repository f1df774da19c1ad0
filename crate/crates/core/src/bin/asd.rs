use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    asd_core::cli::run(asd_core::cli::Cli::parse())?;
    Ok(())
}
