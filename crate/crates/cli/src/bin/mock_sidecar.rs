use clap::Parser;
use orgapipe_cli::sidecar::{run, SidecarArgs};

#[derive(Parser)]
#[command(name = "orgapipe-mock-sidecar", version, about = "Mock model sidecar replaying the classical backends")]
struct Cli {
    #[command(flatten)]
    args: SidecarArgs,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(&Cli::parse().args)
}
