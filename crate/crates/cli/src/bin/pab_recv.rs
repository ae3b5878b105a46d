//! Standalone receiver agent, equivalent to `pab recv`.

use clap::Parser;

#[derive(Parser)]
#[command(name = "pab-recv", version, about = "Packet-train receiver agent")]
struct Cli {
    /// Control address to listen on, e.g. 0.0.0.0:5001.
    #[arg(long)]
    listen: std::net::SocketAddr,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    pab_core::probing::run_receiver(cli.listen)?;
    Ok(())
}
