use clap::Parser;

use nndwl::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log)
        .format_timestamp(None)
        .parse_default_env()
        .init();
    if let Err(e) = run(cli) {
        eprintln!("nndwl: {e}");
        std::process::exit(e.exit_code());
    }
}
