use clap::Parser;
use sparsecl::cli::{dispatch, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
