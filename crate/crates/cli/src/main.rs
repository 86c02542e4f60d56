use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = batchbandit_cli::cli::Cli::parse();
    std::process::exit(batchbandit_cli::cli::report(batchbandit_cli::cli::run(cli)));
}
