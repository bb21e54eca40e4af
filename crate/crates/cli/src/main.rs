use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = mcdst_cli::Cli::parse();
    if let Err(failure) = mcdst_cli::run(cli) {
        log::error!("{failure}");
        std::process::exit(failure.exit_code());
    }
}
