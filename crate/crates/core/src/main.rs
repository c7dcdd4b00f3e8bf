fn main() {
    let quiet = std::env::args().any(|a| a == "--quiet" || a == "-q");
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .target(env_logger::Target::Stderr)
        .init();
    std::process::exit(motionsrvf::cli::run_from_args(std::env::args_os()));
}
