fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let code = triplet_rank::cli::run(std::env::args(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
