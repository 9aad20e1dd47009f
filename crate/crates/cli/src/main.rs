fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let transport = reefgrad::UreqTransport::new();
    std::process::exit(reefgrad::run_with(std::env::args_os(), &transport));
}
