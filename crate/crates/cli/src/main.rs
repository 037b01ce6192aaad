fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PUCB_LOG", "warn")).init();
    std::process::exit(pucb_cli::run(std::env::args_os()));
}
