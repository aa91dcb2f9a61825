fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ESPSIM_LOG")).init();
    std::process::exit(espsim::cli::main_with(std::env::args()));
}
