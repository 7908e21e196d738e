use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::default().filter_or("BITREC_LOG", "warn")).init();
    std::process::exit(bitrec::cli::main_with_args(std::env::args().collect()));
}
