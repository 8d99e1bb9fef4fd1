fn main() {
    modlock::cli::init_logging();
    std::process::exit(modlock::cli::run_from_args(std::env::args_os()));
}
