fn main() {
    std::process::exit(resilience_market::cli::run_cli(std::env::args_os()));
}
