fn main() {
    std::process::exit(pilotwave::cli::run_cli(std::env::args_os()));
}
