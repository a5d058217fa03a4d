fn main() {
    std::process::exit(reservoir_cli::run(std::env::args_os()));
}
