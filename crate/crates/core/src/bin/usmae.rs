fn main() {
    std::process::exit(usmae::cli::run(std::env::args_os()));
}
