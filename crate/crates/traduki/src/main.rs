fn main() {
    std::process::exit(traduki::cli::run(std::env::args_os()));
}
