fn main() {
    std::process::exit(gagpo::cli::run(std::env::args_os()));
}
