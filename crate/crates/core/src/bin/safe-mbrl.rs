fn main() {
    std::process::exit(safe_mbrl::cli::run(std::env::args_os()));
}
