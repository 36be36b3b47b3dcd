fn main() {
    std::process::exit(deep_bsde::cli::run_from(std::env::args_os()));
}
