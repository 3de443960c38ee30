fn main() {
    std::process::exit(multiscale_heston::cli::run_from(std::env::args_os()));
}
