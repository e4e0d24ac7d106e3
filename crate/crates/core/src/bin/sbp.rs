fn main() {
    std::process::exit(sbp_core::cli::dispatch(std::env::args_os()));
}
