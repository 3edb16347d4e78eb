fn main() {
    std::process::exit(hcmm::cli::main_with_args(std::env::args_os()));
}
