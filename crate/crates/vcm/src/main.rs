fn main() {
    std::process::exit(vcm::cli::main_with_args(std::env::args_os()));
}
