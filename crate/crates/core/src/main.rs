fn main() {
    std::process::exit(anthro_core::cli::main_with_args(std::env::args_os()));
}
