fn main() {
    std::process::exit(hrt_core::cli::main_with_args(std::env::args_os()));
}
