fn main() {
    std::process::exit(vecuforge::cli::main_with_args(std::env::args_os()));
}
